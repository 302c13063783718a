"""Per-epoch training manifests.

Two ways to consume a repeat-factor table:

* ``expand``: image i appears floor(r_i) times plus once more with probability
  frac(r_i) (stochastic rounding), then the multiset is shuffled with a
  blocked (Rao-Sandelius) shuffle.
* ``draw``: ``size`` i.i.d. draws with replacement from p_i, realized with
  cache-blocked Walker/Vose alias tables so an epoch costs O(N + size).

Epoch k of seed s always uses the stream ``rng.derive_key(s, purpose, k)``, so
any epoch can be regenerated on its own.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels, rng
from .errors import ManifestFormatError
from .factors import RebalanceConfig, RepeatFactorTable
from .ingest import image_ids_digest

MODES = ("expand", "draw")
MANIFEST_MAGIC = "# rebalance epoch manifest v1"


@dataclass(frozen=True, eq=False)
class EpochManifest:
    epoch_index: int
    seed: int
    mode: str
    indices: np.ndarray  # positions into image_ids
    image_ids: tuple[str, ...]
    source_config: RebalanceConfig
    dataset_id: str
    config_digest: str

    @property
    def entries(self) -> list[str]:
        ids = self.image_ids
        return [ids[i] for i in self.indices.tolist()]

    def __len__(self):
        return int(self.indices.shape[0])

    def __eq__(self, other):
        if not isinstance(other, EpochManifest):
            return NotImplemented
        return (self.header() == other.header() and self.image_ids == other.image_ids
                and np.array_equal(self.indices, other.indices))

    __hash__ = None

    def header(self) -> dict[str, str]:
        cfg = self.source_config
        return {
            "seed": str(self.seed),
            "mode": self.mode,
            "epoch_index": str(self.epoch_index),
            "entries": str(len(self)),
            "method": cfg.method.value,
            "threshold": repr(cfg.threshold),
            "alpha": "-" if cfg.alpha is None else repr(cfg.alpha),
            "dataset_id": self.dataset_id,
            "config_digest": self.config_digest,
        }


def table_digest(table: RepeatFactorTable) -> str:
    """SHA-256 over the effective config, dataset id, image-id hash and r_i bytes."""
    h = hashlib.sha256()
    h.update(table.config.describe().encode())
    h.update(b"\0" + table.dataset_id.encode() + b"\0")
    h.update((table.ids_digest or image_ids_digest(table.image_ids)).encode())
    h.update(np.ascontiguousarray(table.image_factors, dtype="<f8").tobytes())
    return h.hexdigest()


def _check_seed(seed):
    if not 0 <= int(seed) <= rng.MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)


def _check_epoch(epoch_index):
    if int(epoch_index) < 0:
        raise ValueError(f"epoch_index must be >= 0, got {epoch_index}")
    return int(epoch_index)


def _make(table, epoch_index, seed, mode, indices, digest):
    return EpochManifest(epoch_index, seed, mode, indices, table.image_ids, table.config,
                         table.dataset_id, digest or table_digest(table))


def expand_counts(table: RepeatFactorTable, epoch_index: int, seed: int) -> np.ndarray:
    """Per-image occurrence counts for one expand-mode epoch (before shuffling)."""
    key = rng.derive_key(_check_seed(seed), rng.PURPOSE_EXPAND, _check_epoch(epoch_index))
    r = table.image_factors
    whole = np.floor(r)
    u = _kernels.uniforms(key, 0, r.shape[0])
    return (whole + (u < (r - whole))).astype(np.int64)


def expand_epoch(table: RepeatFactorTable, epoch_index: int, seed: int,
                 _digest: str | None = None) -> EpochManifest:
    if table.num_images == 0:
        raise ValueError("cannot expand an empty table")
    seed, epoch_index = _check_seed(seed), _check_epoch(epoch_index)
    key = rng.derive_key(seed, rng.PURPOSE_EXPAND, epoch_index)
    # stream outputs 0..N-1 round the factors; the shuffle continues after them
    order = _kernels.expand(table.image_factors, key)
    return _make(table, epoch_index, seed, "expand", order, _digest)


def draw_epoch(table: RepeatFactorTable, size: int, epoch_index: int, seed: int,
               _digest: str | None = None) -> EpochManifest:
    if size <= 0:
        raise ValueError(f"epoch size must be positive, got {size}")
    if table.num_images == 0:
        raise ValueError("cannot draw from an empty table")
    seed, epoch_index = _check_seed(seed), _check_epoch(epoch_index)
    key = rng.derive_key(seed, rng.PURPOSE_DRAW, epoch_index)
    indices = _kernels.blocked_draw(table.image_factors, key, int(size))
    return _make(table, epoch_index, seed, "draw", indices, _digest)


def plan_epochs(table: RepeatFactorTable, mode: str = "draw", epochs=1, size: int | None = None,
                seed: int = 0, jobs: int = 1) -> list[EpochManifest]:
    """Manifests for ``epochs`` (a count, meaning 0..epochs-1, or explicit indices).

    ``size`` applies to draw mode and defaults to the number of images.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    wanted = list(range(epochs)) if isinstance(epochs, int) else [int(e) for e in epochs]
    if not wanted:
        raise ValueError("need at least one epoch")
    size = table.num_images if size is None else int(size)
    digest = table_digest(table)
    if mode == "draw":
        def one(k):
            return draw_epoch(table, size, k, seed, _digest=digest)
    else:
        def one(k):
            return expand_epoch(table, k, seed, _digest=digest)
    if jobs > 1 and len(wanted) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, wanted))
    return [one(k) for k in wanted]


# --- manifest files ---

def _entries_digest(entries) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(e.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def dumps_epoch_manifest(manifest: EpochManifest) -> str:
    entries = manifest.entries
    for e in entries:
        if "\n" in e or "\r" in e:
            raise ManifestFormatError(f"image id {e!r} contains a line break")
    lines = [MANIFEST_MAGIC]
    lines += [f"{k}={v}" for k, v in manifest.header().items()]
    lines.append("---")
    lines += entries
    lines.append(f"digest=sha256:{_entries_digest(entries)}")
    return "\n".join(lines) + "\n"


def write_epoch_manifest(manifest: EpochManifest, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_epoch_manifest(manifest))
    return path


def parse_epoch_manifest(text: str) -> tuple[dict[str, str], list[str]]:
    """Return ``(header, entries)``; the trailing digest is verified."""
    if not text.endswith("\n"):
        raise ManifestFormatError("truncated manifest (no trailing newline)")
    lines = text[:-1].split("\n")
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise ManifestFormatError("not an epoch manifest")
    try:
        sep = lines.index("---")
    except ValueError:
        raise ManifestFormatError("missing header separator") from None
    header = {}
    for line in lines[1:sep]:
        key, eq, value = line.partition("=")
        if not eq:
            raise ManifestFormatError(f"bad header line {line!r}")
        header[key] = value
    if len(lines) < sep + 2 or not lines[-1].startswith("digest=sha256:"):
        raise ManifestFormatError("missing digest line")
    entries = lines[sep + 1:-1]
    if lines[-1][len("digest=sha256:"):] != _entries_digest(entries):
        raise ManifestFormatError("digest mismatch")
    if "entries" in header and int(header["entries"]) != len(entries):
        raise ManifestFormatError("entry count does not match header")
    return header, entries


def read_epoch_manifest(path) -> tuple[dict[str, str], list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_epoch_manifest(fh.read())
