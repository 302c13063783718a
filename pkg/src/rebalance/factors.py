"""Repeat factors: class level (RFS, IRFS, E-IRFS), image level, and the
normalized image selection probabilities.

Class-level formulas, with f_i the image fraction and f_b the instance
fraction of a class::

    rfs    r = max(1, sqrt(t / f_i))
    irfs   r = max(1, sqrt(t / sqrt(f_i * f_b)))
    eirfs  r = exp(alpha * sqrt(t / sqrt(f_i * f_b)))

An image takes the largest factor among its classes (1 if it has none), and
p_i = r_i / sum_j r_j.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import FactorDomainError, FactorOverflowError, ManifestFormatError
from .frequency import FrequencyTable
from .ingest import DatasetIndex, ImageRecord

DEFAULT_THRESHOLD = 1e-4
DEFAULT_ALPHA = 2.0
# largest argument math.exp accepts without overflow
_EXP_LIMIT = math.log(np.finfo(np.float64).max)


class Method(str, enum.Enum):
    BASELINE = "baseline"
    RFS = "rfs"
    IRFS = "irfs"
    EIRFS = "eirfs"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class RebalanceConfig:
    method: Method = Method.EIRFS
    threshold: float = DEFAULT_THRESHOLD
    alpha: float | None = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        t = float(self.threshold)
        if not 0.0 < t <= 1.0:
            raise FactorDomainError(f"threshold must lie in (0, 1], got {self.threshold}")
        object.__setattr__(self, "threshold", t)
        if self.method is Method.EIRFS:
            if self.alpha is None or not float(self.alpha) > 0.0:
                raise FactorDomainError(f"eirfs needs alpha > 0, got {self.alpha}")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            object.__setattr__(self, "alpha", None)

    def describe(self) -> str:
        alpha = "-" if self.alpha is None else repr(self.alpha)
        return f"method={self.method.value} t={self.threshold!r} alpha={alpha}"


def _check_fraction(value, name):
    if not value > 0.0:
        raise FactorDomainError(f"{name} must be > 0, got {value} "
                                "(zero-frequency classes must be excluded first)")


def _check_threshold(t):
    if not 0.0 < t <= 1.0:
        raise FactorDomainError(f"threshold must lie in (0, 1], got {t}")


def irfs_inner(f_i: float, f_b: float, t: float) -> float:
    """Unclamped sqrt(t / sqrt(f_i * f_b)), shared by IRFS and E-IRFS."""
    _check_fraction(f_i, "image fraction")
    _check_fraction(f_b, "instance fraction")
    _check_threshold(t)
    return math.sqrt(t / math.sqrt(f_i * f_b))


def rfs_factor(f_c: float, t: float) -> float:
    _check_fraction(f_c, "image fraction")
    _check_threshold(t)
    return max(1.0, math.sqrt(t / f_c))


def irfs_factor(f_i: float, f_b: float, t: float) -> float:
    return max(1.0, irfs_inner(f_i, f_b, t))


def eirfs_factor(f_i: float, f_b: float, t: float, alpha: float) -> float:
    """exp(alpha * s) without any clamp; raises FactorOverflowError past float range."""
    if not alpha > 0.0:
        raise FactorDomainError(f"alpha must be > 0, got {alpha}")
    arg = alpha * irfs_inner(f_i, f_b, t)
    try:
        if arg > _EXP_LIMIT:
            raise OverflowError
        return math.exp(arg)
    except OverflowError:
        raise FactorOverflowError(f"exp({arg!r}) overflows float64 "
                                  f"(f_i={f_i!r}, f_b={f_b!r}, t={t!r}, alpha={alpha!r})") from None


def eirfs_first_derivative(f_i: float, f_b: float, t: float, alpha: float) -> float:
    """d r / d f_i of the E-IRFS factor, f_b held fixed.

    With s = sqrt(t) * (f_i f_b)^(-1/4), ds/df_i = -s / (4 f_i), hence
    dr/df_i = -alpha * r * s / (4 f_i).
    """
    r = eirfs_factor(f_i, f_b, t, alpha)
    s = irfs_inner(f_i, f_b, t)
    return -alpha * r * s / (4.0 * f_i)


def eirfs_second_derivative(f_i: float, f_b: float, t: float, alpha: float) -> float:
    """d^2 r / d f_i^2 = alpha * r * s * (alpha * s + 5) / (16 f_i^2)."""
    r = eirfs_factor(f_i, f_b, t, alpha)
    s = irfs_inner(f_i, f_b, t)
    return alpha * r * s * (alpha * s + 5.0) / (16.0 * f_i * f_i)


def class_factor(config: RebalanceConfig, f_i: float, f_b: float) -> float:
    if config.method is Method.BASELINE:
        return 1.0
    if config.method is Method.RFS:
        return rfs_factor(f_i, config.threshold)
    if config.method is Method.IRFS:
        return irfs_factor(f_i, f_b, config.threshold)
    return eirfs_factor(f_i, f_b, config.threshold, config.alpha)


def image_repeat(image: ImageRecord, class_factors: Mapping[int, float]) -> float:
    """Largest factor among the image's classes; 1.0 when none participate."""
    values = [class_factors[c] for c in image.instance_counts if c in class_factors]
    return max(values) if values else 1.0


def selection_probabilities(image_factors) -> np.ndarray:
    r = np.asarray(image_factors, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise FactorDomainError("need a non-empty list of image repeat factors")
    if not np.all(r > 0):
        raise FactorDomainError("image repeat factors must be positive")
    # sequential (index-order) sum keeps the result bit-stable
    total = np.cumsum(r)[-1]
    return r / total


@dataclass(frozen=True, eq=False)
class RepeatFactorTable:
    config: RebalanceConfig
    dataset_id: str
    category_ids: np.ndarray
    names: tuple[str, ...]
    image_fraction: np.ndarray
    instance_fraction: np.ndarray
    class_factors: np.ndarray  # NaN for excluded categories
    image_ids: tuple[str, ...]
    image_factors: np.ndarray
    probabilities: np.ndarray
    excluded: tuple[int, ...] = field(default=())
    ids_digest: str | None = None  # cache of the image-id hash; not part of equality

    @property
    def factor_map(self) -> dict[int, float]:
        return {int(c): float(r) for c, r in zip(self.category_ids, self.class_factors)
                if not math.isnan(r)}

    @property
    def num_images(self) -> int:
        return len(self.image_ids)

    def __eq__(self, other):
        if not isinstance(other, RepeatFactorTable):
            return NotImplemented
        arrays = ("category_ids", "image_fraction", "instance_fraction", "class_factors",
                  "image_factors", "probabilities")
        return (self.config == other.config and self.dataset_id == other.dataset_id
                and self.names == other.names and self.image_ids == other.image_ids
                and self.excluded == other.excluded
                and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True)
                        for a in arrays))

    __hash__ = None


def build_table(freqs: FrequencyTable, index: DatasetIndex,
                config: RebalanceConfig) -> RepeatFactorTable:
    if freqs.total_images != index.total_images or len(freqs.names) != len(index.categories):
        raise ValueError("frequency table does not belong to this index")
    f_i, f_b = freqs.image_fraction, freqs.instance_fraction
    k = len(freqs.names)
    factors = np.full(k, np.nan)
    for c in np.flatnonzero(freqs.active):
        try:
            factors[c] = class_factor(config, float(f_i[c]), float(f_b[c]))
        except FactorOverflowError as exc:
            raise FactorOverflowError(
                f"category {int(freqs.category_ids[c])} ({freqs.names[c]}): {exc}",
                category=int(freqs.category_ids[c])) from exc

    dense = np.where(np.isnan(factors), 1.0, factors)
    pos = index.member_positions
    if pos.size and pos.min() < 0:
        raise ValueError("index references unknown categories; run validate()")
    if config.method is Method.BASELINE:
        r_img = np.ones(index.total_images)
    else:
        r_img = _kernels.image_max(index.indptr, pos, dense)
    return RepeatFactorTable(
        config=config,
        dataset_id=index.dataset_id,
        category_ids=freqs.category_ids,
        names=freqs.names,
        image_fraction=f_i,
        instance_fraction=f_b,
        class_factors=factors,
        image_ids=index.image_ids,
        image_factors=r_img,
        probabilities=selection_probabilities(r_img),
        excluded=freqs.zero_categories,
        ids_digest=index.ids_digest,
    )


# --- text format ---

TABLE_MAGIC = "# rebalance repeat-factor table v1"


def dump_table(table: RepeatFactorTable, fh) -> None:
    cfg = table.config
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    fh.write(TABLE_MAGIC + "\n")
    w.writerow(("method", cfg.method.value))
    w.writerow(("threshold", repr(cfg.threshold)))
    w.writerow(("alpha", "-" if cfg.alpha is None else repr(cfg.alpha)))
    w.writerow(("dataset_id", table.dataset_id))
    w.writerow(("excluded", *table.excluded))
    fh.write("[classes]\n")
    w.writerow(("category_id", "name", "image_fraction", "instance_fraction", "repeat_factor"))
    for k, name in enumerate(table.names):
        w.writerow((int(table.category_ids[k]), name, repr(float(table.image_fraction[k])),
                    repr(float(table.instance_fraction[k])), repr(float(table.class_factors[k]))))
    fh.write("[images]\n")
    w.writerow(("image_id", "repeat_factor", "probability"))
    for image_id, r, p in zip(table.image_ids, table.image_factors.tolist(),
                              table.probabilities.tolist()):
        w.writerow((image_id, repr(r), repr(p)))


def dumps_table(table: RepeatFactorTable) -> str:
    buf = io.StringIO()
    dump_table(table, buf)
    return buf.getvalue()


def write_table(table: RepeatFactorTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        dump_table(table, fh)


def load_table(fh) -> RepeatFactorTable:
    lines = fh.read().split("\n")
    if not lines or lines[0] != TABLE_MAGIC:
        raise ManifestFormatError("not a repeat-factor table")
    try:
        i_cls = lines.index("[classes]")
        i_img = lines.index("[images]")
    except ValueError:
        raise ManifestFormatError("missing [classes] or [images] section") from None
    meta = {row[0]: row[1:] for row in csv.reader(lines[1:i_cls], delimiter="\t") if row}
    try:
        alpha = None if meta["alpha"][0] == "-" else float(meta["alpha"][0])
        config = RebalanceConfig(meta["method"][0], float(meta["threshold"][0]), alpha)
        dataset_id = meta["dataset_id"][0]
        excluded = tuple(int(x) for x in meta["excluded"])
        cls_rows = list(csv.reader(lines[i_cls + 2:i_img], delimiter="\t"))
        img_rows = [r for r in csv.reader(lines[i_img + 2:], delimiter="\t") if r]
        return RepeatFactorTable(
            config=config,
            dataset_id=dataset_id,
            category_ids=np.array([int(r[0]) for r in cls_rows], dtype=np.int64),
            names=tuple(r[1] for r in cls_rows),
            image_fraction=np.array([float(r[2]) for r in cls_rows]),
            instance_fraction=np.array([float(r[3]) for r in cls_rows]),
            class_factors=np.array([float(r[4]) for r in cls_rows]),
            image_ids=tuple(r[0] for r in img_rows),
            image_factors=np.array([float(r[1]) for r in img_rows]),
            probabilities=np.array([float(r[2]) for r in img_rows]),
            excluded=excluded,
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise ManifestFormatError(f"malformed repeat-factor table: {exc}") from exc


def read_table(path) -> RepeatFactorTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return load_table(fh)
