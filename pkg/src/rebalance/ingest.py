"""Annotation ingestion: COCO JSON, YOLO label directories, and the canonical
line-delimited dataset manifest.

A :class:`DatasetIndex` keeps only what rebalancing needs: which categories
occur in which image, and how many times. Geometry is checked for syntax and
then dropped.
"""
from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from itertools import chain
from pathlib import Path

import numpy as np

try:
    import orjson
    _loads = orjson.loads
except ImportError:  # pragma: no cover
    _loads = json.loads

from .errors import AnnotationParseError, AnnotationValidationError

MANIFEST_KIND = "rebalance-dataset"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class CategoryInfo:
    category_id: int
    name: str


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    source_path: str
    instance_counts: Mapping[int, int] = field(default_factory=dict)

    @property
    def categories(self) -> tuple[int, ...]:
        return tuple(self.instance_counts)


@dataclass(frozen=True)
class ValidationIssue:
    severity: str  # "error" or "warning"
    locator: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.locator}: {self.message}"


class _ImageView(Sequence):
    """Read-only sequence of ImageRecord materialized on access."""

    def __init__(self, index: DatasetIndex):
        self._index = index

    def __len__(self):
        return len(self._index.image_ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        ix = self._index
        if i < 0:
            i += len(self)
        lo, hi = int(ix.indptr[i]), int(ix.indptr[i + 1])
        counts = dict(zip(ix.member_ids[lo:hi].tolist(), ix.member_counts[lo:hi].tolist()))
        return ImageRecord(ix.image_ids[i], ix.source_paths[i], counts)


def image_ids_digest(image_ids) -> str:
    return hashlib.sha256("\n".join(image_ids).encode()).hexdigest()


class DatasetIndex:
    """Immutable images x categories x instance-count table.

    Storage is columnar (CSR): image ``i`` owns entries
    ``indptr[i]:indptr[i+1]`` of ``member_ids`` / ``member_counts``.
    ``images`` presents the same data as a sequence of :class:`ImageRecord`.

    The constructor does not enforce the structural invariants; call
    :func:`validate` (the parsers do).
    """

    def __init__(self, dataset_id, categories, image_ids, source_paths,
                 indptr, member_ids, member_counts):
        self.dataset_id = str(dataset_id)
        self.categories = tuple(categories)
        self.image_ids = tuple(image_ids)
        self.source_paths = tuple(source_paths)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.member_ids = np.ascontiguousarray(member_ids, dtype=np.int64)
        self.member_counts = np.ascontiguousarray(member_counts, dtype=np.int64)
        for arr in (self.indptr, self.member_ids, self.member_counts):
            arr.setflags(write=False)
        if len(self.source_paths) != len(self.image_ids):
            raise ValueError("image_ids and source_paths differ in length")
        if self.indptr.shape != (len(self.image_ids) + 1,) or self.indptr[0] != 0:
            raise ValueError("indptr must have length N+1 and start at 0")
        if self.member_ids.shape != self.member_counts.shape or \
                self.member_ids.shape[0] != self.indptr[-1]:
            raise ValueError("member arrays do not match indptr")

    @classmethod
    def from_records(cls, dataset_id, categories, images) -> DatasetIndex:
        image_ids, paths, lengths, ids, counts = [], [], [0], [], []
        for rec in images:
            image_ids.append(rec.image_id)
            paths.append(rec.source_path)
            lengths.append(len(rec.instance_counts))
            ids.extend(rec.instance_counts.keys())
            counts.extend(rec.instance_counts.values())
        return cls(dataset_id, categories, image_ids, paths, np.cumsum(lengths),
                   np.array(ids, dtype=np.int64), np.array(counts, dtype=np.int64))

    @property
    def images(self) -> Sequence[ImageRecord]:
        return _ImageView(self)

    @property
    def total_images(self) -> int:
        return len(self.image_ids)

    @property
    def total_instances(self) -> int:
        return int(self.member_counts.sum())

    @property
    def category_ids(self) -> tuple[int, ...]:
        return tuple(c.category_id for c in self.categories)

    @cached_property
    def member_positions(self) -> np.ndarray:
        """``member_ids`` remapped to positions in ``categories`` (-1 if unknown)."""
        ids = np.array(self.category_ids, dtype=np.int64)
        if ids.size == 0:
            return np.full(self.member_ids.shape, -1, dtype=np.int64)
        order = np.argsort(ids, kind="stable")
        sorted_ids = ids[order]
        pos = np.searchsorted(sorted_ids, self.member_ids)
        pos = np.minimum(pos, ids.size - 1)
        found = sorted_ids[pos] == self.member_ids
        out = np.where(found, order[pos], -1).astype(np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def ids_digest(self) -> str:
        """SHA-256 of the newline-joined image ids, hashed once per index."""
        return image_ids_digest(self.image_ids)

    @cached_property
    def image_of_member(self) -> np.ndarray:
        return np.repeat(np.arange(self.total_images, dtype=np.int64), np.diff(self.indptr))

    def is_single_class(self) -> bool:
        """True when every image holds exactly one category."""
        return bool(np.all(np.diff(self.indptr) == 1))

    def __eq__(self, other):
        if not isinstance(other, DatasetIndex):
            return NotImplemented
        return (self.dataset_id == other.dataset_id
                and self.categories == other.categories
                and self.image_ids == other.image_ids
                and self.source_paths == other.source_paths
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.member_ids, other.member_ids)
                and np.array_equal(self.member_counts, other.member_counts))

    __hash__ = None

    def __repr__(self):
        return (f"DatasetIndex(dataset_id={self.dataset_id!r}, categories={len(self.categories)}, "
                f"images={self.total_images}, instances={self.total_instances})")


def validate(index: DatasetIndex) -> list[ValidationIssue]:
    """Check the structural invariants of ``index``; issues are returned, never raised."""
    issues = []
    seen = Counter(index.image_ids)
    for image_id, n in seen.items():
        if n > 1:
            issues.append(ValidationIssue("error", f"image {image_id!r}",
                                          f"duplicate image id ({n} occurrences)"))
    cat_seen = Counter(index.category_ids)
    for cid, n in cat_seen.items():
        if n > 1:
            issues.append(ValidationIssue("error", f"category {cid}",
                                          f"duplicate category id ({n} occurrences)"))
    for cat in index.categories:
        if not isinstance(cat.category_id, int) or cat.category_id < 0:
            issues.append(ValidationIssue("error", f"category {cat.category_id!r}",
                                          "category id must be a non-negative integer"))
        if not cat.name:
            issues.append(ValidationIssue("error", f"category {cat.category_id}", "empty name"))

    pos = index.member_positions
    img_of = index.image_of_member
    for j in np.flatnonzero(pos < 0):
        issues.append(ValidationIssue(
            "error", f"image {index.image_ids[img_of[j]]!r}",
            f"references unknown category {int(index.member_ids[j])}"))
    for j in np.flatnonzero(index.member_counts <= 0):
        issues.append(ValidationIssue(
            "error", f"image {index.image_ids[img_of[j]]!r}",
            f"non-positive count {int(index.member_counts[j])} stored for category "
            f"{int(index.member_ids[j])}"))
    # repeated category within one image
    if index.member_ids.size:
        key = img_of * (int(index.member_ids.max()) + 1) + index.member_ids
        uniq, cnt = np.unique(key, return_counts=True)
        if np.any(cnt > 1):
            for k in uniq[cnt > 1]:
                i = int(img_of[np.flatnonzero(key == k)[0]])
                issues.append(ValidationIssue("error", f"image {index.image_ids[i]!r}",
                                              "category listed more than once"))

    known = pos[(pos >= 0) & (index.member_counts > 0)]
    totals = np.bincount(known, weights=index.member_counts[(pos >= 0) & (index.member_counts > 0)],
                         minlength=len(index.categories))
    for cat, total in zip(index.categories, totals):
        if total == 0:
            issues.append(ValidationIssue(
                "warning", f"category {cat.category_id} ({cat.name})",
                "no instances in dataset; excluded from repeat-factor computation"))
    return issues


def _raise_on_errors(index: DatasetIndex, what: str) -> DatasetIndex:
    errors = [i for i in validate(index) if i.severity == "error"]
    if errors:
        listing = "; ".join(str(e) for e in errors[:20])
        more = f" (+{len(errors) - 20} more)" if len(errors) > 20 else ""
        raise AnnotationValidationError(f"{what}: {listing}{more}", errors)
    return index


# --- COCO ---

def _field(obj, name, where, kind):
    if not isinstance(obj, dict):
        raise AnnotationParseError(f"expected an object, got {type(obj).__name__}", where)
    if name not in obj:
        raise AnnotationParseError(f"missing field {name!r}", where)
    value = obj[name]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise AnnotationParseError(f"field {name!r} must be an integer, got {value!r}", where)
    if kind is str and not isinstance(value, str):
        raise AnnotationParseError(f"field {name!r} must be a string, got {value!r}", where)
    return value


_NUMBER = (int, float)


def _bbox_ok(box) -> bool:
    return (type(box) is list and len(box) == 4 and type(box[0]) in _NUMBER
            and type(box[1]) in _NUMBER and type(box[2]) in _NUMBER
            and type(box[3]) in _NUMBER)


def _coco_pairs_checked(annotations, row_of, known_cats):
    """Annotation loop that pinpoints the first malformed entry."""
    rows, cats = [], []
    bad_images, bad_cats = set(), set()
    for k, ann in enumerate(annotations):
        try:
            img_key = ann["image_id"]
            cid = ann["category_id"]
        except (KeyError, TypeError):
            where = f"annotations[{k}]"
            _field(ann, "image_id", where, None)
            _field(ann, "category_id", where, int)
            raise
        if type(cid) is not int:
            _field(ann, "category_id", f"annotations[{k}]", int)
        box = ann.get("bbox")
        if box is not None and not _bbox_ok(box):
            raise AnnotationParseError(f"bbox must be four numbers, got {box!r}",
                                       f"annotations[{k}]")
        row = row_of.get(img_key)
        if row is None:
            bad_images.add(str(img_key))
        elif cid not in known_cats:
            bad_cats.add(cid)
        else:
            rows.append(row)
            cats.append(cid)
    if bad_images or bad_cats:
        parts = []
        if bad_images:
            parts.append(f"unknown image ids {sorted(bad_images)[:20]}")
        if bad_cats:
            parts.append(f"unknown category ids {sorted(bad_cats)[:20]}")
        raise AnnotationValidationError("annotations reference " + " and ".join(parts))
    return rows, cats


def _coco_pairs(annotations, row_of, known_cats):
    """(image row, category id) per annotation, checked column-wise.

    Anything unusual falls through to the per-entry loop, which produces the
    precise error message.
    """
    try:
        img_keys = [a["image_id"] for a in annotations]
        cids = [a["category_id"] for a in annotations]
        boxes = [b for b in (a.get("bbox") for a in annotations) if b is not None]
        rows = list(map(row_of.get, img_keys))
    except (KeyError, TypeError, AttributeError):
        return _coco_pairs_checked(annotations, row_of, known_cats)
    clean = (set(map(type, cids)) <= {int}
             and set(map(type, boxes)) <= {list}
             and set(map(len, boxes)) <= {4}
             and set(map(type, chain.from_iterable(boxes))) <= set(_NUMBER))
    if not clean or None in rows or not set(cids) <= known_cats:
        return _coco_pairs_checked(annotations, row_of, known_cats)
    return rows, cids


def parse_coco(document, dataset_id=None) -> DatasetIndex:
    """Build an index from a COCO-style document.

    ``document`` may be a JSON string/bytes, an already-decoded dict, or a path.
    Image ids are kept as their decimal string form.
    """
    source = None
    if isinstance(document, (str, os.PathLike)) and not str(document).lstrip().startswith("{"):
        source = Path(document)
        try:
            document = source.read_bytes()
        except OSError as exc:
            raise AnnotationParseError(f"cannot read: {exc}", str(source)) from exc
    if isinstance(document, (str, bytes)):
        try:
            document = _loads(document)
        except json.JSONDecodeError as exc:
            raise AnnotationParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
        except UnicodeDecodeError as exc:
            raise AnnotationParseError(f"not UTF-8 text ({exc.reason})", "document") from exc
    if not isinstance(document, dict):
        raise AnnotationParseError("top level must be an object", "document")
    for key in ("images", "categories", "annotations"):
        if not isinstance(document.get(key), list):
            raise AnnotationParseError(f"missing or non-list collection {key!r}", "document")

    categories = []
    for k, cat in enumerate(document["categories"]):
        where = f"categories[{k}]"
        categories.append(CategoryInfo(_field(cat, "id", where, int),
                                       _field(cat, "name", where, str)))
    image_keys, image_ids, paths = [], [], []
    for k, img in enumerate(document["images"]):
        where = f"images[{k}]"
        raw_id = _field(img, "id", where, None)
        if type(raw_id) not in (int, str):
            raise AnnotationParseError(f"field 'id' must be an integer or string, got {raw_id!r}",
                                       where)
        image_keys.append(raw_id)
        image_ids.append(str(raw_id))
        paths.append(_field(img, "file_name", where, str))

    row_of = {key: i for i, key in enumerate(image_keys)}
    known_cats = {c.category_id for c in categories}
    rows, cats = _coco_pairs(document["annotations"], row_of, known_cats)

    if dataset_id is None:
        dataset_id = source.stem if source is not None else "coco"
    indptr, ids, counts = _pairs_to_csr(np.array(rows, dtype=np.int64),
                                        np.array(cats, dtype=np.int64), len(image_ids))
    index = DatasetIndex(dataset_id, categories, image_ids, paths, indptr, ids, counts)
    return _raise_on_errors(index, "invalid COCO document")


def _pairs_to_csr(rows, cats, num_images):
    """Group (image row, category id) occurrences into sorted CSR counts."""
    if rows.size == 0:
        return np.zeros(num_images + 1, dtype=np.int64), rows, rows
    order = np.lexsort((cats, rows))
    rows, cats = rows[order], cats[order]
    start = np.ones(rows.size, dtype=bool)
    start[1:] = (rows[1:] != rows[:-1]) | (cats[1:] != cats[:-1])
    first = np.flatnonzero(start)
    counts = np.diff(np.append(first, rows.size))
    per_image = np.bincount(rows[first], minlength=num_images)
    indptr = np.concatenate(([0], np.cumsum(per_image)))
    return indptr, cats[first], counts


# --- YOLO ---

def read_class_names(path) -> list[str]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    names = [ln.strip() for ln in lines]
    while names and not names[-1]:
        names.pop()
    for n, name in enumerate(names, start=1):
        if not name:
            raise AnnotationParseError("empty class name", f"{path}:{n}")
    return names


def _parse_label_file(path: Path, num_classes: int) -> Counter:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    counts = Counter()
    for n, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        where = f"{path}:{n}"
        if len(tokens) != 5:
            raise AnnotationParseError(f"expected 5 fields, got {len(tokens)}", where)
        try:
            cls = int(tokens[0])
        except ValueError:
            raise AnnotationParseError(f"class index {tokens[0]!r} is not an integer", where) from None
        for tok in tokens[1:]:
            try:
                float(tok)
            except ValueError:
                raise AnnotationParseError(f"non-numeric geometry token {tok!r}", where) from None
        if not 0 <= cls < num_classes:
            raise AnnotationValidationError(
                f"{where}: class index {cls} out of range [0, {num_classes})")
        counts[cls] += 1
    return counts


def parse_yolo(labels_root, class_names, dataset_id=None, jobs=1) -> DatasetIndex:
    """Index a YOLO label directory (one ``*.txt`` per image, searched recursively).

    ``class_names`` is a list of names or a path to a names file. Image ids are
    label paths relative to ``labels_root`` without suffix.
    """
    root = Path(labels_root)
    if not isinstance(class_names, (list, tuple)):
        class_names = read_class_names(class_names)
    if not root.is_dir():
        raise OSError(f"{root}: not a directory")
    files = sorted(p for p in root.rglob("*.txt") if p.is_file() and p.name != "classes.txt")
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parsed = list(pool.map(lambda p: _parse_label_file(p, len(class_names)), files))
    else:
        parsed = [_parse_label_file(p, len(class_names)) for p in files]

    categories = [CategoryInfo(i, name) for i, name in enumerate(class_names)]
    image_ids = [p.relative_to(root).with_suffix("").as_posix() for p in files]
    paths = [p.relative_to(root).as_posix() for p in files]
    lengths = [0] + [len(c) for c in parsed]
    ids = [cid for c in parsed for cid in sorted(c)]
    counts = [c[cid] for c in parsed for cid in sorted(c)]
    index = DatasetIndex(dataset_id or root.name, categories, image_ids, paths,
                         np.cumsum(lengths), np.array(ids, dtype=np.int64),
                         np.array(counts, dtype=np.int64))
    return _raise_on_errors(index, "invalid YOLO dataset")


# --- canonical manifest (JSON lines) ---

def dump_manifest(index: DatasetIndex, fh) -> None:
    """Write ``index`` as JSON lines: one header record, then one record per image."""
    header = {"kind": MANIFEST_KIND, "version": MANIFEST_VERSION, "dataset_id": index.dataset_id,
              "categories": [[c.category_id, c.name] for c in index.categories]}
    fh.write(json.dumps(header, ensure_ascii=False) + "\n")
    ids = index.member_ids.tolist()
    counts = index.member_counts.tolist()
    ptr = index.indptr.tolist()
    for i, (image_id, path) in enumerate(zip(index.image_ids, index.source_paths)):
        pairs = " ".join(f"{ids[j]}:{counts[j]}" for j in range(ptr[i], ptr[i + 1]))
        fh.write(json.dumps({"image_id": image_id, "source_path": path, "counts": pairs},
                            ensure_ascii=False) + "\n")


def write_manifest(index: DatasetIndex, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_manifest(index, fh)


def load_manifest(lines, where="manifest") -> DatasetIndex:
    it = iter(lines)
    try:
        header = json.loads(next(it))
    except StopIteration:
        raise AnnotationParseError("empty manifest", where) from None
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"bad header: {exc.msg}", f"{where}:1") from exc
    if not isinstance(header, dict) or header.get("kind") != MANIFEST_KIND:
        raise AnnotationParseError("not a dataset manifest header", f"{where}:1")
    if header.get("version") != MANIFEST_VERSION:
        raise AnnotationParseError(f"unsupported version {header.get('version')!r}", f"{where}:1")
    try:
        categories = [CategoryInfo(int(cid), str(name)) for cid, name in header["categories"]]
        dataset_id = str(header["dataset_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationParseError(f"bad header field: {exc}", f"{where}:1") from exc

    image_ids, paths, lengths, ids, counts = [], [], [0], [], []
    for n, line in enumerate(it, start=2):
        if not line.strip():
            continue
        loc = f"{where}:{n}"
        try:
            rec = json.loads(line)
            image_ids.append(_field(rec, "image_id", loc, str))
            paths.append(_field(rec, "source_path", loc, str))
            pairs = _field(rec, "counts", loc, str).split()
            for pair in pairs:
                cid, _, cnt = pair.partition(":")
                ids.append(int(cid))
                counts.append(int(cnt))
        except json.JSONDecodeError as exc:
            raise AnnotationParseError(exc.msg, loc) from exc
        except ValueError as exc:
            if isinstance(exc, AnnotationParseError):
                raise
            raise AnnotationParseError(f"bad category:count pair ({exc})", loc) from exc
        lengths.append(len(pairs))
    index = DatasetIndex(dataset_id, categories, image_ids, paths, np.cumsum(lengths),
                         np.array(ids, dtype=np.int64), np.array(counts, dtype=np.int64))
    return _raise_on_errors(index, f"invalid manifest {where}")


def read_manifest(path) -> DatasetIndex:
    with open(path, encoding="utf-8") as fh:
        return load_manifest(fh, where=str(path))


def load_dataset(path, class_names=None, jobs=1) -> DatasetIndex:
    """Open any supported input: ``.json`` (COCO), ``.jsonl`` (manifest) or a YOLO directory."""
    path = Path(path)
    if path.is_dir():
        if class_names is None:
            guess = path / "classes.txt"
            if not guess.exists():
                raise AnnotationParseError("YOLO directory needs a class-names file "
                                           "(pass one, or provide classes.txt)", str(path))
            class_names = guess
        return parse_yolo(path, class_names, jobs=jobs)
    if path.suffix == ".jsonl":
        return read_manifest(path)
    return parse_coco(path)
