"""Per-class image and instance frequencies."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError
from .ingest import DatasetIndex


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    """Counts and fractions per category, in the index's category order.

    ``image_fraction`` is n_images(c)/N and ``instance_fraction`` is
    n_instances(c)/B. The RFS frequency is the image fraction.
    """

    category_ids: np.ndarray
    names: tuple[str, ...]
    image_counts: np.ndarray
    instance_counts: np.ndarray
    total_images: int
    total_instances: int

    @property
    def image_fraction(self) -> np.ndarray:
        return self.image_counts / self.total_images

    @property
    def instance_fraction(self) -> np.ndarray:
        if self.total_instances == 0:
            return np.zeros(len(self.names))
        return self.instance_counts / self.total_instances

    @property
    def zero_categories(self) -> tuple[int, ...]:
        """Ids of categories without any instance (excluded downstream)."""
        return tuple(int(c) for c in self.category_ids[self.instance_counts == 0])

    @property
    def active(self) -> np.ndarray:
        return self.instance_counts > 0

    def __eq__(self, other):
        if not isinstance(other, FrequencyTable):
            return NotImplemented
        return (self.names == other.names and self.total_images == other.total_images
                and self.total_instances == other.total_instances
                and np.array_equal(self.category_ids, other.category_ids)
                and np.array_equal(self.image_counts, other.image_counts)
                and np.array_equal(self.instance_counts, other.instance_counts))

    __hash__ = None

    def position(self, category_id: int) -> int:
        hits = np.flatnonzero(self.category_ids == category_id)
        if hits.size == 0:
            raise KeyError(category_id)
        return int(hits[0])

    def rows(self):
        f_i, f_b = self.image_fraction, self.instance_fraction
        for k, name in enumerate(self.names):
            yield (int(self.category_ids[k]), name, int(self.image_counts[k]),
                   int(self.instance_counts[k]), float(f_i[k]), float(f_b[k]))


def compute_frequencies(index: DatasetIndex) -> FrequencyTable:
    n = index.total_images
    if n == 0:
        raise EmptyDatasetError(f"dataset {index.dataset_id!r} has no images")
    k = len(index.categories)
    pos = index.member_positions
    ok = (pos >= 0) & (index.member_counts > 0)
    image_counts = np.bincount(pos[ok], minlength=k).astype(np.int64)
    instance_counts = np.bincount(pos[ok], weights=index.member_counts[ok],
                                  minlength=k).astype(np.int64)
    return FrequencyTable(
        category_ids=np.array(index.category_ids, dtype=np.int64),
        names=tuple(c.name for c in index.categories),
        image_counts=image_counts,
        instance_counts=instance_counts,
        total_images=n,
        total_instances=int(instance_counts.sum()),
    )


REPORT_HEADER = ("category_id", "name", "image_count", "instance_count",
                 "image_fraction", "instance_fraction")


def write_frequency_report(freqs: FrequencyTable, fh, delimiter=",") -> None:
    w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for cid, name, ni, nb, fi, fb in freqs.rows():
        w.writerow((cid, name, ni, nb, repr(fi), repr(fb)))
