import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rebalance import CategoryInfo, DatasetIndex, ImageRecord, compute_frequencies, parse_coco
from rebalance.fixtures import FIRE_UAV_TRAIN, coco_from_counts

settings.register_profile("default", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fire_uav_document():
    # compact separators keep the ~150k-annotation document small
    return json.dumps(coco_from_counts(FIRE_UAV_TRAIN), separators=(",", ":"))


@pytest.fixture(scope="session")
def fire_uav_index(fire_uav_document):
    return parse_coco(fire_uav_document, dataset_id="fire-uav-train")


@pytest.fixture(scope="session")
def fire_uav_freqs(fire_uav_index):
    return compute_frequencies(fire_uav_index)


def make_index(images, categories=None, dataset_id="test"):
    """Index from a list of ``{category_id: count}`` dicts, one per image."""
    if categories is None:
        ids = sorted({c for img in images for c in img})
        categories = [CategoryInfo(c, f"c{c}") for c in ids]
    records = [ImageRecord(f"im{i}", f"im{i}.jpg", dict(counts)) for i, counts in enumerate(images)]
    return DatasetIndex.from_records(dataset_id, categories, records)


def single_class_index(image_counts, dataset_id="single"):
    """One instance of one class per image; class k fills image_counts[k] images."""
    k = len(image_counts)
    members = np.repeat(np.arange(k), image_counts)
    n = members.size
    ids = [f"img{i:06d}" for i in range(n)]
    return DatasetIndex(dataset_id, [CategoryInfo(c, f"class_{c}") for c in range(k)],
                        ids, [f"{i}.jpg" for i in ids], np.arange(n + 1), members,
                        np.ones(n, dtype=np.int64))


def table_from_factors(r, config=None, dataset_id="fixed"):
    """RepeatFactorTable with the given per-image factors (no class section)."""
    from rebalance import RebalanceConfig, RepeatFactorTable, selection_probabilities
    r = np.asarray(r, dtype=np.float64)
    empty = np.zeros(0)
    return RepeatFactorTable(
        config=config or RebalanceConfig(), dataset_id=dataset_id,
        category_ids=np.zeros(0, dtype=np.int64), names=(), image_fraction=empty,
        instance_fraction=empty, class_factors=empty,
        image_ids=tuple(f"im{i}" for i in range(r.size)), image_factors=r,
        probabilities=selection_probabilities(r))


ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'} | {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
