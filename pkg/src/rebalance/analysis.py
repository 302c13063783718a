"""Numerical checks of how repeat factors reshape the class distribution.

Includes the exact and Monte Carlo training distributions, a log-log
power-law fit, growth-rate regressions, alpha x threshold sweeps and a
synthetic long-tailed dataset generator.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels, rng
from .errors import (DiagnosticError, FactorOverflowError, GenerationError,
                     InsufficientDataError)
from .factors import (Method, RebalanceConfig, RepeatFactorTable, build_table, irfs_inner,
                      rfs_factor)
from .frequency import FrequencyTable, compute_frequencies
from .ingest import CategoryInfo, DatasetIndex
from .sampling import MODES, draw_epoch, expand_counts

DEFAULT_ALPHAS = (0.5, 1.0, 2.0)
DEFAULT_THRESHOLDS = (0.1, 0.01, 0.001, 0.0001)


def _normalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    return w / total if total > 0 else w


def theoretical_train_distribution(freqs: FrequencyTable, table: RepeatFactorTable) -> np.ndarray:
    """Normalized r_c * P_data(c) with P_data the instance fraction; 0 for excluded classes."""
    r = np.where(np.isnan(table.class_factors), 0.0, table.class_factors)
    return _normalize(r * freqs.instance_fraction)


def expected_train_distribution(index: DatasetIndex, table: RepeatFactorTable) -> np.ndarray:
    """Exact per-instance class exposure under p_i, valid for multi-class images too."""
    w = table.probabilities[index.image_of_member] * index.member_counts
    return _normalize(np.bincount(index.member_positions, weights=w,
                                  minlength=len(index.categories)))


def exposure_from_counts(index: DatasetIndex, image_counts: np.ndarray) -> np.ndarray:
    """Class instance exposure (unnormalized) given how often each image was shown."""
    w = image_counts[index.image_of_member] * index.member_counts
    return np.bincount(index.member_positions, weights=w, minlength=len(index.categories))


@dataclass(frozen=True)
class PowerLawFit:
    c0: float
    gamma: float
    residual_norm: float
    regressor: str


@dataclass(frozen=True, eq=False)
class DistributionReport:
    category_ids: tuple[int, ...]
    names: tuple[str, ...]
    p_data: np.ndarray
    p_data_image: np.ndarray
    p_train_theory: np.ndarray
    p_train_expected: np.ndarray
    p_train_empirical: np.ndarray
    l1_deviation: float
    proportionality_gap: float
    single_class_regime: bool
    samples: int
    epochs: int
    mode: str
    config: RebalanceConfig
    seed: int
    power_law: PowerLawFit | None = None
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {"method": cfg.method.value, "threshold": cfg.threshold,
                       "alpha": cfg.alpha, "mode": self.mode, "seed": self.seed},
            "samples": self.samples,
            "epochs": self.epochs,
            "single_class_regime": self.single_class_regime,
            "l1_deviation": self.l1_deviation,
            "proportionality_gap": self.proportionality_gap,
            "power_law": None if self.power_law is None else asdict(self.power_law),
            "notes": list(self.notes),
            "classes": [
                {"category_id": cid, "name": name,
                 "p_data": float(self.p_data[k]), "p_data_image": float(self.p_data_image[k]),
                 "p_train_theory": float(self.p_train_theory[k]),
                 "p_train_expected": float(self.p_train_expected[k]),
                 "p_train_empirical": float(self.p_train_empirical[k])}
                for k, (cid, name) in enumerate(zip(self.category_ids, self.names))],
        }


def simulate_training_distribution(index: DatasetIndex, table: RepeatFactorTable,
                                   mode: str = "draw", epochs: int = 1, size: int | None = None,
                                   seed: int = 0, jobs: int = 1) -> DistributionReport:
    """Generate epochs, count class instances actually shown, compare with theory.

    The proportionality P_train ~ r_c * P_data holds exactly only when every
    image has one class; outside that regime the gap is reported, not enforced.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    freqs = compute_frequencies(index)
    size = index.total_images if size is None else int(size)
    n = index.total_images

    def one(k):
        if mode == "draw":
            idx = draw_epoch(table, size, k, seed, _digest="-").indices
            return np.bincount(idx, minlength=n)
        return expand_counts(table, k, seed)

    if jobs > 1 and epochs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            per_epoch = list(pool.map(one, range(epochs)))
    else:
        per_epoch = [one(k) for k in range(epochs)]
    shown = np.zeros(n, dtype=np.int64)
    for counts in per_epoch:
        shown += counts

    theory = theoretical_train_distribution(freqs, table)
    expected = expected_train_distribution(index, table)
    empirical = _normalize(exposure_from_counts(index, shown))
    single = index.is_single_class()
    notes = []
    if not single:
        notes.append("multi-class images present: r_c * P_data proportionality is approximate; "
                     "l1_deviation is published, not asserted")
    try:
        fit = fit_power_law(freqs)
    except InsufficientDataError:
        fit = None
    return DistributionReport(
        category_ids=tuple(int(c) for c in freqs.category_ids),
        names=freqs.names,
        p_data=freqs.instance_fraction,
        p_data_image=_normalize(freqs.image_fraction),
        p_train_theory=theory,
        p_train_expected=expected,
        p_train_empirical=empirical,
        l1_deviation=float(np.abs(theory - empirical).sum()),
        proportionality_gap=float(np.abs(theory - expected).sum()),
        single_class_regime=single,
        samples=int(shown.sum()),
        epochs=epochs,
        mode=mode,
        config=table.config,
        seed=seed,
        power_law=fit,
        notes=tuple(notes),
    )


def _linear_fit(x, y):
    design = np.column_stack([x, np.ones_like(x)])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coef
    return float(coef[0]), float(coef[1]), float(np.linalg.norm(residual))


def fit_power_law(freqs: FrequencyTable, regressor: str = "rank") -> PowerLawFit:
    """Least-squares fit of ln P_data(c) = ln c0 - gamma * ln x(c).

    ``regressor="rank"`` uses the 1-based frequency rank of each class (largest
    P_data first, ties by category order); ``"image_fraction"`` uses f_i.
    """
    active = freqs.active
    if int(active.sum()) < 3:
        raise InsufficientDataError("power-law fit needs at least 3 classes with instances")
    p = freqs.instance_fraction[active]
    if regressor == "rank":
        order = np.argsort(-p, kind="stable")
        x = np.empty_like(p)
        x[order] = np.arange(1, p.size + 1)
    elif regressor == "image_fraction":
        x = freqs.image_fraction[active]
        if np.ptp(x) == 0:
            raise InsufficientDataError("image fractions are all equal; slope is undefined")
    else:
        raise ValueError(f"unknown regressor {regressor!r}")
    slope, intercept, resid = _linear_fit(np.log(x), np.log(p))
    return PowerLawFit(c0=math.exp(intercept), gamma=-slope, residual_norm=resid,
                       regressor=regressor)


@dataclass(frozen=True)
class GrowthFit:
    method: str
    slope: float
    intercept: float
    residual_norm: float
    expected_slope: float


def growth_diagnostic(method, config: RebalanceConfig, probe, probe_instance=None) -> GrowthFit:
    """Regress the repeat factor against its predicted growth variable.

    ``probe`` holds image fractions; ``probe_instance`` the matching instance
    fractions (defaults to the same values).

    * rfs:   ln r against ln f_i, expected slope -1/2
    * irfs:  ln s against ln(f_i f_b) for the unclamped inner value s, expected -1/4
    * eirfs: ln r against (f_i f_b)^(-1/4), expected alpha * sqrt(t)
    """
    method = Method(method)
    f_i = np.asarray(probe, dtype=np.float64)
    f_b = f_i if probe_instance is None else np.asarray(probe_instance, dtype=np.float64)
    t = config.threshold
    if f_i.size < 2 or f_i.shape != f_b.shape:
        raise DiagnosticError("probe grid needs at least two points of matching shape")
    if method is Method.RFS:
        inner = np.sqrt(t / f_i)
        bad = f_i[inner < 1.0]
        if bad.size:
            raise DiagnosticError(f"probe points inside the clamp region (f >= t): {bad.tolist()}",
                                  bad.tolist())
        r = np.array([rfs_factor(f, t) for f in f_i])
        slope, icpt, res = _linear_fit(np.log(f_i), np.log(r))
        expected = -0.5
    elif method is Method.IRFS:
        s = np.array([irfs_inner(a, b, t) for a, b in zip(f_i, f_b)])
        bad = [(float(a), float(b)) for a, b, v in zip(f_i, f_b, s) if v < 1.0]
        if bad:
            raise DiagnosticError(f"probe points inside the clamp region: {bad}", bad)
        slope, icpt, res = _linear_fit(np.log(f_i * f_b), np.log(s))
        expected = -0.25
    elif method is Method.EIRFS:
        if config.alpha is None:
            raise DiagnosticError("eirfs diagnostic needs alpha")
        alpha = config.alpha
        # ln r = alpha * s; computed directly to stay finite past exp's range
        log_r = np.array([alpha * irfs_inner(a, b, t) for a, b in zip(f_i, f_b)])
        slope, icpt, res = _linear_fit((f_i * f_b) ** -0.25, log_r)
        expected = alpha * math.sqrt(t)
    else:
        raise DiagnosticError("baseline has no growth rate")
    return GrowthFit(method.value, slope, icpt, res, expected)


# --- sweeps ---

@dataclass(frozen=True)
class SweepCell:
    alpha: float
    threshold: float
    rare_class_share: float = math.nan
    max_class_factor: float = math.nan
    epoch_inflation: float = math.nan
    l1_shift: float = math.nan
    error: str | None = None


@dataclass(frozen=True)
class SweepGrid:
    alphas: tuple[float, ...]
    thresholds: tuple[float, ...]
    cells: tuple[SweepCell, ...]  # row-major: alpha outer, threshold inner
    mode: str
    method: str
    rare_category: int

    def cell(self, alpha, threshold) -> SweepCell:
        i = self.alphas.index(alpha)
        j = self.thresholds.index(threshold)
        return self.cells[i * len(self.thresholds) + j]

    def matrix(self, metric="rare_class_share") -> np.ndarray:
        values = [getattr(c, metric) for c in self.cells]
        return np.array(values, dtype=np.float64).reshape(len(self.alphas), len(self.thresholds))


def rare_category_position(freqs: FrequencyTable) -> int:
    """Active class with the smallest instance share (then smallest image share)."""
    active = np.flatnonzero(freqs.active)
    if active.size == 0:
        raise InsufficientDataError("no class has instances")
    keys = [(freqs.instance_fraction[k], freqs.image_fraction[k], k) for k in active]
    return min(keys)[2]


def summarize(freqs: FrequencyTable, table: RepeatFactorTable, rare: int) -> dict[str, float]:
    theory = theoretical_train_distribution(freqs, table)
    return {
        "rare_class_share": float(theory[rare]),
        "max_class_factor": float(np.nanmax(table.class_factors)),
        "epoch_inflation": float(table.image_factors.sum() / table.num_images),
        "l1_shift": float(np.abs(theory - freqs.instance_fraction).sum()),
    }


def sweep(index: DatasetIndex, alphas=DEFAULT_ALPHAS, thresholds=DEFAULT_THRESHOLDS,
          mode: str = "draw", method="eirfs", jobs: int = 1) -> SweepGrid:
    alphas, thresholds = tuple(float(a) for a in alphas), tuple(float(t) for t in thresholds)
    if not alphas or not thresholds:
        raise ValueError("alphas and thresholds must be non-empty")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    method = Method(method)
    freqs = compute_frequencies(index)
    rare = rare_category_position(freqs)

    def one(pair):
        a, t = pair
        try:
            cfg = RebalanceConfig(method, t, a if method is Method.EIRFS else None)
            return SweepCell(a, t, **summarize(freqs, build_table(freqs, index, cfg), rare))
        except FactorOverflowError as exc:
            return SweepCell(a, t, error=str(exc))

    pairs = [(a, t) for a in alphas for t in thresholds]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            cells = tuple(pool.map(one, pairs))
    else:
        cells = tuple(one(p) for p in pairs)
    return SweepGrid(alphas, thresholds, cells, mode, method.value,
                     int(freqs.category_ids[rare]))


# --- report writers ---

def write_distribution_csv(report: DistributionReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("category_id", "name", "p_data", "p_data_image", "p_train_theory",
                "p_train_expected", "p_train_empirical"))
    for row in report.to_dict()["classes"]:
        w.writerow((row["category_id"], row["name"], *(repr(row[k]) for k in (
            "p_data", "p_data_image", "p_train_theory", "p_train_expected",
            "p_train_empirical"))))


def write_distribution_json(report: DistributionReport, fh) -> None:
    json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    fh.write("\n")


def write_sweep_cells(grid: SweepGrid, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("alpha", "threshold", "rare_class_share", "max_class_factor",
                "epoch_inflation", "l1_shift", "error"))
    for c in grid.cells:
        w.writerow((repr(c.alpha), repr(c.threshold), repr(c.rare_class_share),
                    repr(c.max_class_factor), repr(c.epoch_inflation), repr(c.l1_shift),
                    c.error or ""))


def write_sweep_matrix(grid: SweepGrid, fh, metric="rare_class_share") -> None:
    """Alpha rows by threshold columns, one metric per table."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow((f"{metric} alpha/t", *(repr(t) for t in grid.thresholds)))
    m = grid.matrix(metric)
    for i, a in enumerate(grid.alphas):
        w.writerow((repr(a), *(repr(float(v)) for v in m[i])))


def sweep_to_dict(grid: SweepGrid) -> dict:
    return {"alphas": list(grid.alphas), "thresholds": list(grid.thresholds), "mode": grid.mode,
            "method": grid.method, "rare_category": grid.rare_category,
            "cells": [asdict(c) for c in grid.cells]}


# --- synthetic data ---

def power_law_counts(num_classes: int, gamma: float, total: int) -> np.ndarray:
    """Split ``total`` into class counts proportional to rank^-gamma.

    Largest-remainder rounding (ties to the lower rank); every class gets at
    least one, taken from the largest classes if needed.
    """
    if num_classes < 1 or total < num_classes:
        raise GenerationError(f"cannot give {num_classes} classes at least one of {total} images")
    w = np.arange(1, num_classes + 1, dtype=np.float64) ** -float(gamma)
    ideal = total * w / w.sum()
    counts = np.floor(ideal).astype(np.int64)
    short = total - int(counts.sum())
    order = np.lexsort((np.arange(num_classes), -(ideal - counts)))
    counts[order[:short]] += 1
    for k in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[k] += 1
    return counts


def _parse_law(law: str):
    name, _, arg = law.partition(":")
    if name == "one" and not arg:
        return name, 1.0
    try:
        mean = float(arg)
    except ValueError:
        raise GenerationError(f"bad instances-per-image law {law!r}") from None
    if name not in ("poisson", "geometric") or not mean >= 1.0:
        raise GenerationError(f"bad instances-per-image law {law!r} "
                              "(use 'one', 'poisson:<mean>' or 'geometric:<mean>' with mean >= 1)")
    return name, mean


def _sample_law(name, mean, u):
    """Instance counts >= 1 by inverse transform of uniforms ``u``."""
    if name == "one" or mean == 1.0:
        return np.ones(u.shape[0], dtype=np.int64)
    if name == "geometric":
        p = 1.0 / mean
        return 1 + np.floor(np.log1p(-u) / math.log1p(-p)).astype(np.int64)
    lam = mean - 1.0
    kmax = int(lam + 20 * math.sqrt(lam) + 20)
    k = np.arange(kmax + 1)
    logpmf = k * math.log(lam) - lam - np.array([math.lgamma(x + 1) for x in k])
    cdf = np.cumsum(np.exp(logpmf))
    return 1 + np.minimum(np.searchsorted(cdf, u, side="right"), kmax)


def generate_synthetic(num_classes: int, gamma: float, num_images: int,
                       instances_per_image_law: str = "one", multi_class: bool = False,
                       seed: int = 0, co_occurrence: float = 0.3) -> DatasetIndex:
    """Deterministic long-tailed dataset whose class image counts follow rank^-gamma.

    Single-class mode gives every image exactly one instance of one class. In
    multi-class mode each image additionally receives, with probability
    ``co_occurrence``, a second class drawn from the same power law, and every
    (image, class) pair gets an instance count from the law.
    """
    if num_classes < 2:
        raise GenerationError("need at least 2 classes")
    if num_images < num_classes:
        raise GenerationError("need at least as many images as classes")
    name, mean = _parse_law(instances_per_image_law)
    if not multi_class and name != "one":
        raise GenerationError("single-class mode holds exactly one instance per image; "
                              "use law 'one' or multi_class=True")
    if not 0.0 <= co_occurrence <= 1.0:
        raise GenerationError("co_occurrence must lie in [0, 1]")

    counts = power_law_counts(num_classes, gamma, num_images)
    primary = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
    primary = _kernels.shuffle(primary, rng.derive_key(seed, rng.PURPOSE_SYNTH, 0), 0)

    if multi_class:
        u = _kernels.uniforms(rng.derive_key(seed, rng.PURPOSE_SYNTH, 1), 0, 2 * num_images)
        extra = u[:num_images] < co_occurrence
        w = np.cumsum(np.arange(1, num_classes + 1, dtype=np.float64) ** -float(gamma))
        second = np.minimum(np.searchsorted(w, u[num_images:] * w[-1], side="right"),
                            num_classes - 1)
        second = np.where(second == primary, (primary + 1) % num_classes, second)
        lengths = 1 + extra.astype(np.int64)
        members = np.empty(int(lengths.sum()), dtype=np.int64)
        indptr = np.concatenate(([0], np.cumsum(lengths)))
        members[indptr[:-1]] = primary
        members[indptr[:-1][extra] + 1] = second[extra]
        inst_u = _kernels.uniforms(rng.derive_key(seed, rng.PURPOSE_SYNTH, 2), 0, members.size)
        inst = _sample_law(name, mean, inst_u)
    else:
        indptr = np.arange(num_images + 1, dtype=np.int64)
        members = primary
        inst = np.ones(num_images, dtype=np.int64)

    width = len(str(num_images - 1))
    ids = [f"img{i:0{width}d}" for i in range(num_images)]
    return DatasetIndex(
        f"synthetic-k{num_classes}-g{gamma!r}-n{num_images}-s{seed}",
        [CategoryInfo(k, f"class_{k:02d}") for k in range(num_classes)],
        ids, [f"images/{i}.jpg" for i in ids], indptr, members, inst)
