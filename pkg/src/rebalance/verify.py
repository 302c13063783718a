"""Self-checks of the repeat-factor math, shipped for ``rebalance verify``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import generate_synthetic, growth_diagnostic
from .factors import (Method, RebalanceConfig, build_table, eirfs_factor,
                      eirfs_first_derivative, eirfs_second_derivative, irfs_factor, rfs_factor)
from .frequency import compute_frequencies

GRID = np.geomspace(1e-4, 1.0, 20)
T, ALPHA = 1e-4, 2.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def central_first(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def central_second(f, x, h):
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def check_derivative_signs():
    worst = None
    for fi in GRID:
        for fb in GRID:
            d1 = eirfs_first_derivative(fi, fb, T, ALPHA)
            d2 = eirfs_second_derivative(fi, fb, T, ALPHA)
            if not (d1 < 0 < d2):
                worst = (fi, fb, d1, d2)
    return CheckResult("derivative signs", worst is None,
                       "dr/df_i < 0 and d2r/df_i2 > 0 on 20x20 grid" if worst is None
                       else f"violated at {worst}")


def check_derivative_agreement():
    err1 = err2 = 0.0
    for fi in GRID:
        for fb in GRID:
            def r(x):
                return eirfs_factor(x, fb, T, ALPHA)
            d1 = eirfs_first_derivative(fi, fb, T, ALPHA)
            d2 = eirfs_second_derivative(fi, fb, T, ALPHA)
            err1 = max(err1, abs(central_first(r, fi, 1e-6 * fi) / d1 - 1.0))
            err2 = max(err2, abs(central_second(r, fi, 1e-3 * fi) / d2 - 1.0))
    ok = bool(err1 <= 1e-6 and err2 <= 1e-4)
    return CheckResult("finite-difference agreement", ok,
                       f"max rel err first={err1:.2e} (<=1e-6), second={err2:.2e} (<=1e-4)")


def check_convexity():
    fine = np.geomspace(1e-6, 1.0, 200)
    bad = 0
    for fb in (1e-6, 1e-3, 1.0):
        r = np.array([eirfs_factor(f, fb, T, ALPHA) for f in fine])
        bad += int(np.sum(np.diff(r) >= 0))
        for k in range(1, fine.size - 1):
            h = min(fine[k] - fine[k - 1], fine[k + 1] - fine[k])
            lo = eirfs_factor(fine[k] - h, fb, T, ALPHA)
            hi = eirfs_factor(fine[k] + h, fb, T, ALPHA)
            if lo + hi < 2.0 * r[k]:
                bad += 1
    return CheckResult("monotone and convex", bad == 0,
                       f"{bad} violations on geometric grid [1e-6, 1]")


def check_collapse_identity():
    bad = [(f, t) for f in np.geomspace(1e-6, 1.0, 50) for t in (1e-4, 1e-2, 1.0)
           if irfs_factor(f, f, t) != rfs_factor(f, t)]
    return CheckResult("irfs(f, f) == rfs(f)", not bad, f"{len(bad)} mismatches")


def check_growth_rates():
    unclamped = np.geomspace(1e-8, 5e-5, 20)
    cfg = RebalanceConfig(Method.EIRFS, T, ALPHA)
    fits = [growth_diagnostic(m, cfg, unclamped) for m in ("rfs", "irfs", "eirfs")]
    ok = all(bool(abs(g.slope - g.expected_slope) <= 1e-6) for g in fits)
    detail = ", ".join(f"{g.method} slope {g.slope:.9f} (want {g.expected_slope:.9f})"
                       for g in fits)
    return CheckResult("growth rates", ok, detail)


def check_normalization():
    index = generate_synthetic(6, 2.0, 5000, "poisson:2.0", multi_class=True, seed=7)
    freqs = compute_frequencies(index)
    worst = 0.0
    for method in Method:
        table = build_table(freqs, index, RebalanceConfig(method))
        worst = max(worst, abs(math.fsum(table.probabilities) - 1.0))
    return CheckResult("sum p_i == 1", bool(worst <= 1e-9), f"max |sum - 1| = {worst:.1e}")


CHECKS = (check_derivative_signs, check_derivative_agreement, check_convexity,
          check_collapse_identity, check_growth_rates, check_normalization)


def run_checks():
    return [check() for check in CHECKS]
