import io
import math

import mpmath
import numpy as np
import pytest

from rebalance import (FactorDomainError, FactorOverflowError, ImageRecord, Method,
                       RebalanceConfig, build_table, compute_frequencies, eirfs_factor,
                       eirfs_first_derivative, eirfs_second_derivative, image_repeat,
                       irfs_factor, irfs_inner, rfs_factor, selection_probabilities)
from rebalance.factors import dumps_table, load_table, read_table, write_table

from conftest import make_index

FIRE = (16_915 / 40_384, 33_773 / 146_949)
LAKE = (12_646 / 40_384, 12_646 / 146_949)


def mp_eirfs(f_i, f_b, t, alpha):
    # evaluated at the caller's working precision
    s = mpmath.sqrt(mpmath.mpf(t) / mpmath.sqrt(mpmath.mpf(f_i) * mpmath.mpf(f_b)))
    return mpmath.exp(mpmath.mpf(alpha) * s)


def test_rfs_examples():
    assert rfs_factor(0.5, 1e-4) == 1.0
    assert rfs_factor(0.000025, 1e-4) == 2.0
    assert rfs_factor(0.418854, 1e-4) == 1.0


def test_irfs_examples():
    assert irfs_factor(1e-4, 1e-4, 1e-4) == 1.0
    assert irfs_factor(*FIRE, 1e-4) == 1.0
    assert irfs_inner(*FIRE, 1e-4) == pytest.approx(0.01795, abs=5e-6)


def test_eirfs_examples():
    assert eirfs_factor(1e-4, 1e-4, 1e-4, 2.0) == pytest.approx(math.e ** 2, rel=1e-15)
    assert eirfs_factor(*FIRE, 1e-4, 2.0) == pytest.approx(1.03656, abs=5e-6)
    # the reference figure 1.05063 is a rounding slip; direct evaluation gives 1.050601
    assert eirfs_factor(*LAKE, 1e-4, 2.0) == pytest.approx(1.05063, abs=5e-5)
    # frozen values (cross-checked against the 50-digit oracle below)
    assert eirfs_factor(*FIRE, 1e-4, 2.0) == 1.0365581098151313
    assert eirfs_factor(*LAKE, 1e-4, 2.0) == 1.0506011547489575
    with mpmath.workdps(50):
        assert float(mp_eirfs(*FIRE, 1e-4, 2.0)) == pytest.approx(1.0365581098151313, rel=1e-15)
        assert float(mp_eirfs(*LAKE, 1e-4, 2.0)) == pytest.approx(1.0506011547489575, rel=1e-15)


def test_eirfs_small_alpha_limit():
    for alpha in (1e-3, 1e-6, 1e-9):
        assert eirfs_factor(1e-3, 1e-2, 1e-4, alpha) - 1.0 < 10 * alpha
    assert eirfs_factor(1e-3, 1e-2, 1e-4, 1e-300) == 1.0


@pytest.mark.parametrize("call", [
    lambda: rfs_factor(0.0, 1e-4),
    lambda: rfs_factor(-0.1, 1e-4),
    lambda: rfs_factor(0.1, 0.0),
    lambda: rfs_factor(0.1, 1.5),
    lambda: irfs_factor(0.1, 0.0, 1e-4),
    lambda: eirfs_factor(0.0, 0.1, 1e-4, 2.0),
    lambda: eirfs_factor(0.1, 0.1, 1e-4, 0.0),
    lambda: eirfs_first_derivative(0.1, 0.0, 1e-4, 2.0),
])
def test_domain_errors(call):
    with pytest.raises(FactorDomainError):
        call()


def test_overflow_is_reported():
    with pytest.raises(FactorOverflowError):
        eirfs_factor(1e-12, 1e-12, 1.0, 1.0)


def test_overflow_in_table_names_class():
    index = make_index([{0: 1}] * 3 + [{1: 1}])
    freqs = compute_frequencies(index)
    # class 0: 400 * sqrt(1/0.75) ~ 462 is fine; class 1: 400 * 2 = 800 overflows
    build_table(freqs, index, RebalanceConfig("eirfs", 1.0, 350.0))
    with pytest.raises(FactorOverflowError) as exc:
        build_table(freqs, index, RebalanceConfig("eirfs", 1.0, 400.0))
    assert "category 1 (c1)" in str(exc.value)
    assert exc.value.category == 1


def test_first_derivative_finite_difference():
    f, alpha, t = 1e-4, 2.0, 1e-4
    h = 1e-6 * f
    fd = (eirfs_factor(f + h, f, t, alpha) - eirfs_factor(f - h, f, t, alpha)) / (2 * h)
    assert eirfs_first_derivative(f, f, t, alpha) == pytest.approx(fd, rel=1e-6)
    assert eirfs_first_derivative(f, f, t, alpha) < 0


def test_second_derivative_finite_difference():
    f, alpha, t = 1e-4, 2.0, 1e-4
    h = 1e-3 * f
    fd = (eirfs_factor(f + h, f, t, alpha) - 2 * eirfs_factor(f, f, t, alpha)
          + eirfs_factor(f - h, f, t, alpha)) / h ** 2
    assert eirfs_second_derivative(f, f, t, alpha) == pytest.approx(fd, rel=1e-4)
    assert eirfs_second_derivative(f, f, t, alpha) > 0


def test_derivatives_against_mpmath_diff():
    # independent oracle: mpmath numerical differentiation of the 50-digit formula
    for f_i, f_b, t, alpha in [(1e-4, 1e-4, 1e-4, 2.0), (0.3, 0.01, 0.05, 0.5), (*LAKE, 1e-4, 2.0)]:
        with mpmath.workdps(50):
            d1 = mpmath.diff(lambda x: mp_eirfs(x, f_b, t, alpha), mpmath.mpf(f_i), 1)
            d2 = mpmath.diff(lambda x: mp_eirfs(x, f_b, t, alpha), mpmath.mpf(f_i), 2)
        assert eirfs_first_derivative(f_i, f_b, t, alpha) == pytest.approx(float(d1), rel=1e-12)
        assert eirfs_second_derivative(f_i, f_b, t, alpha) == pytest.approx(float(d2), rel=1e-12)


def test_alpha_scaling_of_first_derivative():
    f_i, f_b, t = 2e-4, 5e-5, 1e-4
    s = irfs_inner(f_i, f_b, t)
    d1 = eirfs_first_derivative(f_i, f_b, t, 1.0)
    d2 = eirfs_first_derivative(f_i, f_b, t, 2.0)
    assert d2 == pytest.approx(2 * math.exp(2 * s) / math.exp(s) * d1, rel=1e-13)


def test_second_derivative_grows_when_f_halves():
    f_b, t = 0.01, 1e-4
    for f_i in np.geomspace(1e-5, 0.5, 12):
        assert (eirfs_second_derivative(f_i / 2, f_b, t, 2.0)
                > eirfs_second_derivative(f_i, f_b, t, 2.0))


def test_image_repeat():
    factors = {0: 1.03656, 3: 1.05063}
    assert image_repeat(ImageRecord("a", "a", {0: 2, 3: 1}), factors) == 1.05063
    assert image_repeat(ImageRecord("a", "a", {0: 1}), factors) == 1.03656
    assert image_repeat(ImageRecord("a", "a", {}), factors) == 1.0
    # excluded categories have no entry and do not participate
    assert image_repeat(ImageRecord("a", "a", {0: 1, 9: 4}), factors) == 1.03656


@pytest.mark.parametrize("r, p", [
    ([1.0, 3.0], [0.25, 0.75]),
    ([2.0, 1.0, 1.0], [0.5, 0.25, 0.25]),
    ([4.0] * 8, [0.125] * 8),
])
def test_selection_probabilities(r, p):
    assert selection_probabilities(r).tolist() == p


@pytest.mark.parametrize("r", [[], [1.0, 0.0], [1.0, -2.0]])
def test_selection_probabilities_domain(r):
    with pytest.raises(FactorDomainError):
        selection_probabilities(r)


def test_config_validation():
    assert RebalanceConfig() == RebalanceConfig("eirfs", 1e-4, 2.0)
    assert RebalanceConfig("rfs", 0.1, 3.0).alpha is None
    for bad in (dict(threshold=0.0), dict(threshold=1.5), dict(alpha=0.0), dict(alpha=None)):
        with pytest.raises(FactorDomainError):
            RebalanceConfig(**bad)
    with pytest.raises(ValueError):
        RebalanceConfig("nope")


def test_fire_uav_eirfs(fire_uav_index, fire_uav_freqs):
    table = build_table(fire_uav_freqs, fire_uav_index, RebalanceConfig())
    got = dict(zip(table.names, table.class_factors))
    for name, f in (("Fire", FIRE), ("Lake", LAKE)):
        with mpmath.workdps(50):
            want = float(mp_eirfs(*f, 1e-4, 2.0))
        assert got[name] == pytest.approx(want, rel=1e-14)
    assert got["Lake"] > got["Fire"] > got["Smoke"] > got["Human"] > 1.0
    assert abs(math.fsum(table.probabilities) - 1.0) <= 1e-9
    assert np.all(table.image_factors > 1.0)


@pytest.mark.parametrize("method", ["irfs", "rfs", "baseline"])
def test_fire_uav_linear_methods_saturate(fire_uav_index, fire_uav_freqs, method):
    table = build_table(fire_uav_freqs, fire_uav_index, RebalanceConfig(method, 1e-4))
    assert np.all(table.class_factors == 1.0)
    assert np.all(table.probabilities == 1.0 / 40_384)


def test_table_excludes_zero_classes_and_empty_images():
    from rebalance import CategoryInfo
    cats = [CategoryInfo(0, "a"), CategoryInfo(1, "b"), CategoryInfo(2, "rare")]
    index = make_index([{0: 3}, {}, {0: 1, 2: 1}] + [{0: 1}] * 20, categories=cats)
    table = build_table(compute_frequencies(index), index, RebalanceConfig("rfs", 0.5))
    assert table.excluded == (1,)
    assert math.isnan(table.class_factors[1])
    assert set(table.factor_map) == {0, 2}
    assert table.image_factors[1] == 1.0
    assert table.image_factors[2] == table.factor_map[2] == math.sqrt(0.5 / (1 / 23))


def test_table_rejects_foreign_frequencies(fire_uav_index):
    other = make_index([{0: 1}])
    with pytest.raises(ValueError):
        build_table(compute_frequencies(other), fire_uav_index, RebalanceConfig())


@pytest.mark.parametrize("cfg", [RebalanceConfig(), RebalanceConfig("rfs", 0.3),
                                 RebalanceConfig("baseline")])
def test_table_text_round_trip(tmp_path, cfg):
    index = make_index([{0: 1}, {0: 2, 1: 1}, {}, {2: 5}] * 3)
    table = build_table(compute_frequencies(index), index, cfg)
    text = dumps_table(table)
    again = load_table(io.StringIO(text))
    assert again == table
    assert dumps_table(again) == text
    write_table(table, tmp_path / "t.tsv")
    assert read_table(tmp_path / "t.tsv") == table
    assert text.startswith("# rebalance repeat-factor table v1\nmethod\t")
