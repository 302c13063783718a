"""The numba and numpy kernel flavours must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rebalance import _accel, _kernels as K, rng

keys = st.integers(0, rng.MASK64)


@pytest.fixture(scope="module")
def gen():
    return np.random.default_rng(20240601)


def test_backend_flag_values():
    assert _accel.BACKEND in ("numba", "numpy")
    assert _accel.USE_NUMBA == (_accel.BACKEND == "numba")


@given(keys, st.integers(0, 10**6), st.integers(0, 300))
def test_uniforms_agree(key, start, count):
    a = K._uniform_numba(np.uint64(key), start, count)
    b = K._uniform_numpy(key, start, count)
    assert np.array_equal(a, b)


@given(st.lists(st.lists(st.floats(1.0, 50.0), max_size=4), min_size=1, max_size=40))
def test_image_max_agrees(rows):
    class_factors = np.array([1.0, 2.5, 1.7, 9.0, 1.2])
    indptr = np.cumsum([0] + [len(r) for r in rows]).astype(np.int64)
    members = np.array([int(v) % 5 for r in rows for v in r], dtype=np.int64)
    a = K._image_max_numba(indptr, members, class_factors)
    b = K._image_max_numpy(indptr, members, class_factors)
    assert np.array_equal(a, b)
    for i, r in enumerate(rows):
        want = max((class_factors[int(v) % 5] for v in r), default=1.0)
        assert a[i] == want


@pytest.mark.parametrize("n", [1, 2, 3, 17, 1000, 40_000])
def test_alias_agrees(gen, n):
    w = gen.random(n) + (gen.random(n) < 0.1) * 30.0 + 1.0
    total = float(np.cumsum(w)[-1])
    a = K._alias_numba(w, total)
    b = K._alias_numpy(w, total)
    assert np.array_equal(a, b)
    # the table reproduces the weights exactly up to rounding
    mass = a[:, 0].copy()
    np.add.at(mass, a[:, 1].astype(np.int64), 1.0 - a[:, 0])
    np.testing.assert_allclose(mass / n, w / total, rtol=1e-9, atol=1e-15)
    da = K._alias_draw_numba(a, np.uint64(77), 5, 3000)
    db = K._alias_draw_numpy(b, 77, 5, 3000)
    assert np.array_equal(da, db)


@pytest.mark.parametrize("n, m", [(1, 1), (1, 50), (5, 3), (20_000, 7), (40_000, 100_000),
                                  (70_000, 70_000)])
def test_blocked_draw_agrees(gen, n, m):
    w = gen.random(n) * 3 + 1.0
    key = rng.derive_key(3, n, m)
    a = K._blocked_draw_numba(w, np.uint64(key), m)
    b = K._blocked_draw_numpy(w, key, m)
    assert a.dtype == b.dtype == np.int64
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < n


@pytest.mark.parametrize("m", [0, 1, 2, 10, K.BLOCK, K.BLOCK + 1, 3 * K.BLOCK + 5])
def test_shuffle_agrees_and_permutes(m):
    arr = np.arange(m, dtype=np.int64) // 2
    a = K._shuffle_numba(arr, np.uint64(11), 4)
    b = K._shuffle_numpy(arr, 11, 4)
    assert np.array_equal(a, b)
    assert np.array_equal(np.sort(a), arr)
    assert np.array_equal(arr, np.arange(m, dtype=np.int64) // 2)  # input untouched


@pytest.mark.parametrize("n", [1, 3, 500, 25_000])
def test_expand_agrees(gen, n):
    r = 1.0 + gen.random(n) * gen.integers(0, 4, n)
    for key in (0, rng.MASK64, 987654321):
        a = K._expand_numba(r, np.uint64(key))
        b = K._expand_numpy(r, key)
        assert np.array_equal(a, b)
        # fused kernel equals rounding followed by the standalone shuffle
        whole = np.floor(r)
        counts = (whole + (K._uniform_numpy(key, 0, n) < r - whole)).astype(np.int64)
        multiset = np.repeat(np.arange(n, dtype=np.int64), counts)
        assert np.array_equal(a, K._shuffle_numpy(multiset, key, n))


def test_shuffle_is_uniform_on_small_arrays():
    # all 6 orders of 3 elements should be equally likely
    seen = {}
    for k in range(6000):
        order = tuple(K.shuffle(np.arange(3), rng.derive_key(5, k), 0).tolist())
        seen[order] = seen.get(order, 0) + 1
    assert len(seen) == 6
    counts = np.array(list(seen.values()))
    assert float(((counts - 1000) ** 2 / 1000).sum()) < 25  # 5 dof


def test_blocked_draw_chi_square():
    n = 3 * K.BLOCK + 100
    w = np.ones(n)
    w[::97] = 40.0
    draws = K.blocked_draw(w, rng.derive_key(1, 2, 3), 2_000_000)
    observed = np.bincount(draws, minlength=n)
    expected = w / w.sum() * draws.size
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    dof = n - 1
    assert abs(chi2 - dof) < 5 * np.sqrt(2 * dof)
