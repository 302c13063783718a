"""Hot loops, each in a numba and a pure-numpy flavour.

The public names at the bottom are bound to one flavour according to
:mod:`rebalance._accel`. Both flavours are always importable so tests and the
benchmark can compare them; they must agree bit for bit.
"""
import numpy as np

from . import rng
from ._accel import USE_NUMBA, njit

_GOLDEN = np.uint64(rng.GOLDEN)
_MIX1 = np.uint64(rng.MIX1)
_MIX2 = np.uint64(rng.MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV_2_53 = rng.INV_2_53


# --- per-image maximum over member class factors (CSR layout) ---

@njit
def _image_max_numba(indptr, members, class_factors):
    n = indptr.shape[0] - 1
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = 1.0
        lo = indptr[i]
        hi = indptr[i + 1]
        if hi > lo:
            best = class_factors[members[lo]]
            for j in range(lo + 1, hi):
                v = class_factors[members[j]]
                if v > best:
                    best = v
        out[i] = best
    return out


def _image_max_numpy(indptr, members, class_factors):
    n = indptr.shape[0] - 1
    out = np.ones(n, dtype=np.float64)
    if members.shape[0] == 0:
        return out
    values = class_factors[members]
    nonempty = indptr[1:] > indptr[:-1]
    # reduceat misbehaves on empty segments, so reduce only over non-empty starts
    out[nonempty] = np.maximum.reduceat(values, indptr[:-1][nonempty])
    return out


# --- uniforms from a SplitMix64 stream ---

@njit
def _uniform_numba(key, start, count):
    out = np.empty(count, dtype=np.float64)
    base = np.uint64(key)
    for n in range(count):
        z = base + _GOLDEN * np.uint64(start + n + 1)
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        z = z ^ (z >> _S31)
        out[n] = np.float64(z >> _S11) * _INV_2_53
    return out


def _uniform_numpy(key, start, count):
    return rng.uniform_block(key, start, count)


# --- i.i.d. categorical draws via Walker/Vose alias tables ---
# Build: scaled = w * n / sum(w); indices with scaled < 1 go on the "small"
# stack, the rest on "large" (both filled in index order). Repeatedly pop s
# from small and l from large, set prob[s] = scaled[s], alias[s] = l,
# scaled[l] = (scaled[l] + scaled[s]) - 1 and push l back by the same rule.
# Leftovers get prob = 1. Draw: x = u * n, j = floor(x), keep j if
# x - j < prob[j], else take alias[j].
# The table is packed as rows (prob, alias) so a draw touches one cache line;
# both stacks share one int32 buffer (small grows up, large grows down).

@njit
def _alias_numba(weights, total):
    n = weights.shape[0]
    table = np.empty((n, 2), dtype=np.float64)
    stack = np.empty(n, dtype=np.int32)
    scale = n / total
    ns = 0
    top = n
    for i in range(n):
        v = weights[i] * scale
        table[i, 0] = v
        table[i, 1] = i
        if v < 1.0:
            stack[ns] = i
            ns += 1
        else:
            top -= 1
            stack[top] = i
    while ns > 0 and top < n:
        ns -= 1
        sm = stack[ns]
        lg = stack[top]
        top += 1
        table[sm, 1] = lg
        v = (table[lg, 0] + table[sm, 0]) - 1.0
        table[lg, 0] = v
        if v < 1.0:
            stack[ns] = lg
            ns += 1
        else:
            top -= 1
            stack[top] = lg
    for k in range(ns):
        table[stack[k], 0] = 1.0
    for k in range(top, n):
        table[stack[k], 0] = 1.0
    return table


def _alias_numpy(weights, total):
    n = weights.shape[0]
    scaled = (weights * (n / total)).tolist()
    alias = list(range(n))
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if not scaled[i] < 1.0]
    while small and large:
        sm = small.pop()
        lg = large.pop()
        alias[sm] = lg
        scaled[lg] = (scaled[lg] + scaled[sm]) - 1.0
        (small if scaled[lg] < 1.0 else large).append(lg)
    for i in small + large:
        scaled[i] = 1.0
    table = np.empty((n, 2), dtype=np.float64)
    table[:, 0] = scaled
    table[:, 1] = alias
    return table


@njit
def _alias_draw_numba(table, key, start, count):
    n = table.shape[0]
    out = np.empty(count, dtype=np.int64)
    base = np.uint64(key)
    for k in range(count):
        z = base + _GOLDEN * np.uint64(start + k + 1)
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        z = z ^ (z >> _S31)
        x = (np.float64(z >> _S11) * _INV_2_53) * n
        j = min(np.int64(x), n - 1)
        a = np.int64(table[j, 1])
        # branch-free select; a mispredicted branch here stalls the gather loads
        keep = np.int64(x - j < table[j, 0])
        out[k] = a + keep * (j - a)
    return out


def _alias_draw_numpy(table, key, start, count):
    n = table.shape[0]
    x = rng.uniform_block(key, start, count) * n
    j = np.minimum(x.astype(np.int64), n - 1)
    rows = table[j]
    return np.where(x - j < rows[:, 0], j, rows[:, 1].astype(np.int64))


# --- cache-blocked i.i.d. draws ---
# Images are split into contiguous blocks of BLOCK. Block masses are sequential
# sums. Stream outputs 0..M-1 pick a block per draw through an alias table over
# the masses; then, block by block, draws landing in block b are resolved with
# that block's own alias table using outputs M + offset_b + t. Draw k takes the
# next unused resolved value of its block. Each draw is still i.i.d. with
# probability w_i / sum(w); only the memory access pattern changes, so every
# random access stays inside one block's table.

BLOCK = 1 << 14


@njit
def _blocked_draw_numba(weights, key, count):
    n = weights.shape[0]
    nb = (n + BLOCK - 1) // BLOCK
    masses = np.empty(nb, dtype=np.float64)
    total = 0.0
    for b in range(nb):
        acc = 0.0
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            acc += weights[i]
        masses[b] = acc
        total += acc
    labels = _alias_draw_numba(_alias_numba(masses, total), key, 0, count)
    counts = np.zeros(nb, dtype=np.int64)
    for k in range(count):
        counts[labels[k]] += 1
    offsets = np.zeros(nb, dtype=np.int64)
    for b in range(1, nb):
        offsets[b] = offsets[b - 1] + counts[b - 1]
    resolved = np.empty(count, dtype=np.int64)
    for b in range(nb):
        c = counts[b]
        if c == 0:
            continue
        lo = b * BLOCK
        local = _alias_numba(weights[lo:min(n, lo + BLOCK)], masses[b])
        picks = _alias_draw_numba(local, key, count + offsets[b], c)
        base = offsets[b]
        for t in range(c):
            resolved[base + t] = lo + picks[t]
    out = np.empty(count, dtype=np.int64)
    for k in range(count):
        b = labels[k]
        out[k] = resolved[offsets[b]]
        offsets[b] += 1
    return out


def _blocked_draw_numpy(weights, key, count):
    n = weights.shape[0]
    nb = (n + BLOCK - 1) // BLOCK
    starts = np.arange(nb) * BLOCK
    masses = np.array([np.cumsum(weights[lo:lo + BLOCK])[-1] for lo in starts])
    total = float(np.cumsum(masses)[-1])
    labels = _alias_draw_numpy(_alias_numpy(masses, total), key, 0, count)
    counts = np.bincount(labels, minlength=nb)
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    resolved = np.empty(count, dtype=np.int64)
    for b in range(nb):
        c = int(counts[b])
        if c == 0:
            continue
        lo = int(starts[b])
        local = _alias_numpy(weights[lo:lo + BLOCK], float(masses[b]))
        o = int(offsets[b])
        resolved[o:o + c] = lo + _alias_draw_numpy(local, key, count + o, c)
    out = np.empty(count, dtype=np.int64)
    out[np.argsort(labels, kind="stable")] = resolved
    return out


# --- blocked shuffle (Rao-Sandelius) ---
# With m elements and nb = ceil(m / BLOCK) buckets, stream output start + k
# gives element k the bucket floor(u * nb). Elements are stably grouped by
# bucket, then each bucket gets a Fisher-Yates pass: step j (from c-1 down to
# 1) consumes the next output, beginning at start + m and continuing across
# buckets in order, and swaps a[j] with a[floor(u * (j+1))]. Uniform labels
# plus uniform in-bucket shuffles give a uniform permutation.

@njit
def _stream_uniform(base, n):
    z = base + _GOLDEN * np.uint64(n + 1)
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return np.float64(z >> _S11) * _INV_2_53


@njit
def _bucket_fisher_yates(out, counts, base, pos):
    hi = 0
    for b in range(counts.shape[0]):
        lo = hi
        hi = lo + counts[b]
        for j in range(hi - lo - 1, 0, -1):
            t = lo + np.int64(_stream_uniform(base, pos) * (j + 1))
            tmp = out[lo + j]
            out[lo + j] = out[t]
            out[t] = tmp
            pos += 1


@njit
def _shuffle_numba(arr, key, start):
    m = arr.shape[0]
    out = np.empty_like(arr)
    if m == 0:
        return out
    nb = (m + BLOCK - 1) // BLOCK
    base = np.uint64(key)
    labels = np.empty(m, dtype=np.int32)
    counts = np.zeros(nb, dtype=np.int64)
    for k in range(m):
        b = min(np.int64(_stream_uniform(base, start + k) * nb), nb - 1)
        labels[k] = b
        counts[b] += 1
    cursor = np.zeros(nb, dtype=np.int64)
    for b in range(1, nb):
        cursor[b] = cursor[b - 1] + counts[b - 1]
    for k in range(m):
        b = labels[k]
        out[cursor[b]] = arr[k]
        cursor[b] += 1
    _bucket_fisher_yates(out, counts, base, start + m)
    return out


@njit
def _expand_numba(r, key):
    # rounding, multiset and shuffle fused; bucket labels are regenerated
    # from the stream instead of stored, so only the output is allocated
    n = r.shape[0]
    base = np.uint64(key)
    m = 0
    for i in range(n):
        w = np.floor(r[i])
        m += np.int64(w) + np.int64(_stream_uniform(base, i) < r[i] - w)
    out = np.empty(m, dtype=np.int64)
    if m == 0:
        return out
    nb = (m + BLOCK - 1) // BLOCK
    counts = np.zeros(nb, dtype=np.int64)
    for sweep in range(2):
        if sweep == 1:
            cursor = np.zeros(nb, dtype=np.int64)
            for b in range(1, nb):
                cursor[b] = cursor[b - 1] + counts[b - 1]
        k = 0
        for i in range(n):
            w = np.floor(r[i])
            c = np.int64(w) + np.int64(_stream_uniform(base, i) < r[i] - w)
            for _ in range(c):
                b = min(np.int64(_stream_uniform(base, n + k) * nb), nb - 1)
                if sweep == 0:
                    counts[b] += 1
                else:
                    out[cursor[b]] = i
                    cursor[b] += 1
                k += 1
    _bucket_fisher_yates(out, counts, base, n + m)
    return out


def _fisher_yates_numpy(data, key, start):
    m = len(data)
    if m < 2:
        return data
    u = rng.uniform_block(key, start, m - 1)
    bounds = np.arange(m, 1, -1, dtype=np.float64)
    targets = (u * bounds).astype(np.int64).tolist()
    for step, j in enumerate(range(m - 1, 0, -1)):
        k = targets[step]
        data[j], data[k] = data[k], data[j]
    return data


def _shuffle_numpy(arr, key, start):
    m = arr.shape[0]
    if m == 0:
        return np.empty_like(arr)
    nb = (m + BLOCK - 1) // BLOCK
    labels = np.minimum((rng.uniform_block(key, start, m) * nb).astype(np.int64), nb - 1)
    grouped = arr[np.argsort(labels, kind="stable")].tolist()
    counts = np.bincount(labels, minlength=nb).tolist()
    out, lo, pos = [], 0, start + m
    for c in counts:
        out += _fisher_yates_numpy(grouped[lo:lo + c], key, pos)
        lo += c
        pos += max(c - 1, 0)
    return np.array(out, dtype=arr.dtype)


def _expand_numpy(r, key):
    whole = np.floor(r)
    counts = (whole + (rng.uniform_block(key, 0, r.shape[0]) < (r - whole))).astype(np.int64)
    multiset = np.repeat(np.arange(r.shape[0], dtype=np.int64), counts)
    return _shuffle_numpy(multiset, key, r.shape[0])


def _as_key(key):
    return np.uint64(key)


if USE_NUMBA:
    image_max = _image_max_numba

    def uniforms(key, start, count):
        return _uniform_numba(_as_key(key), start, count)

    alias_table = _alias_numba

    def alias_draw(table, key, start, count):
        return _alias_draw_numba(table, _as_key(key), start, count)

    def blocked_draw(weights, key, count):
        return _blocked_draw_numba(weights, _as_key(key), count)

    def shuffle(arr, key, start):
        return _shuffle_numba(arr, _as_key(key), start)

    def expand(r, key):
        return _expand_numba(r, _as_key(key))
else:
    image_max = _image_max_numpy
    uniforms = _uniform_numpy
    alias_table = _alias_numpy
    alias_draw = _alias_draw_numpy
    blocked_draw = _blocked_draw_numpy
    shuffle = _shuffle_numpy
    expand = _expand_numpy
