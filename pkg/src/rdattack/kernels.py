"""Hot loops of the attack search, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module are bound to one flavour at import
time (see ``_backend``).  Both flavours compute every row of a batch
independently of the other rows, so a probability vector never depends on the
batch it was evaluated in.  The direction search compares confidences across
batches and relies on that.

Integer outputs (index sampling) are identical across flavours.  Float outputs
agree to rounding; the numba forward accumulates in a different order than
BLAS does.
"""

import math

import numpy as np

from ._backend import USE_NUMBA

# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------


def dense_forward_numpy(X, W, Wt, b, relu):
    """Affine layer (+ optional ReLU) on a batch, one gemv per row."""
    out = np.empty((X.shape[0], W.shape[0]), dtype=np.float32)
    for r in range(X.shape[0]):
        # fresh buffer so the BLAS call sees the same alignment for every row
        z = W @ X[r].copy()
        z += b
        if relu:
            np.maximum(z, 0.0, out=z)
        out[r] = z
    return out


def softmax_rows_numpy(Z):
    out = np.empty(Z.shape, dtype=np.float32)
    for r in range(Z.shape[0]):
        z = Z[r].astype(np.float64)
        e = np.exp(z - z.max())
        out[r] = e / e.sum()
    return out


def sample_indices_numpy(draws, m):
    """Decode per-row partial Fisher-Yates draws into distinct indices.

    ``draws[p, t]`` must lie in ``[0, m - t)``.
    """
    k, l = draws.shape
    out = np.empty((k, l), dtype=np.int64)
    for p in range(k):
        moved = {}
        for t in range(l):
            j = t + int(draws[p, t])
            out[p, t] = moved.get(j, j)
            moved[j] = moved.get(t, t)
    return out


def rotate_pairs_numpy(v, idx, c, s):
    w = v.copy()
    a, b = idx[0::2], idx[1::2]
    va = v[a].astype(np.float64)
    vb = v[b].astype(np.float64)
    w[a] = c * va + s * vb
    w[b] = -s * va + c * vb
    return w


def build_candidates_numpy(x, v, current, idx_all, cos_all, sin_all, order, start, eps, clip, out):
    """Fill ``out`` with perturbed samples for plans ``order[start:]``.

    Plans whose sample would equal ``current`` are skipped.  Returns the number
    of rows written, the plan id of each row and the next unread position.
    """
    cap = out.shape[0]
    plans = np.empty(cap, dtype=np.int64)
    n = 0
    pos = start
    while pos < order.shape[0] and n < cap:
        p = order[pos]
        pos += 1
        idx = idx_all[p]
        a, b = idx[0::2], idx[1::2]
        va = v[a].astype(np.float64)
        vb = v[b].astype(np.float64)
        ra = (cos_all[p] * va + sin_all[p] * vb).astype(np.float32)
        rb = (-sin_all[p] * va + cos_all[p] * vb).astype(np.float32)
        vals = np.empty(idx.shape[0], dtype=np.float32)
        vals[0::2] = x[a] + eps * np.sign(ra)
        vals[1::2] = x[b] + eps * np.sign(rb)
        if clip:
            np.clip(vals, np.float32(0.0), np.float32(1.0), out=vals)
        if np.array_equal(vals, current[idx]):
            continue
        out[n] = current
        out[n, idx] = vals
        plans[n] = p
        n += 1
    return n, plans[:n], pos


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------


def _compile_numba():
    from numba import njit

    @njit(cache=True)
    def dense_forward(X, W, Wt, b, relu):
        n, k = X.shape
        o = Wt.shape[1]
        out = np.empty((n, o), dtype=np.float32)
        for r in range(n):
            acc = out[r]
            for j in range(o):
                acc[j] = b[j]
            for i in range(k):
                xi = X[r, i]
                if xi != 0.0:
                    row = Wt[i]
                    for j in range(o):
                        acc[j] += xi * row[j]
            if relu:
                for j in range(o):
                    if acc[j] < 0.0:
                        acc[j] = 0.0
        return out

    @njit(cache=True)
    def softmax_rows(Z):
        n, c = Z.shape
        out = np.empty((n, c), dtype=np.float32)
        e = np.empty(c, dtype=np.float64)
        for r in range(n):
            top = np.float64(Z[r, 0])
            for j in range(1, c):
                if Z[r, j] > top:
                    top = np.float64(Z[r, j])
            total = 0.0
            for j in range(c):
                e[j] = math.exp(np.float64(Z[r, j]) - top)
                total += e[j]
            for j in range(c):
                out[r, j] = e[j] / total
        return out

    @njit(cache=True)
    def sample_indices(draws, m):
        k, l = draws.shape
        out = np.empty((k, l), dtype=np.int64)
        keys = np.empty(2 * l, dtype=np.int64)
        vals = np.empty(2 * l, dtype=np.int64)
        for p in range(k):
            nkeys = 0
            for t in range(l):
                j = t + draws[p, t]
                vj = j
                vt = t
                slot = -1
                for q in range(nkeys):
                    if keys[q] == j:
                        vj = vals[q]
                        slot = q
                    if keys[q] == t:
                        vt = vals[q]
                out[p, t] = vj
                if slot >= 0:
                    vals[slot] = vt
                else:
                    keys[nkeys] = j
                    vals[nkeys] = vt
                    nkeys += 1
        return out

    @njit(cache=True)
    def rotate_pairs(v, idx, c, s):
        w = v.copy()
        for q in range(idx.shape[0] // 2):
            a = idx[2 * q]
            b = idx[2 * q + 1]
            va = np.float64(v[a])
            vb = np.float64(v[b])
            w[a] = c * va + s * vb
            w[b] = -s * va + c * vb
        return w

    @njit(cache=True)
    def build_candidates(x, v, current, idx_all, cos_all, sin_all, order, start, eps, clip, out):
        cap = out.shape[0]
        m = x.shape[0]
        l = idx_all.shape[1]
        plans = np.empty(cap, dtype=np.int64)
        vals = np.empty(l, dtype=np.float32)
        zero = np.float32(0.0)
        one = np.float32(1.0)
        n = 0
        pos = start
        while pos < order.shape[0] and n < cap:
            p = order[pos]
            pos += 1
            c = cos_all[p]
            s = sin_all[p]
            same = True
            for q in range(l // 2):
                a = idx_all[p, 2 * q]
                b = idx_all[p, 2 * q + 1]
                va = np.float64(v[a])
                vb = np.float64(v[b])
                ra = np.float32(c * va + s * vb)
                rb = np.float32(-s * va + c * vb)
                sa = one if ra > 0 else (-one if ra < 0 else zero)
                sb = one if rb > 0 else (-one if rb < 0 else zero)
                ca = x[a] + eps * sa
                cb = x[b] + eps * sb
                if clip:
                    ca = min(max(ca, zero), one)
                    cb = min(max(cb, zero), one)
                vals[2 * q] = ca
                vals[2 * q + 1] = cb
                if ca != current[a] or cb != current[b]:
                    same = False
            if same:
                continue
            for i in range(m):
                out[n, i] = current[i]
            for q in range(l):
                out[n, idx_all[p, q]] = vals[q]
            plans[n] = p
            n += 1
        return n, plans[:n], pos

    return {
        "dense_forward": dense_forward,
        "softmax_rows": softmax_rows,
        "sample_indices": sample_indices,
        "rotate_pairs": rotate_pairs,
        "build_candidates": build_candidates,
    }


NUMPY_KERNELS = {
    "dense_forward": dense_forward_numpy,
    "softmax_rows": softmax_rows_numpy,
    "sample_indices": sample_indices_numpy,
    "rotate_pairs": rotate_pairs_numpy,
    "build_candidates": build_candidates_numpy,
}

_numba_cache = {}


def numba_kernels():
    """Compiled numba kernels (imports numba on first call)."""
    if not _numba_cache:
        _numba_cache.update(_compile_numba())
    return _numba_cache


_active = numba_kernels() if USE_NUMBA else NUMPY_KERNELS

dense_forward = _active["dense_forward"]
softmax_rows = _active["softmax_rows"]
sample_indices = _active["sample_indices"]
rotate_pairs = _active["rotate_pairs"]
build_candidates = _active["build_candidates"]
