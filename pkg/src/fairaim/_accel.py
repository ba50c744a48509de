"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``FAIRAIM_DISABLE_NUMBA=1`` before import to force the numpy path.
Both implementations of every kernel stay importable under explicit names
(``*_numpy`` / ``*_numba``) so tests and the benchmark can compare them.
"""
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("FAIRAIM_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# ---------------------------------------------------------------- numpy path

def scatter_add_rows_numpy(values, index, n_rows):
    """out[index[e]] += values[e] for every row e."""
    out = np.zeros((n_rows, values.shape[1]), dtype=np.float64)
    if len(index):
        np.add.at(out, index, values)
    return out


def route_poses_numpy(xy, cum, offsets, route_idx, s):
    """Arc-length interpolation along packed polylines.

    ``xy``/``cum`` hold every route's vertices back to back; route ``r`` owns
    rows ``offsets[r]:offsets[r + 1]``. Returns (n, 3) rows of x, y, heading.
    """
    n = len(s)
    out = np.empty((n, 3), dtype=np.float64)
    for r in np.unique(route_idx):
        sel = np.nonzero(route_idx == r)[0]
        lo, hi = offsets[r], offsets[r + 1]
        c = cum[lo:hi]
        p = xy[lo:hi]
        # earlier segment wins at interior vertices
        k = np.searchsorted(c, s[sel], side="left") - 1
        k = np.clip(k, 0, hi - lo - 2)
        seg = p[k + 1] - p[k]
        seg_len = c[k + 1] - c[k]
        t = (s[sel] - c[k]) / seg_len
        out[sel, 0] = p[k, 0] + t * seg[:, 0]
        out[sel, 1] = p[k, 1] + t * seg[:, 1]
        out[sel, 2] = np.arctan2(seg[:, 1], seg[:, 0])
    return out


def close_pairs_numpy(xy, radius):
    """All (i, j), i < j, whose Euclidean distance is below ``radius``."""
    n = len(xy)
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    diff = xy[:, None, :] - xy[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    i, j = np.nonzero(np.triu(d2 < radius * radius, k=1))
    return np.stack([i, j], axis=1).astype(np.int64)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def scatter_add_rows_numba(values, index, n_rows):
        out = np.zeros((n_rows, values.shape[1]), dtype=np.float64)
        for e in range(values.shape[0]):
            r = index[e]
            for c in range(values.shape[1]):
                out[r, c] += values[e, c]
        return out

    @njit(cache=True)
    def route_poses_numba(xy, cum, offsets, route_idx, s):
        n = s.shape[0]
        out = np.empty((n, 3), dtype=np.float64)
        for v in range(n):
            r = route_idx[v]
            lo = offsets[r]
            hi = offsets[r + 1]
            k = np.searchsorted(cum[lo:hi], s[v]) - 1
            if k < 0:
                k = 0
            if k > hi - lo - 2:
                k = hi - lo - 2
            a = lo + k
            dx = xy[a + 1, 0] - xy[a, 0]
            dy = xy[a + 1, 1] - xy[a, 1]
            t = (s[v] - cum[a]) / (cum[a + 1] - cum[a])
            out[v, 0] = xy[a, 0] + t * dx
            out[v, 1] = xy[a, 1] + t * dy
            out[v, 2] = np.arctan2(dy, dx)
        return out

    @njit(cache=True)
    def close_pairs_numba(xy, radius):
        n = xy.shape[0]
        r2 = radius * radius
        buf = np.empty((max(n * (n - 1) // 2, 1), 2), dtype=np.int64)
        m = 0
        for i in range(n):
            for j in range(i + 1, n):
                dx = xy[i, 0] - xy[j, 0]
                dy = xy[i, 1] - xy[j, 1]
                if dx * dx + dy * dy < r2:
                    buf[m, 0] = i
                    buf[m, 1] = j
                    m += 1
        return buf[:m].copy()

else:  # pragma: no cover
    scatter_add_rows_numba = scatter_add_rows_numpy
    route_poses_numba = route_poses_numpy
    close_pairs_numba = close_pairs_numpy


if USE_NUMBA:
    scatter_add_rows = scatter_add_rows_numba
    route_poses = route_poses_numba
    close_pairs = close_pairs_numba
else:
    scatter_add_rows = scatter_add_rows_numpy
    route_poses = route_poses_numpy
    close_pairs = close_pairs_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
