"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import from ``DUET_NUMBA`` (``1`` by default,
``0`` forces numpy) and can be switched at runtime with :func:`set_backend`.
Both paths compute the same quantities; tests run them against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    _HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # prefer layers that never need a recent TBB runtime
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

__all__ = [
    "backend",
    "set_backend",
    "linear_assignment",
    "cross_distances",
    "cross_distances_backward",
    "integrate_root",
    "sq_dist_matrix",
    "set_threads",
]

_backend = "numba" if (_HAVE_NUMBA and os.environ.get("DUET_NUMBA", "1") != "0") else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


def set_threads(n: int) -> None:
    if _HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# --------------------------------------------------------------------------
# linear assignment (shortest augmenting path with row/column potentials)
# --------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _assign_nb(cost):
        n, m = cost.shape
        inf = np.inf
        u = np.zeros(n + 1)
        v = np.zeros(m + 1)
        p = np.zeros(m + 1, dtype=np.int64)
        way = np.zeros(m + 1, dtype=np.int64)
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            minv = np.full(m + 1, inf)
            used = np.zeros(m + 1, dtype=np.bool_)
            while True:
                used[j0] = True
                i0 = p[j0]
                delta = inf
                j1 = 0
                for j in range(1, m + 1):
                    if not used[j]:
                        cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(m + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if p[j0] == 0:
                    break
            while True:
                j1 = way[j0]
                p[j0] = p[j1]
                j0 = j1
                if j0 == 0:
                    break
        out = np.full(n, -1, dtype=np.int64)
        for j in range(1, m + 1):
            if p[j] != 0:
                out[p[j] - 1] = j - 1
        return out


def _assign_np(cost):
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    padded = np.zeros((n + 1, m + 1))
    padded[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.full(n, -1, dtype=np.int64)
    cols = np.nonzero(p[1:])[0]
    out[p[cols + 1] - 1] = cols
    return out


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment of rows to columns.

    Returns ``col[i]``, the column matched to row ``i``. Requires
    ``rows <= cols``.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError(f"cost must be 2-D with rows <= cols, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    if cost.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if _backend == "numba":
        return _assign_nb(cost)
    return _assign_np(cost)


# --------------------------------------------------------------------------
# smoothed cross-person joint distances
# --------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _cross_nb(pa, pb, eps):
        n, j_count, _ = pa.shape
        k_count = pb.shape[1]
        out = np.empty((n, j_count, k_count))
        for s in prange(n):
            for j in range(j_count):
                for k in range(k_count):
                    dx = pa[s, j, 0] - pb[s, k, 0]
                    dy = pa[s, j, 1] - pb[s, k, 1]
                    dz = pa[s, j, 2] - pb[s, k, 2]
                    out[s, j, k] = np.sqrt(dx * dx + dy * dy + dz * dz + eps)
        return out

    @njit(cache=True, parallel=True)
    def _cross_bwd_nb(pa, pb, dist, g):
        n, j_count, _ = pa.shape
        k_count = pb.shape[1]
        ga = np.zeros(pa.shape)
        gb = np.zeros(pb.shape)
        for s in prange(n):
            for j in range(j_count):
                for k in range(k_count):
                    w = g[s, j, k] / dist[s, j, k]
                    for c in range(3):
                        d = (pa[s, j, c] - pb[s, k, c]) * w
                        ga[s, j, c] += d
                        gb[s, k, c] -= d
        return ga, gb


def cross_distances(pa: np.ndarray, pb: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """``sqrt(|pa_j - pb_k|^2 + eps)`` for every joint pair; shapes ``(..., J, 3)``."""
    lead = pa.shape[:-2]
    a = np.ascontiguousarray(pa, dtype=np.float64).reshape(-1, pa.shape[-2], 3)
    b = np.ascontiguousarray(pb, dtype=np.float64).reshape(-1, pb.shape[-2], 3)
    if _backend == "numba":
        out = _cross_nb(a, b, float(eps))
    else:
        diff = a[:, :, None, :] - b[:, None, :, :]
        out = np.sqrt(np.einsum("njkc,njkc->njk", diff, diff) + eps)
    return out.reshape(lead + out.shape[1:])


def cross_distances_backward(pa, pb, dist, g):
    """Vector-Jacobian product of :func:`cross_distances` w.r.t. both point sets."""
    lead = pa.shape[:-2]
    a = np.ascontiguousarray(pa, dtype=np.float64).reshape(-1, pa.shape[-2], 3)
    b = np.ascontiguousarray(pb, dtype=np.float64).reshape(-1, pb.shape[-2], 3)
    d = np.ascontiguousarray(dist).reshape(a.shape[0], a.shape[1], b.shape[1])
    gg = np.ascontiguousarray(g, dtype=np.float64).reshape(d.shape)
    if _backend == "numba":
        ga, gb = _cross_bwd_nb(a, b, d, gg)
    else:
        w = gg / d
        diff = a[:, :, None, :] - b[:, None, :, :]
        ga = np.einsum("njk,njkc->njc", w, diff)
        gb = -np.einsum("njk,njkc->nkc", w, diff)
    return ga.reshape(lead + pa.shape[-2:]), gb.reshape(lead + pb.shape[-2:])


# --------------------------------------------------------------------------
# root trajectory integration (yaw about +y, translation in the x/z plane)
# --------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _integrate_nb(lin, yaw_vel):
        f = lin.shape[0]
        yaw = np.zeros(f)
        trans = np.zeros((f, 2))
        for i in range(1, f):
            th = yaw[i - 1]
            c = np.cos(th)
            s = np.sin(th)
            vx = lin[i - 1, 0]
            vz = lin[i - 1, 1]
            yaw[i] = th + yaw_vel[i - 1]
            trans[i, 0] = trans[i - 1, 0] + (c * vx + s * vz)
            trans[i, 1] = trans[i - 1, 1] + (-s * vx + c * vz)
        return yaw, trans


def integrate_root(root_linear_vel: np.ndarray, root_yaw_vel: np.ndarray):
    """Cumulative heading and ground-plane offset per frame, both zero at frame 0.

    Velocities are expressed in the root's current heading frame.
    """
    lin = np.ascontiguousarray(root_linear_vel, dtype=np.float64)
    yv = np.ascontiguousarray(root_yaw_vel, dtype=np.float64).reshape(-1)
    if _backend == "numba":
        return _integrate_nb(lin, yv)
    f = lin.shape[0]
    yaw = np.zeros(f)
    trans = np.zeros((f, 2))
    if f > 1:
        yaw[1:] = np.cumsum(yv[:-1])
        c, s = np.cos(yaw[:-1]), np.sin(yaw[:-1])
        step = np.stack([c * lin[:-1, 0] + s * lin[:-1, 1], -s * lin[:-1, 0] + c * lin[:-1, 1]], axis=-1)
        trans[1:] = np.cumsum(step, axis=0)
    return yaw, trans


# --------------------------------------------------------------------------
# squared distance matrix between two embedding sets
# --------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _sqdist_nb(x, y):
        n, d = x.shape
        m = y.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = x[i, k] - y[j, k]
                    acc += t * t
                out[i, j] = acc
        return out


def sq_dist_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if _backend == "numba":
        return _sqdist_nb(x, y)
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
