"""Hot loops of the Monte Carlo engine.

Each kernel has two implementations with identical semantics:

* ``*_nb`` - a scalar loop compiled by numba (early exit per path);
* ``*_np`` - vectorised numpy over the whole batch.

Both accumulate in the same order (left-to-right running sums), so they
produce identical booleans.  :func:`scan` picks one according to
``MARTBOUNDS_DISABLE_NUMBA`` unless ``backend`` is given explicitly.
"""

import numpy as np

from ._accel import default_backend, njit
from .errors import ConfigurationError

# Budget clauses compare running sums against thresholds; the relative slack
# absorbs summation round-off when a deterministic sum equals its budget.
BUDGET_RTOL = 1e-12

EXISTS, MAX_ENDPOINT, SELF_NORMALIZED = 0, 1, 2


@njit
def _exists_nb(xi, incs, thr, x, sign):
    nrow, n = xi.shape
    k_clauses = incs.shape[0]
    out = np.zeros(nrow, dtype=np.bool_)
    acc = np.empty(k_clauses)
    for r in range(nrow):
        s = 0.0
        for j in range(k_clauses):
            acc[j] = 0.0
        for k in range(n):
            s += xi[r, k]
            dead = False
            for j in range(k_clauses):
                acc[j] += incs[j, r, k]
                if acc[j] > thr[j]:
                    dead = True
            if dead:
                # increments are non-negative: a violated budget stays violated
                break
            if sign * s >= x:
                out[r] = True
                break
    return out


def _exists_np(xi, incs, thr, x, sign):
    s = np.cumsum(xi, axis=1)
    ok = sign * s >= x
    for j in range(incs.shape[0]):
        within = np.cumsum(incs[j], axis=1) <= thr[j]
        # once a budget is exceeded it stays exceeded (non-negative increments)
        ok &= np.logical_and.accumulate(within, axis=1)
    return ok.any(axis=1)


@njit
def _max_endpoint_nb(xi, incs, thr, x, sign):
    nrow, n = xi.shape
    k_clauses = incs.shape[0]
    out = np.zeros(nrow, dtype=np.bool_)
    for r in range(nrow):
        feasible = True
        for j in range(k_clauses):
            tot = 0.0
            for k in range(n):
                tot += incs[j, r, k]
            if tot > thr[j]:
                feasible = False
                break
        if not feasible:
            continue
        s = 0.0
        for k in range(n):
            s += xi[r, k]
            if sign * s >= x:
                out[r] = True
                break
    return out


def _max_endpoint_np(xi, incs, thr, x, sign):
    s = np.cumsum(xi, axis=1)
    ok = (sign * s >= x).any(axis=1)
    for j in range(incs.shape[0]):
        ok &= np.cumsum(incs[j], axis=1)[:, -1] <= thr[j]
    return ok


@njit
def _self_normalized_nb(xi, incs, thr, x, sign):
    nrow, n = xi.shape
    out = np.zeros(nrow, dtype=np.bool_)
    for r in range(nrow):
        q = 0.0
        for k in range(n):
            q += xi[r, k] * xi[r, k]
        root = np.sqrt(q)
        s = 0.0
        for k in range(n):
            s += xi[r, k]
            # 0/0 = 0 when the path is identically zero
            val = sign * s / root if root > 0.0 else 0.0
            if val >= x:
                out[r] = True
                break
    return out


def _self_normalized_np(xi, incs, thr, x, sign):
    s = np.cumsum(xi, axis=1)
    root = np.sqrt(np.cumsum(xi * xi, axis=1)[:, -1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(root > 0, sign * s / root, 0.0)
    return (ratio >= x).any(axis=1)


_KERNELS = {
    "numba": (_exists_nb, _max_endpoint_nb, _self_normalized_nb),
    "numpy": (_exists_np, _max_endpoint_np, _self_normalized_np),
}


def _backend(backend):
    backend = backend or default_backend()
    if backend not in _KERNELS:
        raise ConfigurationError(f"unknown backend {backend!r}; known: {sorted(_KERNELS)}")
    return backend


def scan(kind, xi, incs, thresholds, x, sign=1.0, backend=None):
    """Evaluate a tail event on every row of ``xi``.

    ``incs`` has shape ``(K, B, n)`` (budget increments, non-negative) and
    ``thresholds`` shape ``(K,)``.  Returns a boolean array of length ``B``.
    """
    backend = _backend(backend)
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    incs = np.ascontiguousarray(incs, dtype=np.float64)
    thr = np.asarray(thresholds, dtype=np.float64) * (1 + BUDGET_RTOL)
    return _KERNELS[backend][kind](xi, incs, thr, float(x), float(sign))


@njit
def _ar1_nb(theta, x0, eps):
    nrow, n = eps.shape
    out = np.empty((nrow, n + 1))
    for r in range(nrow):
        out[r, 0] = x0
        for k in range(n):
            out[r, k + 1] = theta * out[r, k] + eps[r, k]
    return out


def _ar1_np(theta, x0, eps):
    nrow, n = eps.shape
    out = np.empty((nrow, n + 1))
    out[:, 0] = x0
    for k in range(n):
        out[:, k + 1] = theta * out[:, k] + eps[:, k]
    return out


def ar1_paths(theta, x0, eps, backend=None):
    """``X_k = theta X_{k-1} + eps_k`` row-wise; returns ``X_0..X_n``."""
    backend = _backend(backend)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    func = _ar1_nb if backend == "numba" else _ar1_np
    return func(float(theta), float(x0), eps)
