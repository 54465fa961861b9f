"""Closed-form exponential tail bounds for supermartingales.

All bounds are computed in log-space and returned as :class:`BoundResult`.
The convention for the scale arguments follows the usual notation: ``v`` is a
standard-deviation-like scale whose square bounds the relevant variation
(``[S]_k``, ``<S>_k`` or a proxy sum), ``epsilon`` is a Bernstein / range
scale, ``w`` a third-moment or proxy budget.

Each family also exposes its Chernoff exponent as a function of ``lambda``
(``*_exponent``).  These are written with numpy ufuncs only, so they accept
``np.longdouble`` arguments; :func:`optimize_lambda` uses that to cross-check
the closed-form optimal rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigurationError,
    ConsistencyError,
    DomainError,
    EvaluationError,
    OptimizationError,
)

__all__ = [
    "BoundQuery",
    "BoundResult",
    "ComparisonReport",
    "FAMILIES",
    "Rate",
    "bennett_b1",
    "bennett_refined_b1n",
    "c_squared",
    "compare_to_pinelis",
    "evaluate",
    "freedman_b2",
    "fuk_nagaev_bounds",
    "generic_bound",
    "improvement_factor",
    "lambda_bar_bernstein",
    "log_improvement_factor",
    "lower_bounded_bound",
    "optimize_lambda",
    "psi",
    "subgaussian_bound",
    "third_moment_bound",
    "weighted_alpha_bound",
]


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundResult:
    """A tail-probability bound.

    ``log_value`` is the exponent actually used for ``value``; when the raw
    formula exceeds 1 (round-off near ``x = 0``, or the factor 2 of a
    two-sided bound) both are clipped and ``clipped`` is set, and the
    unclipped exponent is kept in ``raw_log_value``.
    """

    value: float
    log_value: float
    lam: float
    family: str
    raw_log_value: float
    clipped: bool = False
    flag: Optional[str] = None
    params: dict = field(default_factory=dict, compare=False)

    def as_dict(self):
        return {
            "family": self.family,
            "value": self.value,
            "log_value": self.log_value,
            "lambda": self.lam,
            "raw_log_value": self.raw_log_value,
            "clipped": self.clipped,
            "flag": self.flag,
            "params": dict(self.params),
        }


def _result(family, log_value, lam, params, flag=None):
    log_value = float(log_value)
    raw = log_value
    clipped = False
    if log_value > 0.0:
        log_value = 0.0
        clipped = True
    return BoundResult(
        value=math.exp(log_value),
        log_value=log_value,
        lam=float(lam),
        family=family,
        raw_log_value=raw,
        clipped=clipped,
        flag=flag,
        params=dict(params),
    )


def _trivial(family, params):
    # x = 0: the exponent vanishes identically, lambda = 0 is optimal.
    return _result(family, 0.0, 0.0, params, flag="zero-deviation")


class Rate(float):
    """A float carrying a ``boundary`` flag (set when x = 0)."""

    boundary: bool

    def __new__(cls, value, boundary=False):
        obj = super().__new__(cls, value)
        obj.boundary = boundary
        return obj


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(name, f"must be finite, got {value!r}")
    return value


def _nonneg(name, value):
    value = _finite(name, value)
    if value < 0:
        raise DomainError(name, f"must be >= 0, got {value!r}")
    return value


def _positive(name, value):
    value = _finite(name, value)
    if value <= 0:
        raise DomainError(name, f"must be > 0, got {value!r}")
    return value


def _steps(n):
    if isinstance(n, bool) or int(n) != n:
        raise DomainError("n", f"must be an integer, got {n!r}")
    n = int(n)
    if n < 1:
        raise DomainError("n", f"must be >= 1, got {n!r}")
    return n


# ---------------------------------------------------------------------------
# Numeric primitives
# ---------------------------------------------------------------------------


def psi(t):
    """``t - log(1 + t)``, accurate for small ``t``."""
    t = _nonneg("t", t)
    return _psi(t)


def _psi(t):
    if t < 1e-4:
        # Alternating series; 6 terms leave an error below t**7 / 7.
        return t * t * (0.5 - t * (1 / 3 - t * (0.25 - t * (0.2 - t * (1 / 6 - t / 7)))))
    return t - math.log1p(t)


def _log1p_p_coshm1(p, z):
    """``log(1 + p * (cosh(z) - 1))`` for ``0 <= p <= 1``, ``z >= 0``.

    Works on numpy scalars of any float width; never overflows.
    """
    if z < 30:
        s = np.sinh(z / 2)
        return np.log1p(2 * p * s * s)
    log_one_minus_p = np.log1p(-p) if p < 1 else -np.inf
    return np.logaddexp(log_one_minus_p, np.log(p) + z - np.log(2) + np.log1p(np.exp(-2 * z)))


# ---------------------------------------------------------------------------
# Chernoff exponents as functions of lambda
# ---------------------------------------------------------------------------


def bernstein_exponent(lam, x, epsilon, v):
    """``-lam x + lam^2 v^2 / (2 (1 - lam eps))`` on ``0 <= lam < 1/eps``."""
    return -lam * x + lam * lam * v * v / (2 * (1 - lam * epsilon))


def third_moment_exponent(lam, x, v, w):
    return -lam * x + lam * lam * v * v / 2 + lam ** 3 * w / 3


def lower_bounded_exponent(lam, x, v):
    """``-lam x - (lam + log(1 - lam)) v^2`` on ``0 <= lam < 1``."""
    return -lam * x - (lam + np.log1p(-lam)) * v * v


def fuk_nagaev_loose_exponent(lam, x, y, v):
    s = np.sinh(lam * y / 2)
    return -lam * x + (v * v) / (y * y) * 2 * s * s


def fuk_nagaev_tight_exponent(lam, x, y, v, n):
    p = v * v / (n * y * y)
    return -lam * x + n * _log1p_p_coshm1(p, lam * y)


def subgaussian_exponent(lam, x, v):
    return -lam * x + lam * lam * v * v / 2


# ---------------------------------------------------------------------------
# Bernstein / Bennett / Freedman family
# ---------------------------------------------------------------------------


def _b2_log(x, epsilon, v):
    return -(x * x) / (2 * (v * v + x * epsilon))


def _b1_log(x, epsilon, v):
    v2 = v * v
    return -(x * x) / (v2 * (1 + math.sqrt(1 + 2 * x * epsilon / v2)) + x * epsilon)


def freedman_b2(x, epsilon, v):
    """``exp{-x^2 / (2 (v^2 + x eps))}``.

    ``v = 0`` is accepted (the formula stays finite for ``x eps > 0``).
    ``lam`` is ``x / (v^2 + x eps)``, the rate at which the Bernstein
    exponent equals this closed form exactly.
    """
    x = _nonneg("x", x)
    epsilon = _positive("epsilon", epsilon)
    v = _nonneg("v", v)
    params = {"x": x, "epsilon": epsilon, "v": v}
    if x == 0:
        return _trivial("freedman-b2", params)
    lam = x / (v * v + x * epsilon)
    return _result("freedman-b2", _b2_log(x, epsilon, v), lam, params)


def lambda_bar_bernstein(x, epsilon, v):
    """Optimal rate of the Bernstein exponent, strictly inside ``(0, 1/eps)``."""
    x = _nonneg("x", x)
    epsilon = _positive("epsilon", epsilon)
    v = _positive("v", v)
    if x == 0:
        return Rate(0.0, boundary=True)
    return Rate(_lambda_bar(x, epsilon, v))


def _lambda_bar(x, epsilon, v):
    v2 = v * v
    t = 2 * x * epsilon / v2
    return (2 * x / v2) / (t + 1 + math.sqrt(1 + t))


def bennett_b1(x, epsilon, v, *, limit=False):
    """``exp{-x^2 / (v^2 (1 + sqrt(1 + 2 x eps / v^2)) + x eps)}``.

    With ``limit=True`` a zero ``v`` is mapped to the ``v -> 0`` limit
    ``exp{-x / eps}`` (flagged); otherwise ``v = 0`` is a domain error.
    """
    x = _nonneg("x", x)
    epsilon = _positive("epsilon", epsilon)
    v = _nonneg("v", v)
    params = {"x": x, "epsilon": epsilon, "v": v}
    if v == 0:
        if not limit:
            raise DomainError("v", "must be > 0 (pass limit=True for the v -> 0 limit)")
        if x == 0:
            return _trivial("bennett-b1", params)
        return _result("bennett-b1", -x / epsilon, 1 / epsilon, params, flag="limit")
    if x == 0:
        return _trivial("bennett-b1", params)
    return _result("bennett-b1", _b1_log(x, epsilon, v), _lambda_bar(x, epsilon, v), params)


def _b1n_parts(x, epsilon, v, n):
    """Return ``(lambda_bar, q)`` with ``q = lam^2 v^2 / (2 (1 - lam eps))``."""
    v2 = v * v
    s = math.sqrt(1 + 2 * x * epsilon / v2)
    lam = 2 * x / (v2 * s * (s + 1))
    # 1 - lam * eps == 1 / s exactly; avoids cancellation when x eps >> v^2.
    q = lam * lam * v2 * s / 2
    return lam, q


def bennett_refined_b1n(x, epsilon, v, n):
    """``exp{-lam x + n log(1 + lam^2 v^2 / (2 n (1 - lam eps)))}`` at ``lam_bar``."""
    x = _nonneg("x", x)
    epsilon = _positive("epsilon", epsilon)
    v = _positive("v", v)
    n = _steps(n)
    params = {"x": x, "epsilon": epsilon, "v": v, "n": n}
    if x == 0:
        return _trivial("bennett-refined-b1n", params)
    lam, q = _b1n_parts(x, epsilon, v, n)
    if not lam * epsilon < 1:
        raise DomainError("epsilon", "lambda_bar * epsilon must be < 1")
    return _result("bennett-refined-b1n", -lam * x + n * math.log1p(q / n), lam, params)


def log_improvement_factor(x, epsilon, v, n):
    """``-n psi(q / n)``, the log of :func:`improvement_factor` (never underflows)."""
    x = _nonneg("x", x)
    epsilon = _positive("epsilon", epsilon)
    v = _positive("v", v)
    n = _steps(n)
    if x == 0:
        return 0.0
    _, q = _b1n_parts(x, epsilon, v, n)
    return -n * _psi(q / n)


def improvement_factor(x, epsilon, v, n):
    """The factor ``exp{-n psi(q / n)}`` with ``B1n = B1 * factor``."""
    return math.exp(log_improvement_factor(x, epsilon, v, n))


def per_step_improvement(x, epsilon, sigma1):
    """Per-step rate ``c`` in ``B1n(n x, eps, sqrt(n) sigma1) = B1(...) exp(-n c)``."""
    x = _positive("x", x)
    epsilon = _positive("epsilon", epsilon)
    sigma1 = _positive("sigma1", sigma1)
    _, q = _b1n_parts(x, epsilon, sigma1, 1)
    return _psi(q)


# ---------------------------------------------------------------------------
# Third moments, bounded-below differences
# ---------------------------------------------------------------------------


def third_moment_bound(x, v, w):
    """Return ``(raw, b1, b2)`` for the third-moment Bernstein bound.

    ``raw`` is the Chernoff bound ``exp{-lam x + lam^2 v^2/2 + lam^3 w/3}`` at
    its exact minimiser ``lam = 2x / (v^2 + sqrt(v^4 + 4 w x))``; ``b1`` and
    ``b2`` are Bennett / Freedman at ``eps = w / (3 v^2)``.

    Notes
    -----
    ``raw <= b1 <= b2`` does not hold in general at this scale: ``raw``
    exceeds ``b1`` at ``(x, v, w) = (1, 1, 1)`` and on a large share of
    random tuples, while ``eps = 2 w / (3 v^2)`` shows no violation on the
    same tuples.  ``b1`` and ``b2`` are therefore reported but not paired
    with any process for Monte Carlo verification.
    """
    x = _nonneg("x", x)
    v = _positive("v", v)
    w = _nonneg("w", w)
    eps = w / (3 * v * v)
    params = {"x": x, "v": v, "w": w}
    bparams = {"x": x, "epsilon": eps, "v": v, "w": w}
    if x == 0:
        return (
            _trivial("third-moment-raw", params),
            _trivial("third-moment-b1", bparams),
            _trivial("third-moment-b2", bparams),
        )
    v2 = v * v
    lam = 2 * x / (v2 + math.sqrt(v2 * v2 + 4 * w * x))
    raw = _result("third-moment-raw", third_moment_exponent(lam, x, v, w), lam, params)
    b1 = _result("third-moment-b1", _b1_log(x, eps, v), _lambda_bar(x, eps, v), bparams)
    b2 = _result("third-moment-b2", _b2_log(x, eps, v), x / (v2 + x * eps), bparams)
    return raw, b1, b2


def lower_bounded_bound(x, v):
    """Return ``(tight, b1, b2)`` for differences bounded below by -1.

    ``tight = (1 + x/v^2)^(v^2) e^(-x)``, evaluated as
    ``exp(v^2 log1p(x/v^2) - x)``.
    """
    x = _nonneg("x", x)
    v = _positive("v", v)
    params = {"x": x, "v": v}
    bparams = {"x": x, "epsilon": 1.0, "v": v}
    if x == 0:
        return (
            _trivial("lower-bounded-tight", params),
            _trivial("lower-bounded-b1", bparams),
            _trivial("lower-bounded-b2", bparams),
        )
    v2 = v * v
    tight = _result("lower-bounded-tight", v2 * math.log1p(x / v2) - x, x / (v2 + x), params)
    b1 = _result("lower-bounded-b1", _b1_log(x, 1.0, v), _lambda_bar(x, 1.0, v), bparams)
    b2 = _result("lower-bounded-b2", _b2_log(x, 1.0, v), x / (v2 + x), bparams)
    return tight, b1, b2


# ---------------------------------------------------------------------------
# Fuk-Nagaev (conditionally symmetric differences)
# ---------------------------------------------------------------------------


def fuk_nagaev_lambdas(x, y, v, n):
    """Closed-form minimisers ``(lam_tight, lam_loose)`` of the two exponents."""
    a = x * y / (v * v)
    r = x / (n * y)
    p = v * v / (n * y * y)
    # 1 + a^2 - 2 x^2/(n v^2) == (a (1-p))^2 + (1-r)(1+r)
    num = a * (1 - p) + math.sqrt((a * (1 - p)) ** 2 + (1 - r) * (1 + r))
    lam_tight = math.log(num / (1 - r)) / y
    lam_loose = math.asinh(a) / y
    return lam_tight, lam_loose


def fuk_nagaev_bounds(x, y, v, n):
    """Return ``(tight, loose)`` exponential parts of the Fuk-Nagaev bound.

    The additive ``P(max xi_i > y)`` term is process specific and is not
    included.  Requires ``v^2 <= n y^2`` and, for the tight form, ``x < n y``.
    """
    x = _positive("x", x)
    y = _positive("y", y)
    v = _positive("v", v)
    n = _steps(n)
    # relative slack absorbs rounding in inputs such as v = sqrt(n y^2)
    if v * v > n * y * y * (1 + 1e-12):
        raise DomainError("v", f"precondition v^2 <= n y^2 violated ({v * v} > {n * y * y})")
    if x >= n * y:
        raise DomainError("x", f"tight form needs x < n y ({x} >= {n * y})")
    params = {"x": x, "y": y, "v": v, "n": n}
    lam_t, lam_l = fuk_nagaev_lambdas(x, y, v, n)
    a = x * y / (v * v)
    # cosh(asinh a) - 1 == a^2 / (1 + sqrt(1 + a^2))
    loose_log = -lam_l * x + (v * v) / (y * y) * (a * a / (1 + math.hypot(1.0, a)))
    tight_log = fuk_nagaev_tight_exponent(lam_t, x, y, v, n)
    return (
        _result("fuk-nagaev-tight", tight_log, lam_t, params),
        _result("fuk-nagaev-loose", loose_log, lam_l, params),
    )


# ---------------------------------------------------------------------------
# Sub-Gaussian family
# ---------------------------------------------------------------------------


def subgaussian_bound(x, v):
    """``exp{-x^2 / (2 v^2)}`` with ``lam = x / v^2``.

    ``v = 0`` and ``x > 0`` gives exactly 0, flagged ``"degenerate"``.
    """
    x = _nonneg("x", x)
    v = _nonneg("v", v)
    params = {"x": x, "v": v}
    if x == 0:
        return _trivial("subgaussian", params)
    if v == 0:
        return BoundResult(0.0, -math.inf, math.inf, "subgaussian", -math.inf, flag="degenerate", params=params)
    return _result("subgaussian", -(x * x) / (2 * v * v), x / (v * v), params)


def weighted_alpha_bound(x, v, alpha, c):
    """``exp{-C(alpha) (x/v)^(alpha/(alpha-1))}``, ``C(alpha) = (c alpha)^(1/(1-alpha)) (1 - 1/alpha)``."""
    x = _nonneg("x", x)
    v = _positive("v", v)
    alpha = _finite("alpha", alpha)
    if not 1 < alpha <= 2:
        raise DomainError("alpha", f"must lie in (1, 2], got {alpha!r}")
    c = _positive("c", c)
    params = {"x": x, "v": v, "alpha": alpha, "c": c}
    if x == 0:
        return _trivial("weighted-alpha", params)
    const = alpha_constant(alpha, c)
    lam = (x / (c * alpha * v ** alpha)) ** (1 / (alpha - 1))
    return _result("weighted-alpha", -const * (x / v) ** (alpha / (alpha - 1)), lam, params)


def alpha_constant(alpha, c):
    return (c * alpha) ** (1 / (1 - alpha)) * (1 - 1 / alpha)


# ---------------------------------------------------------------------------
# Generic two-function bound
# ---------------------------------------------------------------------------


def generic_bound(x, v, w, n, f, g, lam):
    """Evaluate the general bound for a caller-supplied pair ``f``, ``g``.

    Returns ``(refined, loose)``::

        refined = exp{-lam x + g(lam) v^2 + n log(1 + f(lam) w / n)}
        loose   = exp{-lam x + g(lam) v^2 + f(lam) w}
    """
    x = _nonneg("x", x)
    v = _nonneg("v", v)
    w = _nonneg("w", w)
    n = _steps(n)
    lam = _positive("lambda", lam)
    fv = float(f(lam))
    gv = float(g(lam))
    for name, val in (("f", fv), ("g", gv)):
        if not math.isfinite(val) or val < 0:
            raise EvaluationError(f"{name}({lam!r}) = {val!r}; must be finite and >= 0")
    params = {"x": x, "v": v, "w": w, "n": n}
    base = -lam * x + gv * v * v
    return (
        _result("generic-refined", base + n * math.log1p(fv * w / n), lam, params),
        _result("generic-loose", base + fv * w, lam, params),
    )


# ---------------------------------------------------------------------------
# Variance proxy and the comparison with the normal-tail bound
# ---------------------------------------------------------------------------


def c_squared(u, sigma_sq):
    """Variance proxy for a difference bounded above by ``u``.

    ``sigma_sq`` if ``sigma_sq >= u^2``, else ``(u + sigma_sq / u)^2 / 4``.
    Accepts scalars or arrays (broadcast).
    """
    u_arr = np.asarray(u, dtype=float)
    s_arr = np.asarray(sigma_sq, dtype=float)
    if np.any(~(u_arr > 0)):
        raise DomainError("u", "must be > 0")
    if np.any(~(s_arr >= 0)):
        raise DomainError("sigma_sq", "must be >= 0")
    out = np.where(s_arr >= u_arr * u_arr, s_arr, 0.25 * (u_arr + s_arr / u_arr) ** 2)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ComparisonReport:
    v_hat_sq: float
    sum_c_sq: float
    delta: float
    x: float

    def decay_factor(self, x=None):
        """``(1 + x / v_hat) exp(-x^2 delta / 2)``."""
        x = self.x if x is None else _nonneg("x", x)
        return (1 + x / math.sqrt(self.v_hat_sq)) * math.exp(-x * x * self.delta / 2)

    @property
    def factor(self):
        return self.decay_factor(self.x)


def compare_to_pinelis(per_step_sup, realized_sum, x):
    """Exponential gain of the proxy-sum bound over the worst-case proxy.

    ``per_step_sup`` are the per-step essential suprema of the proxy,
    ``realized_sum`` the essential supremum of the proxy sum.
    """
    sups = np.asarray(per_step_sup, dtype=float)
    if sups.ndim != 1 or sups.size == 0 or np.any(~(sups >= 0)):
        raise DomainError("per_step_sup", "must be a non-empty list of non-negative numbers")
    realized_sum = _positive("realized_sum", realized_sum)
    x = _nonneg("x", x)
    v_hat_sq = math.fsum(sups.tolist())
    if realized_sum > v_hat_sq * (1 + 1e-12):
        raise ConsistencyError(f"realized_sum {realized_sum!r} exceeds v_hat^2 {v_hat_sq!r}")
    delta = max(v_hat_sq - realized_sum, 0.0) / (v_hat_sq * realized_sum)
    return ComparisonReport(v_hat_sq=v_hat_sq, sum_c_sq=realized_sum, delta=delta, x=x)


# ---------------------------------------------------------------------------
# 1-D Chernoff exponent minimisation
# ---------------------------------------------------------------------------

_INV_PHI = (math.sqrt(5) - 1) / 2
_MARGIN = 1e-12
_RTOL = 1e-10


def optimize_lambda(exponent: Callable, domain, *, rtol=_RTOL, max_iter=500):
    """Minimise a unimodal exponent over an open interval by golden sections.

    ``domain = (lo, hi)``; ``hi`` may be ``math.inf``, in which case the
    bracket is grown by doubling until the exponent stops decreasing
    (valid for convex exponents).  The search runs on ``np.longdouble``
    abscissae so that exponents written with numpy ufuncs are evaluated in
    extended precision; near a minimum the resolution in ``lam`` is set by
    the square root of the evaluation precision.

    Returns ``(lambda_star, value)`` as floats.  Unimodality is a contract
    and is not checked.
    """
    lo, hi = domain
    lo = np.longdouble(lo)
    ld = np.longdouble

    def f(lam):
        val = exponent(lam)
        if not np.isfinite(val):
            raise OptimizationError(float(lam))
        return ld(val)

    if math.isinf(hi):
        step = max(abs(lo), ld(1))
        b = lo + step
        fb = f(b)
        for _ in range(2000):
            c = lo + 2 * (b - lo)
            fc = f(c)
            if fc >= fb:
                hi = c
                break
            b, fb = c, fc
        else:
            raise OptimizationError(float(b), "bracket expansion did not terminate")
        a, b = lo, ld(hi)
    else:
        hi = ld(hi)
        width = hi - lo
        if not width > 0:
            raise OptimizationError(float(lo), "empty domain")
        a = lo + _MARGIN * width
        b = hi - _MARGIN * width

    a0, b0 = a, b
    fa0, fb0 = f(a0), f(b0)
    c = b - ld(_INV_PHI) * (b - a)
    d = a + ld(_INV_PHI) * (b - a)
    fc, fd = f(c), f(d)
    tiny = ld(np.finfo(np.longdouble).tiny)
    for _ in range(max_iter):
        if b - a <= rtol * max(abs(a), abs(b), tiny):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ld(_INV_PHI) * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + ld(_INV_PHI) * (b - a)
            fd = f(d)
    lam, val = (c, fc) if fc <= fd else (d, fd)
    if fa0 < val:
        lam, val = a0, fa0
    if fb0 < val:
        lam, val = b0, fb0
    else:
        lam, val = _polish(f, lam, val, a0, b0)
    return float(lam), float(val)


def _polish(f, lam, val, lo, hi):
    # Comparisons alone resolve a flat minimum only to sqrt(ulp / f''); a few
    # Newton steps on Richardson-extrapolated central differences recover
    # the minimiser to near the exponent's precision.  Steps that leave the
    # domain or raise the exponent beyond rounding are rejected, so kinked
    # exponents keep the golden-section answer.
    ld = np.longdouble
    noise = 64 * np.finfo(np.longdouble).eps * max(abs(val), ld(1))
    for _ in range(4):
        h = ld(1e-4) * max(abs(lam), ld(1e-2))
        if lam - 2 * h <= lo or lam + 2 * h >= hi:
            break
        f0, fp, fm = val, f(lam + h), f(lam - h)
        fp2, fm2 = f(lam + 2 * h), f(lam - 2 * h)
        slope = (8 * (fp - fm) - (fp2 - fm2)) / (12 * h)
        curv = (fp - 2 * f0 + fm) / (h * h)
        if not curv > 0:
            break
        step = -slope / curv
        if not abs(step) <= h:
            break
        cand = lam + step
        fc = f(cand)
        if fc > val + noise:
            break
        lam, val = cand, min(fc, val)
        if abs(step) <= 4 * np.finfo(np.longdouble).eps * abs(lam):
            break
    return lam, val


# ---------------------------------------------------------------------------
# Query bundle and family registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundQuery:
    """Parameter bundle; a family reads exactly its declared fields."""

    x: Optional[float] = None
    v: Optional[float] = None
    epsilon: Optional[float] = None
    w: Optional[float] = None
    n: Optional[int] = None
    y: Optional[float] = None
    alpha: Optional[float] = None
    c: Optional[float] = None

    def present(self):
        return {f.name for f in fields(self) if getattr(self, f.name) is not None}


def _pick(i):
    return lambda results: results[i]


FAMILIES = {
    "freedman-b2": (("x", "epsilon", "v"), freedman_b2, None),
    "bennett-b1": (("x", "epsilon", "v"), bennett_b1, None),
    "bennett-refined-b1n": (("x", "epsilon", "v", "n"), bennett_refined_b1n, None),
    "third-moment-raw": (("x", "v", "w"), third_moment_bound, _pick(0)),
    "third-moment-b1": (("x", "v", "w"), third_moment_bound, _pick(1)),
    "third-moment-b2": (("x", "v", "w"), third_moment_bound, _pick(2)),
    "lower-bounded-tight": (("x", "v"), lower_bounded_bound, _pick(0)),
    "lower-bounded-b1": (("x", "v"), lower_bounded_bound, _pick(1)),
    "lower-bounded-b2": (("x", "v"), lower_bounded_bound, _pick(2)),
    "fuk-nagaev-tight": (("x", "y", "v", "n"), fuk_nagaev_bounds, _pick(0)),
    "fuk-nagaev-loose": (("x", "y", "v", "n"), fuk_nagaev_bounds, _pick(1)),
    "subgaussian": (("x", "v"), subgaussian_bound, None),
    "weighted-alpha": (("x", "v", "alpha", "c"), weighted_alpha_bound, None),
}


def evaluate(family, query: BoundQuery) -> BoundResult:
    """Evaluate ``family`` on ``query``; missing or extra fields are errors."""
    try:
        needed, func, select = FAMILIES[family]
    except KeyError:
        raise ConfigurationError(f"unknown bound family {family!r}; known: {', '.join(FAMILIES)}") from None
    present = query.present()
    missing = [name for name in needed if name not in present]
    if missing:
        raise DomainError(missing[0], f"required by {family}")
    extra = sorted(present - set(needed))
    if extra:
        raise DomainError(extra[0], f"not used by {family}; leave it unset")
    out = func(*(getattr(query, name) for name in needed))
    return select(out) if select else out
