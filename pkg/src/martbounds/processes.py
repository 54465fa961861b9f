"""Simulated (super)martingale difference sequences.

Every process variant samples a batch of paths and returns, next to the
realised differences ``xi``, the *analytic* conditional statistics the tail
theorems are stated in terms of: conditional variance, conditional third
moments and a variance proxy ``V``.  Conditional quantities are computed from
the law, never estimated from the sample.

The proxy ``V_{i-1}`` is the one-sided-bound surrogate
``c_squared(U_{i-1}, E(xi_i^2 | F_{i-1}))`` for variants bounded above by
``U``; for the Galton-Watson generation martingale it is ``M X_{k-1}``
(the proxy of the *negated* differences, which are bounded above by
``m X_{k-1}``).  Variants without an upper bound report ``inf``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import kernels
from .bounds import c_squared, optimize_lambda
from .errors import ConfigurationError, DomainError

CLAUSES = ("sq_var", "cond_var", "neg_third", "abs_third", "proxy")
EVENT_KINDS = ("exists_k", "max_endpoint", "self_normalized")


# ---------------------------------------------------------------------------
# Finite-support laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteLaw:
    """A finite-support law; used for exact (finite-sum) expectations."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise DomainError("probs", "values and probs must be equal-length 1-D sequences")
        if np.any(p < 0) or abs(math.fsum(p.tolist()) - 1) > 1e-12:
            raise DomainError("probs", "must be non-negative and sum to 1")

    @property
    def _v(self):
        return np.asarray(self.values, dtype=float)

    @property
    def _p(self):
        return np.asarray(self.probs, dtype=float)

    def expect(self, func):
        return math.fsum((self._p * func(self._v)).tolist())

    def moment(self, k):
        return self.expect(lambda v: v ** k)

    @property
    def mean(self):
        return self.moment(1)

    def log_mgf(self, lam):
        """``log E exp(lam xi)``; keeps the dtype of ``lam`` (e.g. longdouble)."""
        keep = self._p > 0
        dtype = np.result_type(lam, np.float64)
        logp = np.log(self._p[keep].astype(dtype))
        terms = logp + lam * self._v[keep].astype(dtype)
        top = np.max(terms)
        return top + np.log(np.sum(np.exp(terms - top)))

    def sample(self, rng, shape):
        idx = rng.choice(len(self.values), size=shape, p=self._p)
        return self._v[idx]


# ---------------------------------------------------------------------------
# Noise, design and offspring laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Centered i.i.d. noise.

    kind: ``uniform`` (``scale`` = half-width), ``rademacher`` (``scale``),
    ``normal`` (``scale`` = std), ``two_point`` (``p``, ``a < 0 < b``,
    ``p b + (1-p) a = 0``).
    """

    kind: str
    scale: float = 1.0
    p: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "rademacher", "normal", "two_point"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.kind == "two_point":
            _check_two_point(self.p, self.a, self.b)
        elif not self.scale > 0:
            raise DomainError("scale", "must be > 0")

    @property
    def sigma(self):
        if self.kind == "uniform":
            return self.scale / math.sqrt(3)
        if self.kind == "two_point":
            return math.sqrt(self.p * self.b ** 2 + (1 - self.p) * self.a ** 2)
        return self.scale

    @property
    def upper(self):
        """Essential supremum."""
        if self.kind == "normal":
            return math.inf
        if self.kind == "two_point":
            return self.b
        return self.scale

    @property
    def lower(self):
        if self.kind == "normal":
            return -math.inf
        if self.kind == "two_point":
            return self.a
        return -self.scale

    @property
    def abs_third(self):
        s = self.scale
        if self.kind == "uniform":
            return s ** 3 / 4
        if self.kind == "rademacher":
            return s ** 3
        if self.kind == "normal":
            return 2 * math.sqrt(2 / math.pi) * s ** 3
        return self.p * self.b ** 3 + (1 - self.p) * abs(self.a) ** 3

    @property
    def neg_third(self):
        if self.kind == "two_point":
            return (1 - self.p) * abs(self.a) ** 3
        return self.abs_third / 2

    @property
    def bernstein_eps(self):
        """A scale for which ``|E eps^k| <= k!/2 scale^(k-2) E eps^2`` for all k >= 2."""
        if self.kind == "two_point":
            return max(abs(self.a), self.b)
        # bounded: |E eps^k| <= h^(k-2) E eps^2; normal: (k-1)!! sigma^(k-2) <= k!/2 sigma^(k-2)
        return self.scale

    def mgf_constant(self, alpha=2.0):
        """``c`` with ``E exp(lam eps) <= exp(c |lam|^alpha)``; only alpha = 2."""
        if alpha != 2:
            raise DomainError("alpha", "closed-form constants are available for alpha = 2 only")
        s = self.scale
        if self.kind == "uniform":
            return s * s / 6
        if self.kind in ("rademacher", "normal"):
            return s * s / 2
        return (self.b - self.a) ** 2 / 8

    @property
    def symmetric(self):
        return self.kind != "two_point" or self.a == -self.b

    def sample(self, rng, shape):
        if self.kind == "uniform":
            return rng.uniform(-self.scale, self.scale, shape)
        if self.kind == "rademacher":
            return np.where(rng.random(shape) < 0.5, -self.scale, self.scale)
        if self.kind == "normal":
            return rng.normal(0.0, self.scale, shape)
        return np.where(rng.random(shape) < self.p, self.b, self.a)


@dataclass(frozen=True)
class DesignSpec:
    """Regression design: fixed ``values``, or ``|phi| ~ U[low, high]`` with random sign."""

    kind: str = "uniform_abs"
    values: Optional[tuple] = None
    low: float = 0.5
    high: float = 2.0
    n: Optional[int] = None

    def __post_init__(self):
        if self.kind == "fixed":
            if not self.values:
                raise DomainError("values", "fixed design needs values")
            if math.fsum(float(v) ** 2 for v in self.values) <= 0:
                raise DomainError("values", "design energy sum(phi^2) must be > 0")
        elif self.kind == "uniform_abs":
            if not 0 < self.low <= self.high:
                raise DomainError("low", "need 0 < low <= high")
            if not self.n or self.n < 1:
                raise DomainError("n", "uniform_abs design needs n >= 1")
        else:
            raise ConfigurationError(f"unknown design kind {self.kind!r}")

    @property
    def length(self):
        return len(self.values) if self.kind == "fixed" else self.n

    def sample(self, rng, size):
        if self.kind == "fixed":
            return np.broadcast_to(np.asarray(self.values, dtype=float), (size, self.length))
        mag = rng.uniform(self.low, self.high, (size, self.n))
        return np.where(rng.random((size, self.n)) < 0.5, -mag, mag)


@dataclass(frozen=True)
class OffspringSpec:
    """Offspring law: ``poisson`` (mean ``m``) or ``finite`` (``values``, ``probs``)."""

    kind: str = "poisson"
    m: Optional[float] = None
    values: Optional[tuple] = None
    probs: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "poisson":
            if not (self.m is not None and self.m > 0):
                raise DomainError("m", "poisson offspring needs m > 0")
        elif self.kind == "finite":
            law = DiscreteLaw(tuple(self.values), tuple(self.probs))
            if any(v < 0 or int(v) != v for v in self.values):
                raise DomainError("values", "offspring counts must be non-negative integers")
            del law
        else:
            raise ConfigurationError(f"unknown offspring kind {self.kind!r}")

    @property
    def law(self):
        return DiscreteLaw(tuple(self.values), tuple(self.probs))

    @property
    def mean(self):
        return self.m if self.kind == "poisson" else self.law.mean

    @property
    def var(self):
        if self.kind == "poisson":
            return self.m
        mu = self.mean
        return self.law.expect(lambda v: (v - mu) ** 2)

    def sample_next(self, rng, counts):
        """Next generation sizes given current ``counts`` (integer array)."""
        counts = np.asarray(counts, dtype=np.int64)
        if self.kind == "poisson":
            return rng.poisson(self.m * counts)
        reps = rng.multinomial(counts, self._p_arr())
        return reps @ np.asarray(self.values, dtype=np.int64)

    def _p_arr(self):
        p = np.asarray(self.probs, dtype=float)
        return p / p.sum()


# ---------------------------------------------------------------------------
# Path batches and single-path statistics
# ---------------------------------------------------------------------------


@dataclass
class PathBatch:
    """Differences and per-step conditional statistics of ``B`` paths.

    Per-step arrays broadcast against ``xi`` (shape ``(B, n)``); a leading
    dimension of 1 means the statistic is deterministic.
    """

    xi: np.ndarray
    cond_var: np.ndarray
    neg_third: np.ndarray
    abs_third: np.ndarray
    proxy: np.ndarray

    def increments(self, clause):
        if clause == "sq_var":
            return self.xi * self.xi
        arr = getattr(self, clause)
        return np.broadcast_to(arr, self.xi.shape)

    def __len__(self):
        return self.xi.shape[0]


@dataclass
class PathStats:
    """One trajectory with all tracked functionals (cumulative, k = 1..n)."""

    xi: np.ndarray
    s: np.ndarray
    sq_var: np.ndarray
    cond_var: np.ndarray
    neg_third: np.ndarray
    abs_third: np.ndarray
    v_sum: np.ndarray
    max_s: np.ndarray
    max_diff: float
    _steps: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_batch(cls, batch: PathBatch, row=0):
        steps = {c: np.array(batch.increments(c)[row], dtype=float) for c in CLAUSES}
        xi = np.array(batch.xi[row], dtype=float)
        s = np.cumsum(xi)
        return cls(
            xi=xi,
            s=s,
            sq_var=np.cumsum(steps["sq_var"]),
            cond_var=np.cumsum(steps["cond_var"]),
            neg_third=np.cumsum(steps["neg_third"]),
            abs_third=np.cumsum(steps["abs_third"]),
            v_sum=np.cumsum(steps["proxy"]),
            max_s=np.maximum.accumulate(s),
            max_diff=float(xi.max()),
            _steps=steps,
        )

    def as_batch(self):
        st = self._steps
        return PathBatch(
            xi=self.xi[None, :],
            cond_var=st["cond_var"][None, :],
            neg_third=st["neg_third"][None, :],
            abs_third=st["abs_third"][None, :],
            proxy=st["proxy"][None, :],
        )

    @property
    def n(self):
        return self.xi.size

    def to_csv(self, fh=None):
        """Columns ``k, xi, s, sq_var, cond_var, neg_third, abs_third, v_sum``."""
        out = fh or io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["k", "xi", "s", "sq_var", "cond_var", "neg_third", "abs_third", "v_sum"])
        for k in range(self.n):
            row = [self.xi[k], self.s[k], self.sq_var[k], self.cond_var[k],
                   self.neg_third[k], self.abs_third[k], self.v_sum[k]]
            w.writerow([k + 1] + [format(float(v), ".17g") for v in row])
        return out.getvalue() if fh is None else None


def _proxy(u, s2):
    """Vectorised ``c_squared`` that maps ``u = 0`` (a null step) to 0."""
    u = np.asarray(u, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    safe_u = np.where(u > 0, u, 1.0)
    val = np.where(s2 >= u * u, s2, 0.25 * (u + s2 / safe_u) ** 2)
    return np.where(u > 0, val, np.where(s2 > 0, np.inf, 0.0))


def _weighted_upper(w, noise):
    """Essential supremum of ``w * eps`` given ``w`` (uses ``|lower|`` when ``w < 0``)."""
    return np.where(w >= 0, w * noise.upper, -w * -noise.lower)


def _row(values):
    return np.asarray(values, dtype=float)[None, :]


def _check_two_point(p, a, b):
    if p is None or a is None or b is None:
        raise DomainError("p", "two-point law needs p, a, b")
    if not 0 < p < 1:
        raise DomainError("p", "must lie in (0, 1)")
    if not a < 0 < b:
        raise DomainError("a", "need a < 0 < b")
    if abs(p * b + (1 - p) * a) > 1e-12 * max(abs(a), b):
        raise DomainError("p", f"law is not centered: p b + (1-p) a = {p * b + (1 - p) * a!r}")


def _check_steps(n):
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise DomainError("n", f"must be a positive integer, got {n!r}")


# ---------------------------------------------------------------------------
# Process variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RademacherWeighted:
    """``xi_i = a_i eps_i`` with Rademacher signs."""

    weights: tuple
    kind = "rademacher_weighted"
    symmetric = True
    independent = True
    martingale = True

    def __post_init__(self):
        if len(self.weights) == 0:
            raise DomainError("weights", "must be non-empty")
        if any(not math.isfinite(a) for a in self.weights):
            raise DomainError("weights", "must be finite")

    @property
    def n(self):
        return len(self.weights)

    @property
    def upper(self):
        return float(np.max(np.abs(self.weights)))

    @property
    def lower(self):
        return -self.upper

    @property
    def bernstein_eps(self):
        return self.upper

    def step_law(self, i):
        a = abs(float(self.weights[i]))
        return DiscreteLaw((-a, a), (0.5, 0.5))

    def sample(self, rng, size):
        a = np.asarray(self.weights, dtype=float)
        signs = np.where(rng.random((size, self.n)) < 0.5, -1.0, 1.0)
        abs_a = np.abs(a)
        return PathBatch(
            xi=signs * a,
            cond_var=_row(a * a),
            neg_third=_row(abs_a ** 3 / 2),
            abs_third=_row(abs_a ** 3),
            proxy=_row(_proxy(abs_a, a * a)),
        )


@dataclass(frozen=True)
class ThreePoint:
    """``P(xi = +-y) = v^2 / (2 n y^2)``, ``P(xi = 0) = 1 - v^2 / (n y^2)``."""

    y: float
    v_sq: float
    n: int
    kind = "three_point"
    symmetric = True
    independent = True
    martingale = True

    def __post_init__(self):
        _check_steps(self.n)
        if not self.y > 0:
            raise DomainError("y", "must be > 0")
        if not self.v_sq > 0:
            raise DomainError("v_sq", "must be > 0")
        if self.v_sq > self.n * self.y ** 2:
            raise DomainError("v_sq", "precondition v^2 <= n y^2 violated")

    @property
    def p(self):
        return self.v_sq / (self.n * self.y ** 2)

    @property
    def upper(self):
        return float(self.y)

    @property
    def lower(self):
        return -float(self.y)

    @property
    def bernstein_eps(self):
        return float(self.y)

    def step_law(self, i=0):
        p = self.p
        return DiscreteLaw((-self.y, 0.0, self.y), (p / 2, 1 - p, p / 2))

    def sample(self, rng, size):
        p, y = self.p, self.y
        u = rng.random((size, self.n))
        xi = np.where(u < p / 2, y, np.where(u < p, -y, 0.0))
        step_var = p * y * y
        ones = np.ones(self.n)
        return PathBatch(
            xi=xi,
            cond_var=_row(step_var * ones),
            neg_third=_row(p * y ** 3 / 2 * ones),
            abs_third=_row(p * y ** 3 * ones),
            proxy=_row(_proxy(y * ones, step_var * ones)),
        )


@dataclass(frozen=True)
class SinCosRademacher:
    """``xi_i = eps_i sin(N)/sqrt(n)`` (odd i), ``eps_i cos(N)/sqrt(n)`` (even i).

    ``N ~ U[0, 2 pi)`` is drawn once per path and is ``F_0``-measurable.
    """

    n: int
    kind = "sin_cos_rademacher"
    symmetric = True
    independent = False
    martingale = True

    def __post_init__(self):
        _check_steps(self.n)
        if self.n % 2:
            raise DomainError("n", "must be even")

    @property
    def upper(self):
        return 1 / math.sqrt(self.n)

    @property
    def lower(self):
        return -self.upper

    @property
    def bernstein_eps(self):
        return self.upper

    def per_step_sup(self):
        """Essential suprema of the per-step proxy ``C^2_{i-1}`` (each ``1/n``)."""
        return np.full(self.n, 1.0 / self.n)

    def sample(self, rng, size):
        big_n = rng.uniform(0.0, 2 * math.pi, size)
        odd = (np.arange(1, self.n + 1) % 2 == 1)[None, :]
        amp = np.where(odd, np.sin(big_n)[:, None], np.cos(big_n)[:, None]) / math.sqrt(self.n)
        signs = np.where(rng.random((size, self.n)) < 0.5, -1.0, 1.0)
        u = np.abs(amp)
        var = amp * amp
        return PathBatch(
            xi=signs * amp,
            cond_var=var,
            neg_third=u ** 3 / 2,
            abs_third=u ** 3,
            # U^2 = E(xi^2 | F) here, so the proxy is the conditional variance
            proxy=_proxy(u, var),
        )


@dataclass(frozen=True)
class BoundedBelowExponential:
    """``xi = shift + E`` with ``E ~ Exp(rate)``; needs ``shift + 1/rate <= 0``.

    Equality gives a martingale with ``xi >= shift``; a strict inequality
    gives a supermartingale with constant negative drift.
    """

    shift: float = -1.0
    rate: float = 1.0
    n: int = 50
    kind = "bounded_below_exponential"
    symmetric = False
    independent = True

    def __post_init__(self):
        _check_steps(self.n)
        if not self.rate > 0:
            raise DomainError("rate", "must be > 0")
        if self.drift > 1e-12 * abs(self.shift):
            raise DomainError("shift", "shift + 1/rate must be <= 0 (supermartingale)")

    @property
    def drift(self):
        return self.shift + 1 / self.rate

    @property
    def martingale(self):
        return abs(self.drift) <= 1e-12 * abs(self.shift)

    @property
    def upper(self):
        return math.inf

    @property
    def lower(self):
        return float(self.shift)

    bernstein_eps = None

    def moments(self):
        """Exact ``(E xi^2, E (xi^-)^3, E |xi|^3)``."""
        a, r = -self.shift, self.rate
        second = self.shift ** 2 + 2 * self.shift / r + 2 / r ** 2
        # I_k = int_0^a (a - e)^k r exp(-r e) de,  I_k = a^k - (k / r) I_{k-1}
        i0 = -math.expm1(-r * a)
        i1 = a - i0 / r
        i2 = a * a - 2 * i1 / r
        i3 = a ** 3 - 3 * i2 / r
        pos3 = math.exp(-r * a) * 6 / r ** 3
        return second, i3, i3 + pos3

    def sample(self, rng, size):
        xi = self.shift + rng.exponential(1 / self.rate, (size, self.n))
        second, neg3, abs3 = self.moments()
        ones = np.ones(self.n)
        return PathBatch(
            xi=xi,
            cond_var=_row(second * ones),
            neg_third=_row(neg3 * ones),
            abs_third=_row(abs3 * ones),
            proxy=_row(np.full(self.n, np.inf)),
        )


@dataclass(frozen=True)
class BernsteinTwoPoint:
    """``P(xi = b) = p``, ``P(xi = a) = 1 - p``, centered."""

    p: float
    a: float
    b: float
    n: int
    kind = "bernstein_two_point"
    independent = True
    martingale = True

    def __post_init__(self):
        _check_steps(self.n)
        _check_two_point(self.p, self.a, self.b)

    @property
    def symmetric(self):
        return self.a == -self.b

    @property
    def upper(self):
        return float(self.b)

    @property
    def lower(self):
        return float(self.a)

    @property
    def bernstein_eps(self):
        return max(abs(self.a), self.b)

    def step_law(self, i=0):
        return DiscreteLaw((self.a, self.b), (1 - self.p, self.p))

    def sample(self, rng, size):
        xi = np.where(rng.random((size, self.n)) < self.p, self.b, self.a)
        law = self.step_law()
        second = law.moment(2)
        ones = np.ones(self.n)
        return PathBatch(
            xi=xi,
            cond_var=_row(second * ones),
            neg_third=_row((1 - self.p) * abs(self.a) ** 3 * ones),
            abs_third=_row(law.expect(lambda v: np.abs(v) ** 3) * ones),
            proxy=_row(_proxy(self.b * ones, second * ones)),
        )


@dataclass(frozen=True)
class Regression:
    """Normalised regression martingale ``xi_i = phi_i eps_i / (sigma sqrt(sum phi^2))``.

    ``S_n = (theta_n - theta) sqrt(sum phi^2) / sigma`` and ``<S>_n = 1``.
    """

    design: DesignSpec
    noise: NoiseSpec
    kind = "regression"
    independent = True
    martingale = True

    @property
    def n(self):
        return self.design.length

    @property
    def symmetric(self):
        return self.noise.symmetric

    # |xi_i| scales with the design, so there is no constant bound
    upper = None
    lower = None
    bernstein_eps = None

    @property
    def bounded_above(self):
        return math.isfinite(self.noise.upper)

    def sample_raw(self, rng, size):
        """Return ``(phi, eps)`` arrays of shape ``(size, n)``."""
        phi = self.design.sample(rng, size)
        eps = self.noise.sample(rng, (size, self.n))
        return phi, eps

    def batch_from(self, phi, eps):
        sigma = self.noise.sigma
        energy = np.sum(phi * phi, axis=1, keepdims=True)
        w = phi / (sigma * np.sqrt(energy))
        aw = np.abs(w)
        var = w * w * sigma * sigma
        return PathBatch(
            xi=w * eps,
            cond_var=var,
            neg_third=aw ** 3 * self.noise.neg_third,
            abs_third=aw ** 3 * self.noise.abs_third,
            proxy=_proxy(_weighted_upper(w, self.noise), var) if self.bounded_above
            else np.full_like(var, np.inf),
        )

    def sample(self, rng, size):
        return self.batch_from(*self.sample_raw(rng, size))


@dataclass(frozen=True)
class AR1:
    """``xi_i = X_{i-1} eps_i`` for ``X_k = theta X_{k-1} + eps_k``."""

    theta: float
    noise: NoiseSpec
    x0: float = 0.0
    n: int = 50
    kind = "ar1"
    independent = False
    martingale = True

    def __post_init__(self):
        _check_steps(self.n)

    @property
    def symmetric(self):
        return self.noise.symmetric

    upper = None
    lower = None
    bernstein_eps = None

    @property
    def bounded_above(self):
        return math.isfinite(self.noise.upper)

    def sample_raw(self, rng, size, backend=None):
        """Return ``(X, eps)``: ``X`` has shape ``(size, n + 1)``."""
        eps = self.noise.sample(rng, (size, self.n))
        return kernels.ar1_paths(self.theta, self.x0, eps, backend=backend), eps

    def batch_from(self, x, eps):
        prev = x[:, :-1]
        ap = np.abs(prev)
        s2 = self.noise.sigma ** 2
        var = prev * prev * s2
        if self.bounded_above:
            proxy = _proxy(_weighted_upper(prev, self.noise), var)
        else:
            proxy = np.full_like(var, np.inf)
        return PathBatch(
            xi=prev * eps,
            cond_var=var,
            neg_third=ap ** 3 * self.noise.neg_third,
            abs_third=ap ** 3 * self.noise.abs_third,
            proxy=proxy,
        )

    def sample(self, rng, size):
        return self.batch_from(*self.sample_raw(rng, size))


def _poisson_third_moments(mu):
    """``(E((P - mu)^-)^3, E|P - mu|^3)`` for ``P ~ Poisson(mu)``, by finite sums."""
    if mu == 0:
        return 0.0, 0.0
    top = int(mu + 40 * math.sqrt(mu) + 40)
    k = np.arange(top + 1)
    pmf = stats.poisson.pmf(k, mu)
    d = k - mu
    neg = math.fsum((pmf * np.where(d < 0, -d, 0.0) ** 3).tolist())
    return neg, math.fsum((pmf * np.abs(d) ** 3).tolist())


@dataclass(frozen=True)
class GaltonWatson:
    """Generation martingale ``xi_k = X_k - m X_{k-1}`` of a Galton-Watson process, ``X_0 = 1``.

    ``E(xi_k^2 | F_{k-1}) = sigma^2 X_{k-1}``.  Third moments are exact for
    Poisson offspring and ``nan`` for finite offspring laws.
    """

    offspring: OffspringSpec
    generations: int
    kind = "galton_watson"
    symmetric = False
    independent = False
    martingale = True
    upper = None
    bernstein_eps = None

    def __post_init__(self):
        _check_steps(self.generations)

    @property
    def n(self):
        return self.generations

    @property
    def lower(self):
        return None

    @property
    def proxy_constant(self):
        """``M``: ``sigma^2`` if ``sigma >= m`` else ``(m + sigma^2/m)^2 / 4``."""
        return c_squared(self.offspring.mean, self.offspring.var)

    def sample_counts(self, rng, size):
        counts = np.empty((size, self.generations + 1), dtype=np.int64)
        counts[:, 0] = 1
        for k in range(self.generations):
            counts[:, k + 1] = self.offspring.sample_next(rng, counts[:, k])
        return counts

    def batch_from(self, counts):
        m, s2 = self.offspring.mean, self.offspring.var
        prev = counts[:, :-1].astype(float)
        xi = counts[:, 1:] - m * prev
        if self.offspring.kind == "poisson":
            uniq, inv = np.unique(counts[:, :-1], return_inverse=True)
            table = np.array([_poisson_third_moments(m * u) for u in uniq]).reshape(-1, 2)
            inv = inv.reshape(prev.shape)
            neg3, abs3 = table[inv, 0], table[inv, 1]
        else:
            neg3 = abs3 = np.full_like(prev, np.nan)
        return PathBatch(
            xi=xi,
            cond_var=s2 * prev,
            neg_third=neg3,
            abs_third=abs3,
            proxy=self.proxy_constant * prev,
        )

    def sample(self, rng, size):
        return self.batch_from(self.sample_counts(rng, size))


ProcessSpec = Union[
    RademacherWeighted,
    ThreePoint,
    SinCosRademacher,
    BoundedBelowExponential,
    BernsteinTwoPoint,
    Regression,
    AR1,
    GaltonWatson,
]

VARIANTS = {
    cls.kind: cls
    for cls in (
        RademacherWeighted,
        ThreePoint,
        SinCosRademacher,
        BoundedBelowExponential,
        BernsteinTwoPoint,
        Regression,
        AR1,
        GaltonWatson,
    )
}


def spec_to_dict(spec):
    d = asdict(spec)
    d["variant"] = spec.kind
    return d


def spec_from_dict(d):
    d = dict(d)
    try:
        cls = VARIANTS[d.pop("variant")]
    except KeyError as exc:
        raise ConfigurationError(f"unknown process variant {exc.args[0]!r}") from None
    if "weights" in d:
        d["weights"] = tuple(d["weights"])
    for key, sub in (("noise", NoiseSpec), ("design", DesignSpec), ("offspring", OffspringSpec)):
        if key in d and isinstance(d[key], dict):
            inner = dict(d[key])
            for tkey in ("values", "probs"):
                if inner.get(tkey) is not None:
                    inner[tkey] = tuple(inner[tkey])
            d[key] = sub(**inner)
    return cls(**d)


# ---------------------------------------------------------------------------
# Tail events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailEvent:
    """A tail event on one path.

    ``exists_k``: some ``k`` has ``S_k >= x`` and every given budget clause
    holds *at that k*.  ``max_endpoint``: ``max_k S_k >= x`` and the budgets
    hold at ``n``.  ``self_normalized``: ``max_k S_k / sqrt([S]_n) >= x``
    with ``0/0 = 0``.  ``negated`` applies the event to ``-S``.

    Budget clauses: ``sq_var`` (``[S]``), ``cond_var`` (``<S>``),
    ``neg_third`` (``<<S>>``), ``abs_third`` (``Upsilon``) and ``proxy``
    (``sum V``).
    """

    kind: str = "exists_k"
    x: float = 0.0
    sq_var: Optional[float] = None
    cond_var: Optional[float] = None
    neg_third: Optional[float] = None
    abs_third: Optional[float] = None
    proxy: Optional[float] = None
    negated: bool = False

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigurationError(f"unknown event kind {self.kind!r}; known: {EVENT_KINDS}")
        if self.kind == "self_normalized" and self.budgets():
            raise ConfigurationError("self_normalized events take no budget clauses")

    def budgets(self):
        return [(c, getattr(self, c)) for c in CLAUSES if getattr(self, c) is not None]

    @property
    def kind_label(self):
        return ("negated_" if self.negated else "") + self.kind

    @property
    def v_sq(self):
        for c in ("sq_var", "cond_var", "proxy"):
            if getattr(self, c) is not None:
                return getattr(self, c)
        return None

    @property
    def w(self):
        for c in ("neg_third", "abs_third"):
            if getattr(self, c) is not None:
                return getattr(self, c)
        if self.proxy is not None and (self.sq_var is not None or self.cond_var is not None):
            return self.proxy
        return None


_KIND_CODE = {
    "exists_k": kernels.EXISTS,
    "max_endpoint": kernels.MAX_ENDPOINT,
    "self_normalized": kernels.SELF_NORMALIZED,
}


def batch_hits(batch: PathBatch, event: TailEvent, backend=None):
    """Boolean hit indicator for every path of ``batch``."""
    budgets = event.budgets()
    b, n = batch.xi.shape
    incs = np.empty((len(budgets), b, n))
    for j, (clause, _) in enumerate(budgets):
        incs[j] = batch.increments(clause)
    thr = [t for _, t in budgets]
    sign = -1.0 if event.negated else 1.0
    return kernels.scan(_KIND_CODE[event.kind], batch.xi, incs, thr, event.x, sign, backend=backend)


def sample_path(spec, stream) -> PathStats:
    """Draw one trajectory of ``spec`` from the generator ``stream``."""
    return PathStats.from_batch(spec.sample(stream, 1), 0)


def event_hit(path: PathStats, event: TailEvent, backend=None) -> bool:
    if path.n < 1:
        raise DomainError("path", "must have at least one step")
    return bool(batch_hits(path.as_batch(), event, backend=backend)[0])


# ---------------------------------------------------------------------------
# Sharpness oracle
# ---------------------------------------------------------------------------


def exact_chernoff_three_point(x, y, v_sq, n):
    """``inf_{lam >= 0} E exp(lam (S_n - x))`` for i.i.d. three-point steps.

    The MGF is the exact finite sum over the three outcomes; the infimum is
    found with :func:`martbounds.bounds.optimize_lambda`.
    """
    spec = ThreePoint(y=float(y), v_sq=float(v_sq), n=int(n))
    if not x > 0:
        raise DomainError("x", "must be > 0")
    law = spec.step_law()
    ld = np.longdouble

    def exponent(lam):
        return -lam * ld(x) + spec.n * law.log_mgf(ld(lam))

    _, value = optimize_lambda(exponent, (0.0, math.inf))
    return math.exp(min(value, 0.0))
