"""Least-squares regression, AR(1) and Lotka-Nagaev estimators with their envelopes.

Each envelope is a non-asymptotic bound ``x -> P(deviation >= x)`` built
from :mod:`martbounds.bounds`.  Two-sided statements are read as one bound
per sign; only the branching theorem carries an explicit factor 2.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import stats

from . import bounds
from .bounds import BoundResult, c_squared
from .errors import ConfigurationError, DomainError
from .montecarlo import DEFAULT_CONFIDENCE, run_blocks
from .processes import OffspringSpec

# ---------------------------------------------------------------------------
# Linear regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionData:
    phis: tuple
    xs: tuple
    sigma: float

    def __post_init__(self):
        if len(self.phis) != len(self.xs):
            raise DomainError("xs", f"length {len(self.xs)} differs from phis length {len(self.phis)}")
        if len(self.phis) == 0:
            raise DomainError("phis", "must be non-empty")
        if not self.sigma > 0:
            raise DomainError("sigma", "must be > 0")
        if math.fsum(float(p) * float(p) for p in self.phis) <= 0:
            raise DomainError("phis", "design energy sum(phi^2) must be > 0")

    @property
    def n(self):
        return len(self.phis)

    @property
    def energy(self):
        return math.fsum(float(p) * float(p) for p in self.phis)


def fit_linear(data: RegressionData):
    """``theta_n = sum(phi X) / sum(phi^2)``."""
    num = math.fsum(float(p) * float(x) for p, x in zip(data.phis, data.xs))
    return num / data.energy


def fit_linear_batch(phi, x):
    """Row-wise least squares for arrays of shape ``(B, n)``."""
    return np.sum(phi * x, axis=1) / np.sum(phi * phi, axis=1)


@dataclass(frozen=True)
class EnvelopeSpec:
    """``bernstein`` (eps1, eps2), ``bounded_above`` (eps) or ``alpha_mgf`` (alpha, c)."""

    kind: str
    eps1: float = 1.0
    eps2: Optional[float] = None
    eps: Optional[float] = None
    alpha: Optional[float] = None
    c: Optional[float] = None

    def __post_init__(self):
        if self.kind == "bernstein":
            if not (self.eps1 > 0 and self.eps2 is not None and self.eps2 > 0):
                raise DomainError("eps2", "bernstein envelope needs eps1 > 0 and eps2 > 0")
        elif self.kind == "bounded_above":
            if not (self.eps is not None and self.eps > 0):
                raise DomainError("eps", "bounded_above envelope needs eps > 0")
        elif self.kind == "alpha_mgf":
            if self.alpha is None or not 1 < self.alpha <= 2:
                raise DomainError("alpha", "must lie in (1, 2]")
            if not (self.c is not None and self.c > 0):
                raise DomainError("c", "must be > 0")
        else:
            raise ConfigurationError(f"unknown envelope kind {self.kind!r}")


def design_eps1(phis):
    """Smallest admissible ``eps1 = max |phi_k| / sqrt(sum phi^2)``."""
    phis = np.asarray(phis, dtype=float)
    return float(np.max(np.abs(phis)) / math.sqrt(math.fsum((phis * phis).tolist())))


def regression_envelope(spec: EnvelopeSpec, x, *, sigma=None, n=None, phis=None):
    """Envelope for ``(theta_n - theta) sqrt(sum phi^2) >= x sigma`` (one sign).

    ``alpha_mgf`` bounds the unnormalised ``(theta_n - theta) sum phi^2 >= x``
    on ``{sum |phi|^alpha <= v^alpha}``; ``v`` is computed from ``phis``.
    """
    if spec.kind == "bernstein":
        if sigma is None or not sigma > 0:
            raise DomainError("sigma", "must be > 0")
        if phis is not None:
            n = len(phis)
            if design_eps1(phis) > spec.eps1 * (1 + 1e-12):
                raise DomainError("eps1", "hypothesis |phi_k| / sqrt(sum phi^2) <= eps1 fails")
        if n is None:
            raise DomainError("n", "bernstein envelope needs n or phis")
        eps = spec.eps1 * spec.eps2 / sigma
        res = bounds.bennett_refined_b1n(x, eps, 1.0, n)
        return replace(res, family="regression-bernstein",
                       params={**res.params, "eps1": spec.eps1, "eps2": spec.eps2, "sigma": sigma})
    if spec.kind == "bounded_above":
        if sigma is None or not sigma > 0:
            raise DomainError("sigma", "must be > 0")
        if sigma > spec.eps * (1 + 1e-12):
            raise DomainError("eps", "noise bounded by eps cannot have sigma > eps")
        c_n = 0.25 * (spec.eps / sigma + sigma / spec.eps) ** 2
        res = bounds.subgaussian_bound(x, math.sqrt(c_n))
        return replace(res, family="regression-bounded-above",
                       params={"x": res.params["x"], "C_n": c_n, "eps": spec.eps, "sigma": sigma})
    if phis is None:
        raise DomainError("phis", "alpha_mgf envelope needs the design values")
    a = spec.alpha
    v = math.fsum((np.abs(np.asarray(phis, dtype=float)) ** a).tolist()) ** (1 / a)
    res = bounds.weighted_alpha_bound(x, v, a, spec.c)
    return replace(res, family="regression-alpha-mgf")


# ---------------------------------------------------------------------------
# AR(1)
# ---------------------------------------------------------------------------


def fit_ar1(series):
    """``theta'_n = sum X_k X_{k-1} / sum X_{k-1}^2`` from ``X_0..X_n``."""
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise DomainError("series", "needs X_0 and at least one observation")
    den = math.fsum((s[:-1] ** 2).tolist())
    if den <= 0:
        raise DomainError("series", "all-zero history: sum X_{k-1}^2 = 0")
    return math.fsum((s[1:] * s[:-1]).tolist()) / den


def fit_ar1_batch(x):
    prev = x[:, :-1]
    return np.sum(x[:, 1:] * prev, axis=1) / np.sum(prev * prev, axis=1)


def ar1_proxy(eps, sigma, sum_sq):
    """``L_n = (eps + sigma^2/eps)^2 / 4 * sum X_{k-1}^2``."""
    return 0.25 * (eps + sigma * sigma / eps) ** 2 * sum_sq


def ar1_envelope(eps, sigma, sum_sq, x, v_sq):
    """Envelope ``exp(-x^2 / (2 v^2))`` for ``(theta'_n - theta) sum X^2 >= x`` on ``{L_n <= v^2}``.

    ``params`` carries ``L_n`` and ``applicable = (L_n <= v^2)``.
    """
    for name, val in (("eps", eps), ("sigma", sigma), ("sum_sq", sum_sq), ("v_sq", v_sq)):
        if not (val > 0 and math.isfinite(val)):
            raise DomainError(name, "must be finite and > 0")
    if sigma > eps * (1 + 1e-12):
        raise DomainError("sigma", "noise bounded by eps cannot have sigma > eps")
    l_n = ar1_proxy(eps, sigma, sum_sq)
    res = bounds.subgaussian_bound(x, math.sqrt(v_sq))
    return replace(res, family="ar1-bounded",
                   params={"x": res.params["x"], "v_sq": v_sq, "L_n": l_n, "applicable": l_n <= v_sq})


def ar1_alpha_envelope(x, abs_alpha_sum, alpha, c):
    """Alpha-MGF envelope on ``{sum |X_{k-1}|^alpha <= v^alpha}``."""
    if not abs_alpha_sum > 0:
        raise DomainError("abs_alpha_sum", "must be > 0")
    res = bounds.weighted_alpha_bound(x, abs_alpha_sum ** (1 / alpha), alpha, c)
    return replace(res, family="ar1-alpha-mgf")


# ---------------------------------------------------------------------------
# Galton-Watson
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchingObservation:
    x_prev: int
    x_curr: int
    m: float
    sigma: float
    eps: Optional[float] = None

    def __post_init__(self):
        if int(self.x_prev) != self.x_prev or self.x_prev < 1:
            raise DomainError("x_prev", "need X_{n-1} >= 1 (the estimator needs X_{n-1} > 0)")
        if int(self.x_curr) != self.x_curr or self.x_curr < 0:
            raise DomainError("x_curr", "must be a non-negative integer")
        if not self.m > 0:
            raise DomainError("m", "must be > 0")
        if not self.sigma >= 0:
            raise DomainError("sigma", "must be >= 0")


def lotka_nagaev(obs: BranchingObservation):
    """``m_n = X_n / X_{n-1}``."""
    return obs.x_curr / obs.x_prev


def _bernstein_from_moments(moments, var, max_order):
    best = 0.0
    for order in range(3, max_order + 1):
        mu = abs(moments[order])
        if mu == 0:
            continue
        ratio = 2 * mu / (math.factorial(order) * var)
        best = max(best, float(ratio) ** (1.0 / (order - 2)))
    return best


def poisson_bernstein_scale(m, max_order=60):
    """Smallest ``eps`` with ``|E xi^l| <= l!/2 eps^(l-2) m`` for ``l <= max_order``.

    ``xi = P - m``, ``P ~ Poisson(m)``; central moments come from the exact
    moment-cumulant recursion (all cumulants of order >= 2 equal ``m``).
    The ratio decays in ``l``, so the maximum is reached at small orders.
    """
    mf = Fraction(m)
    kappa = [Fraction(0), Fraction(0)] + [mf] * (max_order - 1)
    mu = [Fraction(1)] + [Fraction(0)] * max_order
    for order in range(1, max_order + 1):
        mu[order] = sum(math.comb(order - 1, j - 1) * kappa[j] * mu[order - j] for j in range(1, order + 1))
    return _bernstein_from_moments(mu, mf, max_order)


def finite_bernstein_scale(values, probs, max_order=60):
    """Bernstein scale of a centred finite offspring law (exact rational moments)."""
    pv = [(Fraction(p), Fraction(v)) for v, p in zip(values, probs)]
    mean = sum(p * v for p, v in pv)
    mu = [sum(p * (v - mean) ** k for p, v in pv) for k in range(max_order + 1)]
    if mu[2] == 0:
        raise DomainError("probs", "degenerate offspring law has no Bernstein scale")
    return _bernstein_from_moments(mu, mu[2], max_order)


def offspring_bernstein_scale(offspring: OffspringSpec):
    if offspring.kind == "poisson":
        return poisson_bernstein_scale(offspring.m)
    return finite_bernstein_scale(offspring.values, offspring.probs)


def branching_proxy_constant(m, sigma):
    """``M = sigma^2`` if ``sigma >= m`` else ``(m + sigma^2/m)^2 / 4``."""
    return c_squared(m, sigma * sigma)


BRANCHING_KINDS = ("bernstein_two_sided", "lower_one_sided")


def branching_envelope(kind, obs: BranchingObservation, x, v_sq):
    """Conditional envelope given ``X_{n-1}``.

    ``bernstein_two_sided``: ``2 B_{1,n}(x, eps, v)`` with ``n = X_{n-1}``
    on ``{X_{n-1} sigma^2 <= v^2}``, for ``|m_n - m| X_{n-1} >= x``.
    ``lower_one_sided``: ``exp(-x^2/(2 v^2))`` on ``{M X_{n-1} <= v^2}`` for
    ``(m_n - m) X_{n-1} <= -x``.  ``params`` carries ``applicable`` and the
    relaxation ``2 exp(-x^2/(2(v^2 + x eps)))`` (two-sided kind).
    """
    if kind not in BRANCHING_KINDS:
        raise ConfigurationError(f"unknown branching envelope {kind!r}; known: {BRANCHING_KINDS}")
    if not v_sq > 0:
        raise DomainError("v_sq", "must be > 0")
    v = math.sqrt(v_sq)
    if kind == "bernstein_two_sided":
        if obs.eps is None or not obs.eps > 0:
            raise ConfigurationError("bernstein_two_sided needs the offspring Bernstein scale eps")
        one = bounds.bennett_refined_b1n(x, obs.eps, v, int(obs.x_prev))
        log2 = math.log(2.0)
        relax = min(1.0, 2 * bounds.freedman_b2(x, obs.eps, v).value)
        raw = one.log_value + log2
        params = {"x": float(x), "v_sq": v_sq, "eps": obs.eps, "n": int(obs.x_prev),
                  "applicable": obs.x_prev * obs.sigma ** 2 <= v_sq * (1 + 1e-12),
                  "relaxed": relax}
        return BoundResult(
            value=min(1.0, math.exp(raw)),
            log_value=min(0.0, raw),
            lam=one.lam,
            family="branching-bernstein-two-sided",
            raw_log_value=raw,
            clipped=raw > 0,
            flag="clipped" if raw > 0 else one.flag,
            params=params,
        )
    big_m = branching_proxy_constant(obs.m, obs.sigma)
    res = bounds.subgaussian_bound(x, v)
    return replace(res, family="branching-lower-one-sided",
                   params={"x": res.params["x"], "v_sq": v_sq, "M": big_m,
                           "applicable": big_m * obs.x_prev <= v_sq * (1 + 1e-12)})


@dataclass(frozen=True)
class UnconditionalEstimate:
    mean: float
    ci_low: float
    ci_high: float
    trials: int
    extinct: int
    seed: int
    confidence: float


def _simulate_generations(offspring, generations, rng, size):
    counts = np.ones(size, dtype=np.int64)
    for _ in range(generations):
        counts = offspring.sample_next(rng, counts)
    return counts


def branching_unconditional(kind, offspring: OffspringSpec, generations, x, trials, seed,
                            confidence=DEFAULT_CONFIDENCE, workers=None):
    """Monte Carlo value of the unconditional branching bound.

    Estimates ``E min(1, 2 exp(-X_{n-1} x^2 / (2 (sigma^2 + x eps))))``
    (two-sided) or ``E exp(-X_{n-1} x^2 / (2 M))`` (lower one-sided), with
    ``n = generations``.  Extinct paths (``X_{n-1} = 0``) contribute 1.  The
    interval is a normal interval on the bounded summands.
    """
    if kind not in BRANCHING_KINDS:
        raise ConfigurationError(f"unknown branching envelope {kind!r}; known: {BRANCHING_KINDS}")
    if int(generations) != generations or generations < 1:
        raise DomainError("generations", "must be a positive integer")
    if not x >= 0:
        raise DomainError("x", "must be >= 0")
    m, s2 = offspring.mean, offspring.var
    if kind == "bernstein_two_sided":
        eps = offspring_bernstein_scale(offspring)
        rate = x * x / (2 * (s2 + x * eps))
        scale = 2.0
    else:
        rate = x * x / (2 * branching_proxy_constant(m, math.sqrt(s2)))
        scale = 1.0

    def func(rng, size):
        prev = _simulate_generations(offspring, generations - 1, rng, size)
        vals = np.where(prev > 0, np.minimum(1.0, scale * np.exp(-prev * rate)), 1.0)
        return float(vals.sum()), float((vals * vals).sum()), int(np.count_nonzero(prev == 0))

    total, total_sq, extinct = run_blocks(trials, seed, func, workers=workers)
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0)
    half = stats.norm.ppf(0.5 + confidence / 2) * math.sqrt(var / trials)
    return UnconditionalEstimate(mean, max(0.0, mean - half), min(1.0, mean + half),
                                 int(trials), extinct, int(seed), confidence)


# ---------------------------------------------------------------------------
# CSV ingestion (malformed rows are hard errors)
# ---------------------------------------------------------------------------


def _read_rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DomainError(str(path), "empty file") from None
        if header != list(columns):
            raise DomainError(str(path), f"header {header} != expected {list(columns)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise DomainError(f"{path}:{lineno}", f"expected {len(columns)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DomainError(f"{path}:{lineno}", f"non-numeric field in {row}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DomainError(f"{path}:{lineno}", "non-finite value")
            rows.append(vals)
    if not rows:
        raise DomainError(str(path), "no data rows")
    return rows


def read_regression_csv(path):
    """Columns ``phi, x``; returns ``(phis, xs)``."""
    rows = _read_rows(path, ("phi", "x"))
    return tuple(r[0] for r in rows), tuple(r[1] for r in rows)


def read_ar1_csv(path):
    """Single column ``x``; the first data row is ``X_0``."""
    return tuple(r[0] for r in _read_rows(path, ("x",)))


def read_branching_csv(path):
    """Columns ``generation, count``; generations must be 0, 1, 2, ... in order."""
    rows = _read_rows(path, ("generation", "count"))
    counts = []
    for i, (g, c) in enumerate(rows):
        if g != i:
            raise DomainError(f"{path}:{i + 2}", f"expected generation {i}, got {g:g}")
        if c < 0 or int(c) != c:
            raise DomainError(f"{path}:{i + 2}", "count must be a non-negative integer")
        counts.append(int(c))
    return tuple(counts)
