"""Monte Carlo estimation of tail events and verification against bounds.

Trials are grouped in fixed blocks of :data:`BLOCK` paths.  Block ``j`` draws
from ``Philox(SeedSequence(seed)).jumped(j)``, a counter-based stream that is
a pure function of ``(seed, j)``, so hit counts do not depend on how blocks
are spread over worker threads.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import betaincinv

from ._accel import worker_count
from .bounds import BoundResult, c_squared
from .errors import ConfigurationError, DomainError, PartialResultError
from .processes import DiscreteLaw, TailEvent, batch_hits

BLOCK = 2 ** 14
DEFAULT_CONFIDENCE = 0.99

VERDICT_COLUMNS = (
    "family", "process", "event_kind", "x", "v_sq", "w", "n", "trials", "hits",
    "p_hat", "ci_low", "ci_high", "bound", "extra_term", "verdict",
)


def clopper_pearson(hits, trials, confidence=0.95):
    """Exact two-sided binomial interval.

    Each tail gets ``(1 - confidence)/2``; when ``hits`` is 0 (or ``trials``)
    the degenerate side is exact and the whole ``1 - confidence`` goes to the
    other side, so ``high = 1 - alpha^(1/n)`` at zero hits.
    """
    if isinstance(hits, bool) or int(hits) != hits or int(trials) != trials:
        raise DomainError("hits", "counts must be integers")
    hits, trials = int(hits), int(trials)
    if trials < 1:
        raise DomainError("trials", "must be >= 1")
    if not 0 <= hits <= trials:
        raise DomainError("hits", f"need 0 <= hits <= trials, got {hits}/{trials}")
    if not 0 < confidence < 1:
        raise DomainError("confidence", "must lie in (0, 1)")
    alpha = 1 - confidence
    if hits == 0:
        return 0.0, float(1 - alpha ** (1 / trials))
    if hits == trials:
        return float(alpha ** (1 / trials)), 1.0
    low = betaincinv(hits, trials - hits + 1, alpha / 2)
    high = betaincinv(hits + 1, trials - hits, 1 - alpha / 2)
    return float(low), float(high)


def block_stream(seed, block):
    """Generator of block ``block`` under master ``seed``."""
    bitgen = np.random.Philox(np.random.SeedSequence(int(seed)))
    return np.random.Generator(bitgen.jumped(int(block)))


def run_blocks(trials, seed, func, workers=None):
    """Apply ``func(rng, size)`` to every block and sum the returned counts.

    ``func`` returns a tuple of integers (or arrays); tuples are summed
    element-wise in block order.  A :class:`MemoryError` stops the run with
    :class:`PartialResultError` carrying the trials completed so far.
    """
    trials = int(trials)
    if trials < 1:
        raise DomainError("trials", "must be >= 1")
    sizes = [BLOCK] * (trials // BLOCK)
    if trials % BLOCK:
        sizes.append(trials % BLOCK)
    workers = workers or worker_count()

    def one(j):
        return func(block_stream(seed, j), sizes[j])

    results = [None] * len(sizes)
    try:
        if workers == 1 or len(sizes) == 1:
            for j in range(len(sizes)):
                results[j] = one(j)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(one, j) for j in range(len(sizes))]
                for j, fut in enumerate(futures):
                    results[j] = fut.result()
    except MemoryError as exc:
        done = [j for j, r in enumerate(results) if r is not None]
        completed = sum(sizes[j] for j in done)
        hits = sum(int(results[j][0]) for j in done)
        raise PartialResultError(completed, hits, exc) from exc
    total = results[0]
    for r in results[1:]:
        total = tuple(a + b for a, b in zip(total, r))
    return total


@dataclass(frozen=True)
class TailEstimate:
    trials: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    seed: int
    confidence: float

    @classmethod
    def from_counts(cls, hits, trials, seed, confidence):
        low, high = clopper_pearson(hits, trials, confidence)
        p_hat = hits / trials
        return cls(trials, int(hits), p_hat, min(low, p_hat), max(high, p_hat), seed, confidence)

    @property
    def stderr(self):
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.trials)


def _check_confidence(confidence):
    if not 0.5 < confidence < 1:
        raise DomainError("confidence", "must lie in (0.5, 1)")


def _tail_counts(spec, event, trials, seed, y=None, workers=None, backend=None):
    def func(rng, size):
        batch = spec.sample(rng, size)
        hits = int(np.count_nonzero(batch_hits(batch, event, backend=backend)))
        big = 0
        if y is not None:
            big = int(np.count_nonzero(batch.xi.max(axis=1) > y))
        return hits, big

    return run_blocks(trials, seed, func, workers=workers)


def estimate_tail(spec, event: TailEvent, trials, seed, confidence=DEFAULT_CONFIDENCE,
                  workers=None, backend=None) -> TailEstimate:
    """Monte Carlo estimate of ``P(event)`` with a Clopper-Pearson interval."""
    _check_confidence(confidence)
    hits, _ = _tail_counts(spec, event, trials, seed, workers=workers, backend=backend)
    return TailEstimate.from_counts(hits, int(trials), int(seed), confidence)


# ---------------------------------------------------------------------------
# Compatibility table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pairing:
    """One admissible (process, event, budget) combination for a bound family."""

    processes: frozenset
    event_kinds: frozenset
    clauses: frozenset
    requires: tuple = ()
    hypothesis: str = ""


def _p(processes, kinds, clauses, requires=(), hypothesis=""):
    return Pairing(frozenset(processes), frozenset(kinds), frozenset(clauses), tuple(requires), hypothesis)


_BOUNDED = ("rademacher_weighted", "three_point", "sin_cos_rademacher", "bernstein_two_point")
_SYMMETRIC = ("rademacher_weighted", "three_point", "sin_cos_rademacher", "bernstein_two_point",
              "regression", "ar1")
_THIRD = ("rademacher_weighted", "three_point", "sin_cos_rademacher", "bounded_below_exponential",
          "bernstein_two_point", "regression", "ar1")
_LOWER = ("rademacher_weighted", "three_point", "sin_cos_rademacher", "bounded_below_exponential",
          "bernstein_two_point")
_UPPER = ("rademacher_weighted", "three_point", "sin_cos_rademacher", "bernstein_two_point",
          "regression", "ar1")

_BERNSTEIN = _p(_BOUNDED, ("exists_k",), ("cond_var",), ("bernstein",),
                "Bernstein condition with scale epsilon and <S>_k <= v^2")
_FREEDMAN_LOWER = _p(_LOWER, ("exists_k",), ("sq_var",), ("lower_eps",),
                     "xi_i >= -epsilon and [S]_k <= v^2")
_THIRD_MOMENT = (
    _p(_THIRD, ("exists_k",), ("sq_var", "neg_third"), ("v", "w"),
       "finite E(xi^-)^3, [S]_k <= v^2 and <<S>>_k <= w"),
    _p(_THIRD, ("exists_k",), ("sq_var", "abs_third"), ("v", "w"),
       "finite E|xi|^3, [S]_k <= v^2 and Upsilon(S_k) <= w"),
)
_LOWER_BOUNDED = _p(_LOWER, ("exists_k",), ("sq_var",), ("lower_one", "v"),
                    "xi_i >= -1 and [S]_k <= v^2")
_FUK_NAGAEV = _p(("rademacher_weighted", "three_point", "sin_cos_rademacher"),
                 ("exists_k",), ("cond_var",), ("symmetric", "truncation", "v"),
                 "conditionally symmetric differences, |xi_i| <= y so V_k^2(y) = <S>_k <= v^2")

COMPATIBILITY = {
    "freedman-b2": (_BERNSTEIN, _FREEDMAN_LOWER),
    "bennett-b1": (_BERNSTEIN,),
    "bennett-refined-b1n": (_BERNSTEIN,),
    # third-moment-b1/b2 at eps = w/(3 v^2) are not implied by the raw bound
    # (the relaxation needs eps = 2w/(3 v^2)); they have no pairing.
    "third-moment-raw": _THIRD_MOMENT,
    "lower-bounded-tight": (_LOWER_BOUNDED,),
    "lower-bounded-b1": (_LOWER_BOUNDED,),
    "lower-bounded-b2": (_LOWER_BOUNDED,),
    "fuk-nagaev-tight": (_FUK_NAGAEV,),
    "fuk-nagaev-loose": (_FUK_NAGAEV,),
    "subgaussian": (
        _p(_SYMMETRIC, ("exists_k",), ("sq_var",), ("symmetric", "v"),
           "conditionally symmetric differences and [S]_k <= v^2"),
        _p(_UPPER, ("exists_k",), ("proxy",), ("upper", "v"),
           "xi_i <= U_{i-1} and sum C^2_{i-1} <= v^2"),
        _p(("rademacher_weighted", "three_point", "bernstein_two_point"), ("self_normalized",), (),
           ("symmetric", "independent", "unit_v"),
           "independent symmetric differences, self-normalised by sqrt([S]_n)"),
    ),
}


def _close(a, b):
    return abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1e-300)


def _requirement_ok(req, spec, event, params):
    """Return an error message if ``req`` fails, else ``None``."""
    if req == "bernstein":
        eps = getattr(spec, "bernstein_eps", None)
        if eps is None or eps > params["epsilon"] * (1 + 1e-12):
            return f"process must satisfy the Bernstein condition with epsilon={params['epsilon']!r}"
    elif req == "lower_eps":
        low = getattr(spec, "lower", None)
        if low is None or low < -params["epsilon"] * (1 + 1e-12):
            return f"differences must be bounded below by -epsilon={-params['epsilon']!r}"
    elif req == "lower_one":
        low = getattr(spec, "lower", None)
        if low is None or low < -1 - 1e-12:
            return "differences must satisfy xi_i >= -1"
    elif req == "symmetric":
        if not spec.symmetric:
            return "differences must be conditionally symmetric"
    elif req == "independent":
        if not spec.independent:
            return "differences must be independent"
    elif req == "truncation":
        if spec.upper is None or spec.upper > params["y"] * (1 + 1e-12):
            return "truncation level y must dominate |xi_i|"
        if spec.n != params["n"]:
            return f"bound uses n={params['n']} but the process has {spec.n} steps"
    elif req == "upper":
        bounded = getattr(spec, "bounded_above", None)
        if bounded is None:
            bounded = spec.upper is not None and math.isfinite(spec.upper)
        if not bounded:
            return "differences must be bounded above"
    elif req == "unit_v":
        if not _close(params.get("v", 1.0), 1.0):
            return "self-normalised events pair with v = 1"
    elif req == "v":
        v_sq = params["v"] ** 2
        if event.v_sq is None or not _close(event.v_sq, v_sq):
            return f"event budget v^2={event.v_sq!r} does not match the bound's v^2={v_sq!r}"
        if "w" in params and (event.w is None or not _close(event.w, params["w"])):
            return f"event budget w={event.w!r} does not match the bound's w={params['w']!r}"
    return None


def _check_budget_match(family, event, params):
    if family in ("freedman-b2", "bennett-b1", "bennett-refined-b1n"):
        v_sq = params["v"] ** 2
        if event.v_sq is None or not _close(event.v_sq, v_sq):
            raise ConfigurationError(
                f"{family}: event budget v^2={event.v_sq!r} does not match the bound's v^2={v_sq!r}")


def check_compatibility(spec, event: TailEvent, bound: BoundResult):
    """Raise :class:`ConfigurationError` unless the pairing is in the table."""
    family = bound.family
    if family not in COMPATIBILITY:
        raise ConfigurationError(f"bound family {family!r} has no Monte Carlo pairing")
    params = bound.params
    if "x" in params and not _close(event.x, params["x"]):
        raise ConfigurationError(f"event x={event.x!r} differs from the bound's x={params['x']!r}")
    clauses = frozenset(c for c, _ in event.budgets())
    reasons = []
    for pairing in COMPATIBILITY[family]:
        if spec.kind not in pairing.processes:
            reasons.append(f"process {spec.kind!r} not covered by [{pairing.hypothesis}]")
            continue
        if event.kind not in pairing.event_kinds or event.negated:
            reasons.append(f"event kind {event.kind_label!r} not covered by [{pairing.hypothesis}]")
            continue
        if clauses != pairing.clauses:
            reasons.append(f"budget clauses {sorted(clauses)} != {sorted(pairing.clauses)} "
                           f"required by [{pairing.hypothesis}]")
            continue
        errors = [m for m in (_requirement_ok(r, spec, event, params) for r in pairing.requires) if m]
        if errors:
            reasons.append("; ".join(errors) + f" [{pairing.hypothesis}]")
            continue
        _check_budget_match(family, event, params)
        return pairing
    raise ConfigurationError(f"{family} cannot verify this pairing: " + " | ".join(reasons))


@dataclass(frozen=True)
class VerificationVerdict:
    estimate: TailEstimate
    bound: BoundResult
    margin: float
    passed: bool
    extra_term: Optional[float] = None
    process: str = ""
    event: Optional[TailEvent] = field(default=None, repr=False)

    def as_row(self):
        ev, est = self.event, self.estimate
        return {
            "family": self.bound.family,
            "process": self.process,
            "event_kind": ev.kind_label if ev else "",
            "x": ev.x if ev else self.bound.params.get("x"),
            "v_sq": ev.v_sq if ev else None,
            "w": ev.w if ev else None,
            "n": self.bound.params.get("n"),
            "trials": est.trials,
            "hits": est.hits,
            "p_hat": est.p_hat,
            "ci_low": est.ci_low,
            "ci_high": est.ci_high,
            "bound": self.bound.value,
            "extra_term": self.extra_term,
            "verdict": "pass" if self.passed else "fail",
        }


def verify_bound(spec, event: TailEvent, bound: BoundResult, trials, seed,
                 confidence=DEFAULT_CONFIDENCE, workers=None, backend=None) -> VerificationVerdict:
    """Estimate ``P(event)`` and compare its lower confidence limit with ``bound``."""
    _check_confidence(confidence)
    check_compatibility(spec, event, bound)
    fuk_nagaev = bound.family.startswith("fuk-nagaev")
    y = bound.params["y"] if fuk_nagaev else None
    hits, big = _tail_counts(spec, event, trials, seed, y=y, workers=workers, backend=backend)
    est = TailEstimate.from_counts(hits, int(trials), int(seed), confidence)
    extra = big / int(trials) if fuk_nagaev else None
    allowed = bound.value + (extra or 0.0)
    return VerificationVerdict(
        estimate=est,
        bound=bound,
        margin=bound.value - est.ci_low,
        passed=est.ci_low <= allowed,
        extra_term=extra,
        process=spec.kind,
        event=event,
    )


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float) or isinstance(value, np.floating):
        return format(float(value), ".17g")
    return str(value)


def verdicts_to_csv(verdicts, fh=None):
    """Write verdict rows; floats carry 17 significant digits."""
    out = fh or io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(VERDICT_COLUMNS)
    for v in verdicts:
        row = v.as_row()
        w.writerow([_fmt(row[c]) for c in VERDICT_COLUMNS])
    return out.getvalue() if fh is None else None


# ---------------------------------------------------------------------------
# MGF lemmas by exact expectation
# ---------------------------------------------------------------------------

LEMMAS = ("lower_bounded", "two_point_mix", "c_squared_mgf")


def mgf_lemma_check(law: DiscreteLaw, lemma, lambda_grid, *, b=None, sigma_sq=None):
    """Largest ``E[left side] - right side`` of an MGF lemma over ``lambda_grid``.

    lower_bounded
        ``xi >= -1``: ``E exp(lam xi + (lam + log(1 - lam)) xi^2) <= 1``, ``lam in [0, 1)``.
    two_point_mix
        ``xi <= 1``: ``E exp(lam xi) <= (exp(-lam s2) + s2 exp(lam)) / (1 + s2)``
        with ``s2 = E xi^2``.
    c_squared_mgf
        ``xi <= b``: ``E exp(lam xi) <= exp(lam^2 c_squared(b, s2) / 2)``.

    Expectations are exact finite sums (``math.fsum``).
    """
    if lemma not in LEMMAS:
        raise ConfigurationError(f"unknown lemma {lemma!r}; known: {LEMMAS}")
    vals = np.asarray(law.values, dtype=float)
    scale = max(float(np.max(np.abs(vals))), 1.0)
    if law.mean > 1e-12 * scale:
        raise DomainError("law", f"needs E xi <= 0, got {law.mean!r}")
    lams = np.asarray(lambda_grid, dtype=float)
    s2 = law.moment(2) if sigma_sq is None else float(sigma_sq)

    if lemma == "lower_bounded":
        if vals.min() < -1:
            raise DomainError("law", "lower_bounded needs xi >= -1")
        if np.any((lams < 0) | (lams >= 1)):
            raise DomainError("lambda_grid", "lower_bounded needs lambda in [0, 1)")
        lhs = [law.expect(lambda v, t=t: np.exp(t * v + (t + math.log1p(-t)) * v * v)) for t in lams]
        rhs = [1.0] * len(lams)
    else:
        if np.any(lams <= 0):
            raise DomainError("lambda_grid", f"{lemma} needs lambda > 0")
        lhs = [law.expect(lambda v, t=t: np.exp(t * v)) for t in lams]
        if lemma == "two_point_mix":
            if vals.max() > 1:
                raise DomainError("law", "two_point_mix needs xi <= 1")
            rhs = [(math.exp(-t * s2) + s2 * math.exp(t)) / (1 + s2) for t in lams]
        else:
            b = float(vals.max()) if b is None else float(b)
            if not b > 0:
                raise DomainError("b", "must be > 0")
            if vals.max() > b:
                raise DomainError("law", "c_squared_mgf needs xi <= b")
            s_sq = c_squared(b, s2)
            rhs = [math.exp(t * t * s_sq / 2) for t in lams]
    return max(l - r for l, r in zip(lhs, rhs))
