import csv
import io
import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from martbounds import bounds as B
from martbounds import processes as P
from martbounds.errors import ConfigurationError, DomainError

SEED = 20240611


def rng(seed=SEED):
    return np.random.default_rng(seed)


ALL_SPECS = [
    P.RademacherWeighted(tuple(np.linspace(0.05, 0.3, 20))),
    P.ThreePoint(y=1.0, v_sq=10.0, n=20),
    P.SinCosRademacher(n=50),
    P.BoundedBelowExponential(shift=-1.0, rate=1.0, n=50),
    P.BoundedBelowExponential(shift=-1.0, rate=2.0, n=20),
    P.BernsteinTwoPoint(p=0.2, a=-1.0, b=4.0, n=50),
    P.Regression(P.DesignSpec(n=30), P.NoiseSpec("uniform", scale=1.0)),
    P.Regression(P.DesignSpec(n=30), P.NoiseSpec("two_point", p=0.2, a=-1.0, b=4.0)),
    P.AR1(theta=0.5, noise=P.NoiseSpec("uniform", scale=1.0), x0=1.0, n=50),
    P.GaltonWatson(P.OffspringSpec("poisson", m=2.0), generations=5),
    P.GaltonWatson(P.OffspringSpec("finite", values=(0, 1, 3), probs=(0.25, 0.25, 0.5)), generations=5),
]


def spec_id(spec):
    return spec.kind


class TestDiscreteLaw:
    def test_rejects_bad_probs(self):
        with pytest.raises(DomainError):
            P.DiscreteLaw((0, 1), (0.5, 0.6))
        with pytest.raises(DomainError):
            P.DiscreteLaw((0, 1), (1.5, -0.5))
        with pytest.raises(DomainError):
            P.DiscreteLaw((0, 1, 2), (0.5, 0.5))

    def test_moments(self):
        law = P.DiscreteLaw((-1, 0, 2), (0.25, 0.25, 0.5))
        assert law.mean == 0.75
        assert law.moment(2) == 0.25 + 2
        assert law.moment(3) == -0.25 + 4

    @pytest.mark.parametrize("lam", [-3.0, 0.0, 0.7, 25.0, 900.0])
    def test_log_mgf_against_mpmath(self, lam):
        law = P.DiscreteLaw((-1.0, 0.5, 2.0), (0.3, 0.5, 0.2))
        exact = mp.log(sum(mp.mpf(p) * mp.e ** (mp.mpf(lam) * v) for v, p in zip(law.values, law.probs)))
        assert float(law.log_mgf(lam)) == pytest.approx(float(exact), rel=1e-14, abs=1e-15)

    def test_log_mgf_keeps_longdouble(self):
        law = P.DiscreteLaw((-1.0, 1.0), (0.5, 0.5))
        assert law.log_mgf(np.longdouble(0.5)).dtype == np.longdouble

    def test_sample_frequencies(self):
        law = P.DiscreteLaw((-1.0, 3.0), (0.75, 0.25))
        draws = law.sample(rng(), 200_000)
        assert np.mean(draws == 3.0) == pytest.approx(0.25, abs=5 * math.sqrt(0.25 * 0.75 / 200_000))


class TestNoiseSpec:
    @pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
    def test_uniform_moments(self, scale):
        noise = P.NoiseSpec("uniform", scale=scale)
        dens = 1 / (2 * scale)
        var = integrate.quad(lambda t: t * t * dens, -scale, scale)[0]
        abs3 = integrate.quad(lambda t: abs(t) ** 3 * dens, -scale, scale)[0]
        assert noise.sigma ** 2 == pytest.approx(var, rel=1e-13)
        assert noise.abs_third == pytest.approx(abs3, rel=1e-13)
        assert noise.neg_third == pytest.approx(abs3 / 2, rel=1e-13)

    def test_normal_moments(self):
        noise = P.NoiseSpec("normal", scale=1.5)
        abs3 = integrate.quad(lambda t: abs(t) ** 3 * stats.norm.pdf(t, scale=1.5), -np.inf, np.inf)[0]
        assert noise.abs_third == pytest.approx(abs3, rel=1e-10)
        assert math.isinf(noise.upper) and math.isinf(noise.lower)

    def test_two_point_moments(self):
        noise = P.NoiseSpec("two_point", p=0.2, a=-1.0, b=4.0)
        assert noise.sigma ** 2 == pytest.approx(0.2 * 16 + 0.8)
        assert noise.neg_third == pytest.approx(0.8)
        assert not noise.symmetric
        assert noise.bernstein_eps == 4.0

    def test_uncentered_two_point(self):
        with pytest.raises(DomainError):
            P.NoiseSpec("two_point", p=0.5, a=-1.0, b=2.0)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            P.NoiseSpec("cauchy")

    @pytest.mark.parametrize("noise", [
        P.NoiseSpec("uniform", scale=2.0),
        P.NoiseSpec("rademacher", scale=0.7),
        P.NoiseSpec("two_point", p=0.2, a=-1.0, b=4.0),
    ], ids=["uniform", "rademacher", "two_point"])
    def test_mgf_constant(self, noise):
        c = noise.mgf_constant(2)
        for lam in np.linspace(-4, 4, 81):
            if noise.kind == "uniform":
                s = noise.scale
                mgf = math.sinh(lam * s) / (lam * s) if lam else 1.0
            elif noise.kind == "rademacher":
                mgf = math.cosh(lam * noise.scale)
            else:
                mgf = noise.p * math.exp(lam * noise.b) + (1 - noise.p) * math.exp(lam * noise.a)
            assert mgf <= math.exp(c * lam * lam) * (1 + 1e-14)

    def test_mgf_constant_alpha(self):
        with pytest.raises(DomainError):
            P.NoiseSpec("uniform").mgf_constant(1.5)


class TestSpecValidation:
    def test_three_point_precondition(self):
        with pytest.raises(DomainError) as err:
            P.ThreePoint(y=1.0, v_sq=21.0, n=20)
        assert err.value.field == "v_sq"

    def test_three_point_law(self):
        law = P.ThreePoint(y=2.0, v_sq=10.0, n=20).step_law()
        assert law.probs == pytest.approx((10 / 160, 1 - 10 / 80, 10 / 160))

    def test_two_point_centered(self):
        with pytest.raises(DomainError):
            P.BernsteinTwoPoint(p=0.3, a=-1.0, b=4.0, n=5)

    def test_sin_cos_even(self):
        with pytest.raises(DomainError):
            P.SinCosRademacher(n=5)

    def test_bounded_below_drift_sign(self):
        with pytest.raises(DomainError):
            P.BoundedBelowExponential(shift=-1.0, rate=0.5, n=5)
        drifted = P.BoundedBelowExponential(shift=-1.0, rate=2.0, n=5)
        assert drifted.drift == -0.5 and not drifted.martingale

    @pytest.mark.parametrize("n", [0, -3, 2.5, True])
    def test_bad_step_counts(self, n):
        with pytest.raises(DomainError):
            P.ThreePoint(y=1.0, v_sq=0.1, n=n)

    def test_empty_weights(self):
        with pytest.raises(DomainError):
            P.RademacherWeighted(())

    def test_design(self):
        with pytest.raises(DomainError):
            P.DesignSpec(kind="fixed", values=(0.0, 0.0))
        with pytest.raises(DomainError):
            P.DesignSpec(kind="uniform_abs", low=2.0, high=1.0, n=3)

    def test_offspring(self):
        with pytest.raises(DomainError):
            P.OffspringSpec("finite", values=(0, 1.5), probs=(0.5, 0.5))
        off = P.OffspringSpec("finite", values=(0, 1, 3), probs=(0.25, 0.25, 0.5))
        assert off.mean == 1.75
        assert off.var == pytest.approx(0.25 * 1.75 ** 2 + 0.25 * 0.75 ** 2 + 0.5 * 1.25 ** 2)


class TestAnalyticStatistics:
    def test_rademacher_sq_var(self):
        path = P.sample_path(P.RademacherWeighted((1.0, 1.0, 1.0, 1.0)), rng())
        assert path.sq_var[-1] == 4.0

    def test_rademacher_brackets_agree(self):
        weights = (0.3, -1.2, 0.5, 2.0)
        for seed in range(20):
            path = P.sample_path(P.RademacherWeighted(weights), rng(seed))
            total = math.fsum(a * a for a in weights)
            assert path.sq_var[-1] == pytest.approx(total, rel=1e-15)
            assert path.cond_var[-1] == pytest.approx(total, rel=1e-15)

    def test_three_point_cond_var(self):
        path = P.sample_path(P.ThreePoint(y=1.0, v_sq=10.0, n=20), rng())
        assert path.cond_var[-1] == pytest.approx(10.0, rel=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_sin_cos_half(self, seed):
        path = P.sample_path(P.SinCosRademacher(n=50), rng(seed))
        assert path.cond_var[-1] == pytest.approx(0.5, rel=1e-13)
        assert path.v_sum[-1] == pytest.approx(0.5, rel=1e-13)

    def test_sin_cos_per_step_sup(self):
        spec = P.SinCosRademacher(n=10)
        assert spec.per_step_sup().sum() == pytest.approx(1.0)

    def test_bounded_below_moments_by_quadrature(self):
        spec = P.BoundedBelowExponential(shift=-1.0, rate=1.3, n=5)
        dens = lambda t: 1.3 * math.exp(-1.3 * (t + 1))  # noqa: E731
        second = integrate.quad(lambda t: t * t * dens(t), -1, np.inf)[0]
        neg3 = integrate.quad(lambda t: (-t) ** 3 * dens(t), -1, 0)[0]
        abs3 = neg3 + integrate.quad(lambda t: t ** 3 * dens(t), 0, np.inf)[0]
        got = spec.moments()
        assert got == pytest.approx((second, neg3, abs3), rel=1e-10)

    def test_poisson_third_moments_by_mpmath(self):
        mu = 2.0
        pmf = lambda k: mp.e ** (-mu) * mp.mpf(mu) ** k / mp.factorial(k)  # noqa: E731
        neg = sum(pmf(k) * (mu - k) ** 3 for k in range(0, 2))
        tot = sum(pmf(k) * abs(k - mu) ** 3 for k in range(0, 200))
        got = P._poisson_third_moments(mu)
        assert got == pytest.approx((float(neg), float(tot)), rel=1e-13)

    def test_bernstein_condition_exact(self):
        spec = P.BernsteinTwoPoint(p=0.2, a=-1.0, b=4.0, n=5)
        law, eps = spec.step_law(), spec.bernstein_eps
        var = law.moment(2)
        for k in range(2, 9):
            assert abs(law.moment(k)) <= 0.5 * math.factorial(k) * eps ** (k - 2) * var * (1 + 1e-14)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=spec_id)
    def test_path_invariants(self, spec):
        for seed in range(5):
            path = P.sample_path(spec, rng(seed))
            assert np.all(np.diff(path.sq_var) >= 0)
            assert np.all(np.diff(path.cond_var) >= 0)
            if np.all(np.isfinite(path.neg_third)):
                assert np.all(path.neg_third <= path.abs_third * (1 + 1e-15))
            assert path.s[-1] == pytest.approx(path.xi.sum())
            assert path.max_s[-1] == path.s.max()
            assert path.max_diff == path.xi.max()


class TestEmpiricalLaws:
    @pytest.mark.parametrize("spec", ALL_SPECS, ids=spec_id)
    def test_mean_and_second_moment(self, spec):
        paths = max(1, 10 ** 6 // spec.n)
        batch = spec.sample(rng(), paths)
        xi = batch.xi
        cv = np.broadcast_to(batch.cond_var, xi.shape)
        # standardise by the conditional scale so every step weighs alike
        scale = np.sqrt(np.where(cv > 0, cv, 1.0))
        z = xi / scale
        se = z.std() / math.sqrt(z.size)
        if getattr(spec, "martingale", True):
            assert abs(z.mean()) <= 5 * se
        else:
            assert z.mean() <= 5 * se
        d = (xi * xi - cv) / (scale * scale)
        assert abs(d.mean()) <= 5 * d.std() / math.sqrt(d.size)

    def test_bounded_below_hard_bound(self):
        spec = P.BoundedBelowExponential(shift=-1.0, rate=1.0, n=50)
        assert np.all(spec.sample(rng(), 20_000).xi >= -1.0)

    @pytest.mark.parametrize("spec", [s for s in ALL_SPECS if s.symmetric], ids=spec_id)
    def test_sign_symmetry(self, spec):
        xi = spec.sample(rng(), max(1, 10 ** 6 // spec.n)).xi
        pos, neg = int(np.sum(xi > 0)), int(np.sum(xi < 0))
        # two-sample sign test: under symmetry pos ~ Binomial(pos + neg, 1/2)
        assert stats.binomtest(pos, pos + neg).pvalue > 1e-6

    def test_galton_watson_counts(self):
        spec = P.GaltonWatson(P.OffspringSpec("poisson", m=2.0), generations=4)
        counts = spec.sample_counts(rng(), 100_000)
        assert np.all(counts[:, 0] == 1)
        mean = counts[:, -1].mean()
        assert abs(mean - 16) <= 5 * counts[:, -1].std() / math.sqrt(counts.shape[0])


def three_point_batch(spec, xi):
    p, y = spec.p, spec.y
    ones = np.ones(spec.n)
    return P.PathBatch(
        xi=np.asarray(xi, dtype=float),
        cond_var=P._row(p * y * y * ones),
        neg_third=P._row(p * y ** 3 / 2 * ones),
        abs_third=P._row(p * y ** 3 * ones),
        proxy=P._row(P._proxy(y * ones, p * y * y * ones)),
    )


class TestEventHit:
    def test_always_true(self):
        path = P.sample_path(P.ThreePoint(y=1.0, v_sq=5.0, n=10), rng())
        for kind in P.EVENT_KINDS:
            assert P.event_hit(path, P.TailEvent(kind=kind, x=-1e30))

    def test_zero_budget(self):
        spec = P.RademacherWeighted((1.0, 1.0, 1.0))
        path = P.sample_path(spec, rng())
        assert not P.event_hit(path, P.TailEvent(x=0.5, sq_var=0.0))

    @pytest.mark.parametrize("n", range(1, 9))
    def test_exhaustive_all_up(self, n):
        spec = P.ThreePoint(y=1.0, v_sq=0.5 * n, n=n)
        outcomes = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))
        hits = P.batch_hits(three_point_batch(spec, outcomes), P.TailEvent(x=float(n)))
        assert hits.sum() == 1
        assert np.all(outcomes[hits] == 1.0)

    @pytest.mark.parametrize("n", [3, 5, 7])
    def test_exhaustive_against_brute_force(self, n):
        spec = P.ThreePoint(y=1.0, v_sq=0.5 * n, n=n)
        outcomes = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))
        batch = three_point_batch(spec, outcomes)
        x, budget = 2.0, 2.0
        got = P.batch_hits(batch, P.TailEvent(x=x, sq_var=budget))
        want = []
        for row in outcomes:
            s, q = np.cumsum(row), np.cumsum(row * row)
            want.append(bool(np.any((s >= x) & (q <= budget))))
        assert np.array_equal(got, want)

    def test_exists_k_checks_clauses_at_same_k(self):
        # S reaches 2 at k=2 with [S]_2 = 2; the budget is blown only later
        xi = np.array([[1.0, 1.0, -3.0, 0.0]])
        batch = three_point_batch(P.ThreePoint(y=3.0, v_sq=1.0, n=4), xi)
        assert P.batch_hits(batch, P.TailEvent(x=2.0, sq_var=2.0))[0]
        # endpoint semantics evaluates [S]_n = 11 instead
        assert not P.batch_hits(batch, P.TailEvent(kind="max_endpoint", x=2.0, sq_var=2.0))[0]
        # budget exceeded before S reaches x
        xi2 = np.array([[-3.0, 3.0, 2.0, 0.0]])
        batch2 = three_point_batch(P.ThreePoint(y=3.0, v_sq=1.0, n=4), xi2)
        assert not P.batch_hits(batch2, P.TailEvent(x=2.0, sq_var=10.0))[0]

    def test_negated(self):
        xi = np.array([[-1.0, -1.0, 0.0]])
        batch = three_point_batch(P.ThreePoint(y=1.0, v_sq=1.0, n=3), xi)
        assert not P.batch_hits(batch, P.TailEvent(x=2.0))[0]
        assert P.batch_hits(batch, P.TailEvent(x=2.0, negated=True))[0]

    def test_self_normalized_zero_over_zero(self):
        xi = np.zeros((1, 4))
        batch = three_point_batch(P.ThreePoint(y=1.0, v_sq=1.0, n=4), xi)
        assert not P.batch_hits(batch, P.TailEvent(kind="self_normalized", x=0.1))[0]
        assert P.batch_hits(batch, P.TailEvent(kind="self_normalized", x=0.0))[0]

    def test_self_normalized_value(self):
        xi = np.array([[1.0, 1.0, 1.0, -1.0]])
        batch = three_point_batch(P.ThreePoint(y=1.0, v_sq=1.0, n=4), xi)
        assert P.batch_hits(batch, P.TailEvent(kind="self_normalized", x=1.5))[0]
        assert not P.batch_hits(batch, P.TailEvent(kind="self_normalized", x=1.5 + 1e-9))[0]

    def test_event_validation(self):
        with pytest.raises(ConfigurationError):
            P.TailEvent(kind="sometimes")
        with pytest.raises(ConfigurationError):
            P.TailEvent(kind="self_normalized", x=1.0, sq_var=1.0)

    def test_event_budget_views(self):
        ev = P.TailEvent(x=1.0, sq_var=4.0, neg_third=0.5)
        assert ev.v_sq == 4.0 and ev.w == 0.5
        assert ev.budgets() == [("sq_var", 4.0), ("neg_third", 0.5)]
        assert P.TailEvent(x=1.0, negated=True).kind_label == "negated_exists_k"

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=12), st.floats(-3, 3), st.floats(0, 6))
    def test_max_endpoint_brute_force(self, xs, x, budget):
        xi = np.array([xs])
        batch = three_point_batch(P.ThreePoint(y=2.0, v_sq=0.1, n=len(xs)), xi)
        got = P.batch_hits(batch, P.TailEvent(kind="max_endpoint", x=x, sq_var=budget))[0]
        s = np.cumsum(xs)
        want = s.max() >= x and float(np.sum(xi * xi)) <= budget * (1 + 1e-12)
        assert got == want


class TestCsvAndSerialisation:
    def test_path_csv(self):
        path = P.sample_path(P.ThreePoint(y=1.0, v_sq=10.0, n=20), rng())
        text = path.to_csv()
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["k", "xi", "s", "sq_var", "cond_var", "neg_third", "abs_third", "v_sum"]
        assert len(rows) == 21
        assert [int(r[0]) for r in rows[1:]] == list(range(1, 21))
        back = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
        assert np.array_equal(back[:, 1], path.s)
        assert np.array_equal(back[:, 3], path.cond_var)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=spec_id)
    def test_dict_round_trip(self, spec):
        assert P.spec_from_dict(P.spec_to_dict(spec)) == spec

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            P.spec_from_dict({"variant": "levy_flight"})


class TestExactChernoff:
    def test_small_x(self):
        assert P.exact_chernoff_three_point(1e-12, 1.0, 10.0, 20) == pytest.approx(1.0, abs=1e-10)

    def test_matches_tight(self):
        exact = P.exact_chernoff_three_point(4.0, 1.0, 10.0, 20)
        tight, _ = B.fuk_nagaev_bounds(4.0, 1.0, math.sqrt(10.0), 20)
        assert exact == pytest.approx(tight.value, rel=1e-10)

    def test_independent_scan(self):
        # grid scan then mpmath root of the derivative, independent of the package optimizer
        x, y, v_sq, n = 4, 1, 10, 20
        p = mp.mpf(v_sq) / (n * y * y)
        f = lambda t: -t * x + n * mp.log(1 + p * (mp.cosh(t * y) - 1))  # noqa: E731
        grid = [i / 100 for i in range(1, 400)]
        t0 = min(grid, key=lambda t: f(mp.mpf(t)))
        t_star = mp.findroot(lambda t: mp.diff(f, t), t0)
        exact = P.exact_chernoff_three_point(x, y, v_sq, n)
        assert exact == pytest.approx(float(mp.e ** f(t_star)), rel=1e-12)

    @pytest.mark.parametrize("lam", [0.1, 1.0, 3.0])
    def test_step_mgf(self, lam):
        spec = P.ThreePoint(y=1.5, v_sq=4.0, n=10)
        law = spec.step_law()
        brute = math.fsum(p * math.exp(lam * v) for v, p in zip(law.values, law.probs))
        closed = 1 + spec.p * (math.cosh(lam * 1.5) - 1)
        assert brute == pytest.approx(closed, rel=1e-14)
        assert math.exp(law.log_mgf(lam)) == pytest.approx(closed, rel=1e-14)

    def test_preconditions(self):
        with pytest.raises(DomainError):
            P.exact_chernoff_three_point(0.0, 1.0, 10.0, 20)
        with pytest.raises(DomainError):
            P.exact_chernoff_three_point(1.0, 1.0, 30.0, 20)
