import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from martbounds import _accel, kernels
from martbounds.errors import ConfigurationError

KINDS = (kernels.EXISTS, kernels.MAX_ENDPOINT, kernels.SELF_NORMALIZED)


def both(kind, xi, incs, thr, x, sign):
    a = kernels.scan(kind, xi, incs, thr, x, sign, backend="numba")
    b = kernels.scan(kind, xi, incs, thr, x, sign, backend="numpy")
    return a, b


paths = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.just(n)),
                   elements=st.sampled_from([-1.0, -0.5, 0.0, 0.5, 1.0, 2.0])),
        st.integers(0, 2),
    )
)


class TestBackendsAgree:
    @settings(max_examples=200, deadline=None)
    @given(paths, st.sampled_from(KINDS), st.floats(-3, 3), st.sampled_from([1.0, -1.0]),
           st.lists(st.floats(0, 6), min_size=2, max_size=2))
    def test_scan(self, path_spec, kind, x, sign, thr):
        xi, k = path_spec
        incs = np.stack([xi * xi, np.abs(xi)])[:k]
        if kind == kernels.SELF_NORMALIZED:
            incs = incs[:0]
        a, b = both(kind, xi, incs, thr[: incs.shape[0]], x, sign)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind", KINDS)
    def test_random_batches(self, kind):
        rng = np.random.default_rng(5)
        xi = rng.normal(size=(5000, 30)) * 0.2
        incs = np.stack([xi * xi, np.full_like(xi, 0.04)])
        thr = [1.0, 1.2]
        if kind == kernels.SELF_NORMALIZED:
            incs, thr = incs[:0], []
        for x in (0.0, 0.5, 1.0, 2.0):
            a, b = both(kind, xi, incs, thr, x, 1.0)
            assert np.array_equal(a, b)

    def test_ar1(self):
        eps = np.random.default_rng(2).uniform(-1, 1, (100, 40))
        a = kernels.ar1_paths(0.7, 1.0, eps, backend="numba")
        b = kernels.ar1_paths(0.7, 1.0, eps, backend="numpy")
        assert np.array_equal(a, b)
        assert np.all(a[:, 0] == 1.0)
        assert a[0, 1] == 0.7 + eps[0, 0]


class TestSemantics:
    def test_budget_slack(self):
        # ten steps of 0.1 sum to 0.9999999999999999, not exactly 1
        xi = np.full((1, 10), 0.1)
        incs = np.full((1, 1, 10), 0.1)
        for backend in ("numba", "numpy"):
            hit = kernels.scan(kernels.EXISTS, xi, incs, [1.0 - 1e-15], 1.0 - 1e-9, backend=backend)
            assert hit[0]

    def test_unknown_backend(self):
        with pytest.raises(ConfigurationError):
            kernels.scan(kernels.EXISTS, np.zeros((1, 1)), np.zeros((0, 1, 1)), [], 0.0, backend="cuda")
        with pytest.raises(ConfigurationError):
            kernels.ar1_paths(0.5, 0.0, np.zeros((1, 1)), backend="cuda")


class TestEnvironment:
    def run(self, code, **env):
        full = {**os.environ, **env}
        out = subprocess.run([sys.executable, "-c", code], env=full, capture_output=True, text=True, check=True)
        return out.stdout.strip()

    @pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("true", "numpy"), ("0", "numba"), ("", "numba")])
    def test_disable_flag(self, flag, expected):
        got = self.run("from martbounds import _accel; print(_accel.default_backend())",
                       MARTBOUNDS_DISABLE_NUMBA=flag)
        assert got == expected

    def test_workers(self, monkeypatch):
        monkeypatch.setenv("MARTBOUNDS_WORKERS", "3")
        assert _accel.worker_count() == 3
        monkeypatch.setenv("MARTBOUNDS_WORKERS", "0")
        with pytest.raises(ValueError):
            _accel.worker_count()
        monkeypatch.delenv("MARTBOUNDS_WORKERS")
        assert _accel.worker_count() >= 1
