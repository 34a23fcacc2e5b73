import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcforensics import _fallback, kernels

try:
    from tcforensics import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")
ints = st.lists(st.integers(1, 10**12), min_size=0, max_size=300)


def _same(a, b):
    if isinstance(a, float) and np.isnan(a):
        return isinstance(b, float) and np.isnan(b)
    return a == b


@needs_ext
class TestBackendsAgree:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 10**15), max_size=300))
    def test_interarrival(self, ts):
        ts = np.sort(np.array(ts, dtype=np.int64))
        a, da = _fallback.interarrival(ts)
        b, db = compiled.interarrival(ts)
        assert a.tolist() == b.tolist() and da == db

    @settings(max_examples=200, deadline=None)
    @given(ints, st.floats(0.01, 0.9))
    def test_group_starts(self, vals, k1):
        v = np.sort(np.array(vals, dtype=np.int64))
        assert _fallback.group_starts(v, k1).tolist() == compiled.group_starts(v, k1).tolist()

    @settings(max_examples=200, deadline=None)
    @given(ints)
    def test_ols_slope(self, vals):
        v = np.array(vals, dtype=np.int64)
        assert _fallback.ols_slope(v) == compiled.ols_slope(v)

    @settings(max_examples=200, deadline=None)
    @given(ints, st.floats(0.01, 0.9))
    def test_epsilon_fraction(self, vals, eps):
        v = np.sort(np.array(vals, dtype=np.int64))
        assert _same(_fallback.epsilon_fraction(v, eps), compiled.epsilon_fraction(v, eps))

    @settings(max_examples=200, deadline=None)
    @given(ints, st.integers(2, 20))
    def test_window_stats(self, vals, window):
        v = np.array(vals, dtype=np.int64)
        assert _fallback.window_sigmas(v, window).tolist() == compiled.window_sigmas(v, window).tolist()
        assert _same(_fallback.regularity(v, window, 10.0), compiled.regularity(v, window, 10.0))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if compiled is not None:
        assert kernels.BACKEND == "cython"


def test_env_forces_fallback():
    code = "import tcforensics.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, TCFORENSICS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_fallback_edge_cases():
    assert _fallback.ols_slope(np.array([5], dtype=np.int64)) == 0.0
    assert np.isnan(_fallback.epsilon_fraction(np.array([5], dtype=np.int64), 0.1))
    assert np.isnan(_fallback.regularity(np.array([1, 2, 3], dtype=np.int64), 2, 10.0))
    assert _fallback.group_starts(np.zeros(0, dtype=np.int64), 0.1).tolist() == []
