import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svasu import _fallback, kernels

try:
    from svasu import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _step_inputs(rng, shape, with_neg):
    x = rng.random(shape) + 1e-3
    lin = rng.standard_normal(shape)
    den = rng.random(shape)
    neg = rng.random(shape) if with_neg else None
    return x, lin, den, neg


class TestFallback:
    def test_fixed_point(self):
        x = np.array([[0.5, 2.0]])
        den = np.array([[1.0, 3.0]])
        out = _fallback.multiplicative_step(x, den.copy(), den, eta=0.0)
        np.testing.assert_array_equal(out, x)

    def test_negative_linear_shrinks(self):
        out = _fallback.multiplicative_step(np.ones((1, 1)), -np.ones((1, 1)), np.ones((1, 1)))
        assert out[0, 0] == 0.0

    def test_window_scores_constant(self):
        image = np.ones((4, 5, 3))
        scores, centroids = _fallback.window_scores(image, 1)
        assert scores.shape == (2, 3) and centroids.shape == (2, 3, 3)
        assert np.all(scores < 1e-7)
        np.testing.assert_allclose(centroids, 1.0)

    def test_window_zero_pixels(self):
        image = np.zeros((3, 3, 2))
        scores, _ = _fallback.window_scores(image, 1)
        assert scores[0, 0] == pytest.approx(np.pi / 2)


@needs_ext
class TestParity:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12), st.booleans())
    def test_multiplicative_step(self, seed, m, n, with_neg):
        x, lin, den, neg = _step_inputs(np.random.default_rng(seed), (m, n), with_neg)
        ref = _fallback.multiplicative_step(x, lin, den, neg, 1e-12)
        got = _ckernels.multiplicative_step(x, lin, den, neg, 1e-12)
        np.testing.assert_allclose(got, ref, rtol=1e-14, atol=0)

    def test_non_contiguous_inputs(self, rng):
        x, lin, den, neg = _step_inputs(rng, (6, 8), True)
        args = [a.T for a in (x, lin, den, neg)]
        np.testing.assert_allclose(_ckernels.multiplicative_step(*args), _fallback.multiplicative_step(*args),
                                   rtol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 2), st.integers(5, 9), st.integers(5, 9))
    def test_window_scores(self, seed, radius, h, w):
        rng = np.random.default_rng(seed)
        image = rng.random((h, w, 4))
        image[0, 0] = 0.0
        s_ref, c_ref = _fallback.window_scores(image, radius)
        s_got, c_got = _ckernels.window_scores(image, radius)
        np.testing.assert_allclose(s_got, s_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(c_got, c_ref, rtol=1e-12, atol=1e-15)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_switch():
    code = "from svasu import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, SVASU_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
