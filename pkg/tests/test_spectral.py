import math

import numpy as np
from hypothesis import given, settings, strategies as st

from svasu.spectral import pairwise_angles, spectral_angle


def test_known_angles():
    assert spectral_angle([1, 0], [0, 1]) == math.pi / 2
    assert spectral_angle([1, 1], [2, 2]) == 0.0
    assert abs(spectral_angle([1, 0], [1, 1]) - math.pi / 4) < 1e-15
    assert spectral_angle([0, 0], [1, 2]) == math.pi / 2


def test_tiny_angle_resolution():
    u = np.array([1.0, 0.0, 0.0])
    v = np.array([1.0, 1e-9, 0.0])
    assert abs(spectral_angle(u, v) - 1e-9) < 1e-20


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 6))
def test_pairwise_matches_scalar(seed, b, m):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((b, m))
    Y = rng.standard_normal((b, m + 1))
    P = pairwise_angles(X, Y)
    for i in range(m):
        for j in range(m + 1):
            assert abs(P[i, j] - spectral_angle(X[:, i], Y[:, j])) < 1e-7


def test_self_angles():
    X = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    P = pairwise_angles(X)
    assert np.all(np.diag(P) == 0) and np.allclose(P, P.T)
    assert abs(P[0, 2] - math.pi / 4) < 1e-12
