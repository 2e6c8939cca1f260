import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from svasu.datamodel import SolverConfig
from svasu.errors import DimensionMismatchError, PreconditionError
from svasu.solver import (
    SolverState,
    baseline_sunsal,
    gradients,
    kkt_residual,
    l0_count,
    l11_norm,
    l21_norm,
    objective_terms,
    sunsal_objective,
    svasu_objective,
    svasu_solve,
    update_A,
    update_B,
    update_reweight,
)


def _naive_objective(R, M, V, A, B, beta, alpha, gamma, eps):
    # term by term with explicit loops over rows
    total = 0.0
    E1 = R - M @ A
    E2 = E1 - V @ B
    total += sum(float(e @ e) for e in E1)
    total += alpha * sum(float(e @ e) for e in E2)
    for row in A:
        norm2 = float(row @ row)
        total += beta * norm2 / (2.0 * np.sqrt(norm2 + eps))
    total += gamma * sum(float(b @ b) for b in B)
    return total


def _state(rng, m, l, n, eps=1e-8):
    A = rng.random((m, n)) + 0.05
    B = rng.random((l, n)) + 0.05
    return SolverState(A=A, B=B, D_diag=update_reweight(A, eps))


class TestNorms:
    def test_identity(self):
        I = np.eye(3)
        assert (l21_norm(I), l11_norm(I), l0_count(I, 1e-12)) == (3.0, 3.0, 3)

    def test_zero(self):
        Z = np.zeros((4, 2))
        assert (l21_norm(Z), l11_norm(Z), l0_count(Z)) == (0.0, 0.0, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_l21_below_l11(self, m, n, seed):
        A = np.random.default_rng(seed).standard_normal((m, n))
        assert l21_norm(A) <= l11_norm(A) + 1e-12


class TestObjective:
    def test_zero_iterates(self, rng):
        R, M, V = random_instance(rng, 6, 4, 3, 5)
        value = svasu_objective(R, M, V, np.zeros((4, 5)), np.zeros((3, 5)), 2.0, 3.0, 4.0, 1e-8)
        assert value == pytest.approx(4.0 * np.sum(R ** 2), rel=1e-14)

    def test_exact_fit(self, rng):
        M = rng.random((6, 4))
        A = rng.random((4, 5))
        V = rng.standard_normal((6, 2))
        value = svasu_objective(M @ A, M, V, A, np.zeros((2, 5)), 0.0, 3.0, 0.0, 1e-8)
        assert abs(value) < 1e-24

    def test_term_by_term(self, rng):
        R, M, V = random_instance(rng, 7, 5, 3, 6)
        A, B = rng.random((5, 6)), rng.random((3, 6))
        args = (2.0, 1.5, 0.7, 1e-8)
        value = svasu_objective(R, M, V, A, B, *args)
        assert value == pytest.approx(_naive_objective(R, M, V, A, B, *args), rel=1e-10)

    def test_forms(self, rng):
        R, M, V = random_instance(rng, 7, 5, 3, 6)
        A, B = rng.random((5, 6)), rng.random((3, 6))
        terms = objective_terms(R, M, V, A, B, 1e-8)
        l21 = svasu_objective(R, M, V, A, B, 2.0, 1.0, 1.0, 1e-8, form="l21")
        assert l21 == pytest.approx(terms["fit"] + terms["fit2"] + 2.0 * l21_norm(A) + terms["coef"], rel=1e-12)
        # the relaxed value with D from A is half the smoothed norm at eps -> 0
        relaxed = svasu_objective(R, M, V, A, B, 2.0, 1.0, 1.0, 1e-8)
        assert relaxed == pytest.approx(terms["fit"] + terms["fit2"] + l21_norm(A) + terms["coef"], rel=1e-6)

    def test_dimension_mismatch(self, rng):
        R, M, V = random_instance(rng, 7, 5, 3, 6)
        with pytest.raises(DimensionMismatchError):
            svasu_objective(R, M[:-1], V, np.ones((5, 6)), np.ones((3, 6)), 1, 1, 1, 1e-8)
        with pytest.raises(DimensionMismatchError):
            svasu_objective(R, M, V, np.ones((4, 6)), np.ones((3, 6)), 1, 1, 1, 1e-8)


class TestReweight:
    def test_zero_row(self):
        assert update_reweight(np.zeros((1, 3)), 1e-8)[0] == pytest.approx(5000.0, rel=1e-12)

    def test_unit_row(self):
        eps = 1e-8
        row = np.full((1, 4), np.sqrt((1 - eps) / 4))
        assert update_reweight(row, eps)[0] == pytest.approx(0.5, rel=1e-12)

    def test_bounds(self, rng):
        eps = 1e-6
        D = update_reweight(rng.random((6, 5)) * 3, eps)
        assert np.all(D > 0) and np.all(D <= 1 / (2 * np.sqrt(eps)))

    def test_gradient_of_smoothed_norm(self, rng):
        A = rng.random((5, 4)) + 0.1
        beta, eps, h = 3.0, 1e-8, 1e-6
        D = update_reweight(A, eps)
        analytic = beta * 2 * D[:, None] * A  # (D + D^T) A with diagonal D

        def f(X):
            return beta * np.sqrt(np.sum(X ** 2, axis=1) + eps).sum()

        fd = np.zeros_like(A)
        for idx in np.ndindex(A.shape):
            P, Q = A.copy(), A.copy()
            P[idx] += h
            Q[idx] -= h
            fd[idx] = (f(P) - f(Q)) / (2 * h)
        assert np.linalg.norm(fd - analytic) / np.linalg.norm(analytic) < 1e-5


class TestUpdates:
    def test_fixed_point_of_least_squares(self, rng):
        # nonnegative orthonormal columns need disjoint supports
        M = np.zeros((8, 3))
        M[0:3, 0] = 1 / np.sqrt(3)
        M[3:5, 1] = 1 / np.sqrt(2)
        M[5:8, 2] = 1 / np.sqrt(3)
        A = rng.random((3, 4)) + 0.1
        R = M @ A
        state = SolverState(A=A, B=np.zeros((0, 4)), D_diag=update_reweight(A, 1e-8))
        A_new = update_A(state, R, M, np.zeros((8, 0)), alpha=0.0, beta=0.0)
        np.testing.assert_allclose(A_new.values, A, rtol=1e-8)

    def test_alpha_zero_kills_b(self, rng):
        R, M, V = random_instance(rng, 8, 4, 3, 5)
        state = _state(rng, 4, 3, 5)
        assert np.all(update_B(state, R, M, np.abs(V), alpha=0.0, gamma=1.0).values == 0)

    def test_large_gamma_shrinks_b(self, rng):
        R, M, V = random_instance(rng, 8, 4, 3, 5)
        state = _state(rng, 4, 3, 5)
        B = update_B(state, R, M, V, alpha=1.0, gamma=1e12).values
        assert np.abs(B).max() < 1e-2 * state.B.max()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 20.0), st.floats(0.0, 20.0), st.floats(0.0, 100.0))
    def test_half_steps_monotone(self, seed, alpha, beta, gamma):
        rng = np.random.default_rng(seed)
        R, M, V = random_instance(rng, 9, 5, 4, 6)
        state = _state(rng, 5, 4, 6)
        eps = 1e-8

        def f(A, B):
            return svasu_objective(R, M, V, A, B, beta, alpha, gamma, eps, D=state.D_diag)

        f0 = f(state.A, state.B)
        A1 = update_A(state, R, M, V, alpha, beta).values
        f1 = f(A1, state.B)
        assert f1 <= f0 + 1e-9 * abs(f0)
        state.A = A1
        B1 = update_B(state, R, M, V, alpha, gamma).values
        assert f(A1, B1) <= f1 + 1e-9 * abs(f1)
        assert A1.min() >= 0 and B1.min() >= 0


class TestSolve:
    def test_zero_iterations(self, rng):
        R, M, V = random_instance(rng, 8, 4, 3, 5)
        A, B, report = svasu_solve(R, M, V, SolverConfig(max_iters=0, seed=3))
        init = np.random.default_rng(3)
        np.testing.assert_array_equal(A.values, 1.0 - init.random((4, 5)))
        np.testing.assert_array_equal(B.values, 1.0 - init.random((3, 5)))
        assert report.iterations == 0 and not report.converged

    def test_trace_non_increasing(self, rng):
        R, M, V = random_instance(rng, 30, 8, 6, 40)
        _, _, report = svasu_solve(R, M, V, SolverConfig(max_iters=300, rel_tol=1e-12), check_monotone=True)
        trace = np.array(report.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[:-1]))
        assert report.frozen_max_increase <= 1e-9
        assert len(report.relaxed_trace) == len(trace)

    def test_deterministic(self, rng):
        R, M, V = random_instance(rng, 20, 6, 4, 30)
        cfg = SolverConfig(max_iters=50, seed=11)
        first = svasu_solve(R, M, V, cfg)[2].objective_trace
        second = svasu_solve(R, M, V, cfg)[2].objective_trace
        assert first == second

    def test_empty_variability(self, rng):
        R, M, _ = random_instance(rng, 12, 5, 1, 10)
        A, B, report = svasu_solve(R, M, None, SolverConfig(max_iters=20))
        assert B.values.shape == (0, 10) and A.values.min() >= 0

    def test_scale_sanity(self, rng):
        R, M, _ = random_instance(rng, 12, 4, 1, 10)
        cfg = SolverConfig(alpha=0.0, beta=0.0, gamma=0.0, max_iters=3000, rel_tol=1e-14)
        r1 = svasu_solve(R, M, None, cfg)[2].objective_trace[-1]
        r2 = svasu_solve(3.0 * R, M, None, cfg)[2].objective_trace[-1]
        assert r2 == pytest.approx(9.0 * r1, rel=1e-4)

    def test_asc(self, rng):
        M = rng.random((20, 3))
        truth = rng.dirichlet(np.ones(3), 15).T
        cfg = SolverConfig(alpha=0.0, beta=1e-6, gamma=1.0, max_iters=5000, rel_tol=1e-12, asc_enabled=True,
                           asc_weight=10.0)
        A, _, _ = svasu_solve(M @ truth, M, None, cfg)
        assert np.abs(A.values.sum(axis=0) - 1).max() < 1e-2

    def test_rejects_bad_inputs(self, rng):
        R, M, V = random_instance(rng, 8, 4, 3, 5)
        with pytest.raises(PreconditionError):
            svasu_solve(R, -M, V)
        with pytest.raises(PreconditionError):
            svasu_solve(R, M, V, A0=np.zeros((4, 5)))
        with pytest.raises(DimensionMismatchError):
            svasu_solve(R, M, V[:-1])
        with pytest.raises(DimensionMismatchError):
            svasu_solve(R, M, V, A0=np.ones((3, 5)))

    def test_kkt_small_at_interior_optimum(self, rng):
        M = np.zeros((6, 2))
        M[:3, 0] = 1.0
        M[3:, 1] = 1.0
        A = rng.random((2, 4)) + 0.5
        R = M @ A
        value = kkt_residual(R, M, np.zeros((6, 0)), A, np.zeros((0, 4)), 1.0, 0.0, 0.0, 1e-8)
        assert value < 1e-12
        gA, gB = gradients(R, M, np.zeros((6, 0)), A, np.zeros((0, 4)), 1.0, 0.0, 0.0, 1e-8)
        assert np.abs(gA).max() < 1e-12 and gB.size == 0


class TestSunsal:
    def test_least_squares_limit(self, rng):
        M = rng.random((5, 5)) + np.eye(5)
        truth = rng.random((5, 7))
        A, report = baseline_sunsal(M @ truth, M, lam=0.0, tol=1e-12, max_iters=20000)
        assert np.linalg.norm(M @ truth - M @ A.values) < 1e-6
        np.testing.assert_allclose(A.values, np.maximum(np.linalg.solve(M, M @ truth), 0), atol=1e-6)

    def test_total_shrinkage(self, rng):
        R, M, _ = random_instance(rng, 10, 4, 1, 6)
        A, _ = baseline_sunsal(R, M, lam=1e6)
        assert np.all(A.values == 0)

    def test_report_and_objective(self, rng):
        R, M, _ = random_instance(rng, 10, 4, 1, 6)
        A, report = baseline_sunsal(R, M, lam=1e-2)
        assert report.converged and report.objective == pytest.approx(sunsal_objective(R, M, A, 1e-2))
        assert set(report.to_dict()) >= {"iterations", "converged", "objective"}

    def test_iteration_cap(self, rng):
        R, M, _ = random_instance(rng, 10, 4, 1, 6)
        _, report = baseline_sunsal(R, M, lam=1e-2, max_iters=2, tol=1e-15)
        assert report.iterations == 2 and not report.converged

    def test_errors(self, rng):
        R, M, _ = random_instance(rng, 10, 4, 1, 6)
        with pytest.raises(PreconditionError):
            baseline_sunsal(R, M, lam=-1.0)
        with pytest.raises(DimensionMismatchError):
            baseline_sunsal(R[:-1], M)
