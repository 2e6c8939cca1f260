"""
Two-order sparse unmixing by multiplicative updates, plus an ADMM baseline.

The two-order model fits

    ||R - M A||_F^2 + alpha ||R - M A - V B||_F^2
        + beta ||A||_{2,1} + gamma ||B||_F^2,    A >= 0,

with the l2,1 term handled by iterative reweighting: for a fixed diagonal
``D_ii = 1 / (2 sqrt(||a_i||^2 + eps))`` it becomes ``beta Tr(A^T D A)``.
``A`` and ``B`` are updated alternately by quartic-root multiplicative
rules, each of which minimizes a quartic auxiliary function of the
fixed-``D`` objective, followed by a refresh of ``D``.

Notes
-----
The auxiliary-function argument needs nonnegative Gram matrices. The
variability library is mean-free in general, so ``V^T V`` may have negative
entries. Gram matrices are therefore split into positive and negative parts
``K = K+ - K-``; ``K- X~`` joins the numerator and ``K+ X~`` the
denominator. Negative parts of the linear coefficient go to the
denominator. When ``K-`` is zero this is exactly the plain rule with its
numerator clamped at zero. Both variants keep the fixed-``D`` objective
non-increasing.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .datamodel import AbundanceMatrix, HyperCube, SolverConfig, SpectralLibrary, VariabilityCoefficients
from .datamodel import augment_pseudo_band
from .errors import DimensionMismatchError, PreconditionError, SolverError
from .kernels import multiplicative_step

ETA = 1e-12


def _as_matrix(x):
    if isinstance(x, HyperCube):
        return x.data
    if isinstance(x, SpectralLibrary):
        return x.signatures
    if isinstance(x, (AbundanceMatrix, VariabilityCoefficients)):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _empty_variability(b):
    return np.zeros((b, 0))


def _check_dims(R, M, V, A=None, B=None):
    b, n = R.shape
    if M.shape[0] != b:
        raise DimensionMismatchError(f"cube has {b} bands, endmember library has {M.shape[0]}")
    if V.shape[0] != b:
        raise DimensionMismatchError(f"cube has {b} bands, variability library has {V.shape[0]}")
    if A is not None and A.shape != (M.shape[1], n):
        raise DimensionMismatchError(f"abundances are {A.shape}, expected {(M.shape[1], n)}")
    if B is not None and B.shape != (V.shape[1], n):
        raise DimensionMismatchError(f"coefficients are {B.shape}, expected {(V.shape[1], n)}")


# --------------------------------------------------------------------------
# norms


def l21_norm(A):
    """Sum of the Euclidean norms of the rows."""
    return float(np.linalg.norm(np.asarray(A, dtype=np.float64), axis=1).sum())


def l11_norm(A):
    return float(np.abs(np.asarray(A, dtype=np.float64)).sum())


def l0_count(A, tol=0.0):
    return int((np.abs(np.asarray(A)) > tol).sum())


# --------------------------------------------------------------------------
# objective pieces


def update_reweight(A, epsilon):
    """Reweighting diagonal ``1 / (2 sqrt(||a_i||^2 + eps))`` for each row."""
    if not epsilon > 0:
        raise PreconditionError("epsilon must be > 0")
    A = _as_matrix(A)
    return 1.0 / (2.0 * np.sqrt(np.einsum("ij,ij->i", A, A) + epsilon))


def objective_terms(R, M, V, A, B, epsilon, D=None):
    """Unweighted pieces of the objective.

    Returns a dict with ``fit`` (||R-MA||^2), ``fit2`` (||R-MA-VB||^2),
    ``trace`` (Tr(A^T D A), D from ``A`` unless given), ``l21``,
    ``smooth_l21`` (sum_i sqrt(||a_i||^2 + eps)) and ``coef`` (||B||^2).
    """
    R, M, V, A, B = (_as_matrix(x) for x in (R, M, V, A, B))
    _check_dims(R, M, V, A, B)
    first = R - M @ A
    second = first - V @ B
    rows = np.einsum("ij,ij->i", A, A)
    if D is None:
        D = update_reweight(A, epsilon)
    return {
        "fit": float(np.einsum("ij,ij->", first, first)),
        "fit2": float(np.einsum("ij,ij->", second, second)),
        "trace": float(np.dot(D, rows)),
        "l21": float(np.sqrt(rows).sum()),
        "smooth_l21": float(np.sqrt(rows + epsilon).sum()),
        "coef": float(np.einsum("ij,ij->", B, B)),
    }


def svasu_objective(R, M, V, A, B, beta, alpha, gamma, epsilon, D=None, form="relaxed"):
    """Objective value of the two-order model.

    ``form`` selects the sparsity term:

    * ``"relaxed"``: ``beta Tr(A^T D A)`` with ``D`` from the current ``A``
      (or the ``D`` passed in, which is how the per-update monotonicity is
      checked),
    * ``"l21"``: the unrelaxed ``beta ||A||_{2,1}``,
    * ``"smoothed"``: ``beta sum_i sqrt(||a_i||^2 + eps)``, the quantity the
      full iteration decreases monotonically.
    """
    t = objective_terms(R, M, V, A, B, epsilon, D)
    sparsity = {"relaxed": t["trace"], "l21": t["l21"], "smoothed": t["smooth_l21"]}[form]
    return t["fit"] + alpha * t["fit2"] + beta * sparsity + gamma * t["coef"]


def gradients(R, M, V, A, B, alpha, beta, gamma, epsilon):
    """Partial derivatives of the smoothed objective in ``A`` and ``B``.

    The sparsity part is ``beta (D + D^T) A`` with ``D`` from ``A``, the
    exact gradient of ``beta sum_i sqrt(||a_i||^2 + eps)``.
    """
    R, M, V, A, B = (_as_matrix(x) for x in (R, M, V, A, B))
    _check_dims(R, M, V, A, B)
    D = update_reweight(A, epsilon)
    first = M @ A - R
    second = first + V @ B
    grad_a = 2.0 * (M.T @ first + alpha * (M.T @ second)) + beta * 2.0 * D[:, None] * A
    grad_b = 2.0 * (alpha * (V.T @ second) + gamma * B)
    return grad_a, grad_b


def kkt_residual(R, M, V, A, B, alpha, beta, gamma, epsilon):
    """Largest complementarity product ``|grad * X|`` over ``A`` and ``B``."""
    ga, gb = gradients(R, M, V, A, B, alpha, beta, gamma, epsilon)
    A, B = _as_matrix(A), _as_matrix(B)
    worst = float(np.abs(ga * A).max()) if A.size else 0.0
    if B.size:
        worst = max(worst, float(np.abs(gb * B).max()))
    return worst


# --------------------------------------------------------------------------
# multiplicative updates


def _split(K):
    pos = np.maximum(K, 0.0)
    neg = pos - K
    return pos, (neg if neg.any() else None)


class _Products:
    """Library products reused by every iteration."""

    def __init__(self, R, M, V):
        self.MtR = M.T @ R
        self.MtV = M.T @ V
        self.VtR = V.T @ R
        self.VtM = self.MtV.T
        self.MtM = M.T @ M
        self.VtV = V.T @ V
        self.MtM_pos, self.MtM_neg = _split(self.MtM)
        self.VtV_pos, self.VtV_neg = _split(self.VtV)
        self.RtR = float(np.einsum("ij,ij->", R, R))

    def objectives(self, A, B, alpha, beta, gamma, epsilon):
        """Smoothed and relaxed objective values from the cached products.

        Expands the Frobenius norms so that only ``m x m`` and ``l x l``
        products are needed; accurate to roughly ``1e-16 ||R||^2``.
        """
        MA_proj = self.MtR - 0.5 * (self.MtM @ A)
        fit = self.RtR - 2.0 * np.einsum("ij,ij->", MA_proj, A)
        if B.shape[0]:
            cross = self.VtR - self.VtM @ A - 0.5 * (self.VtV @ B)
            fit2 = fit - 2.0 * np.einsum("ij,ij->", cross, B)
        else:
            fit2 = fit
        rows = np.einsum("ij,ij->i", A, A)
        smooth = np.sqrt(rows + epsilon)
        coef = np.einsum("ij,ij->", B, B)
        base = max(fit, 0.0) + alpha * max(fit2, 0.0) + gamma * coef
        return base + beta * smooth.sum(), base + beta * float(np.dot(rows, 0.5 / smooth))


def _step_a(P, A, B, D, alpha, beta, iteration=None):
    lin = (1.0 + alpha) * P.MtR
    if B.shape[0]:
        lin = lin - alpha * (P.MtV @ B)
    den = (1.0 + alpha) * (P.MtM_pos @ A) + beta * D[:, None] * A
    neg = None if P.MtM_neg is None else (1.0 + alpha) * (P.MtM_neg @ A)
    out = multiplicative_step(A, lin, den, neg, ETA)
    if not np.isfinite(out).all():
        raise SolverError("non-finite abundance update", iteration)
    return out


def _step_b(P, A, B, alpha, gamma, iteration=None):
    if not B.shape[0]:
        return B
    lin = alpha * (P.VtR - P.VtM @ A)
    den = alpha * (P.VtV_pos @ B) + gamma * B
    neg = None if P.VtV_neg is None else alpha * (P.VtV_neg @ B)
    out = multiplicative_step(B, lin, den, neg, ETA)
    if not np.isfinite(out).all():
        raise SolverError("non-finite coefficient update", iteration)
    return out


@dataclass
class SolverState:
    """Iterate of the two-order solver.

    ``D_diag`` is the reweighting diagonal the next abundance update uses.
    """

    A: np.ndarray
    B: np.ndarray
    D_diag: np.ndarray
    iter: int = 0
    objective_trace: list = field(default_factory=list)


def update_A(state, R, M, V, alpha, beta):
    """One multiplicative abundance update with ``B`` and ``D`` held fixed."""
    R, M, V = (_as_matrix(x) for x in (R, M, V))
    _check_dims(R, M, V, state.A, state.B)
    return AbundanceMatrix(_step_a(_Products(R, M, V), state.A, state.B, state.D_diag, alpha, beta, state.iter))


def update_B(state, R, M, V, alpha, gamma):
    """One multiplicative coefficient update with ``A`` held fixed."""
    R, M, V = (_as_matrix(x) for x in (R, M, V))
    _check_dims(R, M, V, state.A, state.B)
    return VariabilityCoefficients(_step_b(_Products(R, M, V), state.A, state.B, alpha, gamma, state.iter))


@dataclass
class SolverReport:
    iterations: int
    objective_trace: list
    relaxed_trace: list
    converged: bool
    wall_time: float
    frozen_max_increase: float = None
    backend: str = ""

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "objective_trace": self.objective_trace,
            "relaxed_trace": self.relaxed_trace,
            "frozen_max_increase": self.frozen_max_increase,
            "backend": self.backend,
        }


def _rel_increase(before, after):
    return (after - before) / max(abs(before), 1e-300)


def svasu_solve(R, M, V, cfg=SolverConfig(), A0=None, B0=None, check_monotone=False, callback=None):
    """Two-order sparse unmixing.

    Parameters
    ----------
    R : HyperCube or ndarray (b, n)
    M : SpectralLibrary or ndarray (b, m)
        Endmember library; must be nonnegative.
    V : SpectralLibrary, ndarray (b, l) or None
        Variability library. ``None`` or zero columns reduces the method to
        reweighted l2,1 sparse unmixing.
    cfg : SolverConfig
    A0, B0 : ndarray, optional
        Strictly positive starting points; random uniform on (0, 1] by default.
    check_monotone : bool
        Evaluate the fixed-``D`` objective around every half-step and record
        the largest relative increase in ``report.frozen_max_increase``.
    callback : callable, optional
        Called as ``callback(iteration, objective)`` after each iteration.

    Returns
    -------
    A : AbundanceMatrix
    B : VariabilityCoefficients
    report : SolverReport
        ``objective_trace`` holds the smoothed objective (initial value
        first), which never increases; ``relaxed_trace`` the relaxed value
        with ``D`` recomputed from the current ``A``.
    """
    from .kernels import BACKEND

    R, M = _as_matrix(R), _as_matrix(M)
    V = _empty_variability(R.shape[0]) if V is None else _as_matrix(V)
    _check_dims(R, M, V)
    if (M < 0).any():
        raise PreconditionError("endmember library must be nonnegative")
    if cfg.asc_enabled:
        R, M = augment_pseudo_band(R, M, cfg.asc_weight)
        V = np.vstack([V, np.zeros((1, V.shape[1]))])

    m, n, l = M.shape[1], R.shape[1], V.shape[1]
    rng = np.random.default_rng(cfg.seed)
    A = 1.0 - rng.random((m, n)) if A0 is None else np.array(_as_matrix(A0), dtype=np.float64)
    B = 1.0 - rng.random((l, n)) if B0 is None else np.array(_as_matrix(B0), dtype=np.float64)
    _check_dims(R, M, V, A, B)
    if (A <= 0).any() or (B <= 0).any():
        raise PreconditionError("initial A and B must be strictly positive")

    alpha, beta, gamma, eps = cfg.alpha, cfg.beta, cfg.gamma, cfg.epsilon
    P = _Products(R, M, V)
    D = update_reweight(A, eps)

    def relaxed(A, B, D):
        return svasu_objective(R, M, V, A, B, beta, alpha, gamma, eps, D=D)

    start = time.perf_counter()
    value, relaxed_value = P.objectives(A, B, alpha, beta, gamma, eps)
    trace, relaxed_trace = [value], [relaxed_value]
    worst = -np.inf if check_monotone else None
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        if check_monotone:
            f0 = relaxed(A, B, D)
        A = _step_a(P, A, B, D, alpha, beta, it)
        if check_monotone:
            f1 = relaxed(A, B, D)
        B = _step_b(P, A, B, alpha, gamma, it)
        if check_monotone:
            f2 = relaxed(A, B, D)
            worst = max(worst, _rel_increase(f0, f1), _rel_increase(f1, f2))
        D = update_reweight(A, eps)
        value, relaxed_value = P.objectives(A, B, alpha, beta, gamma, eps)
        if not np.isfinite(value):
            raise SolverError("objective is not finite", it)
        trace.append(value)
        relaxed_trace.append(relaxed_value)
        if callback is not None:
            callback(it, value)
        prev = trace[-2]
        if abs(prev - value) <= cfg.rel_tol * max(abs(prev), 1e-300):
            converged = True
            break

    report = SolverReport(
        iterations=it,
        objective_trace=trace,
        relaxed_trace=relaxed_trace,
        converged=converged,
        wall_time=time.perf_counter() - start,
        frozen_max_increase=None if worst is None else float(worst),
        backend=BACKEND,
    )
    return AbundanceMatrix(A, asc_enabled=False), VariabilityCoefficients(B), report


# --------------------------------------------------------------------------
# baseline: l1 sparse unmixing by ADMM


@dataclass
class SunsalReport:
    iterations: int
    converged: bool
    objective: float
    primal_residual: float
    dual_residual: float
    wall_time: float

    def to_dict(self):
        return dict(self.__dict__)


def sunsal_objective(R, M, A, lam):
    R, M, A = (_as_matrix(x) for x in (R, M, A))
    res = R - M @ A
    return 0.5 * float(np.einsum("ij,ij->", res, res)) + lam * float(np.abs(A).sum())


def baseline_sunsal(R, M, lam=1e-3, mu=None, max_iters=2000, tol=1e-6):
    """Nonnegative l1-regularized least squares by variable splitting.

    Solves ``min 1/2 ||R - M A||^2 + lam ||A||_{1,1}`` subject to ``A >= 0``
    with the split ``A = Z``: a Cholesky-factored quadratic step for ``A``,
    soft-thresholding plus projection for ``Z`` and a scaled dual update.
    The penalty ``mu`` is rebalanced when primal and dual residuals drift
    apart by more than a factor of ten.

    Stops when the RMS primal plus dual residual falls below ``tol``; the
    returned abundances are the best feasible ``Z`` seen.
    """
    R, M = _as_matrix(R), _as_matrix(M)
    if R.shape[0] != M.shape[0]:
        raise DimensionMismatchError(f"cube has {R.shape[0]} bands, library has {M.shape[0]}")
    if lam < 0:
        raise PreconditionError("lambda must be >= 0")
    start = time.perf_counter()
    m, n = M.shape[1], R.shape[1]
    G = M.T @ M
    MtR = M.T @ R
    if mu is None:
        mu = max(float(np.trace(G)) / m, 1e-12) * 0.1
    scale = np.sqrt(m * n)

    factor = linalg.cho_factor(G + mu * np.eye(m))
    Z = np.maximum(linalg.cho_solve(factor, MtR), 0.0)
    U = np.zeros_like(Z)
    best, best_obj = Z, sunsal_objective(R, M, Z, lam)
    r_norm = s_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        A = linalg.cho_solve(factor, MtR + mu * (Z - U))
        Z_old = Z
        Z = np.maximum(A + U - lam / mu, 0.0)
        U = U + A - Z
        r_norm = np.linalg.norm(A - Z) / scale
        s_norm = mu * np.linalg.norm(Z - Z_old) / scale
        obj = sunsal_objective(R, M, Z, lam)
        if obj <= best_obj:
            best, best_obj = Z, obj
        if r_norm + s_norm < tol:
            converged = True
            break
        if it % 10 == 0 and (r_norm > 10 * s_norm or s_norm > 10 * r_norm):
            ratio = 2.0 if r_norm > s_norm else 0.5
            mu *= ratio
            U /= ratio
            factor = linalg.cho_factor(G + mu * np.eye(m))
    report = SunsalReport(
        iterations=it,
        converged=converged,
        objective=float(best_obj),
        primal_residual=float(r_norm),
        dual_residual=float(s_norm),
        wall_time=time.perf_counter() - start,
    )
    return AbundanceMatrix(best), report
