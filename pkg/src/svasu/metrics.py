"""
Reconstruction and abundance scoring.

RMSE follows the column-vector convention: squared errors are summed over
the rows of each column (bands, or library entries) and averaged over the
columns (pixels), with no division by the row count. A per-entry variant,
divided by the row count as well, is reported alongside for comparison
with other work.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatchError, PreconditionError

SRE_CAP_DB = 300.0


def _pair(X, Xh):
    X = np.asarray(X, dtype=np.float64)
    Xh = np.asarray(Xh, dtype=np.float64)
    if X.shape != Xh.shape:
        raise DimensionMismatchError(f"shapes differ: {X.shape} vs {Xh.shape}")
    if X.ndim == 1:
        X, Xh = X[:, None], Xh[:, None]
    return X, Xh


def rmse(X, Xh):
    """``sqrt(mean_j ||x_j - xh_j||^2)`` over the columns ``j``."""
    X, Xh = _pair(X, Xh)
    if X.shape[1] == 0:
        return 0.0
    diff = X - Xh
    return float(np.sqrt(np.einsum("ij,ij->", diff, diff) / X.shape[1]))


def rmse_per_entry(X, Xh):
    X, Xh = _pair(X, Xh)
    if X.size == 0:
        return 0.0
    return rmse(X, Xh) / np.sqrt(X.shape[0])


def sre_db(X, Xh):
    """Signal-to-reconstruction error in dB; ``X`` is the reference.

    An exact reconstruction returns the finite cap ``SRE_CAP_DB``.
    """
    X, Xh = _pair(X, Xh)
    signal = float(np.einsum("ij,ij->", X, X))
    if signal == 0.0:
        raise PreconditionError("reference signal is all zero")
    diff = X - Xh
    error = float(np.einsum("ij,ij->", diff, diff))
    if error == 0.0:
        return SRE_CAP_DB
    return float(min(10.0 * np.log10(signal / error), SRE_CAP_DB))


def _row_correlation(T, E):
    Tc = T - T.mean(axis=1, keepdims=True)
    Ec = E - E.mean(axis=1, keepdims=True)
    tn = np.linalg.norm(Tc, axis=1)
    en = np.linalg.norm(Ec, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (Tc @ Ec.T) / np.outer(tn, en)
    # constant rows carry no ordering information
    return np.nan_to_num(C, nan=0.0, posinf=0.0, neginf=0.0)


def align_rows(truth, est):
    """Reorder ``est`` rows to match ``truth`` by greedy max correlation.

    The truth/estimate pair with the highest Pearson correlation is matched
    first, then the next best among the remaining rows, and so on (ties
    broken by row index). Estimated rows left unmatched are dropped; truth
    rows left unmatched are paired with zeros.

    Returns
    -------
    aligned : ndarray, same shape as ``truth``
    mapping : list of int
        ``mapping[i]`` is the estimate row assigned to truth row ``i``, or -1.
    """
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if truth.shape[1] != est.shape[1]:
        raise DimensionMismatchError(f"truth has {truth.shape[1]} pixels, estimate has {est.shape[1]}")
    C = _row_correlation(truth, est)
    order = np.argsort(-C, axis=None, kind="stable")
    mapping = [-1] * truth.shape[0]
    used = set()
    remaining = min(truth.shape[0], est.shape[0])
    for flat in order:
        if remaining == 0:
            break
        i, j = divmod(int(flat), est.shape[0])
        if mapping[i] != -1 or j in used:
            continue
        mapping[i] = j
        used.add(j)
        remaining -= 1
    aligned = np.zeros_like(truth)
    for i, j in enumerate(mapping):
        if j >= 0:
            aligned[i] = est[j]
    return aligned, mapping


def aggregate_classes(est, class_offsets):
    """Sum abundance rows within each library class."""
    est = np.asarray(est, dtype=np.float64)
    return np.vstack([est[a:b].sum(axis=0) for a, b in class_offsets])


def config_hash(*configs):
    """Short stable digest of JSON-serializable configuration objects."""
    payload = json.dumps(configs, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class EvalReport:
    """Scores of one unmixing run.

    ``rmse_r`` / ``sre_r_db`` describe the pixel reconstruction actually
    produced by the method: second order (``MA + VB``) when variability
    coefficients were supplied, first order (``MA``) otherwise. Both
    orders are also reported separately.
    """

    rmse_r: float
    sre_r_db: float
    rmse_a: float = None
    sre_a_db: float = None
    per_endmember_rmse: list = None
    config_hash: str = ""
    rmse_r_first: float = None
    sre_r_first_db: float = None
    rmse_r_second: float = None
    sre_r_second_db: float = None
    residual_norm_first: float = None
    residual_norm_second: float = None
    residual_ratio: float = None
    rmse_r_per_entry: float = None
    rmse_a_per_entry: float = None
    rmse_a_by_class: float = None
    sre_a_by_class_db: float = None
    row_mapping: list = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def evaluate_run(truth_A, est_A, cube, M, V=None, est_B=None, class_offsets=(), cfg_hash=""):
    """Score abundances (when ground truth exists) and pixel reconstructions.

    Parameters
    ----------
    truth_A : ndarray (p, n) or None
        Reference abundances; ``None`` for real data.
    est_A : ndarray (m, n)
    cube : ndarray (b, n)
        Observed pixels, the reference for reconstruction scores.
    M : ndarray (b, m)
    V, est_B : ndarray, optional
        Variability library and coefficients for the second-order term.
    class_offsets : sequence of (start, stop)
        Library classes; enables the class-summed abundance scores.
    """
    est_A = np.asarray(est_A, dtype=np.float64)
    R = np.asarray(cube, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if M.shape[1] != est_A.shape[0]:
        raise DimensionMismatchError(f"library has {M.shape[1]} columns, abundances have {est_A.shape[0]} rows")
    if M.shape[0] != R.shape[0] or est_A.shape[1] != R.shape[1]:
        raise DimensionMismatchError("library, abundances and cube are not conformable")

    first = M @ est_A
    report = EvalReport(
        rmse_r=0.0,
        sre_r_db=0.0,
        config_hash=cfg_hash,
        rmse_r_first=rmse(R, first),
        sre_r_first_db=sre_db(R, first),
        residual_norm_first=float(np.linalg.norm(R - first)),
    )
    recon = first
    if V is not None and est_B is not None:
        V = np.asarray(V, dtype=np.float64)
        est_B = np.asarray(est_B, dtype=np.float64)
        if V.shape[1] != est_B.shape[0] or V.shape[0] != R.shape[0] or est_B.shape[1] != R.shape[1]:
            raise DimensionMismatchError(
                f"variability library {V.shape} and coefficients {est_B.shape} are not conformable"
            )
        recon = first + V @ est_B
        report.rmse_r_second = rmse(R, recon)
        report.sre_r_second_db = sre_db(R, recon)
        report.residual_norm_second = float(np.linalg.norm(R - recon))
        if report.residual_norm_first > 0:
            report.residual_ratio = report.residual_norm_second / report.residual_norm_first
    report.rmse_r = rmse(R, recon)
    report.sre_r_db = sre_db(R, recon)
    report.rmse_r_per_entry = rmse_per_entry(R, recon)

    if truth_A is not None:
        truth_A = np.asarray(truth_A, dtype=np.float64)
        if truth_A.shape[1] != est_A.shape[1]:
            raise DimensionMismatchError(f"truth has {truth_A.shape[1]} pixels, estimate has {est_A.shape[1]}")
        aligned, mapping = align_rows(truth_A, est_A)
        report.rmse_a = rmse(truth_A, aligned)
        report.sre_a_db = sre_db(truth_A, aligned)
        report.rmse_a_per_entry = rmse_per_entry(truth_A, aligned)
        report.per_endmember_rmse = [
            float(np.sqrt(np.mean((t - a) ** 2))) for t, a in zip(truth_A, aligned)
        ]
        report.row_mapping = mapping
        if class_offsets:
            summed, _ = align_rows(truth_A, aggregate_classes(est_A, class_offsets))
            report.rmse_a_by_class = rmse(truth_A, summed)
            report.sre_a_by_class_db = sre_db(truth_A, summed)
    return report


def band_mean_error_map(cube, recon, height, width):
    """Band-averaged absolute error per pixel as a ``height x width`` grid."""
    err = np.abs(np.asarray(cube) - np.asarray(recon)).mean(axis=0)
    return err.reshape(height, width)
