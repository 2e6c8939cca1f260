"""Spectral-angle helpers."""

import numpy as np


def _unit_columns(X):
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return X / norms, norms


def spectral_angle(u, v):
    """Angle in radians between two spectra; pi/2 if either is all zero."""
    U, nu = _unit_columns(np.column_stack([u, v]))
    if nu[0] == 0 or nu[1] == 0:
        return np.pi / 2
    return float(2.0 * np.arctan2(np.linalg.norm(U[:, 0] - U[:, 1]), np.linalg.norm(U[:, 0] + U[:, 1])))


def pairwise_angles(X, Y=None):
    """Matrix of spectral angles between the columns of ``X`` and ``Y``.

    Resolution near zero is about 1e-8 rad (Gram-based); use
    :func:`spectral_angle` when two nearly identical spectra matter.
    """
    U, nu = _unit_columns(X)
    V, nv = (U, nu) if Y is None else _unit_columns(Y)
    g = U.T @ V
    # |u-v|^2 = 2 - 2g and |u+v|^2 = 2 + 2g for unit vectors
    d = np.sqrt(np.maximum(2.0 - 2.0 * g, 0.0))
    s = np.sqrt(np.maximum(2.0 + 2.0 * g, 0.0))
    ang = 2.0 * np.arctan2(d, s)
    ang[(nu == 0)[:, None] | (nv == 0)[None, :]] = np.pi / 2
    if Y is None:
        np.fill_diagonal(ang, 0.0)
    return ang
