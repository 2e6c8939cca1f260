"""Pure numpy implementations of the hot kernels.

These define the reference semantics; ``_ckernels.pyx`` must agree with
them to rounding.
"""

import numpy as np


def multiplicative_step(x, lin, den, neg=None, eta=1e-12):
    """Quartic-root multiplicative update of a nonnegative matrix.

    Computes ``x * ((max(lin, 0) + neg) / (den + max(-lin, 0) + eta)) ** 0.25``.

    ``lin`` is the signed linear coefficient of the quadratic objective,
    ``den`` the nonnegative curvature product and ``neg`` (optional) the
    product with the negative part of the Gram matrix.
    """
    pos_part = np.maximum(lin, 0.0)
    neg_part = np.maximum(-lin, 0.0)
    if neg is not None:
        pos_part = pos_part + neg
    ratio = pos_part / (den + neg_part + eta)
    return x * np.sqrt(np.sqrt(ratio))


def _angle(u, v, u_norm, v_norm):
    # 2*atan2(|u^-v^|, |u^+v^|) stays accurate for tiny angles
    with np.errstate(divide="ignore", invalid="ignore"):
        uu = u / u_norm[..., None]
        vv = v / v_norm[..., None]
    d = np.sqrt(((uu - vv) ** 2).sum(axis=-1))
    s = np.sqrt(((uu + vv) ** 2).sum(axis=-1))
    ang = 2.0 * np.arctan2(d, s)
    degenerate = (u_norm == 0) | (v_norm == 0)
    return np.where(degenerate, np.pi / 2, ang)


def window_scores(image, radius):
    """Centroid and mean spectral angle of every full ``(2r+1)^2`` window.

    Parameters
    ----------
    image : ndarray, shape (H, W, b)
    radius : int

    Returns
    -------
    scores : ndarray, shape (H - 2r, W - 2r)
        Mean angle (radians) between each window pixel and the window centroid.
    centroids : ndarray, shape (H - 2r, W - 2r, b)
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    h, w, b = image.shape
    d = 2 * radius + 1
    oh, ow = h - d + 1, w - d + 1
    centroids = np.zeros((oh, ow, b))
    for dy in range(d):
        for dx in range(d):
            centroids += image[dy:dy + oh, dx:dx + ow]
    centroids /= d * d
    c_norm = np.sqrt((centroids ** 2).sum(axis=-1))
    scores = np.zeros((oh, ow))
    for dy in range(d):
        for dx in range(d):
            px = image[dy:dy + oh, dx:dx + ow]
            scores += _angle(px, centroids, np.sqrt((px ** 2).sum(axis=-1)), c_norm)
    scores /= d * d
    return scores, centroids
