"""
In-situ library extraction and PCA segmentation.

The in-situ library is harvested from spatially homogeneous neighborhoods of
the image itself. PCA then splits it into a dominant-subspace part, the
endmember library, and a residual-subspace part, the variability library.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .datamodel import HyperCube, SpectralLibrary
from .errors import NoPureNeighborhoodError, PreconditionError
from .kernels import window_scores
from .spectral import pairwise_angles

DEFAULT_ZETA = 0.99
DEDUPE_ANGLE_DEG = 0.1


# --------------------------------------------------------------------------
# purity-based extraction


@dataclass(frozen=True)
class PurityConfig:
    """Parameters of the window-homogeneity candidate search.

    Parameters
    ----------
    window_radius : int
        Half-size ``r`` of the square ``(2r+1) x (2r+1)`` window.
    homogeneity_threshold : float
        Largest mean spectral angle (radians) between window pixels and
        the window centroid for the window to count as pure.
    max_candidates_per_class : int
        Number of representatives kept per material class.
    merge_angle : float
        Candidates whose centroids are closer than this angle (radians)
        belong to the same material.
    """

    window_radius: int = 1
    homogeneity_threshold: float = 0.02
    max_candidates_per_class: int = 5
    merge_angle: float = 0.03

    def __post_init__(self):
        if self.window_radius < 1 or int(self.window_radius) != self.window_radius:
            raise PreconditionError("window_radius must be a positive integer")
        if not self.homogeneity_threshold >= 0:
            raise PreconditionError("homogeneity_threshold must be >= 0")
        if self.max_candidates_per_class < 1:
            raise PreconditionError("max_candidates_per_class must be >= 1")
        if not 0 < self.merge_angle < math.pi / 2:
            raise PreconditionError("merge_angle must lie in (0, pi/2)")


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # smaller index wins so grouping is independent of visit order
            if rj < ri:
                ri, rj = rj, ri
            self.parent[rj] = ri


def extract_insitu_library(cube, cfg=PurityConfig(), block=2048):
    """Collect centroids of homogeneous windows and group them into classes.

    Two candidates join the same class when their windows share at least one
    pixel or their centroids are within ``cfg.merge_angle``; grouping is the
    transitive closure of both relations. Classes are ordered by the number
    of pixels their windows cover (largest first) and each keeps its
    ``max_candidates_per_class`` most homogeneous windows.
    """
    r = cfg.window_radius
    diameter = 2 * r + 1
    if cube.height < diameter or cube.width < diameter:
        raise PreconditionError(f"image {cube.height}x{cube.width} smaller than a {diameter}x{diameter} window")

    scores, centroids = window_scores(cube.as_image(), r)
    ys, xs = np.nonzero(scores <= cfg.homogeneity_threshold)
    if ys.size == 0:
        raise NoPureNeighborhoodError(
            f"no pure neighborhoods: best window mean angle is {scores.min():.4g} rad, "
            f"threshold is {cfg.homogeneity_threshold:.4g}; relax homogeneity_threshold"
        )
    cand = centroids[ys, xs].T
    cand_scores = scores[ys, xs]
    n = ys.size
    groups = _DisjointSet(n)

    # spatial overlap: window origins within 2r of each other in both axes
    index = {(int(y), int(x)): i for i, (y, x) in enumerate(zip(ys, xs))}
    span = 2 * r
    for i, (y, x) in enumerate(zip(ys, xs)):
        for dy in range(-span, span + 1):
            for dx in range(-span, span + 1):
                j = index.get((int(y) + dy, int(x) + dx))
                if j is not None and j > i:
                    groups.union(i, j)

    for lo in range(0, n, block):
        ang = pairwise_angles(cand[:, lo:lo + block], cand)
        ii, jj = np.nonzero(ang < cfg.merge_angle)
        for i, j in zip(ii + lo, jj):
            if j > i:
                groups.union(int(i), int(j))

    roots = np.array([groups.find(i) for i in range(n)])
    classes = []
    for root in np.unique(roots):
        members = np.flatnonzero(roots == root)
        covered = np.zeros((cube.height, cube.width), dtype=bool)
        for m in members:
            covered[ys[m]:ys[m] + diameter, xs[m]:xs[m] + diameter] = True
        # stable sort keeps row-major order among equal scores
        best = members[np.argsort(cand_scores[members], kind="stable")][: cfg.max_candidates_per_class]
        classes.append((-int(covered.sum()), int(members[0]), best))
    classes.sort(key=lambda c: (c[0], c[1]))

    columns, offsets = [], []
    for _, _, best in classes:
        start = len(columns)
        columns.extend(cand[:, k] for k in best)
        offsets.append((start, len(columns)))
    signatures = np.maximum(np.column_stack(columns), 0.0)
    return SpectralLibrary(signatures, tuple(offsets), "in_situ")


# --------------------------------------------------------------------------
# PCA segmentation


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Eigen-decomposition of the library covariance.

    ``eigvecs`` is ``b x r`` with columns ordered by descending eigenvalue;
    the first ``k`` span the dominant subspace.
    """

    mean: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    k: int

    def __post_init__(self):
        r = self.eigvecs.shape[1]
        if not 1 <= self.k <= r:
            raise PreconditionError(f"k={self.k} outside [1, {r}]")

    @property
    def rank(self):
        return self.eigvecs.shape[1]

    def with_k(self, k):
        return replace(self, k=int(k))

    def explained_fraction(self):
        total = self.eigvals.sum()
        return float(self.eigvals[: self.k].sum() / total) if total > 0 else 1.0


def _signatures(X):
    return X.signatures if isinstance(X, SpectralLibrary) else np.asarray(X, dtype=np.float64)


def select_k(eigvals, zeta):
    """Smallest ``k`` whose leading eigenvalues hold at least ``zeta`` of the total."""
    if not 0 < zeta <= 1:
        raise PreconditionError(f"zeta must lie in (0, 1], got {zeta}")
    vals = [float(v) for v in eigvals]
    if any(v < 0 for v in vals):
        raise PreconditionError("eigenvalues must be nonnegative")
    if any(a < b for a, b in zip(vals, vals[1:])):
        raise PreconditionError("eigenvalues must be sorted non-increasing")
    total = 0.0
    for v in vals:
        total += v
    if total == 0:
        raise PreconditionError("all eigenvalues are zero")
    running = 0.0
    for k, v in enumerate(vals, start=1):
        running += v
        if running / total >= zeta:
            return k
    # rounding can leave the full sum a hair below zeta == 1
    return len(vals)


def pca_decompose(X, zeta=DEFAULT_ZETA):
    """Covariance eigen-decomposition of a library (columns are samples).

    Keeps ``r = min(b, m)`` components. ``k`` is chosen with
    :func:`select_k`; a library with zero variance gets ``k = r``.
    """
    sig = _signatures(X)
    b, m = sig.shape
    if m < 2:
        raise PreconditionError("PCA needs at least two library columns")
    mean = sig.mean(axis=1)
    centered = sig - mean[:, None]
    cov = centered @ centered.T / m
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    r = min(b, m)
    vals = np.maximum(vals[order][:r], 0.0)
    vecs = vecs[:, order][:, :r]
    k = select_k(vals, zeta) if vals.sum() > 0 else r
    return PcaModel(mean, vecs, vals, k)


def dominant_component(X, model):
    """Projection of the centered library onto the leading ``k`` eigenvectors."""
    centered = _signatures(X) - model.mean[:, None]
    W = model.eigvecs[:, : model.k]
    return W @ (W.T @ centered)


def residual_component(X, model):
    """Projection of the centered library onto the trailing eigenvectors."""
    centered = _signatures(X) - model.mean[:, None]
    W = model.eigvecs[:, model.k:]
    return W @ (W.T @ centered)


def endmember_reconstruction(X, model):
    """Dominant reconstruction with the mean added back, before clamping."""
    return dominant_component(X, model) + model.mean[:, None]


def build_endmember_library(X, model):
    """Endmember library: dominant reconstruction, clamped to be nonnegative."""
    if not 1 <= model.k <= model.rank:
        raise PreconditionError(f"k={model.k} outside [1, {model.rank}]")
    offsets = X.class_offsets if isinstance(X, SpectralLibrary) else ()
    return SpectralLibrary(np.maximum(endmember_reconstruction(X, model), 0.0), offsets, "endmember")


def dedupe_columns(V, angle_deg=DEDUPE_ANGLE_DEG):
    """Drop zero columns and columns within ``angle_deg`` of an earlier kept one."""
    norms = np.linalg.norm(V, axis=0)
    scale = norms.max() if norms.size else 0.0
    if scale == 0:
        return V[:, :0]
    live = np.flatnonzero(norms > 1e-12 * scale)
    ang = pairwise_angles(V[:, live])
    limit = math.radians(angle_deg)
    kept = []
    for i in range(live.size):
        if all(ang[i, j] >= limit for j in kept):
            kept.append(i)
    return V[:, live[kept]]


def build_variability_library(X, model, add_mean=False, dedupe=True):
    """Variability library from the trailing principal subspace.

    With ``add_mean`` the library mean is added back to every column; the
    default leaves zero-mean residual atoms so that the first-order term
    alone carries the mean.
    """
    if model.k >= model.rank:
        raise PreconditionError(f"k={model.k} leaves no residual subspace (rank {model.rank})")
    V = residual_component(X, model)
    if add_mean:
        V = V + model.mean[:, None]
    if dedupe:
        V = dedupe_columns(V)
    if V.shape[1] == 0:
        raise PreconditionError("residual subspace carries no variability")
    return SpectralLibrary(V, (), "variability")


@dataclass(frozen=True, eq=False)
class Segmentation:
    model: PcaModel
    endmembers: SpectralLibrary
    variability: SpectralLibrary
    clamp_norm_ratio: float
    zeta: float

    def report(self):
        return {
            "k": int(self.model.k),
            "zeta": float(self.zeta),
            "eigvals": [float(v) for v in self.model.eigvals],
            "explained_fraction": self.model.explained_fraction(),
            "clamp_norm_ratio": float(self.clamp_norm_ratio),
            "endmember_columns": int(self.endmembers.size),
            "variability_columns": int(self.variability.size),
        }


def segment_library(X, zeta=DEFAULT_ZETA, add_mean=False):
    """PCA split of an in-situ library into endmember and variability parts."""
    model = pca_decompose(X, zeta)
    raw = endmember_reconstruction(X, model)
    clamped = np.maximum(raw, 0.0)
    denom = np.linalg.norm(raw)
    ratio = float(np.linalg.norm(raw - clamped) / denom) if denom > 0 else 0.0
    return Segmentation(
        model=model,
        endmembers=build_endmember_library(X, model),
        variability=build_variability_library(X, model, add_mean=add_mean),
        clamp_norm_ratio=ratio,
        zeta=zeta,
    )
