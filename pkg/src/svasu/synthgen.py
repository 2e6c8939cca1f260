"""
Synthetic scenes for controlled unmixing experiments.

The protocol: smooth base signatures, Gaussian-perturbed variants forming
an in-situ library, sparse Dirichlet abundances with a cap on the number of
active materials per pixel, and a noisy linear mixture.

Every function takes an explicit seed and builds its own
``numpy.random.Generator``; nothing touches global random state.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .datamodel import AbundanceMatrix, HyperCube, SpectralLibrary
from .errors import DimensionMismatchError, PreconditionError, SvasuError
from .spectral import pairwise_angles

MIN_SEPARATION_DEG = 5.0
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class SynthConfig:
    n_pixels: int = 2500
    n_bands: int = 200
    n_endmembers: int = 5
    max_active: int = 4
    signature_snr_db: float = 30.0
    scene_snr_db: float = 40.0
    variability_copies: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_pixels < 1:
            raise PreconditionError("n_pixels must be positive")
        if self.n_endmembers < 1:
            raise PreconditionError("n_endmembers must be positive")
        if not 1 <= self.max_active <= self.n_endmembers:
            raise PreconditionError("max_active must lie in [1, n_endmembers]")
        if self.variability_copies < 1:
            raise PreconditionError("variability_copies must be >= 1")
        for name in ("signature_snr_db", "scene_snr_db"):
            value = getattr(self, name)
            # +inf is the documented 'noise disabled' sentinel
            if math.isnan(value) or value == -math.inf:
                raise PreconditionError(f"{name} must be a number or +inf")

    def to_dict(self):
        d = asdict(self)
        d["snr_convention"] = "per-signature power"
        return d


def generate_base_signatures(n_bands, n_endmembers, seed):
    """Smooth nonnegative stand-ins for laboratory mineral spectra.

    Each spectrum is a gently sloped positive continuum minus 3 to 8
    Gaussian absorption features, rescaled so its peak does not exceed 1.
    The whole set is redrawn until every pair is at least 5 degrees apart.
    """
    if n_bands < 8:
        raise PreconditionError(f"need at least 8 bands, got {n_bands}")
    if n_endmembers < 1:
        raise PreconditionError("need at least one endmember")
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, n_bands)
    for _ in range(MAX_ATTEMPTS):
        spectra = np.empty((n_bands, n_endmembers))
        for j in range(n_endmembers):
            level = rng.uniform(0.3, 0.8)
            slope = rng.uniform(-0.3, 0.3)
            curve = rng.uniform(-0.3, 0.3)
            spectrum = level + slope * (grid - 0.5) + curve * (grid - 0.5) ** 2
            for _ in range(rng.integers(3, 9)):
                center = rng.uniform(0.0, 1.0)
                width = rng.uniform(0.01, 0.12)
                depth = rng.uniform(0.05, 0.5) * level
                spectrum = spectrum - depth * np.exp(-0.5 * ((grid - center) / width) ** 2)
            spectrum = np.maximum(spectrum, 0.0)
            peak = spectrum.max()
            if peak > 1.0:
                spectrum = spectrum / peak
            spectra[:, j] = spectrum
        if n_endmembers == 1:
            return SpectralLibrary(spectra, kind="in_situ")
        angles = np.degrees(pairwise_angles(spectra))
        off_diag = angles[~np.eye(n_endmembers, dtype=bool)]
        if (spectra.max(axis=0) > 0).all() and off_diag.min() >= MIN_SEPARATION_DEG:
            return SpectralLibrary(spectra, kind="in_situ")
    raise SvasuError(
        f"could not draw {n_endmembers} signatures {MIN_SEPARATION_DEG} degrees apart "
        f"in {MAX_ATTEMPTS} attempts"
    )


def snr_to_sigma(signal, snr_db):
    """Noise standard deviation giving ``snr_db`` against ``mean(signal**2)``."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size == 0:
        raise PreconditionError("signal is empty")
    power = float(np.mean(signal ** 2))
    if power == 0.0:
        raise PreconditionError("signal has zero power")
    if snr_db == math.inf:
        return 0.0
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


def inject_signature_variability(base, signature_snr_db, copies, seed):
    """Append ``copies`` noisy variants after each base signature.

    The noise level of each variant is set from that signature's own power.
    Variants are clamped at zero; the result is class-partitioned with one
    class per base signature.
    """
    if copies < 0:
        raise PreconditionError("copies must be >= 0")
    rng = np.random.default_rng(seed)
    sig = base.signatures
    b, p = sig.shape
    columns, offsets = [], []
    for j in range(p):
        start = len(columns)
        columns.append(sig[:, j])
        sigma = snr_to_sigma(sig[:, j], signature_snr_db)
        for _ in range(copies):
            columns.append(np.maximum(sig[:, j] + sigma * rng.standard_normal(b), 0.0))
        offsets.append((start, len(columns)))
    return SpectralLibrary(np.column_stack(columns), tuple(offsets), "in_situ")


def sample_sparse_abundances(n_pixels, n_endmembers, max_active, seed):
    """Sparse abundances: uniform active-set size, flat Dirichlet fractions."""
    if not 1 <= max_active <= n_endmembers:
        raise PreconditionError("max_active must lie in [1, n_endmembers]")
    rng = np.random.default_rng(seed)
    k = rng.integers(1, max_active + 1, size=n_pixels)
    # a random permutation per pixel; its first k entries form the active set
    order = np.argsort(rng.random((n_pixels, n_endmembers)), axis=1)
    weights = rng.standard_exponential((n_pixels, n_endmembers))
    active = np.arange(n_endmembers)[None, :] < k[:, None]
    weights = np.where(active, weights, 0.0)
    fractions = weights / weights.sum(axis=1, keepdims=True)
    values = np.zeros((n_endmembers, n_pixels))
    rows = order
    cols = np.broadcast_to(np.arange(n_pixels)[:, None], order.shape)
    values[rows, cols] = fractions
    return AbundanceMatrix(values)


def grid_shape(n_pixels):
    """Squarest ``(height, width)`` factorization of ``n_pixels``."""
    h = int(math.isqrt(n_pixels))
    while n_pixels % h:
        h -= 1
    return h, n_pixels // h


def synthesize_cube(endmembers, abundances, scene_snr_db, seed, shape=None):
    """Noisy linear mixture ``E A + N``; the noise is not clamped."""
    E = endmembers.signatures if isinstance(endmembers, SpectralLibrary) else np.asarray(endmembers)
    A = abundances.values if isinstance(abundances, AbundanceMatrix) else np.asarray(abundances)
    if E.shape[1] != A.shape[0]:
        raise DimensionMismatchError(f"library has {E.shape[1]} columns, abundances have {A.shape[0]} rows")
    clean = E @ A
    sigma = snr_to_sigma(clean, scene_snr_db)
    rng = np.random.default_rng(seed)
    data = clean + sigma * rng.standard_normal(clean.shape) if sigma > 0 else clean
    height, width = shape or grid_shape(A.shape[1])
    return HyperCube(data, height, width)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: SynthConfig
    cube: HyperCube
    abundances: AbundanceMatrix
    base: SpectralLibrary
    insitu: SpectralLibrary

    @property
    def clean(self):
        return self.base.signatures @ self.abundances.values


def make_scene(config):
    """Run the full synthetic protocol; sub-seeds are derived from ``config.seed``."""
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    sub = [int(s.generate_state(1)[0]) for s in seeds]
    base = generate_base_signatures(config.n_bands, config.n_endmembers, sub[0])
    insitu = inject_signature_variability(base, config.signature_snr_db, config.variability_copies, sub[1])
    abundances = sample_sparse_abundances(config.n_pixels, config.n_endmembers, config.max_active, sub[2])
    cube = synthesize_cube(base, abundances, config.scene_snr_db, sub[3])
    return SyntheticScene(config, cube, abundances, base, insitu)
