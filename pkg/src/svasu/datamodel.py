"""
Matrix-shaped domain types, file I/O and the sum-to-one pseudo band.

Conventions
-----------
Every matrix follows the column-per-pixel / column-per-signature layout:

* a cube is ``b x n`` (bands by pixels, pixel index ``row * width + col``),
* a library is ``b x m`` (bands by signatures),
* abundances are ``m x n`` and variability coefficients ``l x n``.

All containers copy their input and mark the stored arrays read-only, so
they can be shared freely between threads and stages.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CsvFormatError,
    DimensionMismatchError,
    HeaderError,
    MissingFileError,
    NonFiniteError,
    PreconditionError,
    SizeMismatchError,
)

LIBRARY_KINDS = ("in_situ", "endmember", "variability")

# soft sum-to-one cannot be exact; used when checking ASC-enabled output
ASC_TOLERANCE = 1e-2


def _frozen(values, ndim=2):
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise PreconditionError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HyperCube:
    """Observed image ``R`` stored as ``b x n`` with its pixel grid shape."""

    data: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        data = _frozen(self.data)
        object.__setattr__(self, "data", data)
        if self.height < 1 or self.width < 1:
            raise PreconditionError("height and width must be positive")
        if data.shape[1] != self.height * self.width:
            raise DimensionMismatchError(
                f"cube has {data.shape[1]} pixels, grid is {self.height}x{self.width}"
            )
        if not np.isfinite(data).all():
            raise NonFiniteError("data", "cube contains NaN or Inf")

    @property
    def band_count(self):
        return self.data.shape[0]

    @property
    def n_pixels(self):
        return self.data.shape[1]

    def as_image(self):
        """Return a ``(height, width, bands)`` view-copy of the cube."""
        return self.data.T.reshape(self.height, self.width, self.band_count)

    @classmethod
    def from_image(cls, image):
        image = np.asarray(image, dtype=np.float64)
        h, w, b = image.shape
        return cls(image.reshape(h * w, b).T, h, w)


@dataclass(frozen=True, eq=False)
class SpectralLibrary:
    """Column-stacked signatures, optionally partitioned into material classes.

    ``class_offsets`` is a tuple of ``(start, stop)`` column ranges that
    cover ``[0, m)`` in order; an empty tuple means unpartitioned.
    """

    signatures: np.ndarray
    class_offsets: tuple = ()
    kind: str = "in_situ"

    def __post_init__(self):
        sig = _frozen(self.signatures)
        object.__setattr__(self, "signatures", sig)
        if self.kind not in LIBRARY_KINDS:
            raise PreconditionError(f"unknown library kind {self.kind!r}")
        if sig.shape[1] < 1:
            raise PreconditionError("library must hold at least one signature")
        if not np.isfinite(sig).all():
            raise NonFiniteError("signatures", "library contains NaN or Inf")
        if self.kind != "variability" and (sig < 0).any():
            raise PreconditionError(f"{self.kind} library must be nonnegative")
        offsets = tuple((int(a), int(b)) for a, b in self.class_offsets)
        if offsets:
            expected = 0
            for start, stop in offsets:
                if start != expected or stop <= start:
                    raise PreconditionError(f"class offsets {offsets} do not partition columns")
                expected = stop
            if expected != sig.shape[1]:
                raise PreconditionError(f"class offsets end at {expected}, library has {sig.shape[1]}")
        object.__setattr__(self, "class_offsets", offsets)

    @property
    def band_count(self):
        return self.signatures.shape[0]

    @property
    def size(self):
        return self.signatures.shape[1]

    @property
    def n_classes(self):
        return len(self.class_offsets)

    def class_labels(self):
        """Class index of every column, or ``None`` when unpartitioned."""
        if not self.class_offsets:
            return None
        labels = np.empty(self.size, dtype=np.int64)
        for i, (start, stop) in enumerate(self.class_offsets):
            labels[start:stop] = i
        return labels


@dataclass(frozen=True, eq=False)
class AbundanceMatrix:
    """Nonnegative fractions, one row per library column, one column per pixel."""

    values: np.ndarray
    asc_enabled: bool = False

    def __post_init__(self):
        vals = _frozen(self.values)
        object.__setattr__(self, "values", vals)
        if not np.isfinite(vals).all():
            raise NonFiniteError("values", "abundances contain NaN or Inf")
        if (vals < 0).any():
            raise PreconditionError("abundances must be nonnegative")
        if self.asc_enabled and vals.shape[1]:
            sums = vals.sum(axis=0)
            if np.abs(sums - 1.0).max() > ASC_TOLERANCE:
                raise PreconditionError("abundance columns do not sum to one")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class VariabilityCoefficients:
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        object.__setattr__(self, "values", vals)
        if not np.isfinite(vals).all():
            raise NonFiniteError("values", "coefficients contain NaN or Inf")
        if (vals < 0).any():
            raise PreconditionError("variability coefficients must be nonnegative")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class SolverConfig:
    """Controls for the two-order sparse unmixing solver.

    Parameters
    ----------
    alpha : float
        Weight of the second-order (variability) data-fit term.
    beta : float
        Weight of the row-sparsity (l2,1) penalty on abundances.
    gamma : float
        Weight of the Frobenius penalty on variability coefficients.
    epsilon : float
        Stabilizer inside the reweighting diagonal.
    max_iters : int
        Iteration cap. Zero returns the random initialization.
    rel_tol : float
        Stop once the relative objective change drops below this value.
    seed : int
        Seed for the random positive initialization.
    asc_enabled : bool
        Append the sum-to-one pseudo band before solving.
    asc_weight : float
        Magnitude of the pseudo band.
    """

    alpha: float = 9.0
    beta: float = 10.0
    gamma: float = 1e4
    epsilon: float = 1e-8
    max_iters: int = 1000
    rel_tol: float = 1e-6
    seed: int = 0
    asc_enabled: bool = False
    asc_weight: float = 10.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise PreconditionError(f"{name} must be finite and >= 0, got {value}")
        for name in ("epsilon", "rel_tol", "asc_weight"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise PreconditionError(f"{name} must be finite and > 0, got {value}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise PreconditionError(f"max_iters must be a nonnegative integer, got {self.max_iters}")
        if int(self.seed) != self.seed:
            raise PreconditionError("seed must be an integer")


# --------------------------------------------------------------------------
# cube raster I/O

_HEADER_KEYS = ("bands", "height", "width", "dtype", "interleave", "data_file")


def load_cube(header_path):
    """Read a band-sequential float32 cube described by a JSON header.

    The raster holds ``bands`` planes of ``height x width`` little-endian
    float32 values, each plane in row-major pixel order.
    """
    header_path = Path(header_path)
    if not header_path.is_file():
        raise MissingFileError("header", f"no such file {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise HeaderError("header", f"not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise HeaderError("header", "top level must be an object")
    for key in _HEADER_KEYS:
        if key not in header:
            raise HeaderError(key, "missing from header")
    for key in ("bands", "height", "width"):
        value = header[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise HeaderError(key, f"must be a positive integer, got {value!r}")
    if header["dtype"] != "f32":
        raise HeaderError("dtype", f"only 'f32' is supported, got {header['dtype']!r}")
    if header["interleave"] != "bsq":
        raise HeaderError("interleave", f"only 'bsq' is supported, got {header['interleave']!r}")

    data_path = header_path.parent / header["data_file"]
    if not data_path.is_file():
        raise MissingFileError("data_file", f"no such file {data_path}")
    bands, height, width = header["bands"], header["height"], header["width"]
    expected = bands * height * width * 4
    actual = data_path.stat().st_size
    if actual != expected:
        raise SizeMismatchError(
            "data_file", f"expected {expected} bytes for {bands}x{height}x{width}, found {actual}"
        )
    raw = np.fromfile(data_path, dtype="<f4")
    if not np.isfinite(raw).all():
        raise NonFiniteError("data_file", "raster contains NaN or Inf")
    return HyperCube(raw.reshape(bands, height * width).astype(np.float64), height, width)


def save_cube(cube, header_path, data_file=None):
    """Write ``cube`` as float32 BSQ plus JSON header; returns the header path."""
    header_path = Path(header_path)
    data_file = data_file or header_path.with_suffix(".bin").name
    header = {
        "bands": cube.band_count,
        "height": cube.height,
        "width": cube.width,
        "dtype": "f32",
        "interleave": "bsq",
        "data_file": data_file,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(cube.data, dtype="<f4").tofile(header_path.parent / data_file)
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    return header_path


# --------------------------------------------------------------------------
# CSV matrices


def save_matrix_csv(matrix, path):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise PreconditionError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise NonFiniteError(str(path), "matrix contains NaN or Inf")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in matrix:
            writer.writerow([format(float(v), ".17g") for v in row])


def load_matrix_csv(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path), "no such file")
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                raise CsvFormatError(f"{path}:{lineno}", "blank line")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}", f"unparseable cell in {row!r}") from None
            if rows and len(values) != len(rows[0]):
                raise CsvFormatError(
                    f"{path}:{lineno}", f"ragged row: {len(values)} cells, expected {len(rows[0])}"
                )
            rows.append(values)
    if not rows:
        raise CsvFormatError(str(path), "empty file")
    matrix = np.array(rows, dtype=np.float64)
    if not np.isfinite(matrix).all():
        raise NonFiniteError(str(path), "matrix contains NaN or Inf")
    return matrix


def save_library(library, csv_path):
    """Write a library as CSV plus a ``.json`` sidecar with kind and classes."""
    csv_path = Path(csv_path)
    save_matrix_csv(library.signatures, csv_path)
    meta = {"kind": library.kind, "class_offsets": [list(c) for c in library.class_offsets]}
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_library(csv_path, kind=None):
    """Read a library CSV; the sidecar is optional (plain CSV is unpartitioned)."""
    csv_path = Path(csv_path)
    signatures = load_matrix_csv(csv_path)
    sidecar = csv_path.with_suffix(".json")
    offsets, stored_kind = (), None
    if sidecar.is_file():
        try:
            meta = json.loads(sidecar.read_text())
            offsets = tuple(tuple(c) for c in meta.get("class_offsets", []))
            stored_kind = meta.get("kind")
        except (json.JSONDecodeError, AttributeError, TypeError) as exc:
            raise HeaderError(str(sidecar), f"malformed library sidecar ({exc})") from None
    return SpectralLibrary(signatures, offsets, kind or stored_kind or "in_situ")


# --------------------------------------------------------------------------
# sum-to-one pseudo band


def augment_pseudo_band(observed, library, delta):
    """Append a constant row ``delta`` to both the observations and the library.

    Solving the augmented least-squares problem penalizes
    ``delta**2 * (1 - sum(a))**2`` per pixel, i.e. a soft sum-to-one
    constraint whose strength grows with ``delta``.

    ``observed`` may be a :class:`HyperCube`, a :class:`SpectralLibrary` or a
    bare ``b x n`` array; the return value has the same type.
    """
    if not (delta > 0 and math.isfinite(delta)):
        raise PreconditionError(f"pseudo-band weight must be > 0, got {delta}")
    if isinstance(observed, HyperCube):
        obs = observed.data
    elif isinstance(observed, SpectralLibrary):
        obs = observed.signatures
    else:
        obs = np.asarray(observed, dtype=np.float64)
    lib = library.signatures if isinstance(library, SpectralLibrary) else np.asarray(library, float)
    if obs.shape[0] != lib.shape[0]:
        raise DimensionMismatchError(f"observations have {obs.shape[0]} bands, library has {lib.shape[0]}")

    obs_aug = np.vstack([obs, np.full((1, obs.shape[1]), float(delta))])
    lib_aug = np.vstack([lib, np.full((1, lib.shape[1]), float(delta))])

    if isinstance(observed, HyperCube):
        obs_aug = HyperCube(obs_aug, observed.height, observed.width)
    elif isinstance(observed, SpectralLibrary):
        obs_aug = SpectralLibrary(obs_aug, observed.class_offsets, observed.kind)
    if isinstance(library, SpectralLibrary):
        lib_aug = SpectralLibrary(lib_aug, library.class_offsets, library.kind)
    return obs_aug, lib_aug


__all__ = [
    "ASC_TOLERANCE",
    "AbundanceMatrix",
    "HyperCube",
    "SolverConfig",
    "SpectralLibrary",
    "VariabilityCoefficients",
    "augment_pseudo_band",
    "load_cube",
    "load_library",
    "load_matrix_csv",
    "save_cube",
    "save_library",
    "save_matrix_csv",
]
