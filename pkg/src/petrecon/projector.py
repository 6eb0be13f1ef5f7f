"""Parallel-beam scanner model: geometry, system matrix, subsets, caching.

The system matrix A maps a flattened rows x cols activity image (row-major,
pixel values in activity units) to a sinogram of n_angles * n_radial bins
(angle-major ordering: row = angle_index * n_radial + radial_index). Entries
are exact pixel/ray intersection chord lengths in mm, averaged over a fan of
sub-rays spanning the physical detector width, and optionally scaled per bin
by an attenuation factor exp(-integral of mu along the central ray).

Because the same stored sparse matrix is used for forward and back
projection, <A f, y> == <f, A^T y> holds to floating-point round-off by
construction.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_array

from . import _ray
from .errors import CacheError, GeometryError, ShapeError, SubsetError

_CACHE_MAGIC = b"SDPSM1"


@dataclass(frozen=True)
class ScannerGeometry:
    """2D parallel-beam acquisition geometry.

    Attributes
    ----------
    image_shape : (rows, cols) of the reconstruction grid, each >= 2.
    pixel_size_mm : square pixel side length.
    fov_mm : transaxial field of view spanned by the radial bins.
    n_angles : number of view angles, evenly spaced over [0, pi).
    n_radial : number of radial bins per view, centers evenly spaced
        across the field of view.
    detector_width_mm : physical detector aperture; sub-rays for one bin
        span this width around the bin center.
    rays_per_bin : number of equally spaced sub-rays averaged per bin.
    """

    image_shape: tuple[int, int]
    pixel_size_mm: float
    fov_mm: float
    n_angles: int
    n_radial: int
    detector_width_mm: float = 4.0
    rays_per_bin: int = 32

    def __post_init__(self):
        rows, cols = self.image_shape
        if rows < 2 or cols < 2:
            raise GeometryError(f"image_shape must be at least 2x2, got {self.image_shape}")
        if self.pixel_size_mm <= 0 or self.fov_mm <= 0:
            raise GeometryError("pixel_size_mm and fov_mm must be positive")
        if self.n_angles < 1 or self.n_radial < 1:
            raise GeometryError("n_angles and n_radial must be >= 1")
        if self.detector_width_mm <= 0:
            raise GeometryError("detector_width_mm must be positive")
        if self.rays_per_bin < 1:
            raise GeometryError("rays_per_bin must be >= 1")

    @property
    def n_bins(self) -> int:
        return self.n_angles * self.n_radial

    @property
    def n_pixels(self) -> int:
        return self.image_shape[0] * self.image_shape[1]

    @property
    def angles_rad(self) -> np.ndarray:
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    @property
    def radial_centers_mm(self) -> np.ndarray:
        step = self.fov_mm / self.n_radial
        return (np.arange(self.n_radial) + 0.5) * step - 0.5 * self.fov_mm

    @property
    def subray_offsets_mm(self) -> np.ndarray:
        m = self.rays_per_bin
        w = self.detector_width_mm
        return (np.arange(m) + 0.5) * (w / m) - 0.5 * w

    @classmethod
    def full_scale(cls) -> "ScannerGeometry":
        """256x256 grid at 1.17 mm, 288 views x 288 radial bins over 300 mm."""
        return cls(image_shape=(256, 256), pixel_size_mm=1.17, fov_mm=300.0,
                   n_angles=288, n_radial=288)

    @classmethod
    def desk_scale(cls) -> "ScannerGeometry":
        """64x64 grid covering the same 300 mm field, 72 views x 144 bins."""
        return cls(image_shape=(64, 64), pixel_size_mm=300.0 / 64, fov_mm=300.0,
                   n_angles=72, n_radial=144)


def geometry_hash(geometry: ScannerGeometry, attenuation_map: np.ndarray | None) -> int:
    """64-bit fingerprint of the geometry plus the attenuation map bytes."""
    h = hashlib.sha256()
    rows, cols = geometry.image_shape
    h.update(struct.pack(
        "<qqddqqdq", rows, cols, geometry.pixel_size_mm, geometry.fov_mm,
        geometry.n_angles, geometry.n_radial, geometry.detector_width_mm,
        geometry.rays_per_bin))
    if attenuation_map is None:
        h.update(b"no-attenuation")
    else:
        h.update(np.ascontiguousarray(attenuation_map, dtype="<f8").tobytes())
    return struct.unpack("<Q", h.digest()[:8])[0]


@dataclass
class SystemMatrix:
    """Sparse chord-length matrix with its generating geometry."""

    matrix: csr_array
    geometry: ScannerGeometry
    attenuation_map: np.ndarray | None = None
    fingerprint: int = field(default=0)

    def __post_init__(self):
        if self.matrix.shape != (self.geometry.n_bins, self.geometry.n_pixels):
            raise ShapeError(
                f"matrix shape {self.matrix.shape} does not match geometry "
                f"({self.geometry.n_bins}, {self.geometry.n_pixels})")
        if self.fingerprint == 0:
            self.fingerprint = geometry_hash(self.geometry, self.attenuation_map)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def column_sums(self) -> np.ndarray:
        """A^T 1, the sensitivity image as a flat vector."""
        return np.asarray(self.matrix.sum(axis=0)).ravel()


def _validate_attenuation(geometry: ScannerGeometry, mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != geometry.image_shape:
        raise ShapeError(
            f"attenuation map shape {mu.shape} does not match image {geometry.image_shape}")
    if not np.all(np.isfinite(mu)) or np.any(mu < 0):
        raise GeometryError("attenuation map must be finite and nonnegative")
    return mu


def attenuation_factors(geometry: ScannerGeometry, mu: np.ndarray) -> np.ndarray:
    """Per-bin survival factors exp(-central-ray line integral of mu).

    mu is in mm^-1 on the reconstruction grid.
    """
    mu = _validate_attenuation(geometry, mu)
    rows, cols = geometry.image_shape
    integrals = _ray.line_integrals(
        rows, cols, geometry.pixel_size_mm, geometry.angles_rad,
        geometry.radial_centers_mm, mu.ravel())
    return np.exp(-integrals)


def build_system_matrix(geometry: ScannerGeometry,
                        attenuation_map: np.ndarray | None = None,
                        cache_path: str | Path | None = None) -> SystemMatrix:
    """Trace the system matrix, or load it from cache_path if present.

    An existing cache file must match the requested geometry and attenuation
    map; a mismatch raises CacheError rather than silently rebuilding.
    """
    if attenuation_map is not None:
        attenuation_map = _validate_attenuation(geometry, attenuation_map)
    if cache_path is not None:
        cache_path = Path(cache_path)
        if cache_path.exists():
            return load_system_matrix(cache_path, geometry, attenuation_map)

    rows, cols = geometry.image_shape
    indptr, indices, data = _ray.build_entries(
        rows, cols, geometry.pixel_size_mm, geometry.angles_rad,
        geometry.radial_centers_mm, geometry.subray_offsets_mm)
    if attenuation_map is not None:
        factors = attenuation_factors(geometry, attenuation_map)
        data = data * np.repeat(factors, np.diff(indptr))
    matrix = csr_array((data, indices, indptr),
                       shape=(geometry.n_bins, geometry.n_pixels))
    result = SystemMatrix(matrix=matrix, geometry=geometry,
                          attenuation_map=attenuation_map)
    if cache_path is not None:
        save_system_matrix(cache_path, result)
    return result


def save_system_matrix(path: str | Path, system: SystemMatrix) -> None:
    """Write the CSR arrays with a little-endian header for reuse across runs."""
    m = system.matrix
    p, q = m.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<QQQQ", system.fingerprint, p, q, m.nnz))
        fh.write(np.ascontiguousarray(m.indptr, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(m.indices, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(m.data, dtype="<f8").tobytes())


def load_system_matrix(path: str | Path, geometry: ScannerGeometry,
                       attenuation_map: np.ndarray | None = None) -> SystemMatrix:
    """Load a cached matrix, verifying magic, fingerprint and dimensions."""
    path = Path(path)
    expected = geometry_hash(geometry, attenuation_map)
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise CacheError(f"{path}: not a system-matrix cache (bad magic {magic!r})")
        header = fh.read(32)
        if len(header) != 32:
            raise CacheError(f"{path}: truncated header")
        fingerprint, p, q, nnz = struct.unpack("<QQQQ", header)
        if fingerprint != expected:
            raise CacheError(
                f"{path}: cache fingerprint {fingerprint:#018x} does not match the "
                f"requested geometry/attenuation ({expected:#018x})")
        if (p, q) != (geometry.n_bins, geometry.n_pixels):
            raise CacheError(f"{path}: cached shape ({p}, {q}) does not match geometry")
        indptr = np.frombuffer(fh.read(8 * (p + 1)), dtype="<i8")
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
    if len(indptr) != p + 1 or len(indices) != nnz or len(data) != nnz:
        raise CacheError(f"{path}: truncated payload")
    matrix = csr_array((data.copy(), indices.copy(), indptr.copy()), shape=(p, q))
    return SystemMatrix(matrix=matrix, geometry=geometry,
                        attenuation_map=attenuation_map, fingerprint=fingerprint)


def forward_project(system: SystemMatrix, image: np.ndarray) -> np.ndarray:
    """A @ f for a flat or 2D image; returns the flat sinogram."""
    f = np.asarray(image, dtype=np.float64)
    if f.ndim == 2:
        if f.shape != system.geometry.image_shape:
            raise ShapeError(f"image shape {f.shape} does not match geometry")
        f = f.ravel()
    elif f.shape != (system.geometry.n_pixels,):
        raise ShapeError(f"flat image length {f.shape} does not match geometry")
    return system.matrix @ f


def back_project(system: SystemMatrix, sinogram: np.ndarray) -> np.ndarray:
    """A^T @ y; returns a flat image vector."""
    y = np.asarray(sinogram, dtype=np.float64)
    if y.shape != (system.geometry.n_bins,):
        raise ShapeError(f"sinogram length {y.shape} does not match geometry")
    return system.matrix.T @ y


def _radical_inverse_base2(n: int) -> float:
    v = 0.0
    b = 0.5
    while n:
        if n & 1:
            v += b
        n >>= 1
        b *= 0.5
    return v


@dataclass(frozen=True)
class SubsetPartition:
    """Angle-interleaved partition of sinogram rows into ordered subsets.

    Subset i owns view angles i, i+M, i+2M, ... so every subset sees the
    object from evenly spread directions. access_order is the within-iteration
    visiting order: subsets sorted by the base-2 radical inverse of their
    index, which reduces to classic bit reversal when M is a power of two and
    keeps consecutive subsets angularly far apart otherwise.
    """

    n_subsets: int
    index_sets: tuple[np.ndarray, ...]
    angle_sets: tuple[np.ndarray, ...]
    access_order: tuple[int, ...]

    def rows(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_subsets:
            raise SubsetError(f"subset index {i} out of range [0, {self.n_subsets})")
        return self.index_sets[i]


def partition_subsets(geometry: ScannerGeometry, n_subsets: int) -> SubsetPartition:
    """Split the sinogram rows into n_subsets angle-interleaved subsets."""
    m = int(n_subsets)
    if m < 1 or m > geometry.n_angles:
        raise SubsetError(
            f"n_subsets must be in [1, {geometry.n_angles}], got {n_subsets}")
    if geometry.n_angles % m != 0:
        raise SubsetError(
            f"n_subsets {m} must divide n_angles {geometry.n_angles}")
    nr = geometry.n_radial
    index_sets = []
    angle_sets = []
    for i in range(m):
        angles = np.arange(i, geometry.n_angles, m, dtype=np.int64)
        rows = (angles[:, None] * nr + np.arange(nr, dtype=np.int64)[None, :]).ravel()
        index_sets.append(rows)
        angle_sets.append(angles)
    order = np.argsort([_radical_inverse_base2(i) for i in range(m)], kind="stable")
    return SubsetPartition(
        n_subsets=m,
        index_sets=tuple(index_sets),
        angle_sets=tuple(angle_sets),
        access_order=tuple(int(i) for i in order),
    )
