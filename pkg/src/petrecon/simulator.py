"""Phantoms and emission-data simulation.

The count model per sinogram bin l is g_l ~ Poisson(T_l + S_l + R_l):

- T (trues): forward projection of the PSF-blurred activity through the
  attenuated system matrix, scaled so sum(T) = TC * (1 - RF) * (1 - SF);
- S (scatter): a radially smoothed copy of T, scaled so the scatter fraction
  S/(T+S) equals SF exactly in expectation, i.e. sum(S) = TC * (1 - RF) * SF;
- R (randoms): uniform, sum(R) = TC * RF.

Those scalings make sum(T+S+R) = TC and both fraction identities exact, so
tests can assert them to floating-point accuracy. The additive background
handed to the reconstruction is gamma = S + R (assumed known, the standard
precorrection-free convention), floored at 1e-10 only where the exact
expectation is zero so the log-likelihood stays finite.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .errors import PhantomError, ShapeError, SimulationError
from .projector import SystemMatrix, forward_project

# FWHM of a Gaussian = 2*sqrt(2*ln 2) * sigma
_FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))

WATER_MU_PER_MM = 0.0096  # 511 keV water attenuation, 0.096 cm^-1


@dataclass
class Phantom:
    """Activity image plus named region masks for figures of merit."""

    values: np.ndarray
    pixel_size_mm: float
    regions: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise PhantomError(f"phantom must be 2D, got ndim={self.values.ndim}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise PhantomError("phantom values must be finite and nonnegative")
        if self.pixel_size_mm <= 0:
            raise PhantomError("pixel_size_mm must be positive")
        for label, mask in self.regions.items():
            if mask.shape != self.values.shape:
                raise PhantomError(f"region {label!r} shape {mask.shape} "
                                   f"does not match phantom {self.values.shape}")


def _disk_mask(shape: tuple[int, int], center_rc: tuple[float, float],
               radius_px: float) -> np.ndarray:
    """Pixels within radius of center; never empty, so tiny grids still get
    one-pixel features instead of silently losing them."""
    rr, cc = np.indices(shape)
    mask = (rr - center_rc[0]) ** 2 + (cc - center_rc[1]) ** 2 <= radius_px ** 2
    nearest = (min(max(int(round(center_rc[0])), 0), shape[0] - 1),
               min(max(int(round(center_rc[1])), 0), shape[1] - 1))
    mask[nearest] = True
    return mask


def uniform_disk_phantom(image_shape: tuple[int, int] = (256, 256),
                         pixel_size_mm: float = 1.17) -> Phantom:
    """Uniform disk (value 1) with four hot disks (value 10) and two cold disks.

    Geometry is defined at 256x256 and scaled with the grid: background disk
    radius 0.45*N, hot radii (4, 6, 12, 14) px, cold radii (8, 10) px, all
    times N/256 with N = min(rows, cols). Feature centers sit on a ring of
    radius 0.55 times the background radius.
    """
    rows, cols = image_shape
    n = min(rows, cols)
    scale = n / 256.0
    center = ((rows - 1) / 2.0, (cols - 1) / 2.0)
    r_body = 0.45 * n
    ring = 0.55 * r_body

    values = np.zeros(image_shape, dtype=np.float64)
    regions: dict[str, np.ndarray] = {}

    body = _disk_mask(image_shape, center, r_body)
    values[body] = 1.0
    regions["body"] = body

    hot_radii = (4.0, 6.0, 12.0, 14.0)
    hot_angles_deg = (45.0, 135.0, 225.0, 315.0)
    for idx, (radius, ang) in enumerate(zip(hot_radii, hot_angles_deg), start=1):
        a = np.deg2rad(ang)
        c = (center[0] + ring * np.sin(a), center[1] + ring * np.cos(a))
        mask = _disk_mask(image_shape, c, radius * scale)
        values[mask] = 10.0
        regions[f"hot_{idx}"] = mask

    cold_radii = (8.0, 10.0)
    cold_angles_deg = (90.0, 270.0)
    for idx, (radius, ang) in enumerate(zip(cold_radii, cold_angles_deg), start=1):
        a = np.deg2rad(ang)
        c = (center[0] + ring * np.sin(a), center[1] + ring * np.cos(a))
        mask = _disk_mask(image_shape, c, radius * scale)
        values[mask] = 0.0
        regions[f"cold_{idx}"] = mask

    regions["background_roi"] = _disk_mask(image_shape, center, 25.0 * scale)
    return Phantom(values=values, pixel_size_mm=pixel_size_mm, regions=regions)


def water_attenuation_map(phantom: Phantom,
                          mu_per_mm: float = WATER_MU_PER_MM) -> np.ndarray:
    """Water-equivalent attenuation (mm^-1) over the phantom support.

    Uses the "body" region when the phantom defines one (so internal cold
    structures still attenuate); otherwise the support of the values.
    """
    support = phantom.regions.get("body")
    if support is None:
        support = phantom.values > 0
    return np.where(support, float(mu_per_mm), 0.0)


def save_phantom_txt(path: str | Path, phantom: Phantom) -> None:
    """Plain-text phantom: three header lines, then row-major values."""
    rows, cols = phantom.values.shape
    with open(path, "w") as fh:
        fh.write(f"rows {rows}\n")
        fh.write(f"cols {cols}\n")
        fh.write(f"pixel_size_mm {float(phantom.pixel_size_mm)!r}\n")
        for r in range(rows):
            fh.write(" ".join(repr(float(v)) for v in phantom.values[r]) + "\n")


def load_phantom_txt(path: str | Path) -> Phantom:
    """Parse the text format written by save_phantom_txt."""
    path = Path(path)
    with open(path) as fh:
        header = {}
        for key in ("rows", "cols", "pixel_size_mm"):
            line = fh.readline().split()
            if len(line) != 2 or line[0] != key:
                raise PhantomError(f"{path}: expected header line '{key} <value>', "
                                   f"got {' '.join(line)!r}")
            header[key] = line[1]
        try:
            rows, cols = int(header["rows"]), int(header["cols"])
            pixel = float(header["pixel_size_mm"])
        except ValueError as exc:
            raise PhantomError(f"{path}: malformed header: {exc}") from exc
        body = fh.read().split()
    if len(body) != rows * cols:
        raise PhantomError(
            f"{path}: expected {rows * cols} values, found {len(body)}")
    try:
        values = np.array([float(v) for v in body], dtype=np.float64)
    except ValueError as exc:
        raise PhantomError(f"{path}: non-numeric value: {exc}") from exc
    return Phantom(values=values.reshape(rows, cols), pixel_size_mm=pixel)


def blur_psf(image: np.ndarray, fwhm_mm: float, pixel_size_mm: float) -> np.ndarray:
    """Isotropic Gaussian detector-response blur with unit DC gain."""
    if fwhm_mm < 0:
        raise SimulationError("psf_fwhm_mm must be nonnegative")
    if fwhm_mm == 0:
        return np.asarray(image, dtype=np.float64).copy()
    sigma_px = fwhm_mm / _FWHM_PER_SIGMA / pixel_size_mm
    return gaussian_filter(np.asarray(image, dtype=np.float64),
                           sigma=sigma_px, mode="reflect")


@dataclass(frozen=True)
class SimulationSpec:
    """Count level, contamination fractions and detector blur for one run."""

    total_counts: float
    scatter_fraction: float = 0.25
    random_fraction: float = 0.25
    psf_fwhm_mm: float = 6.59
    scatter_fwhm_bins: float | None = None  # default: n_radial / 4
    seed: int = 0

    def __post_init__(self):
        if self.total_counts <= 0:
            raise SimulationError("total_counts must be positive")
        for name in ("scatter_fraction", "random_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise SimulationError(f"{name} must be in [0, 1), got {v}")
        if self.psf_fwhm_mm < 0:
            raise SimulationError("psf_fwhm_mm must be nonnegative")
        if self.scatter_fwhm_bins is not None and self.scatter_fwhm_bins <= 0:
            raise SimulationError("scatter_fwhm_bins must be positive")


@dataclass
class EmissionData:
    """One noise realization plus the exact expectations that generated it."""

    counts: np.ndarray            # int64 Poisson draws, length p
    background: np.ndarray        # gamma = scatter + randoms expectation
    expected_trues: np.ndarray
    expected_scatter: np.ndarray
    expected_randoms: np.ndarray
    spec: SimulationSpec
    geometry_fingerprint: int


def simulate_data(system: SystemMatrix, phantom: Phantom,
                  spec: SimulationSpec) -> EmissionData:
    """Draw one Poisson sinogram realization for phantom through system."""
    if phantom.values.shape != system.geometry.image_shape:
        raise ShapeError(
            f"phantom shape {phantom.values.shape} does not match geometry "
            f"{system.geometry.image_shape}")
    tc = float(spec.total_counts)
    sf = float(spec.scatter_fraction)
    rf = float(spec.random_fraction)
    target_t = tc * (1.0 - rf) * (1.0 - sf)
    target_s = tc * (1.0 - rf) * sf
    target_r = tc * rf

    blurred = blur_psf(phantom.values, spec.psf_fwhm_mm, phantom.pixel_size_mm)
    t_raw = forward_project(system, blurred)
    t_total = t_raw.sum()
    if t_total <= 0:
        raise SimulationError("phantom projects to an empty sinogram")
    t_mean = t_raw * (target_t / t_total)

    p = system.geometry.n_bins
    if target_s > 0:
        fwhm_bins = spec.scatter_fwhm_bins
        if fwhm_bins is None:
            fwhm_bins = system.geometry.n_radial / 4.0
        sigma_bins = fwhm_bins / _FWHM_PER_SIGMA
        views = t_mean.reshape(system.geometry.n_angles, system.geometry.n_radial)
        s_raw = gaussian_filter1d(views, sigma=sigma_bins, axis=1,
                                  mode="reflect").ravel()
        s_mean = s_raw * (target_s / s_raw.sum())
    else:
        s_mean = np.zeros(p)
    r_mean = np.full(p, target_r / p)

    rng = np.random.Generator(np.random.Philox(spec.seed))
    counts = rng.poisson(t_mean + s_mean + r_mean).astype(np.int64)
    background = np.maximum(s_mean + r_mean, 1e-10)
    return EmissionData(
        counts=counts, background=background, expected_trues=t_mean,
        expected_scatter=s_mean, expected_randoms=r_mean, spec=spec,
        geometry_fingerprint=system.fingerprint)


_EXPORT_ARRAYS = {
    "counts": ("counts.raw", "<i8"),
    "background": ("background.raw", "<f8"),
    "expected_trues": ("expected_trues.raw", "<f8"),
    "expected_scatter": ("expected_scatter.raw", "<f8"),
    "expected_randoms": ("expected_randoms.raw", "<f8"),
}


def export_emission_data(directory: str | Path, data: EmissionData) -> Path:
    """Write raw little-endian arrays plus a JSON manifest; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format": "emission-data-v1",
        "n_bins": int(len(data.counts)),
        "geometry_fingerprint": f"{data.geometry_fingerprint:#018x}",
        "spec": {
            "total_counts": data.spec.total_counts,
            "scatter_fraction": data.spec.scatter_fraction,
            "random_fraction": data.spec.random_fraction,
            "psf_fwhm_mm": data.spec.psf_fwhm_mm,
            "scatter_fwhm_bins": data.spec.scatter_fwhm_bins,
            "seed": data.spec.seed,
        },
        "arrays": {},
    }
    for attr, (fname, dtype) in _EXPORT_ARRAYS.items():
        payload = np.ascontiguousarray(getattr(data, attr), dtype=dtype).tobytes()
        (directory / fname).write_bytes(payload)
        manifest["arrays"][attr] = {
            "file": fname,
            "dtype": dtype,
            "sha256": hashlib.sha256(payload).hexdigest(),
        }
    manifest_path = directory / "emission.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_emission_data(directory: str | Path) -> EmissionData:
    """Inverse of export_emission_data, verifying checksums."""
    directory = Path(directory)
    manifest = json.loads((directory / "emission.json").read_text())
    if manifest.get("format") != "emission-data-v1":
        raise SimulationError(f"{directory}: unknown emission manifest format")
    arrays = {}
    for attr, entry in manifest["arrays"].items():
        payload = (directory / entry["file"]).read_bytes()
        if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
            raise SimulationError(f"{directory}/{entry['file']}: checksum mismatch")
        arrays[attr] = np.frombuffer(payload, dtype=entry["dtype"]).copy()
    spec = SimulationSpec(**manifest["spec"])
    return EmissionData(
        counts=arrays["counts"], background=arrays["background"],
        expected_trues=arrays["expected_trues"],
        expected_scatter=arrays["expected_scatter"],
        expected_randoms=arrays["expected_randoms"], spec=spec,
        geometry_fingerprint=int(manifest["geometry_fingerprint"], 16))
