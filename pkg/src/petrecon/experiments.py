"""Experiment orchestration: configs, reproducible runs, trace files.

A YAML config fully determines a run. Reproducibility contract: two runs of
the same config write byte-identical trace CSVs, final images and manifests.
Wall-clock series are inherently non-deterministic, so they go to separate
timing CSVs that the manifest marks volatile.

Output layout for one experiment directory:

    system_matrix.bin        traced system matrix cache
    reference.ckpt           converged reference (written by emit_reference)
    <algo>_trace.csv         deterministic per-iteration series
    <algo>_timing.csv        wall-clock per iteration (volatile)
    <algo>_final.raw         final image, float64 little-endian, row-major
    manifest.json            config/problem hashes and file checksums
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import (ConfigError, ReconError, ReferenceMissingError,
                     ValidationError)
from .metrics import ROI, AngleTracker, TraceRecorder, build_rois
from .objective import ObjectiveSpec
from .optimizer import (RelaxationSchedule, SolverConfig, load_checkpoint,
                        osem_upper_bound, run, save_checkpoint)
from .preconditioner import PrecondConfig, normalize_variant
from .projector import ScannerGeometry, build_system_matrix, partition_subsets
from .simulator import (Phantom, SimulationSpec, load_phantom_txt,
                        save_phantom_txt, simulate_data, uniform_disk_phantom,
                        water_attenuation_map)

_SAFE_NAME = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")

DESK_IMAGE_DIM = 64
DESK_N_ANGLES = 72
DESK_N_RADIAL = 144


@dataclass(frozen=True)
class ReferenceConfig:
    """Protocol for the converged reference image."""

    n_iterations: int = 400
    n_subsets: int = 24
    lambda0: float = 1.0
    a: float = 0.1


@dataclass(frozen=True)
class AlgorithmConfig:
    """One algorithm entry: variant, subsets, schedule and scale knobs."""

    name: str
    variant: str
    n_subsets: int
    n_iterations: int
    lambda0: float = 1.0
    a: float = 0.1
    rho: float = 2.0
    delta1: float = 1.0
    delta2: float | None = None
    nu_min: float = 1.0
    nu_max: float = 2.0
    j0: int = 3
    j1: int = 1000

    def precond(self) -> PrecondConfig:
        return PrecondConfig(
            variant=self.variant, rho=self.rho, delta1=self.delta1,
            delta2=self.delta2, nu_min=self.nu_min, nu_max=self.nu_max,
            j0=self.j0, j1=self.j1)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/experiment"
    record_nrmsd: bool = True
    record_angles: bool = False
    angle_max_iterations: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    geometry: ScannerGeometry
    phantom_kind: str                 # "uniform" or "file"
    phantom_path: Path | None
    simulation: SimulationSpec
    beta: float
    gamma_r: float
    epsilon: float
    interior_t: float
    upper_bound: float | str          # positive number or "auto"
    reference: ReferenceConfig
    algorithms: tuple[AlgorithmConfig, ...]
    outputs: OutputConfig


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_name(value, what: str, violations: list[str]) -> None:
    if not isinstance(value, str) or not value:
        violations.append(f"{what} must be a non-empty string")
    elif not set(value) <= _SAFE_NAME:
        violations.append(f"{what} {value!r} may only use letters, digits, . _ -")


def _section(raw: dict, key: str, violations: list[str]) -> dict:
    sec = raw.get(key)
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        violations.append(f"section {key!r} must be a mapping")
        return {}
    return sec


def validate_raw(raw, config_dir: Path | None = None) -> list[str]:
    """Collect every violation in a raw config mapping; empty means valid."""
    if not isinstance(raw, dict):
        return ["config root must be a mapping"]
    v: list[str] = []
    _check_name(raw.get("name"), "name", v)

    geo = _section(raw, "geometry", v)
    geometry = None
    if geo or "geometry" in raw:
        try:
            geometry = _geometry_from(geo)
        except (ReconError, TypeError, KeyError) as exc:
            v.append(f"geometry: {exc}")
    else:
        v.append("missing section: geometry")

    ph = _section(raw, "phantom", v)
    kind = ph.get("kind", "uniform")
    if kind not in ("uniform", "file"):
        v.append(f"phantom.kind must be 'uniform' or 'file', got {kind!r}")
    elif kind == "file":
        path = ph.get("path")
        if not isinstance(path, str) or not path:
            v.append("phantom.path is required when phantom.kind is 'file'")
        else:
            resolved = (config_dir / path) if config_dir and not Path(path).is_absolute() else Path(path)
            if not resolved.exists():
                v.append(f"phantom.path does not exist: {resolved}")

    sim = _section(raw, "simulation", v)
    if sim or "simulation" in raw:
        try:
            _simulation_from(sim)
        except (ReconError, TypeError) as exc:
            v.append(f"simulation: {exc}")
    else:
        v.append("missing section: simulation")

    model = _section(raw, "model", v)
    beta = model.get("beta", 0.0)
    if not _is_number(beta) or beta < 0:
        v.append(f"model.beta must be a nonnegative number, got {beta!r}")
    gamma_r = model.get("gamma_r", 2.0)
    if not _is_number(gamma_r) or gamma_r < 0:
        v.append(f"model.gamma_r must be a nonnegative number, got {gamma_r!r}")
    epsilon = model.get("epsilon", 1e-12)
    if not _is_number(epsilon) or epsilon <= 0:
        v.append(f"model.epsilon must be a positive number, got {epsilon!r}")

    solver = _section(raw, "solver", v)
    t = solver.get("interior_t", 1e-4)
    if not _is_number(t) or t <= 0:
        v.append(f"solver.interior_t must be a positive number, got {t!r}")
    ub = solver.get("upper_bound", "auto")
    if ub != "auto":
        if not _is_number(ub) or ub <= 0:
            v.append(f"solver.upper_bound must be 'auto' or a positive number, got {ub!r}")
        elif _is_number(t) and t > 0 and not t < 0.5 * ub:
            v.append(f"solver.interior_t {t} must be below upper_bound/2 = {0.5 * ub}")

    ref = _section(raw, "reference", v)
    try:
        ref_cfg = _reference_from(ref)
        RelaxationSchedule(ref_cfg.lambda0, ref_cfg.a)
        if geometry is not None and geometry.n_angles % ref_cfg.n_subsets != 0:
            v.append(f"reference.n_subsets {ref_cfg.n_subsets} must divide "
                     f"n_angles {geometry.n_angles}")
        if ref_cfg.n_iterations < 1 or ref_cfg.n_subsets < 1:
            v.append("reference.n_iterations and n_subsets must be >= 1")
    except (ReconError, TypeError) as exc:
        v.append(f"reference: {exc}")

    algos = raw.get("algorithms")
    if not isinstance(algos, list) or not algos:
        v.append("algorithms must be a non-empty list")
        algos = []
    names = set()
    for idx, entry in enumerate(algos):
        where = f"algorithms[{idx}]"
        if not isinstance(entry, dict):
            v.append(f"{where} must be a mapping")
            continue
        _check_name(entry.get("name"), f"{where}.name", v)
        if entry.get("name") in names:
            v.append(f"{where}.name {entry.get('name')!r} is duplicated")
        names.add(entry.get("name"))
        try:
            alg = _algorithm_from(entry)
            alg.precond()
            RelaxationSchedule(alg.lambda0, alg.a)
            if alg.n_iterations < 1:
                v.append(f"{where}.n_iterations must be >= 1")
            if geometry is not None and geometry.n_angles % alg.n_subsets != 0:
                v.append(f"{where}.n_subsets {alg.n_subsets} must divide "
                         f"n_angles {geometry.n_angles}")
        except (ReconError, TypeError, KeyError) as exc:
            v.append(f"{where}: {exc}")

    out = _section(raw, "outputs", v)
    directory = out.get("directory", "runs/experiment")
    if not isinstance(directory, str) or not directory:
        v.append("outputs.directory must be a non-empty string")
    for flag in ("record_nrmsd", "record_angles"):
        if flag in out and not isinstance(out[flag], bool):
            v.append(f"outputs.{flag} must be a boolean")
    ami = out.get("angle_max_iterations")
    if ami is not None and (not isinstance(ami, int) or isinstance(ami, bool) or ami < 1):
        v.append(f"outputs.angle_max_iterations must be a positive integer, got {ami!r}")
    return v


def _geometry_from(geo: dict) -> ScannerGeometry:
    shape = geo["image_shape"]
    return ScannerGeometry(
        image_shape=(int(shape[0]), int(shape[1])),
        pixel_size_mm=float(geo["pixel_size_mm"]),
        fov_mm=float(geo["fov_mm"]),
        n_angles=int(geo["n_angles"]),
        n_radial=int(geo["n_radial"]),
        detector_width_mm=float(geo.get("detector_width_mm", 4.0)),
        rays_per_bin=int(geo.get("rays_per_bin", 32)),
    )


def _simulation_from(sim: dict) -> SimulationSpec:
    fwhm_bins = sim.get("scatter_fwhm_bins")
    return SimulationSpec(
        total_counts=float(sim["total_counts"]),
        scatter_fraction=float(sim.get("scatter_fraction", 0.25)),
        random_fraction=float(sim.get("random_fraction", 0.25)),
        psf_fwhm_mm=float(sim.get("psf_fwhm_mm", 6.59)),
        scatter_fwhm_bins=None if fwhm_bins is None else float(fwhm_bins),
        seed=int(sim.get("seed", 0)),
    )


def _reference_from(ref: dict) -> ReferenceConfig:
    return ReferenceConfig(
        n_iterations=int(ref.get("n_iterations", 400)),
        n_subsets=int(ref.get("n_subsets", 24)),
        lambda0=float(ref.get("lambda0", 1.0)),
        a=float(ref.get("a", 0.1)),
    )


def _algorithm_from(entry: dict) -> AlgorithmConfig:
    delta2 = entry.get("delta2")
    return AlgorithmConfig(
        name=str(entry["name"]),
        variant=normalize_variant(entry["variant"]),
        n_subsets=int(entry["n_subsets"]),
        n_iterations=int(entry["n_iterations"]),
        lambda0=float(entry.get("lambda0", 1.0)),
        a=float(entry.get("a", 0.1)),
        rho=float(entry.get("rho", 2.0)),
        delta1=float(entry.get("delta1", 1.0)),
        delta2=None if delta2 is None else float(delta2),
        nu_min=float(entry.get("nu_min", 1.0)),
        nu_max=float(entry.get("nu_max", 2.0)),
        j0=int(entry.get("j0", 3)),
        j1=int(entry.get("j1", 1000)),
    )


def config_from_raw(raw: dict, config_dir: Path | None = None) -> ExperimentConfig:
    """Typed config from an already-validated raw mapping."""
    violations = validate_raw(raw, config_dir)
    if violations:
        raise ValidationError(violations)
    ph = raw.get("phantom", {})
    kind = ph.get("kind", "uniform")
    path = None
    if kind == "file":
        path = Path(ph["path"])
        if config_dir is not None and not path.is_absolute():
            path = config_dir / path
    model = raw.get("model", {})
    solver = raw.get("solver", {})
    out = raw.get("outputs", {})
    return ExperimentConfig(
        name=raw["name"],
        geometry=_geometry_from(raw["geometry"]),
        phantom_kind=kind,
        phantom_path=path,
        simulation=_simulation_from(raw["simulation"]),
        beta=float(model.get("beta", 0.0)),
        gamma_r=float(model.get("gamma_r", 2.0)),
        epsilon=float(model.get("epsilon", 1e-12)),
        interior_t=float(solver.get("interior_t", 1e-4)),
        upper_bound=(solver.get("upper_bound", "auto")),
        reference=_reference_from(raw.get("reference", {})),
        algorithms=tuple(_algorithm_from(e) for e in raw["algorithms"]),
        outputs=OutputConfig(
            directory=out.get("directory", "runs/experiment"),
            record_nrmsd=out.get("record_nrmsd", True),
            record_angles=out.get("record_angles", False),
            angle_max_iterations=out.get("angle_max_iterations"),
        ),
    )


def packaged_config_path(name: str) -> Path:
    """Path of a preset config shipped inside the package."""
    candidate = resources.files("petrecon") / "configs" / f"{name}.yaml"
    with resources.as_file(candidate) as path:
        if not path.exists():
            raise ConfigError(f"no packaged config named {name!r}")
        return Path(path)


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a config file, or a packaged preset by name."""
    path = Path(path)
    if not path.exists() and path.suffix == "" and "/" not in str(path):
        path = packaged_config_path(str(path))
    raw = yaml.safe_load(path.read_text())
    return config_from_raw(raw, config_dir=path.resolve().parent)


def to_desk_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Shrink a full-size config to the 64x64 / 72-view desk problem.

    Pixel size is recomputed to cover the same field of view and total counts
    scale with the pixel-count ratio so per-pixel statistics stay comparable.
    """
    rows, cols = cfg.geometry.image_shape
    if max(rows, cols) <= DESK_IMAGE_DIM:
        return cfg
    geometry = ScannerGeometry(
        image_shape=(DESK_IMAGE_DIM, DESK_IMAGE_DIM),
        pixel_size_mm=cfg.geometry.fov_mm / DESK_IMAGE_DIM,
        fov_mm=cfg.geometry.fov_mm,
        n_angles=DESK_N_ANGLES,
        n_radial=DESK_N_RADIAL,
        detector_width_mm=cfg.geometry.detector_width_mm,
        rays_per_bin=cfg.geometry.rays_per_bin,
    )
    scale = (DESK_IMAGE_DIM / rows) * (DESK_IMAGE_DIM / cols)
    simulation = dataclasses.replace(
        cfg.simulation, total_counts=cfg.simulation.total_counts * scale)
    return dataclasses.replace(cfg, geometry=geometry, simulation=simulation)


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _problem_dict(cfg: ExperimentConfig) -> dict:
    """The sub-config that determines data, objective and feasible box."""
    phantom: dict = {"kind": cfg.phantom_kind}
    if cfg.phantom_kind == "file":
        phantom["sha256"] = hashlib.sha256(cfg.phantom_path.read_bytes()).hexdigest()
    return {
        "geometry": dataclasses.asdict(cfg.geometry),
        "phantom": phantom,
        "simulation": dataclasses.asdict(cfg.simulation),
        "model": {"beta": cfg.beta, "gamma_r": cfg.gamma_r, "epsilon": cfg.epsilon},
        "solver": {"interior_t": cfg.interior_t, "upper_bound": cfg.upper_bound},
        "reference": dataclasses.asdict(cfg.reference),
    }


def problem_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(_canonical_json(_problem_dict(cfg)).encode()).hexdigest()


def config_hash(cfg: ExperimentConfig) -> str:
    payload = _problem_dict(cfg)
    payload["algorithms"] = [dataclasses.asdict(a) for a in cfg.algorithms]
    payload["outputs"] = {
        "record_nrmsd": cfg.outputs.record_nrmsd,
        "record_angles": cfg.outputs.record_angles,
        "angle_max_iterations": cfg.outputs.angle_max_iterations,
    }
    return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


def _apply_overrides(cfg: ExperimentConfig, out_dir, seed,
                     desk_scale: bool) -> ExperimentConfig:
    if desk_scale:
        cfg = to_desk_scale(cfg)
    if seed is not None:
        cfg = dataclasses.replace(
            cfg, simulation=dataclasses.replace(cfg.simulation, seed=int(seed)))
    if out_dir is not None:
        cfg = dataclasses.replace(
            cfg, outputs=dataclasses.replace(cfg.outputs, directory=str(out_dir)))
    return cfg


def build_phantom(cfg: ExperimentConfig) -> Phantom:
    if cfg.phantom_kind == "uniform":
        return uniform_disk_phantom(cfg.geometry.image_shape,
                                    cfg.geometry.pixel_size_mm)
    phantom = load_phantom_txt(cfg.phantom_path)
    if phantom.values.shape != cfg.geometry.image_shape:
        raise ValidationError([
            f"phantom file shape {phantom.values.shape} does not match "
            f"geometry image_shape {cfg.geometry.image_shape}"])
    return phantom


def _build_problem(cfg: ExperimentConfig, out_dir: Path):
    phantom = build_phantom(cfg)
    mu = water_attenuation_map(phantom)
    system = build_system_matrix(cfg.geometry, mu,
                                 cache_path=out_dir / "system_matrix.bin")
    data = simulate_data(system, phantom, cfg.simulation)
    return phantom, system, data


def _resolve_upper_bound(cfg: ExperimentConfig, system, data) -> float:
    if cfg.upper_bound != "auto":
        return float(cfg.upper_bound)
    partition = partition_subsets(cfg.geometry, cfg.reference.n_subsets)
    spec = ObjectiveSpec(system, data.counts, data.background, beta=0.0,
                         partition=partition, gamma_r=cfg.gamma_r,
                         epsilon=cfg.epsilon)
    return osem_upper_bound(spec)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_format_cell(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


@dataclass
class RunProducts:
    """Everything a caller may want back from run_experiment."""

    config: ExperimentConfig
    out_dir: Path
    manifest_path: Path
    upper_bound: float
    reference_image: np.ndarray | None
    recorders: dict[str, TraceRecorder]
    trackers: dict[str, AngleTracker | None]
    final_images: dict[str, np.ndarray]
    trace_paths: dict[str, Path]


def reference_checkpoint_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / "reference.ckpt"


def emit_reference(cfg: ExperimentConfig, out_dir=None, seed=None,
                   desk_scale: bool = False) -> Path:
    """Run the reference protocol and store the converged image."""
    cfg = _apply_overrides(cfg, out_dir, seed, desk_scale)
    out = Path(cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    _, system, data = _build_problem(cfg, out)
    u = _resolve_upper_bound(cfg, system, data)
    partition = partition_subsets(cfg.geometry, cfg.reference.n_subsets)
    spec = ObjectiveSpec(system, data.counts, data.background, beta=cfg.beta,
                         partition=partition, gamma_r=cfg.gamma_r,
                         epsilon=cfg.epsilon)
    solver_cfg = SolverConfig(precond=PrecondConfig(variant="BSREM"),
                              upper_bound=u, interior_t=cfg.interior_t)
    schedule = RelaxationSchedule(cfg.reference.lambda0, cfg.reference.a)
    q = cfg.geometry.n_pixels
    final = run(np.ones(q), spec, solver_cfg, schedule, cfg.reference.n_iterations)
    path = reference_checkpoint_path(out)
    save_checkpoint(path, cfg.reference.n_iterations, final, problem_hash(cfg))
    return path


def _load_reference(cfg: ExperimentConfig, out: Path) -> np.ndarray:
    path = reference_checkpoint_path(out)
    if not path.exists():
        raise ReferenceMissingError(
            f"reference checkpoint {path} not found; run 'recon reference' first")
    _, image, stored_hash = load_checkpoint(path)
    expected = problem_hash(cfg)
    if stored_hash != expected:
        raise ReferenceMissingError(
            f"reference checkpoint {path} was built for a different problem "
            f"(hash {stored_hash[:12]}.. != {expected[:12]}..); regenerate it")
    if image.shape[0] != cfg.geometry.n_pixels:
        raise ReferenceMissingError(
            f"reference checkpoint {path} has {image.shape[0]} pixels, "
            f"expected {cfg.geometry.n_pixels}")
    return image


def run_experiment(cfg: ExperimentConfig, out_dir=None, seed=None,
                   desk_scale: bool = False) -> RunProducts:
    """Run every configured algorithm and write traces, images and manifest."""
    cfg = _apply_overrides(cfg, out_dir, seed, desk_scale)
    out = Path(cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    phantom, system, data = _build_problem(cfg, out)
    rois = build_rois(phantom) if cfg.outputs.record_nrmsd else ()
    u = _resolve_upper_bound(cfg, system, data)
    reference_image = _load_reference(cfg, out) if cfg.outputs.record_nrmsd else None

    recorders: dict[str, TraceRecorder] = {}
    trackers: dict[str, AngleTracker | None] = {}
    final_images: dict[str, np.ndarray] = {}
    trace_paths: dict[str, Path] = {}
    deterministic_files: list[Path] = []
    volatile_files: list[Path] = []

    q = cfg.geometry.n_pixels
    for alg in cfg.algorithms:
        partition = partition_subsets(cfg.geometry, alg.n_subsets)
        spec = ObjectiveSpec(system, data.counts, data.background,
                             beta=cfg.beta, partition=partition,
                             gamma_r=cfg.gamma_r, epsilon=cfg.epsilon)
        solver_cfg = SolverConfig(precond=alg.precond(), upper_bound=u,
                                  interior_t=cfg.interior_t)
        schedule = RelaxationSchedule(alg.lambda0, alg.a)
        recorder = TraceRecorder(spec, reference_image, rois)
        callbacks: list = [recorder]
        tracker = None
        if cfg.outputs.record_angles:
            tracker = AngleTracker(spec,
                                   max_iterations=cfg.outputs.angle_max_iterations)
            callbacks.append(tracker)
        final = run(np.ones(q), spec, solver_cfg, schedule,
                    alg.n_iterations, tuple(callbacks))

        trace_path = out / f"{alg.name}_trace.csv"
        _write_trace_csv(trace_path, alg, recorder, tracker, rois)
        timing_path = out / f"{alg.name}_timing.csv"
        _write_csv(timing_path, ["algorithm", "k", "wall_time_s"],
                   [[alg.name, k + 1, w]
                    for k, w in zip(recorder.iterations, recorder.wall_time_s)])
        image_path = out / f"{alg.name}_final.raw"
        image_path.write_bytes(np.ascontiguousarray(final, dtype="<f8").tobytes())

        recorders[alg.name] = recorder
        trackers[alg.name] = tracker
        final_images[alg.name] = final
        trace_paths[alg.name] = trace_path
        deterministic_files.extend([trace_path, image_path])
        volatile_files.append(timing_path)

    manifest_path = _write_manifest(cfg, out, u, deterministic_files, volatile_files)
    return RunProducts(
        config=cfg, out_dir=out, manifest_path=manifest_path, upper_bound=u,
        reference_image=reference_image, recorders=recorders, trackers=trackers,
        final_images=final_images, trace_paths=trace_paths)


def _write_trace_csv(path: Path, alg: AlgorithmConfig, recorder: TraceRecorder,
                     tracker: AngleTracker | None, rois: tuple[ROI, ...]) -> None:
    header = ["algorithm", "k", "i", "objective", "nrmsd_global"]
    header.extend(f"nrmsd_roi_{roi.label}" for roi in rois)
    header.extend(["theta_k", "theta_tilde_k"])
    rows = []
    for idx, k in enumerate(recorder.iterations):
        row: list = [alg.name, k + 1, alg.n_subsets,
                     recorder.objective[idx] if recorder.objective else None,
                     recorder.nrmsd_global[idx] if recorder.nrmsd_global else None]
        for roi in rois:
            series = recorder.nrmsd_roi[roi.label]
            row.append(series[idx] if series else None)
        if tracker is not None and idx < len(tracker.theta_k):
            row.extend([tracker.theta_k[idx], tracker.theta_tilde_k[idx]])
        else:
            row.extend([None, None])
        rows.append(row)
    _write_csv(path, header, rows)


def _write_manifest(cfg: ExperimentConfig, out: Path, upper_bound: float,
                    deterministic_files: list[Path],
                    volatile_files: list[Path]) -> Path:
    from . import __version__
    files = {}
    for path in sorted(deterministic_files):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        files[path.name] = {"volatile": False, "sha256": digest}
    for path in sorted(volatile_files):
        files[path.name] = {"volatile": True}
    manifest = {
        "format": "experiment-run-v1",
        "package_version": __version__,
        "experiment": cfg.name,
        "config_hash": config_hash(cfg),
        "problem_hash": problem_hash(cfg),
        "seed": cfg.simulation.seed,
        "upper_bound": upper_bound,
        "image_shape": list(cfg.geometry.image_shape),
        "files": files,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def write_phantom_file(cfg: ExperimentConfig, out_path: str | Path) -> Path:
    """Materialize the config's phantom in the text format."""
    phantom = build_phantom(cfg)
    out_path = Path(out_path)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    save_phantom_txt(out_path, phantom)
    return out_path
