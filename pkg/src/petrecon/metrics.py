"""Figures of merit and trace collection callbacks.

NRMSD against a converged reference f_inf over a region Omega:

    NRMSD(f) = sqrt(sum_Omega (f - f_inf)^2) / sqrt(sum_Omega f_inf^2).

Gradient-direction diagnostics: after the subiteration at position i of
iteration k produced f^{k,i}, the tracker computes the angle between the
previous subset's gradient at the previous iterate and the current subset's
gradient at the current iterate, restricted to an index set:

    theta_{k,i}       on I_s = {j : |grad f|_j < 0.01 * mean(f)}   (smooth)
    theta_tilde_{k,i} on I_v = {j : |grad f|_j > 0.2  * mean(f)}   (steep)

with |grad f| the numerical gradient magnitude of the current iterate. For
the first subiteration of a run the "previous" gradient is the last-ordered
subset's gradient at f^0. Angles are undefined (recorded as NaN, with the
skip noted) when an index set is empty or a restricted gradient vanishes;
per-iteration summaries average the defined entries only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError, ShapeError
from .objective import ObjectiveSpec
from .optimizer import Callback
from .preconditioner import numerical_gradient_magnitude
from .simulator import Phantom

SMOOTH_REL_THRESHOLD = 0.01
STEEP_REL_THRESHOLD = 0.2


def nrmsd(image: np.ndarray, reference: np.ndarray,
          mask: np.ndarray | None = None) -> float:
    """Root-sum-square error over mask, normalized by the reference norm."""
    f = np.asarray(image, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if f.shape != ref.shape:
        raise ShapeError(f"image {f.shape} and reference {ref.shape} differ")
    if mask is not None:
        m = np.asarray(mask, dtype=bool).ravel()
        if m.shape != ref.shape:
            raise ShapeError(f"mask {m.shape} does not match image {ref.shape}")
        f = f[m]
        ref = ref[m]
    denom = np.sqrt(np.sum(ref * ref))
    if denom == 0.0:
        raise MetricError("reference has zero norm over the requested region")
    return float(np.sqrt(np.sum((f - ref) ** 2)) / denom)


def vector_angle(v1: np.ndarray, v2: np.ndarray) -> float:
    """Angle in radians between two vectors, safe against round-off overshoot."""
    a = np.asarray(v1, dtype=np.float64).ravel()
    b = np.asarray(v2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes {a.shape} and {b.shape} differ")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("angle undefined for a zero vector")
    cosine = np.clip((a @ b) / (na * nb), -1.0, 1.0)
    return float(np.arccos(cosine))


@dataclass(frozen=True)
class ROI:
    """Named pixel region used for regional NRMSD series."""

    label: str
    mask: np.ndarray

    def __post_init__(self):
        if self.mask.dtype != bool:
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if not self.mask.any():
            raise MetricError(f"ROI {self.label!r} is empty")


def build_rois(phantom: Phantom) -> tuple[ROI, ...]:
    """Feature ROIs from a phantom's region masks: each disk, the background
    disk sample, and the union of all of them."""
    rois = []
    union = None
    for label, mask in phantom.regions.items():
        if label == "body":
            continue
        name = "background" if label == "background_roi" else label
        rois.append(ROI(label=name, mask=mask))
        union = mask.copy() if union is None else (union | mask)
    if union is not None:
        rois.append(ROI(label="all", mask=union))
    return tuple(rois)


class TraceRecorder(Callback):
    """Per-iteration objective, NRMSD and wall-time series."""

    def __init__(self, spec: ObjectiveSpec, reference: np.ndarray | None = None,
                 rois: tuple[ROI, ...] = (), record_objective: bool = True):
        self.spec = spec
        self.reference = None if reference is None else np.asarray(
            reference, dtype=np.float64).ravel()
        self.rois = rois
        self.record_objective = record_objective
        self.iterations: list[int] = []
        self.objective: list[float] = []
        self.wall_time_s: list[float] = []
        self.nrmsd_global: list[float] = []
        self.nrmsd_roi: dict[str, list[float]] = {r.label: [] for r in rois}
        self.final_image: np.ndarray | None = None

    def on_iteration(self, k: int, f: np.ndarray, wall_time_s: float) -> None:
        self.iterations.append(k)
        self.wall_time_s.append(wall_time_s)
        if self.record_objective:
            self.objective.append(self.spec.value(f))
        if self.reference is not None:
            self.nrmsd_global.append(nrmsd(f, self.reference))
            for roi in self.rois:
                self.nrmsd_roi[roi.label].append(nrmsd(f, self.reference, roi.mask))
        self.final_image = np.array(f, copy=True)


@dataclass
class AngleSkip:
    """Why one subiteration produced no angle sample."""

    iteration: int
    position: int
    series: str     # "theta" or "theta_tilde"
    reason: str


class AngleTracker(Callback):
    """Consecutive-subset gradient angles on smooth and steep index sets.

    Costs one extra subset-gradient evaluation per subiteration, so a
    max_iterations budget caps how long it stays active.
    """

    def __init__(self, spec: ObjectiveSpec, max_iterations: int | None = None,
                 smooth_rel: float = SMOOTH_REL_THRESHOLD,
                 steep_rel: float = STEEP_REL_THRESHOLD):
        if spec.partition is None:
            raise MetricError("angle tracking requires a subset partition")
        self.spec = spec
        self.max_iterations = max_iterations
        self.smooth_rel = smooth_rel
        self.steep_rel = steep_rel
        self.theta: list[float] = []          # per subiteration, NaN when skipped
        self.theta_tilde: list[float] = []
        self.theta_k: list[float] = []        # per-iteration means of defined entries
        self.theta_tilde_k: list[float] = []
        self.skips: list[AngleSkip] = []
        self._prev_grad: np.ndarray | None = None
        self._iter_theta: list[float] = []
        self._iter_theta_tilde: list[float] = []
        self._done = False

    def on_start(self, f0: np.ndarray) -> None:
        last_subset = self.spec.partition.access_order[-1]
        self._prev_grad = self.spec.subset_gradient(f0, last_subset)

    def _restricted_angle(self, k: int, pos: int, series: str,
                          idx: np.ndarray, grad: np.ndarray) -> float:
        if not idx.any():
            self.skips.append(AngleSkip(k, pos, series, "empty index set"))
            return np.nan
        v_prev = self._prev_grad[idx]
        v_cur = grad[idx]
        if np.linalg.norm(v_prev) == 0.0 or np.linalg.norm(v_cur) == 0.0:
            self.skips.append(AngleSkip(k, pos, series, "zero restricted gradient"))
            return np.nan
        return vector_angle(v_prev, v_cur)

    def on_subiteration(self, k: int, pos: int, subset_id: int,
                        f: np.ndarray) -> None:
        if self._done:
            return
        if self.max_iterations is not None and k >= self.max_iterations:
            self._done = True
            return
        grad = self.spec.subset_gradient(f, subset_id)
        img = np.asarray(f, dtype=np.float64).reshape(self.spec.image_shape)
        gmag = numerical_gradient_magnitude(img).ravel()
        mean = img.mean()
        smooth = gmag < self.smooth_rel * mean
        steep = gmag > self.steep_rel * mean
        theta = self._restricted_angle(k, pos, "theta", smooth, grad)
        theta_tilde = self._restricted_angle(k, pos, "theta_tilde", steep, grad)
        self.theta.append(theta)
        self.theta_tilde.append(theta_tilde)
        self._iter_theta.append(theta)
        self._iter_theta_tilde.append(theta_tilde)
        self._prev_grad = grad
        if pos == self.spec.partition.n_subsets:
            self.theta_k.append(_nan_mean(self._iter_theta))
            self.theta_tilde_k.append(_nan_mean(self._iter_theta_tilde))
            self._iter_theta = []
            self._iter_theta_tilde = []


def _nan_mean(values: list[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    defined = arr[~np.isnan(arr)]
    if defined.size == 0:
        return float("nan")
    return float(defined.mean())
