"""Subiteration-dependent diagonal preconditioners.

The base diagonal is the interval-aware EM preconditioner

    S(f)_jj = f_j / p_j        if 0 <= f_j < U/2,
              (U - f_j) / p_j  if U/2 <= f_j <= U,

with p_j the per-subset mean sensitivity (A^T 1)_j / M, replaced by 1/M for
pixels no ray touches. The boundary value f_j = U/2 takes the second branch;
both branches agree there.

On top of S(f) the solver applies a scalar momentum factor alpha and an
optional per-pixel spatial factor nu:

- alpha via the classic momentum recursion (t_1 = 1,
  t_{n+1} = (1 + sqrt(1 + 4 t_n^2)) / 2, alpha_n = 1 + (t_n - 1)/t_{n+1}),
  which increases toward 2; or
- alpha via the rational schedule alpha_n = (rho (n-1) + delta2)/(n - 1 +
  delta1), which increases toward rho when rho delta1 >= delta2;

with n = k M + i the 1-based global subiteration count. The spatial factor
boosts steps in flat regions and damps them near edges: with
mu = max(0.01, |grad f| / mean(f)) pixelwise, nu = clip(mean(mu)/mu,
nu_min, nu_max). It is the identity for the first j0 subiterations and is
frozen at its last computed value after subiteration j1 (both counted
globally), so late iterations use a fixed diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

VARIANTS = ("BSREM", "SDP-P1", "SDP-P2", "SDP-M1", "SDP-M2")

_VARIANT_ALIASES = {
    "bsrem": "BSREM", "identity": "BSREM",
    "sdp-p1": "SDP-P1", "p1": "SDP-P1",
    "sdp-p2": "SDP-P2", "p2": "SDP-P2",
    "sdp-m1": "SDP-M1", "m1": "SDP-M1",
    "sdp-m2": "SDP-M2", "m2": "SDP-M2",
}


def normalize_variant(name: str) -> str:
    try:
        return _VARIANT_ALIASES[str(name).strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown algorithm variant {name!r}; "
                          f"expected one of {VARIANTS}") from None


def compute_p(column_sums: np.ndarray, n_subsets: int) -> np.ndarray:
    """Per-subset mean sensitivity with the 1/M fallback for untouched pixels."""
    if n_subsets < 1:
        raise ConfigError(f"n_subsets must be >= 1, got {n_subsets}")
    s = np.asarray(column_sums, dtype=np.float64)
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise DomainError("column sums must be finite and nonnegative")
    return np.where(s > 0, s / n_subsets, 1.0 / n_subsets)


def base_precond_diag(f: np.ndarray, p_vec: np.ndarray, upper_bound: float) -> np.ndarray:
    """Diagonal of S(f) for an iterate inside [0, U]."""
    f = np.asarray(f, dtype=np.float64)
    p_vec = np.asarray(p_vec, dtype=np.float64)
    if f.shape != p_vec.shape:
        raise ShapeError(f"iterate shape {f.shape} does not match p {p_vec.shape}")
    if np.any(p_vec <= 0) or not np.all(np.isfinite(p_vec)):
        raise DomainError("p must be finite and strictly positive")
    u = float(upper_bound)
    if u <= 0:
        raise ConfigError(f"upper_bound must be positive, got {upper_bound}")
    if np.any(f < 0) or np.any(f > u) or not np.all(np.isfinite(f)):
        raise DomainError("iterate must lie in [0, upper_bound]")
    return np.where(f < 0.5 * u, f, u - f) / p_vec


class NesterovAlpha:
    """Momentum factor sequence; the n-th step() call returns alpha_n.

    Maintains t with t_1 = 1; after n calls the stored t equals t_{n+1} and
    satisfies t_{n+1} > (n+1)/2, which bounds every alpha below 2.
    """

    def __init__(self):
        self.t = 1.0
        self.n = 0

    def step(self) -> float:
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * self.t * self.t))
        alpha = 1.0 + (self.t - 1.0) / t_next
        self.t = t_next
        self.n += 1
        return alpha


def alpha_rational(k: int, i: int, n_subsets: int, rho: float,
                   delta1: float, delta2: float | None = None) -> float:
    """Rational momentum factor for outer iteration k (0-based), subset i (1-based)."""
    if delta2 is None:
        delta2 = delta1
    if delta1 <= 0:
        raise ConfigError(f"delta1 must be positive, got {delta1}")
    if delta2 < 0:
        raise ConfigError(f"delta2 must be nonnegative, got {delta2}")
    if rho < 1:
        raise ConfigError(f"rho must be >= 1, got {rho}")
    if n_subsets < 1 or not 1 <= i <= n_subsets or k < 0:
        raise ConfigError(f"bad subiteration address k={k}, i={i}, M={n_subsets}")
    n = k * n_subsets + i
    return (rho * (n - 1) + delta2) / ((n - 1) + delta1)


def numerical_gradient_magnitude(image: np.ndarray) -> np.ndarray:
    """Pixelwise |grad| with central interior and one-sided edge differences."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2D image, got ndim={img.ndim}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeError(f"gradient undefined on degenerate image {img.shape}")
    gy, gx = np.gradient(img)
    return np.sqrt(gx * gx + gy * gy)


@dataclass(frozen=True)
class PrecondConfig:
    """Variant selector plus every knob the step-scale sequences need."""

    variant: str = "BSREM"
    rho: float = 2.0
    delta1: float = 1.0
    delta2: float | None = None
    nu_min: float = 1.0
    nu_max: float = 2.0
    j0: int = 3
    j1: int = 1000
    mu_floor: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        object.__setattr__(self, "delta2",
                           self.delta1 if self.delta2 is None else float(self.delta2))
        if self.variant in ("SDP-P2", "SDP-M2"):
            if self.rho < 1:
                raise ConfigError(f"rho must be >= 1, got {self.rho}")
            if self.delta1 <= 0:
                raise ConfigError(f"delta1 must be positive, got {self.delta1}")
            if self.delta2 < 0:
                raise ConfigError(f"delta2 must be nonnegative, got {self.delta2}")
        if self.variant in ("SDP-P1", "SDP-P2"):
            if not 0 < self.nu_min < self.nu_max:
                raise ConfigError(
                    f"need 0 < nu_min < nu_max, got ({self.nu_min}, {self.nu_max})")
            if self.j0 < 0 or self.j1 < self.j0:
                raise ConfigError(f"need 0 <= j0 <= j1, got ({self.j0}, {self.j1})")
            if self.mu_floor <= 0:
                raise ConfigError(f"mu_floor must be positive, got {self.mu_floor}")

    @property
    def uses_momentum(self) -> bool:
        return self.variant in ("SDP-P1", "SDP-M1")

    @property
    def uses_rational(self) -> bool:
        return self.variant in ("SDP-P2", "SDP-M2")

    @property
    def uses_spatial(self) -> bool:
        return self.variant in ("SDP-P1", "SDP-P2")


class SpatialFactorState:
    """Per-run state of the spatial factor nu, including the freeze rule."""

    def __init__(self, cfg: PrecondConfig, image_shape: tuple[int, int]):
        self.cfg = cfg
        self.image_shape = image_shape
        self.j = 0                       # completed global subiterations
        self.frozen_nu: np.ndarray | None = None

    def step(self, image: np.ndarray) -> np.ndarray:
        """nu for the next subiteration, evaluated at the current iterate."""
        self.j += 1
        q = self.image_shape[0] * self.image_shape[1]
        if self.j <= self.cfg.j0:
            return np.ones(q)
        if self.j > self.cfg.j1:
            if self.frozen_nu is None:
                # j1 <= j0 means the adaptive window is empty; stay identity.
                return np.ones(q)
            return self.frozen_nu
        img = np.asarray(image, dtype=np.float64).reshape(self.image_shape)
        mean = img.mean()
        if mean <= 0 or not np.isfinite(mean):
            raise DomainError("spatial factor needs a positive-mean image")
        mu = np.maximum(self.cfg.mu_floor,
                        numerical_gradient_magnitude(img) / mean)
        nu = np.clip(mu.mean() / mu, self.cfg.nu_min, self.cfg.nu_max).ravel()
        if self.j == self.cfg.j1:
            self.frozen_nu = nu
        return nu


class StepScaleState:
    """Produces the combined scale alpha_{k,i} * nu^{k,i} subiteration by subiteration."""

    def __init__(self, cfg: PrecondConfig, image_shape: tuple[int, int],
                 n_subsets: int):
        self.cfg = cfg
        self.n_subsets = n_subsets
        self._n = 0
        self._nesterov = NesterovAlpha() if cfg.uses_momentum else None
        self._spatial = (SpatialFactorState(cfg, image_shape)
                         if cfg.uses_spatial else None)

    def step(self, image: np.ndarray) -> float | np.ndarray:
        """Scale for the next subiteration, given the iterate it starts from."""
        self._n += 1
        if self._nesterov is not None:
            alpha = self._nesterov.step()
        elif self.cfg.uses_rational:
            k, i = divmod(self._n - 1, self.n_subsets)
            alpha = alpha_rational(k, i + 1, self.n_subsets, self.cfg.rho,
                                   self.cfg.delta1, self.cfg.delta2)
        else:
            alpha = 1.0
        if self._spatial is not None:
            return alpha * self._spatial.step(image)
        return alpha
