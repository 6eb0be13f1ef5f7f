"""Penalized Poisson log-likelihood objective.

For counts g, additive background gamma > 0 and system matrix A, the data
fidelity is

    F(f) = <A f, 1> - <ln(A f + gamma), g>,

the negative Poisson log likelihood up to a constant. The penalty R is the
relative-difference prior over an image neighborhood N:

    R(f) = sum_j sum_{k in N_j} (f_j - f_k)^2
           / (f_j + f_k + gamma_r |f_j - f_k| + eps),

a literal double sum, so every unordered neighbor pair contributes twice.
eps > 0 keeps R twice differentiable at f = 0. The full objective is
Phi = F + beta R and splits over M angle-interleaved subsets as
Phi_i(f) = <A_i f, 1> - <ln(A_i f + gamma_i), g_i> + (beta / M) R(f), so
sum_i Phi_i = Phi and likewise for gradients.

The Hessian quadratic form x^T Hess Phi(f) x has the closed form

    sum_l g_l (A x)_l^2 / ((A f + gamma)_l)^2
    + beta sum_j sum_{k in N_j} 2 ((2 f_k + eps) x_j - (2 f_j + eps) x_k)^2
                                 / (f_j + f_k + gamma_r |f_j - f_k| + eps)^3,

whose penalty part vanishes exactly on the ray x = c (2 f + eps); together
with A^T g != 0 this gives strict convexity on the nonnegative orthant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_array

from .errors import DomainError, ShapeError, SubsetError
from .projector import SubsetPartition, SystemMatrix

EIGHT_POINT = ((-1, -1), (-1, 0), (-1, 1), (0, -1),
               (0, 1), (1, -1), (1, 0), (1, 1))
FOUR_POINT = ((-1, 0), (0, -1), (0, 1), (1, 0))


def _offset_views(shape: tuple[int, int], dr: int, dc: int):
    """Index pairs (center, neighbor) covering all in-bounds neighbor pairs."""
    rows, cols = shape
    r0, r1 = max(0, -dr), rows - max(0, dr)
    c0, c1 = max(0, -dc), cols - max(0, dc)
    center = (slice(r0, r1), slice(c0, c1))
    neighbor = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
    return center, neighbor


def _check_neighborhood(neighborhood) -> tuple[tuple[int, int], ...]:
    offsets = tuple((int(dr), int(dc)) for dr, dc in neighborhood)
    if not offsets:
        raise DomainError("neighborhood must not be empty")
    seen = set(offsets)
    if len(seen) != len(offsets):
        raise DomainError("neighborhood offsets must be unique")
    if (0, 0) in seen:
        raise DomainError("neighborhood must not contain (0, 0)")
    for dr, dc in offsets:
        if (-dr, -dc) not in seen:
            raise DomainError(
                f"neighborhood must be symmetric; missing {(-dr, -dc)}")
    return offsets


def _as_image(f: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        if f.shape[0] != shape[0] * shape[1]:
            raise ShapeError(f"flat image length {f.shape[0]} does not match {shape}")
        f = f.reshape(shape)
    elif f.shape != shape:
        raise ShapeError(f"image shape {f.shape} does not match {shape}")
    if not np.all(np.isfinite(f)):
        raise DomainError("image contains non-finite values")
    if np.any(f < 0):
        raise DomainError("image must be nonnegative")
    return f


def rdp_value(image: np.ndarray, gamma_r: float = 2.0, epsilon: float = 1e-12,
              neighborhood=EIGHT_POINT) -> float:
    """Relative-difference penalty of a 2D nonnegative image."""
    f = np.asarray(image, dtype=np.float64)
    offsets = _check_neighborhood(neighborhood)
    total = 0.0
    for dr, dc in offsets:
        center, neigh = _offset_views(f.shape, dr, dc)
        a = f[center]
        b = f[neigh]
        d = a - b
        denom = a + b + gamma_r * np.abs(d) + epsilon
        total += float(np.sum(d * d / denom))
    return total


def rdp_gradient(image: np.ndarray, gamma_r: float = 2.0, epsilon: float = 1e-12,
                 neighborhood=EIGHT_POINT) -> np.ndarray:
    """Gradient of rdp_value, same shape as the input image."""
    f = np.asarray(image, dtype=np.float64)
    offsets = _check_neighborhood(neighborhood)
    grad = np.zeros_like(f)
    for dr, dc in offsets:
        center, neigh = _offset_views(f.shape, dr, dc)
        a = f[center]
        b = f[neigh]
        d = a - b
        denom = a + b + gamma_r * np.abs(d) + epsilon
        grad[center] += 2.0 * d * (gamma_r * np.abs(d) + a + 3.0 * b + 2.0 * epsilon) / (denom * denom)
    return grad


def rdp_curvature(image: np.ndarray, direction: np.ndarray, gamma_r: float = 2.0,
                  epsilon: float = 1e-12, neighborhood=EIGHT_POINT) -> float:
    """Quadratic form x^T Hess(R)(f) x; zero exactly when x is along 2f+eps."""
    f = np.asarray(image, dtype=np.float64)
    x = np.asarray(direction, dtype=np.float64).reshape(f.shape)
    offsets = _check_neighborhood(neighborhood)
    total = 0.0
    for dr, dc in offsets:
        center, neigh = _offset_views(f.shape, dr, dc)
        a = f[center]
        b = f[neigh]
        xa = x[center]
        xb = x[neigh]
        denom = a + b + gamma_r * np.abs(a - b) + epsilon
        num = (2.0 * b + epsilon) * xa - (2.0 * a + epsilon) * xb
        total += float(np.sum(2.0 * num * num / denom ** 3))
    return total


@dataclass
class ObjectiveSpec:
    """Everything that defines Phi = F + beta R and its subset split."""

    system: SystemMatrix
    counts: np.ndarray
    background: np.ndarray
    beta: float
    partition: SubsetPartition | None = None
    gamma_r: float = 2.0
    epsilon: float = 1e-12
    neighborhood: tuple[tuple[int, int], ...] = EIGHT_POINT
    _subset_cache: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        p = self.system.geometry.n_bins
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.counts.shape != (p,):
            raise ShapeError(f"counts length {self.counts.shape} does not match p={p}")
        if self.background.shape != (p,):
            raise ShapeError(f"background length {self.background.shape} does not match p={p}")
        if not np.all(np.isfinite(self.counts)) or np.any(self.counts < 0):
            raise DomainError("counts must be finite and nonnegative")
        if not np.all(np.isfinite(self.background)) or np.any(self.background <= 0):
            raise DomainError("background must be finite and strictly positive")
        if self.beta < 0:
            raise DomainError("beta must be nonnegative")
        if self.gamma_r < 0:
            raise DomainError("gamma_r must be nonnegative")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be strictly positive")
        self.neighborhood = _check_neighborhood(self.neighborhood)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.system.geometry.image_shape

    @property
    def n_subsets(self) -> int:
        return 1 if self.partition is None else self.partition.n_subsets

    def subset_data(self, i: int):
        """(A_i, g_i, gamma_i) for subset i, sliced once and cached."""
        if self.partition is None:
            raise SubsetError("objective was built without a subset partition")
        if not 0 <= i < self.partition.n_subsets:
            raise SubsetError(f"subset index {i} out of range [0, {self.partition.n_subsets})")
        if not self._subset_cache:
            a: csr_array = self.system.matrix
            for rows in self.partition.index_sets:
                self._subset_cache.append(
                    (a[rows], self.counts[rows], self.background[rows]))
        return self._subset_cache[i]

    def penalty_value(self, f: np.ndarray) -> float:
        img = _as_image(f, self.image_shape)
        return rdp_value(img, self.gamma_r, self.epsilon, self.neighborhood)

    def penalty_gradient(self, f: np.ndarray) -> np.ndarray:
        img = _as_image(f, self.image_shape)
        return rdp_gradient(img, self.gamma_r, self.epsilon, self.neighborhood).ravel()

    def fidelity_value(self, f: np.ndarray) -> float:
        img = _as_image(f, self.image_shape)
        af = self.system.matrix @ img.ravel()
        return float(af.sum() - self.counts @ np.log(af + self.background))

    def fidelity_gradient(self, f: np.ndarray) -> np.ndarray:
        img = _as_image(f, self.image_shape)
        af = self.system.matrix @ img.ravel()
        return self.system.matrix.T @ (1.0 - self.counts / (af + self.background))

    def value(self, f: np.ndarray) -> float:
        return self.fidelity_value(f) + self.beta * self.penalty_value(f)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        return self.fidelity_gradient(f) + self.beta * self.penalty_gradient(f)

    def subset_value(self, f: np.ndarray, i: int) -> float:
        img = _as_image(f, self.image_shape)
        a_i, g_i, gamma_i = self.subset_data(i)
        af = a_i @ img.ravel()
        fid = float(af.sum() - g_i @ np.log(af + gamma_i))
        return fid + (self.beta / self.n_subsets) * self.penalty_value(img)

    def subset_gradient(self, f: np.ndarray, i: int) -> np.ndarray:
        img = _as_image(f, self.image_shape)
        a_i, g_i, gamma_i = self.subset_data(i)
        af = a_i @ img.ravel()
        grad = a_i.T @ (1.0 - g_i / (af + gamma_i))
        if self.beta != 0.0:
            grad = grad + (self.beta / self.n_subsets) * self.penalty_gradient(img)
        return grad

    def fidelity_curvature(self, f: np.ndarray, x: np.ndarray) -> float:
        """x^T Hess(F)(f) x = sum_l g_l (A x)_l^2 / (A f + gamma)_l^2."""
        img = _as_image(f, self.image_shape)
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.shape[0] != self.system.geometry.n_pixels:
            raise ShapeError("direction length does not match the image")
        af = self.system.matrix @ img.ravel()
        ax = self.system.matrix @ x
        ratio = ax / (af + self.background)
        return float(np.sum(self.counts * ratio * ratio))

    def hessian_quadratic_form(self, f: np.ndarray, x: np.ndarray) -> float:
        img = _as_image(f, self.image_shape)
        quad = self.fidelity_curvature(img, x)
        if self.beta != 0.0:
            quad += self.beta * rdp_curvature(
                img, np.asarray(x, dtype=np.float64), self.gamma_r,
                self.epsilon, self.neighborhood)
        return quad
