"""Objective tests: brute-force penalty sums, hand values, FD oracles.

rdp_value is checked against a literal double loop, gradients and curvature
against central finite differences, and the fidelity term against closed
forms on an identity system matrix. None of the expected values reuse the
vectorized implementation paths.
"""

import numpy as np
import pytest
from scipy.sparse import csr_array, identity

import petrecon as pr
from petrecon.errors import DomainError, ShapeError, SubsetError


def brute_force_rdp(f, gamma_r, epsilon, offsets):
    rows, cols = f.shape
    total = 0.0
    for r in range(rows):
        for c in range(cols):
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    d = f[r, c] - f[rr, cc]
                    total += d * d / (f[r, c] + f[rr, cc]
                                      + gamma_r * abs(d) + epsilon)
    return total


@pytest.mark.parametrize("neighborhood", [pr.EIGHT_POINT, pr.FOUR_POINT])
def test_rdp_value_matches_brute_force(neighborhood):
    rng = np.random.default_rng(5)
    f = rng.uniform(0.0, 4.0, size=(7, 6))
    expected = brute_force_rdp(f, 2.0, 1e-9, neighborhood)
    got = pr.rdp_value(f, gamma_r=2.0, epsilon=1e-9, neighborhood=neighborhood)
    assert abs(got - expected) <= 1e-12 * abs(expected)


def test_rdp_value_hand_pair():
    # Single neighbor pair (3, 1) with gamma_r=2, eps=0: each ordered pair
    # contributes (3-1)^2 / (3+1+2*2) = 0.5, and the double sum counts both.
    f = np.array([[3.0, 1.0]])
    assert pr.rdp_value(f, gamma_r=2.0, epsilon=0.0) == pytest.approx(1.0, abs=1e-15)


def test_rdp_gradient_hand_pair():
    # d/da of 2*(a-b)^2/(a+b+gamma|a-b|) at (3, 1), gamma=2:
    # 2*d*(gamma|d| + a + 3b)/D^2 with d=2, D=8  ->  40/64.
    f = np.array([[3.0, 1.0]])
    grad = pr.rdp_gradient(f, gamma_r=2.0, epsilon=0.0)
    assert grad[0, 0] == pytest.approx(40.0 / 64.0, rel=1e-14)
    assert grad[0, 1] == pytest.approx(-56.0 / 64.0, rel=1e-14)


def test_rdp_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    f = rng.uniform(0.5, 3.0, size=(9, 8))
    grad = pr.rdp_gradient(f, gamma_r=2.0, epsilon=1e-9)
    h = 1e-5
    for _ in range(20):
        j = rng.integers(f.size)
        bump = np.zeros_like(f)
        bump.flat[j] = h
        fd = (pr.rdp_value(f + bump, 2.0, 1e-9)
              - pr.rdp_value(f - bump, 2.0, 1e-9)) / (2 * h)
        assert grad.flat[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_rdp_curvature_matches_finite_differences():
    rng = np.random.default_rng(13)
    f = rng.uniform(0.5, 3.0, size=(8, 8))
    x = rng.standard_normal(f.shape)
    quad = pr.rdp_curvature(f, x, gamma_r=2.0, epsilon=1e-9)
    h = 1e-5
    fd = (pr.rdp_gradient(f + h * x, 2.0, 1e-9)
          - pr.rdp_gradient(f - h * x, 2.0, 1e-9)).ravel() @ x.ravel() / (2 * h)
    assert quad == pytest.approx(fd, rel=1e-6)


def test_rdp_curvature_null_direction_is_exact_zero():
    rng = np.random.default_rng(21)
    f = rng.uniform(0.5, 3.0, size=(6, 6))
    eps = 1e-9
    x = 2.0 * f + eps
    assert pr.rdp_curvature(f, x, gamma_r=2.0, epsilon=eps) == 0.0
    # Power-of-two scalings are exact in floats, so the cancellation survives.
    assert pr.rdp_curvature(f, -4.0 * x, gamma_r=2.0, epsilon=eps) == 0.0


def test_neighborhood_validation():
    f = np.ones((4, 4))
    with pytest.raises(DomainError):
        pr.rdp_value(f, neighborhood=())
    with pytest.raises(DomainError):
        pr.rdp_value(f, neighborhood=((0, 0), (0, 1), (0, -1)))
    with pytest.raises(DomainError):
        pr.rdp_value(f, neighborhood=((0, 1),))  # missing the mirror offset


def _identity_spec(n=3, counts=2.0, background=1.0, beta=0.0):
    geometry = pr.ScannerGeometry(image_shape=(n, n), pixel_size_mm=1.0,
                                  fov_mm=float(n), n_angles=n, n_radial=n)
    matrix = csr_array(identity(n * n, format="csr", dtype=np.float64))
    system = pr.SystemMatrix(matrix=matrix, geometry=geometry)
    return pr.ObjectiveSpec(system, np.full(n * n, counts),
                            np.full(n * n, background), beta=beta)


def test_fidelity_closed_form_on_identity_system():
    # A = I, f = 1, g = 2, gamma = 1: per bin 1 - 2 ln 2.
    spec = _identity_spec()
    f = np.ones(9)
    assert spec.fidelity_value(f) == pytest.approx(9 * (1 - 2 * np.log(2.0)),
                                                   rel=1e-14)
    # gradient per pixel: 1 - g/(f+gamma) = 1 - 2/2 = 0 at this point.
    np.testing.assert_allclose(spec.fidelity_gradient(f), 0.0, atol=1e-15)
    # and at f = 3: 1 - 2/4 = 0.5.
    np.testing.assert_allclose(spec.fidelity_gradient(np.full(9, 3.0)), 0.5,
                               rtol=1e-14)


def test_fidelity_gradient_matches_finite_differences(tiny_spec):
    rng = np.random.default_rng(2)
    q = tiny_spec.system.geometry.n_pixels
    f = rng.uniform(0.5, 2.0, q)
    grad = tiny_spec.fidelity_gradient(f)
    h = 1e-6
    for j in rng.integers(q, size=12):
        bump = np.zeros(q)
        bump[j] = h
        fd = (tiny_spec.fidelity_value(f + bump)
              - tiny_spec.fidelity_value(f - bump)) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_full_gradient_combines_terms(tiny_spec):
    rng = np.random.default_rng(4)
    f = rng.uniform(0.5, 2.0, tiny_spec.system.geometry.n_pixels)
    expected = (tiny_spec.fidelity_gradient(f)
                + tiny_spec.beta * tiny_spec.penalty_gradient(f))
    np.testing.assert_allclose(tiny_spec.gradient(f), expected, rtol=1e-15)


def test_subset_split_sums_to_whole(tiny_spec):
    rng = np.random.default_rng(6)
    f = rng.uniform(0.5, 2.0, tiny_spec.system.geometry.n_pixels)
    total_value = sum(tiny_spec.subset_value(f, i)
                      for i in range(tiny_spec.n_subsets))
    assert total_value == pytest.approx(tiny_spec.value(f), rel=1e-12)
    total_grad = sum(tiny_spec.subset_gradient(f, i)
                     for i in range(tiny_spec.n_subsets))
    full_grad = tiny_spec.gradient(f)
    assert (np.linalg.norm(total_grad - full_grad)
            <= 1e-12 * np.linalg.norm(full_grad))


def test_subset_gradient_matches_subset_value_fd(tiny_spec):
    rng = np.random.default_rng(14)
    q = tiny_spec.system.geometry.n_pixels
    f = rng.uniform(0.5, 2.0, q)
    grad = tiny_spec.subset_gradient(f, 2)
    h = 1e-6
    for j in rng.integers(q, size=8):
        bump = np.zeros(q)
        bump[j] = h
        fd = (tiny_spec.subset_value(f + bump, 2)
              - tiny_spec.subset_value(f - bump, 2)) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=5e-6, abs=1e-8)


def test_fidelity_curvature_matches_dense_formula(tiny_spec):
    rng = np.random.default_rng(17)
    q = tiny_spec.system.geometry.n_pixels
    f = rng.uniform(0.5, 2.0, q)
    x = rng.standard_normal(q)
    dense = tiny_spec.system.matrix.toarray()
    af = dense @ f
    ax = dense @ x
    expected = float(np.sum(tiny_spec.counts * ax ** 2
                            / (af + tiny_spec.background) ** 2))
    assert tiny_spec.fidelity_curvature(f, x) == pytest.approx(expected, rel=1e-12)


def test_hessian_quadratic_form_matches_gradient_fd(tiny_spec):
    rng = np.random.default_rng(19)
    q = tiny_spec.system.geometry.n_pixels
    f = rng.uniform(0.5, 2.0, q)
    x = rng.standard_normal(q)
    quad = tiny_spec.hessian_quadratic_form(f, x)
    h = 1e-5
    fd = (tiny_spec.gradient(f + h * x) - tiny_spec.gradient(f - h * x)) @ x / (2 * h)
    assert quad == pytest.approx(fd, rel=1e-6)


def test_objective_input_validation(tiny_system, tiny_data):
    with pytest.raises(ShapeError):
        pr.ObjectiveSpec(tiny_system, tiny_data.counts[:-1],
                         tiny_data.background, beta=0.0)
    with pytest.raises(DomainError):
        pr.ObjectiveSpec(tiny_system, -tiny_data.counts - 1.0,
                         tiny_data.background, beta=0.0)
    with pytest.raises(DomainError):
        pr.ObjectiveSpec(tiny_system, tiny_data.counts,
                         np.zeros_like(tiny_data.background), beta=0.0)
    with pytest.raises(DomainError):
        pr.ObjectiveSpec(tiny_system, tiny_data.counts, tiny_data.background,
                         beta=-0.1)
    with pytest.raises(DomainError):
        pr.ObjectiveSpec(tiny_system, tiny_data.counts, tiny_data.background,
                         beta=0.0, epsilon=0.0)


def test_objective_rejects_bad_images(tiny_spec):
    q = tiny_spec.system.geometry.n_pixels
    with pytest.raises(ShapeError):
        tiny_spec.value(np.ones(q - 1))
    with pytest.raises(DomainError):
        tiny_spec.value(np.full(q, -1.0))
    bad = np.ones(q)
    bad[0] = np.nan
    with pytest.raises(DomainError):
        tiny_spec.value(bad)


def test_subset_access_requires_partition(tiny_system, tiny_data):
    spec = pr.ObjectiveSpec(tiny_system, tiny_data.counts,
                            tiny_data.background, beta=0.0)
    with pytest.raises(SubsetError):
        spec.subset_data(0)
    assert spec.n_subsets == 1


def test_subset_index_bounds(tiny_spec):
    with pytest.raises(SubsetError):
        tiny_spec.subset_data(-1)
    with pytest.raises(SubsetError):
        tiny_spec.subset_data(4)
