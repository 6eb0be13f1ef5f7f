"""Solver loop tests.

The single-subiteration oracle recomputes the update with dense numpy from
the defining equation, and separately checks the classic equivalence: with
one subset, lambda = 1, no penalty and no clamping, the relaxed update
reduces to a multiplicative EM step.
"""

import numpy as np
import pytest

import petrecon as pr
from petrecon.errors import (CacheError, ConfigError, DomainError,
                             NumericalError, ShapeError)


def _spec(tiny_system, tiny_data, tiny_geometry, n_subsets, beta=0.0):
    partition = pr.partition_subsets(tiny_geometry, n_subsets)
    return pr.ObjectiveSpec(tiny_system, tiny_data.counts, tiny_data.background,
                            beta=beta, partition=partition, gamma_r=2.0,
                            epsilon=1e-9)


class IterateWatcher(pr.Callback):
    def __init__(self):
        self.start = None
        self.subiterates = []
        self.sub_addresses = []
        self.iterates = []
        self.walls = []

    def on_start(self, f0):
        self.start = f0

    def on_subiteration(self, k, pos, subset_id, f):
        self.subiterates.append(f)
        self.sub_addresses.append((k, pos, subset_id))

    def on_iteration(self, k, f, wall_time_s):
        self.iterates.append(f)
        self.walls.append(wall_time_s)


def test_relaxation_schedule_values():
    sched = pr.RelaxationSchedule(lambda0=1.0, a=1.0 / 35.0)
    assert sched(0) == 1.0
    assert sched(35) == pytest.approx(0.5, rel=1e-15)
    assert pr.RelaxationSchedule(2.0, 0.5)(2) == 1.0
    with pytest.raises(ConfigError):
        pr.RelaxationSchedule(lambda0=0.0, a=0.1)
    with pytest.raises(ConfigError):
        pr.RelaxationSchedule(lambda0=1.0, a=0.0)
    with pytest.raises(ConfigError):
        sched(-1)


def test_project_interior_clamps_both_sides():
    out = pr.project_interior(np.array([-5.0, 0.0, 1e-6, 3.0, 9.999, 20.0]),
                              t=1e-4, upper_bound=10.0)
    np.testing.assert_allclose(
        out, [1e-4, 1e-4, 1e-4, 3.0, 9.999, 10.0 - 1e-4], rtol=0, atol=0)
    with pytest.raises(ConfigError):
        pr.project_interior(np.ones(3), t=0.0, upper_bound=10.0)
    with pytest.raises(ConfigError):
        pr.project_interior(np.ones(3), t=6.0, upper_bound=10.0)


def test_single_subiteration_matches_dense_formula(tiny_system, tiny_data,
                                                   tiny_geometry):
    spec = _spec(tiny_system, tiny_data, tiny_geometry, n_subsets=1)
    u = 1e6
    t = 1e-4
    config = pr.SolverConfig(precond=pr.PrecondConfig(variant="BSREM"),
                             upper_bound=u, interior_t=t)
    q = tiny_geometry.n_pixels
    f0 = np.full(q, 2.0)
    watcher = IterateWatcher()
    pr.run(f0, spec, config, pr.RelaxationSchedule(1.0, 0.5), 1, (watcher,))

    dense = tiny_system.matrix.toarray()
    colsum = dense.sum(axis=0)
    p = np.where(colsum > 0, colsum, 1.0)
    grad = dense.T @ (1.0 - tiny_data.counts
                      / (dense @ f0 + tiny_data.background))
    expected = np.clip(f0 - 1.0 * (f0 / p) * grad, t, u - t)
    np.testing.assert_allclose(watcher.subiterates[0], expected, rtol=1e-12)

    # Same step written multiplicatively: one EM update for touched pixels.
    ratio = tiny_data.counts / (dense @ f0 + tiny_data.background)
    em = f0 * (dense.T @ ratio) / p
    touched = colsum > 0
    np.testing.assert_allclose(watcher.subiterates[0][touched],
                               np.clip(em, t, u - t)[touched], rtol=1e-12)


def test_callback_protocol_and_rebinding(tiny_system, tiny_data, tiny_geometry):
    spec = _spec(tiny_system, tiny_data, tiny_geometry, n_subsets=4, beta=0.05)
    config = pr.SolverConfig(precond=pr.PrecondConfig(variant="BSREM"),
                             upper_bound=100.0)
    watcher = IterateWatcher()
    f0 = np.ones(tiny_geometry.n_pixels)
    final = pr.run(f0, spec, config, pr.RelaxationSchedule(1.0, 0.2), 3,
                   (watcher,))

    np.testing.assert_array_equal(watcher.start, f0)
    assert len(watcher.subiterates) == 3 * 4
    assert len(watcher.iterates) == 3
    order = spec.partition.access_order
    for idx, (k, pos, subset_id) in enumerate(watcher.sub_addresses):
        assert k == idx // 4
        assert pos == idx % 4 + 1
        assert subset_id == order[idx % 4]
    # The solver rebinds on every update, so earlier iterates are untouched:
    # the last subiterate of each iteration is the iteration's iterate.
    for k in range(3):
        np.testing.assert_array_equal(watcher.iterates[k],
                                      watcher.subiterates[4 * k + 3])
    np.testing.assert_array_equal(final, watcher.iterates[-1])
    assert all(b >= a for a, b in zip(watcher.walls, watcher.walls[1:]))
    assert watcher.walls[0] >= 0.0


def test_iterates_stay_in_interior_band(tiny_system, tiny_data, tiny_geometry):
    spec = _spec(tiny_system, tiny_data, tiny_geometry, n_subsets=4, beta=0.05)
    u, t = 50.0, 1e-4
    config = pr.SolverConfig(
        precond=pr.PrecondConfig(variant="SDP-P1", nu_min=1.5, nu_max=2.5),
        upper_bound=u, interior_t=t)
    watcher = IterateWatcher()
    pr.run(np.ones(tiny_geometry.n_pixels), spec, config,
           pr.RelaxationSchedule(1.0, 0.2), 10, (watcher,))
    lows = min(f.min() for f in watcher.subiterates)
    highs = max(f.max() for f in watcher.subiterates)
    assert lows >= t
    assert highs <= u - t
    # The cold exterior really is pinned at the floor, so the clamp is active.
    assert lows == t


def test_run_is_deterministic(tiny_system, tiny_data, tiny_geometry):
    spec1 = _spec(tiny_system, tiny_data, tiny_geometry, 4, beta=0.05)
    spec2 = _spec(tiny_system, tiny_data, tiny_geometry, 4, beta=0.05)
    config = pr.SolverConfig(
        precond=pr.PrecondConfig(variant="SDP-P2", rho=2.0, delta1=2.0,
                                 nu_min=1.4, nu_max=2.3),
        upper_bound=80.0)
    f0 = np.ones(tiny_geometry.n_pixels)
    a = pr.run(f0, spec1, config, pr.RelaxationSchedule(1.0, 0.3), 8)
    b = pr.run(f0, spec2, config, pr.RelaxationSchedule(1.0, 0.3), 8)
    assert a.tobytes() == b.tobytes()


def test_run_input_validation(tiny_system, tiny_data, tiny_geometry):
    spec = _spec(tiny_system, tiny_data, tiny_geometry, 4)
    config = pr.SolverConfig(precond=pr.PrecondConfig(variant="BSREM"),
                             upper_bound=10.0)
    sched = pr.RelaxationSchedule(1.0, 0.1)
    q = tiny_geometry.n_pixels
    with pytest.raises(ShapeError):
        pr.run(np.ones(q - 1), spec, config, sched, 1)
    with pytest.raises(DomainError):
        pr.run(np.zeros(q), spec, config, sched, 1)
    with pytest.raises(DomainError):
        pr.run(np.full(q, 10.0), spec, config, sched, 1)
    with pytest.raises(ConfigError):
        pr.run(np.ones(q), spec, config, sched, -1)
    no_subsets = pr.ObjectiveSpec(tiny_system, tiny_data.counts,
                                  tiny_data.background, beta=0.0)
    with pytest.raises(ConfigError):
        pr.run(np.ones(q), no_subsets, config, sched, 1)


def test_non_finite_update_raises(tiny_system, tiny_data, tiny_geometry,
                                  monkeypatch):
    spec = _spec(tiny_system, tiny_data, tiny_geometry, 4)
    q = tiny_geometry.n_pixels
    monkeypatch.setattr(spec, "subset_gradient",
                        lambda f, i: np.full(q, np.inf))
    config = pr.SolverConfig(precond=pr.PrecondConfig(variant="BSREM"),
                             upper_bound=10.0)
    with pytest.raises(NumericalError) as err:
        pr.run(np.ones(q), spec, config, pr.RelaxationSchedule(1.0, 0.1), 1)
    assert err.value.iteration == 0
    assert err.value.subiteration == 1


def test_osem_upper_bound_matches_dense_reimplementation(tiny_system, tiny_data,
                                                         tiny_geometry):
    spec = _spec(tiny_system, tiny_data, tiny_geometry, n_subsets=4)
    dense = tiny_system.matrix.toarray()
    partition = spec.partition
    f = np.ones(tiny_geometry.n_pixels)
    for _ in range(2):
        for i in partition.access_order:
            rows = partition.rows(i)
            a_i = dense[rows]
            denom = a_i.sum(axis=0)
            ratio = tiny_data.counts[rows] / (a_i @ f + tiny_data.background[rows])
            update = a_i.T @ ratio
            f = f * np.where(denom > 0, update / np.where(denom > 0, denom, 1.0),
                             1.0)
    expected = 10.0 * f.max()
    assert pr.osem_upper_bound(spec) == pytest.approx(expected, rel=1e-12)
    assert pr.osem_upper_bound(spec, factor=3.0) == pytest.approx(
        0.3 * expected, rel=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    path = tmp_path / "reference.ckpt"
    image = np.linspace(0.1, 5.0, 64)
    digest = "ab" * 32
    pr.save_checkpoint(path, 400, image, digest)
    iteration, loaded, stored = pr.load_checkpoint(path)
    assert iteration == 400
    assert stored == digest
    np.testing.assert_array_equal(loaded, image)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(ConfigError):
        pr.save_checkpoint(tmp_path / "x.ckpt", 1, np.ones(4), "short")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CacheError):
        pr.load_checkpoint(bad)
    truncated = tmp_path / "trunc.ckpt"
    pr.save_checkpoint(truncated, 1, np.ones(16), "cd" * 32)
    payload = truncated.read_bytes()
    truncated.write_bytes(payload[:len(payload) - 9])
    with pytest.raises(CacheError):
        pr.load_checkpoint(truncated)
