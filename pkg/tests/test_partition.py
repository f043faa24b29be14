import math

import numpy as np
import pytest

from polymermc.covariance import CovarianceSpec, Lattice
from polymermc.environment import EnvironmentSlab, TimeGrid, sample_slab
from polymermc.partition import (
    BrownianPathSampler,
    JumpPathSampler,
    PartitionError,
    WalkKernel,
    annealed_mean_check,
    enumerate_logZ,
    montecarlo_logZ,
    transfer_matrix_logZ,
)

WHITE1 = CovarianceSpec(family="white_noise", q0=1.0)


def _slab(lat, grid, seed=0, rep=0, spec=WHITE1):
    return sample_slab(spec, lat, grid, seed, rep)


def _zero_slab(lat, grid):
    s = _slab(lat, grid)
    return EnvironmentSlab(increments=np.zeros_like(s.increments), spec=s.spec,
                           lattice=lat, grid=grid, seed=0, replica_id=0)


def test_walk_kernel_probabilities():
    k = WalkKernel(2, 0.02)
    assert k.stay == pytest.approx(1 - 4 * 0.02)
    assert k.stay + 2 * k.d * k.move == pytest.approx(1.0)
    with pytest.raises(PartitionError):
        WalkKernel(2, 0.05)  # 2 d dt = 0.2 > 0.1
    with pytest.raises(PartitionError):
        WalkKernel(0, 0.01)


def test_transfer_beta_zero_exact():
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    est = transfer_matrix_logZ(_slab(lat, grid, 5), 0.0, WalkKernel(1, grid.dt))
    assert est.log_z == 0.0 and est.stderr == 0.0


def test_transfer_zero_slab_exact():
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    est = transfer_matrix_logZ(_zero_slab(lat, grid), 3.0, WalkKernel(1, grid.dt))
    assert est.log_z == 0.0


def test_transfer_equals_enumerate_small():
    lat = Lattice(dim=1, extent=7)
    grid = TimeGrid(horizon=0.24, n_steps=6)
    k = WalkKernel(1, grid.dt)
    slab = _slab(lat, grid, 17)
    a = transfer_matrix_logZ(slab, 1.0, k).log_z
    b = enumerate_logZ(slab, 1.0, k).log_z
    assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


def test_enumerate_single_step_hand_expansion():
    # n=1, d=1: all 3 one-step paths sit at the origin during step 0 and the
    # probabilities sum to 1, so Z = exp(beta * dW_0(0))
    lat = Lattice(dim=1, extent=5)
    grid = TimeGrid(horizon=0.04, n_steps=1)
    slab = _slab(lat, grid, 3)
    est = enumerate_logZ(slab, 1.7, WalkKernel(1, grid.dt))
    assert est.log_z == pytest.approx(1.7 * slab.flat[0, 0], abs=1e-12)


def test_enumerate_rejects_large():
    lat = Lattice(dim=1, extent=5)
    grid = TimeGrid(horizon=0.8, n_steps=20)
    with pytest.raises(PartitionError):
        enumerate_logZ(_slab(lat, grid), 1.0, WalkKernel(1, grid.dt))


def test_scaling_identity_exact():
    # transfer(lambda * slab, beta) == transfer(slab, lambda * beta) exactly
    # when lambda is a power of two (weights depend only on beta * slab)
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    k = WalkKernel(1, grid.dt)
    slab = _slab(lat, grid, 31)
    lam = 2.0
    a = transfer_matrix_logZ(slab.scaled(lam), 0.75, k).log_z
    b = transfer_matrix_logZ(slab, lam * 0.75, k).log_z
    assert a == b


def test_convexity_in_beta_per_slab():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    k = WalkKernel(1, grid.dt)
    betas = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    for rep in range(5):
        slab = _slab(lat, grid, 23, rep)
        logs = np.array([transfer_matrix_logZ(slab, b, k).log_z for b in betas])
        slopes = np.diff(logs) / np.diff(betas)
        assert np.diff(slopes).min() >= -1e-9


def test_jensen_direction():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    k = WalkKernel(1, grid.dt)
    logs = np.array([
        transfer_matrix_logZ(_slab(lat, grid, 41, r), 1.0, k).log_z for r in range(50)
    ])
    assert logs.mean() <= math.log(np.exp(logs).mean()) + 1e-12


def test_montecarlo_beta_zero_exact():
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    est = montecarlo_logZ(_slab(lat, grid, 2), 0.0, WalkKernel(1, grid.dt), 500, 0)
    assert est.log_z == 0.0


def test_montecarlo_agrees_with_transfer():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=2.0, n_steps=40)
    k = WalkKernel(1, grid.dt)
    slab = _slab(lat, grid, 6)
    ref = transfer_matrix_logZ(slab, 0.2, k).log_z
    est = montecarlo_logZ(slab, 0.2, k, 20000, 99)
    assert abs(est.log_z - ref) <= 3 * est.stderr
    assert est.reliable and est.ess > 100


def test_montecarlo_jump_sampler_agrees():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=2.0, n_steps=40)
    slab = _slab(lat, grid, 6)
    ref = transfer_matrix_logZ(slab, 0.2, WalkKernel(1, grid.dt)).log_z
    est = montecarlo_logZ(slab, 0.2, JumpPathSampler(1), 20000, 7)
    # jump sampler is the exact continuous-time law; small dt bias allowed
    assert abs(est.log_z - ref) <= 3 * est.stderr + 0.01


def test_montecarlo_stderr_scaling():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    k = WalkKernel(1, grid.dt)
    slab = _slab(lat, grid, 4)
    ses = []
    for n in (2000, 8000):
        reps = [montecarlo_logZ(slab, 0.5, k, n, s).stderr for s in range(8)]
        ses.append(np.mean(reps))
    assert abs(ses[0] / ses[1] - 2.0) <= 0.4  # quadrupling n halves stderr +-20%


def test_montecarlo_requires_paths():
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    with pytest.raises(PartitionError):
        montecarlo_logZ(_slab(lat, grid), 1.0, WalkKernel(1, grid.dt), 50, 0)


def test_brownian_sampler_band_exit():
    # with huge eps no path ever leaves the origin; log Z must be exactly 0
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=0.1, n_steps=10)
    slab = _zero_slab(lat, grid)
    sampler = BrownianPathSampler(1, eps=100.0, h=grid.dt / 4)
    est = montecarlo_logZ(slab, 2.0, sampler, 200, 0)
    assert est.log_z == 0.0


def test_boundary_mass_and_wrap_validity():
    # embed a small-lattice slab inside a doubled lattice; when the boundary
    # mass is tiny the transfer result is insensitive to the wrap
    spec = WHITE1
    L, L2 = 33, 66
    lat2 = Lattice(dim=1, extent=L2)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    big = sample_slab(spec, lat2, grid, 55, 0)
    lat1 = Lattice(dim=1, extent=L)
    offs = np.arange(L)
    small_inc = big.increments[:, lat2.wrap(lat1.min_image(offs))]
    small = EnvironmentSlab(increments=small_inc, spec=spec, lattice=lat1,
                            grid=grid, seed=55, replica_id=0)
    k = WalkKernel(1, grid.dt)
    a = transfer_matrix_logZ(small, 1.0, k)
    b = transfer_matrix_logZ(big, 1.0, k)
    assert a.boundary_mass <= 1e-3
    assert abs(a.log_z - b.log_z) <= 1e-6 * max(1.0, abs(b.log_z))


def test_annealed_mean_beta_zero_exact():
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=20)
    rep = annealed_mean_check(WHITE1, lat, grid, WalkKernel(1, grid.dt), 0.0, 100, 0)
    p = rep.probes[0]
    assert p.target == 1.0 and p.estimate == 1.0


def test_annealed_mean_closed_form_target():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=1.0, n_steps=25)
    rep = annealed_mean_check(WHITE1, lat, grid, WalkKernel(1, grid.dt), 1.0, 1500, 12)
    p = rep.probes[0]
    assert p.target == pytest.approx(math.exp(0.5), abs=1e-12)
    assert rep.passed, p.z


def test_annealed_rejects_extreme_variance():
    lat = Lattice(dim=1, extent=8)
    grid = TimeGrid(horizon=10.0, n_steps=250)
    with pytest.raises(PartitionError):
        annealed_mean_check(WHITE1, lat, grid, WalkKernel(1, grid.dt), 3.0, 10, 0)
