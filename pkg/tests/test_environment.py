import math

import numpy as np
import pytest

from polymermc.covariance import CovarianceSpec, Lattice, circulant_spectrum, q_value
from polymermc.environment import (
    EnvironmentError_,
    TimeGrid,
    dump_slab,
    empirical_covariance_check,
    load_slab,
    max_pair_identity_check,
    replica_rng,
    sample_slab,
)

WHITE1 = CovarianceSpec(family="white_noise", q0=1.0)
POWEXP = CovarianceSpec(family="powered_exponential", q0=1.0, holder_h=0.5, length_scale=1.0)


def test_time_grid():
    g = TimeGrid(horizon=2.0, n_steps=40)
    assert g.dt == pytest.approx(0.05)
    with pytest.raises(EnvironmentError_):
        TimeGrid(horizon=-1.0, n_steps=4)
    with pytest.raises(EnvironmentError_):
        TimeGrid(horizon=1.0, n_steps=0)


def test_sample_slab_deterministic():
    lat = Lattice(dim=2, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=10)
    a = sample_slab(POWEXP, lat, grid, 42, 3)
    b = sample_slab(POWEXP, lat, grid, 42, 3)
    assert np.array_equal(a.increments, b.increments)
    c = sample_slab(POWEXP, lat, grid, 42, 4)
    assert not np.array_equal(a.increments, c.increments)


def test_sample_slab_shape_and_finite():
    lat = Lattice(dim=2, extent=8)
    grid = TimeGrid(horizon=1.0, n_steps=10)
    slab = sample_slab(WHITE1, lat, grid, 0, 0)
    assert slab.increments.shape == (10, 8, 8)
    assert np.all(np.isfinite(slab.increments))
    assert slab.flat.shape == (10, 64)


def test_white_noise_entry_variance():
    # entries are N(0, dt q0) with dt = 0.01; 1e5 samples within 4 se
    lat = Lattice(dim=1, extent=100)
    grid = TimeGrid(horizon=0.1, n_steps=10)
    slab = sample_slab(WHITE1, lat, grid, 7, 0)
    x = slab.increments.ravel()
    n = x.size
    assert n == 1000
    # pool more replicas to reach 1e5 samples
    xs = [x]
    for r in range(1, 100):
        xs.append(sample_slab(WHITE1, lat, grid, 7, r).increments.ravel())
    x = np.concatenate(xs)
    var = x.var(ddof=1)
    se = math.sqrt(2.0 / (x.size - 1)) * 0.01  # se of the variance of N(0, 0.01)
    assert abs(var - 0.01) <= 4 * se


def test_variance_linear_in_dt():
    # halving dt halves the entry variance: ratio in [0.45, 0.55]
    lat = Lattice(dim=1, extent=64)
    g1 = TimeGrid(horizon=1.0, n_steps=10)
    g2 = TimeGrid(horizon=1.0, n_steps=20)
    v1 = np.concatenate(
        [sample_slab(POWEXP, lat, g1, 3, r).increments.ravel() for r in range(16)]
    ).var(ddof=1)
    v2 = np.concatenate(
        [sample_slab(POWEXP, lat, g2, 3, r).increments.ravel() for r in range(16)]
    ).var(ddof=1)
    assert 0.45 <= v2 / v1 <= 0.55


def test_empirical_covariance_check_families():
    grid = TimeGrid(horizon=0.5, n_steps=5)
    specs = [
        (WHITE1, Lattice(dim=1, extent=16)),
        (POWEXP, Lattice(dim=1, extent=32, spacing=0.5)),
        (CovarianceSpec(family="log_regular", q0=1.0, gamma=0.5, amplitude=0.5, cutoff=0.5),
         Lattice(dim=1, extent=32)),
    ]
    for spec, lat in specs:
        rep = empirical_covariance_check(spec, lat, grid, n_replicas=400, seed=11)
        assert rep.passed, [(p.label, p.z) for p in rep.probes]


def test_empirical_covariance_unit_offset_target():
    # powered exponential at spacing 0.5: target dt * e^{-0.5}
    lat = Lattice(dim=1, extent=32, spacing=0.5)
    grid = TimeGrid(horizon=0.5, n_steps=5)
    rep = empirical_covariance_check(POWEXP, lat, grid, n_replicas=500, seed=5)
    unit = [p for p in rep.probes if "offset (1,)" in p.label][0]
    assert unit.target == pytest.approx(0.1 * math.exp(-0.5), rel=1e-6)
    assert abs(unit.z) <= 4


def test_empirical_covariance_requires_replicas():
    with pytest.raises(EnvironmentError_):
        empirical_covariance_check(WHITE1, Lattice(dim=1, extent=8),
                                   TimeGrid(horizon=1.0, n_steps=2), 50, 0)


def test_max_pair_independent_white_noise():
    # E max of two independent N(0,1) increments is 1/sqrt(pi) ~ 0.564190
    lat = Lattice(dim=1, extent=16)
    rep = max_pair_identity_check(WHITE1, lat, [0], [1], duration=1.0,
                                  n_replicas=4000, seed=2)
    p = rep.probes[0]
    assert p.target == pytest.approx(1.0 / math.sqrt(math.pi), abs=1e-9)
    assert abs(p.z) <= 4


def test_max_pair_perfectly_correlated():
    # constant field: X = Y so E max = E X = 0 (target and estimate both 0)
    L = 8
    table = {(k,): 1.0 for k in range(-L, L + 1)}
    spec = CovarianceSpec(family="lattice_table", q0=1.0, table=table)
    lat = Lattice(dim=1, extent=L)
    rep = max_pair_identity_check(spec, lat, [0], [1], duration=1.0,
                                  n_replicas=500, seed=3)
    p = rep.probes[0]
    assert p.target == 0.0
    # X = Y exactly, so max(X, Y) = X with mean 0 up to replica noise
    assert abs(p.z) <= 4


def test_max_pair_powexp_target():
    lat = Lattice(dim=1, extent=32)
    rep = max_pair_identity_check(POWEXP, lat, [0], [1], duration=1.0,
                                  n_replicas=4000, seed=4)
    p = rep.probes[0]
    assert p.target == pytest.approx(math.sqrt(1 - math.exp(-1)) / math.sqrt(math.pi),
                                     abs=1e-9)
    assert abs(p.z) <= 4


def test_max_pair_rejects_same_site():
    with pytest.raises(EnvironmentError_):
        max_pair_identity_check(WHITE1, Lattice(dim=1, extent=8), [1], [1], 1.0, 100, 0)


def test_cross_replica_independence():
    lat = Lattice(dim=1, extent=16)
    grid = TimeGrid(horizon=1.0, n_steps=4)
    prods = []
    for pair in range(500):
        a = sample_slab(WHITE1, lat, grid, 10, 2 * pair)
        b = sample_slab(WHITE1, lat, grid, 10, 2 * pair + 1)
        prods.append(a.increments.flat[0] * b.increments.flat[0])
    prods = np.asarray(prods)
    z = prods.mean() / (prods.std(ddof=1) / math.sqrt(prods.size))
    assert abs(z) <= 4


def test_spectral_matches_cholesky_oracle():
    # d=1, L=8: empirical covariance matrices from the spectral route and a
    # direct Cholesky sampler agree within 5 joint standard errors
    L, n_samp = 8, 20000
    lat = Lattice(dim=1, extent=L)
    spec = CovarianceSpec(family="powered_exponential", q0=1.0, holder_h=0.5, length_scale=2.0)
    grid = TimeGrid(horizon=1.0, n_steps=1)

    spectrum = circulant_spectrum(spec, lat)
    fields = np.stack([
        sample_slab(spec, lat, grid, 21, r, spectrum).increments[0] for r in range(n_samp)
    ])
    emp_spec = fields.T @ fields / n_samp

    cov = np.empty((L, L))
    for i in range(L):
        for j in range(L):
            cov[i, j] = q_value(spec, float(lat.min_image(np.array([i - j]))[0]))
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(L))
    rng = replica_rng(77, 0)
    draws = rng.standard_normal((n_samp, L)) @ chol.T
    emp_chol = draws.T @ draws / n_samp

    # se of a covariance entry ~ sqrt((C_ii C_jj + C_ij^2)/n); take the worst case
    se = math.sqrt(2.0 / n_samp)
    assert np.max(np.abs(emp_spec - emp_chol)) <= 5 * math.sqrt(2) * se


def test_replica_rng_streams_differ():
    a = replica_rng(1, 0, stream=0).standard_normal(4)
    b = replica_rng(1, 0, stream=1).standard_normal(4)
    c = replica_rng(1, 1, stream=0).standard_normal(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(a, replica_rng(1, 0, stream=0).standard_normal(4))


def test_slab_dump_roundtrip(tmp_path):
    lat = Lattice(dim=2, extent=8, spacing=0.5)
    grid = TimeGrid(horizon=1.0, n_steps=6)
    slab = sample_slab(POWEXP, lat, grid, 9, 1)
    path = tmp_path / "slab.bin"
    dump_slab(slab, path)
    back = load_slab(path, POWEXP)
    assert np.array_equal(back.increments, slab.increments)
    assert back.lattice == lat
    assert back.grid.n_steps == 6 and back.seed == 9 and back.replica_id == 1
    with pytest.raises(EnvironmentError_):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOTASLAB" + b"\0" * 64)
        load_slab(bad, POWEXP)
