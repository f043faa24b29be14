"""Gaussian environment slabs: time-increment fields on the periodic lattice.

The environment W is Brownian in time and stationary in space.  We store only
its increments over a regular time grid: slab[k] is the spatial field
W((k+1)*dt, .) - W(k*dt, .), an independent draw of a stationary Gaussian
field with covariance dt * Q, sampled through the circulant spectrum.

Seeding: each (master_seed, replica_id) pair owns an independent PCG64 stream
derived through numpy's SeedSequence, so regeneration is bit-identical and
independent of execution order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .covariance import CirculantSpectrum, CovarianceSpec, Lattice, circulant_spectrum, q_value

SLAB_MAGIC = b"PMCSLAB1"


class EnvironmentError_(ValueError):
    """Inconsistent grid/lattice/spectrum arguments."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with n_steps increments."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise EnvironmentError_(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise EnvironmentError_("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class EnvironmentSlab:
    """Realized Gaussian increments, shape (n_steps,) + lattice.shape."""

    increments: np.ndarray
    spec: CovarianceSpec = field(repr=False)
    lattice: Lattice = field(repr=False)
    grid: TimeGrid
    seed: int
    replica_id: int

    @property
    def flat(self) -> np.ndarray:
        """View shaped (n_steps, n_sites)."""
        return self.increments.reshape(self.grid.n_steps, self.lattice.n_sites)

    def scaled(self, factor: float) -> "EnvironmentSlab":
        return EnvironmentSlab(
            increments=factor * self.increments,
            spec=self.spec,
            lattice=self.lattice,
            grid=self.grid,
            seed=self.seed,
            replica_id=self.replica_id,
        )


def replica_rng(master_seed: int, replica_id: int, stream: int = 0) -> np.random.Generator:
    """Independent, order-stable stream for one (seed, replica, stream) triple."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream, replica_id))
    return np.random.Generator(np.random.PCG64(ss))


def sample_slab(
    spec: CovarianceSpec,
    lattice: Lattice,
    grid: TimeGrid,
    seed: int,
    replica_id: int = 0,
    spectrum: CirculantSpectrum | None = None,
) -> EnvironmentSlab:
    """Draw one environment replica.

    White noise draws i.i.d. normals directly; every other family goes
    through the circulant spectral route: with eigenvalues lam of the
    periodized covariance, real(IFFT(FFT(white) * sqrt(lam))) has exactly
    the clipped covariance row.
    """
    rng = replica_rng(seed, replica_id)
    shape = (grid.n_steps,) + lattice.shape
    sqdt = math.sqrt(grid.dt)
    if spec.family == "white_noise":
        inc = rng.standard_normal(shape) * (sqdt * math.sqrt(spec.q0))
    else:
        if spectrum is None:
            spectrum = circulant_spectrum(spec, lattice)
        if spectrum.lattice != lattice or spectrum.spec != spec:
            raise EnvironmentError_("spectrum does not match spec/lattice")
        axes = tuple(range(1, lattice.dim + 1))
        white = rng.standard_normal(shape)
        amp = np.sqrt(spectrum.eigenvalues)
        inc = np.fft.ifftn(np.fft.fftn(white, axes=axes) * amp, axes=axes).real * sqdt
    inc.setflags(write=False)
    return EnvironmentSlab(
        increments=inc, spec=spec, lattice=lattice, grid=grid, seed=seed, replica_id=replica_id
    )


# ---------------------------------------------------------------------------
# statistical validation

@dataclass(frozen=True)
class ProbeResult:
    label: str
    target: float
    estimate: float
    stderr: float

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.target else float("inf")
        return (self.estimate - self.target) / self.stderr


@dataclass(frozen=True)
class StatReport:
    probes: list
    n_replicas: int
    z_max: float = 4.0

    @property
    def passed(self) -> bool:
        return all(abs(p.z) <= self.z_max for p in self.probes)


def _probe_sites(lattice: Lattice):
    """Origin, unit offset, 2*e_1, and a far offset, as flat site indices."""
    d, L = lattice.dim, lattice.extent
    offsets = [np.zeros(d, int)]
    for k in (1, 2, L // 2):
        off = np.zeros(d, int)
        off[0] = k
        offsets.append(off)
    flat = [int(np.ravel_multi_index(tuple(lattice.wrap(o)), lattice.shape)) for o in offsets]
    return offsets, flat


def empirical_covariance_check(
    spec: CovarianceSpec,
    lattice: Lattice,
    grid: TimeGrid,
    n_replicas: int,
    seed: int,
) -> StatReport:
    """Compare empirical slab covariances to dt * Q at a fixed probe set.

    Targets use the realized (clipped) covariance row, which coincides with
    the periodized Q whenever no spectral mass was clipped.
    """
    if n_replicas < 100:
        raise EnvironmentError_("need n_replicas >= 100")
    spectrum = None
    if spec.family != "white_noise":
        spectrum = circulant_spectrum(spec, lattice)
        row = spectrum.covariance_row().ravel()
    else:
        row = np.zeros(lattice.n_sites)
        row[0] = spec.q0
    offsets, flat = _probe_sites(lattice)
    k0, k1 = 0, min(1, grid.n_steps - 1)

    samples = {f"off{j}": [] for j in range(len(flat))}
    cross = []
    for r in range(n_replicas):
        slab = sample_slab(spec, lattice, grid, seed, r, spectrum)
        f = slab.flat
        for j, s in enumerate(flat):
            samples[f"off{j}"].append(f[k0, 0] * f[k0, s])
        if k1 != k0:
            cross.append(f[k0, 0] * f[k1, 0])

    probes = []
    dt = grid.dt
    for j, (off, s) in enumerate(zip(offsets, flat)):
        vals = np.asarray(samples[f"off{j}"])
        target = dt * row[s] if j > 0 else dt * row[0]
        probes.append(
            ProbeResult(
                label=f"same-step offset {tuple(int(c) for c in off)}",
                target=float(target),
                estimate=float(vals.mean()),
                stderr=float(vals.std(ddof=1) / math.sqrt(len(vals))),
            )
        )
    if cross:
        vals = np.asarray(cross)
        probes.append(
            ProbeResult(
                label="distinct steps, same site",
                target=0.0,
                estimate=float(vals.mean()),
                stderr=float(vals.std(ddof=1) / math.sqrt(len(vals))),
            )
        )
    return StatReport(probes=probes, n_replicas=n_replicas)


def max_pair_identity_check(
    spec: CovarianceSpec,
    lattice: Lattice,
    site_a,
    site_b,
    duration: float,
    n_replicas: int,
    seed: int,
) -> StatReport:
    """Check E[max(DW_a, DW_b)] = sqrt(duration/pi) * sqrt(Q(0) - Q(a-b)).

    DW_x is the increment of W at site x over `duration`; for jointly
    Gaussian variables with common variances the expected maximum depends
    only on the variance of the difference.
    """
    site_a = np.asarray(site_a, int)
    site_b = np.asarray(site_b, int)
    if np.array_equal(site_a, site_b):
        raise EnvironmentError_("site_a must differ from site_b")
    n_steps = 4
    grid = TimeGrid(horizon=duration, n_steps=n_steps)
    spectrum = None
    if spec.family != "white_noise":
        spectrum = circulant_spectrum(spec, lattice)

    ia = int(np.ravel_multi_index(tuple(lattice.wrap(site_a)), lattice.shape))
    ib = int(np.ravel_multi_index(tuple(lattice.wrap(site_b)), lattice.shape))
    maxima = np.empty(n_replicas)
    for r in range(n_replicas):
        slab = sample_slab(spec, lattice, grid, seed, r, spectrum)
        f = slab.flat
        maxima[r] = max(f[:, ia].sum(), f[:, ib].sum())

    gap = spec.q0 - q_value(spec, (site_a - site_b) * lattice.spacing)
    target = math.sqrt(duration / math.pi) * math.sqrt(max(gap, 0.0))
    probe = ProbeResult(
        label=f"E[max] sites {tuple(map(int, site_a))} vs {tuple(map(int, site_b))}",
        target=target,
        estimate=float(maxima.mean()),
        stderr=float(maxima.std(ddof=1) / math.sqrt(n_replicas)),
    )
    return StatReport(probes=[probe], n_replicas=n_replicas)


# ---------------------------------------------------------------------------
# debug dump format (binary header + row-major float64, see README)

def dump_slab(slab: EnvironmentSlab, path):
    header = struct.pack(
        "<8sIIdIdqq",
        SLAB_MAGIC,
        1,  # version
        slab.lattice.dim,
        slab.lattice.spacing,
        slab.grid.n_steps,
        slab.grid.dt,
        slab.seed,
        slab.replica_id,
    ) + struct.pack("<I", slab.lattice.extent)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(slab.increments, dtype="<f8").tobytes())


def load_slab(path, spec: CovarianceSpec) -> EnvironmentSlab:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<8sIIdIdqq"))
        magic, version, dim, spacing, n_steps, dt, seed, replica = struct.unpack(
            "<8sIIdIdqq", head
        )
        if magic != SLAB_MAGIC or version != 1:
            raise EnvironmentError_("not a slab dump")
        (extent,) = struct.unpack("<I", fh.read(4))
        lattice = Lattice(dim=dim, extent=extent, spacing=spacing)
        grid = TimeGrid(horizon=dt * n_steps, n_steps=n_steps)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape((n_steps,) + lattice.shape)
    return EnvironmentSlab(
        increments=data, spec=spec, lattice=lattice, grid=grid, seed=seed, replica_id=replica
    )
