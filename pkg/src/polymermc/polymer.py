"""Polymer paths and their energy against an environment slab.

Two path laws are implemented:
  * the continuous-time nearest-neighbor walk (jump rate 2d, each jump
    uniform over the 2d unit moves), and
  * the d-dimensional Brownian motion, embedded into the epsilon-lattice by
    recording per-component exits of +-epsilon bands.

Jump times are snapped to the slab time grid so that the Hamiltonian reads
only stored increments; the snapping bias is O(dt) per jump and is bounded
empirically by the dt-refinement acceptance test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import EnvironmentSlab, TimeGrid


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class JumpPath:
    """Piecewise-constant lattice path.

    jump_times : strictly increasing, each a positive multiple of the grid
        step, <= horizon.
    sites : integer array (n_jumps + 1, d); sites[0] is the origin and every
        consecutive displacement is +-e_i for exactly one axis.
    """

    jump_times: np.ndarray
    sites: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.jump_times, float)
        s = np.atleast_2d(np.asarray(self.sites, int))
        if s.shape[0] != t.size + 1:
            raise PathError("need one more site than jump times")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > self.horizon + 1e-12):
            raise PathError("jump times must be strictly increasing in (0, horizon]")
        if np.any(s[0] != 0):
            raise PathError("path must start at the origin")
        if s.shape[0] > 1:
            steps = np.diff(s, axis=0)
            if np.any(np.abs(steps).sum(axis=1) != 1):
                raise PathError("consecutive displacements must be nearest-neighbor")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "sites", s)

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    def position_at(self, s: float) -> np.ndarray:
        """Path value at time s (right-continuous)."""
        k = int(np.searchsorted(self.jump_times, s, side="right"))
        return self.sites[k]

    def occupancy(self, grid: TimeGrid) -> np.ndarray:
        """Occupied site for each grid step, shape (n_steps, d)."""
        if abs(grid.horizon - self.horizon) > 1e-9:
            raise PathError("grid horizon does not match path horizon")
        step_of_jump = np.rint(self.jump_times / grid.dt).astype(int)
        if np.any(np.abs(self.jump_times - step_of_jump * grid.dt) > 1e-9 * grid.horizon):
            raise PathError("jump times are not on the slab grid")
        occ = np.empty((grid.n_steps, self.dim), int)
        k = np.searchsorted(step_of_jump, np.arange(grid.n_steps), side="right")
        occ[:] = self.sites[k]
        return occ


def snap_to_grid(times: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Round jump times to the nearest grid point; collisions (and times
    snapped to 0) are shifted to the next free step.  Raises if there are
    more jumps than steps."""
    if times.size > grid.n_steps:
        raise PathError(
            f"{times.size} jumps exceed {grid.n_steps} grid steps; decrease dt"
        )
    used = set()
    for tau in np.sort(times):
        j = min(max(1, int(round(tau / grid.dt))), grid.n_steps)
        while j in used and j <= grid.n_steps:
            j += 1
        if j > grid.n_steps:  # tail full: fall back to the nearest free earlier step
            j = min(max(1, int(round(tau / grid.dt))), grid.n_steps)
            while j in used:
                j -= 1
        used.add(j)
    return np.sort(np.asarray(sorted(used), float)) * grid.dt


def sample_jump_path(d: int, t: float, grid: TimeGrid, rng) -> JumpPath:
    """Continuous-time walk: Exp(2d) inter-jump times, uniform unit moves."""
    if abs(grid.horizon - t) > 1e-12:
        raise PathError("t must equal grid.horizon")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    times = []
    clock = 0.0
    while True:
        clock += rng.exponential(1.0 / (2 * d))
        if clock > t:
            break
        times.append(clock)
    times = snap_to_grid(np.asarray(times), grid)
    n = times.size
    sites = np.zeros((n + 1, d), int)
    if n:
        axis = rng.integers(0, d, size=n)
        sign = rng.integers(0, 2, size=n) * 2 - 1
        steps = np.zeros((n, d), int)
        steps[np.arange(n), axis] = sign
        sites[1:] = np.cumsum(steps, axis=0)
    return JumpPath(jump_times=times, sites=sites, horizon=t)


@dataclass(frozen=True)
class BrownianTrace:
    """Fine-grid Brownian sample plus its epsilon-lattice embedding."""

    fine_times: np.ndarray = field(repr=False)
    fine_path: np.ndarray = field(repr=False)  # (n_fine + 1, d), physical units
    eps: float
    exit_times: list = field(repr=False)   # per component, unsnapped
    exit_levels: list = field(repr=False)  # per component, lattice units
    embedded: JumpPath = None  # sites in lattice units (multiples of eps)

    def levels_on_fine_grid(self) -> np.ndarray:
        """Embedded lattice position at every fine-grid time (unsnapped jumps)."""
        merged = sorted(
            (tau, j, i) for j, taus in enumerate(self.exit_times) for i, tau in enumerate(taus)
        )
        d = self.fine_path.shape[1]
        levels = np.zeros((self.fine_times.size, d), int)
        pos = np.zeros(d, int)
        idx = 0
        for tau, j, i in merged:
            nxt = int(np.searchsorted(self.fine_times, tau))
            levels[idx:nxt] = pos
            pos = pos.copy()
            pos[j] = self.exit_levels[j][i]
            idx = nxt
        levels[idx:] = pos
        return levels

    def sup_distance(self) -> float:
        """max over fine-grid times of |b_s - b~_s| (Euclidean)."""
        levels = self.levels_on_fine_grid()
        return float(np.sqrt(((self.fine_path - levels * self.eps) ** 2).sum(axis=1)).max())


def discretize_brownian_path(d: int, t: float, eps: float, h: float, rng, grid: TimeGrid | None = None) -> BrownianTrace:
    """Simulate Brownian motion at resolution h and embed it into eps * Z^d.

    Per component, successive exit times of +-eps bands around the last
    recorded level are detected on the fine grid; all exits are merged into
    one ordered jump sequence.  Simultaneous exits (possible on the grid)
    are processed in ascending component order.
    """
    if h > eps * eps / 100.0 + 1e-15:
        raise PathError("need h <= eps^2 / 100")
    n_fine = int(round(t / h))
    if abs(n_fine * h - t) > 1e-9:
        raise PathError("t must be a multiple of h")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    incs = rng.standard_normal((n_fine, d)) * math.sqrt(h)
    path = np.vstack([np.zeros((1, d)), np.cumsum(incs, axis=0)])
    times = np.arange(n_fine + 1) * h

    exit_times = []
    exit_levels = []
    for j in range(d):
        b = path[:, j]
        taus, walks = [], []
        level = 0
        i = 0
        while True:
            out = np.abs(b[i:] - level * eps) >= eps
            if not out.any():
                break
            k = i + int(np.argmax(out))
            level += 1 if b[k] > level * eps else -1
            taus.append(times[k])
            walks.append(level)
            i = k
        exit_times.append(np.asarray(taus))
        exit_levels.append(walks)

    merged = sorted((tau, j, i) for j, taus in enumerate(exit_times) for i, tau in enumerate(taus))
    raw_times = np.asarray([m[0] for m in merged])
    if grid is None:
        grid = TimeGrid(horizon=t, n_steps=n_fine)
    snapped = snap_to_grid(raw_times, grid)
    sites = np.zeros((len(merged) + 1, d), int)
    pos = np.zeros(d, int)
    for n, (tau, j, i) in enumerate(merged):
        pos = pos.copy()
        pos[j] = exit_levels[j][i]
        sites[n + 1] = pos
    embedded = JumpPath(jump_times=snapped, sites=sites, horizon=t)
    return BrownianTrace(
        fine_times=times,
        fine_path=path,
        eps=eps,
        exit_times=exit_times,
        exit_levels=exit_levels,
        embedded=embedded,
    )


def hamiltonian(path: JumpPath, slab: EnvironmentSlab) -> float:
    """Minus the path energy: the sum of environment increments collected at
    the occupied site over each occupation interval (sites wrap
    periodically)."""
    occ = path.occupancy(slab.grid)
    wrapped = slab.lattice.wrap(occ)
    flat_idx = np.ravel_multi_index(tuple(wrapped.T), slab.lattice.shape)
    return float(slab.flat[np.arange(slab.grid.n_steps), flat_idx].sum())


def occupancy_energy(occ_sites: np.ndarray, slab: EnvironmentSlab) -> np.ndarray:
    """Energies for a batch of occupancy arrays, shape (n_paths, n_steps, d)."""
    lat = slab.lattice
    wrapped = lat.wrap(occ_sites)
    flat_idx = np.ravel_multi_index(tuple(np.moveaxis(wrapped, -1, 0)), lat.shape)
    steps = np.arange(slab.grid.n_steps)
    return slab.flat[steps[None, :], flat_idx].sum(axis=1)
