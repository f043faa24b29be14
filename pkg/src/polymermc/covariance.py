"""Spatial covariance families, the canonical metric, and circulant spectra.

A covariance function Q on the (periodized) lattice is the single source of
truth for everything downstream: the canonical metric delta, the Fourier
eigenvalues used for Gaussian sampling, and the non-degeneracy constant c_Q.
All operations here are pure functions of their inputs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("white_noise", "lattice_table", "powered_exponential", "log_regular")

# Default memory budget: total site count of the periodized lattice.
MAX_SITES = 4_194_304

# Default cap on the fraction of spectral mass removed by negativity clipping.
DEFAULT_CLIP_THRESHOLD = 1e-3


class CovarianceError(ValueError):
    """Invalid covariance specification or lattice."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Declarative description of a spatial covariance family Q.

    family : one of FAMILIES
    q0     : variance at zero offset, Q(0) > 0
    holder_h, length_scale : powered_exponential only,
        Q(x) = q0 * exp(-(|x|/length_scale)**(2*holder_h)), H in (0, 1].
    gamma, amplitude, cutoff : log_regular only,
        Q(x) = q0 - amplitude * log(e + 1/|x|)**(-2*gamma) for x != 0.
    table : lattice_table only, mapping integer-offset tuple -> value.
    """

    family: str
    q0: float
    holder_h: float | None = None
    length_scale: float | None = None
    gamma: float | None = None
    amplitude: float | None = None
    cutoff: float | None = None
    table: dict | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise CovarianceError(f"unknown covariance family {self.family!r}")
        if not (self.q0 > 0 and math.isfinite(self.q0)):
            raise CovarianceError(f"q0 must be positive and finite, got {self.q0}")
        if self.family == "powered_exponential":
            if self.holder_h is None or not 0 < self.holder_h <= 1:
                raise CovarianceError("powered_exponential needs holder_h in (0, 1]")
            if self.length_scale is None or self.length_scale <= 0:
                raise CovarianceError("powered_exponential needs length_scale > 0")
        elif self.family == "log_regular":
            if self.gamma is None or self.gamma <= 0:
                raise CovarianceError("log_regular needs gamma > 0")
            if self.amplitude is None or not 0 < self.amplitude <= self.q0:
                raise CovarianceError("log_regular needs 0 < amplitude <= q0")
            if self.cutoff is None or self.cutoff <= 0:
                raise CovarianceError("log_regular needs cutoff > 0")
        elif self.family == "lattice_table":
            if not self.table:
                raise CovarianceError("lattice_table needs a non-empty offset table")
            sym = {}
            for off, val in self.table.items():
                off = tuple(int(c) for c in off)
                sym[off] = float(val)
            for off, val in list(sym.items()):
                neg = tuple(-c for c in off)
                if neg in sym and sym[neg] != val:
                    raise CovarianceError(f"table not even at offset {off}")
                sym[neg] = val
            origin = (0,) * len(next(iter(sym)))
            sym[origin] = self.q0
            object.__setattr__(self, "table", sym)

    def params_digest(self) -> str:
        """Short stable hash identifying the family and its parameters."""
        parts = [self.family, f"q0={self.q0!r}"]
        for name in ("holder_h", "length_scale", "gamma", "amplitude", "cutoff"):
            v = getattr(self, name)
            if v is not None:
                parts.append(f"{name}={v!r}")
        if self.table is not None:
            parts.append(repr(sorted(self.table.items())))
        blob = ";".join(parts).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class Lattice:
    """Periodic lattice: `dim` axes of `extent` sites with physical spacing."""

    dim: int
    extent: int
    spacing: float = 1.0
    max_sites: int = MAX_SITES

    def __post_init__(self):
        if self.dim < 1:
            raise CovarianceError("lattice dim must be >= 1")
        if self.extent < 3:
            raise CovarianceError("lattice extent must be >= 3")
        if self.spacing <= 0:
            raise CovarianceError("lattice spacing must be > 0")
        if self.n_sites > self.max_sites:
            raise CovarianceError(
                f"lattice has {self.n_sites} sites, exceeds budget {self.max_sites}"
            )

    @property
    def shape(self) -> tuple:
        return (self.extent,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.extent**self.dim

    def wrap(self, coords: np.ndarray) -> np.ndarray:
        """Integer coordinates -> periodic site indices in [0, extent)."""
        return np.mod(coords, self.extent)

    def min_image(self, coords: np.ndarray) -> np.ndarray:
        """Wrap integer offsets to the nearest periodic image."""
        w = np.mod(np.asarray(coords) + self.extent // 2, self.extent)
        return w - self.extent // 2


@dataclass(frozen=True)
class CirculantSpectrum:
    """Fourier eigenvalues of the periodized covariance on a lattice."""

    eigenvalues: np.ndarray  # shape lattice.shape, all >= 0
    clipped_mass: float
    lattice: Lattice = field(repr=False)
    spec: CovarianceSpec = field(repr=False)

    @property
    def variance(self) -> float:
        """Zero-offset variance of the realized (clipped) field."""
        return float(self.eigenvalues.mean())

    def covariance_row(self) -> np.ndarray:
        """Inverse DFT of the spectrum: the realized covariance row."""
        return np.fft.ifftn(self.eigenvalues).real


def q_value(spec: CovarianceSpec, offset) -> float:
    """Evaluate Q at a physical displacement vector (or scalar for d=1)."""
    off = np.atleast_1d(np.asarray(offset, dtype=float))
    if not np.all(np.isfinite(off)):
        raise CovarianceError("offset must be finite")
    r = float(np.linalg.norm(off))
    if spec.family == "white_noise":
        return spec.q0 if r == 0.0 else 0.0
    if spec.family == "powered_exponential":
        return spec.q0 * math.exp(-((r / spec.length_scale) ** (2 * spec.holder_h)))
    if spec.family == "log_regular":
        if r == 0.0:
            return spec.q0
        val = spec.q0 - spec.amplitude * math.log(math.e + 1.0 / r) ** (-2 * spec.gamma)
        if val < 0:
            raise CovarianceError(f"log_regular covariance negative at |x|={r}")
        return val
    # lattice_table: keys are integer offsets
    key = tuple(int(round(c)) for c in off)
    if any(abs(k - c) > 1e-9 for k, c in zip(key, off)):
        raise CovarianceError("lattice_table covariance defined on integer offsets only")
    if len(key) != len(next(iter(spec.table))):
        key = key + (0,) * (len(next(iter(spec.table))) - len(key))
    return spec.table.get(key, 0.0)


def delta_metric(spec: CovarianceSpec, offset) -> float:
    """Canonical metric delta(x) = sqrt(2 (Q(0) - Q(x)))."""
    q = q_value(spec, offset)
    gap = spec.q0 - q
    if gap < -1e-12:
        raise CovarianceError(f"Q(offset)={q} exceeds Q(0)={spec.q0}")
    return math.sqrt(2.0 * max(gap, 0.0))


def periodized_row(spec: CovarianceSpec, lattice: Lattice) -> np.ndarray:
    """Covariance row Q(spacing * min_image(z)) over all lattice offsets."""
    L, d = lattice.extent, lattice.dim
    if spec.family == "white_noise":
        row = np.zeros(lattice.shape)
        row.flat[0] = spec.q0
        return row
    axes = np.arange(L)
    grids = np.meshgrid(*([axes] * d), indexing="ij")
    coords = np.stack([lattice.min_image(g) for g in grids], axis=-1)
    phys = coords * lattice.spacing
    if spec.family == "powered_exponential":
        r = np.sqrt((phys**2).sum(axis=-1))
        return spec.q0 * np.exp(-((r / spec.length_scale) ** (2 * spec.holder_h)))
    if spec.family == "log_regular":
        r = np.sqrt((phys**2).sum(axis=-1))
        row = np.empty(lattice.shape)
        nz = r > 0
        row[~nz] = spec.q0
        row[nz] = spec.q0 - spec.amplitude * np.log(math.e + 1.0 / r[nz]) ** (-2 * spec.gamma)
        if np.any(row < 0):
            raise CovarianceError("log_regular covariance negative on this lattice")
        return row
    # lattice_table
    row = np.zeros(lattice.shape)
    it = np.nditer(row, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        key = tuple(int(c) for c in lattice.min_image(np.asarray(idx)))
        row[idx] = q_value(spec, key)
    return row


def circulant_spectrum(
    spec: CovarianceSpec,
    lattice: Lattice,
    clip_threshold: float = DEFAULT_CLIP_THRESHOLD,
) -> CirculantSpectrum:
    """DFT eigenvalues of the periodized covariance row, clipped to >= 0.

    Raises CovarianceError if the clipped fraction of spectral mass exceeds
    `clip_threshold` (the spec is then rejected for this lattice).
    """
    row = periodized_row(spec, lattice)
    eig = np.fft.fftn(row).real
    neg = eig < 0
    total = np.abs(eig).sum()
    clipped = float(-eig[neg].sum() / total) if total > 0 else 0.0
    if clipped > clip_threshold:
        raise CovarianceError(
            f"clipped spectral mass {clipped:.3e} exceeds threshold {clip_threshold:.1e}"
        )
    eig = np.where(neg, 0.0, eig)
    eig.setflags(write=False)
    return CirculantSpectrum(eigenvalues=eig, clipped_mass=clipped, lattice=lattice, spec=spec)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_spec; failures are carried, never raised."""

    spec: CovarianceSpec = field(repr=False)
    lattice: Lattice = field(repr=False)
    psd_ok: bool
    clipped_mass: float
    c_q: float
    nondegenerate: bool
    even_ok: bool
    bracket_lo: float  # measured local regularity constants (nan if n/a)
    bracket_hi: float

    @property
    def passed(self) -> bool:
        return self.psd_ok and self.nondegenerate and self.even_ok

    def csv_row(self) -> dict:
        return {
            "family": self.spec.family,
            "q0": repr(self.spec.q0),
            "params": self.spec.params_digest(),
            "c_q": repr(self.c_q),
            "psd_ok": int(self.psd_ok),
            "clipped_mass": repr(self.clipped_mass),
        }


def validate_spec(
    spec: CovarianceSpec,
    lattice: Lattice,
    clip_threshold: float = DEFAULT_CLIP_THRESHOLD,
) -> ValidationReport:
    """Check PSD (via the circulant spectrum), non-degeneracy, evenness,
    and measure local regularity bracketing constants where applicable."""
    try:
        spectrum = circulant_spectrum(spec, lattice, clip_threshold)
        psd_ok, clipped = True, spectrum.clipped_mass
    except CovarianceError:
        psd_ok, clipped = False, float("nan")

    # non-degeneracy constant c_Q = max_i sqrt(Q(0) - Q(2 * spacing * e_i))
    gaps = []
    for i in range(lattice.dim):
        off = np.zeros(lattice.dim)
        off[i] = 2.0 * lattice.spacing
        gaps.append(max(spec.q0 - q_value(spec, off), 0.0))
    c_q = math.sqrt(max(gaps))

    # evenness on a sample of lattice offsets
    rng = np.random.default_rng(0)
    even_ok = True
    for _ in range(32):
        z = rng.integers(-(lattice.extent // 2), lattice.extent // 2 + 1, size=lattice.dim)
        a = q_value(spec, z * lattice.spacing)
        b = q_value(spec, -z * lattice.spacing)
        if abs(a - b) > 1e-12 * max(1.0, abs(a)):
            even_ok = False
            break

    bracket_lo = bracket_hi = float("nan")
    if spec.family == "powered_exponential":
        r_max = spec.length_scale / 4.0
        bracket_lo, bracket_hi = _bracket(
            spec, lattice, r_max, lambda r: r ** (2 * spec.holder_h)
        )
    elif spec.family == "log_regular":
        bracket_lo, bracket_hi = _bracket(
            spec,
            lattice,
            min(spec.cutoff, 0.99),
            lambda r: math.log(1.0 / r) ** (-2 * spec.gamma),
        )

    return ValidationReport(
        spec=spec,
        lattice=lattice,
        psd_ok=psd_ok,
        clipped_mass=clipped,
        c_q=c_q,
        nondegenerate=c_q > 0,
        even_ok=even_ok,
        bracket_lo=bracket_lo,
        bracket_hi=bracket_hi,
    )


def _bracket(spec, lattice, r_max, gauge):
    """Min/max of (Q(0) - Q(x)) / gauge(|x|) over lattice offsets below r_max."""
    ratios = []
    k = 1
    while True:
        r = k * lattice.spacing
        if r > r_max or k > lattice.extent // 2:
            break
        off = np.zeros(lattice.dim)
        off[0] = r
        g = gauge(r)
        if g > 0:
            ratios.append((spec.q0 - q_value(spec, off)) / g)
        k += 1
    if not ratios:
        return float("nan"), float("nan")
    return min(ratios), max(ratios)
