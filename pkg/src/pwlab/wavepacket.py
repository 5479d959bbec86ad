"""Wave packets on periodic grids and their free evolution.

Axis 0 is always the particle coordinate. In two dimensions axis 1 is the
centre-of-mass coordinate of a pointer, whose mass is the per-axis mass
entry. Units default to hbar = m_particle = 1.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sfft

MIN_POINTS = 64
BAND_MARGIN = 4.0
LEAKAGE_TOL = 1e-6
NORM_TOL = 1e-8


class GridError(ValueError):
    """Discretisation cannot represent the requested packet or kick."""


class BandwidthError(RuntimeError):
    """Spectral content reached the edge of the grid band."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    points: tuple[int, ...]
    extent: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    dt: float = 0.01
    hbar: float = 1.0
    mass: tuple[float, ...] | None = None

    def __post_init__(self):
        pts = tuple(int(p) for p in np.atleast_1d(self.points))
        ext = tuple(float(e) for e in np.atleast_1d(self.extent))
        if len(pts) not in (1, 2) or len(ext) != len(pts):
            raise GridError("grid must be 1D or 2D with one extent per axis")
        for p in pts:
            if p < MIN_POINTS or not _is_pow2(p):
                raise GridError(f"point count {p} must be a power of two >= {MIN_POINTS}")
        if any(e <= 0 for e in ext):
            raise GridError("extent must be positive")
        if not self.dt > 0:
            raise GridError("dt must be positive")
        if self.origin is None:
            org = tuple(-e / 2 for e in ext)
        else:
            org = tuple(float(o) for o in np.atleast_1d(self.origin))
        mass = (1.0,) * len(pts) if self.mass is None else tuple(float(m) for m in np.atleast_1d(self.mass))
        if len(org) != len(pts) or len(mass) != len(pts):
            raise GridError("origin and mass need one entry per axis")
        if any(not m > 0 for m in mass):
            raise GridError("masses must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "origin", org)
        object.__setattr__(self, "mass", mass)

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extent, self.points))

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.spacing[i] * np.arange(self.points[i])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dims)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def wavenumbers(self, i: int) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points[i], self.spacing[i])

    def k_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.wavenumbers(i) for i in range(self.dims)], indexing="ij")

    def k_nyquist(self, i: int) -> float:
        return math.pi / self.spacing[i]

    def bounds(self, i: int) -> tuple[float, float]:
        return self.origin[i], self.origin[i] + self.extent[i]

    def with_mass(self, i: int, m: float) -> Grid:
        mass = list(self.mass)
        mass[i] = float(m)
        return replace(self, mass=tuple(mass))

    def check_band(self, i: int, momentum: float) -> None:
        """Require BAND_MARGIN x headroom over ``momentum`` on axis ``i``."""
        need = BAND_MARGIN * abs(momentum) / self.hbar
        if need > self.k_nyquist(i):
            raise GridError(
                f"axis {i}: momentum {abs(momentum):.3g} needs k_max >= {need:.3g}, "
                f"grid gives {self.k_nyquist(i):.3g}; refine the spacing"
            )


@dataclass(frozen=True)
class PacketSpec:
    center: float
    momentum: float = 0.0
    sigma: float = 1.0

    def reach(self, hbar: float = 1.0) -> float:
        """Momentum band the packet occupies: mean plus three standard deviations."""
        return abs(self.momentum) + 3 * hbar / (2 * self.sigma)


@dataclass(frozen=True)
class KickSpec:
    k: float
    region: tuple[tuple[float, float], ...]
    sign_rule: str = "plus-on-region"
    t_apply: float | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("kick strength k must be non-negative")
        if self.sign_rule not in ("plus-on-region", "plus-minus-split"):
            raise ValueError(f"unknown sign rule {self.sign_rule!r}")
        reg = tuple((float(lo), float(hi)) for lo, hi in self.region)
        if not reg or any(lo >= hi for lo, hi in reg):
            raise ValueError("kick region needs non-empty [lo, hi) intervals")
        object.__setattr__(self, "region", reg)

    def indicator(self, x: np.ndarray) -> np.ndarray:
        inside = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.region:
            inside |= (x >= lo) & (x < hi)
        return inside

    def signs(self, x: np.ndarray) -> np.ndarray:
        inside = self.indicator(x)
        if self.sign_rule == "plus-on-region":
            return inside.astype(float)
        return np.where(inside, 1.0, -1.0)


@dataclass(frozen=True)
class WaveField:
    grid: Grid
    amps: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = np.array(self.amps, dtype=complex)
        if a.shape != self.grid.shape:
            raise GridError(f"amplitude shape {a.shape} does not match grid {self.grid.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "amps", a)

    def density(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density()) * self.grid.cell))

    def normalized(self) -> WaveField:
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize a zero field")
        return WaveField(self.grid, self.amps / n, self.time)

    def marginal(self, axis: int = 0) -> np.ndarray:
        """Probability density along ``axis`` (other axes integrated out)."""
        rho = self.density()
        for ax in reversed(range(self.grid.dims)):
            if ax != axis:
                rho = rho.sum(axis=ax) * self.grid.spacing[ax]
        return rho

    def mean_position(self, axis: int = 0) -> float:
        rho = self.marginal(axis)
        return float(np.sum(self.grid.axis(axis) * rho) * self.grid.spacing[axis])

    def width(self, axis: int = 0) -> float:
        rho = self.marginal(axis)
        x = self.grid.axis(axis)
        dx = self.grid.spacing[axis]
        m = np.sum(x * rho) * dx
        return float(np.sqrt(np.sum((x - m) ** 2 * rho) * dx))

    def _momentum_density(self) -> np.ndarray:
        ph = sfft.fftn(self.amps)
        return np.abs(ph) ** 2

    def mean_momentum(self, axis: int = 0) -> float:
        pk = self._momentum_density()
        k = self.grid.k_mesh()[axis]
        return float(self.grid.hbar * np.sum(k * pk) / np.sum(pk))

    def energy(self, potential: np.ndarray | None = None) -> float:
        pk = self._momentum_density()
        g = self.grid
        kin = sum((g.hbar * k) ** 2 / (2 * m) for k, m in zip(g.k_mesh(), g.mass))
        e = float(np.sum(kin * pk) / np.sum(pk))
        if potential is not None:
            rho = self.density()
            e += float(np.sum(potential * rho) / np.sum(rho))
        return e

    def leakage(self, frac: float = 7 / 8) -> float:
        """Fraction of spectral weight beyond ``frac`` of the Nyquist wavenumber."""
        pk = self._momentum_density()
        edge = np.zeros(pk.shape, dtype=bool)
        for i, k in enumerate(self.grid.k_mesh()):
            edge |= np.abs(k) > frac * self.grid.k_nyquist(i)
        return float(pk[edge].sum() / pk.sum())


def _gaussian_1d(x: np.ndarray, spec: PacketSpec, hbar: float) -> np.ndarray:
    return np.exp(-((x - spec.center) ** 2) / (4 * spec.sigma**2) + 1j * spec.momentum * x / hbar)


def init_gaussian(grid: Grid, spec: PacketSpec | Sequence[PacketSpec], time: float = 0.0) -> WaveField:
    """Normalized Gaussian; in 2D pass one spec per axis for a product packet."""
    specs = [spec] if isinstance(spec, PacketSpec) else list(spec)
    if len(specs) != grid.dims:
        raise GridError(f"need {grid.dims} packet spec(s), got {len(specs)}")
    factors = []
    for i, s in enumerate(specs):
        dx = grid.spacing[i]
        if not s.sigma > 2 * dx:
            raise GridError(f"axis {i}: packet width sigma={s.sigma:g} must exceed 2*dx={2 * dx:g}")
        grid.check_band(i, s.reach(grid.hbar))
        lo, hi = grid.bounds(i)
        if not (lo + 4 * s.sigma <= s.center <= hi - 4 * s.sigma):
            raise GridError(f"axis {i}: packet centre {s.center:g} within 4 sigma of the boundary")
        factors.append(_gaussian_1d(grid.axis(i), s, grid.hbar))
    amps = factors[0] if grid.dims == 1 else np.multiply.outer(factors[0], factors[1])
    return WaveField(grid, amps, time).normalized()


@dataclass(frozen=True)
class Superposition:
    field: WaveField
    overlaps: np.ndarray  # Gram matrix of the unweighted inputs
    branch_weights: np.ndarray  # |w_i|^2 <psi_i|psi_i> / norm^2, before cross terms


def superpose(fields: Sequence[tuple[complex, WaveField]]) -> Superposition:
    """Weighted sum renormalized to one; reports the branch Gram matrix."""
    if not fields:
        raise ValueError("nothing to superpose")
    grid = fields[0][1].grid
    time = fields[0][1].time
    for _, f in fields:
        if f.grid != grid:
            raise GridError("superposed fields live on different grids")
        if abs(f.time - time) > 1e-12:
            raise GridError("superposed fields are at different times")
    ws = np.array([complex(w) for w, _ in fields])
    stack = np.stack([f.amps for _, f in fields])
    flat = stack.reshape(len(fields), -1)
    gram = (flat.conj() @ flat.T) * grid.cell
    amps = np.tensordot(ws, stack, axes=1)
    out = WaveField(grid, amps, time)
    n2 = out.norm() ** 2
    if n2 == 0:
        raise ValueError("superposition vanishes")
    weights = np.abs(ws) ** 2 * np.real(np.diag(gram)) / n2
    return Superposition(out.normalized(), gram, weights)


def kinetic_phase(grid: Grid, dt: float, durations: Sequence[float] | None = None) -> np.ndarray:
    """exp(-i sum_a hbar k_a^2 / (2 m_a) * t_a) on the FFT grid.

    ``durations`` gives a per-axis evolution time (default ``dt`` on every axis).
    """
    ts = [dt] * grid.dims if durations is None else list(durations)
    w = 0.0
    for k, m, t in zip(grid.k_mesh(), grid.mass, ts):
        w = w + grid.hbar * k**2 / (2 * m) * t
    return np.exp(-1j * w)


def evolve(field_: WaveField, n_steps: int, dt: float | None = None,
           potential: np.ndarray | None = None, check_leakage: bool = True) -> WaveField:
    """``n_steps`` Strang split-step steps of size ``dt`` (default ``grid.dt``).

    Kinetic factor applied in Fourier space, ``potential`` (same shape as the
    grid, energy units) as half steps in position space.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if n_steps == 0:
        return field_
    g = field_.grid
    dt = g.dt if dt is None else float(dt)
    if check_leakage and field_.leakage() > LEAKAGE_TOL:
        raise BandwidthError(f"initial spectral leakage {field_.leakage():.2e} exceeds {LEAKAGE_TOL:g}")
    kin = kinetic_phase(g, dt)
    psi = np.array(field_.amps)
    if potential is None:
        ph = sfft.fftn(psi)
        for _ in range(n_steps):
            ph *= kin
        psi = sfft.ifftn(ph)
    else:
        half = np.exp(-0.5j * dt * np.asarray(potential) / g.hbar)
        for _ in range(n_steps):
            psi = sfft.ifftn(sfft.fftn(psi * half) * kin) * half
    out = WaveField(g, psi, field_.time + n_steps * dt)
    if check_leakage and out.leakage() > LEAKAGE_TOL:
        raise BandwidthError(f"spectral leakage {out.leakage():.2e} exceeds {LEAKAGE_TOL:g}; refine the grid")
    return out


def evolve_to(field_: WaveField, t: float, durations: Sequence[float] | None = None) -> WaveField:
    """Exact free evolution to time ``t`` (optionally per-axis durations)."""
    dt = t - field_.time
    ph = sfft.fftn(field_.amps) * kinetic_phase(field_.grid, dt, durations)
    return WaveField(field_.grid, sfft.ifftn(ph), t)


def apply_kick(field_: WaveField, kick: KickSpec) -> WaveField:
    """Impulsive coupling exp(i k y s(x) / hbar) between particle x and pointer y."""
    g = field_.grid
    if g.dims != 2:
        raise GridError("a pointer kick needs a 2D (particle x pointer) field")
    if kick.t_apply is not None and abs(kick.t_apply - field_.time) > 1e-9:
        raise ValueError(f"kick scheduled at t={kick.t_apply:g} but field is at t={field_.time:g}")
    x, y = g.axis(0), g.axis(1)
    lo, hi = g.bounds(0)
    for a, b in kick.region:
        if b <= lo or a >= hi:
            raise GridError(f"kick region [{a:g}, {b:g}) lies outside the particle axis")
    if not kick.indicator(x).any():
        raise GridError("kick region contains no grid points")
    if kick.k == 0:
        return field_
    g.check_band(1, kick.k)
    phase = np.exp(1j * kick.k * np.multiply.outer(kick.signs(x), y) / g.hbar)
    return WaveField(g, field_.amps * phase, field_.time)


def pointer_separation_time(k: float, mass: float, sigma: float) -> float:
    """Time for a kicked pointer to move by its own spread; ``inf`` for k = 0."""
    if k < 0 or mass <= 0 or sigma <= 0:
        raise ValueError("need k >= 0, mass > 0, sigma > 0")
    if k == 0:
        return math.inf
    return mass * sigma / k


def pointer_overlap(k: float, sigma: float, hbar: float = 1.0) -> float:
    """|<phi_0|phi_k>| for a Gaussian pointer of position spread ``sigma``."""
    return math.exp(-0.5 * (k * sigma / hbar) ** 2)


def branch_distinguishability(field_: WaveField, region: Sequence[tuple[float, float]]) -> float:
    """Total-variation distance between the pointer-position marginals
    conditioned on the particle being inside vs outside ``region``."""
    g = field_.grid
    if g.dims != 2:
        raise GridError("branch distinguishability needs a 2D field")
    inside = KickSpec(0.0, tuple(region)).indicator(g.axis(0))
    rho = field_.density() * g.cell
    pa, pb = rho[inside].sum(axis=0), rho[~inside].sum(axis=0)
    wa, wb = pa.sum(), pb.sum()
    if min(wa, wb) < 1e-9:
        raise ValueError(f"branch weight too small ({min(wa, wb):.2e})")
    return float(0.5 * np.abs(pa / wa - pb / wb).sum())


# -- co-evolution for trajectory integration ----------------------------------


@dataclass
class Snapshot:
    """psi and the gradient components along ``axes``, stacked as ``data``."""

    time: float
    data: np.ndarray
    axes: tuple[int, ...]
    peak: float = 0.0

    def __post_init__(self):
        self.peak = float(np.max(np.abs(self.data[0]) ** 2))

    @property
    def psi(self) -> np.ndarray:
        return self.data[0]

    def grad(self, axis: int) -> np.ndarray:
        return self.data[1 + self.axes.index(axis)]


@dataclass
class FieldEvolution:
    """Serves psi and grad psi at arbitrary times t >= the initial time.

    Free evolution is diagonal in k-space, so every snapshot is an exact
    phase multiply of a k-space base. ``kicks`` are applied at their
    ``t_apply`` (right-continuous: a snapshot at that time is post-kick).
    ``stop`` maps an axis to the time after which its kinetic term is
    switched off (a captured particle or a clamped pointer).
    """

    initial: WaveField
    kicks: Sequence[KickSpec] = ()
    stop: dict[int, float] = field(default_factory=dict)
    _bases: list[tuple[float, np.ndarray]] = field(init=False, repr=False)

    def __post_init__(self):
        g = self.initial.grid
        self._k1 = [g.wavenumbers(i) for i in range(g.dims)]
        self._w1 = [g.hbar * k**2 / (2 * m) for k, m in zip(self._k1, g.mass)]
        kicks = sorted(self.kicks, key=lambda kk: kk.t_apply if kk.t_apply is not None else self.initial.time)
        base_t = self.initial.time
        ph = sfft.fftn(self.initial.amps)
        self._bases = [(base_t, ph)]
        for kk in kicks:
            tk = self.initial.time if kk.t_apply is None else kk.t_apply
            if tk < base_t:
                raise ValueError("kick precedes the initial field time")
            psi = sfft.ifftn(ph * self._phase(base_t, tk))
            kicked = apply_kick(WaveField(g, psi, tk), replace(kk, t_apply=tk))
            base_t, ph = tk, sfft.fftn(kicked.amps)
            self._bases.append((base_t, ph))
        self.event_times = tuple(t for t, _ in self._bases[1:])

    def _clock(self, axis: int, t: float) -> float:
        return min(t, self.stop.get(axis, math.inf))

    def _phase(self, t0: float, t1: float) -> np.ndarray:
        # separable in the axes: outer product of 1D phase factors
        f = [np.exp(-1j * wa * (self._clock(a, t1) - self._clock(a, t0)) / self.initial.grid.hbar)
             for a, wa in enumerate(self._w1)]
        return f[0] if len(f) == 1 else np.multiply.outer(f[0], f[1])

    def _base(self, t: float) -> tuple[float, np.ndarray]:
        if t < self._bases[0][0] - 1e-12:
            raise ValueError(f"time {t:g} precedes the initial field")
        chosen = self._bases[0]
        for b in self._bases:
            if b[0] <= t + 1e-12:
                chosen = b
        return chosen

    def spectrum(self, t: float) -> np.ndarray:
        t0, ph = self._base(t)
        return ph * self._phase(t0, t)

    def field_at(self, t: float) -> WaveField:
        return WaveField(self.initial.grid, sfft.ifftn(self.spectrum(t)), t)

    def snapshot(self, t: float, moving: Sequence[int] | None = None) -> Snapshot:
        """psi and its gradient along each axis in ``moving`` (default: all axes)."""
        ph = self.spectrum(t)
        dims = self.initial.grid.dims
        axes = tuple(range(dims)) if moving is None else tuple(moving)
        data = np.empty((1 + len(axes),) + ph.shape, dtype=complex)
        data[0] = sfft.ifftn(ph)
        for j, a in enumerate(axes):
            shape = [1] * dims
            shape[a] = -1
            data[1 + j] = sfft.ifftn(ph * (1j * self._k1[a]).reshape(shape))
        return Snapshot(t, data, axes)


# -- snapshot export ----------------------------------------------------------

_MAGIC = b"PWLB"
_VERSION = 1


def save_snapshot(field_: WaveField, path: str | Path) -> tuple[Path, Path]:
    """Binary dump plus JSON sidecar.

    Layout (all little-endian): 4-byte magic ``PWLB``, uint16 version,
    uint8 dims, uint8 reserved, then per axis uint32 count, then per axis
    float64 spacing, float64 origin, float64 mass, then float64 hbar and
    float64 time, then the amplitudes as complex128 in C order.
    """
    path = Path(path)
    g = field_.grid
    head = struct.pack("<4sHBB", _MAGIC, _VERSION, g.dims, 0)
    head += struct.pack(f"<{g.dims}I", *g.points)
    head += struct.pack(f"<{g.dims}d", *g.spacing)
    head += struct.pack(f"<{g.dims}d", *g.origin)
    head += struct.pack(f"<{g.dims}d", *g.mass)
    head += struct.pack("<dd", g.hbar, field_.time)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(field_.amps, dtype="<c16").tobytes())
    meta = {
        "format": "pwlab-snapshot",
        "version": _VERSION,
        "byte_order": "little",
        "dtype": "complex128",
        "dims": g.dims,
        "points": list(g.points),
        "spacing": list(g.spacing),
        "origin": list(g.origin),
        "mass": list(g.mass),
        "hbar": g.hbar,
        "time": field_.time,
        "header_bytes": len(head),
    }
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, side


def load_snapshot(path: str | Path) -> WaveField:
    raw = Path(path).read_bytes()
    magic, version, dims, _ = struct.unpack_from("<4sHBB", raw, 0)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a pwlab snapshot")
    off = 8
    points = struct.unpack_from(f"<{dims}I", raw, off); off += 4 * dims
    spacing = struct.unpack_from(f"<{dims}d", raw, off); off += 8 * dims
    origin = struct.unpack_from(f"<{dims}d", raw, off); off += 8 * dims
    mass = struct.unpack_from(f"<{dims}d", raw, off); off += 8 * dims
    hbar, time = struct.unpack_from("<dd", raw, off); off += 16
    amps = np.frombuffer(raw, dtype="<c16", offset=off).reshape(points)
    grid = Grid(points, tuple(n * d for n, d in zip(points, spacing)), origin, hbar=hbar, mass=mass)
    return WaveField(grid, amps.astype(complex), time)
