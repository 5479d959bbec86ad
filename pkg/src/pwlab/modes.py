"""Four-mode, two-particle interferometer algebra.

Alice owns modes 1 and 2, Bob owns modes 3 and 4, and each side holds
exactly one particle, so a state is four complex amplitudes over the joint
basis ``(a, b)`` in the fixed order (1,3), (1,4), (2,3), (2,4).

Beam splitters transmit with amplitude 1 and reflect with amplitude ``i``
(both scaled by 1/sqrt(2)); the n-th mode before a splitter feeds detector n.

The second half of the module handles superpositions of two-mode coherent
products, used to contrast the "elephant" splitter with the ordinary one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

SQRT2 = math.sqrt(2.0)
TSIRELSON = 2.0 * SQRT2

ALICE_MODES = (1, 2)
BOB_MODES = (3, 4)
BASIS = ((1, 3), (1, 4), (2, 3), (2, 4))
_INDEX = {ab: i for i, ab in enumerate(BASIS)}

# rows/cols: (mode 1, mode 2) or (mode 3, mode 4)
BS_UNITARY = np.array([[1.0, 1.0j], [1.0j, 1.0]], dtype=complex) / SQRT2

NORM_TOL = 1e-12
MAX_BRANCHES = 2**16


def basis_index(a: int, b: int) -> int:
    try:
        return _INDEX[(a, b)]
    except KeyError:
        raise ValueError(f"({a}, {b}) is not a one-particle-per-side basis state") from None


@dataclass(frozen=True)
class ModeState:
    amps: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=complex).reshape(-1)
        if amps.shape != (4,):
            raise ValueError("ModeState needs exactly 4 amplitudes")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def normalized(self) -> ModeState:
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return ModeState(self.amps / n)

    def amp(self, a: int, b: int) -> complex:
        return complex(self.amps[basis_index(a, b)])

    def as_matrix(self) -> np.ndarray:
        """Amplitudes reshaped to a 2x2 array indexed [a-1, b-3]."""
        return self.amps.reshape(2, 2)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(self.norm() ** 2 - 1.0) <= tol


@dataclass(frozen=True)
class CoincidenceTable:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if p.shape != (4,):
            raise ValueError("CoincidenceTable needs exactly 4 entries")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def prob(self, a: int, b: int) -> float:
        return float(self.p[basis_index(a, b)])

    def correlator(self) -> float:
        return float(self.p[0] - self.p[1] - self.p[2] + self.p[3])

    def as_dict(self) -> dict[str, float]:
        return {f"P{a}{b}": float(self.p[i]) for i, (a, b) in enumerate(BASIS)}


def make_bell_state() -> ModeState:
    """The source state: one particle in modes 1 and 4, or in modes 2 and 3."""
    amps = np.zeros(4, dtype=complex)
    amps[basis_index(1, 4)] = 1.0 / SQRT2
    amps[basis_index(2, 3)] = 1.0 / SQRT2
    return ModeState(amps)


def _check_normalized(s: ModeState) -> None:
    if not s.is_normalized(1e-9):
        raise ValueError(f"state is not normalized (norm^2 = {s.norm() ** 2:.3e})")


def apply_phase(s: ModeState, mode: int, phi: float) -> ModeState:
    """Multiply every amplitude that has a particle in ``mode`` by exp(i*phi)."""
    if mode not in (1, 2, 3, 4):
        raise ValueError(f"invalid mode index {mode!r}; expected 1, 2, 3 or 4")
    _check_normalized(s)
    mask = np.array([mode in ab for ab in BASIS])
    amps = np.where(mask, s.amps * np.exp(1j * phi), s.amps)
    return ModeState(amps)


def apply_beamsplitter(s: ModeState, side: str, unitary: np.ndarray | None = None) -> ModeState:
    """Mix Alice's (``side="alice"``) or Bob's (``"bob"``) two modes.

    ``unitary`` defaults to :data:`BS_UNITARY`; passing its adjoint undoes
    the splitter.
    """
    _check_normalized(s)
    u = BS_UNITARY if unitary is None else np.asarray(unitary, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError("beam splitter unitary must be 2x2")
    m = s.as_matrix()
    side = side.lower()
    if side == "alice":
        out = u @ m
    elif side == "bob":
        out = m @ u.T
    else:
        raise ValueError(f"side must be 'alice' or 'bob', got {side!r}")
    return ModeState(out.reshape(-1))


def interferometer_state(x: float, y: float, s: ModeState | None = None) -> ModeState:
    """Phases x on mode 1 and y on mode 4, then both splitters."""
    s = make_bell_state() if s is None else s
    s = apply_phase(s, 1, x)
    s = apply_phase(s, 4, y)
    s = apply_beamsplitter(s, "alice")
    return apply_beamsplitter(s, "bob")


def detection_probs(s: ModeState) -> CoincidenceTable:
    _check_normalized(s)
    return CoincidenceTable(np.abs(s.amps) ** 2)


def correlator(x: float, y: float) -> float:
    """E = P13 + P24 - P14 - P23 from the full interferometer pipeline."""
    return detection_probs(interferometer_state(x, y)).correlator()


def chsh(x: float, xp: float, y: float, yp: float) -> float:
    return correlator(x, y) + correlator(x, yp) + correlator(xp, y) - correlator(xp, yp)


# -- coherent-state branches -------------------------------------------------


def coherent_overlap(beta: complex, gamma: complex) -> complex:
    """<beta|gamma> for single-mode coherent states."""
    return complex(np.exp(-0.5 * abs(beta) ** 2 - 0.5 * abs(gamma) ** 2 + np.conj(beta) * gamma))


@dataclass(frozen=True)
class CoherentTwoMode:
    """Superposition sum_j w_j |alpha1_j, alpha2_j> of two-mode coherent products."""

    branches: tuple[tuple[complex, complex, complex], ...]

    def __post_init__(self):
        br = tuple((complex(w), complex(a1), complex(a2)) for w, a1, a2 in self.branches)
        if not br:
            raise ValueError("need at least one branch")
        if len(br) > MAX_BRANCHES:
            raise ValueError(f"branch count {len(br)} exceeds guard {MAX_BRANCHES}")
        object.__setattr__(self, "branches", br)

    @classmethod
    def product(cls, alpha1: complex, alpha2: complex) -> CoherentTwoMode:
        return cls(((1.0, alpha1, alpha2),))

    @property
    def alpha1(self) -> complex:
        if len(self.branches) != 1:
            raise ValueError("alpha1 is only defined for a single coherent product")
        return self.branches[0][1]

    @property
    def alpha2(self) -> complex:
        if len(self.branches) != 1:
            raise ValueError("alpha2 is only defined for a single coherent product")
        return self.branches[0][2]

    def inner(self, other: CoherentTwoMode) -> complex:
        """<self|other>, accounting for non-orthogonal coherent products."""
        total = 0j
        for w, a1, a2 in self.branches:
            for v, b1, b2 in other.branches:
                total += np.conj(w) * v * coherent_overlap(a1, b1) * coherent_overlap(a2, b2)
        return complex(total)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self).real, 0.0)))

    def normalized(self) -> CoherentTwoMode:
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a null superposition")
        return CoherentTwoMode(tuple((w / n, a1, a2) for w, a1, a2 in self.branches))

    def mean_photon_number(self) -> float:
        """<n1 + n2>; exact for single products, branch-weighted otherwise."""
        num = 0j
        for w, a1, a2 in self.branches:
            for v, b1, b2 in self.branches:
                ov = coherent_overlap(a1, b1) * coherent_overlap(a2, b2)
                num += np.conj(w) * v * ov * (np.conj(a1) * b1 + np.conj(a2) * b2)
        return float(num.real / self.inner(self).real)


def fidelity(s: CoherentTwoMode, t: CoherentTwoMode) -> float:
    s, t = s.normalized(), t.normalized()
    return abs(s.inner(t)) ** 2


def _merge(branches: Iterable[tuple[complex, complex, complex]], tol: float = 1e-14):
    merged: dict[tuple[complex, complex], complex] = {}
    order: list[tuple[complex, complex]] = []
    for w, a1, a2 in branches:
        key = (complex(round(a1.real, 12), round(a1.imag, 12)),
               complex(round(a2.real, 12), round(a2.imag, 12)))
        if key not in merged:
            merged[key] = 0j
            order.append(key)
        merged[key] += w
    out = [(merged[k], k[0], k[1]) for k in order if abs(merged[k]) > tol]
    return out


def ebs_transform(c: CoherentTwoMode) -> CoherentTwoMode:
    """Elephant beam splitter: sends |a,0> and |0,a> to branch superpositions.

    |a,0> -> (|a,0> + i|0,a>)/sqrt2 and |0,a> -> (i|a,0> + |0,a>)/sqrt2. Only
    branches with at least one empty mode are accepted. Identical output
    branches are merged and the result is renormalized with coherent overlaps.
    """
    out: list[tuple[complex, complex, complex]] = []
    for w, a1, a2 in c.branches:
        if a1 != 0 and a2 != 0:
            raise ValueError("elephant splitter acts on |a,0> or |0,a> branches only")
        if a2 == 0:
            out.append((w / SQRT2, a1, 0j))
            out.append((1j * w / SQRT2, 0j, a1))
        else:
            out.append((1j * w / SQRT2, a2, 0j))
            out.append((w / SQRT2, 0j, a2))
    if len(out) > MAX_BRANCHES:
        raise ValueError(f"branch count {len(out)} exceeds guard {MAX_BRANCHES}")
    merged = _merge(out)
    if not merged:
        raise ValueError("elephant splitter output vanished")
    return CoherentTwoMode(tuple(merged)).normalized()


def classical_bs_transform(c: CoherentTwoMode) -> CoherentTwoMode:
    """Ordinary splitter acting on coherent amplitudes of a single product."""
    if len(c.branches) != 1:
        raise ValueError("classical splitter map is defined on single coherent products")
    w, a1, a2 = c.branches[0]
    return CoherentTwoMode(((w, (a1 + 1j * a2) / SQRT2, (1j * a1 + a2) / SQRT2),))


def random_mode_state(rng: np.random.Generator) -> ModeState:
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    return ModeState(v / np.linalg.norm(v))
