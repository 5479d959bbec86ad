"""The invariant suite behind ``pwlab check``.

Every check computes one number and compares it with a tolerance; the
tolerance can be overridden by name (``--tol name=value``). The quick suite
covers the analytic modules, the field engine and the oracles; ``full``
adds the shipped continuum scenarios.
"""
from __future__ import annotations

import functools
import math
import operator
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import joint, modes, oracles, trajectories as tr, wavepacket as wp

OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Check:
    name: str
    fn: Callable[[], float]
    tol: float
    op: str = "<="
    full: bool = False


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    op: str
    passed: bool
    seconds: float


def _state_error() -> float:
    err = 0.0
    for x in np.linspace(-3, 3, 7):
        for y in np.linspace(-2, 4, 7):
            e = np.exp(1j * (x + y))
            want = np.array([1j * (e + 1), e - 1, 1 - e, 1j * (e + 1)]) / (2 * math.sqrt(2))
            err = max(err, float(np.max(np.abs(modes.interferometer_state(x, y).amps - want))))
    return err


def _unitarity() -> float:
    rng = np.random.default_rng(1)
    drift = 0.0
    for _ in range(100):
        s = modes.random_mode_state(rng)
        for side in ("alice", "bob"):
            s = modes.apply_beamsplitter(modes.apply_phase(s, int(rng.integers(1, 5)), rng.uniform(-7, 7)), side)
            drift = max(drift, abs(s.norm() ** 2 - 1))
    return drift


def _coincidence_law() -> float:
    err = 0.0
    for x in np.linspace(0, 2 * np.pi, 10):
        for y in np.linspace(-np.pi, np.pi, 10):
            p = modes.detection_probs(modes.interferometer_state(x, y)).p
            c = math.cos(x + y)
            err = max(err, float(np.max(np.abs(p - np.array([1 + c, 1 - c, 1 - c, 1 + c]) / 4))))
    return err


OPT = (0.0, math.pi / 2, -math.pi / 4, math.pi / 4)


def _tsirelson_excess() -> float:
    rng = np.random.default_rng(2)
    q = rng.uniform(-np.pi, np.pi, (10_000, 4))
    return max(modes.chsh(*row) for row in q) - modes.TSIRELSON


@functools.lru_cache(maxsize=1)
def _chsh_mc() -> joint.ChshEstimate:
    return joint.chsh_from_samples(*OPT, 100_000, 12345)


def _marginal_spread(first: bool) -> float:
    vals = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    tabs = []
    for v in vals:
        if first:
            tabs.append(joint.marginal_first(joint.two_time_joint(0.3, v, -1.1)))
        else:
            tabs.append(joint.marginal_second(joint.two_time_joint(v, 0.3, -1.1)))
    t = np.stack(tabs)
    return float(np.max(t.max(axis=0) - t.min(axis=0)))


def _sampler_l1() -> float:
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(5):
        x, xp, y = rng.uniform(-np.pi, np.pi, 3)
        smp = joint.sample_outcomes(x, xp, y, 100_000, 100 + i)
        worst = max(worst, joint.l1_distance(smp, joint.two_time_joint(x, xp, y)))
    return worst


def _ebs_fidelity() -> float:
    c = modes.CoherentTwoMode.product(2.0, 0.0)
    return modes.fidelity(modes.ebs_transform(c), modes.classical_bs_transform(c))


def _ebs_twice() -> float:
    c = modes.CoherentTwoMode.product(2.0, 0.0)
    target = modes.CoherentTwoMode(((1j, 0.0, 2.0),))
    return abs(1 - modes.fidelity(modes.ebs_transform(modes.ebs_transform(c)), target))


def _semi_grid() -> tuple[wp.Grid, wp.WaveField]:
    g = wp.Grid((2048,), (48.0,))
    sp = wp.superpose([(1.0, wp.init_gaussian(g, wp.PacketSpec(-10, 5, 1))),
                       (1.0, wp.init_gaussian(g, wp.PacketSpec(10, -5, 1)))])
    return g, sp.field


CN_DT = 2e-4
CN_STEPS = 1000


def oracle_agreement(cfg) -> float:
    """L2 distance after CN_STEPS steps between the spectral engine and the
    Crank-Nicolson oracle, started from the scenario's post-kick state."""
    from .experiments import build_semi

    setup = build_semi(cfg)
    g = setup.grid
    axes = g.axes()
    terms = []
    for p in cfg.packets:
        fx = functools.partial(oracles.free_gaussian, t=0.0, center=p.center, momentum=p.momentum, sigma=p.sigma)
        if g.dims == 1:
            terms.append([fx])
        else:
            s = float(setup.kick.signs(np.array([p.center]))[0]) if setup.kick.t_apply <= setup.t0 else 0.0
            k = setup.kick.k * s
            sy = cfg.pointer.sigma
            terms.append([fx, functools.partial(oracles.free_gaussian, t=0.0, center=0.0, momentum=k, sigma=sy)])
    start = 0
    for fs in terms:
        vals = [fa(ax) for fa, ax in zip(fs, axes)]
        start = start + (vals[0] if g.dims == 1 else np.multiply.outer(vals[0], vals[1]))
    norm = np.sqrt(np.sum(np.abs(start) ** 2) * g.cell)
    f0 = wp.WaveField(g, start / norm, setup.t0)
    # the closed-form start must be the scenario's own post-kick field
    ref = setup.evolution.field_at(setup.t0)
    if np.max(np.abs(ref.amps - f0.amps)) > 1e-10:
        raise AssertionError("closed-form initial state does not match the scenario field")
    ss = wp.evolve(f0, CN_STEPS, dt=CN_DT)
    cn = oracles.product_state_oracle(terms, axes, g.mass, CN_DT, CN_STEPS) / norm
    return float(np.sqrt(np.sum(np.abs(ss.amps - cn) ** 2) * g.cell))


def shipped_config(name: str):
    from .config import config_from_dict

    d = {"kind": "semi"}
    if name != "no-pointer":
        d.update(kick={}, pointer={"tau_ratio": SHIPPED_RATIOS[name]})
    return config_from_dict(d)


SHIPPED_RATIOS = {"fast": 0.1, "intermediate": 1.0, "slow": 100.0}
SHIPPED = ("no-pointer", "fast", "intermediate", "slow")


def _split_step_vs_cn() -> float:
    return max(oracle_agreement(shipped_config(n)) for n in SHIPPED)


def _dispersion() -> float:
    g = wp.Grid((1024,), (80.0,))
    f = wp.init_gaussian(g, wp.PacketSpec(0.0, 0.0, 1.0))
    worst = 0.0
    for t in (2.0, 4.0, 6.0):  # spreading time is 2 m sigma^2 / hbar = 2
        w = wp.evolve_to(f, t).width()
        worst = max(worst, abs(w / oracles.free_gaussian_width(t, 1.0) - 1))
    return worst


def _velocity_fd() -> float:
    """Spectral velocity at off-grid points vs central differences of the closed-form psi."""
    g = wp.Grid((256,), (32.0,))
    specs = [(1.0, wp.PacketSpec(-1.0, 1.5, 1.5)), (0.5 + 0.3j, wp.PacketSpec(2.0, -0.7, 1.2))]

    def psi(x):
        return sum(c * oracles.free_gaussian(x, 0.0, s.center, s.momentum, s.sigma) for c, s in specs)

    f = wp.WaveField(g, psi(g.axis(0)))
    worst = 0.0
    for p in (-2.31, -0.417, 0.773, 1.9):
        x = np.array([p])
        fd = (oracles.central_difference(psi, x) / psi(x)).imag[0]
        v = tr.velocity(f, [p])[0]
        worst = max(worst, abs(v - fd) / max(abs(fd), 1e-12))
    return worst


def _norm_energy(which: str) -> float:
    g, f = _semi_grid()
    e0 = f.energy()
    out = f
    norm, energy = 0.0, 0.0
    for _ in range(4):
        out = wp.evolve(out, 100, dt=0.01)
        norm = max(norm, abs(out.norm() - 1))
        energy = max(energy, abs(out.energy() / e0 - 1))
    return norm if which == "norm" else energy


def _kick_commutes() -> float:
    """Kick vs a pointer-axis evolution that is diagonal in position (a pointer
    potential with the kinetic term switched off)."""
    g = wp.Grid((256, 128), (40.0, 30.0))
    f = wp.init_gaussian(g, [wp.PacketSpec(-5, 2, 1.5), wp.PacketSpec(0, 0, 1.0)])
    kick = wp.KickSpec(2.0, ((-20.0, 0.0),))
    y = g.axis(1)
    u = np.exp(-1j * 0.7 * (0.5 * y**2 + 0.3 * y))[None, :]
    a = wp.apply_kick(wp.WaveField(g, f.amps * u), kick)
    b = wp.WaveField(g, wp.apply_kick(f, kick).amps * u)
    return float(np.max(np.abs(a.amps - b.amps)))


def _sampler_ks() -> float:
    g, f = _semi_grid()
    ens = tr.sample_initial(f, 5000, 7)
    return tr.ks_statistic(ens.initial[:, 0], tr.marginal_density(f, 0)) * math.sqrt(5000)


_SCENARIOS: dict[str, object] = {}


def _scenario(name: str):
    from .experiments import run_semi

    if name not in _SCENARIOS:
        _SCENARIOS[name] = run_semi(shipped_config(name))
    return _SCENARIOS[name]


def _eq_ratio(name):
    """Largest KS statistic over checkpoints and axes, in units of the 99% threshold."""
    rep = _scenario(name)
    return max(max(e.ks) / e.threshold for e in rep.equivariance)


CHECKS: tuple[Check, ...] = (
    Check("state_amplitudes", _state_error, 1e-12),
    Check("mode_unitarity", _unitarity, 1e-12),
    Check("coincidence_law", _coincidence_law, 1e-12),
    Check("chsh_analytic", lambda: abs(modes.chsh(*OPT) - 2 * math.sqrt(2)), 1e-9),
    Check("tsirelson_excess", _tsirelson_excess, 1e-9),
    Check("chsh_sampled_sigmas", lambda: abs(_chsh_mc().s - modes.chsh(*OPT)) / _chsh_mc().stderr, 3.0),
    Check("chsh_violation_sigmas", lambda: (_chsh_mc().s - 2) / _chsh_mc().stderr, 5.0, ">="),
    Check("no_signalling_first", lambda: _marginal_spread(True), 1e-12),
    Check("no_signalling_second", lambda: _marginal_spread(False), 1e-12),
    Check("signalling_gap_error", lambda: abs(joint.signalling_gap(0, 0, [0, math.pi / 2]) - 0.25), 1e-12),
    Check("sampler_l1", _sampler_l1, 0.01),
    Check("ebs_vs_classical_fidelity", _ebs_fidelity, 1.0, "<"),
    Check("ebs_twice_defect", _ebs_twice, 1e-12),
    Check("split_step_vs_crank_nicolson", _split_step_vs_cn, 1e-5),
    Check("gaussian_dispersion", _dispersion, 1e-6),
    Check("velocity_vs_finite_difference", _velocity_fd, 1e-6),
    Check("norm_drift", lambda: _norm_energy("norm"), 1e-8),
    Check("energy_drift", lambda: _norm_energy("energy"), 1e-8),
    Check("kick_commutes", _kick_commutes, 1e-10),
    Check("initial_sampling_ks_scaled", _sampler_ks, 1.63),
    Check("semi_no_pointer_bounce", lambda: _scenario("no-pointer").bounce_fraction, 1.0, ">=", full=True),
    Check("semi_fast_bounce", lambda: _scenario("fast").bounce_fraction, 0.01, full=True),
    Check("semi_fast_correlation", lambda: _scenario("fast").pointer_path_correlation, 0.99, ">=", full=True),
    Check("semi_slow_bounce", lambda: _scenario("slow").bounce_fraction, 0.99, ">=", full=True),
    Check("semi_slow_surrealism", lambda: float(bool(_scenario("slow").surrealism)), 1.0, ">=", full=True),
    Check("semi_intermediate_bounce_low", lambda: _scenario("intermediate").bounce_ci[0], 0.05, ">", full=True),
    Check("semi_intermediate_bounce_high", lambda: _scenario("intermediate").bounce_ci[1], 0.95, "<", full=True),
    Check("equivariance_ks_ratio", lambda: max(_eq_ratio(n) for n in SHIPPED),
          1.0, "<", full=True),
    Check("node_exclusion_rate", lambda: max(_scenario(n).exclusion_rate for n in SHIPPED),
          0.005, "<", full=True),
    Check("no_pointer_config_crossings", lambda: float(_scenario("no-pointer").crossing["config_crossings"]), 0.0, full=True),
)

CHECK_NAMES = tuple(c.name for c in CHECKS)
CHECKS_BY_NAME = {c.name: c for c in CHECKS}


def run_checks(overrides: dict[str, float] | None = None, full: bool = False,
               progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(CHECK_NAMES))
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}")
    out = []
    for c in CHECKS:
        if c.full and not full:
            continue
        tol = overrides.get(c.name, c.tol)
        t0 = time.perf_counter()
        try:
            value = float(c.fn())
        except Exception:  # a crashing check is a failing check
            value = math.nan
        ok = bool(math.isfinite(value) and OPS[c.op](value, tol))
        res = CheckResult(c.name, value, tol, c.op, ok, time.perf_counter() - t0)
        if progress:
            progress(res)
        out.append(res)
    _SCENARIOS.clear()
    return out
