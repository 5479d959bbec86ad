"""Scenario runners: Bell test, two-time statistics, semi-interferometer and
pointer sweeps, each returning plain result objects with pass/fail verdicts.

Semi-interferometer geometry. Two Gaussian packets (mode 1 on the left,
mode 2 on the right) approach each other along the particle axis x and
overlap at ``t_meet``; time stands in for the longitudinal coordinate. A
detector sits on each side: detector 1 on the side mode 1 travels towards.
At ``t_detect`` the detectors capture the particle, so the particle axis
stops evolving. An optional pointer (axis y, mass M, spread sigma_y)
receives an impulsive kick k on the mode-1 region at ``t_apply``; its
branches separate by their own width after tau = M sigma_y / k. The
pointer is read (and clamped) at ``t_read = t_meet + 3 tau``.
"""
from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import joint, modes
from .config import PhysicsError, ScenarioConfig, SchemaError, default_config
from .trajectories import (Ensemble, IntegrationLog, STATUS_NAMES, CrossingReport, check_no_crossing,
                           classify_all, equivariance_ks, integrate, ks_threshold, sample_initial)
from .wavepacket import (FieldEvolution, Grid, GridError, KickSpec, PacketSpec, init_gaussian,
                         pointer_separation_time, superpose)

FAST_MAX = 0.1
SLOW_MIN = 10.0
MARGINAL_TOL = 1e-12
NODE_EXCLUSION_MAX = 0.005
SWEEP_SIGNALLING_POINTS = 50
DEFAULT_DT = 0.01
LATE_DT_MAX = 2.0
READ_DELAY_TAUS = 3.0
ORIGINAL_OUTPUT = "original output of this tool (quantitative curve not given in the source)"


def regime_label(tau_ratio: float) -> str:
    if tau_ratio <= FAST_MAX:
        return "fast"
    if tau_ratio >= SLOW_MIN:
        return "slow"
    return "intermediate"


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


# -- Bell test ---------------------------------------------------------------


@dataclass
class BellResult:
    settings: list[dict]
    chsh_analytic: float
    chsh_sampled: float | None
    chsh_stderr: float | None
    n_per_pair: int
    seed: int
    verdicts: dict[str, bool]


def run_bell(cfg: ScenarioConfig) -> BellResult:
    if cfg.kind != "bell":
        raise SchemaError(f"run_bell needs kind 'bell', got {cfg.kind!r}")
    ph = cfg.phases
    n = int(cfg.ensemble.n or 0)
    if n < 0:
        raise PhysicsError("ensemble.n must be non-negative")
    pairs = [("x", "y", ph.x, ph.xp, ph.y), ("x", "yp", ph.x, ph.xp, ph.yp),
             ("xp", "y", ph.xp, ph.x, ph.y), ("xp", "yp", ph.xp, ph.x, ph.yp)]
    seeds = joint._pair_seeds(cfg.ensemble.seed)
    rows = []
    agree = True
    for (an, bn, a, a2, b), sd in zip(pairs, seeds):
        table = modes.detection_probs(modes.interferometer_state(a, b))
        row = {"alice": an, "bob": bn, "x": a, "y": b, "analytic": table.as_dict(),
               "E_analytic": table.correlator()}
        if n > 0:
            smp = joint.sample_outcomes(a, a2, b, n, sd)
            emp = joint.empirical_joint(smp).sum(axis=1).reshape(-1)
            row["sampled"] = {f"P{p}{q}": float(v) for (p, q), v in zip(modes.BASIS, emp)}
            row["E_sampled"] = float(emp[0] - emp[1] - emp[2] + emp[3])
            se = np.sqrt(np.maximum(table.p * (1 - table.p), 1e-300) / n)
            agree &= bool(np.all(np.abs(emp - table.p) <= 3 * se + 1e-15))
        rows.append(row)
    s_an = modes.chsh(ph.x, ph.xp, ph.y, ph.yp)
    verdicts = {}
    s_mc = se_mc = None
    if n > 0:
        est = joint.chsh_from_samples(ph.x, ph.xp, ph.y, ph.yp, n, cfg.ensemble.seed)
        s_mc, se_mc = est.s, est.stderr
        verdicts["tables_within_3se"] = agree
        verdicts["chsh_within_3se"] = abs(s_mc - s_an) <= 3 * se_mc
    return BellResult(rows, s_an, s_mc, se_mc, n, cfg.ensemble.seed, verdicts)


# -- two-time statistics -------------------------------------------------------


@dataclass
class TwoTimeResult:
    x: float
    xp: float
    y: float
    table: list[dict]
    total: float
    marginal_first: list[list[float]]
    marginal_second: list[list[float]]
    alice_two_time: list[list[float]]
    first_marginal_spread: float
    second_marginal_spread: float
    y_grid: list[float]
    signalling_gap: float
    n: int
    seed: int
    sampled: list[dict] | None
    l1: float | None
    verdicts: dict[str, bool]


def _spread(tables: Sequence[np.ndarray]) -> float:
    t = np.stack(tables)
    return float(np.max(t.max(axis=0) - t.min(axis=0)))


def run_two_time(cfg: ScenarioConfig) -> TwoTimeResult:
    if cfg.kind != "two-time":
        raise SchemaError(f"run_two_time needs kind 'two-time', got {cfg.kind!r}")
    x, xp, y = cfg.phases.x, cfg.phases.xp, cfg.phases.y
    jt = joint.two_time_joint(x, xp, y)
    sweep = np.linspace(0, 2 * np.pi, SWEEP_SIGNALLING_POINTS, endpoint=False)
    # first-time law must not depend on the second setting, and vice versa
    s1 = _spread([joint.marginal_first(joint.two_time_joint(x, v, y)) for v in sweep])
    s2 = _spread([joint.marginal_second(joint.two_time_joint(v, xp, y)) for v in sweep])
    y_grid = list(cfg.y_grid) if cfg.y_grid else [y]
    gap = joint.signalling_gap(x, xp, y_grid)
    n = int(cfg.ensemble.n or 0)
    sampled = l1 = None
    if n > 0:
        smp = joint.sample_outcomes(x, xp, y, n, cfg.ensemble.seed)
        emp = joint.empirical_joint(smp)
        sampled = [{"a": a, "a_prime": a2, "b": b, "probability": float(emp[a - 1, a2 - 1, b - 3])}
                   for a, a2, b in joint.OUTCOMES]
        l1 = joint.l1_distance(smp, jt)
    table = [{"a": a, "a_prime": a2, "b": b, "probability": p} for (a, a2, b), p in jt.items()]
    total = float(jt.p.sum())
    verdicts = {
        "normalized": abs(total - 1) <= MARGINAL_TOL,
        "first_marginal_independent_of_xp": s1 <= MARGINAL_TOL,
        "second_marginal_independent_of_x": s2 <= MARGINAL_TOL,
    }
    return TwoTimeResult(x, xp, y, table, total, joint.marginal_first(jt).tolist(),
                         joint.marginal_second(jt).tolist(), joint.alice_two_time(jt).tolist(),
                         s1, s2, y_grid, gap, n, cfg.ensemble.seed, sampled, l1, verdicts)


# -- semi-interferometer -------------------------------------------------------


@dataclass
class SemiSetup:
    grid: Grid
    evolution: FieldEvolution
    kick: KickSpec | None
    mode1_center: float
    mid: float
    t0: float
    t_meet: float
    t_cross: float
    t_detect: float
    t_read: float | None
    t_final: float
    tau: float | None
    tau_ratio: float | None
    mass: float | None
    dt: float
    dt_late: float
    sigma_x: float


def _next_pow2(n: float) -> int:
    return 1 << max(6, math.ceil(math.log2(max(n, 1.0))))


def _as_list(v, dims, default):
    if v is None:
        return list(default)
    v = list(v) if isinstance(v, list) else [v] * dims
    if len(v) != dims:
        raise PhysicsError(f"grid spec needs {dims} entries per field, got {len(v)}")
    return v


def _spread_at(sigma: float, t: float, mass: float = 1.0) -> float:
    return sigma * math.sqrt(1 + (t / (2 * mass * sigma**2)) ** 2)


def _resolve_pointer(cfg: ScenarioConfig, t_cross: float) -> tuple[float, float, float]:
    """(mass, tau, tau_ratio) from whichever of mass / tau_ratio was given."""
    p, k = cfg.pointer, cfg.kick.k
    if p.sigma <= 0:
        raise PhysicsError("pointer.sigma must be positive")
    if p.mass is not None and p.tau_ratio is not None:
        raise SchemaError("give pointer.mass or pointer.tau_ratio, not both")
    if p.mass is not None:
        if p.mass <= 0:
            raise PhysicsError("pointer.mass must be positive")
        tau = pointer_separation_time(k, p.mass, p.sigma)
        return p.mass, tau, tau / t_cross
    ratio = 0.1 if p.tau_ratio is None else p.tau_ratio
    if ratio <= 0:
        raise PhysicsError("pointer.tau_ratio must be positive")
    if k == 0:
        raise PhysicsError("a zero kick never separates the pointer; give pointer.mass instead of tau_ratio")
    tau = ratio * t_cross
    return tau * k / p.sigma, tau, ratio


def build_semi(cfg: ScenarioConfig) -> SemiSetup:
    """Validate a semi/pointer-sweep config and construct its field evolution."""
    if len(cfg.packets) != 2:
        raise PhysicsError("the semi-interferometer needs exactly two packets")
    p1, p2 = cfg.packets
    for p in (p1, p2):
        if p.sigma <= 0:
            raise PhysicsError("packet sigma must be positive")
    v_rel = p1.momentum - p2.momentum
    gap = p2.center - p1.center
    if gap == 0 or v_rel * gap <= 0:
        raise PhysicsError("packets fail to cross: they do not approach each other")
    t0 = 0.0
    t_cross = gap / v_rel
    t_meet = t0 + t_cross
    mid = p1.center + p1.momentum * t_cross
    sigma_x = max(p1.sigma, p2.sigma)
    # detection once the branches are well separated again
    sep_time = 8 * _spread_at(sigma_x, 2 * t_cross) / abs(v_rel)
    t_detect = cfg.t_detect if cfg.t_detect is not None else t_meet + max(t_cross, sep_time)
    if t_detect < t_meet + 2 * sigma_x / abs(v_rel):
        raise PhysicsError(f"packets fail to cross before t_detect={t_detect:g} (they meet at t={t_meet:g})")

    has_pointer = cfg.pointer is not None
    kick = None
    mass = tau = ratio = t_read = None
    if has_pointer:
        mass, tau, ratio = _resolve_pointer(cfg, t_cross)
        t_read = t_meet + READ_DELAY_TAUS * tau if math.isfinite(tau) else t_detect
    t_final = max(t_detect, t_read or t_detect)
    if cfg.t_final is not None:
        if cfg.t_final < t_final - 1e-12:
            raise PhysicsError(
                f"t_final={cfg.t_final:g} ends before detection/readout at t={t_final:g}; packets fail to cross in time")
        t_final = cfg.t_final

    dims = 2 if has_pointer else 1
    gx_pts = 512 if has_pointer else 2048
    reach = 0.0
    for p in (p1, p2):
        for t in (t0, t_detect):
            reach = max(reach, abs(p.center + p.momentum * (t - t0) - mid) + 4 * _spread_at(p.sigma, t - t0))
    ext_x = max(48.0, math.ceil(2 * reach + 2))
    kmax = max(PacketSpec(p.center, p.momentum, p.sigma).reach() for p in (p1, p2))
    dx_max = min(math.pi / (4 * kmax), min(p1.sigma, p2.sigma) / 4)
    gx_pts = max(gx_pts, _next_pow2(ext_x / dx_max))
    points = _as_list(cfg.grid.points, dims, [gx_pts] + ([0] if dims == 2 else []))
    extent = _as_list(cfg.grid.extent, dims, [ext_x] + ([0.0] if dims == 2 else []))
    origin = _as_list(cfg.grid.origin, dims, [mid - extent[0] / 2] + ([0.0] if dims == 2 else []))
    if extent[0] <= 0:
        raise PhysicsError("grid extent must be positive")

    if has_pointer:
        k, sy = cfg.kick.k, cfg.pointer.sigma
        t_clamp = t_read
        shift = k / mass * (t_clamp - cfg.kick.t_apply)
        spread = _spread_at(sy, t_clamp, mass)
        lo_y = (-shift if cfg.kick.sign_rule == "plus-minus-split" else 0.0) - 6 * spread
        hi_y = shift + 6 * spread
        band = k + 1.5 / sy
        dy_max = math.pi / (4 * band)
        if cfg.grid.points is None or not isinstance(cfg.grid.points, list):
            points[1] = max(64, _next_pow2((hi_y - lo_y) / dy_max))
        if cfg.grid.extent is None or not isinstance(cfg.grid.extent, list):
            extent[1] = hi_y - lo_y
        if cfg.grid.origin is None or not isinstance(cfg.grid.origin, list):
            origin[1] = lo_y
    try:
        grid = Grid(tuple(points), tuple(extent), tuple(origin),
                    dt=cfg.grid.dt or DEFAULT_DT, mass=(1.0, mass) if has_pointer else None)
    except GridError as exc:
        raise PhysicsError(str(exc)) from exc

    # branches must stay 4 sigma clear of the periodic boundary up to capture
    lo_x, hi_x = grid.bounds(0)
    for p in (p1, p2):
        for t in np.linspace(t0, t_detect, 9):
            c = p.center + p.momentum * (t - t0)
            w = 4 * _spread_at(p.sigma, t - t0)
            if c - w < lo_x or c + w > hi_x:
                raise PhysicsError(
                    f"packet starting at {p.center:g} comes within 4 sigma of the boundary at t={t:g}; enlarge grid.extent")
    try:
        y_spec = [PacketSpec(0.0, 0.0, cfg.pointer.sigma)] if has_pointer else []
        f1 = init_gaussian(grid, [PacketSpec(p1.center, p1.momentum, p1.sigma)] + y_spec, t0)
        f2 = init_gaussian(grid, [PacketSpec(p2.center, p2.momentum, p2.sigma)] + y_spec, t0)
        for p in (p1, p2):
            grid.check_band(0, PacketSpec(p.center, p.momentum, p.sigma).reach())
        kicks = []
        if has_pointer:
            region = cfg.kick.region or [[lo_x, mid]]
            for a, b in region:
                if b <= lo_x or a >= hi_x:
                    raise PhysicsError(f"kick region [{a:g}, {b:g}) is not aligned with the particle axis")
            kick = KickSpec(cfg.kick.k, tuple(tuple(r) for r in region), cfg.kick.sign_rule, cfg.kick.t_apply)
            if not kick.indicator(grid.axis(0)).any():
                raise PhysicsError("kick region contains no grid points")
            if not t0 <= cfg.kick.t_apply < t_meet:
                raise PhysicsError("the kick must be applied before the packets meet")
            if cfg.kick.k > 0:
                grid.check_band(1, cfg.kick.k + 1.5 / cfg.pointer.sigma)
            kicks.append(kick)
    except GridError as exc:
        raise PhysicsError(str(exc)) from exc
    sp = superpose([(1.0, f1), (1.0, f2)])
    if abs(sp.overlaps[0, 1]) > 1e-6:
        raise PhysicsError("the two packets overlap at t=0; start them further apart")
    stop = {0: t_detect}
    if has_pointer and t_read is not None:
        stop[1] = t_read
    evo = FieldEvolution(sp.field, kicks, stop)
    dt = grid.dt
    dt_late = dt
    if has_pointer and math.isfinite(tau):
        dt_late = max(dt, min(LATE_DT_MAX, 0.05 * tau))
    return SemiSetup(grid, evo, kick, p1.center, mid, t0, t_meet, t_cross, t_detect, t_read, t_final,
                     tau, ratio, mass, dt, dt_late, sigma_x)


@dataclass
class EquivarianceCheck:
    time: float
    ks: list[float]
    threshold: float
    passed: bool


@dataclass
class RegimeReport:
    kind: str
    n: int
    seed: int
    n_valid: int
    excluded: dict[str, int]
    exclusion_rate: float
    bounce_fraction: float
    bounce_ci: tuple[float, float]
    n_inconclusive: int
    detector1_mode2_fraction: float | None
    detector_path_anticorrelated: bool
    crossing: dict
    equivariance: list[EquivarianceCheck]
    times: dict[str, float | None]
    integration: dict[str, int] = field(default_factory=dict)
    tau_ratio: float | None = None
    regime: str | None = None
    pointer_mass: float | None = None
    kick: float | None = None
    pointer_path_correlation: float | None = None
    pointer_matches_path_fraction: float | None = None
    surrealism: bool | None = None
    note: str | None = None
    verdicts: dict[str, bool] = field(default_factory=dict)
    ensemble: Ensemble | None = field(default=None, repr=False, compare=False)
    labels: np.ndarray | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        from .config import jsonable

        d = {k: v for k, v in self.__dict__.items() if k not in ("ensemble", "labels")}
        return jsonable(d)


def run_semi(cfg: ScenarioConfig, setup: SemiSetup | None = None) -> RegimeReport:
    if cfg.kind not in ("semi", "pointer-sweep"):
        raise SchemaError(f"run_semi needs kind 'semi', got {cfg.kind!r}")
    s = setup or build_semi(cfg)
    n = int(cfg.ensemble.n or 0)
    if n < 1:
        raise PhysicsError("the semi-interferometer needs ensemble.n >= 1")
    evo = s.evolution
    checkpoints = sorted({t for t in (s.t0, s.t_meet, s.t_detect, s.t_read) if t is not None and t <= s.t_final})
    ens = sample_initial(evo.field_at(s.t0), n, cfg.ensemble.seed)
    log = IntegrationLog()
    n_fine = max(1, round((s.t_detect - s.t0) / s.dt))
    rec = max(1, n_fine // 200)
    # the particle axis is captured at t_detect; only the pointer moves afterwards
    t_fast_end = min(s.t_detect, s.t_final)
    ens = integrate(ens, evo, t_fast_end, s.dt, checkpoints=[c for c in checkpoints if c <= t_fast_end],
                    record_every=rec, log=log)
    if s.t_final > t_fast_end + 1e-12:
        n_late = max(1, round((s.t_final - t_fast_end) / s.dt_late))
        ens = integrate(ens, evo, s.t_final, s.dt_late, checkpoints=checkpoints,
                        record_every=max(1, n_late // 50), log=log)

    valid = ens.valid
    n_valid = int(valid.sum())
    excluded = {STATUS_NAMES[c]: int(np.sum(ens.status == c)) for c in STATUS_NAMES if c != 0}
    excl_rate = float(1 - n_valid / n)

    thr = ks_threshold(max(n_valid, 1))
    eq = []
    for t in checkpoints:
        ks = equivariance_ks(ens.at(t)[valid], evo.field_at(t)) if n_valid else [1.0]
        eq.append(EquivarianceCheck(t, ks, thr, bool(max(ks) < thr)))

    labels = classify_all(ens, s.sigma_x, s.t_final, center=s.mid)
    decided = labels != 0
    n_dec = int(decided.sum())
    k_b = int(np.sum(labels == 1))
    bounce = k_b / n_dec if n_dec else float("nan")
    ci = clopper_pearson(k_b, n_dec)

    x0 = ens.initial[:, 0] - s.mid
    xf = ens.final[:, 0] - s.mid
    side1 = np.sign(s.mode1_center - s.mid)
    path1 = np.sign(x0) == side1
    det1 = np.sign(xf) == -side1
    sel = valid & det1
    det1_mode2 = float(np.mean(~path1[sel])) if sel.any() else None
    sel2 = valid & ~det1
    anticorr = bool(sel.any() and np.all(~path1[sel]) and np.all(path1[sel2]))

    cr = check_no_crossing(ens)
    times = {"t_start": s.t0, "t_meet": s.t_meet, "t_cross": s.t_cross, "t_detect": s.t_detect,
             "t_read": s.t_read, "t_final": s.t_final, "tau": s.tau}
    rep = RegimeReport(cfg.kind, n, cfg.ensemble.seed, n_valid, excluded, excl_rate, bounce, ci,
                       int(np.sum(valid & ~decided)), det1_mode2, anticorr, cr.as_dict(), eq, times,
                       integration=dict(log.__dict__), ensemble=ens, labels=labels)
    rep.verdicts["exclusion_below_limit"] = excl_rate < NODE_EXCLUSION_MAX
    rep.verdicts["equivariance"] = all(e.passed for e in eq)
    rep.verdicts["no_configuration_crossings"] = cr.config_crossings == 0

    if s.kick is not None:
        rep.tau_ratio = s.tau_ratio
        rep.regime = regime_label(s.tau_ratio)
        rep.pointer_mass = s.mass
        rep.kick = s.kick.k
        y = ens.at(s.t_read)[:, 1] if s.t_read <= s.t_final else ens.final[:, 1]
        shift = s.kick.k / s.mass * (s.t_read - s.kick.t_apply)
        sg = s.kick.signs(np.array([s.mode1_center, 2 * s.mid - s.mode1_center]))
        c1, c2 = sg[0] * shift, sg[1] * shift
        says1 = np.abs(y - c1) < np.abs(y - c2)
        v_p, v_s = path1[valid].astype(float), says1[valid].astype(float)
        if v_p.std() > 0 and v_s.std() > 0:
            rep.pointer_path_correlation = float(np.corrcoef(v_s, v_p)[0, 1])
        else:
            rep.pointer_path_correlation = float("nan")
        match = float(np.mean(says1[valid] == path1[valid]))
        rep.pointer_matches_path_fraction = match
        rep.surrealism = bool(1 - match > 0.5)
        if rep.regime == "intermediate":
            rep.note = ORIGINAL_OUTPUT
    return rep


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepResult:
    param: str
    values: list[float]
    reports: list[RegimeReport]
    verdicts: dict[str, bool]
    note: str = ORIGINAL_OUTPUT

    def as_dict(self) -> dict:
        return {"param": self.param, "values": self.values, "note": self.note,
                "verdicts": self.verdicts, "reports": [r.as_dict() for r in self.reports]}


def is_intermediate(r: RegimeReport, lo: float = 0.05, hi: float = 0.95) -> bool:
    """Bounce fraction strictly inside (lo, hi) with the whole 95% CI inside too."""
    return lo < r.bounce_fraction < hi and r.bounce_ci[0] > lo and r.bounce_ci[1] < hi


def sweep_point_config(cfg: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    c = copy.deepcopy(cfg)
    if c.kick is None or c.pointer is None:
        raise SchemaError("a pointer sweep needs kick and pointer sections")
    if param == "tau_ratio":
        c.pointer.tau_ratio, c.pointer.mass = value, None
    elif param == "mass":
        c.pointer.mass, c.pointer.tau_ratio = value, None
    elif param == "k":
        c.kick.k = value
    else:
        raise SchemaError(f"unknown sweep parameter {param!r}")
    return c


def run_pointer_sweep(cfg: ScenarioConfig, values: Sequence[float] | None = None, threads: int = 1) -> SweepResult:
    """One RegimeReport per grid value, run in parallel and merged in grid order."""
    if cfg.kind != "pointer-sweep":
        raise SchemaError(f"run_pointer_sweep needs kind 'pointer-sweep', got {cfg.kind!r}")
    sw = cfg.sweep or default_config("pointer-sweep").sweep
    vals = list(sw.values if values is None else values)
    if not vals:
        raise PhysicsError("the sweep grid is empty")
    point_cfgs = [sweep_point_config(cfg, sw.param, v) for v in vals]
    setups = [build_semi(c) for c in point_cfgs]  # validate everything before running
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(lambda cs: run_semi(*cs), zip(point_cfgs, setups)))
    verdicts = {"intermediate_exhibited": any(is_intermediate(r) for r in reports)}
    fast = [r for r in reports if r.regime == "fast"]
    slow = [r for r in reports if r.regime == "slow"]
    if fast:
        verdicts["fast_endpoint"] = fast[0].bounce_fraction <= 0.01 and fast[0].pointer_path_correlation > 0.99
    if slow:
        verdicts["slow_endpoint"] = slow[-1].bounce_fraction >= 0.99 and bool(slow[-1].surrealism)
    return SweepResult(sw.param, vals, reports, verdicts)
