"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run directly with ``python3 tests/test_acceptance.py`` or through pytest;
the terminal summary lists every criterion with its measured values.
"""
import math
import sys
import time

import numpy as np
import pytest

from pwlab import checks, joint, modes
from pwlab import experiments as ex
from pwlab.config import default_config

SQRT8 = 2 * math.sqrt(2)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def shipped():
    """The four shipped continuum scenarios at their default N=5000, run once."""
    out = {}
    for name in checks.SHIPPED:
        out[name] = timed(ex.run_semi, checks.shipped_config(name))
    return out


def test_criterion_01_state_amplitudes(acceptance):
    def worst():
        err = 0.0
        for x in np.linspace(-3, 3, 13):
            for y in np.linspace(-2, 4, 13):
                e = np.exp(1j * (x + y))
                a = np.array([1j, 1, -1, 1j]) / (2 * math.sqrt(2))
                b = np.array([1j, -1, 1, 1j]) / (2 * math.sqrt(2))
                err = max(err, float(np.max(np.abs(modes.interferometer_state(x, y).amps - (e * a + b)))))
        return err

    err, secs = timed(worst)
    ok = err <= 1e-12 and secs < 1
    acceptance(1, "state amplitudes termwise", ok, f"max error {err:.2e}, {secs:.2f} s")
    assert ok


def test_criterion_02_coincidence_law(acceptance):
    def worst():
        err = 0.0
        for x in np.linspace(0, 2 * np.pi, 10):
            for y in np.linspace(-np.pi, np.pi, 10):
                t = modes.detection_probs(modes.interferometer_state(x, y))
                c = math.cos(x + y)
                want = {(1, 3): 1 + c, (2, 4): 1 + c, (1, 4): 1 - c, (2, 3): 1 - c}
                err = max(err, max(abs(t.prob(a, b) - w / 4) for (a, b), w in want.items()))
        return err

    err, secs = timed(worst)
    ok = err <= 1e-12 and secs < 1
    acceptance(2, "coincidence law on 100 settings", ok, f"max error {err:.2e}, {secs:.2f} s")
    assert ok


def test_criterion_03_chsh(acceptance):
    opt = (0.0, math.pi / 2, -math.pi / 4, math.pi / 4)

    def run():
        return modes.chsh(*opt), joint.chsh_from_samples(*opt, 100_000, 12345)

    (s, est), secs = timed(run)
    analytic_err = abs(s - SQRT8)
    z_true = abs(est.s - s) / est.stderr
    z_bound = (est.s - 2) / est.stderr
    ok = analytic_err <= 1e-9 and z_true <= 3 and z_bound >= 5 and secs < 10
    acceptance(3, "CHSH", ok, f"analytic error {analytic_err:.1e}, sampled S={est.s:.4f} "
               f"({z_true:.2f} SE from 2*sqrt2, {z_bound:.0f} SE above 2), {secs:.2f} s")
    assert ok


def test_criterion_04_no_signalling(acceptance):
    vals = np.linspace(0, 2 * np.pi, 50, endpoint=False)

    def spreads():
        out = []
        for x, y in [(0.3, -1.1), (1.7, 0.4)]:
            first = np.stack([joint.marginal_first(joint.two_time_joint(x, v, y)) for v in vals])
            second = np.stack([joint.marginal_second(joint.two_time_joint(v, x, y)) for v in vals])
            out += [np.ptp(first, axis=0).max(), np.ptp(second, axis=0).max()]
        return max(out)

    spread, secs = timed(spreads)
    ok = spread <= 1e-12 and secs < 1
    acceptance(4, "no-signalling marginals", ok, f"max spread {spread:.2e} over 50-point sweeps, {secs:.2f} s")
    assert ok


def test_criterion_05_signalling_gap(acceptance):
    gap, secs = timed(joint.signalling_gap, 0.0, 0.0, [0.0, math.pi / 2])
    ok = abs(gap - 0.25) <= 1e-12 and secs < 1
    acceptance(5, "two-time marginal depends on Bob's setting", ok, f"gap {gap:.15f}, {secs:.3f} s")
    assert ok


def test_criterion_06_sampler_law(acceptance):
    rng = np.random.default_rng(2024)

    def run():
        out = []
        for i in range(5):
            x, xp, y = rng.uniform(-np.pi, np.pi, 3)
            smp = joint.sample_outcomes(x, xp, y, 100_000, 1000 + i)
            out.append(joint.l1_distance(smp, joint.two_time_joint(x, xp, y)))
        return out

    l1, secs = timed(run)
    ok = max(l1) < 0.01 and secs < 30
    acceptance(6, "sampler law L1", ok, f"max L1 {max(l1):.4f} over 5 triples, {secs:.2f} s")
    assert ok


def test_criterion_07_equivariance(acceptance, shipped):
    parts, ok = [], True
    total = sum(secs for _, secs in shipped.values())
    for name, (rep, _) in shipped.items():
        ratio = max(max(e.ks) / e.threshold for e in rep.equivariance)
        good = rep.n == 5000 and len(rep.equivariance) >= 3 and all(e.passed for e in rep.equivariance)
        ok &= good
        parts.append(f"{name} {len(rep.equivariance)} times, worst KS/threshold {ratio:.2f}")
    ok &= total < 300
    acceptance(7, "equivariance", ok, "; ".join(parts) + f"; {total:.0f} s total")
    assert ok


def test_criterion_08_no_pointer_bounce(acceptance, shipped):
    rep, secs = shipped["no-pointer"]
    ok = (rep.n == 5000 and rep.bounce_fraction == 1.0 and rep.crossing["config_crossings"] == 0
          and rep.detector_path_anticorrelated and rep.detector1_mode2_fraction == 1.0 and secs < 120)
    acceptance(8, "no-pointer semi-interferometer", ok,
               f"bounce {rep.bounce_fraction}, crossings {rep.crossing['config_crossings']}, "
               f"detector-1 mode-2 fraction {rep.detector1_mode2_fraction}, {secs:.0f} s")
    assert ok


def test_criterion_09_fast_and_slow(acceptance, shipped):
    fast, t_fast = shipped["fast"]
    slow, t_slow = shipped["slow"]
    ok_fast = fast.tau_ratio <= 0.1 and fast.bounce_fraction <= 0.01 and fast.pointer_path_correlation > 0.99
    ok_slow = slow.tau_ratio >= 10 and slow.bounce_fraction >= 0.99 and bool(slow.surrealism)
    ok = ok_fast and ok_slow and t_fast + t_slow < 600
    acceptance(9, "fast and slow pointer regimes", ok,
               f"fast tau/T={fast.tau_ratio}: bounce {fast.bounce_fraction:.4f}, correlation "
               f"{fast.pointer_path_correlation:.4f}; slow tau/T={slow.tau_ratio}: bounce "
               f"{slow.bounce_fraction:.4f}, surrealism {slow.surrealism}; {t_fast + t_slow:.0f} s")
    assert ok


def test_criterion_10_intermediate_regime(acceptance):
    cfg = default_config("pointer-sweep")
    res, secs = timed(ex.run_pointer_sweep, cfg, values=[0.3, 1.0, 3.0])
    hits = [r for r in res.reports if ex.is_intermediate(r)]
    ok = bool(hits) and res.verdicts["intermediate_exhibited"] and secs < 600
    pts = ", ".join(f"tau/T={r.tau_ratio}: {r.bounce_fraction:.3f} [{r.bounce_ci[0]:.3f}, {r.bounce_ci[1]:.3f}]"
                    for r in res.reports)
    acceptance(10, "intermediate regime exists", ok, f"{pts}; {secs:.0f} s")
    assert ok


def test_criterion_11_numerical_oracles(acceptance):
    by = checks.CHECKS_BY_NAME

    def run():
        return (by["split_step_vs_crank_nicolson"].fn(), by["gaussian_dispersion"].fn(),
                by["velocity_vs_finite_difference"].fn())

    (l2, disp, vel), secs = timed(run)
    ok = l2 < 1e-5 and disp <= 1e-6 and vel < 1e-6 and secs < 120
    acceptance(11, "numerical oracles", ok, f"split-step vs CN L2 {l2:.2e}, dispersion {disp:.2e}, "
               f"velocity {vel:.2e}, {secs:.1f} s")
    assert ok


def test_criterion_12_elephant_splitter(acceptance):
    def run():
        a = 2.0
        s = 1 / math.sqrt(2)
        # mode-by-mode branch output for each single-mode input
        b1 = modes.ebs_transform(modes.CoherentTwoMode.product(a, 0))
        b2 = modes.ebs_transform(modes.CoherentTwoMode.product(0, a))
        want1 = modes.CoherentTwoMode(((s, a, 0), (1j * s, 0, a))).normalized()
        want2 = modes.CoherentTwoMode(((1j * s, a, 0), (s, 0, a))).normalized()
        branch_err = max(abs(1 - modes.fidelity(b1, want1)), abs(1 - modes.fidelity(b2, want2)),
                         max(abs(w - v) for (w, *_), (v, *_) in zip(b1.branches, want1.branches)))
        cl = modes.classical_bs_transform(modes.CoherentTwoMode.product(a, 0))
        return branch_err, modes.fidelity(b1, cl)

    (branch_err, fid), secs = timed(run)
    ok = branch_err <= 1e-12 and fid < 1 and secs < 1
    acceptance(12, "elephant splitter differs from a standard splitter", ok,
               f"branch error {branch_err:.1e}, fidelity vs classical {fid:.6f}, {secs:.3f} s")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
