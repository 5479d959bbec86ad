import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwlab import joint

angles = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)


def brute_joint(x, xp, y):
    """Written-out product law: first factor in cos(x+y), second in cos(x'+y)."""
    out = {}
    for a, a2, b in itertools.product((1, 2), (1, 2), (3, 4)):
        out[a, a2, b] = (1 + (-1) ** (a + b) * math.cos(x + y)) / 4 * (1 + (-1) ** (a2 + b) * math.cos(xp + y)) / 2
    return out


def test_zero_phases_perfect_correlation():
    j = joint.two_time_joint(0, 0, 0)
    for o, p in j.items():
        assert p == pytest.approx(0.5 if o in {(1, 1, 3), (2, 2, 4)} else 0.0, abs=1e-15)


def test_half_pi_settings():
    j = joint.two_time_joint(math.pi / 2, math.pi / 2, math.pi / 2)
    assert j.prob(1, 1, 4) == pytest.approx(0.5, abs=1e-15)
    assert j.prob(2, 2, 3) == pytest.approx(0.5, abs=1e-15)


@given(angles, angles, angles)
def test_joint_matches_brute_force_and_sums_to_one(x, xp, y):
    j = joint.two_time_joint(x, xp, y)
    for o, p in brute_joint(x, xp, y).items():
        assert abs(j.prob(*o) - p) < 1e-12
    assert abs(j.p.sum() - 1) < 1e-12
    assert (j.p >= -1e-15).all()


@given(angles, angles, angles)
def test_first_marginal_is_the_coincidence_law(x, xp, y):
    m = joint.marginal_first(joint.two_time_joint(x, xp, y))
    c = math.cos(x + y)
    assert np.allclose(m, [[(1 + c) / 4, (1 - c) / 4], [(1 - c) / 4, (1 + c) / 4]], atol=1e-12, rtol=0)


@given(angles, angles, angles)
def test_second_marginal_is_first_with_settings_swapped(x, xp, y):
    m2 = joint.marginal_second(joint.two_time_joint(x, xp, y))
    m1 = joint.marginal_first(joint.two_time_joint(xp, x, y))
    assert np.max(np.abs(m1 - m2)) < 1e-12


@pytest.mark.parametrize("x, y, p13, p14", [(0, 0, 0.5, 0.0), (0, math.pi, 0.0, 0.5)])
def test_first_marginal_values(x, y, p13, p14):
    m = joint.marginal_first(joint.two_time_joint(x, 0.3, y))
    assert m[0, 0] == pytest.approx(p13, abs=1e-15) and m[0, 1] == pytest.approx(p14, abs=1e-15)


def test_second_marginal_value():
    assert joint.marginal_second(joint.two_time_joint(1.0, 0.0, 0.0))[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_marginals_independent_of_other_setting():
    ref1 = joint.marginal_first(joint.two_time_joint(0.4, 0.0, 1.1))
    ref2 = joint.marginal_second(joint.two_time_joint(0.0, 0.4, 1.1))
    for v in np.linspace(-math.pi, math.pi, 50):
        assert np.max(np.abs(joint.marginal_first(joint.two_time_joint(0.4, v, 1.1)) - ref1)) < 1e-12
        assert np.max(np.abs(joint.marginal_second(joint.two_time_joint(v, 0.4, 1.1)) - ref2)) < 1e-12


@pytest.mark.parametrize("y, p11", [(0.0, 0.5), (math.pi / 2, 0.25)])
def test_alice_two_time_table(y, p11):
    assert joint.alice_two_time(joint.two_time_joint(0, 0, y))[0, 0] == pytest.approx(p11, abs=1e-15)


@given(angles, angles, angles)
def test_alice_two_time_closed_form(x, xp, y):
    t = joint.alice_two_time(joint.two_time_joint(x, xp, y))
    cc = math.cos(x + y) * math.cos(xp + y)
    for a, a2 in itertools.product((1, 2), (1, 2)):
        assert abs(t[a - 1, a2 - 1] - (1 + (-1) ** (a + a2) * cc) / 4) < 1e-12


def test_signalling_gap():
    assert joint.signalling_gap(0, 0, [0, math.pi / 2]) == pytest.approx(0.25, abs=1e-12)
    assert joint.signalling_gap(0.3, 1.2, [0.7]) == 0.0
    with pytest.raises(ValueError):
        joint.signalling_gap(0, 0, [])


@given(angles, angles, st.lists(angles, min_size=1, max_size=6))
def test_signalling_gap_matches_enumeration(x, xp, ys):
    tables = []
    for y in ys:
        bj = brute_joint(x, xp, y)
        tables.append([sum(bj[a, a2, b] for b in (3, 4)) for a, a2 in itertools.product((1, 2), (1, 2))])
    tables = np.array(tables)
    assert abs(joint.signalling_gap(x, xp, ys) - (tables.max(0) - tables.min(0)).max()) < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5])
def test_zero_phase_samples_stay_on_support(seed):
    s = joint.sample_outcomes(0, 0, 0, 5000, seed)
    assert {tuple(r) for r in s} <= {(1, 1, 3), (2, 2, 4)}


def test_sampler_converges():
    x, xp, y = math.pi / 3, math.pi / 5, math.pi / 7
    s = joint.sample_outcomes(x, xp, y, 100_000, 2024)
    assert joint.l1_distance(s, joint.two_time_joint(x, xp, y)) < 0.01


def test_sampler_deterministic_and_chunk_stable():
    a = joint.sample_outcomes(0.2, 0.5, -0.3, 10_000, 99)
    b = joint.sample_outcomes(0.2, 0.5, -0.3, 10_000, 99)
    assert np.array_equal(a, b)
    # a longer run extends the same stream chunk by chunk
    c = joint.sample_outcomes(0.2, 0.5, -0.3, 3 * joint.CHUNK, 99)
    assert np.array_equal(a[: 2 * joint.CHUNK], c[: 2 * joint.CHUNK])


def test_single_sample_outcome():
    o = joint.sample_outcome(0, 0, 0, np.random.default_rng(5))
    assert (o.a, o.a2, o.b) in {(1, 1, 3), (2, 2, 4)}
    with pytest.raises(ValueError):
        joint.OutcomeTriple(3, 1, 3)


def test_chsh_sampled_at_optimal_angles():
    est = joint.chsh_from_samples(0, math.pi / 2, -math.pi / 4, math.pi / 4, 100_000, 12345)
    assert abs(est.s - 2 * math.sqrt(2)) < 3 * est.stderr
    assert abs(est.s - 2 * math.sqrt(2)) < 0.02
    assert (est.s - 2) / est.stderr >= 5


def test_chsh_sampled_all_zero_settings():
    est = joint.chsh_from_samples(0, 0, 0, 0, 20_000, 8)
    assert abs(est.s - 2.0) < 3 * est.stderr + 1e-12


def test_chsh_single_sample():
    est = joint.chsh_from_samples(0, math.pi / 2, -math.pi / 4, math.pi / 4, 1, 4)
    assert -4 <= est.s <= 4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_seed_range(seed):
    assert joint.sample_outcomes(0.1, 0.2, 0.3, 10, seed).shape == (10, 3)
