import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwlab import modes

angles = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)
SQ8 = 2 * math.sqrt(2)


def kron_pipeline(x, y):
    """Independent route: phases and splitters as 2x2 matrices on the amplitude matrix M[a, b]."""
    m = np.array([[0, 1], [1, 0]], dtype=complex) / math.sqrt(2)  # rows a=1,2; cols b=3,4
    pa = np.diag([cmath.exp(1j * x), 1])
    pb = np.diag([1, cmath.exp(1j * y)])
    u = np.array([[1, 1j], [1j, 1]]) / math.sqrt(2)
    return (u @ pa @ m @ pb @ u.T).reshape(-1)


def written_terms():
    """The two four-term groups of the post-splitter state, as coefficient vectors
    in basis (1,3), (1,4), (2,3), (2,4): state = e^{i(x+y)} * A + B."""
    A = np.array([1j, 1, -1, 1j]) / SQ8
    B = np.array([1j, -1, 1, 1j]) / SQ8
    return A, B


def test_bell_state_amplitudes():
    s = modes.make_bell_state()
    assert s.amp(1, 4) == pytest.approx(0.70710678, abs=1e-8)
    assert s.amp(2, 3) == pytest.approx(0.70710678, abs=1e-8)
    assert s.amp(1, 3) == 0 and s.amp(2, 4) == 0
    assert s.norm() == pytest.approx(1.0, abs=1e-15)


def test_phase_identity_and_inverse():
    s0 = modes.make_bell_state()
    assert np.array_equal(modes.apply_phase(s0, 1, 0.0).amps, s0.amps)
    s = modes.apply_phase(modes.apply_phase(s0, 1, 0.7), 1, -0.7)
    assert np.max(np.abs(s.amps - s0.amps)) < 1e-12


def test_phases_before_splitter():
    x, y = 0.3, -1.1
    s = modes.apply_phase(modes.apply_phase(modes.make_bell_state(), 1, x), 4, y)
    assert abs(s.amp(1, 4) - cmath.exp(1j * (x + y)) / math.sqrt(2)) < 1e-15
    assert abs(s.amp(2, 3) - 1 / math.sqrt(2)) < 1e-15


def test_post_splitter_state_termwise():
    # separate the e^{i(x+y)} group from the constant group using x+y = 0 and pi
    plus = modes.interferometer_state(0.0, 0.0).amps
    minus = modes.interferometer_state(math.pi, 0.0).amps
    A, B = written_terms()
    assert np.max(np.abs((plus - minus) / 2 - A)) < 1e-12
    assert np.max(np.abs((plus + minus) / 2 - B)) < 1e-12


@given(angles, angles)
def test_post_splitter_state_matches_kron_oracle(x, y):
    got = modes.interferometer_state(x, y).amps
    assert np.max(np.abs(got - kron_pipeline(x, y))) < 1e-12
    A, B = written_terms()
    assert np.max(np.abs(got - (cmath.exp(1j * (x + y)) * A + B))) < 1e-12


def test_splitter_inverse_recovers_state():
    s = modes.random_mode_state(np.random.default_rng(3))
    inv = modes.BS_UNITARY.conj().T
    for side in ("alice", "bob"):
        back = modes.apply_beamsplitter(modes.apply_beamsplitter(s, side), side, inv)
        assert np.max(np.abs(back.amps - s.amps)) < 1e-12


def test_splitter_preserves_norm_random_states():
    rng = np.random.default_rng(11)
    for _ in range(100):
        s = modes.random_mode_state(rng)
        for side in ("alice", "bob"):
            assert abs(modes.apply_beamsplitter(s, side).norm() - 1) < 1e-12


@pytest.mark.parametrize("xy, p14, p13", [(0.0, 0.0, 0.5), (math.pi, 0.5, 0.0)])
def test_coincidence_extremes(xy, p14, p13):
    t = modes.detection_probs(modes.interferometer_state(xy, 0.0))
    assert t.prob(1, 4) == pytest.approx(p14, abs=1e-12)
    assert t.prob(2, 3) == pytest.approx(p14, abs=1e-12)
    assert t.prob(1, 3) == pytest.approx(p13, abs=1e-12)
    assert t.prob(2, 4) == pytest.approx(p13, abs=1e-12)


def test_coincidence_law_grid():
    for x in np.linspace(-math.pi, math.pi, 10):
        for y in np.linspace(-math.pi, math.pi, 10):
            t = modes.detection_probs(modes.interferometer_state(x, y))
            c = math.cos(x + y)
            assert abs(t.prob(1, 4) - (1 - c) / 4) < 1e-12
            assert abs(t.prob(2, 3) - (1 - c) / 4) < 1e-12
            assert abs(t.prob(1, 3) - (1 + c) / 4) < 1e-12
            assert abs(t.prob(2, 4) - (1 + c) / 4) < 1e-12


@pytest.mark.parametrize("x, y, e", [(0, 0, 1.0), (0, math.pi / 2, 0.0), (math.pi / 4, math.pi / 4, 0.0),
                                     (math.pi / 8, math.pi / 8, 0.70710678)])
def test_correlator_values(x, y, e):
    assert modes.correlator(x, y) == pytest.approx(e, abs=1e-8)


def test_chsh_values():
    assert abs(modes.chsh(0, math.pi / 2, -math.pi / 4, math.pi / 4) - 2 * math.sqrt(2)) < 1e-9
    assert modes.chsh(0, 0, 0, 0) == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=300)
@given(angles, angles, angles, angles)
def test_tsirelson_bound(x, xp, y, yp):
    assert modes.chsh(x, xp, y, yp) <= modes.TSIRELSON + 1e-9


# -- coherent-state splitters ---------------------------------------------------


def overlap_oracle(b, g):
    # |<b|g>| = exp(-|b-g|^2/2) with phase exp(i Im(conj(b) g))
    return math.exp(-abs(b - g) ** 2 / 2) * cmath.exp(1j * (np.conj(b) * g).imag)


def test_coherent_overlap_formula():
    for b, g in [(2, 0), (1 + 1j, -0.5j), (0.3, 0.3)]:
        assert abs(modes.coherent_overlap(b, g) - overlap_oracle(b, g)) < 1e-14


def test_ebs_branches_for_alpha_two():
    out = modes.ebs_transform(modes.CoherentTwoMode.product(2, 0))
    br = {(a1, a2): w for w, a1, a2 in out.branches}
    assert set(br) == {(2, 0), (0, 2)}
    # the branch cross term is Re(i * real overlap) = 0, so no renormalisation
    assert abs(br[(2, 0)] - 1 / math.sqrt(2)) < 1e-12
    assert abs(br[(0, 2)] - 1j / math.sqrt(2)) < 1e-12


def test_ebs_second_input_branch():
    out = modes.ebs_transform(modes.CoherentTwoMode.product(0, 2))
    br = {(a1, a2): w for w, a1, a2 in out.branches}
    assert abs(br[(2, 0)] - 1j / math.sqrt(2)) < 1e-12
    assert abs(br[(0, 2)] - 1 / math.sqrt(2)) < 1e-12


def test_ebs_vacuum_is_invariant():
    vac = modes.CoherentTwoMode.product(0, 0)
    assert modes.fidelity(modes.ebs_transform(vac), vac) == pytest.approx(1.0, abs=1e-12)


def test_classical_splitter():
    out = modes.classical_bs_transform(modes.CoherentTwoMode.product(2, 0))
    assert abs(out.alpha1 - math.sqrt(2)) < 1e-15 and abs(out.alpha2 - 1j * math.sqrt(2)) < 1e-15
    z = modes.classical_bs_transform(modes.CoherentTwoMode.product(0, 0))
    assert z.alpha1 == 0 and z.alpha2 == 0


def test_ebs_differs_from_classical_splitter():
    a = 2.0
    ebs = modes.ebs_transform(modes.CoherentTwoMode.product(a, 0))
    cl = modes.CoherentTwoMode.product(a / math.sqrt(2), 1j * a / math.sqrt(2))
    # oracle: F = |(<a,0| - i<0,a|) |a/sqrt2, i a/sqrt2>|^2 / 2; the EBS output has unit norm
    b1, b2 = a / math.sqrt(2), 1j * a / math.sqrt(2)
    amp = overlap_oracle(a, b1) * overlap_oracle(0, b2) - 1j * overlap_oracle(0, b1) * overlap_oracle(a, b2)
    expected = abs(amp) ** 2 / 2
    assert expected == pytest.approx(0.04992877980968953, rel=1e-12)
    assert modes.fidelity(ebs, cl) == pytest.approx(expected, rel=1e-12)
    assert modes.fidelity(ebs, cl) < 1


@given(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_classical_splitter_preserves_photon_number(a1, a2):
    c = modes.CoherentTwoMode.product(a1, a2)
    out = modes.classical_bs_transform(c)
    assert out.mean_photon_number() == pytest.approx(c.mean_photon_number(), rel=1e-12, abs=1e-12)


def test_ebs_rejects_two_occupied_modes():
    with pytest.raises(ValueError):
        modes.ebs_transform(modes.CoherentTwoMode.product(1, 1))
