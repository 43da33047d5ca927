import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darklink.model import (
    DeviceParams,
    HamiltonianModel,
    bright_states,
    dark_state,
    eigen_splitting,
    mhz,
    mixing_angle,
    single_excitation_hamiltonian,
    to_mhz,
)
from darklink.schedules import (
    AdiabaticityWarning,
    Protocol,
    Schedule,
    adiabatic_couplings,
    adiabaticity_integral,
    coupling_area,
    dark_state_return_times,
    relay_couplings,
    swap_time,
)
from darklink.statespace import build_layout

G15 = mhz(15.0)


def test_unit_conversion():
    assert math.isclose(mhz(1.0), 2 * math.pi * 1e-3)
    assert math.isclose(to_mhz(mhz(84.0)), 84.0)


def test_default_device_values():
    dev = DeviceParams.default()
    assert dev.q1.t1_ns == 11500.0 and dev.q2.t1_ns == 9100.0
    assert dev.q1.t2_ramsey_ns == 1110.0 and dev.q2.t2_echo_ns == 3540.0
    assert math.isclose(dev.channel.fsr, mhz(84.0))
    assert dev.channel.t1r_int_ns == 3410.0
    assert math.isclose(dev.channel.stub_inductance_nh, 0.6432)


def test_device_rejects_missing_section():
    with pytest.raises(ValueError):
        DeviceParams.from_mapping({"qubit": {}})


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_three_level_spectrum(g1, g2):
    if g1 == g2 == 0:
        return
    gbar = math.hypot(g1, g2)
    eig = eigen_splitting(g1, g2)
    np.testing.assert_allclose(eig.energies, [-gbar, 0.0, gbar], atol=1e-12)
    h = single_excitation_hamiltonian(g1, g2)
    np.testing.assert_allclose(h @ eig.dark, 0, atol=1e-12)
    # dark state has no photon amplitude
    assert abs(eig.dark[1]) < 1e-15
    bp, bm = bright_states(mixing_angle(g1, g2))
    np.testing.assert_allclose(h @ bp, gbar * bp, atol=1e-12)
    np.testing.assert_allclose(h @ bm, -gbar * bm, atol=1e-12)


def test_dark_state_endpoints():
    np.testing.assert_allclose(dark_state(0.0), [1, 0, 0])
    np.testing.assert_allclose(dark_state(math.pi / 2), [0, 0, -1], atol=1e-16)
    with pytest.raises(ValueError):
        mixing_angle(-1.0, 1.0)


def test_adiabatic_schedule_shape():
    assert adiabatic_couplings(G15, 132.0, 0.0) == (0.0, G15)
    g1, g2 = adiabatic_couplings(G15, 132.0, 132.0)
    assert math.isclose(g1, G15) and abs(g2) < 1e-15
    for t in np.linspace(0, 132, 17):
        assert math.isclose(math.hypot(*adiabatic_couplings(G15, 132.0, t)), G15)
    with pytest.raises(ValueError):
        adiabatic_couplings(G15, 132.0, 140.0)


def test_half_schedule_stops_at_equal_couplings():
    s = Schedule(Protocol.ADIABATIC_HALF, G15, 132.0)
    assert s.duration == 66.0
    g1, g2 = s.couplings(66.0)
    assert math.isclose(g1, g2)
    assert math.isclose(s.max_g1(), G15 / math.sqrt(2))


def test_relay_schedule():
    g = mhz(5.0)
    tau = swap_time(g)
    assert math.isclose(tau, 50.0)
    s = Schedule(Protocol.RELAY_TRANSFER, G15, 132.0, relay_g=g)
    assert math.isclose(s.duration, 100.0) and s.breakpoints == (tau,)
    assert s.couplings(tau) == (0.0, g)
    assert s.couplings(tau, left=True) == (g, 0.0)
    h = Schedule(Protocol.RELAY_HALF, G15, 132.0, relay_g=g)
    assert math.isclose(h.duration, 75.0) and h.breakpoints == (tau / 2,)
    assert relay_couplings(g, 10.0, half=True) == (g, 0.0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(Protocol.ADIABATIC_TRANSFER, 0.0, 132.0)
    with pytest.raises(ValueError):
        Schedule(Protocol.RELAY_TRANSFER, G15, 132.0, relay_g=0.0)
    with pytest.raises(ValueError):
        Schedule("bogus", G15, 132.0)


def test_return_times_oracle():
    # (2 pi / gbar) sqrt(n^2 - 1/16) with gbar = 2 pi * 15 MHz
    t = dark_state_return_times(G15, 2)
    assert math.isclose(t[0], math.sqrt(15 / 16) / 0.015, rel_tol=1e-12)
    assert math.isclose(t[1], math.sqrt(63 / 16) / 0.015, rel_tol=1e-12)
    with pytest.raises(ValueError):
        dark_state_return_times(G15, 0)


def test_adiabaticity_integral_matches_quadrature():
    s = Schedule(Protocol.ADIABATIC_TRANSFER, G15, 132.0)
    area = adiabaticity_integral(s)
    quad = coupling_area(lambda t: s.couplings(t)[0], lambda t: s.couplings(t)[1], 0.0, 132.0)
    assert math.isclose(area, quad, rel_tol=1e-10)
    assert math.isclose(area / math.pi, 3.96, rel_tol=1e-12)


def test_short_schedule_warns():
    with pytest.warns(AdiabaticityWarning):
        adiabaticity_integral(Schedule(Protocol.ADIABATIC_TRANSFER, G15, 20.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        adiabaticity_integral(Schedule(Protocol.ADIABATIC_TRANSFER, G15, 132.0))
    with pytest.raises(ValueError):
        adiabaticity_integral(Schedule(Protocol.RELAY_TRANSFER, G15, 132.0, relay_g=mhz(5)))


@pytest.mark.parametrize("t", [0.0, 33.0, 100.0, 132.0])
def test_hamiltonian_hermitian_and_conserves_excitations(t):
    lay = build_layout(2, single_excitation=True)
    m = HamiltonianModel(lay, Schedule(Protocol.ADIABATIC_TRANSFER, G15, 132.0), mhz(84.0))
    h = m.hamiltonian(t)
    np.testing.assert_allclose(h, h.conj().T, atol=0)
    n = m.excitation_number()
    np.testing.assert_allclose(h @ n - n @ h, 0, atol=1e-14)


def test_odd_modes_couple_with_opposite_sign_to_q2():
    lay = build_layout(1, single_excitation=True)
    m = HamiltonianModel(lay, Schedule(Protocol.ADIABATIC_TRANSFER, G15, 132.0), mhz(84.0))
    q2 = lay.ket([lay.q2])
    amps = {n: lay.ket([lay.mode(n)]) @ m.coupling_q2 @ q2 for n in lay.mode_numbers}
    assert amps == {-1: -1, 0: 1, 1: -1}
    np.testing.assert_allclose(m.mode_detunings, [-mhz(84), 0, mhz(84)])


def test_half_schedule_release_ramp():
    s = Schedule(Protocol.ADIABATIC_HALF, G15, 132.0, release=20.0)
    assert s.duration == 86.0 and s.breakpoints == (66.0,)
    g1, g2 = s.couplings(66.0)
    assert math.isclose(g1, G15 / math.sqrt(2)) and math.isclose(g1, g2)
    mid1, mid2 = s.couplings(76.0)
    assert math.isclose(mid1, 0.5 * g1) and math.isclose(mid1, mid2)
    assert s.couplings(86.0) == (0.0, 0.0)
    # the release keeps the coupling ratio, so the mixing angle stays at pi/4
    for t in np.linspace(66.0, 85.0, 7):
        a, b = s.couplings(t)
        assert math.isclose(mixing_angle(a, b), math.pi / 4)
    area = adiabaticity_integral(s)
    assert math.isclose(area, G15 * (66.0 + 10.0), rel_tol=1e-12)
    quad = coupling_area(lambda t: s.couplings(t)[0], lambda t: s.couplings(t)[1], 0.0, 86.0)
    assert math.isclose(area, quad, rel_tol=1e-9)


def test_release_only_for_adiabatic_half():
    with pytest.raises(ValueError):
        Schedule(Protocol.ADIABATIC_TRANSFER, G15, 132.0, release=10.0)
    with pytest.raises(ValueError):
        Schedule(Protocol.ADIABATIC_HALF, G15, 132.0, release=-1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 132.0))
def test_hamiltonian_hermitian_at_random_times(t):
    lay = build_layout(2, single_excitation=True)
    m = HamiltonianModel(lay, ADIABATIC_SCHEDULE, mhz(84.0), mhz(1.0), -mhz(2.0))
    h = m.hamiltonian(t)
    scale = np.linalg.norm(h)
    assert np.abs(h - h.conj().T).max() < 1e-12 * scale
    n = m.excitation_number()
    assert np.linalg.norm(h @ n - n @ h) < 1e-12 * scale


def test_single_mode_model_reduces_to_three_level_hamiltonian():
    lay = build_layout(0, single_excitation=True)
    m = HamiltonianModel(lay, ADIABATIC_SCHEDULE, mhz(84.0))
    basis = [lay.index_of([lay.q1]), lay.index_of([lay.mode(0)]), lay.index_of([lay.q2])]
    for t in (0.0, 40.0, 100.0, 132.0):
        h = m.hamiltonian(t)[np.ix_(basis, basis)]
        np.testing.assert_allclose(h, single_excitation_hamiltonian(*ADIABATIC_SCHEDULE.couplings(t)), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1.0, 500.0), st.floats(0.0, 1.0))
def test_parallel_adiabatic_passage_keeps_gbar(gbar, t_f, frac):
    g1, g2 = adiabatic_couplings(gbar, t_f, frac * t_f)
    assert abs(g1 * g1 + g2 * g2 - gbar * gbar) <= 1e-12 * gbar * gbar


ADIABATIC_SCHEDULE = Schedule(Protocol.ADIABATIC_TRANSFER, G15, 132.0)
