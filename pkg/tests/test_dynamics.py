import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mwion import dynamics as dyn
from mwion.errors import CutoffError, InvariantError

MASS = 4.1489e-26
RATE = 2 * math.pi * 1.88e3
SINGLE = dyn.MotionalMode(6.5e6, MASS)
ROCKING = dyn.MotionalMode.rocking(6.8e6, MASS)


class TestThermal:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0))
    def test_normalized_with_mean_nbar(self, nbar):
        state = dyn.ThermalState.thermal(nbar)
        assert state.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert state.nbar == pytest.approx(nbar, abs=1e-4 * max(nbar, 1))

    def test_cutoff_escalates(self):
        assert dyn.choose_cutoff(0.5) == dyn.DEFAULT_CUTOFF
        assert dyn.choose_cutoff(2.2) == dyn.ESCALATED_CUTOFF

    def test_cutoff_exhausted(self):
        with pytest.raises(CutoffError):
            dyn.choose_cutoff(20.0)

    def test_negative_nbar_rejected(self):
        with pytest.raises(ValueError):
            dyn.ThermalState.thermal(-0.1)

    def test_unnormalized_rejected(self):
        with pytest.raises(InvariantError):
            dyn.ThermalState(np.array([0.5, 0.2]))


class TestCarrier:
    def test_resonant_pi_pulse(self):
        p_down, p_up = dyn.carrier_rabi(1e6, 0.0, math.pi / 1e6)
        assert p_up == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3e6, 3e6), st.floats(0.0, 1e-5))
    def test_generalized_rabi_formula(self, detuning, t):
        omega = 1e6
        w = math.hypot(omega, detuning)
        expect = omega**2 / w**2 * math.sin(w * t / 2) ** 2
        assert dyn.carrier_rabi(omega, detuning, t)[1] == pytest.approx(expect, abs=1e-12)

    def test_negative_duration(self):
        with pytest.raises(ValueError):
            dyn.carrier_rabi(1.0, 0.0, -1.0)


class TestSideband:
    @pytest.mark.parametrize("mode", [SINGLE, ROCKING])
    def test_block_propagator_matches_expm(self, mode):
        cutoff = 12
        H = dyn.sideband_hamiltonian(mode, RATE, 2 * math.pi * 700.0, cutoff)
        blocks = dyn._block_structure(mode.n_ions, cutoff)
        U = dyn.block_propagator(H, 300e-6, blocks)
        assert np.allclose(U, expm(-1j * H * 300e-6), atol=1e-10)

    def test_blue_pi_pulse_from_ground(self):
        tau = math.pi / RATE
        scan = dyn.sideband_scan(SINGLE, "down", dyn.ThermalState.fock(0), RATE, tau, [0.0])
        assert scan.signal[0] == pytest.approx(0.0, abs=1e-12)
        assert scan.response[0] == pytest.approx(1.0, abs=1e-12)

    def test_red_pulse_from_ground_does_nothing(self):
        scan = dyn.sideband_scan(SINGLE, "up", dyn.ThermalState.fock(0), RATE, 300e-6, [-2e3, 0.0, 2e3])
        assert np.allclose(scan.response, 0.0, atol=1e-14)

    def test_fock_state_rabi_frequency(self):
        # motion-subtracting from n couples with sqrt(n)
        tau = math.pi / (RATE * math.sqrt(3))
        scan = dyn.sideband_scan(SINGLE, "up", dyn.ThermalState.fock(3), RATE, tau, [0.0])
        assert scan.response[0] == pytest.approx(1.0, abs=1e-12)

    def test_propagation_keeps_density_matrix_valid(self):
        cutoff = 10
        rho_spin = np.diag([0.0, 0.0, 0.0, 1.0])
        state = dyn.SpinMotionState.product(rho_spin, dyn.ThermalState.thermal(0.3, cutoff), 2)
        H = dyn.sideband_hamiltonian(ROCKING.with_cutoff(cutoff), RATE, 0.0, cutoff)
        out = dyn.propagate(state, H, 200e-6)
        out.validate()

    def test_sampling_is_seeded(self):
        motion = dyn.ThermalState.thermal(1.0)
        offsets = np.linspace(-4e3, 4e3, 5)
        a = dyn.sample_scan(ROCKING, "up", motion, RATE, 250e-6, offsets, 100, np.random.default_rng(4))
        b = dyn.sample_scan(ROCKING, "up", motion, RATE, 250e-6, offsets, 100, np.random.default_rng(4))
        assert np.array_equal(a.signal, b.signal) and np.array_equal(a.sigma, b.sigma)
        assert np.all(a.sigma >= math.sqrt(1 / 100) / math.sqrt(100) - 1e-15)

    def test_fit_recovers_noiseless_nbar(self):
        offsets = np.linspace(-6e3, 6e3, 9)
        motion = dyn.ThermalState.thermal(1.3, 60)
        red = dyn.sideband_scan(ROCKING, "up", motion, RATE, 250e-6, offsets)
        blue = dyn.sideband_scan(ROCKING, "down", motion, RATE, 250e-6, offsets)
        red.sigma[:] = blue.sigma[:] = 0.01
        fit = dyn.fit_nbar(red, blue, ROCKING, 250e-6, 1.1 * RATE)
        assert fit.nbar == pytest.approx(1.3, abs=1e-5)
        assert fit.sideband_rate == pytest.approx(RATE, rel=1e-6)

    def test_fit_requires_matching_offsets(self):
        motion = dyn.ThermalState.thermal(0.5)
        a = dyn.sideband_scan(SINGLE, "up", motion, RATE, 1e-4, [0.0, 1.0])
        b = dyn.sideband_scan(SINGLE, "down", motion, RATE, 1e-4, [0.0, 2.0])
        with pytest.raises(ValueError):
            dyn.fit_nbar(a, b, SINGLE, 1e-4, RATE)


class TestHeatingAndCooling:
    def test_generator_conserves_probability(self):
        G = dyn.heating_generator(20, 3.0)
        assert np.allclose(G.sum(axis=0), 0.0)

    def test_heating_from_ground(self):
        out = dyn.apply_heating(dyn.ThermalState.fock(0, 40), 100.0, 5e-3)
        assert out.nbar == pytest.approx(0.5, rel=1e-6)
        # a heated ground state stays thermal
        assert np.allclose(out.probs[:20], dyn.thermal_probs(0.5, 19), atol=1e-9)

    def test_recoil_default(self):
        assert dyn.recoil_quanta_per_cycle() == pytest.approx(0.078, abs=0.002)

    def test_zero_cycles_is_identity(self):
        start = dyn.ThermalState.thermal(2.2, 60)
        res = dyn.sideband_cool(ROCKING, start, 0, 250e-6, RATE, 0.97, 0.08)
        assert res.nbar_history == [start.nbar]

    def test_ideal_cooling_is_monotone(self):
        res = dyn.sideband_cool(ROCKING, dyn.ThermalState.thermal(2.2, 60), 6, 250e-6, RATE, 1.0, 0.0)
        assert all(b < a for a, b in zip(res.nbar_history, res.nbar_history[1:]))

    def test_recoil_raises_final_nbar(self):
        start = dyn.ThermalState.thermal(2.2, 60)
        cold = dyn.sideband_cool(ROCKING, start, 4, 250e-6, RATE, 0.97, 0.0).nbar_history[-1]
        warm = dyn.sideband_cool(ROCKING, start, 4, 250e-6, RATE, 0.97, 0.2).nbar_history[-1]
        assert warm > cold

    def test_invalid_repump(self):
        with pytest.raises(ValueError):
            dyn.sideband_cool(ROCKING, dyn.ThermalState.thermal(1.0), 1, 1e-4, RATE, 1.5, 0.0)
