import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwion import fluor as fl
from mwion.errors import RankDeficiencyError
from mwion.gate import PSI_TARGET, state_fidelity

MIX = fl.PoissonMixture()
PHASES = np.linspace(0, math.pi, 16, endpoint=False)


def random_state(seed):
    """Random X-shaped state: populations plus the uu/dd and ud/du coherences."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4))
    rho = np.diag(p).astype(complex)
    for i, j in ((0, 3), (1, 2)):
        c = rng.uniform(0, 1) * math.sqrt(p[i] * p[j]) * np.exp(2j * math.pi * rng.uniform())
        rho[i, j], rho[j, i] = c, np.conj(c)
    return rho


def exact_scan(rho, phases=PHASES):
    pops = np.array([fl.rotated_populations(rho, p) for p in phases])
    covs = np.tile(np.eye(3) * 1e-4, (len(phases), 1, 1))
    return pops, covs


class TestModel:
    def test_reference_probs(self):
        assert fl.ramsey_reference_probs(0.0) == pytest.approx((1, 0, 0))
        assert fl.ramsey_reference_probs(math.pi) == pytest.approx((0, 0, 1))
        assert sum(fl.ramsey_reference_probs(1.1)) == pytest.approx(1.0)

    def test_invalid_mixture(self):
        with pytest.raises(ValueError):
            fl.PoissonMixture(0.3, 11.0, np.full((3, 3), 0.5))
        with pytest.raises(ValueError):
            fl.PoissonMixture(-0.3, 11.0)

    def test_simulation_is_seeded_and_has_right_mean(self):
        a = fl.simulate_detection([0.2, 0.5, 0.3], MIX, 20000, seed=5)
        b = fl.simulate_detection([0.2, 0.5, 0.3], MIX, 20000, seed=5)
        assert np.array_equal(a.counts, b.counts)
        expect = np.dot([0.2, 0.5, 0.3], MIX.means)
        assert a.mean == pytest.approx(expect, rel=0.02)

    def test_histogram_requires_integers(self):
        with pytest.raises(ValueError):
            fl.CountHistogram([1.5, 2.0])
        assert fl.CountHistogram([1.5, 2.0], expected=True).total_shots == 3.5

    def test_pooled_edges(self):
        assert fl.pooled_edges(np.array([10, 1, 1, 1, 1, 1, 10, 0.5]), 5) == [0, 1, 6]


class TestDecomposition:
    @pytest.mark.parametrize("pops", [(0.2, 0.5, 0.3), (1.0, 0.0, 0.0), (0.0, 0.3, 0.7)])
    def test_recovers_expected_populations(self, pops):
        h = fl.expected_histogram(pops, MIX, 300)
        d = fl.decompose_populations(h, MIX)
        assert np.allclose(d.populations, pops, atol=1e-6)
        assert d.populations.sum() == pytest.approx(1.0)

    def test_covariance_respects_simplex(self):
        h = fl.simulate_detection([0.3, 0.4, 0.3], MIX, 300, seed=2)
        d = fl.decompose_populations(h, MIX)
        assert np.allclose(d.covariance.sum(axis=1), 0.0, atol=1e-12)
        assert np.all(d.sigma > 0)

    def test_populations_stay_on_simplex(self):
        for seed in range(20):
            h = fl.simulate_detection([0.0, 0.02, 0.98], MIX, 100, seed=seed)
            p = fl.decompose_populations(h, MIX).populations
            assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)

    def test_model_covariance_matches_scatter(self):
        pops = np.array([0.2, 0.5, 0.3])
        est = np.array([fl.decompose_populations(fl.simulate_detection(pops, MIX, 300, seed=s), MIX).populations
                        for s in range(400)])
        model = fl.population_covariance(pops, MIX, 300)
        assert np.allclose(np.diag(np.cov(est.T)), np.diag(model), rtol=0.25)

    def test_poor_separation_warns(self):
        close = fl.PoissonMixture(3.0, 1.0)
        h = fl.simulate_detection([0.3, 0.4, 0.3], close, 300, seed=1)
        with pytest.warns(RuntimeWarning):
            d = fl.decompose_populations(h, close)
        assert d.warning


class TestReferenceFit:
    def test_noiseless_recovery(self):
        thetas = np.linspace(0, math.pi, 12)
        truth = fl.PoissonMixture(0.4, 10.0)
        hs = [fl.expected_histogram(fl.reference_class_probs(t), truth, 300) for t in thetas]
        fit = fl.fit_reference(hs, thetas)
        assert fit.mixture.mean_dark == pytest.approx(0.4, rel=1e-5)
        assert fit.mixture.mean_one_bright == pytest.approx(10.0, rel=1e-6)
        assert np.allclose(fit.mixture.class_weights, np.eye(3), atol=1e-4)
        assert fit.chi2_reduced < 1e-6

    def test_leaky_classes_recovered(self):
        w = np.array([[0.95, 0.05, 0.0], [0.02, 0.96, 0.02], [0.0, 0.04, 0.96]])
        truth = fl.PoissonMixture(0.3, 11.0, w)
        thetas = np.linspace(0, math.pi, 12)
        hs = [fl.expected_histogram(fl.reference_class_probs(t), truth, 3000) for t in thetas]
        fit = fl.fit_reference(hs, thetas)
        assert np.allclose(fit.mixture.class_weights, w, atol=1e-4)

    def test_needs_theta_coverage(self):
        thetas = [0.1, 0.2, 0.3]
        hs = [fl.expected_histogram(fl.reference_class_probs(t), MIX, 300) for t in thetas]
        with pytest.raises(RankDeficiencyError):
            fl.fit_reference(hs, thetas)


class TestParity:
    def test_rotation_unitary(self):
        R = fl.analysis_rotation(0.7)
        assert np.allclose(R @ R.conj().T, np.eye(4))

    def test_target_state_gives_full_contrast(self):
        rho = np.outer(PSI_TARGET, PSI_TARGET.conj())
        pops, covs = exact_scan(rho)
        res = fl.fit_parity_scan(PHASES, pops, covs, fl.bright_populations(rho), np.eye(3) * 1e-4)
        assert res.amplitude == pytest.approx(1.0, abs=1e-8)
        assert res.fidelity == pytest.approx(1.0, abs=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_amplitude_is_twice_coherence(self, seed):
        rho = random_state(seed)
        pops, covs = exact_scan(rho)
        res = fl.fit_parity_scan(PHASES, pops, covs, fl.bright_populations(rho), np.eye(3) * 1e-4)
        assert res.amplitude == pytest.approx(2 * abs(rho[0, 3]), abs=1e-7)
        assert res.fidelity == pytest.approx(state_fidelity(rho), abs=1e-7)

    def test_channel_constraints(self):
        rho = random_state(7)
        pops, covs = exact_scan(rho)
        res = fl.fit_parity_scan(PHASES, pops, covs, fl.bright_populations(rho), np.eye(3) * 1e-4)
        assert res.channel_amplitudes.sum() == pytest.approx(0.0, abs=1e-12)
        assert res.channel_offsets.sum() == pytest.approx(1.0, abs=1e-12)
        assert res.amplitude >= 0

    def test_too_few_phases(self):
        rho = random_state(1)
        pops, covs = exact_scan(rho, PHASES[:6])
        with pytest.raises(RankDeficiencyError):
            fl.fit_parity_scan(PHASES[:6], pops, covs, pops[0], np.eye(3))

    def test_phases_must_span_period(self):
        phases = np.linspace(0, 1.0, 10)
        pops, covs = exact_scan(random_state(1), phases)
        with pytest.raises(RankDeficiencyError):
            fl.fit_parity_scan(phases, pops, covs, pops[0], np.eye(3))


class TestPipeline:
    def test_calibration_uncertainty_widens_error(self):
        rho = np.zeros((4, 4), complex)
        rho[0, 0] = rho[3, 3] = 0.45
        rho[1, 1] = rho[2, 2] = 0.05
        rho[0, 3], rho[3, 0] = -0.4j, 0.4j
        thetas = np.linspace(0, math.pi, 12)
        refs = [fl.simulate_detection(fl.reference_class_probs(t), MIX, 300, seed=k) for k, t in enumerate(thetas)]
        cal = fl.fit_reference(refs, thetas)
        scan = [fl.simulate_detection(fl.rotated_populations(rho, p), MIX, 300, seed=100 + k, phase=p)
                for k, p in enumerate(PHASES)]
        direct = fl.simulate_detection(fl.bright_populations(rho), MIX, 300, seed=99)
        bare, decs, d = fl.analyze_parity_scan(scan, direct, cal.mixture)
        full, _, _ = fl.analyze_parity_scan(scan, direct, cal.mixture, cal)
        assert len(decs) == len(PHASES) and d.populations.sum() == pytest.approx(1.0)
        assert full.fidelity == bare.fidelity
        assert full.fidelity_err > bare.fidelity_err
        assert abs(full.fidelity - state_fidelity(rho)) < 4 * full.fidelity_err

    def test_model_weights_match_data_weights_without_noise(self):
        rho = random_state(3)
        pops, covs = exact_scan(rho)
        direct = fl.bright_populations(rho)
        a = fl.fit_parity_scan(PHASES, pops, covs, direct, np.eye(3) * 1e-4)
        b = fl.fit_parity_scan(PHASES, pops, covs, direct, np.eye(3) * 1e-4,
                               covariance_model=lambda q: fl.population_covariance(q, MIX, 300))
        assert b.amplitude == pytest.approx(a.amplitude, abs=1e-8)
