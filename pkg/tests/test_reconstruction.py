import numpy as np
import pytest

from conftest import random_two_qubit_spec
from localrecon.dynamics import DiscretizedSystem, Superoperator
from localrecon.locality import NeighborhoodStructure, build_output_map
from localrecon.measurement import MeasurementPlan, MeasurementRecord, exact_outputs, run_experiment
from localrecon.observability import analyze
from localrecon.operators import is_density, random_density, random_pure, trace_distance
from localrecon.reconstruction import (
    ReconstructionError,
    clip_to_density,
    gramian_reconstruct,
    max_entropy_reconstruct,
    pullback_constraints,
    relax_constraints,
)

SINGLES = NeighborhoodStructure(2, [[1], [2]])
FULL2 = NeighborhoodStructure(2, [[1, 2]])


def exact_record(sys, rho0, k_max, indices=None):
    return run_experiment(sys, rho0, MeasurementPlan(k_max, None, observable_subset=indices))


@pytest.fixture(scope="module")
def small_system():
    spec = random_two_qubit_spec(np.random.default_rng(21))
    sys = DiscretizedSystem.from_spec(spec, build_output_map(SINGLES, [2, 2]), dt=0.8)
    assert analyze(sys).is_observable
    return sys


def test_pullback_matches_heisenberg_picture(small_system, rng):
    rho = random_density(4, rng)
    A = pullback_constraints(small_system, 3)
    rec = exact_record(small_system, rho, 3)
    np.testing.assert_allclose(np.einsum("jab,ba->j", A, rho).real, rec.means.reshape(-1), atol=1e-12)


class TestGramian:
    def test_case2_pure_state(self, case2_system, rng):
        rho0 = random_pure(16, rng)
        res = gramian_reconstruct(case2_system, exact_outputs(case2_system, rho0, 6))
        assert trace_distance(res.rho0_hat, rho0) < 1e-8
        assert res.method == "gramian" and np.isfinite(res.condition)

    def test_identity_dynamics_full_output(self, rng):
        om = build_output_map(FULL2, [2, 2])
        sys = DiscretizedSystem(Superoperator(np.eye(16), "step"), om)
        rho0 = random_density(4, rng)
        res = gramian_reconstruct(sys, exact_outputs(sys, rho0, 0))
        np.testing.assert_allclose(res.rho0_hat, rho0, atol=1e-12)

    def test_maximally_mixed_fixed_point(self, case2_system):
        res = gramian_reconstruct(case2_system, exact_outputs(case2_system, np.eye(16) / 16, 6))
        np.testing.assert_allclose(res.rho0_hat, np.eye(16) / 16, atol=1e-9)

    def test_inverse_on_random_states(self, small_system, rng):
        for _ in range(50):
            rho0 = random_density(4, rng, rank=int(rng.integers(1, 5)))
            res = gramian_reconstruct(small_system, exact_record(small_system, rho0, 6))
            assert trace_distance(res.rho0_hat, rho0) < 1e-8

    def test_singular_for_unobservable(self, case1_system):
        with pytest.raises(ReconstructionError, match="gramian singular"):
            gramian_reconstruct(case1_system, exact_outputs(case1_system, np.eye(16) / 16, 10))

    def test_insufficient_horizon(self, case2_system):
        with pytest.raises(ReconstructionError, match="insufficient horizon"):
            gramian_reconstruct(case2_system, exact_outputs(case2_system, np.eye(16) / 16, 2))


class TestMaxEntropy:
    def test_trace_only(self, case2_system):
        res = max_entropy_reconstruct(case2_system, None)
        np.testing.assert_allclose(res.rho0_hat, np.eye(16) / 16, atol=1e-12)
        assert res.entropy == pytest.approx(np.log(16), abs=1e-10)
        assert res.relaxation_level == 0.0

    def test_noiseless_observable_recovers_state(self, small_system, rng):
        rho0 = random_density(4, rng)
        res = max_entropy_reconstruct(small_system, exact_record(small_system, rho0, 6))
        assert res.converged and res.relaxation_level == 0.0
        assert trace_distance(res.rho0_hat, rho0) < 1e-6

    def test_prior_without_constraints(self, rng):
        sys = DiscretizedSystem(Superoperator(np.eye(16), "step"), build_output_map(SINGLES, [2, 2]))
        sigma = random_density(4, rng)
        res = max_entropy_reconstruct(sys, None, prior=sigma)
        assert res.method == "relative_entropy"
        np.testing.assert_allclose(res.rho0_hat, sigma, atol=1e-10)
        assert res.entropy == pytest.approx(0.0, abs=1e-10)

    def test_prior_must_be_full_rank(self, small_system):
        with pytest.raises(ValueError, match="full rank"):
            max_entropy_reconstruct(small_system, None, prior=random_pure(4, np.random.default_rng(0)))

    def test_monotone_in_constraints(self, case1_system, rng):
        rho0 = 0.5 * random_density(16, rng) + 0.5 * np.eye(16) / 16
        entropies = [max_entropy_reconstruct(case1_system, exact_record(case1_system, rho0, k)).entropy
                     for k in range(3)]
        assert all(b <= a + 1e-8 for a, b in zip(entropies, entropies[1:]))

    def test_unobservable_indistinguishable(self, case1_system, rng):
        rho0 = 0.5 * random_density(16, rng) + 0.5 * np.eye(16) / 16
        B = analyze(case1_system).unobservable_basis[0]
        a = max_entropy_reconstruct(case1_system, exact_record(case1_system, rho0, 7))
        b = max_entropy_reconstruct(case1_system, exact_record(case1_system, rho0 + 0.01 * B, 7))
        assert a.converged and a.max_residual < 1e-8
        assert trace_distance(a.rho0_hat, b.rho0_hat) < 1e-8

    def test_noisy_output_is_a_state(self, small_system, rng):
        rho0 = random_pure(4, rng)
        rec = run_experiment(small_system, rho0, MeasurementPlan(4, 100), seed=2)
        res = max_entropy_reconstruct(small_system, rec)
        assert is_density(res.rho0_hat, atol=1e-8)
        assert res.relaxation_level >= res.epsilon_star > 0
        assert res.max_residual <= res.relaxation_level + 1e-6

    def test_iteration_cap_keeps_iterate(self, small_system, rng):
        rec = exact_record(small_system, random_density(4, rng), 6)
        res = max_entropy_reconstruct(small_system, rec, max_iter=1)
        assert not res.converged
        assert is_density(res.rho0_hat)


class TestRelaxation:
    @pytest.fixture
    def full_system(self):
        om = build_output_map(FULL2, [2, 2])
        return DiscretizedSystem(Superoperator(np.eye(16), "step"), om)

    def test_consistent_record(self, small_system, rng):
        rc = relax_constraints(small_system, exact_record(small_system, random_density(4, rng), 3))
        assert rc.epsilon == 0.0

    def test_empty_record(self, small_system):
        rec = MeasurementRecord(MeasurementPlan(0, None), None, [], np.zeros((1, 0)), np.zeros((1, 0), dtype=int))
        assert relax_constraints(small_system, rec).epsilon == 0.0

    def test_perturbed_identity_mean(self, full_system, rng):
        # tr(I/2 ρ) = 1/2 for every state, so shifting that mean by δ forces ε* = δ exactly
        rec = exact_record(full_system, random_density(4, rng), 0)
        assert full_system.output.labels[0] == "II"
        rec.means[0, 0] += 0.05
        rc = relax_constraints(full_system, rec)
        assert rc.epsilon_star == pytest.approx(0.05, abs=1e-6)
        assert 0 < rc.epsilon <= 0.1

    def test_schedule_exhausted(self, full_system, rng):
        rec = exact_record(full_system, random_density(4, rng), 0)
        rec.means[0, 0] += 0.5
        with pytest.raises(ReconstructionError, match=r"worst violated: \(k=0, i=0"):
            relax_constraints(full_system, rec)


def test_clip_to_density():
    rho, clipped = clip_to_density(np.diag([0.7, 0.4, -0.1]).astype(complex))
    assert clipped == pytest.approx(0.1)
    assert is_density(rho)
    np.testing.assert_allclose(rho, np.diag([7 / 11, 4 / 11, 0]), atol=1e-12)
