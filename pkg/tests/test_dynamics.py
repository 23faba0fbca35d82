import numpy as np
import pytest
import scipy.linalg

from conftest import random_two_qubit_spec
from localrecon.dynamics import (
    DiscretizedSystem,
    LindbladSpec,
    LocalityError,
    Superoperator,
    aliasing_check,
    build_generator,
    check_cptp,
    choi_matrix,
    continuous_observability_span,
    discretize,
    expm_via_eig,
    lindbladian,
    trace_annihilation_error,
)
from localrecon.locality import NeighborhoodStructure, OutputMap, build_output_map
from localrecon.observability import analyze
from localrecon.operators import partial_trace, pauli_basis, random_density, tensor

ONE = NeighborhoodStructure(1, [[1]])


def test_commutator_spectrum_single_qubit():
    spec = LindbladSpec.from_expressions([2], ONE, "Z1")
    w = np.linalg.eigvals(build_generator(spec).matrix)
    np.testing.assert_allclose(sorted(w, key=lambda z: (z.imag, z.real)), [-2j, 0, 0, 2j], atol=1e-12)


def test_zero_spec_gives_identity_step():
    spec = LindbladSpec.from_expressions([2, 2], NeighborhoodStructure(2, [[1, 2]]))
    L = build_generator(spec)
    np.testing.assert_array_equal(L.matrix, 0)
    np.testing.assert_allclose(discretize(L, 1.0).matrix, np.eye(16))


@pytest.mark.parametrize("gamma", [0.1, 0.7])
def test_dephasing_rate(gamma):
    spec = LindbladSpec.from_expressions([2], ONE, None, ["g*Z1"], {"g": np.sqrt(gamma)})
    L = build_generator(spec)
    rho0 = np.full((2, 2), 0.5, dtype=complex)
    for t in (0.3, 1.0, 2.5):
        rho = discretize(L, t).apply(rho0)
        assert rho[0, 1] == pytest.approx(0.5 * np.exp(-2 * gamma * t), abs=1e-12)
        assert rho[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_generator_annihilates_trace(rng):
    L = build_generator(random_two_qubit_spec(rng))
    assert trace_annihilation_error(L.matrix) < 1e-12


def test_semigroup_property(rng):
    for _ in range(3):
        L = build_generator(random_two_qubit_spec(rng))
        t1, t2 = rng.uniform(0.1, 1.0, size=2)
        E1, E2, E12 = (discretize(L, t).matrix for t in (t1, t2, t1 + t2))
        np.testing.assert_allclose(E1 @ E2, E12, atol=1e-8)


def test_hamiltonian_step_is_unitary_conjugation(rng):
    spec = random_two_qubit_spec(rng, noise=False)
    H = spec.hamiltonian_matrix()
    dt = 0.37
    E = discretize(build_generator(spec), dt).matrix
    U = scipy.linalg.expm(-1j * H * dt)
    np.testing.assert_allclose(E, np.kron(U.conj(), U), atol=1e-12)
    np.testing.assert_allclose(np.abs(np.linalg.eigvals(E)), 1, atol=1e-10)


def test_expm_cross_check(rng):
    L = build_generator(random_two_qubit_spec(rng))
    E_eig, cond = expm_via_eig(L.matrix * 0.5)
    assert cond < 1e8
    np.testing.assert_allclose(discretize(L, 0.5).matrix, E_eig, atol=1e-8)


def test_cptp_on_random_generators(rng):
    for _ in range(5):
        E = discretize(build_generator(random_two_qubit_spec(rng)), rng.uniform(0.1, 3.0))
        rep = check_cptp(E)
        assert rep["ok"], rep


def test_choi_of_identity_is_unnormalized_bell_projector():
    J = choi_matrix(np.eye(4))
    phi = np.array([1, 0, 0, 1])
    np.testing.assert_allclose(J, np.outer(phi, phi))


def test_locality_violation(chain):
    with pytest.raises(LocalityError, match="locality violation"):
        LindbladSpec.from_expressions([2] * 4, chain, "X1*X3")
    with pytest.raises(LocalityError, match="locality violation"):
        LindbladSpec.from_expressions([2] * 4, chain, None, ["plus1 + plus4"])


def test_non_hermitian_hamiltonian(chain):
    spec = LindbladSpec.from_expressions([2] * 4, chain, "plus1")
    with pytest.raises(ValueError, match="non-Hermitian Hamiltonian"):
        build_generator(spec)


def test_missing_parameter(chain):
    with pytest.raises(ValueError, match="without a value"):
        LindbladSpec.from_expressions([2] * 4, chain, "a*X1")


def test_discretize_rejects_bad_dt():
    with pytest.raises(ValueError):
        discretize(Superoperator(np.zeros((4, 4)), "generator"), 0.0)


def test_local_generator_leaves_far_marginals(chain, rng):
    spec = LindbladSpec.from_expressions([2] * 4, chain, "X2*X3 + Z2 + 0.5*Y3", ["0.3*minus2"])
    E = discretize(build_generator(spec), 1.3)
    factors = [random_density(2, rng) for _ in range(4)]
    rho = E.apply(tensor(factors))
    for q in (1, 4):
        np.testing.assert_allclose(partial_trace(rho, [2] * 4, [q]), factors[q - 1], atol=1e-9)


def test_resolve_alpha_forms(case2_spec):
    vals = case2_spec.resolve({"eta1": 0.0})
    assert vals["eta1"] == 0.0 and vals["eta2"] == 1.0
    seq = np.arange(len(case2_spec.parameter_names), dtype=float)
    assert list(case2_spec.resolve(seq).values()) == list(seq)
    with pytest.raises(KeyError):
        case2_spec.resolve({"nope": 1.0})


class TestAliasing:
    def test_half_pi_sigma_z_aliases(self):
        spec = LindbladSpec.from_expressions([2], ONE, "0.5*pi*Z1")
        res = aliasing_check(build_generator(spec), 1.0)
        assert not res.safe and res.status == "aliased"
        assert any(abs(s) == 1 for *_, s in res.offending_pairs)

    def test_random_generator_safe(self, rng):
        res = aliasing_check(build_generator(random_two_qubit_spec(rng)), 1.0)
        assert res.safe and res.status == "safe"

    def test_zero_generator_safe(self):
        assert aliasing_check(Superoperator(np.zeros((4, 4)), "generator"), 1.0).safe

    def test_defective_is_inconclusive(self):
        J = np.zeros((4, 4))
        J[0, 1] = 1.0
        res = aliasing_check(Superoperator(J, "generator"), 1.0)
        assert res.status == "inconclusive"


class TestContinuousSpan:
    def test_full_output_rank_at_zero(self):
        ns = NeighborhoodStructure(2, [[1, 2]])
        om = build_output_map(ns, [2, 2])
        L = Superoperator(np.zeros((16, 16)), "generator")
        assert continuous_observability_span(L, om) == 16

    def test_zero_generator_gives_m(self, chain_output):
        L = Superoperator(np.zeros((256, 256)), "generator")
        assert continuous_observability_span(L, chain_output) == chain_output.m

    def test_case1_matches_discrete(self, case1_system):
        assert continuous_observability_span(case1_system.generator, case1_system.output) == 251


def test_single_qubit_aliasing_loses_discrete_rank():
    # H = pi n.sigma with n = (x + z)/sqrt(2): exp(-i H) = -I, so E(dt=1) is the identity
    P = pauli_basis(1).elements
    H = np.pi * (P[1] + P[3])  # P[j] = sigma_j / sqrt(2)
    L = Superoperator(lindbladian(H), "generator", (2,))
    om = OutputMap.from_observables([P[0], P[1]], [2], ["I", "X"])
    assert continuous_observability_span(L, om) == 4
    assert analyze(DiscretizedSystem(discretize(L, 1.0), om, 1.0, L)).rank == 2
    assert not aliasing_check(L, 1.0).safe
    assert analyze(DiscretizedSystem(discretize(L, 1.01), om, 1.01, L)).rank == 4
