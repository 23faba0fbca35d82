import numpy as np
import pytest
import scipy.stats

from localrecon.locality import (
    NeighborhoodStructure,
    OutputMap,
    apply_output_map,
    build_output_map,
    check_structure,
    kernel_witness,
)
from localrecon.operators import partial_trace, random_density, tensor, vec


@pytest.mark.parametrize(
    "n, hoods, expected",
    [
        (4, [[1, 2], [2, 3], [3, 4]], dict(covering=True, nontrivial=True, connected=True)),
        (3, [[1], [3]], dict(covering=False, nontrivial=True, connected=False)),
        (3, [[1, 2, 3]], dict(covering=True, nontrivial=False, connected=True)),
        (4, [[1, 2], [3, 4]], dict(covering=True, nontrivial=True, connected=False)),
    ],
)
def test_check_structure(n, hoods, expected):
    assert check_structure(NeighborhoodStructure(n, hoods)) == expected


@pytest.mark.parametrize("hoods", [[[]], [[0, 1]], [[1, 5]], [[1, 1]]])
def test_structure_validation(hoods):
    with pytest.raises(ValueError):
        NeighborhoodStructure(4, hoods)


def test_complement_and_containing(chain):
    assert chain.complement(2) == (1, 4)
    assert chain.containing([3, 2]) == 2
    assert chain.containing([1, 3]) is None


def test_chain_output_map_size(chain_output):
    om = chain_output
    assert om.m == 3 * 16 - 2 * 4
    V = np.array([vec(C) for C in om.observables]).T
    assert np.linalg.matrix_rank(V) == 40
    np.testing.assert_allclose(V.conj().T @ V, np.eye(40), atol=1e-12)


def test_output_map_is_projector(chain_output):
    M = chain_output.matrix
    np.testing.assert_allclose(M @ M, M, atol=1e-10)
    np.testing.assert_allclose(M, M.conj().T, atol=1e-12)
    assert np.linalg.matrix_rank(M) == chain_output.m


def test_single_neighborhood_map(chain):
    om = build_output_map(chain, [2] * 4, select=[2], allow_partial=True)
    assert om.m == 16
    assert set(om.neighborhood_of) == {2}


def test_partial_map_requires_override(chain):
    with pytest.raises(ValueError, match="allow_partial"):
        build_output_map(chain, [2] * 4, select=[2])


def test_empty_structure_rejected():
    with pytest.raises(ValueError, match="empty"):
        build_output_map(NeighborhoodStructure(2, []), [2, 2])


def test_projector_independent_of_local_basis(chain, chain_output):
    # rotate each neighborhood's Pauli basis by a random orthogonal matrix:
    # the span, hence the projector, must not change
    rng = np.random.default_rng(5)
    obs = np.array(chain_output.observables)
    Q = scipy.stats.ortho_group.rvs(obs.shape[0], random_state=rng)
    rotated = np.tensordot(Q, obs, axes=1)
    om2 = OutputMap.from_observables(rotated, [2] * 4)
    np.testing.assert_allclose(om2.matrix, chain_output.matrix, atol=1e-10)


def test_output_map_agrees_with_marginals(chain, chain_output, rng):
    # states with the same C-projection have the same neighborhood marginals
    for _ in range(3):
        rho = random_density(16, rng)
        proj = apply_output_map(chain_output, rho)
        for nb in chain:
            np.testing.assert_allclose(
                partial_trace(proj, [2] * 4, nb), partial_trace(rho, [2] * 4, nb), atol=1e-10
            )


def test_kernel_witness(chain_output, rng):
    E = kernel_witness(chain_output, [2] * 4)
    Z = np.diag([1.0, -1.0])
    np.testing.assert_allclose(E, tensor([Z] * 4) / 4)
    assert np.linalg.norm(chain_output.matrix @ vec(E)) < 1e-10
    np.testing.assert_allclose(apply_output_map(chain_output, E), 0, atol=1e-12)
    rho = random_density(16, rng)
    np.testing.assert_allclose(
        apply_output_map(chain_output, rho + 0.01 * E), apply_output_map(chain_output, rho), atol=1e-12
    )


def test_kernel_witness_trivial_structure():
    ns = NeighborhoodStructure(2, [[1, 2]])
    om = build_output_map(ns, [2, 2])
    with pytest.raises(ValueError, match="kernel may be empty"):
        kernel_witness(om, [2, 2])


def test_qutrit_neighborhoods():
    ns = NeighborhoodStructure(2, [[1], [2]])
    om = build_output_map(ns, [3, 2])
    # (9 + 4) - 1 shared identity
    assert om.m == 12
    M = om.matrix
    np.testing.assert_allclose(M @ M, M, atol=1e-10)
