"""Neighborhood structures and the local output map.

The output map sends a state to its projection onto the span of all
neighborhood-local operators,

    C[ρ] = Σ_i C_i tr(C_i ρ),

where ``{C_i}`` is the union of HS-orthonormal Hermitian product bases of
each neighborhood, embedded with identities elsewhere and deduplicated on
the intersections.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .operators import (
    embed,
    gell_mann,
    is_hermitian,
    local_labels,
    tensor,
    total_dim,
    unvec,
    vec,
)

DEDUP_TOL = 1e-8


@dataclass(frozen=True)
class NeighborhoodStructure:
    """A collection of 1-based subsystem index sets over ``n_subsystems``."""

    n_subsystems: int
    neighborhoods: tuple

    def __init__(self, n_subsystems: int, neighborhoods):
        hoods = []
        for k, nb in enumerate(neighborhoods):
            nb = tuple(int(q) for q in nb)
            if not nb:
                raise ValueError(f"neighborhood {k + 1} is empty")
            if len(set(nb)) != len(nb):
                raise ValueError(f"neighborhood {k + 1} has duplicate indices: {list(nb)}")
            for q in nb:
                if not 1 <= q <= n_subsystems:
                    raise ValueError(
                        f"neighborhood {k + 1}: index {q} out of range 1..{n_subsystems}"
                    )
            hoods.append(tuple(sorted(nb)))
        object.__setattr__(self, "n_subsystems", int(n_subsystems))
        object.__setattr__(self, "neighborhoods", tuple(hoods))

    def __len__(self):
        return len(self.neighborhoods)

    def __iter__(self):
        return iter(self.neighborhoods)

    def complement(self, k: int) -> tuple:
        """Indices outside neighborhood ``k`` (1-based ``k``)."""
        nb = set(self.neighborhoods[k - 1])
        return tuple(q for q in range(1, self.n_subsystems + 1) if q not in nb)

    @cached_property
    def covering(self) -> bool:
        covered = set(itertools.chain.from_iterable(self.neighborhoods))
        return covered == set(range(1, self.n_subsystems + 1))

    @cached_property
    def nontrivial(self) -> bool:
        full = tuple(range(1, self.n_subsystems + 1))
        return full not in self.neighborhoods

    @cached_property
    def connected(self) -> bool:
        # union-find over subsystems; members of one neighborhood are linked
        parent = list(range(self.n_subsystems + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for nb in self.neighborhoods:
            for q in nb[1:]:
                parent[find(q)] = find(nb[0])
        roots = {find(q) for q in range(1, self.n_subsystems + 1)}
        return len(roots) == 1

    def containing(self, sites) -> int | None:
        """1-based index of the first neighborhood containing all ``sites``."""
        s = set(sites)
        for k, nb in enumerate(self.neighborhoods, start=1):
            if s <= set(nb):
                return k
        return None


def check_structure(ns: NeighborhoodStructure) -> dict:
    return {"covering": ns.covering, "nontrivial": ns.nontrivial, "connected": ns.connected}


@dataclass(frozen=True, eq=False)
class OutputMap:
    """Deduplicated local observables and the projector ``Ĉ = Σ vec(C_i) vec(C_i)^†``."""

    dims: tuple
    observables: tuple
    labels: tuple
    neighborhood_of: tuple
    structure: NeighborhoodStructure | None = None

    @property
    def m(self) -> int:
        return len(self.observables)

    @property
    def D(self) -> int:
        return total_dim(self.dims)

    @cached_property
    def rows(self) -> np.ndarray:
        """``m x D²`` matrix whose rows are ``vec(C_i)^†``."""
        return np.array([vec(C).conj() for C in self.observables])

    @cached_property
    def matrix(self) -> np.ndarray:
        R = self.rows
        return R.conj().T @ R

    def expectations(self, rho: np.ndarray) -> np.ndarray:
        """Real vector of ``tr(C_i ρ)``."""
        return (self.rows @ vec(rho)).real

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho))

    def compose(self, means) -> np.ndarray:
        """``Σ_i means_i C_i``."""
        means = np.asarray(means, dtype=float)
        return np.tensordot(means, np.array(self.observables), axes=1)

    @classmethod
    def from_observables(cls, observables, dims, labels=None) -> "OutputMap":
        """Output map from an explicit HS-orthonormal Hermitian observable list."""
        obs = tuple(np.asarray(C, dtype=complex) for C in observables)
        D = total_dim(dims)
        for C in obs:
            if C.shape != (D, D):
                raise ValueError("observable shape does not match dims")
            if not is_hermitian(C):
                raise ValueError("observables must be Hermitian")
        V = np.array([vec(C) for C in obs]).T
        if obs and not np.allclose(V.conj().T @ V, np.eye(len(obs)), atol=1e-10):
            raise ValueError("observables must be HS-orthonormal")
        labels = tuple(labels) if labels is not None else tuple(f"C{i}" for i in range(len(obs)))
        return cls(tuple(dims), obs, labels, tuple([0] * len(obs)), None)


def local_basis(dims: Sequence[int], sites) -> list[tuple[str, np.ndarray]]:
    """Labelled HS-orthonormal Hermitian basis of ``B(H_sites) ⊗ I``."""
    n = len(dims)
    D = total_dim(dims)
    locs = {q: gell_mann(dims[q - 1]) for q in sites}
    labs = {q: local_labels(dims[q - 1]) for q in sites}
    scale = 1 / np.sqrt(D / total_dim([dims[q - 1] for q in sites]))
    qubits = all(d == 2 for d in dims)
    out = []
    for idx in itertools.product(*[range(dims[q - 1] ** 2) for q in sites]):
        op = tensor([locs[q][j] for q, j in zip(sites, idx)])
        full = embed(op, sites, dims) * scale
        chosen = dict(zip(sites, idx))
        parts = []
        for q in range(1, n + 1):
            if q in chosen:
                parts.append(labs[q][chosen[q]])
            else:
                parts.append("I" if qubits else "G0")
        out.append(("".join(parts) if qubits else ".".join(parts), full))
    return out


def build_output_map(
    ns: NeighborhoodStructure,
    dims: Sequence[int],
    select=None,
    allow_partial: bool = False,
) -> OutputMap:
    """Assemble ``{C_i}`` for the neighborhoods in ``select`` (1-based; default all).

    A non-covering selection is refused unless ``allow_partial`` is set.
    """
    if len(ns) == 0:
        raise ValueError("empty neighborhood structure")
    if len(dims) != ns.n_subsystems:
        raise ValueError(f"dims has {len(dims)} entries but structure has {ns.n_subsystems} subsystems")
    ks = list(range(1, len(ns) + 1)) if select is None else [int(k) for k in select]
    for k in ks:
        if not 1 <= k <= len(ns):
            raise ValueError(f"neighborhood index {k} out of range 1..{len(ns)}")
    used = NeighborhoodStructure(ns.n_subsystems, [ns.neighborhoods[k - 1] for k in ks])
    if not used.covering and not allow_partial:
        raise ValueError(
            "selected neighborhoods do not cover all subsystems; pass allow_partial=True to permit this"
        )
    accepted, labels, owner = [], [], []
    acc_vecs = []
    for k in ks:
        for lab, C in local_basis(dims, ns.neighborhoods[k - 1]):
            v = vec(C)
            if acc_vecs:
                overlaps = np.abs(np.array(acc_vecs).conj() @ v)
                j = int(np.argmax(overlaps))
                if overlaps[j] > DEDUP_TOL:
                    if abs(overlaps[j] - 1) > DEDUP_TOL:
                        raise ValueError(f"observable {lab} partially overlaps {labels[j]}")
                    continue
            accepted.append(C)
            labels.append(lab)
            owner.append(k)
            acc_vecs.append(v)
    return OutputMap(tuple(dims), tuple(accepted), tuple(labels), tuple(owner), used)


def apply_output_map(om: OutputMap, rho: np.ndarray) -> np.ndarray:
    return om.apply(rho)


def kernel_witness(om: OutputMap, dims: Sequence[int]) -> np.ndarray:
    """A normalized traceless product operator annihilated by the output map."""
    if om.structure is None or not om.structure.nontrivial:
        raise ValueError("kernel may be empty: output map has a trivial neighborhood structure")
    factors = []
    for d in dims:
        E = np.zeros((d, d), dtype=complex)
        E[0, 0], E[1, 1] = 1, -1
        factors.append(E / np.sqrt(2))
    E = tensor(factors)
    if np.linalg.norm(om.rows @ vec(E)) > 1e-10:
        raise ValueError("product witness not in the kernel of this output map")
    return E
