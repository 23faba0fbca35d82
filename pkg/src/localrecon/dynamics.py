"""Neighborhood-local Lindblad generators and their discretization.

Superoperators use the column-stacking convention of :mod:`.operators`:

    L̂ = -i (I ⊗ H - Hᵀ ⊗ I)
        + Σ_k [ conj(L_k) ⊗ L_k - ½ I ⊗ L_k^†L_k - ½ (L_k^†L_k)ᵀ ⊗ I ]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .expr import Polynomial, ProductTerm, parse_operator_expression
from .linalg import block_krylov
from .locality import NeighborhoodStructure, OutputMap
from .operators import embed, is_hermitian, total_dim, vec

log = logging.getLogger(__name__)


class LocalityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Term:
    """One summand ``coefficient(α) * op`` with ``op`` acting on ``sites``."""

    coefficient: Polynomial
    sites: tuple
    operator: np.ndarray = field(repr=False)
    neighborhood: int = 0

    @classmethod
    def from_product(cls, pt: ProductTerm) -> "Term":
        return cls(pt.coefficient, pt.sites, pt.local_operator())


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Hamiltonian terms and noise operators, each local to one neighborhood.

    ``noise`` holds one list of terms per noise operator ``L_k``; all terms of
    one operator must share a neighborhood. ``parameters`` maps every
    parameter name to its nominal value.
    """

    dims: tuple
    structure: NeighborhoodStructure
    hamiltonian: tuple = ()
    noise: tuple = ()
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != self.structure.n_subsystems:
            raise ValueError("dims and neighborhood structure disagree on the number of subsystems")
        ham = tuple(self._place(t, "Hamiltonian term") for t in self.hamiltonian)
        noise = []
        for j, op_terms in enumerate(self.noise):
            terms = tuple(self._place(t, f"noise operator {j + 1}") for t in op_terms)
            sites = sorted({q for t in terms for q in t.sites})
            k = self.structure.containing(sites) if sites else 1
            if k is None:
                raise LocalityError(f"locality violation: noise operator {j + 1} spans sites {sites}")
            noise.append(tuple(Term(t.coefficient, t.sites, t.operator, k) for t in terms))
        object.__setattr__(self, "hamiltonian", ham)
        object.__setattr__(self, "noise", tuple(noise))
        params = dict(self.parameters)
        missing = self.variables - set(params)
        if missing:
            raise ValueError(f"parameters without a value: {sorted(missing)}")
        object.__setattr__(self, "parameters", params)

    def _place(self, t: Term, what: str) -> Term:
        for q in t.sites:
            if not 1 <= q <= len(self.dims):
                raise LocalityError(f"{what} uses site {q}, outside 1..{len(self.dims)}")
            if self.dims[q - 1] != 2:
                raise ValueError(f"{what}: Pauli/ladder tokens need qubit sites, site {q} has d={self.dims[q - 1]}")
        if not t.sites:
            # scalar term: identity on the first neighborhood
            return Term(t.coefficient, t.sites, t.operator, 1)
        k = self.structure.containing(t.sites)
        if k is None:
            raise LocalityError(f"locality violation: {what} acts on sites {list(t.sites)}, not inside any neighborhood")
        return Term(t.coefficient, t.sites, t.operator, k)

    @property
    def variables(self) -> set:
        names = set()
        for t in self.hamiltonian:
            names |= t.coefficient.variables
        for op in self.noise:
            for t in op:
                names |= t.coefficient.variables
        return names

    @property
    def parameter_names(self) -> tuple:
        return tuple(self.parameters)

    @property
    def D(self) -> int:
        return total_dim(self.dims)

    @classmethod
    def from_expressions(
        cls,
        dims: Sequence[int],
        structure: NeighborhoodStructure,
        hamiltonian: str | None = None,
        noise: Sequence[str] = (),
        parameters: Mapping[str, float] | None = None,
    ) -> "LindbladSpec":
        ham = [Term.from_product(p) for p in parse_operator_expression(hamiltonian)] if hamiltonian else []
        noise_ops = [[Term.from_product(p) for p in parse_operator_expression(s)] for s in noise]
        return cls(tuple(dims), structure, tuple(ham), tuple(noise_ops), dict(parameters or {}))

    def resolve(self, alpha=None) -> dict:
        """Parameter values: nominal, overridden by ``alpha``.

        ``alpha`` may be a mapping (partial override) or a sequence aligned
        with :attr:`parameter_names`.
        """
        values = dict(self.parameters)
        if alpha is None:
            return values
        if isinstance(alpha, Mapping):
            unknown = set(alpha) - set(values)
            if unknown:
                raise KeyError(f"unknown parameters: {sorted(unknown)}")
            values.update({k: float(v) for k, v in alpha.items()})
            return values
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != len(values):
            raise ValueError(f"alpha has {alpha.size} entries, expected {len(values)}")
        return dict(zip(self.parameter_names, alpha.tolist()))

    def _assemble(self, terms, values) -> np.ndarray:
        D = self.D
        out = np.zeros((D, D), dtype=complex)
        for t in terms:
            c = t.coefficient(values)
            if c == 0:
                continue
            if t.sites:
                out += c * embed(t.operator, t.sites, self.dims)
            else:
                out += c * np.eye(D)
        return out

    def hamiltonian_matrix(self, alpha=None) -> np.ndarray:
        H = self._assemble(self.hamiltonian, self.resolve(alpha))
        if not is_hermitian(H):
            raise ValueError("non-Hermitian Hamiltonian")
        return H

    def noise_matrices(self, alpha=None) -> list[np.ndarray]:
        values = self.resolve(alpha)
        return [self._assemble(op, values) for op in self.noise]


@dataclass(frozen=True, eq=False)
class Superoperator:
    """A ``D² x D²`` matrix acting on column-stacked operators."""

    matrix: np.ndarray = field(repr=False)
    kind: str  # "generator", "step" or "output"
    dims: tuple = ()

    @property
    def D(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        D = self.D
        return (self.matrix @ vec(rho)).reshape(D, D, order="F")

    def adjoint(self, X: np.ndarray) -> np.ndarray:
        """Heisenberg-picture action ``vec^{-1}(M^† vec(X))``."""
        D = self.D
        return (self.matrix.conj().T @ vec(X)).reshape(D, D, order="F")


def commutator_superop(H: np.ndarray) -> np.ndarray:
    """Matrix of ``X -> -i[H, X]``."""
    I = np.eye(H.shape[0])
    return -1j * (np.kron(I, H) - np.kron(H.T, I))


def dissipator_superop(L: np.ndarray) -> np.ndarray:
    """Matrix of ``X -> L X L^† - ½{L^†L, X}``."""
    I = np.eye(L.shape[0])
    LL = L.conj().T @ L
    return np.kron(L.conj(), L) - 0.5 * np.kron(I, LL) - 0.5 * np.kron(LL.T, I)


def lindbladian(H: np.ndarray, noise_ops: Sequence[np.ndarray] = ()) -> np.ndarray:
    out = commutator_superop(H)
    for L in noise_ops:
        out = out + dissipator_superop(L)
    return out


def build_generator(spec: LindbladSpec, alpha=None) -> Superoperator:
    H = spec.hamiltonian_matrix(alpha)
    Ls = spec.noise_matrices(alpha)
    return Superoperator(lindbladian(H, Ls), "generator", spec.dims)


def discretize(L: Superoperator, dt: float = 1.0) -> Superoperator:
    """Step map ``exp(L̂ dt)`` (scaling and squaring, Padé 13)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A = L.matrix * dt
    E = scipy.linalg.expm(A)
    if not np.all(np.isfinite(E)):
        norm1 = np.linalg.norm(A, 1)
        raise FloatingPointError(
            f"matrix exponential did not converge: ||L dt||_1 = {norm1:.3e}, "
            f"cond(L dt) = {np.linalg.cond(A):.3e}"
        )
    return Superoperator(E, "step", L.dims)


def expm_via_eig(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Exponential by diagonalization, with the eigenvector condition number.

    Only meaningful for diagonalizable ``A``; used as a cross-check.
    """
    w, V = np.linalg.eig(A)
    cond = np.linalg.cond(V)
    return (V * np.exp(w)) @ np.linalg.inv(V), float(cond)


def choi_matrix(S: np.ndarray) -> np.ndarray:
    """Unnormalized Choi matrix ``Σ_ij |i><j| ⊗ S(|i><j|)``."""
    n = S.shape[0]
    D = int(round(np.sqrt(n)))
    # S[a + D b, c + D d] maps X[c, d] to Y[a, b]; C-order reshape gives S4[b, a, d, c]
    S4 = S.reshape(D, D, D, D)
    return S4.transpose(3, 1, 2, 0).reshape(n, n)


def trace_preservation_error(S: np.ndarray) -> float:
    """``max |vec(I)^† S - vec(I)^†|`` (zero for a TP step map)."""
    D = int(round(np.sqrt(S.shape[0])))
    v = vec(np.eye(D))
    return float(np.max(np.abs(v.conj() @ S - v.conj())))


def trace_annihilation_error(L: np.ndarray) -> float:
    D = int(round(np.sqrt(L.shape[0])))
    return float(np.max(np.abs(vec(np.eye(D)).conj() @ L)))


def choi_min_eigenvalue(S: np.ndarray) -> float:
    J = choi_matrix(S)
    return float(np.linalg.eigvalsh((J + J.conj().T) / 2).min())


def check_cptp(S: Superoperator, atol: float = 1e-9) -> dict:
    tp = trace_preservation_error(S.matrix)
    cp = choi_min_eigenvalue(S.matrix)
    return {"tp_error": tp, "choi_min_eig": cp, "ok": tp <= atol and cp >= -atol}


@dataclass(frozen=True, eq=False)
class DiscretizedSystem:
    """``ρ[k+1] = E(ρ[k])``, ``τ[k] = C(ρ[k])``."""

    step: Superoperator
    output: OutputMap
    dt: float = 1.0
    generator: Superoperator | None = None

    def __post_init__(self):
        n = self.step.matrix.shape[0]
        if self.step.matrix.shape != (n, n) or n != self.output.D ** 2:
            raise ValueError(
                f"step map of size {self.step.matrix.shape} does not match output map on D={self.output.D}"
            )

    @property
    def D(self) -> int:
        return self.output.D

    @classmethod
    def from_spec(cls, spec: LindbladSpec, output: OutputMap, dt: float = 1.0, alpha=None):
        L = build_generator(spec, alpha)
        return cls(discretize(L, dt), output, dt, L)

    def evolve(self, rho0: np.ndarray, k_max: int) -> list[np.ndarray]:
        """States ``ρ[0..k_max]``."""
        D = self.D
        r = vec(rho0).astype(complex)
        out = [r.reshape(D, D, order="F")]
        E = self.step.matrix
        for _ in range(k_max):
            r = E @ r
            out.append(r.reshape(D, D, order="F"))
        return out


@dataclass(frozen=True)
class AliasingResult:
    safe: bool
    status: str  # "safe", "aliased" or "inconclusive"
    offending_pairs: list
    eigenvector_condition: float


def aliasing_check(L: Superoperator, dt: float = 1.0, rtol: float = 1e-8, max_cond: float = 1e10) -> AliasingResult:
    """Look for distinct eigenvalue pairs of ``L̂`` with equal real parts whose
    imaginary gap is a nonzero multiple of ``2π/dt``.

    A non-diagonalizable (numerically defective) generator is reported as
    inconclusive.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    w, V = np.linalg.eig(L.matrix)
    cond = float(np.linalg.cond(V))
    if not np.all(np.isfinite(w)) or cond > max_cond:
        return AliasingResult(False, "inconclusive", [], cond)
    tol = rtol * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    period = 2 * math.pi / dt
    # cluster numerically equal eigenvalues so degenerate copies are not "distinct"
    reps = []
    for lam in w:
        if not any(abs(lam - r) <= tol for r in reps):
            reps.append(lam)
    reps = np.array(reps)
    dre = np.abs(reps.real[:, None] - reps.real[None, :])
    dim = reps.imag[:, None] - reps.imag[None, :]
    s = np.rint(dim / period)
    hit = (dre <= tol) & (s != 0) & (np.abs(dim - s * period) <= tol)
    iu = np.argwhere(np.triu(hit, 1))
    pairs = [(complex(reps[i]), complex(reps[j]), int(s[i, j])) for i, j in iu]
    return AliasingResult(not pairs, "safe" if not pairs else "aliased", pairs, cond)


def continuous_observability_span(L: Superoperator, om: OutputMap, rtol: float | None = None) -> int:
    """Rank of ``span{(L̂^†)^j vec(C_i)}`` over ``j = 0..D²-1``."""
    n = L.matrix.shape[0]
    ranks, _ = block_krylov(om.rows, L.matrix, n, rtol)
    return ranks[-1]
