"""Dense operator algebra on multipartite Hilbert spaces.

Operators are plain complex numpy arrays. Functions that need to know the
tensor structure take an explicit ``dims`` sequence (one entry per
subsystem, left to right). Subsystem indices are 1-based throughout the
package.

Vectorization stacks columns: entry ``(i, j)`` of a ``D x D`` matrix lands at
position ``j*D + i`` of the vector, so that ``vec(A @ X @ B) ==
kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

ATOL = 1e-10

SIGMA_I = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = (SIGMA_X + 1j * SIGMA_Y) / 2
SIGMA_MINUS = (SIGMA_X - 1j * SIGMA_Y) / 2

PAULIS = {"I": SIGMA_I, "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}


@dataclass(frozen=True)
class OperatorBasis:
    """An ordered list of operators with one label per element."""

    elements: tuple
    labels: tuple
    label: str = ""
    hermitian: bool = True

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def gram(self) -> np.ndarray:
        """Hilbert-Schmidt Gram matrix ``tr(B_i^dag B_j)``."""
        V = np.array([vec(B) for B in self.elements]).T
        return V.conj().T @ V

    def matrix(self) -> np.ndarray:
        """Columns are ``vec`` of the basis elements."""
        return np.array([vec(B) for B in self.elements]).T

    def coefficients(self, A: np.ndarray) -> np.ndarray:
        """HS coefficients ``tr(B_i^dag A)`` of ``A``."""
        return self.matrix().conj().T @ vec(A)


def total_dim(dims: Sequence[int]) -> int:
    return int(np.prod(dims)) if len(dims) else 1


def tensor(ops: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product of square operators, in subsystem order."""
    ops = list(ops)
    if not ops:
        raise ValueError("empty tensor product")
    for op in ops:
        op = np.asarray(op)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ValueError(f"tensor factors must be square, got shape {op.shape}")
    return reduce(np.kron, (np.asarray(op, dtype=complex) for op in ops))


def _check_dims(A: np.ndarray, dims: Sequence[int]) -> int:
    D = total_dim(dims)
    if A.shape != (D, D):
        raise ValueError(f"operator shape {A.shape} does not match dims {list(dims)} (D={D})")
    return D


def _check_sites(sites, n: int) -> list[int]:
    sites = list(sites)
    for q in sites:
        if not 1 <= q <= n:
            raise ValueError(f"subsystem index {q} out of range 1..{n}")
    if len(set(sites)) != len(sites):
        raise ValueError(f"duplicate subsystem index in {sites}")
    return sites


def partial_trace(A: np.ndarray, dims: Sequence[int], keep) -> np.ndarray:
    """Reduced operator on the subsystems in ``keep`` (1-based, any order).

    The kept factors appear in increasing index order in the result.
    """
    A = np.asarray(A)
    _check_dims(A, dims)
    n = len(dims)
    keep = sorted(_check_sites(keep, n))
    T = A.reshape(tuple(dims) + tuple(dims))
    # trace out from the last subsystem backwards so axis numbers stay valid
    m = n
    for q in reversed(range(1, n + 1)):
        if q in keep:
            continue
        T = np.trace(T, axis1=q - 1, axis2=q - 1 + m)
        m -= 1
    d_keep = total_dim([dims[q - 1] for q in keep])
    return T.reshape(d_keep, d_keep)


def embed(op: np.ndarray, sites, dims: Sequence[int]) -> np.ndarray:
    """Embed an operator acting on ``sites`` into the full space as ``op ⊗ I``.

    ``op`` must be ordered like ``sites``; sites need not be contiguous.
    """
    n = len(dims)
    sites = _check_sites(sites, n)
    op = np.asarray(op, dtype=complex)
    d_loc = total_dim([dims[q - 1] for q in sites])
    if op.shape != (d_loc, d_loc):
        raise ValueError(f"local operator shape {op.shape} does not match sites {sites}")
    rest = [q for q in range(1, n + 1) if q not in sites]
    full = np.kron(op, np.eye(total_dim([dims[q - 1] for q in rest]), dtype=complex))
    order = sites + rest
    sub = [dims[q - 1] for q in order]
    T = full.reshape(sub + sub)
    perm = [order.index(q) for q in range(1, n + 1)]
    T = T.transpose(perm + [p + n for p in perm])
    D = total_dim(dims)
    return T.reshape(D, D)


def vec(A: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError("vec expects a matrix")
    return A.reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec` for square matrices."""
    v = np.asarray(v).reshape(-1)
    D = int(round(np.sqrt(v.size)))
    if D * D != v.size or (dim is not None and dim != D):
        raise ValueError(f"vector of length {v.size} is not a vectorized {dim or '?'}x{dim or '?'} matrix")
    return v.reshape(D, D, order="F")


def hs_inner(A: np.ndarray, B: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product ``tr(A^dag B)``."""
    return complex(np.vdot(A, B))


def is_hermitian(A: np.ndarray, rtol: float = 1e-12) -> bool:
    A = np.asarray(A)
    nrm = np.linalg.norm(A)
    return bool(np.linalg.norm(A - A.conj().T) <= rtol * max(nrm, 1.0))


def is_density(A: np.ndarray, atol: float = ATOL) -> bool:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    if np.linalg.norm(A - A.conj().T) > atol:
        return False
    if abs(np.trace(A) - 1) > atol:
        return False
    return bool(np.linalg.eigvalsh((A + A.conj().T) / 2).min() >= -atol)


def hermitian_part(A: np.ndarray) -> np.ndarray:
    return (A + A.conj().T) / 2


def gell_mann(d: int) -> list[np.ndarray]:
    """Identity followed by the d^2-1 generalized Gell-Mann matrices.

    All elements are HS-normalized (``tr(G_i G_j) = δ_ij``). For ``d = 2``
    this is the normalized Pauli basis ``{I, X, Y, Z}/√2``.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if d == 2:
        return [PAULIS[c] / np.sqrt(2) for c in "IXYZ"]
    out = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            S = np.zeros((d, d), dtype=complex)
            S[j, k] = S[k, j] = 1 / np.sqrt(2)
            A = np.zeros((d, d), dtype=complex)
            A[j, k] = -1j / np.sqrt(2)
            A[k, j] = 1j / np.sqrt(2)
            out += [S, A]
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        out.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
    return out


def local_labels(d: int) -> list[str]:
    if d == 2:
        return list("IXYZ")
    return [f"G{j}" for j in range(d * d)]


def product_basis(dims: Sequence[int], label: str = "") -> OperatorBasis:
    """HS-orthonormal Hermitian product basis of ``B(H)`` for the given dims.

    Qubit factors use Pauli labels; other factors use ``G<j>`` labels.
    Ordering is lexicographic with the first subsystem most significant.
    """
    locs = [gell_mann(d) for d in dims]
    labs = [local_labels(d) for d in dims]
    elems, names = [], []
    for idx in itertools.product(*[range(d * d) for d in dims]):
        elems.append(tensor([locs[q][j] for q, j in enumerate(idx)]))
        sep = "" if all(d == 2 for d in dims) else "."
        names.append(sep.join(labs[q][j] for q, j in enumerate(idx)))
    return OperatorBasis(tuple(elems), tuple(names), label or "product")


def pauli_basis(n_qubits: int) -> OperatorBasis:
    """The 4^n normalized Pauli strings ``P / 2^{n/2}``."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    return product_basis([2] * n_qubits, label=f"pauli{n_qubits}")


def pauli_string(label: str) -> np.ndarray:
    """Unnormalized Pauli string, e.g. ``pauli_string("IXIZ")``."""
    return tensor([PAULIS[c] for c in label.upper()])


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(hermitian_part(rho - sigma))).sum())


def _psd_sqrt(A: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(hermitian_part(A))
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(ρ) σ sqrt(ρ)))^2``."""
    s = _psd_sqrt(rho)
    w = np.linalg.eigvalsh(hermitian_part(s @ sigma @ s))
    return float(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2)


def von_neumann_entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh(hermitian_part(rho))
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))


def relative_entropy(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Umegaki relative entropy ``tr ρ (log ρ - log σ)``; ``inf`` if unsupported."""
    wr, Ur = np.linalg.eigh(hermitian_part(rho))
    ws, Us = np.linalg.eigh(hermitian_part(sigma))
    pos = wr > 1e-15
    term1 = float(np.sum(wr[pos] * np.log(wr[pos])))
    # tr ρ log σ = Σ_ab p_a |<a|b>|^2 log s_b
    overlap = np.abs(Ur.conj().T @ Us) ** 2
    weights = wr[:, None] * overlap
    if np.any((ws <= 1e-15) & (weights.sum(axis=0) > 1e-12)):
        return float("inf")
    logs = np.log(np.clip(ws, 1e-300, None))
    term2 = float(np.sum(weights * logs[None, :]))
    return term1 - term2


def random_density(D: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed density matrix of the given rank (full by default)."""
    k = D if rank is None else rank
    G = rng.standard_normal((D, k)) + 1j * rng.standard_normal((D, k))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_pure(D: int, rng: np.random.Generator) -> np.ndarray:
    return random_density(D, rng, rank=1)


def basis_state(label: str, dims: Sequence[int] | None = None) -> np.ndarray:
    """Projector onto the computational basis state, e.g. ``"0000"``."""
    digits = [int(c) for c in label]
    dims = list(dims) if dims is not None else [2] * len(digits)
    if len(dims) != len(digits) or any(not 0 <= x < d for x, d in zip(digits, dims)):
        raise ValueError(f"basis label {label!r} incompatible with dims {dims}")
    idx = 0
    for x, d in zip(digits, dims):
        idx = idx * d + x
    D = total_dim(dims)
    rho = np.zeros((D, D), dtype=complex)
    rho[idx, idx] = 1
    return rho
