"""Observability of the discretized system and its non-observable subspace.

``k_star`` counts sampling instants: it is the smallest number of blocks
``[Ĉ; ĈÊ; ...; ĈÊ^{k_star-1}]`` whose row span equals the full observable
subspace, so instants ``k = 0..k_star-1`` suffice. With that convention the
counting bound reads ``k_star >= ceil(D²/m)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DiscretizedSystem, LindbladSpec
from .linalg import block_krylov, numerical_rank
from .locality import OutputMap
from .operators import product_basis, unvec, vec

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ObservabilityReport:
    rank: int
    is_observable: bool
    k_star: int
    k_lower_bound: int
    unobservable_basis: list = field(repr=False)
    gramian_condition: float
    singular_values: np.ndarray = field(repr=False)
    ranks: list = field(default_factory=list)
    D: int = 0
    m: int = 0
    svd_rank: int = 0
    rtol: float | None = None

    @property
    def nonobservable_dim(self) -> int:
        return len(self.unobservable_basis)

    def to_dict(self, dims=None, with_basis: bool = True) -> dict:
        out = {
            "rank": self.rank,
            "full_rank": self.D**2,
            "is_observable": self.is_observable,
            "k_star": self.k_star,
            "k_star_convention": "number of sampling instants k = 0..k_star-1 needed to reach the final rank",
            "k_lower_bound": self.k_lower_bound,
            "nonobservable_dim": self.nonobservable_dim,
            "rank_by_horizon": list(self.ranks),
            "svd_rank": self.svd_rank,
            "gramian_condition": self.gramian_condition,
            "singular_values": [float(s) for s in self.singular_values],
            "m": self.m,
            "D": self.D,
        }
        if with_basis and dims is not None:
            pb = product_basis(dims)
            M = pb.matrix()
            out["unobservable_basis"] = [
                {lab: float(c.real) for lab, c in zip(pb.labels, M.conj().T @ vec(B)) if abs(c) > 1e-12}
                for B in self.unobservable_basis
            ]
            out["basis_labels_convention"] = "coefficients over HS-normalized product basis elements"
        return out


def lower_bound(D: int, m: int) -> int:
    """Counting bound ``ceil(D² / m)`` on the number of sampling instants."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return -(-(D * D) // m)


def observability_matrix(sys: DiscretizedSystem, horizon: int) -> np.ndarray:
    """Stack ``[Ĉ_rows; Ĉ_rows Ê; ...]`` for ``horizon`` instants by iterated application.

    Rows are ``vec(C_i)^† Ê^k``; this has the same row span as the
    ``D² x D²`` blocks ``Ĉ Ê^k``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    E = sys.step.matrix
    blk = sys.output.rows
    if blk.shape[1] != E.shape[0]:
        raise ValueError("output map and step map dimensions differ")
    blocks = [blk]
    for _ in range(horizon - 1):
        blk = blk @ E
        blocks.append(blk)
    return np.vstack(blocks)


def hermitian_orthonormal_basis(columns: np.ndarray, D: int, tol: float = 1e-8) -> list[np.ndarray]:
    """HS-orthonormal Hermitian basis for the real span of the Hermitian and
    anti-Hermitian parts of the operators ``unvec(columns[:, j])``."""
    if columns.shape[1] == 0:
        return []
    cands = []
    for v in columns.T:
        B = unvec(v, D)
        for H in ((B + B.conj().T) / 2, (B - B.conj().T) / 2j):
            w = vec(H)
            cands.append(np.concatenate([w.real, w.imag]))
    R = np.array(cands).T
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    r = int(np.sum(s > tol * s[0]))
    n = D * D
    return [unvec(U[:n, j] + 1j * U[n:, j], D) for j in range(r)]


def analyze(sys: DiscretizedSystem, rtol: float | None = None, with_basis: bool = True) -> ObservabilityReport:
    """Grow the horizon until the observable subspace stops growing.

    The rank is tracked incrementally (see :func:`~.linalg.block_krylov`);
    a full SVD of the raw stacked matrix at the final horizon is kept as a
    cross-check and for the conditioning figures.
    """
    D = sys.D
    n = D * D
    om = sys.output
    ranks, space = block_krylov(om.rows, sys.step.matrix, n, rtol)
    rank = ranks[-1]
    k_star = ranks.index(rank) + 1
    O = observability_matrix(sys, k_star)
    s = np.linalg.svd(O, compute_uv=False)
    svd_rank = numerical_rank(s, O.shape)
    if svd_rank != rank:
        # the raw stack loses decayed directions below eps; the incremental rank is authoritative
        log.debug(
            "incremental rank %d differs from raw-stack SVD rank %d (smallest retained singular value %.3e)",
            rank, svd_rank, s[min(rank, len(s)) - 1] if rank else 0.0,
        )
    r_eff = min(rank, len(s))
    cond = float((s[0] / s[r_eff - 1]) ** 2) if r_eff and s[r_eff - 1] > 0 else float("inf")
    basis = hermitian_orthonormal_basis(space.complement(), D) if with_basis and rank < n else []
    return ObservabilityReport(
        rank=rank,
        is_observable=rank == n,
        k_star=k_star,
        k_lower_bound=lower_bound(D, om.m),
        unobservable_basis=basis,
        gramian_condition=cond,
        singular_values=s,
        ranks=ranks,
        D=D,
        m=om.m,
        svd_rank=svd_rank,
        rtol=rtol,
    )


def output_sequence(sys: DiscretizedSystem, X: np.ndarray, k_max: int) -> np.ndarray:
    """``[tr(C_i E^k(X))]`` for ``k = 0..k_max`` (complex for non-Hermitian ``X``)."""
    E = sys.step.matrix
    r = vec(X).astype(complex)
    out = []
    for _ in range(k_max + 1):
        out.append(sys.output.rows @ r)
        r = E @ r
    return np.array(out)


@dataclass
class RandomizationResult:
    success: bool
    alpha: dict | None
    trials_used: int
    k_star_samples: list
    observable: list
    alphas: list
    ranks: list


def randomize_until_observable(
    spec: LindbladSpec,
    om: OutputMap,
    free_params,
    trials: int,
    seed: int,
    dt: float = 1.0,
    rtol: float | None = None,
    max_workers: int = 1,
) -> RandomizationResult:
    """Draw the free parameters i.i.d. N(0, 1) and analyze every draw.

    ``free_params`` holds parameter names or 0-based positions in
    ``spec.parameter_names``. All ``trials`` draws are analyzed so the k*
    distribution is available; ``alpha`` is the first observable draw.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    names = spec.parameter_names
    free = [names[p] if isinstance(p, (int, np.integer)) else p for p in free_params]
    for p in free:
        if p not in spec.parameters:
            raise KeyError(f"unknown parameter {p!r}")
    children = np.random.SeedSequence(seed).spawn(trials)

    def one(t):
        rng = np.random.default_rng(children[t])
        alpha = dict(spec.parameters)
        for p in free:
            alpha[p] = float(rng.standard_normal())
        sys = DiscretizedSystem.from_spec(spec, om, dt, alpha)
        rep = analyze(sys, rtol, with_basis=False)
        return alpha, rep

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            results = list(pool.map(one, range(trials)))
    else:
        results = [one(t) for t in range(trials)]

    alphas = [a for a, _ in results]
    flags = [r.is_observable for _, r in results]
    first = next((t for t, ok in enumerate(flags) if ok), None)
    if first is None:
        log.warning("no observable draw in %d trials: the nominal family may be non-generically unobservable", trials)
    return RandomizationResult(
        success=first is not None,
        alpha=alphas[first] if first is not None else None,
        trials_used=(first + 1) if first is not None else trials,
        k_star_samples=[r.k_star for _, r in results],
        observable=flags,
        alphas=alphas,
        ranks=[r.rank for _, r in results],
    )


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (radians, descending) between column spans of ``A`` and ``B``."""
    import scipy.linalg

    return scipy.linalg.subspace_angles(A, B)


def rref_pivot_labels(basis, dims, tol: float = 1e-9) -> list[str]:
    """Product-basis labels of the pivot columns of the reduced row echelon form
    of ``basis`` written in product-basis coordinates (lexicographic order)."""
    pb = product_basis(dims)
    M = pb.matrix()
    coords = np.array([M.conj().T @ vec(B) for B in basis]).T  # n x d
    piv = []
    for i in range(coords.shape[0]):
        trial = piv + [i]
        if np.linalg.matrix_rank(coords[trial, :], tol=tol) == len(trial):
            piv.append(i)
            if len(piv) == coords.shape[1]:
                break
    return [pb.labels[i] for i in piv]


