"""Initial-state reconstruction from output time series.

Two routes:

* :func:`gramian_reconstruct` solves the stacked linear system by SVD least
  squares, exact on noiseless data from an observable system.
* :func:`max_entropy_reconstruct` picks the feasible state of maximal von
  Neumann entropy (or minimal relative entropy to a prior). Constraints are
  pulled back to the initial time, ``A_{k,i} = (E^†)^k(C_i)``, and the
  problem is solved in its dual over exponential-family states
  ``ρ ∝ exp(log σ + Σ θ_j A_j)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .dynamics import DiscretizedSystem
from .linalg import block_krylov, default_rtol
from .measurement import MeasurementRecord
from .operators import (
    hermitian_part,
    product_basis,
    relative_entropy,
    trace_distance,
    fidelity,
    unvec,
    vec,
    von_neumann_entropy,
)

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (0.0, 1e-4, 1e-3, 1e-2, 3e-2, 1e-1)
FEAS_TOL = 1e-7


class ReconstructionError(RuntimeError):
    pass


@dataclass(eq=False)
class ReconstructionResult:
    rho0_hat: np.ndarray = field(repr=False)
    method: str
    residuals: np.ndarray = field(repr=False)
    entropy: float
    relaxation_level: float = 0.0
    epsilon_star: float = 0.0
    solver_iterations: int = 0
    converged: bool = True
    clipped: float = 0.0
    condition: float = float("nan")
    trace: list = field(default_factory=list, repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0

    def compare(self, rho0: np.ndarray) -> dict:
        return {
            "trace_distance": trace_distance(self.rho0_hat, rho0),
            "fidelity": fidelity(self.rho0_hat, rho0),
        }

    def to_dict(self, dims=None, truth=None, record: MeasurementRecord | None = None) -> dict:
        out = {
            "method": self.method,
            "converged": self.converged,
            "solver_iterations": self.solver_iterations,
            "entropy": self.entropy,
            "relaxation_level": self.relaxation_level,
            "epsilon_star": self.epsilon_star,
            "max_residual": self.max_residual,
            "psd_clip": self.clipped,
            "condition": self.condition,
            "rho0_hat": {"real": self.rho0_hat.real.tolist(), "imag": self.rho0_hat.imag.tolist()},
            "solver_trace": self.trace,
        }
        if dims is not None:
            pb = product_basis(dims)
            coeffs = pb.coefficients(self.rho0_hat).real
            out["pauli_coefficients"] = {lab: float(c) for lab, c in zip(pb.labels, coeffs)}
        if record is not None:
            res = self.residuals.reshape(record.means.shape)
            out["residuals"] = [
                {"k": k, "observable_index": i, "residual": float(res[k, j])}
                for k in range(res.shape[0])
                for j, i in enumerate(record.indices)
            ]
        else:
            out["residuals"] = [float(r) for r in self.residuals]
        if truth is not None:
            out["comparison"] = self.compare(truth)
        return out


def clip_to_density(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Hermitize, clip negative eigenvalues and renormalize.

    Returns the state and the magnitude of the clipped negative part.
    """
    w, U = np.linalg.eigh(hermitian_part(A))
    neg = float(-w[w < 0].sum())
    w = np.clip(w, 0, None)
    if w.sum() <= 0:
        raise ReconstructionError("estimate has no positive part")
    w = w / w.sum()
    return (U * w) @ U.conj().T, neg


def constraint_rows(sys: DiscretizedSystem, k_max: int, indices=None) -> np.ndarray:
    """Rows ``vec(A_{k,i})^†`` ordered by k then i, so ``rows @ vec(ρ0)`` are the means."""
    E = sys.step.matrix
    R = sys.output.rows if indices is None else sys.output.rows[list(indices)]
    blocks = [R]
    for _ in range(k_max):
        R = R @ E
        blocks.append(R)
    return np.vstack(blocks)


def pullback_constraints(sys: DiscretizedSystem, k_max: int, indices=None) -> np.ndarray:
    """Heisenberg-picture constraint operators ``A_{k,i} = (E^†)^k(C_i)``, shape ``(n, D, D)``."""
    D = sys.D
    G = constraint_rows(sys, k_max, indices)
    return np.array([hermitian_part(unvec(g.conj(), D)) for g in G])


def _stack(outputs, om, indices=None) -> np.ndarray:
    """Mean vector from a list of ``τ[k]`` operators or from a record."""
    if isinstance(outputs, MeasurementRecord):
        return outputs.means.reshape(-1)
    R = om.rows if indices is None else om.rows[list(indices)]
    return np.concatenate([(R @ vec(t)).real for t in outputs])


def gramian_reconstruct(sys: DiscretizedSystem, outputs, rtol: float | None = None) -> ReconstructionResult:
    """Least-squares inverse of the stacked output map.

    ``outputs`` is either the list ``τ[0..k_max]`` or a :class:`MeasurementRecord`.
    """
    D = sys.D
    n = D * D
    if isinstance(outputs, MeasurementRecord):
        k_max, idx = outputs.k_max, outputs.indices
    else:
        k_max, idx = len(outputs) - 1, None
    if k_max < 0:
        raise ValueError("no outputs")
    G = constraint_rows(sys, k_max, idx)
    y = _stack(outputs, sys.output, idx)
    U, s, Vh = np.linalg.svd(G, full_matrices=False)
    tol = (default_rtol(G.shape) if rtol is None else rtol) * s[0]
    r = int(np.sum(s > tol))
    if r < n:
        ranks, _ = block_krylov(sys.output.rows, sys.step.matrix, n)
        if ranks[-1] < n:
            raise ReconstructionError(f"gramian singular: observable rank {ranks[-1]} < {n}")
        need = ranks.index(n)
        raise ReconstructionError(
            f"insufficient horizon: rank {r} < {n} with k_max={k_max}; need k_max >= {need}"
        )
    x = Vh.conj().T @ ((U.conj().T @ y) / s)
    raw = unvec(x, D)
    rho, clipped = clip_to_density(raw)
    return ReconstructionResult(
        rho0_hat=rho,
        method="gramian",
        residuals=(G @ vec(rho)).real - y,
        entropy=von_neumann_entropy(rho),
        clipped=clipped,
        condition=float((s[0] / s[-1]) ** 2),
    )


class _Family:
    """Exponential family ``ρ(θ) = exp(K + Σ θ_j F_j) / Z`` with ``K = log σ``."""

    def __init__(self, F: np.ndarray, K: np.ndarray):
        self.F = F
        self.K = K
        self.D = K.shape[0]

    def state(self, theta):
        H = self.K + np.tensordot(theta, self.F, axes=1) if len(theta) else self.K
        w, U = np.linalg.eigh(hermitian_part(H))
        wmax = w.max()
        e = np.exp(w - wmax)
        Z = e.sum()
        p = e / Z
        rho = (U * p) @ U.conj().T
        return rho, np.log(Z) + wmax, w, U, p

    def expectations(self, rho):
        return np.einsum("jab,ba->j", self.F, rho).real

    def hessian(self, w, U, p):
        Ft = np.einsum("ai,jab,bc->jic", U.conj(), self.F, U, optimize=True).reshape(len(self.F), -1)
        dw = w[:, None] - w[None, :]
        dp = p[:, None] - p[None, :]
        same = np.abs(dw) < 1e-10
        kernel = np.where(same, (p[:, None] + p[None, :]) / 2, dp / np.where(same, 1.0, dw))
        g = np.einsum("jaa,a->j", Ft.reshape(len(self.F), self.D, self.D), p).real
        H = (Ft * kernel.reshape(-1)) @ Ft.conj().T
        return H.real - np.outer(g, g)


def _log_prior(prior, D):
    if prior is None:
        return np.zeros((D, D), dtype=complex)
    w, U = np.linalg.eigh(hermitian_part(prior))
    if w.min() <= 1e-14:
        raise ValueError("prior must be full rank for the relative-entropy problem")
    return (U * np.log(w)) @ U.conj().T


def _traceless_coordinates(G: np.ndarray, b: np.ndarray, D: int):
    """Rewrite ``Re(G vec ρ) = b`` as ``M x = c`` for ``ρ = I/D + Σ x_a P_a``.

    ``P`` is the traceless part of the generalized Gell-Mann basis (the
    identity element is listed first and dropped).
    """
    P = np.array(product_basis([D]).elements[1:])
    M = np.array([(G @ vec(Pa)).real for Pa in P]).T.reshape(len(b), len(P))
    c = b - (G @ vec(np.eye(D) / D)).real
    return P, M, c


def _reduce(G: np.ndarray, b: np.ndarray, D: int, rtol: float = 1e-10):
    """Whitened traceless features spanning the constraint directions.

    With ``M = U S V^T`` the features are ``F_l = Σ_a V_al P_a`` (HS
    orthonormal) and the targets ``z = S^{-1} U^T c``.
    """
    if len(b) == 0:
        return np.zeros((0, D, D), dtype=complex), np.zeros(0), np.zeros(0)
    P, M, c = _traceless_coordinates(G, b, D)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    F = np.tensordot(Vt[:r], P, axes=1)
    z = (U[:, :r].T @ c) / s[:r]
    return F, z, s[:r]


def _newton(fam: _Family, z: np.ndarray, tol: float, max_iter: int):
    theta = np.zeros(len(z))
    trace = []
    for it in range(1, max_iter + 1):
        rho, logZ, w, U, p = fam.state(theta)
        g = fam.expectations(rho) - z
        f = logZ - theta @ z
        gn = float(np.max(np.abs(g))) if g.size else 0.0
        trace.append({"iter": it, "dual": float(f), "grad_inf": gn})
        if gn < tol:
            return theta, rho, it, True, trace
        H = fam.hessian(w, U, p)
        mu = 1e-12 * max(1.0, np.trace(H) / len(H))
        try:
            step = -np.linalg.solve(H + mu * np.eye(len(H)), g)
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        slope = g @ step
        while t > 1e-12:
            _, logZ2, *_ = fam.state(theta + t * step)
            if logZ2 - (theta + t * step) @ z <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return theta, rho, it, False, trace
        theta = theta + t * step
    rho, *_ = fam.state(theta)
    return theta, rho, max_iter, False, trace


def _lbfgs_relaxed(fam: _Family, b: np.ndarray, eps: float, tol: float, max_iter: int):
    """Dual of the ℓ∞-relaxed problem with ``θ = θ⁺ - θ⁻``, ``θ± >= 0``."""
    n = len(b)
    trace = []

    def fun(x):
        th = x[:n] - x[n:]
        rho, logZ, *_ = fam.state(th)
        g = fam.expectations(rho) - b
        f = logZ - th @ b + eps * x.sum()
        return f, np.concatenate([g + eps, -g + eps])

    res = scipy.optimize.minimize(
        fun, np.zeros(2 * n), jac=True, method="L-BFGS-B",
        bounds=[(0, None)] * (2 * n),
        options={"maxiter": max_iter, "ftol": 1e-15, "gtol": tol, "maxcor": 30},
        callback=lambda xk: trace.append({"iter": len(trace) + 1}),
    )
    th = res.x[:n] - res.x[n:]
    rho, *_ = fam.state(th)
    viol = np.abs(fam.expectations(rho) - b) - eps
    ok = bool(viol.max(initial=0.0) <= max(tol, 1e-3 * eps))
    return th, rho, int(res.nit), ok, trace


@dataclass
class RelaxedConstraints:
    rows: np.ndarray
    targets: np.ndarray
    epsilon: float
    epsilon_star: float
    schedule: tuple


def minimal_relaxation(G: np.ndarray, b: np.ndarray, D: int):
    """Smallest ``t`` with some density ``ρ`` satisfying ``|Re(G vec ρ) - b| <= t``.

    Solved as an SDP in traceless real coordinates; positivity of the
    Hermitian ``ρ = A + iB`` is imposed on the real embedding ``[[A, -B], [B, A]]``.
    """
    import cvxpy as cp

    P, M, c = _traceless_coordinates(G, b, D)
    Re = P.real.reshape(len(P), -1).T
    Im = P.imag.reshape(len(P), -1).T
    x = cp.Variable(len(P))
    t = cp.Variable()
    A = cp.reshape(Re @ x, (D, D), order="C") + np.eye(D) / D
    B = cp.reshape(Im @ x, (D, D), order="C")
    prob = cp.Problem(cp.Minimize(t), [cp.bmat([[A, -B], [B, A]]) >> 0, cp.abs(M @ x - c) <= t])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            prob.solve(solver=cp.CLARABEL)
        except cp.SolverError:
            prob.solve(solver=cp.SCS, eps=1e-9)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise ReconstructionError(f"feasibility problem failed: {prob.status}")
    rho = np.eye(D) / D + np.tensordot(x.value, P, axes=1)
    return max(float(t.value), 0.0), rho


def relax_constraints(
    sys: DiscretizedSystem,
    record: MeasurementRecord,
    epsilon_schedule=DEFAULT_SCHEDULE,
    feas_tol: float = FEAS_TOL,
) -> RelaxedConstraints:
    """Choose the first ``ε`` in the schedule at which the relaxed constraints are feasible."""
    schedule = tuple(sorted(float(e) for e in epsilon_schedule))
    if record.means.size == 0:
        return RelaxedConstraints(np.zeros((0, sys.D**2)), np.zeros(0), 0.0, 0.0, schedule)
    G = constraint_rows(sys, record.k_max, record.indices)
    b = record.means.reshape(-1)
    eps_star, rho = minimal_relaxation(G, b, sys.D)
    for eps in schedule:
        if eps_star <= eps + feas_tol:
            return RelaxedConstraints(G, b, eps, eps_star, schedule)
    viol = np.abs((G @ vec(rho)).real - b)
    worst = np.argsort(viol)[::-1][:5]
    K = len(record.indices)
    listing = ", ".join(
        f"(k={j // K}, i={record.indices[j % K]}: {viol[j]:.3e})" for j in worst
    )
    raise ReconstructionError(
        f"constraints infeasible for every epsilon <= {schedule[-1]:g} "
        f"(minimal epsilon {eps_star:.3e}); worst violated: {listing}"
    )


def max_entropy_reconstruct(
    sys: DiscretizedSystem,
    record: MeasurementRecord | None,
    prior: np.ndarray | None = None,
    tol: float = 1e-10,
    epsilon_schedule=DEFAULT_SCHEDULE,
    max_iter: int = 500,
) -> ReconstructionResult:
    """Maximum-entropy (or minimum relative entropy to ``prior``) state consistent with the record.

    Exactly consistent records are solved by damped Newton on the dual in
    whitened coordinates. Otherwise the smallest feasible relaxation level
    from ``epsilon_schedule`` is used and the relaxed dual is solved by
    L-BFGS-B. Non-convergence is reported through ``converged=False`` with
    the last iterate.
    """
    D = sys.D
    K = _log_prior(prior, D)
    method = "relative_entropy" if prior is not None else "max_entropy"
    if record is None or record.means.size == 0:
        G, b = np.zeros((0, D * D)), np.zeros(0)
        relaxed = RelaxedConstraints(G, b, 0.0, 0.0, tuple(epsilon_schedule))
    else:
        relaxed = relax_constraints(sys, record, epsilon_schedule)
        G, b = relaxed.rows, relaxed.targets
    eps = relaxed.epsilon
    if eps == 0.0:
        F, z, s = _reduce(G, b, D)
        fam = _Family(F, K)
        _, rho, iters, ok, trace = _newton(fam, z, tol, max_iter)
        cond = float((s[0] / s[-1]) ** 2) if s.size else 1.0
    else:
        A = np.array([hermitian_part(unvec(g.conj(), D)) for g in G])
        fam = _Family(A, K)
        _, rho, iters, ok, trace = _lbfgs_relaxed(fam, b, eps, max(tol, 1e-9), max_iter * 10)
        cond = float("nan")
    if not ok:
        log.warning("%s solver did not converge in %d iterations", method, iters)
    rho, clipped = clip_to_density(rho)
    resid = (G @ vec(rho)).real - b if len(b) else np.zeros(0)
    ent = relative_entropy(rho, prior) if prior is not None else von_neumann_entropy(rho)
    return ReconstructionResult(
        rho0_hat=rho,
        method=method,
        residuals=resid,
        entropy=ent,
        relaxation_level=eps,
        epsilon_star=relaxed.epsilon_star,
        solver_iterations=iters,
        converged=ok,
        clipped=clipped,
        condition=cond,
        trace=trace,
    )
