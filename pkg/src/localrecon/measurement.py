"""Simulated acquisition of local output time series.

Each (k, i) cell stands for P independent runs of: prepare ρ0, evolve for k
steps, measure C_i projectively, reset. Only the empirical mean and the shot
count are stored unless raw outcomes are requested.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import DiscretizedSystem
from .operators import hermitian_part, is_density

log = logging.getLogger(__name__)

MERGE_TOL = 1e-10
NEG_PROB_TOL = 1e-8


@dataclass(frozen=True)
class MeasurementPlan:
    """``shots_per_point=None`` requests noiseless means (the P → ∞ limit)."""

    k_max: int
    shots_per_point: int | None = 1000
    dt: float = 1.0
    observable_subset: tuple | None = None

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.shots_per_point is not None and self.shots_per_point < 1:
            raise ValueError("shots_per_point must be >= 1 (or None for exact means)")
        if self.observable_subset is not None:
            object.__setattr__(self, "observable_subset", tuple(int(i) for i in self.observable_subset))

    def indices(self, m: int) -> list[int]:
        if self.observable_subset is None:
            return list(range(m))
        bad = [i for i in self.observable_subset if not 0 <= i < m]
        if bad:
            raise ValueError(f"observable indices {bad} out of range 0..{m - 1}")
        return list(self.observable_subset)


def spectral_projectors(C: np.ndarray, tol: float = MERGE_TOL):
    """Distinct eigenvalues of Hermitian ``C`` and their eigenprojectors."""
    w, U = np.linalg.eigh(hermitian_part(C))
    vals, projs = [], []
    start = 0
    for j in range(1, len(w) + 1):
        if j == len(w) or w[j] - w[start] > tol:
            V = U[:, start:j]
            vals.append(float(np.mean(w[start:j])))
            projs.append(V @ V.conj().T)
            start = j
    return np.array(vals), projs


def born_distribution(rho: np.ndarray, C: np.ndarray, tol: float = MERGE_TOL):
    """Outcome values and probabilities for a projective measurement of ``C``."""
    vals, projs = spectral_projectors(C, tol)
    p = np.array([np.trace(P @ rho).real for P in projs])
    if p.min() < -NEG_PROB_TOL:
        raise ValueError(f"state not physical: outcome probability {p.min():.3e}")
    p = np.clip(p, 0.0, 1.0)
    return vals, p / p.sum()


def _cell_rng(seed: int, k: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, k, i])))


@dataclass(eq=False)
class MeasurementRecord:
    """Empirical means ``means[k, j]`` for observable ``indices[j]`` at step ``k``."""

    plan: MeasurementPlan
    seed: int | None
    indices: list
    means: np.ndarray
    shots: np.ndarray
    labels: list = field(default_factory=list)
    system_hash: str = ""
    ground_truth: np.ndarray | None = None
    raw: dict | None = None

    @property
    def k_max(self) -> int:
        return self.means.shape[0] - 1

    @property
    def n_means(self) -> int:
        return int(self.means.size)

    def tau_hat(self, om) -> list[np.ndarray]:
        """``τ̂[k] = Σ_i mean_i[k] C_i`` over the measured observables."""
        obs = np.array([om.observables[i] for i in self.indices])
        return [np.tensordot(row, obs, axes=1) for row in self.means]

    # serialization

    def header(self) -> dict:
        out = {
            "plan": asdict(self.plan),
            "seed": self.seed,
            "system_hash": self.system_hash,
            "indices": list(self.indices),
            "labels": list(self.labels),
        }
        if self.ground_truth is not None:
            out["ground_truth"] = {
                "real": self.ground_truth.real.tolist(),
                "imag": self.ground_truth.imag.tolist(),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "observable_index", "mean", "shots"])
        for k in range(self.means.shape[0]):
            for j, i in enumerate(self.indices):
                w.writerow([k, i, repr(float(self.means[k, j])), int(self.shots[k, j])])
        return buf.getvalue()

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` and ``<stem>.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.header(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def load(cls, path) -> "MeasurementRecord":
        """Read a record from its CSV (or JSON) path; the sibling file must exist."""
        path = Path(path)
        csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
        head = json.loads(json_path.read_text())
        plan = MeasurementPlan(**head["plan"])
        indices = list(head["indices"])
        col = {i: j for j, i in enumerate(indices)}
        rows = list(csv.DictReader(csv_path.read_text().splitlines()))
        K = plan.k_max + 1
        means = np.full((K, len(indices)), np.nan)
        shots = np.zeros((K, len(indices)), dtype=np.int64)
        for r in rows:
            k, i = int(r["k"]), int(r["observable_index"])
            if i not in col or not 0 <= k < K:
                raise ValueError(f"{csv_path}: row k={k}, i={i} not covered by the header")
            means[k, col[i]] = float(r["mean"])
            shots[k, col[i]] = int(r["shots"])
        if np.isnan(means).any():
            raise ValueError(f"{csv_path}: missing (k, observable) cells")
        gt = head.get("ground_truth")
        truth = np.array(gt["real"]) + 1j * np.array(gt["imag"]) if gt else None
        return cls(plan, head.get("seed"), indices, means, shots, head.get("labels", []),
                   head.get("system_hash", ""), truth)


def exact_outputs(sys: DiscretizedSystem, rho0: np.ndarray, k_max: int) -> list[np.ndarray]:
    """Noiseless ``τ[k] = C(E^k(ρ0))`` for ``k = 0..k_max``."""
    return [sys.output.apply(r) for r in sys.evolve(rho0, k_max)]


def run_experiment(
    sys: DiscretizedSystem,
    rho0: np.ndarray,
    plan: MeasurementPlan,
    seed: int | None = None,
    keep_shots: bool = False,
    system_hash: str = "",
    store_truth: bool = True,
) -> MeasurementRecord:
    """Simulate the acquisition loop for ``k = 0..plan.k_max``.

    Cell ``(k, i)`` draws from its own Philox stream keyed by ``(seed, k, i)``,
    so records do not depend on loop order or on which cells are selected.
    """
    if not is_density(rho0):
        raise ValueError("initial state is not a density operator")
    if plan.shots_per_point is not None and seed is None:
        raise ValueError("a seed is required for shot-noise simulation")
    om = sys.output
    idx = plan.indices(om.m)
    states = sys.evolve(rho0, plan.k_max)
    K = plan.k_max + 1
    means = np.zeros((K, len(idx)))
    P = plan.shots_per_point
    shots = np.full((K, len(idx)), P or 0, dtype=np.int64)
    raw = {} if keep_shots and P else None
    spectra = {i: spectral_projectors(om.observables[i]) for i in idx}
    for k, rho in enumerate(states):
        rho = hermitian_part(rho)
        for j, i in enumerate(idx):
            vals, projs = spectra[i]
            if P is None:
                means[k, j] = float(np.trace(om.observables[i] @ rho).real)
                continue
            p = np.array([np.trace(Pi @ rho).real for Pi in projs])
            if p.min() < -NEG_PROB_TOL:
                raise ValueError(f"state not physical at k={k}: outcome probability {p.min():.3e}")
            p = np.clip(p, 0.0, 1.0)
            p /= p.sum()
            rng = _cell_rng(seed, k, i)
            counts = rng.multinomial(P, p)
            means[k, j] = float(counts @ vals) / P
            if raw is not None:
                raw[(k, i)] = rng.permutation(np.repeat(vals, counts))
    labels = [om.labels[i] for i in idx]
    truth = np.array(rho0, dtype=complex) if store_truth else None
    return MeasurementRecord(plan, seed, idx, means, shots, labels, system_hash, truth, raw)
