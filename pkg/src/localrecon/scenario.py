"""Scenario files: TOML declarations of system, dynamics, output map and plan."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import DiscretizedSystem, LindbladSpec
from .locality import NeighborhoodStructure, build_output_map
from .operators import basis_state, is_density, random_density, random_pure, total_dim

CASE_STUDIES = {
    "case1": "case1.toml",
    "case1-random": "case1_random.toml",
    "case2": "case2.toml",
    "case3": "case3.toml",
}


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending field."""


@dataclass
class Scenario:
    name: str
    dims: list
    structure: NeighborhoodStructure
    hamiltonian: str
    noise: list
    parameters: dict
    dt: float = 1.0
    output_neighborhoods: list | None = None
    allow_partial: bool = False
    free: list = field(default_factory=list)
    trials: int = 0
    seeds: list = field(default_factory=list)
    k_max: int | None = None
    shots: int | None = 1000
    observable_subset: list | None = None
    initial_state: object = None
    prior: object = None
    prior_mixing: float = 0.1
    rtol: float | None = None
    reference: dict = field(default_factory=dict)
    source: str = ""

    def spec(self) -> LindbladSpec:
        try:
            return LindbladSpec.from_expressions(self.dims, self.structure, self.hamiltonian, self.noise, self.parameters)
        except (ValueError, KeyError) as exc:  # includes expression and locality errors
            raise ConfigError(f"[generator]: {exc}") from exc

    def output_map(self, allow_partial: bool | None = None):
        allow = self.allow_partial if allow_partial is None else allow_partial
        try:
            return build_output_map(self.structure, self.dims, self.output_neighborhoods, allow)
        except ValueError as exc:
            raise ConfigError(f"[output]: {exc}") from exc

    def system(self, allow_partial: bool | None = None, alpha=None) -> DiscretizedSystem:
        return DiscretizedSystem.from_spec(self.spec(), self.output_map(allow_partial), self.dt, alpha)

    @property
    def randomized(self) -> bool:
        return bool(self.free)

    def system_hash(self) -> str:
        """Content hash of everything that determines the discretized system."""
        payload = {
            "dims": list(self.dims),
            "neighborhoods": [list(nb) for nb in self.structure.neighborhoods],
            "hamiltonian": self.hamiltonian,
            "noise": list(self.noise),
            "parameters": {k: float(v) for k, v in sorted(self.parameters.items())},
            "dt": float(self.dt),
            "output": self.output_neighborhoods,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def state(self, spec, what: str = "initial_state") -> np.ndarray:
        return make_state(spec, self.dims, what)


def make_state(spec, dims, what: str = "initial_state") -> np.ndarray:
    """Build a density operator from a scenario state declaration.

    Accepted forms: a computational basis label (``"0000"``),
    ``"maximally_mixed"``, or a table ``{random = "pure" | "mixed", seed = n}``.
    """
    D = total_dim(dims)
    if isinstance(spec, str):
        if spec == "maximally_mixed":
            return np.eye(D, dtype=complex) / D
        try:
            return basis_state(spec, dims)
        except ValueError as exc:
            raise ConfigError(f"[plan].{what}: {exc}") from exc
    if isinstance(spec, dict) and "random" in spec:
        rng = np.random.default_rng(spec.get("seed", 0))
        kind = spec["random"]
        if kind == "pure":
            return random_pure(D, rng)
        if kind == "mixed":
            return random_density(D, rng)
        raise ConfigError(f"[plan].{what}.random: expected 'pure' or 'mixed', got {kind!r}")
    if isinstance(spec, dict) and "real" in spec:
        rho = np.array(spec["real"], dtype=float) + 1j * np.array(spec.get("imag", np.zeros((D, D))), dtype=float)
        if rho.shape != (D, D) or not is_density(rho):
            raise ConfigError(f"[plan].{what}: not a {D}x{D} density operator")
        return rho
    raise ConfigError(f"[plan].{what}: unrecognized state declaration {spec!r}")


def _get(table: dict, key: str, kind, where: str, default=..., check=None):
    if key not in table:
        if default is ...:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    if check is not None:
        msg = check(val)
        if msg:
            raise ConfigError(f"{where}.{key}: {msg}")
    return val


def _int_list(val, where):
    if not isinstance(val, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in val):
        raise ConfigError(f"{where}: expected a list of integers")
    return val


def parse_scenario(data: dict, source: str = "") -> Scenario:
    sysd = _get(data, "system", dict, "")
    dims = _int_list(_get(sysd, "dims", list, "[system]"), "[system].dims")
    if not dims or any(d < 2 for d in dims):
        raise ConfigError("[system].dims: need at least one subsystem, each of dimension >= 2")
    hoods = _get(sysd, "neighborhoods", list, "[system]")
    for j, nb in enumerate(hoods):
        _int_list(nb, f"[system].neighborhoods[{j}]")
    try:
        ns = NeighborhoodStructure(len(dims), hoods)
    except ValueError as exc:
        raise ConfigError(f"[system].neighborhoods: {exc}") from exc

    gen = _get(data, "generator", dict, "")
    ham = _get(gen, "hamiltonian", str, "[generator]", "")
    noise = _get(gen, "noise", list, "[generator]", [])
    if not all(isinstance(x, str) for x in noise):
        raise ConfigError("[generator].noise: expected a list of expression strings")
    dt = _get(gen, "dt", float, "[generator]", 1.0, lambda v: None if v > 0 else "must be positive")

    params = _get(data, "parameters", dict, "", {})
    for k, v in params.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"[parameters].{k}: expected a number")
    params = {k: float(v) for k, v in params.items()}

    out = _get(data, "output", dict, "", {})
    sel = out.get("neighborhoods")
    if sel is not None:
        _int_list(sel, "[output].neighborhoods")
        for k in sel:
            if not 1 <= k <= len(ns):
                raise ConfigError(f"[output].neighborhoods: index {k} out of range 1..{len(ns)}")
    allow = _get(out, "allow_partial", bool, "[output]", False)

    rnd = _get(data, "randomize", dict, "", {})
    free = rnd.get("free", [])
    if free == "all":
        free = sorted(params)
    if not isinstance(free, list) or not all(isinstance(p, str) for p in free):
        raise ConfigError("[randomize].free: expected a list of parameter names or \"all\"")
    for p in free:
        if p not in params:
            raise ConfigError(f"[randomize].free: unknown parameter {p!r}")
    trials = _get(rnd, "trials", int, "[randomize]", 30 if free else 0)
    dist = rnd.get("distribution", "normal")
    if dist != "normal":
        raise ConfigError(f"[randomize].distribution: only 'normal' (mean 0, variance 1) is supported, got {dist!r}")

    seeds = data.get("seeds", [])
    _int_list(seeds, "seeds")
    if free and not seeds:
        raise ConfigError("seeds: required when [randomize] declares free parameters")

    plan = _get(data, "plan", dict, "", {})
    k_max = plan.get("k_max", "k_star")
    if k_max == "k_star":
        k_max = None
    elif not isinstance(k_max, int) or isinstance(k_max, bool) or k_max < 0:
        raise ConfigError("[plan].k_max: expected a non-negative integer or \"k_star\"")
    shots = _get(plan, "shots", int, "[plan]", 1000, lambda v: None if v >= 0 else "must be >= 0")
    subset = plan.get("observable_subset")
    if subset is not None:
        _int_list(subset, "[plan].observable_subset")

    rec = _get(data, "reconstruction", dict, "", {})
    mixing = _get(rec, "prior_mixing", float, "[reconstruction]", 0.1,
                  lambda v: None if 0 < v <= 1 else "must lie in (0, 1]")
    analysis = _get(data, "analysis", dict, "", {})
    rtol = analysis.get("rtol")
    if rtol is not None and (isinstance(rtol, bool) or not isinstance(rtol, (int, float)) or not rtol > 0):
        raise ConfigError("[analysis].rtol: expected a positive number")

    sc = Scenario(
        name=_get(data, "name", str, "", Path(source).stem or "scenario"),
        dims=dims,
        structure=ns,
        hamiltonian=ham,
        noise=noise,
        parameters=params,
        dt=dt,
        output_neighborhoods=sel,
        allow_partial=allow,
        free=free,
        trials=trials,
        seeds=seeds,
        k_max=k_max,
        shots=shots or None,
        observable_subset=subset,
        initial_state=plan.get("initial_state", "0" * len(dims)),
        prior=rec.get("prior"),
        prior_mixing=mixing,
        rtol=None if rtol is None else float(rtol),
        reference=_get(data, "reference", dict, "", {}),
        source=source,
    )
    sc.spec()  # surfaces expression, locality and missing-parameter errors now
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return parse_scenario(data, str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def bundled_path(name: str) -> Path:
    if name not in CASE_STUDIES:
        raise ConfigError(f"unknown case study {name!r}; valid names: {', '.join(CASE_STUDIES)}")
    return Path(str(resources.files("localrecon") / "scenarios" / CASE_STUDIES[name]))


def load_case(name: str) -> Scenario:
    return load_scenario(bundled_path(name))

