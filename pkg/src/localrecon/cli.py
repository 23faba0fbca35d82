"""Command-line front end.

Exit codes: 0 success (or observable), 1 usage/configuration error,
2 analytic negative result (not observable, gramian singular).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .measurement import MeasurementPlan, MeasurementRecord, run_experiment
from .observability import analyze, lower_bound, principal_angles, randomize_until_observable
from .operators import pauli_string, vec
from .reconstruction import ReconstructionError, gramian_reconstruct, max_entropy_reconstruct
from .scenario import CASE_STUDIES, ConfigError, Scenario, bundled_path, load_scenario, make_state

log = logging.getLogger("localrecon")

EXIT_OK, EXIT_USAGE, EXIT_NEGATIVE = 0, 1, 2


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serializable: {type(x).__name__}")


def span_angles(basis, labels) -> np.ndarray:
    """Principal angles between ``span(basis)`` and the span of the given Pauli strings."""
    A = np.array([vec(B) for B in basis]).T
    B = np.array([vec(pauli_string(lab)) for lab in labels]).T
    return principal_angles(A, B)


def run_analysis(sc: Scenario, rtol=None, trials=None, seed=None, allow_partial=None, workers=1) -> dict:
    """Observability report for a scenario, randomized when it declares free parameters."""
    rtol = sc.rtol if rtol is None else rtol
    sysm = sc.system(allow_partial)
    om = sysm.output
    if not sc.randomized:
        rep = analyze(sysm, rtol)
        out = rep.to_dict(sc.dims)
        if "nonobservable_span" in sc.reference and rep.unobservable_basis:
            ang = span_angles(rep.unobservable_basis, sc.reference["nonobservable_span"])
            out["reference_span_angles"] = ang.tolist()
        out["observable"] = rep.is_observable
        return out
    n = trials if trials is not None else sc.trials
    s = seed if seed is not None else sc.seeds[0]
    res = randomize_until_observable(sc.spec(), om, sc.free, n, s, sc.dt, rtol, workers)
    ks = [k for k, ok in zip(res.k_star_samples, res.observable) if ok]
    return {
        "randomized": True,
        "free_parameters": list(sc.free),
        "trials": n,
        "seed": s,
        "observable": res.success,
        "observable_count": int(sum(res.observable)),
        "k_star_samples": res.k_star_samples,
        "ranks": res.ranks,
        "k_star_mean": float(np.mean(ks)) if ks else None,
        "k_star_median": float(np.median(ks)) if ks else None,
        "k_lower_bound": lower_bound(om.D, om.m),
        "first_observable_alpha": res.alpha,
        "trials_used": res.trials_used,
        "m": om.m,
        "D": om.D,
    }


def cmd_analyze(args) -> int:
    sc = load_scenario(args.config)
    report = run_analysis(sc, args.tolerance, args.trials, args.seed, args.allow_partial_output or None, args.workers)
    report["scenario"] = sc.name
    report["system_hash"] = sc.system_hash()
    path = _write_json(Path(args.out) / f"{sc.name}_analysis.json", report)
    if report.get("randomized"):
        print(f"{sc.name}: {report['observable_count']}/{report['trials']} observable, "
              f"mean k* {report['k_star_mean']}, median k* {report['k_star_median']}")
    else:
        print(f"{sc.name}: rank {report['rank']}/{report['full_rank']}, k* {report['k_star']}, "
              f"non-observable dim {report['nonobservable_dim']}")
    print(f"report: {path}")
    return EXIT_OK if report["observable"] else EXIT_NEGATIVE


def _plan(sc: Scenario, sysm, shots) -> MeasurementPlan:
    k_max = sc.k_max
    if k_max is None:
        k_max = analyze(sysm, sc.rtol, with_basis=False).k_star
    P = sc.shots if shots is None else (shots or None)
    return MeasurementPlan(k_max, P, sc.dt, sc.observable_subset)


def cmd_simulate(args) -> int:
    sc = load_scenario(args.config)
    sysm = sc.system(args.allow_partial_output or None)
    rho0 = make_state(sc.initial_state, sc.dims)
    plan = _plan(sc, sysm, args.shots)
    seeds = [args.seed] if args.seed is not None else (sc.seeds or [0])
    for s in seeds:
        try:
            rec = run_experiment(sysm, rho0, plan, s, system_hash=sc.system_hash())
        except ValueError as exc:
            raise ConfigError(f"[plan].initial_state: {exc}") from exc
        csv_path, _ = rec.save(Path(args.out) / f"{sc.name}_seed{s}")
        print(f"record: {csv_path} ({rec.n_means} means, k_max={plan.k_max}, shots={plan.shots_per_point or 'exact'})")
    return EXIT_OK


def _prior(sc: Scenario):
    D = int(np.prod(sc.dims))
    if sc.prior is None:
        return np.eye(D, dtype=complex) / D
    sigma = make_state(sc.prior, sc.dims, "prior")
    if np.linalg.eigvalsh(sigma).min() <= 1e-12:
        sigma = (1 - sc.prior_mixing) * sigma + sc.prior_mixing * np.eye(D) / D
    return sigma


def cmd_reconstruct(args) -> int:
    sc = load_scenario(args.config)
    sysm = sc.system(args.allow_partial_output or None)
    status = EXIT_OK
    for path in args.record:
        rec = MeasurementRecord.load(path)
        if rec.system_hash != sc.system_hash():
            raise ConfigError(f"record/system mismatch: {path} has hash {rec.system_hash!r}, "
                              f"scenario {sc.name!r} has {sc.system_hash()!r}")
        tol = args.tolerance if args.tolerance is not None else 1e-10
        try:
            if args.method == "gramian":
                res = gramian_reconstruct(sysm, rec)
            elif args.method == "maxent":
                res = max_entropy_reconstruct(sysm, rec, None, tol)
            else:
                res = max_entropy_reconstruct(sysm, rec, _prior(sc), tol)
        except ReconstructionError as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = EXIT_NEGATIVE if "gramian singular" in str(exc) else EXIT_USAGE
            continue
        payload = res.to_dict(sc.dims, rec.ground_truth, rec)
        payload["record"] = str(path)
        payload["system_hash"] = sc.system_hash()
        out = _write_json(Path(args.out) / f"{Path(path).stem}_{args.method}.json", payload)
        line = f"{res.method}: converged={res.converged} eps={res.relaxation_level:g} max residual {res.max_residual:.3e}"
        if "comparison" in payload:
            line += f", trace distance {payload['comparison']['trace_distance']:.3e}"
        print(line)
        print(f"result: {out}")
    return status


def _table(rows) -> str:
    head = ("quantity", "reference", "computed")
    widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(3)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*map(str, r)) for r in rows]
    return "\n".join(lines)


def casestudy(name: str, trials=None, seed=None, workers=1) -> tuple[dict, list]:
    sc = load_scenario(bundled_path(name))
    rep = run_analysis(sc, trials=trials, seed=seed, workers=workers)
    ref = sc.reference
    rows = []
    if name == "case1":
        rows.append(("rank", ref.get("rank"), rep["rank"]))
        rows.append(("non-observable dim", ref.get("nonobservable_dim"), rep["nonobservable_dim"]))
        ang = rep.get("reference_span_angles", [])
        rows.append(("max principal angle [rad]", "< 1e-6", f"{max(ang):.3e}" if ang else "n/a"))
        rows.append(("k*", "-", rep["k_star"]))
    elif name == "case2":
        rows.append(("observable", True, rep["observable"]))
        rows.append(("k*", ref.get("k_star"), rep["k_star"]))
        rows.append(("lower bound", "-", rep["k_lower_bound"]))
    else:
        rows.append(("observable trials", f"{rep['trials']}/{rep['trials']}", f"{rep['observable_count']}/{rep['trials']}"))
        if name == "case1-random":
            rows.append(("mean k*", ref.get("mean_k_star"), rep["k_star_mean"]))
        else:
            rows.append(("median k*", ref.get("k_star"), rep["k_star_median"]))
            rows.append(("k* range", "-", f"{min(rep['k_star_samples'])}..{max(rep['k_star_samples'])}"))
        rows.append(("lower bound", ref.get("lower_bound", "-"), rep["k_lower_bound"]))
    rep["scenario"] = sc.name
    return rep, rows


def cmd_casestudy(args) -> int:
    rep, rows = casestudy(args.name, args.trials, args.seed, args.workers)
    print(f"case study {args.name}")
    print(_table(rows))
    if args.out:
        _write_json(Path(args.out) / f"{args.name}_casestudy.json", {"report": rep, "table": rows})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="localrecon", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario TOML file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--allow-partial-output", action="store_true",
                        help="permit output maps that do not cover every subsystem")
        sp.add_argument("--workers", type=int, default=1, help="threads for randomized trials")

    a = sub.add_parser("analyze", help="observability analysis")
    common(a)
    a.add_argument("--trials", type=int, default=None)
    a.add_argument("--tolerance", type=float, default=None, help="relative rank cutoff")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="simulate shot-noise output records")
    common(s)
    s.add_argument("--shots", type=int, default=None, help="shots per (k, i); 0 gives exact means")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="reconstruct the initial state from records")
    common(r)
    r.add_argument("record", nargs="+", help="record CSV files written by simulate")
    r.add_argument("--method", choices=["gramian", "maxent", "relent"], default="gramian")
    r.add_argument("--tolerance", type=float, default=None, help="dual gradient tolerance")
    r.set_defaults(func=cmd_reconstruct)

    c = sub.add_parser("casestudy", help="run a bundled case study")
    c.add_argument("name", help=f"one of: {', '.join(CASE_STUDIES)}")
    c.add_argument("--trials", type=int, default=None)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", default=None)
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_casestudy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
