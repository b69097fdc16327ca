"""Command-line front end.

    piconsensus validate SCENARIO
    piconsensus run SCENARIO [--scheme S] [--seed N] [--horizon T] [--dt H] [--out DIR]
    piconsensus compare SCENARIO [--schemes continuous,periodic,event] [--out DIR]
    piconsensus batch SCENARIO --runs N [--scheme S] [--out DIR]

SCENARIO is a YAML/JSON file or the name of a built-in (``example1``).

Exit codes: 0 success, 1 partial failure, 2 usage error, 3 unreadable or
malformed scenario, 4 failed assumption check, 5 simulation diverged or left
a cost domain.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, control
from .errors import AnalysisError, AssumptionError, ConfigError, DivergenceError, DomainError, GraphError
from .graph import build_graph, is_connected, spectrally_connected
from .plant import AgentPlant, GainPair, check_gains, validate_assumption4
from .scenario import ScenarioParseError, build_costs, build_scenario, default_box, ensemble_constants, load_document
from .sim import run, run_batch

log = logging.getLogger("piconsensus")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INVALID = 4
EXIT_DIVERGED = 5

OUT_ENV = "PICONSENSUS_OUT"


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


# -- validate ----------------------------------------------------------------

def validation_report(doc: dict) -> dict:
    """Check Assumptions 1-4 and the controller bounds for a parsed document."""
    report = {"scenario": doc.get("name", ""), "assumptions": {}, "controller": None, "ok": True}
    a = report["assumptions"]

    try:
        g = build_graph(doc["graph"]["nodes"], [tuple(e) for e in doc["graph"]["edges"]])
    except GraphError as exc:
        a["1"] = {"status": "fail", "detail": str(exc)}
        report["ok"] = False
        g = None
    if g is not None:
        bfs = is_connected(g)
        a["1"] = {
            "status": "pass" if bfs else "fail",
            "detail": "graph is connected" if bfs else "Assumption 1 violated: graph is not connected",
            "lambda_2": g.lambda_2,
            "lambda_n": g.lambda_n,
            "spectral_agrees": spectrally_connected(g) == bfs,
        }
        report["ok"] &= bfs

    costs = build_costs(doc["costs"])
    consts = ensemble_constants(costs, default_box(doc, costs.dim))
    est2 = [r["cost"] for r in consts["per_cost"] if r["source"] == "estimated"]
    a["2"] = {
        "status": "pass" if not est2 else "warn",
        "detail": "analytic Lipschitz constants" if not est2 else f"constants of {', '.join(est2)} are sampled estimates",
        "w_bar": consts["w_bar"],
        "per_cost": [{"cost": r["cost"], "w": r["w"], "source": r["source"]} for r in consts["per_cost"]],
    }
    weak = consts["not_strongly_convex"]
    a["3"] = {
        "status": "pass" if not weak and not est2 else "warn",
        "detail": (f"not strongly convex on the sampling box: {', '.join(weak)}" if weak
                   else "strongly convex"),
        "m_under": consts["m_under"],
        "per_cost": [{"cost": r["cost"], "m": r["m"], "source": r["source"]} for r in consts["per_cost"]],
    }

    agents, a4_ok, notes = [], True, []
    for k, p in enumerate(doc["plants"]):
        try:
            plant = AgentPlant(p["A"], p["B"], p["C"])
        except ValueError as exc:
            agents.append({"agent": k, "error": str(exc)})
            a4_ok = False
            continue
        r = validate_assumption4(plant)
        entry = {"agent": k, **r.as_dict()}
        if not r.rank_ok:
            a4_ok = False
            entry["error"] = f"Assumption 4 violated: rank(C B) = {r.rank_cb} < q = {r.q}"
        elif "gains" in p:
            try:
                check_gains(plant, GainPair(p["gains"]["k_alpha"], p["gains"]["k_beta"]))
            except (AssumptionError, ValueError) as exc:
                a4_ok = False
                entry["error"] = str(exc)
        if not r.controllable:
            notes.append(f"agent {k + 1}: (A, B) not controllable (rank {r.controllability_rank} < {r.n_states})")
        unstable = [z for z in r.internal_eigenvalues if np.real(z) > 0]
        if unstable:
            notes.append(f"agent {k + 1}: hidden closed-loop mode(s) {np.round(unstable, 6).tolist()} are unstable; "
                         "the output converges but the state grows")
        agents.append(entry)
    uncontrollable = any(not ag.get("controllable", True) for ag in agents)
    a["4"] = {"status": "fail" if not a4_ok else "warn" if uncontrollable else "pass", "agents": agents, "notes": notes}
    report["ok"] &= a4_ok

    n = doc["graph"]["nodes"]
    sizes = {"plants": len(doc["plants"])}
    if "functions" in doc["costs"]:
        sizes["costs"] = len(doc["costs"]["functions"])
    for what, count in sizes.items():
        if count != n:
            report["ok"] = False
            report.setdefault("errors", []).append(f"{count} {what} for {n} graph nodes")

    if report["ok"]:
        try:
            sc = build_scenario(doc)
            cfg = sc.controller
            report["controller"] = {
                "scheme": cfg.scheme, "xi": cfg.xi, "kappa": cfg.kappa, "delta": cfg.delta, "tau0": cfg.tau0,
                "w_bar": cfg.w_bar, "m_under": cfg.m_under, "warnings": list(cfg.warnings),
            }
            if sc.controller.sampled:
                sc.validate()
        except (ConfigError, AssumptionError, GraphError, ValueError) as exc:
            report["controller"] = {"error": str(exc)}
            report["ok"] = False
    return report


def _print_validation(rep: dict) -> None:
    print(f"scenario: {rep['scenario']}")
    for key in ("1", "2", "3", "4"):
        entry = rep["assumptions"].get(key)
        if entry is None:
            continue
        detail = entry.get("detail", "")
        print(f"  Assumption {key}: {entry['status'].upper():5s} {detail}")
        if key == "2":
            print(f"      w_bar = {entry['w_bar']:.6g}")
        if key == "3":
            print(f"      m_under = {entry['m_under']}")
        if key == "4":
            for ag in entry["agents"]:
                if "error" in ag:
                    print(f"      agent {ag['agent'] + 1}: {ag['error']}")
            for n in entry["notes"]:
                print(f"      note: {n}")
    for err in rep.get("errors", []):
        print(f"  error: {err}")
    ctl = rep.get("controller")
    if ctl:
        if "error" in ctl:
            print(f"  controller: FAIL {ctl['error']}")
        else:
            t0 = "-" if ctl["tau0"] is None else f"{ctl['tau0']:.6g}"
            print(f"  controller: scheme={ctl['scheme']} xi={ctl['xi']:.6g} tau0={t0}")
            for w in ctl["warnings"]:
                print(f"      warning: {w}")
    print("result:", "OK" if rep["ok"] else "FAILED")


def cmd_validate(args) -> int:
    doc = load_document(args.scenario)
    rep = validation_report(doc)
    if args.json:
        print(json.dumps(rep, indent=2, default=str))
    else:
        _print_validation(rep)
    return EXIT_OK if rep["ok"] else EXIT_INVALID


# -- run ---------------------------------------------------------------------

def analyze(trace) -> dict:
    rep = {"scheme": trace.scheme, "final_error": trace.final_error(), "notes": list(trace.notes)}
    try:
        rep["fit"] = analysis.fit_rate(trace).as_dict()
    except AnalysisError as exc:
        rep["fit"] = {"error": str(exc)}
    if trace.lyapunov is not None:
        rep["lyapunov_audit"] = analysis.audit_lyapunov(trace).as_dict()
    if trace.scheme != "continuous":
        rep["events"] = analysis.event_stats(trace, strict=False).as_dict()
    rep["eta_sum_max"] = float(np.abs(trace.etas.sum(axis=1)).max())
    return rep


def _scenario_from_args(args, scheme=None):
    return build_scenario(
        args.scenario,
        scheme=scheme if scheme is not None else getattr(args, "scheme", None),
        seed=args.seed,
        horizon=args.horizon,
        dt=args.dt,
        delta=getattr(args, "delta", None),
    )


def _precheck(args) -> int:
    rep = validation_report(load_document(args.scenario))
    if not rep["ok"]:
        _print_validation(rep)
        return EXIT_INVALID
    return EXIT_OK


def cmd_run(args) -> int:
    code = _precheck(args)
    if code:
        return code
    sc = _scenario_from_args(args)
    out = Path(args.out) if args.out else default_out() / (sc.name or "scenario") / sc.controller.scheme
    out.mkdir(parents=True, exist_ok=True)
    for w in sc.controller.warnings:
        print(f"warning: {w}", file=sys.stderr)
    trace = run(sc)
    rep = analyze(trace)
    rep["tau0"] = sc.controller.tau0
    rep["controller"] = {
        "xi": sc.controller.xi,
        "kappa": sc.controller.kappa,
        "delta": sc.controller.delta,
        "warnings": list(sc.controller.warnings),
    }
    trace.write_csv(out / "trace.csv")
    trace.write_json(out / "trace.json")
    (out / "report.json").write_text(json.dumps(rep, indent=2))
    row = {
        "scheme": trace.scheme,
        "final_error": trace.final_error(),
        "rate": rep["fit"].get("rate"),
        "r2": rep["fit"].get("r_squared"),
        "events": sum(trace.event_counts()) if trace.scheme != "continuous" else None,
        "min_gap": rep.get("events", {}).get("min_gap"),
    }
    print(analysis.summary_table([row], list(row)))
    if sc.controller.tau0 is not None:
        print(f"tau0 = {sc.controller.tau0:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


# -- compare -----------------------------------------------------------------

def cmd_compare(args) -> int:
    code = _precheck(args)
    if code:
        return code
    schemes = [control.normalize_scheme(s) for s in args.schemes.split(",") if s.strip()]
    if not schemes:
        raise ConfigError("no schemes requested")
    out = Path(args.out) if args.out else default_out() / "compare"
    out.mkdir(parents=True, exist_ok=True)
    rows, series, failed = [], {}, []
    for scheme in schemes:
        try:
            sc = _scenario_from_args(args, scheme=scheme)
            trace = run(sc)
        except (DivergenceError, DomainError, ConfigError) as exc:
            log.error("%s: %s", scheme, exc)
            failed.append(scheme)
            rows.append({"scheme": scheme, "status": f"failed: {exc}"})
            continue
        rep = analyze(trace)
        series[scheme] = (trace.times, trace.error)
        sub = out / scheme
        sub.mkdir(exist_ok=True)
        trace.write_csv(sub / "trace.csv")
        trace.write_json(sub / "trace.json")
        rows.append({
            "scheme": scheme,
            "status": "ok",
            "final_error": trace.final_error(),
            "rate": rep["fit"].get("rate"),
            "r2": rep["fit"].get("r_squared"),
            "events": sum(trace.event_counts()) if scheme != "continuous" else None,
            "tau0": sc.controller.tau0,
        })
    _write_joined(out / "errors.csv", series)
    (out / "comparison.json").write_text(json.dumps(rows, indent=2))
    print(analysis.summary_table(rows, ["scheme", "status", "final_error", "rate", "r2", "events", "tau0"]))
    print(f"wrote {out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _write_joined(path, series: dict) -> None:
    """time column plus one error column per scheme; blank where a scheme has no sample."""
    keys = sorted({round(float(t), 12) for times, _ in series.values() for t in times})
    cols = {s: dict(zip((round(float(t), 12) for t in times), err)) for s, (times, err) in series.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"error_{s}" for s in series])
        for t in keys:
            w.writerow([repr(t)] + [repr(float(cols[s][t])) if t in cols[s] else "" for s in series])


# -- batch -------------------------------------------------------------------

def cmd_batch(args) -> int:
    code = _precheck(args)
    if code:
        return code
    base = build_scenario(args.scenario).seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else default_out() / "batch"
    out.mkdir(parents=True, exist_ok=True)
    scenarios = [
        build_scenario(args.scenario, scheme=args.scheme, seed=base + k, horizon=args.horizon, dt=args.dt)
        for k in range(args.runs)
    ]
    results = run_batch(scenarios)
    rows = []
    for sc, res in zip(scenarios, results):
        if isinstance(res, Exception):
            rows.append({"seed": sc.seed, "status": type(res).__name__, "final_error": None, "events": None})
        else:
            rows.append({
                "seed": sc.seed,
                "status": "ok",
                "final_error": res.final_error(),
                "events": sum(res.event_counts()) if res.scheme != "continuous" else None,
            })
    with open(out / "batch.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["seed"])
        w.writeheader()
        w.writerows(rows)
    print(analysis.summary_table(rows, ["seed", "status", "final_error", "events"]))
    return EXIT_PARTIAL if any(r["status"] != "ok" for r in rows) else EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="piconsensus", description="Distributed PI optimal output consensus simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        p.add_argument("scenario", help="scenario file or built-in name (example1)")
        if scheme:
            p.add_argument("--scheme", choices=["continuous", "periodic", "event"])
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./runs)")

    p = sub.add_parser("validate", help="check Assumptions 1-4 and controller bounds")
    p.add_argument("scenario")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one scheme and write trace + report")
    common(p)
    p.add_argument("--delta", type=float, help="sampling lower bound for sampled schemes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several schemes on one seed")
    common(p, scheme=False)
    p.add_argument("--schemes", default="continuous,periodic,event")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("batch", help="repeat one scheme over consecutive seeds")
    common(p)
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(func=cmd_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, AssumptionError, GraphError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, DomainError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
