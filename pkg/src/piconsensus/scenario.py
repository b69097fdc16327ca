"""Scenario documents: schema, loading, and the built-in six-agent example."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import yaml

from . import costs as costs_mod
from .control import make_config, normalize_scheme
from .errors import ConfigError, ConsensusError
from .graph import build_graph
from .plant import AgentPlant, GainPair, check_gains, synthesize_gains
from .sim import Scenario

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1}
_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_box = {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}}

_TERM = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "quadratic"},
                "hessian": _matrix,
                "linear": _vector,
                "const": {"type": "number"},
            },
            "required": ["type", "hessian"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"const": "affine"}, "linear": _vector, "const": {"type": "number"}},
            "required": ["type", "linear"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"const": "log_sum_exp"}, "weights": _matrix, "offsets": _vector},
            "required": ["type", "weights"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"const": "log"}, "direction": _vector, "offset": {"type": "number"}},
            "required": ["type", "direction", "offset"],
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "graph": {
            "type": "object",
            "properties": {
                "nodes": {"type": "integer", "minimum": 1},
                "edges": {
                    "type": "array",
                    "items": {"type": "array", "prefixItems": [{"type": "integer"}, {"type": "integer"}, {"type": "number"}],
                              "minItems": 3, "maxItems": 3},
                },
            },
            "required": ["nodes", "edges"],
            "additionalProperties": False,
        },
        "plants": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "A": _matrix,
                    "B": _matrix,
                    "C": _matrix,
                    "gains": {
                        "type": "object",
                        "properties": {"k_alpha": _matrix, "k_beta": _matrix},
                        "required": ["k_alpha", "k_beta"],
                        "additionalProperties": False,
                    },
                    "x0": _vector,
                },
                "required": ["A", "B", "C"],
                "additionalProperties": False,
            },
        },
        "costs": {
            "type": "object",
            "properties": {
                "builtin": {"enum": ["example1"]},
                "functions": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {
                            "terms": {"type": "array", "items": _TERM, "minItems": 1},
                            "w": {"type": "number", "exclusiveMinimum": 0},
                            "m": {"type": "number", "minimum": 0},
                        },
                        "required": ["terms"],
                        "additionalProperties": False,
                    },
                },
                "constants_box": _box,
            },
            "oneOf": [{"required": ["builtin"]}, {"required": ["functions"]}],
            "additionalProperties": False,
        },
        "controller": {
            "type": "object",
            "properties": {
                "scheme": {"enum": ["continuous", "periodic", "event", "event-triggered"]},
                "xi": {"type": "number"},
                "kappa": {"type": "number"},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "w_bar": {"type": "number", "exclusiveMinimum": 0},
                "m_under": {"type": "number", "exclusiveMinimum": 0},
                "strict": {"type": "boolean"},
            },
            "required": ["scheme"],
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "record_every": {"type": "integer", "minimum": 1},
                "initial_box": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "y_star": _vector,
                "lambda_gamma": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["horizon", "dt"],
            "additionalProperties": False,
        },
    },
    "required": ["graph", "plants", "costs", "controller", "sim"],
    "additionalProperties": False,
}


class ScenarioParseError(ConsensusError, ValueError):
    """The scenario document is unreadable or does not match the schema."""


# -- the reference example -------------------------------------------------

_E1_A = [[[1, 0], [0, 1]], [[0, 1], [-2, 1]], [[1, 1, 0], [0, 1, 1], [1, 0, 1]]]
_E1_B = [[[0, 1], [1, -2]], [[1, 1], [1, 0]], [[1, 0], [0, 1], [2, 0]]]
_E1_C = [[[3, 0], [0, 1]], [[2, 2], [-1, 1]], [[1, -1, 2], [1, 2, 2]]]

# explicit gains for agents 3-6; the printed values are rounded, and the printed
# K_alpha of agents 3-4 does not solve C B K_alpha = C A, so the exact solutions are used
_E1_GAINS = [
    None,
    {"k_alpha": [[-2.0, 1.0], [2.0, 0.0]], "k_beta": [[0.25, 0.5], [0.0, -1.0]]},
    {"k_alpha": [[0.6, 0.2, 0.4], [0.0, 1.0, 1.0]], "k_beta": [[2 / 15, 1 / 15], [-1 / 3, 1 / 3]]},
]


def _e1_plant(k: int) -> dict:
    p = {"A": _E1_A[k // 2], "B": _E1_B[k // 2], "C": _E1_C[k // 2]}
    if _E1_GAINS[k // 2] is not None:
        p["gains"] = copy.deepcopy(_E1_GAINS[k // 2])
    return p


EXAMPLE1 = {
    "name": "example1",
    "description": (
        "Six heterogeneous agents, two-dimensional outputs, unit edge weights. The original topology figure is "
        "not recoverable, so a 6-ring is used; y* does not depend on it. w_bar is the sampled gradient-Lipschitz "
        "estimate of f2 over [-10,10]x[-2,10]; m_under is the smallest strong-convexity constant among the "
        "costs that have one (f1, f6). f2, f3 and f5 are not strongly convex, so both bounds are nominal. "
        "Seed 2 keeps agent 5 inside the domain of ln(y_b + 3) under all three schemes. delta = 0.2 exceeds "
        "the periodic bound tau0, so bound checks are advisory (strict: false)."
    ),
    "graph": {"nodes": 6, "edges": [[i, (i + 1) % 6, 1.0] for i in range(6)]},
    "plants": [_e1_plant(k) for k in range(6)],
    "costs": {"builtin": "example1", "constants_box": [[-10, 10], [-2, 10]]},
    "controller": {"scheme": "continuous", "delta": 0.2, "w_bar": 58.03, "m_under": 2.0, "strict": False},
    "sim": {"horizon": 60, "dt": 0.001, "seed": 2, "record_every": 10, "initial_box": [-10, 10], "lambda_gamma": 1.0},
}

BUILTINS = {"example1": EXAMPLE1}


def example1_document() -> dict:
    return copy.deepcopy(EXAMPLE1)


# -- loading -----------------------------------------------------------------

def load_document(source) -> dict:
    """Read a scenario from a built-in name, a YAML/JSON path, or a dict."""
    if isinstance(source, dict):
        doc = copy.deepcopy(source)
    elif str(source) in BUILTINS and not Path(str(source)).exists():
        doc = copy.deepcopy(BUILTINS[str(source)])
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioParseError(f"cannot read scenario {path}: {exc}") from exc
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
            raise ScenarioParseError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    if isinstance(doc, dict) and {"scenario", "scheme", "events"} <= set(doc):
        doc = copy.deepcopy(doc["scenario"])  # a trace sidecar: rerun what produced it
    check_schema(doc)
    return doc


def check_schema(doc) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ScenarioParseError(f"scenario section {where}: {err.message}")


def _cost_from_spec(spec: dict, index: int):
    terms = []
    for term in spec["terms"]:
        kind = term["type"]
        if kind == "quadratic":
            terms.append(costs_mod.quadratic(term["hessian"], term.get("linear"), term.get("const", 0.0)))
        elif kind == "affine":
            terms.append(costs_mod.affine(term["linear"], term.get("const", 0.0)))
        elif kind == "log_sum_exp":
            terms.append(costs_mod.log_sum_exp(term["weights"], term.get("offsets")))
        elif kind == "log":
            terms.append(costs_mod.log_barrier(term["direction"], term["offset"]))
    try:
        return costs_mod.combine(terms, spec.get("w"), spec.get("m"), name=f"f{index + 1}", spec=spec)
    except ValueError as exc:
        raise ConfigError(f"costs/functions/{index}: {exc}") from exc


def build_costs(section: dict) -> costs_mod.CostEnsemble:
    if "builtin" in section:
        return costs_mod.example1_costs()
    return costs_mod.CostEnsemble(tuple(_cost_from_spec(s, i) for i, s in enumerate(section["functions"])))


def ensemble_constants(ens, box, samples: int = 2000, seed: int = 0) -> dict:
    """Per-cost (w, m): analytic where attached, otherwise sampled over ``box``.

    Returns the per-cost table plus w_bar (max w) and m_under (min m over the
    costs whose m is positive). Costs with m <= 0 fail strong convexity and
    are listed in ``not_strongly_convex``.
    """
    rows = []
    for i, c in enumerate(ens.costs):
        w, m, source = c.lipschitz_w, c.strong_convexity_m, "analytic"
        if w is None or m is None:
            w_est, m_est = costs_mod.estimate_constants(c, box, samples=samples, seed=seed + i)
            w = w if w is not None else w_est
            m = m if m is not None else m_est
            source = "estimated"
        rows.append({"cost": c.name or f"f{i + 1}", "w": float(w), "m": float(m), "source": source})
    positive = [r["m"] for r in rows if r["m"] > 1e-9]
    return {
        "per_cost": rows,
        "w_bar": max(r["w"] for r in rows),
        "m_under": min(positive) if positive else None,
        "not_strongly_convex": [r["cost"] for r in rows if r["m"] <= 1e-9],
    }


def default_box(doc: dict, q: int) -> list:
    if "constants_box" in doc["costs"]:
        return doc["costs"]["constants_box"]
    lo, hi = doc["sim"].get("initial_box", [-10, 10])
    return [[lo, hi]] * q


def build_scenario(
    source,
    scheme: Optional[str] = None,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    dt: Optional[float] = None,
    delta: Optional[float] = None,
) -> Scenario:
    """Assemble a runnable Scenario; keyword arguments override the document."""
    doc = load_document(source)
    if scheme is not None:
        doc["controller"]["scheme"] = normalize_scheme(scheme)
    if seed is not None:
        doc["sim"]["seed"] = int(seed)
    if horizon is not None:
        doc["sim"]["horizon"] = float(horizon)
    if dt is not None:
        doc["sim"]["dt"] = float(dt)
    if delta is not None:
        doc["controller"]["delta"] = float(delta)

    g = doc["graph"]
    graph = build_graph(g["nodes"], [tuple(e) for e in g["edges"]])
    plants, gains, x0 = [], [], []
    for k, p in enumerate(doc["plants"]):
        try:
            plant = AgentPlant(p["A"], p["B"], p["C"])
        except ValueError as exc:
            raise ConfigError(f"plants/{k}: {exc}") from exc
        plants.append(plant)
        if "gains" in p:
            gains.append(check_gains(plant, GainPair(p["gains"]["k_alpha"], p["gains"]["k_beta"])))
        else:
            gains.append(None)
        x0.append(p.get("x0"))
    ens = build_costs(doc["costs"])

    ctl = doc["controller"]
    sch = normalize_scheme(ctl["scheme"])
    w_bar, m_under = ctl.get("w_bar"), ctl.get("m_under")
    if w_bar is None or m_under is None:
        est = ensemble_constants(ens, default_box(doc, ens.dim))
        w_bar = est["w_bar"] if w_bar is None else w_bar
        m_under = est["m_under"] if m_under is None else m_under
        if m_under is None:
            raise ConfigError("no cost is strongly convex; supply controller.m_under explicitly")
    cfg = make_config(
        sch,
        graph,
        w_bar,
        m_under,
        xi=ctl.get("xi"),
        kappa=ctl.get("kappa") if sch == "event" else None,
        delta=ctl.get("delta") if sch != "continuous" else None,
        strict=ctl.get("strict", True),
    )

    sim = doc["sim"]
    explicit = [x is not None for x in x0]
    if any(explicit) and not all(explicit):
        raise ConfigError("either every plant or none must give x0")
    resolved = [g_ if g_ is not None else synthesize_gains(p) for g_, p in zip(gains, plants)]
    return Scenario(
        graph=graph,
        plants=plants,
        costs=ens,
        controller=cfg,
        horizon=float(sim["horizon"]),
        dt=float(sim["dt"]),
        seed=int(sim.get("seed", 0)),
        record_every=int(sim.get("record_every", 1)),
        gains=resolved,
        initial_box=tuple(sim.get("initial_box", (-10.0, 10.0))),
        initial_states=x0 if all(explicit) else None,
        y_star=None if "y_star" not in sim else np.asarray(sim["y_star"], dtype=float),
        lambda_gamma=float(sim.get("lambda_gamma", 1.0)),
        name=doc.get("name", ""),
        document=doc,
    )


def dump_document(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2))
