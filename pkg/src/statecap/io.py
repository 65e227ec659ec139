"""
Experiment configuration, task orchestration and result files.

A configuration is a JSON document with a channel family, a state
process, a task name, task parameters and an output section.  Results are
written as deterministic JSON (sorted keys, floats with 17 significant
digits, infinities as the strings "inf" and "-inf") and CSV tables that
start with a metadata comment carrying the SHA-256 of the configuration.
"""
import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass

import jsonschema
import numpy as np

from . import channel as ch
from . import first_order, oneshot, second_order
from . import states as st
from .errors import SchemaError, StatecapError, TaskError
from .numerics import (berry_esseen_constant, dispersion_bound,
                       lipschitz_constant, third_moment_bound)

TASKS = ("first-order", "second-order", "bounds", "audit", "constants")
MC_TASKS = ("first-order", "second-order", "audit")

_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_DIST = {"type": "array", "items": _PROB, "minItems": 1}
_MATRIX = {"type": "array", "items": _DIST, "minItems": 1}
_NGRID = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

CHANNEL_SCHEMA = {
    "type": "object",
    "required": ["states"],
    "additionalProperties": False,
    "properties": {
        "labels": {"type": "array", "items": {"type": "string"}},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "states": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["type"],
                "additionalProperties": False,
                "properties": {
                    "type": {"enum": ["bsc", "bec", "z", "identity", "matrix"]},
                    "p": _PROB,
                    "k": {"type": "integer", "minimum": 1},
                    "rows": _MATRIX,
                },
                "allOf": [
                    {"if": {"properties": {"type": {"enum": ["bsc", "bec", "z"]}}},
                     "then": {"required": ["p"]}},
                    {"if": {"properties": {"type": {"const": "identity"}}},
                     "then": {"required": ["k"]}},
                    {"if": {"properties": {"type": {"const": "matrix"}}},
                     "then": {"required": ["rows"]}},
                ],
            },
        },
    },
}

PROCESS_SCHEMA = {
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {"enum": ["mixed", "iid", "block_iid", "markov", "alternating"]},
        "q": _DIST,
        "pi": _DIST,
        "nu": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "matrix": _MATRIX,
        "init": _DIST,
        "sa": {"type": "integer", "minimum": 0},
        "sb": {"type": "integer", "minimum": 0},
        "k_start": {"type": "integer", "minimum": 0},
    },
    "allOf": [
        {"if": {"properties": {"model": {"const": "mixed"}}}, "then": {"required": ["q"]}},
        {"if": {"properties": {"model": {"const": "iid"}}}, "then": {"required": ["pi"]}},
        {"if": {"properties": {"model": {"const": "block_iid"}}},
         "then": {"required": ["pi", "nu"]}},
        {"if": {"properties": {"model": {"const": "markov"}}}, "then": {"required": ["matrix"]}},
        {"if": {"properties": {"model": {"const": "alternating"}}},
         "then": {"required": ["sa", "sb"]}},
    ],
}

_EPS_CLOSED = {"oneOf": [_PROB, {"type": "array", "items": _PROB, "minItems": 1}]}
_OPEN = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_EPS_OPEN = {"oneOf": [_OPEN, {"type": "array", "items": _OPEN, "minItems": 1}]}

PARAMETER_SCHEMAS = {
    "first-order": {
        "type": "object",
        "additionalProperties": False,
        "required": ["eps"],
        "properties": {"eps": _EPS_CLOSED, "n_grid": _NGRID,
                       "mode": {"enum": ["exact", "mc", "auto"]},
                       "budget": {"type": "integer", "minimum": 1},
                       "seed": {"type": "integer", "minimum": 0}},
    },
    "second-order": {
        "type": "object",
        "additionalProperties": False,
        "required": ["eps"],
        "properties": {"eps": _EPS_OPEN,
                       "beta": {"type": "number", "minimum": 0.5, "exclusiveMaximum": 1},
                       "n_grid": _NGRID,
                       "mode": {"enum": ["exact", "mc", "auto"]},
                       "budget": {"type": "integer", "minimum": 1},
                       "seed": {"type": "integer", "minimum": 0},
                       "tol": {"type": "number", "exclusiveMinimum": 0},
                       "audit": {"type": "boolean"}},
    },
    "bounds": {
        "type": "object",
        "additionalProperties": False,
        "required": ["n"],
        "properties": {"n": {"type": "integer", "minimum": 1, "maximum": 64},
                       "eps": _EPS_OPEN,
                       "logM": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                       "delta": {"type": "number", "exclusiveMinimum": 0},
                       "mode": {"enum": ["exact", "mc", "auto"]},
                       "seed": {"type": "integer", "minimum": 0}},
        "oneOf": [{"required": ["eps"]}, {"required": ["logM"]}],
    },
    "audit": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"n_grid": _NGRID,
                       "mode": {"enum": ["exact", "mc", "auto"]},
                       "budget": {"type": "integer", "minimum": 1},
                       "seed": {"type": "integer", "minimum": 0}},
    },
    "constants": {"type": "object", "additionalProperties": False, "properties": {}},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["channel", "task"],
    "additionalProperties": False,
    "properties": {
        "channel": CHANNEL_SCHEMA,
        "process": PROCESS_SCHEMA,
        "task": {"enum": list(TASKS)},
        "parameters": {"type": "object"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"},
                           "formats": {"type": "array",
                                       "items": {"enum": ["json", "csv"]}}},
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    chan: ch.StateChannel
    proc: object
    task: str
    parameters: dict
    out_dir: str
    formats: tuple

    @property
    def sha256(self):
        return config_hash(self.raw)


# ---------------------------------------------------------------------------
# deterministic JSON
# ---------------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(obj[k], indent, level + 1)}"
                 for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if math.isnan(obj):
            return '"nan"'
        if math.isinf(obj):
            return '"inf"' if obj > 0 else '"-inf"'
        text = format(obj, ".17g")
        if not any(c in text for c in ".en"):
            text += ".0"
        return text
    return json.dumps(obj)


def dumps(obj, indent=2):
    """Deterministic JSON text: sorted keys and 17 significant digits."""
    return _encode(_plain(obj), indent, 0) + "\n"


def _revive(obj):
    if isinstance(obj, dict):
        return {k: _revive(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_revive(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def loads(text):
    """Inverse of ``dumps``: the strings "inf", "-inf", "nan" become floats."""
    return _revive(json.loads(text))


def _analysis_part(raw):
    """The config without its output section, which does not affect results."""
    return {k: v for k, v in raw.items() if k != "output"}


def config_hash(raw):
    return hashlib.sha256(json.dumps(_analysis_part(raw), sort_keys=True,
                                     separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def build_channel(cfg):
    dmcs = []
    for item in cfg["states"]:
        kind = item["type"]
        if kind == "bsc":
            dmcs.append(ch.bsc(item["p"]))
        elif kind == "bec":
            dmcs.append(ch.bec(item["p"]))
        elif kind == "z":
            dmcs.append(ch.z_channel(item["p"]))
        elif kind == "identity":
            dmcs.append(ch.identity_channel(item["k"]))
        else:
            dmcs.append(ch.Dmc(np.asarray(item["rows"], dtype=float)))
    return ch.build_state_channel(dmcs, tol=cfg.get("tol", 1e-10),
                                  state_labels=cfg.get("labels"),
                                  require_dispersion=False)


def build_process(cfg, n_states):
    model = cfg["model"]
    if model == "mixed":
        proc = st.Mixed(cfg["q"])
    elif model == "iid":
        proc = st.Iid(cfg["pi"])
    elif model == "block_iid":
        proc = st.BlockIid(cfg["pi"], cfg["nu"])
    elif model == "markov":
        proc = st.Markov(np.asarray(cfg["matrix"], dtype=float), cfg.get("init"))
    else:
        proc = st.Alternating(cfg["sa"], cfg["sb"], n_states=n_states,
                              k_start=cfg.get("k_start", 1))
    if proc.n_states != n_states:
        raise SchemaError(f"process has {proc.n_states} states, channel has {n_states}")
    return proc


def validate(raw):
    """Check a raw configuration; raises SchemaError with the first problem."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
        task = raw["task"]
        jsonschema.validate(raw.get("parameters", {}), PARAMETER_SCHEMAS[task])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from None
    if task != "constants" and "process" not in raw:
        raise SchemaError(f"task {task!r} needs a process section")
    params = raw.get("parameters", {})
    if task in MC_TASKS and params.get("mode", "auto") != "exact" and "seed" not in params:
        raise SchemaError(f"task {task!r} may sample; parameters.seed is required")


def load_config(source, overrides=None):
    """Validate and build an ExperimentConfig from a path, JSON text or dict.

    ``overrides`` is merged into ``parameters`` (and may carry "process"
    and "output_dir") before validation.
    """
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = source
        if not str(source).lstrip().startswith("{"):
            try:
                with open(source) as fh:
                    text = fh.read()
            except OSError as exc:
                raise SchemaError(f"cannot read config: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("config must be a JSON object")
    overrides = dict(overrides or {})
    if "process" in overrides:
        raw["process"] = overrides.pop("process")
    out_dir = overrides.pop("output_dir", None)
    if "task" in overrides:
        raw["task"] = overrides.pop("task")
    if overrides:
        raw.setdefault("parameters", {}).update(overrides)
    if out_dir is not None:
        raw.setdefault("output", {})["dir"] = out_dir
    validate(raw)
    try:
        chan = build_channel(raw["channel"])
        proc = (build_process(raw["process"], chan.n_states)
                if "process" in raw else None)
    except SchemaError:
        raise
    except StatecapError as exc:
        raise SchemaError(f"invalid channel or process: {exc}") from None
    out = raw.get("output", {})
    return ExperimentConfig(raw, chan, proc, raw["task"], raw.get("parameters", {}),
                            out.get("dir", "."), tuple(out.get("formats", ["json", "csv"])))


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

def _eps_list(value):
    return [value] if isinstance(value, (int, float)) else list(value)


def _csv(header, rows, meta):
    lines = ["# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())),
             ",".join(header)]
    for row in rows:
        lines.append(",".join(format(v, ".17g") if isinstance(v, float) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


def _task_first_order(cfg, meta):
    p = cfg.parameters
    grid = tuple(p.get("n_grid", first_order.DEFAULT_N_GRID))
    kw = dict(mode=p.get("mode", "auto"), budget=p.get("budget", 100_000),
              seed=p.get("seed", 0))
    reports = [first_order.eps_capacity(cfg.proc, cfg.chan, e, grid, **kw).to_dict()
               for e in _eps_list(p["eps"])]
    rows = []
    for i, n in enumerate(grid):
        curve = first_order.j_cdf(cfg.proc, cfg.chan, n, mode=kw["mode"],
                                  budget=kw["budget"], seed=kw["seed"] + i)
        rows += [(n, r, v) for r, v in curve.points]
    return ({"reports": reports},
            {"cdf": _csv(["n", "rate_bits", "cdf"], rows, meta)})


def _task_second_order(cfg, meta):
    p = cfg.parameters
    grid = tuple(p.get("n_grid", first_order.DEFAULT_N_GRID))
    beta = p.get("beta", 0.5)
    results, rows = [], []
    for e in _eps_list(p["eps"]):
        res = second_order.lambda_solve(e, beta, cfg.proc, cfg.chan, grid,
                                        tol=p.get("tol", 1e-6), mode=p.get("mode", "auto"),
                                        budget=p.get("budget", 100_000),
                                        seed=p.get("seed", 0))
        results.append(res.to_dict())
        rows += [(e, n, v) for n, v in sorted(res.per_n.items())]
    tables = {"lambda": _csv(["eps", "n", "lambda_bits"], rows, meta)}
    if p.get("audit", False):
        table = second_order.approximation_gap_audit(
            cfg.proc, cfg.chan, grid, mode=p.get("mode", "auto"),
            budget=p.get("budget", 100_000), seed=p.get("seed", 0))
        tables["audit"] = table.to_csv(meta)
    return {"results": results}, tables


def _task_bounds(cfg, meta):
    p = cfg.parameters
    n, delta = p["n"], p.get("delta")
    payload, rows = {}, []
    if "eps" in p:
        payload["reports"] = [oneshot.bound_report(cfg.chan, cfg.proc, n, e, delta=delta).to_dict()
                              for e in _eps_list(p["eps"])]
        top = n * math.log2(cfg.chan.input_size)
        sweep = [float(v) for v in np.linspace(0.0, top, 4 * n + 1)]
    else:
        sweep = list(p["logM"])
    for logm in sweep:
        rows.append((float(logm),
                     oneshot.feinstein_eps(cfg.chan, cfg.proc, n, logm),
                     oneshot.spectrum_converse_eps(cfg.chan, cfg.proc, n, logm, delta)))
    payload["sandwich"] = [{"logM": a, "achievability_eps": b, "converse_eps": c}
                           for a, b, c in rows]
    payload["units"] = {"logM": "bits"}
    return payload, {"sandwich": _csv(["logM", "achievability_eps", "converse_eps"],
                                      rows, meta)}


def _task_audit(cfg, meta):
    p = cfg.parameters
    grid = tuple(p.get("n_grid", (64, 128, 256, 512, 1024, 2048, 4096)))
    table = second_order.approximation_gap_audit(
        cfg.proc, cfg.chan, grid, mode=p.get("mode", "auto"),
        budget=p.get("budget", 100_000), seed=p.get("seed", 0))
    payload = {"n": list(table.n), "gap1": list(table.gap1), "gap2": list(table.gap2),
               "slope1": table.slope1, "slope2": table.slope2,
               "units": {"gap1": "probability", "gap2": "probability"}}
    return payload, {"audit": table.to_csv(meta)}


def constants_table(chan):
    y = chan.output_size
    out = {"v_plus": dispersion_bound(y), "l_plus": third_moment_bound(y),
           "v_min": chan.v_min, "channel": chan.to_dict(),
           "units": {"v_plus": "bits^2", "l_plus": "bits^3", "v_min": "bits^2",
                     "be_constant": "dimensionless", "d1": "1/bits"}}
    if chan.v_min > 0:
        out["be_constant"] = berry_esseen_constant(chan)
        out["d1"] = lipschitz_constant(chan.v_min)
    else:
        out["be_constant"] = math.inf
        out["d1"] = math.inf
    return out


def _task_constants(cfg, meta):
    payload = constants_table(cfg.chan)
    rows = [(lab, s.capacity_bits, s.v_cond, s.v_uncond, s.third_moment)
            for lab, s in zip(cfg.chan.states.labels, cfg.chan.summaries)]
    return payload, {"states": _csv(["state", "capacity_bits", "v_cond_bits2",
                                     "v_uncond_bits2", "third_moment_bits3"], rows, meta)}


_RUNNERS = {"first-order": _task_first_order, "second-order": _task_second_order,
            "bounds": _task_bounds, "audit": _task_audit, "constants": _task_constants}


def execute(cfg):
    """Run the configured task; returns (result dict, {name: csv text})."""
    meta = {"config_sha256": cfg.sha256, "task": cfg.task}
    try:
        payload, tables = _RUNNERS[cfg.task](cfg, meta)
    except StatecapError as exc:
        raise TaskError(f"{cfg.task} failed: {type(exc).__name__}: {exc}") from exc
    result = {"task": cfg.task, "config_sha256": cfg.sha256,
              "config": _analysis_part(cfg.raw), "result": payload}
    return result, tables


def run(cfg):
    """Execute and write artifacts; returns the list of written paths."""
    result, tables = execute(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = cfg.task.replace("-", "_")
    written = []
    if "json" in cfg.formats:
        path = os.path.join(cfg.out_dir, f"{stem}.json")
        with open(path, "w") as fh:
            fh.write(dumps(result))
        written.append(path)
    if "csv" in cfg.formats:
        for name, text in sorted(tables.items()):
            path = os.path.join(cfg.out_dir, f"{stem}_{name}.csv")
            with open(path, "w") as fh:
                fh.write(text)
            written.append(path)
    return written


def load_result(path):
    with open(path) as fh:
        return loads(fh.read())
