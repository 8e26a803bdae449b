"""Run configuration: YAML with a schema version, defaults for every field, strict keys.

Unknown keys are rejected with their dotted path and source line.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from .action import ActionParams
from .environment import Dist, EnvironmentConfig
from .minimizers import EL_TOL, DomainPolicy

SCHEMA_VERSION = 1

EXPERIMENTS = ("env-sample", "evolve", "minimizer", "shape", "concentration", "busemann",
               "shocks", "pullback", "metric-check")


class ConfigError(ValueError):
    def __init__(self, msg: str, path: str = "", line: int | None = None):
        where = path or "<root>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


_DIST = {"kind": "uniform", "param": None}

_TOP = {
    "schema_version": SCHEMA_VERSION,
    "environment": {"intensity": 1.0, "xi_dist": _DIST, "kappa_dist": _DIST, "bump": "quartic"},
    "grid": {"h": 2.0**-6, "r_width": 4.0, "margin": 8.0},
    "action": {"p": 1.0, "el_tol": EL_TOL},
    "experiment": {"kind": "shape", "params": {}, "seeds": None, "seed_count": 1, "seed_start": 0},
}

_INITIAL = {"form": "zero", "params": None, "slopes": None}

# per-experiment parameters and defaults; keys defaulting to None take any value
PARAMS = {
    "env-sample": {"times": [0, 4], "cells": [-4, 4], "window": [-4.0, 4.0]},
    "evolve": {"initial": _INITIAL, "start": -32, "end": 0, "center": 0.0},
    "minimizer": {"mode": "linear", "v": 0.0, "start": -64, "end": [0, 0.0], "start_x": 0.0,
                  "refine": True},
    "shape": {"vs": [0.0, 0.5, 1.0], "n": 128, "diagnostics": True},
    "concentration": {"v": 0.0, "n": 256, "points": 20, "bootstrap": 400},
    "busemann": {"v": 0.0, "horizon": 256, "c": 1.0, "points": [[0, 0.0], [0, 1.0]],
                 "refine": True},
    "shocks": {"v": 0.0, "window": [-8.0, 8.0], "times": [0, 8], "horizon": 64},
    "pullback": {"initial": _INITIAL, "v": None, "ms": [-16, -32, -64, -128], "window": [-24.0, 24.0],
                 "ref_horizon": 512, "n_obs": 0, "N_max": 16},
    "metric-check": {"triples": 50, "N_max": 16},
}

# ---------------------------------------------------------------------------
# YAML with line marks

def _to_py(node, marks: dict, path: str):
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = str(_to_py(k, {}, ""))
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError("duplicate key", sub, k.start_mark.line + 1)
            out[key] = _to_py(v, marks, sub)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_py(v, marks, f"{path}[{i}]") for i, v in enumerate(node.value)]
    return yaml.constructor.SafeConstructor().construct_object(node, deep=True)


def load_yaml(text: str):
    """Parse YAML into plain Python plus a {dotted path: line} map."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", "",
                          mark.line + 1 if mark else None) from None
    marks: dict = {}
    if node is None:
        return {}, marks
    data = _to_py(node, marks, "")
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", "", 1)
    return data, marks


def _merge(defaults, given, marks, path):
    """Fill defaults into ``given``; reject keys not present in ``defaults``."""
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError("expected a mapping", path, marks.get(path))
    out = {}
    for k in given:
        sub = f"{path}.{k}" if path else k
        if k not in defaults:
            raise ConfigError(f"unknown key {k!r}", sub, marks.get(sub))
    for k, d in defaults.items():
        sub = f"{path}.{k}" if path else k
        if k not in given:
            out[k] = copy.deepcopy(d)
        elif isinstance(d, dict) and d:
            out[k] = _merge(d, given[k], marks, sub)
        else:
            out[k] = given[k]
    return out


# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    environment: EnvironmentConfig
    policy: DomainPolicy
    action: ActionParams
    el_tol: float
    kind: str
    params: dict
    seeds: list
    raw: dict = field(repr=False, default_factory=dict)

    def canonical(self) -> dict:
        """Resolved configuration as plain data (used for hashing and manifests)."""
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        """Seeds become ``seed, seed+1, ...`` keeping the count."""
        raw = copy.deepcopy(self.raw)
        cnt = len(self.seeds)
        raw["experiment"]["seeds"] = None
        raw["experiment"]["seed_start"] = int(seed)
        raw["experiment"]["seed_count"] = cnt
        return from_dict(raw)


def _num(v, path, marks, lo=None, hi=None, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path, marks.get(path))
    if integer and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", path, marks.get(path))
    if not math.isfinite(v):
        raise ConfigError("must be finite", path, marks.get(path))
    if positive and not v > 0:
        raise ConfigError("must be positive", path, marks.get(path))
    if lo is not None and v < lo or hi is not None and v > hi:
        raise ConfigError(f"must lie in [{lo}, {hi}]", path, marks.get(path))
    return int(v) if integer else float(v)


def from_dict(data: dict, marks: dict | None = None) -> RunConfig:
    marks = marks or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    raw = _merge(_TOP, data, marks, "")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {raw['schema_version']!r}", "schema_version",
                          marks.get("schema_version"))
    exp = raw["experiment"]
    kind = exp["kind"]
    if kind not in PARAMS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {', '.join(EXPERIMENTS)}",
                          "experiment.kind", marks.get("experiment.kind"))
    exp["params"] = _merge(PARAMS[kind], exp["params"], marks, "experiment.params")

    e = raw["environment"]
    try:
        env = EnvironmentConfig(
            intensity=_num(e["intensity"], "environment.intensity", marks, lo=0.0),
            xi_dist=Dist(**e["xi_dist"]),
            kappa_dist=Dist(**e["kappa_dist"]),
            bump=e["bump"],
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err), "environment", marks.get("environment")) from None
    g = raw["grid"]
    policy = DomainPolicy(_num(g["h"], "grid.h", marks, positive=True),
                          _num(g["r_width"], "grid.r_width", marks, positive=True),
                          _num(g["margin"], "grid.margin", marks, lo=0.0))
    a = raw["action"]
    action = ActionParams(_num(a["p"], "action.p", marks, lo=0.0, hi=1.0))
    el_tol = _num(a["el_tol"], "action.el_tol", marks, positive=True)

    if exp["seeds"] is not None:
        if not isinstance(exp["seeds"], list) or not exp["seeds"]:
            raise ConfigError("seeds must be a nonempty list", "experiment.seeds",
                              marks.get("experiment.seeds"))
        seeds = [_num(s, f"experiment.seeds[{i}]", marks, lo=0, integer=True)
                 for i, s in enumerate(exp["seeds"])]
    else:
        cnt = _num(exp["seed_count"], "experiment.seed_count", marks, lo=1, integer=True)
        s0 = _num(exp["seed_start"], "experiment.seed_start", marks, lo=0, integer=True)
        seeds = list(range(s0, s0 + cnt))
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct", "experiment.seeds", marks.get("experiment.seeds"))
    return RunConfig(env, policy, action, el_tol, kind, exp["params"], seeds, raw)


def loads(text: str) -> RunConfig:
    data, marks = load_yaml(text)
    return from_dict(data, marks)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def default_config(kind: str = "shape", **params) -> RunConfig:
    return from_dict({"experiment": {"kind": kind, "params": params}})
