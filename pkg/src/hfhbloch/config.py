"""Run configuration: schema, defaults and construction of solver objects.

Configs are YAML or JSON documents.  Band numbers in configs are 1-based,
matching the band CSV; everything inside the library is 0-based.
"""
from __future__ import annotations

import copy
import json

import jsonschema
import numpy as np
import yaml

from .bloch import BlochProblem, PhysicsMode, PlaneWaveBasis
from .lattice import LatticeSpec, vertex
from .medium import Inclusion, MediumSpec

TASKS = ("bands", "hfh", "dirac-tune", "effective", "decay")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_vertex = {"type": "string", "enum": ["G", "Gamma", "X", "M", "R"]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "task": {"type": "string", "enum": list(TASKS)},
    "lattice": _obj({"dimension": {"type": "integer", "enum": [2, 3]}, "half_pitch_l": _pos}),
    "medium": _obj({
        "background_eps": _pos,
        "supercell_height": {"type": ["number", "null"], "minimum": 1},
        "inclusions": {"type": "array", "items": _obj({
            "shape": {"type": "string", "enum": ["disk", "sphere"]},
            "radius": _pos,
            "eps": _pos,
            "center": {"type": "array", "items": _num},
        }, required=("shape", "radius", "eps"))},
    }),
    "mode": _obj({"kind": {"type": "string", "enum": ["scalar_h3", "scalar_e3", "quasi2d", "vector3d"]},
                  "beta_l": {"type": "number", "minimum": 0}}, required=("kind",)),
    "basis": _obj({"cutoff": {"type": ["integer", "null"], "minimum": 1},
                   "z_cutoff": {"type": ["integer", "null"], "minimum": 1},
                   "factorization": {"type": "string", "enum": ["direct", "inverse"]}}),
    "bands": _obj({
        "samples_per_segment": {"type": "integer", "minimum": 2},
        "n_bands": _int1,
        "overlay": _obj({"vertices": {"type": "array", "items": _vertex},
                         "band": _int1, "kappa_max": _pos, "cluster_tol": _pos}),
    }),
    "hfh": _obj({"vertex": _vertex, "band": _int1, "n_bands": {"type": ["integer", "null"], "minimum": 1},
                 "cluster_tol": _pos, "fd_oracle": {"type": "boolean"}, "fd_step": _pos}),
    "dirac_tune": _obj({"parameter": {"type": "string", "enum": ["beta_l", "radius", "eps"]},
                        "range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                        "vertex": _vertex,
                        "bands": {"type": "array", "items": _int1, "minItems": 2, "maxItems": 2},
                        "gap_tol": _pos, "n_scan": {"type": "integer", "minimum": 3},
                        "cluster_tol": _pos}),
    "effective": _obj({"oracle": {"type": "boolean"}}),
    "decay": _obj({"vertex": _vertex, "band": _int1, "omega": _pos,
                   "direction": {"type": "integer", "minimum": 0, "maximum": 2},
                   "cluster_tol": _pos}),
    "output": _obj({"dir": {"type": "string"}}),
    "seed": {"type": "integer", "minimum": 0},
    "workers": _int1,
}, required=("medium", "mode"))

DEFAULTS = {
    "lattice": {"dimension": 2, "half_pitch_l": 1.0},
    "medium": {"background_eps": 1.0, "supercell_height": None, "inclusions": []},
    "mode": {"beta_l": 0.0},
    "basis": {"cutoff": None, "z_cutoff": None, "factorization": "inverse"},
    "bands": {"samples_per_segment": 11, "n_bands": 5, "overlay": {"vertices": [], "band": 1,
                                                                    "kappa_max": 0.3, "cluster_tol": 1e-4}},
    "hfh": {"vertex": "X", "band": 1, "n_bands": None, "cluster_tol": 1e-4, "fd_oracle": True,
            "fd_step": 0.01 * np.pi / 2},
    "dirac_tune": {"parameter": "beta_l", "range": [0.5, 1.5], "vertex": "M", "bands": [3, 4],
                   "gap_tol": 1e-4, "n_scan": 21, "cluster_tol": 1e-3},
    "effective": {"oracle": True},
    "decay": {"vertex": "X", "band": 1, "omega": 1.0, "direction": 0, "cluster_tol": 1e-4},
    "output": {"dir": "out"},
    "seed": 0,
    "workers": 1,
}


class ConfigError(ValueError):
    pass


def load(path) -> dict:
    with open(path) as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)  # YAML is a superset of JSON
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(data: dict) -> None:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def resolve(data: dict, task: str | None = None, **overrides) -> dict:
    """Validate, fill defaults and apply command-line overrides."""
    validate(data)
    cfg = _merge(DEFAULTS, data)
    if task is not None:
        if "task" in data and data["task"] != task:
            raise ConfigError(f"config is for task {data['task']!r}, not {task!r}")
        cfg["task"] = task
    if cfg.get("task") not in TASKS:
        raise ConfigError("no task given")
    for key, val in overrides.items():
        if val is None:
            continue
        if key == "cutoff":
            cfg["basis"]["cutoff"] = val
        elif key == "out":
            cfg["output"]["dir"] = val
        else:
            cfg[key] = val
    if cfg["basis"]["cutoff"] is None:
        cfg["basis"]["cutoff"] = 12 if cfg["lattice"]["dimension"] == 2 else 6
    validate(cfg)
    return cfg


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def build_problem(cfg: dict) -> BlochProblem:
    dim = cfg["lattice"]["dimension"]
    LatticeSpec(dim, cfg["lattice"]["half_pitch_l"])
    m = cfg["medium"]
    incs = tuple(Inclusion(i["shape"], i["radius"], i["eps"], tuple(i.get("center", ()))) for i in m["inclusions"])
    medium = MediumSpec(m["background_eps"], incs, dim, m["supercell_height"])
    mode = PhysicsMode(cfg["mode"]["kind"], cfg["mode"]["beta_l"])
    b = cfg["basis"]
    basis = PlaneWaveBasis(dim, b["cutoff"], height=medium.supercell_height, z_cutoff=b["z_cutoff"])
    return BlochProblem(medium, mode, basis, b["factorization"])


def vertex_K(problem: BlochProblem, label: str) -> np.ndarray:
    """Bloch vector of a vertex in the problem's Bloch dimensions."""
    return vertex(label, problem.n_bloch).k
