"""JSON scenarios: schema, validation, defaults and the preset library."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .grid import Grid
from .hypotheses import derive_entropy
from .model import DriftSpec, EntropyParams, ModelError, Reaction, ReactionSpec, SystemSpec
from .scheme import NewtonControls, SchemeParams

SCHEMA_VERSION = 1
PRESETS = ("skt2", "skt3-db", "heat1", "ma2")


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` is a JSON pointer to the offending entry."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}


def _obj(props: dict, required=(), **extra) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False, **extra}


_term = {
    "oneOf": [
        _obj({"const": _num}, ["const"]),
        _obj({"cos": _obj({"amp": _num, "k": {"type": "array", "items": _nonneg}}, ["amp", "k"])}, ["cos"]),
        _obj({"gauss": _obj({"amp": _num, "center": _vec, "width": _pos}, ["amp", "center", "width"])}, ["gauss"]),
    ]
}

_reaction = {
    "oneOf": [
        _obj({"kind": {"const": "zero"}}, ["kind"]),
        _obj(
            {
                "kind": {"const": "mass_action"},
                "reactions": {
                    "type": "array",
                    "minItems": 1,
                    "items": _obj(
                        {"alpha": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                         "beta": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                         "kf": _pos, "kb": _pos},
                        ["alpha", "beta", "kf", "kb"],
                    ),
                },
            },
            ["kind", "reactions"],
        ),
        _obj({"kind": {"const": "lotka_volterra"}, "growth": _vec, "interaction": _mat},
             ["kind", "growth", "interaction"]),
    ]
}

_drift = {
    "oneOf": [
        _obj({"kind": {"const": "zero"}}, ["kind"]),
        _obj({"kind": {"const": "constant"}, "value": _mat}, ["kind", "value"]),
        _obj({"kind": {"const": "tabulated"}, "axes": {"type": "array", "items": _vec}, "values": {"type": "array"}},
             ["kind", "axes", "values"]),
    ]
}

SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "system": _obj(
            {
                "n": {"type": "integer", "minimum": 1},
                "a0": {"type": "array", "items": _nonneg, "minItems": 1},
                "a": {"type": "array", "items": {"type": "array", "items": _nonneg}, "minItems": 1},
                "entropy": {
                    "oneOf": [
                        {"enum": ["derive", "unit"]},
                        _obj({"pi": {"type": "array", "items": _pos}, "lambda": _vec}, ["pi", "lambda"]),
                    ]
                },
                "drift": _drift,
                "reaction": _reaction,
            },
            ["n", "a0", "a"],
        ),
        "grid": _obj(
            {"dim": {"enum": [1, 2]},
             "extents": {"type": "array", "items": _pos},
             "nodes": {"type": "array", "items": {"type": "integer", "minimum": 3}}},
            ["dim", "extents", "nodes"],
        ),
        "initial": {"type": "array", "items": {"type": "array", "items": _term, "minItems": 1}, "minItems": 1},
        "scheme": _obj(
            {
                "tau": _pos,
                "t_end": _nonneg,
                "eps": _nonneg,
                "delta": _nonneg,
                "m": {"enum": [1, 2, None]},
                "eps_cut": {"oneOf": [_pos, {"type": "null"}]},
                "max_halvings": {"type": "integer", "minimum": 0},
                "snapshot_stride": {"type": "integer", "minimum": 0},
                "newton": _obj(
                    {"tol": _pos, "max_iter": {"type": "integer", "minimum": 0},
                     "backtrack": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                     "min_step": _pos, "max_update": _pos},
                ),
            },
            ["tau", "t_end"],
        ),
        "audit": _obj(
            {
                "seed": {"type": "integer", "minimum": 0},
                "samples": {"type": "integer", "minimum": 1},
                "L_ladder": {"type": "array", "items": _pos},
                "L_relative": {"type": "boolean"},
                "xi_suite": {"type": "array", "items": {"enum": ["coord", "sum", "const"]}},
                "delta_ladder": {"type": "array", "items": _nonneg},
                "tau_ladder": {"type": "array", "items": _pos},
                "eps_equals_tau": {"type": "boolean"},
            },
        ),
        "output": {"type": "string"},
    },
    ["schema_version", "system", "grid", "initial", "scheme"],
)

DEFAULTS = {
    "name": "scenario",
    "system": {"entropy": "unit", "drift": {"kind": "zero"}, "reaction": {"kind": "zero"}},
    "scheme": {
        "eps": 0.0,
        "delta": 0.0,
        "m": None,
        "eps_cut": None,
        "max_halvings": 2,
        "snapshot_stride": 0,
        "newton": {"tol": 1e-10, "max_iter": 50, "backtrack": 0.5, "min_step": 1e-8, "max_update": 10.0},
    },
    "audit": {
        "seed": 0,
        "samples": 10_000,
        "L_ladder": [0.125, 0.25, 0.5, 1.0],
        "L_relative": True,
        "xi_suite": ["coord", "sum"],
        "delta_ladder": [],
        "tau_ladder": [],
        "eps_equals_tau": True,
    },
}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class Scenario:
    name: str
    raw: dict  # validated document with defaults filled in
    system: SystemSpec
    grid: Grid
    params: SchemeParams
    snapshot_stride: int
    audit: dict
    output: str | None

    @property
    def n(self) -> int:
        return self.system.n

    def initial_values(self, grid: Grid | None = None) -> np.ndarray:
        return evaluate_initial(self.raw["initial"], grid or self.grid)

    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_grid(self, nodes) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw["grid"]["nodes"] = list(nodes)
        return build_scenario(raw)


def evaluate_initial(spec: list, grid: Grid) -> np.ndarray:
    """Sum of constant, cosine and Gaussian terms per species."""
    x = grid.coords
    ext = np.asarray(grid.extents)
    out = np.zeros((len(spec), grid.size))
    for i, terms in enumerate(spec):
        for term in terms:
            if "const" in term:
                out[i] += term["const"]
            elif "cos" in term:
                k = np.asarray(term["cos"]["k"], dtype=float)
                if k.size != grid.dim:
                    raise ScenarioError(f"cosine term needs {grid.dim} wave numbers", f"/initial/{i}")
                out[i] += term["cos"]["amp"] * np.prod(np.cos(np.pi * k * x / ext), axis=1)
            else:
                g = term["gauss"]
                c = np.asarray(g["center"], dtype=float)
                if c.size != grid.dim:
                    raise ScenarioError(f"Gaussian center needs {grid.dim} coordinates", f"/initial/{i}")
                out[i] += g["amp"] * np.exp(-np.sum((x - c) ** 2, axis=1) / g["width"] ** 2)
    return out


def _validate(doc) -> None:
    validator = Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return
    err = errors[0]
    # oneOf failures: report the most specific branch message
    while err.context:
        err = min(err.context, key=lambda e: (-len(e.path), str(e.message)))
    pointer = "/" + "/".join(str(p) for p in err.absolute_path)
    raise ScenarioError(err.message, pointer if err.absolute_path else "")


def _reaction(doc: dict, n: int) -> ReactionSpec:
    kind = doc["kind"]
    if kind == "zero":
        return ReactionSpec.zero(n)
    if kind == "mass_action":
        reacts = []
        for r, item in enumerate(doc["reactions"]):
            if len(item["alpha"]) != n or len(item["beta"]) != n:
                raise ScenarioError(f"stoichiometry must have {n} entries", f"/system/reaction/reactions/{r}")
            reacts.append(Reaction(np.array(item["alpha"]), np.array(item["beta"]), item["kf"], item["kb"]))
        return ReactionSpec.mass_action(reacts)
    return ReactionSpec.lotka_volterra(doc["growth"], doc["interaction"])


def _drift(doc: dict, n: int, d: int) -> DriftSpec:
    kind = doc["kind"]
    if kind == "zero":
        return DriftSpec.zero(n, d)
    if kind == "constant":
        value = np.asarray(doc["value"], dtype=float)
        if value.shape != (n, d):
            raise ScenarioError(f"constant drift must have shape ({n}, {d})", "/system/drift/value")
        return DriftSpec.constant(value)
    try:
        spec = DriftSpec.tabulated(doc["axes"], doc["values"])
    except (ModelError, ValueError) as exc:
        raise ScenarioError(str(exc), "/system/drift") from None
    if spec.n != n or spec.d != d:
        raise ScenarioError(f"tabulated drift must describe {n} species in {d} dimensions", "/system/drift")
    return spec


def build_scenario(doc: dict) -> Scenario:
    """Validate ``doc``, fill defaults and build the solver objects."""
    _validate(doc)
    raw = _merge(DEFAULTS, doc)
    sysd, gridd, sch = raw["system"], raw["grid"], raw["scheme"]
    n = sysd["n"]
    if len(sysd["a0"]) != n:
        raise ScenarioError(f"expected {n} entries", "/system/a0")
    if len(sysd["a"]) != n or any(len(row) != n for row in sysd["a"]):
        raise ScenarioError(f"expected a {n}x{n} matrix", "/system/a")
    if len(raw["initial"]) != n:
        raise ScenarioError(f"expected initial data for {n} species", "/initial")
    d = gridd["dim"]
    if len(gridd["extents"]) != d or len(gridd["nodes"]) != d:
        raise ScenarioError(f"extents and nodes need {d} entries", "/grid")
    grid = Grid(tuple(gridd["extents"]), tuple(gridd["nodes"]))
    reaction = _reaction(sysd["reaction"], n)
    drift = _drift(sysd["drift"], n, d)
    ent = sysd["entropy"]
    try:
        if ent == "derive":
            entropy = derive_entropy(sysd["a0"], sysd["a"], reaction)
            raw["system"]["entropy_resolved"] = {"pi": entropy.pi.tolist(), "lambda": entropy.lam.tolist()}
        elif ent == "unit":
            entropy = EntropyParams.unit(n)
        else:
            if len(ent["pi"]) != n or len(ent["lambda"]) != n:
                raise ScenarioError(f"entropy parameters need {n} entries", "/system/entropy")
            entropy = EntropyParams(np.array(ent["pi"], float), np.array(ent["lambda"], float))
        system = SystemSpec(sysd["a0"], sysd["a"], entropy, drift, reaction)
    except ModelError as exc:
        raise ScenarioError(str(exc), "/system") from None
    nw = sch["newton"]
    try:
        params = SchemeParams(
            tau=sch["tau"], t_end=sch["t_end"], eps=sch["eps"], delta=sch["delta"], m=sch["m"],
            newton=NewtonControls(tol=nw["tol"], max_iter=nw["max_iter"], backtrack=nw["backtrack"],
                                  min_step=nw["min_step"], max_update=nw["max_update"]),
            eps_cut=sch["eps_cut"], max_halvings=sch["max_halvings"],
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "/scheme") from None
    for tau in raw["audit"]["tau_ladder"]:
        r = sch["t_end"] / tau
        if abs(r - round(r)) > 1e-9 * max(1.0, r):
            raise ScenarioError(f"t_end is not a multiple of {tau}", "/audit/tau_ladder")
    evaluate_initial(raw["initial"], grid)
    return Scenario(raw.get("name", "scenario"), raw, system, grid, params, sch["snapshot_stride"], raw["audit"],
                    raw.get("output"))


def load_document(source: str | Path) -> dict:
    """Read a scenario document from a path or a preset name."""
    path = Path(source)
    if str(source) in PRESETS and not path.exists():
        text = resources.files("crossdiff").joinpath("presets", f"{source}.json").read_text(encoding="utf-8")
    else:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {source}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} at line {exc.lineno}") from None


def parse_scenario(source: str | Path) -> Scenario:
    return build_scenario(load_document(source))


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return parse_scenario(name)
