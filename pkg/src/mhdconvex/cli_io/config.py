"""Run configuration: JSON schema, defaults and line-precise validation errors."""

from __future__ import annotations

import copy
import json
import os
from fractions import Fraction

import jsonschema
import yaml

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_IVEC3 = {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3}

_MODAL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["modes"],
    "properties": {
        "modes": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["xi", "re", "im"],
            "properties": {"xi": _IVEC3, "re": _VEC3, "im": _VEC3}}},
        "profile": {"enum": ["sin_pi", "ramp", "sin_pi_squared"]},
        "amplitude": _NUM,
    },
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "subcommand": {"enum": ["verify", "step", "init", "noise", "galerkin", "blocks", "geom"]},
        "grid": {"type": "integer", "minimum": 8, "multipleOf": 4},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "strict": {"type": "boolean"},
        "level": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "params": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "a": {"type": "integer", "minimum": 2},
                "b": {"type": "integer", "minimum": 2},
                "beta": _POS,
                "eps": {"type": ["string", "number"]},
                "alpha": {"type": ["string", "number"]},
                "nu": _POS,
                "T": _POS,
                "r": _POS,
                "L": _POS,
                "overrides": {
                    "type": "object", "additionalProperties": False,
                    "properties": {k: _POS for k in
                                   ("lam", "r_perp", "tau", "sigma", "ell", "varsigma", "delta_next")},
                },
            },
        },
        "noise": {
            "type": "object", "additionalProperties": False,
            "properties": {"k_max": {"type": "number", "minimum": 0},
                           "amplitude": {"type": "array", "items": {"type": "number", "minimum": 0},
                                         "minItems": 2, "maxItems": 2},
                           "s0": _NUM},
        },
        "time": {
            "type": "object", "additionalProperties": False,
            "properties": {"samples": {"type": "integer", "minimum": 3}},
        },
        "initial": {
            "type": "object", "additionalProperties": False,
            "properties": {"v": _MODAL, "h": _MODAL},
        },
        "galerkin": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_modes": {"type": "integer", "minimum": 1}, "dt": _POS, "T": _POS,
                           "alpha": {"type": "number", "minimum": 1}, "nu": _POS,
                           "mollification": {"type": ["number", "null"], "minimum": 0}},
        },
        "verify": {
            "type": "object", "additionalProperties": False,
            "properties": {"geometry_samples": {"type": "integer", "minimum": 1},
                           "ou_paths": {"type": "integer", "minimum": 100},
                           "fault": {"type": ["string", "null"], "enum": [None, "geometry", "blocks"]}},
        },
        "tolerances": {"type": "object", "additionalProperties": _POS},
    },
}

DEFAULTS = {
    "grid": 32,
    "seed": 7,
    "strict": False,
    "level": 0,
    "output": "out",
    "params": {"a": 2, "b": 2, "beta": 1.0, "eps": "1/20", "alpha": "1", "nu": 1.0, "T": 1.0,
               "overrides": {"lam": 8, "r_perp": 0.125, "tau": 4, "sigma": 2, "ell": 0.2,
                             "varsigma": 0.2, "delta_next": 20.0}},
    "noise": {"k_max": 1.0, "amplitude": [0.05, 0.05], "s0": 6.0},
    "time": {"samples": 17},
    "initial": {
        "v": {"modes": [{"xi": [0, 1, 0], "re": [0, 0, 0], "im": [-1, 0, 0]}],
              "profile": "sin_pi", "amplitude": 1.0},
        "h": {"modes": [{"xi": [1, 0, 0], "re": [0, 0, 0], "im": [0, 0, -1]}],
              "profile": "sin_pi", "amplitude": 0.5},
    },
    "galerkin": {"n_modes": 36, "dt": 0.01, "T": 1.0, "alpha": 1.0, "nu": 1.0, "mollification": None},
    "verify": {"geometry_samples": 1000, "ou_paths": 4000, "fault": None},
    "tolerances": {},
}


class ConfigError(Exception):
    """Validation failure with a source location."""

    def __init__(self, message, source="<config>", line=None, column=None, path=()):
        self.source, self.line, self.column, self.path = source, line, column, tuple(path)
        loc = source if line is None else f"{source}:{line}:{column}"
        where = ".".join(str(p) for p in self.path)
        super().__init__(f"{loc}: {where + ': ' if where else ''}{message}")
        self.message = message

    def to_json(self):
        return {"error": "config", "message": self.message, "source": self.source, "line": self.line,
                "column": self.column, "path": list(self.path)}


def _node_at(root, path):
    """YAML node for a JSON path (JSON is YAML, and YAML nodes carry marks)."""
    node = root
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _key_node(root, path, key):
    parent = _node_at(root, path)
    if isinstance(parent, yaml.MappingNode):
        for k, _ in parent.value:
            if k.value == key:
                return k
    return parent


def merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("overrides", "tolerances"):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(data, text=None, source="<config>"):
    v = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(v.iter_errors(data), key=lambda e: (list(e.absolute_path), e.message))
    if not errors:
        return
    e = errors[0]
    path = list(e.absolute_path)
    line = col = None
    if text is not None:
        try:
            root = yaml.compose(text)
        except yaml.YAMLError:
            root = None
        if root is not None:
            node = _node_at(root, path)
            if e.validator == "additionalProperties" and isinstance(e.instance, dict):
                allowed = set(e.schema.get("properties", {}))
                extra = [k for k in e.instance if k not in allowed]
                if extra:
                    node = _key_node(root, path, extra[0])
            line, col = node.start_mark.line + 1, node.start_mark.column + 1
    raise ConfigError(e.message, source, line, col, path)


def load(path=None, text=None, env=None):
    """Parse, validate, merge with defaults and apply RNG_SEED; returns a dict."""
    env = os.environ if env is None else env
    source = "<config>"
    if path is not None:
        source = str(path)
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e.strerror}", source) from e
    data = {}
    if text is not None:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            # JSON is preferred; YAML is accepted as a fallback
            try:
                data = yaml.safe_load(text)
            except yaml.YAMLError as ye:
                mark = getattr(ye, "problem_mark", None)
                if mark is None:
                    raise ConfigError(e.msg, source, e.lineno, e.colno) from e
                raise ConfigError(str(getattr(ye, "problem", ye)), source, mark.line + 1, mark.column + 1) from ye
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object", source, 1, 1)
        validate(data, text, source)
    cfg = merge(DEFAULTS, data)
    if env.get("RNG_SEED") not in (None, ""):
        try:
            cfg["seed"] = int(env["RNG_SEED"])
        except ValueError as e:
            raise ConfigError(f"RNG_SEED={env['RNG_SEED']!r} is not an integer", "RNG_SEED") from e
        if not 0 <= cfg["seed"] < 2**64:
            raise ConfigError("RNG_SEED must be an unsigned 64-bit integer", "RNG_SEED")
    validate(cfg, None, source)
    return cfg


def build_params(cfg, level=None):
    """IterParams from the config; strict mode checks the admissible ranges exactly."""
    from ..building_blocks import IterParams

    p = cfg["params"]
    kw = {"a": p["a"], "b": p["b"], "beta": p["beta"], "eps": Fraction(str(p["eps"])),
          "alpha": Fraction(str(p["alpha"])), "nu": p["nu"], "T": p["T"],
          "q": cfg["level"] if level is None else level, "strict": cfg["strict"]}
    for k in ("r", "L"):
        if k in p:
            kw[k] = p[k]
    if not cfg["strict"]:
        kw["overrides"] = dict(p.get("overrides", {}))
    try:
        return IterParams(**kw)
    except ValueError as e:
        raise ConfigError(str(e), "params") from e


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True)


def persisted(cfg):
    """Config as stored in artifacts: the output location is not part of the run."""
    return {k: v for k, v in json.loads(dumps(cfg)).items() if k != "output"}
