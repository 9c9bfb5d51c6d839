"""Versioned run configuration: JSON schema, defaults and line-located errors."""

from __future__ import annotations

import copy
import json
import re

import jsonschema

CONFIG_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_numlist = {"type": "array", "items": _pos, "minItems": 1}


def _nullable(schema):
    """Accept ``null`` as well, so resolved configs with unset defaults validate."""
    return {"anyOf": [schema, {"type": "null"}]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "version": {"const": CONFIG_VERSION},
    "domain": _obj({
        "kind": {"enum": ["ball", "shell", "prefractal"]},
        "R": _pos, "R_in": _pos, "L": _pos,
        "depth": {"type": "integer", "minimum": 0, "maximum": 3},
        "h": _nullable(_pos), "h_over_ell": _pos,
        "n": {"type": "integer", "minimum": 2, "maximum": 3},
        "corrected_measure": {"type": ["boolean", "null"]},
    }, required=["kind"]),
    "a_grid": _obj({"min": _pos, "max": _pos, "count": {"type": "integer", "minimum": 2},
                    "values": _nullable(_numlist)}),
    "solver": _obj({"rel_tol": _pos, "max_iter": {"type": ["integer", "null"], "minimum": 1},
                    "preconditioner": {"enum": ["jacobi", "none"]}}),
    "green": _obj({
        "a": _pos, "pole": {"type": "array", "items": _num},
        "oracle_a": _numlist, "oracle_radii": _numlist,
        "monotone_a": _nullable(_numlist), "samples": _posint,
        "regime": {"enum": ["auto", "neumann", "dirichlet"]},
    }),
    "measure": _obj({
        "a_values": _nullable(_numlist), "a_sigma_multiples": _numlist, "samples": _posint,
        "mass_poles": _posint,
        "checks": {"type": "array", "items": {"enum": [
            "mass", "bourgain", "greenhm_equiv", "doubling", "change_of_pole",
            "boundary_comparison", "smoothing", "ainfty"]}},
    }),
    "flux": _obj({"entropy": {"type": "boolean"}, "entropy_count": {"type": "integer", "minimum": 2},
                  "plot": {"type": "boolean"}}),
    "accept": _obj({
        "C_green": _pos, "C_measure": _pos, "M_bourgain": _pos, "oracle_tol": _pos,
        "mass_tol": _pos, "certificate_tol": _pos, "energy_tol": _pos, "theta_min": _num,
        "doubling_spread": _pos, "entropy_band": _pos, "pass_fraction": _pos,
        "flux_ratio": _pos, "slope_tol_neumann": _pos, "slope_tol_dahlberg": _pos,
        "magic_gap": _pos,
    }),
    "seed": {"type": "integer", "minimum": 0},
    "jobs": _posint,
}, required=["version", "domain"])

DEFAULTS = {
    "domain": {"R": 4.0, "R_in": 2.0, "L": 10.0, "depth": 2, "h": None, "h_over_ell": 0.25,
               "n": 3, "corrected_measure": None},
    "a_grid": {"min": 1e-3, "max": 1e3, "count": 17, "values": None},
    "solver": {"rel_tol": 1e-10, "max_iter": None, "preconditioner": "jacobi"},
    "green": {"a": 1.0, "pole": [0.0, 0.0, 0.0], "oracle_a": [0.1, 1.0, 10.0],
              "oracle_radii": [1.5, 2.0, 3.0], "monotone_a": None, "samples": 32, "regime": "auto"},
    "measure": {"a_values": None, "a_sigma_multiples": [1e-2, 1.0, 1e2], "samples": 32,
                "mass_poles": 4,
                "checks": ["mass", "bourgain", "greenhm_equiv", "doubling", "change_of_pole",
                           "boundary_comparison", "smoothing", "ainfty"]},
    "flux": {"entropy": True, "entropy_count": 5, "plot": True},
    "accept": {"C_green": 20.0, "C_measure": 50.0, "M_bourgain": 50.0, "oracle_tol": 0.2,
               "mass_tol": 1e-8, "certificate_tol": 1e-8, "energy_tol": 1e-6, "theta_min": 0.3,
               "doubling_spread": 2.0, "entropy_band": 100.0, "pass_fraction": 0.95,
               "flux_ratio": 20.0, "slope_tol_neumann": 0.15, "slope_tol_dahlberg": 0.25,
               "magic_gap": 0.15},
    "seed": 0,
    "jobs": 1,
}


class ConfigError(ValueError):
    """Invalid configuration; the message carries the line of the offending entry."""


def _key_line(text: str, path, key=None) -> int:
    """Line of the entry reached by following ``path`` (and then ``key``) through ``text``."""
    pos = 0
    for part in list(path) + ([key] if key is not None else []):
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(text: str, source: str = "<config>") -> dict:
    """Validate ``text`` against the schema and fill every default explicitly."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for err in errors:
            path = list(err.absolute_path)
            key = None
            if err.validator == "additionalProperties" and isinstance(err.instance, dict):
                allowed = set(err.schema.get("properties", {}))
                key = next((k for k in err.instance if k not in allowed), None)
            line = _key_line(text, path, key)
            where = "/".join(map(str, path + ([key] if key else []))) or "<root>"
            lines.append(f"{source}:{line}: {where}: {err.message}")
        raise ConfigError("\n".join(lines))
    config = _deep_merge(DEFAULTS, raw)
    _check_domain(config["domain"], text, source)
    return config


def _check_domain(d, text, source):
    kind = d["kind"]
    line = _key_line(text, ["domain"])
    if kind in ("ball", "shell") and d["h"] is None:
        raise ConfigError(f"{source}:{line}: domain: kind {kind!r} needs 'h'")
    if kind == "shell" and not d["R_in"] < d["R"]:
        raise ConfigError(f"{source}:{line}: domain: need R_in < R")


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))
