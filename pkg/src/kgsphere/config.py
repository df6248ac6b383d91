"""Experiment configuration: strict schemas, YAML or JSON documents."""
import yaml

import numpy as np


class ConfigError(ValueError):
    pass


_INT, _FLOAT, _BOOL, _STR, _LIST, _NUM_OR_LIST = "int", "float", "bool", "str", "list", "num|list"

SCHEMAS = {
    "basis": {
        "M": (_INT, 16), "seed": (_INT, 0), "p": (_INT, 3), "n_samples": (_INT, 1000),
        "degree_range": (_LIST, None), "anchor_max": (_INT, 4), "g": (_LIST, None),
        "decay_window": (_LIST, None),
    },
    "resonance": {
        "mu": (_FLOAT, float(np.sqrt(2.0))), "r": (_INT, 3), "M": (_INT, 16), "N": (_FLOAT, 16.0),
        "max_enum": (_INT, 2_000_000), "n_samples": (_INT, 200_000), "seed": (_INT, 0),
    },
    "normal-form": {
        "p": (_INT, 3), "r": (_INT, 1), "M": (_INT, 3), "N": (_FLOAT, 2.0),
        "mu": (_FLOAT, float(np.sqrt(2.0))), "tol": (_FLOAT, 1e-13), "delta_min": (_FLOAT, 1e-8),
        "seed": (_INT, 0), "basis": (_STR, "haar"), "g": (_LIST, None), "zero": (_BOOL, False),
        "probe": (_BOOL, True), "n_scales": (_INT, 6), "allow_large": (_BOOL, False),
    },
    "simulate": {
        "M": (_INT, 8), "mu": (_FLOAT, float(np.sqrt(2.0))), "p": (_INT, 3), "g": (_LIST, None),
        "eps": (_NUM_OR_LIST, 0.05), "dt": (_FLOAT, 1e-3), "T": (_FLOAT, 20.0),
        "horizon": (_STR, "fixed"), "stride": (_INT, 100), "seed": (_INT, 0),
        "decay": (_FLOAT, 1.51), "L_obs": (_INT, None), "drift_L": (_INT, 4),
        "drift_exponent_min": (_FLOAT, None), "max_drift": (_FLOAT, None),
        "shadow_s": (_FLOAT, None), "checkpoint_every": (_INT, None), "resume": (_STR, None),
    },
}


def _check_type(key, kind, val):
    if val is None:
        return val
    if kind == _FLOAT and isinstance(val, str):
        # YAML 1.1 reads exponent literals without a dot (1e-30) as strings
        try:
            val = float(val)
        except ValueError:
            pass
    ok = {
        _INT: isinstance(val, int) and not isinstance(val, bool),
        _FLOAT: isinstance(val, (int, float)) and not isinstance(val, bool),
        _BOOL: isinstance(val, bool),
        _STR: isinstance(val, str),
        _LIST: isinstance(val, list),
        _NUM_OR_LIST: (isinstance(val, (int, float)) and not isinstance(val, bool))
        or (isinstance(val, list) and all(isinstance(x, (int, float)) for x in val)),
    }[kind]
    if not ok:
        raise ConfigError(f"key '{key}' expects {kind}, got {val!r}")
    return float(val) if kind == _FLOAT else val


def validate(command, doc):
    """Merge a parsed document with defaults; unknown keys are rejected."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command '{command}'")
    doc = {} if doc is None else dict(doc)
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    cmd = doc.pop("command", command)
    if cmd != command:
        raise ConfigError(f"configuration is for '{cmd}', not '{command}'")
    schema = SCHEMAS[command]
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys for '{command}': {', '.join(unknown)}")
    out = {}
    for key, (kind, default) in schema.items():
        out[key] = _check_type(key, kind, doc.get(key, default))
    return out


def load(path, command):
    with open(path) as f:
        doc = yaml.safe_load(f)
    return validate(command, doc)


def parse_g(spec):
    """None -> g = 1; [] -> g = 0; [[[a,b,c], coef], ...] -> polynomial map."""
    if spec is None:
        return None
    out = {}
    for item in spec:
        try:
            (a, b, c), coef = item
        except (TypeError, ValueError):
            raise ConfigError(f"bad g term {item!r}; expected [[a, b, c], coef]")
        key = (int(a), int(b), int(c))
        out[key] = out.get(key, 0.0) + float(coef)
    return out
