"""Scenario configuration: TOML in, validated nested dict out.

Every table has a fixed key set; unknown keys are rejected with a suggestion,
and every error names the offending key path.
"""
from __future__ import annotations

import copy
import difflib
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .models import CATALOG

# key -> default; nested dicts are sub-tables; REQUIRED marks mandatory keys
REQUIRED = object()

SCHEMA = {
    "seed": REQUIRED,
    "out": "lte_out",
    "model": {"name": REQUIRED, "params": {}},
    "hydro": {
        "cells": 64,
        "length": 1.0,
        "mode": "steady",
        "onsager": "constant",
        "mobility": 1.0,
        "t_end": 0.0,
        "checkpoints": [],
        "initial_theta": None,
        "left": {"kind": "reservoir", "theta": None},
        "right": {"kind": "reservoir", "theta": None},
    },
    "checks": {"points": [[0.5, 0.0]]},
    "fluct": {"samples": 20000, "eps": [0.2, 0.1], "weights": None, "cells": None},
    "quantum": {"L": 64, "window": 11, "restriction_L": 400, "restriction_tol": 1e-3,
                "kms_L": 4, "kms_taus": [0.0, 0.7, 2.3], "consistency_tol": 1e-6},
    "probe": {"omega": 1.0, "gamma0": 1.0, "tau_max": 20.0, "tol": 1e-6},
    "thermo": {"theta_min": 0.1, "theta_max": 2.0, "points": 20},
}

HYDRO_MODES = ("steady", "evolve")
ONSAGER_KINDS = ("constant", "beta")


def _fill(schema, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be a table", key=".".join(path))
    for key in data:
        if key not in schema:
            where = ".".join(path + [key])
            close = difflib.get_close_matches(key, list(schema), n=1)
            hint = f"; did you mean '{close[0]}'?" if close else ""
            raise ConfigError(f"unknown key '{where}'{hint}", key=where)
    out = {}
    for key, default in schema.items():
        where = path + [key]
        if isinstance(default, dict) and default and key != "params":
            out[key] = _fill(default, data.get(key, {}), where)
        elif key in data:
            out[key] = copy.deepcopy(data[key])
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{'.'.join(where)}'", key=".".join(where))
        else:
            out[key] = copy.deepcopy(default)
    return out


def _number_list(value, key):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                               for v in value):
        raise ConfigError(f"'{key}' must be a number or a list of numbers", key=key)
    return [float(v) for v in value]


def validate(cfg):
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError("'seed' must be an unsigned 64-bit integer", key="seed")
    name = cfg["model"]["name"]
    if name not in CATALOG:
        close = difflib.get_close_matches(str(name), list(CATALOG), n=1)
        hint = f"; did you mean '{close[0]}'?" if close else ""
        raise ConfigError(f"unknown model '{name}'{hint}", key="model.name")
    try:
        model = CATALOG[name](**cfg["model"]["params"])
    except TypeError as exc:
        raise ConfigError(f"bad model parameters: {exc}", key="model.params") from None
    thermal = getattr(model, "thermal", True)

    hy = cfg["hydro"]
    if hy["mode"] not in HYDRO_MODES:
        raise ConfigError(f"'hydro.mode' must be one of {HYDRO_MODES}", key="hydro.mode")
    if hy["onsager"] not in ONSAGER_KINDS:
        raise ConfigError(f"'hydro.onsager' must be one of {ONSAGER_KINDS}", key="hydro.onsager")
    if not isinstance(hy["cells"], int) or not 2 <= hy["cells"] <= 4096:
        raise ConfigError("'hydro.cells' must be an integer in [2, 4096]", key="hydro.cells")
    if not hy["length"] > 0 or not hy["mobility"] > 0:
        raise ConfigError("'hydro.length' and 'hydro.mobility' must be positive", key="hydro.length")
    for side in ("left", "right"):
        b = hy[side]
        key = f"hydro.{side}"
        if b["kind"] not in ("reservoir", "no_flux", "periodic"):
            raise ConfigError(f"'{key}.kind' must be reservoir, no_flux or periodic", key=f"{key}.kind")
        if b["kind"] == "reservoir":
            if b["theta"] is None:
                raise ConfigError(f"'{key}.theta' is required for a reservoir", key=f"{key}.theta")
            b["theta"] = _number_list(b["theta"], f"{key}.theta")
            if len(b["theta"]) != model.n:
                raise ConfigError(f"'{key}.theta' needs {model.n} components", key=f"{key}.theta")
            if thermal and b["theta"][0] <= 0:
                raise ConfigError(f"'{key}.theta' has theta_1 <= 0; a reservoir needs a positive "
                                  "inverse temperature", key=f"{key}.theta")
    if hy["initial_theta"] is not None:
        hy["initial_theta"] = _number_list(hy["initial_theta"], "hydro.initial_theta")
        if len(hy["initial_theta"]) not in (model.n, model.n * hy["cells"]):
            raise ConfigError(f"'hydro.initial_theta' needs {model.n} (uniform) or "
                              f"{model.n * hy['cells']} (per cell) values", key="hydro.initial_theta")
    if hy["mode"] == "steady" and not (hy["left"]["kind"] == hy["right"]["kind"] == "reservoir"):
        raise ConfigError("steady mode needs reservoirs at both ends", key="hydro.mode")
    if hy["mode"] == "evolve":
        if hy["initial_theta"] is None:
            raise ConfigError("evolve mode needs 'hydro.initial_theta'", key="hydro.initial_theta")
        if not hy["t_end"] > 0:
            raise ConfigError("evolve mode needs 'hydro.t_end' > 0", key="hydro.t_end")
    hy["checkpoints"] = _number_list(hy["checkpoints"], "hydro.checkpoints")

    pts = cfg["checks"]["points"]
    if not isinstance(pts, list) or not all(isinstance(p, list) and len(p) == 2 for p in pts):
        raise ConfigError("'checks.points' must be a list of [x, t] pairs", key="checks.points")
    cfg["checks"]["points"] = [[float(x), float(t)] for x, t in pts]
    for x, t in cfg["checks"]["points"]:
        if not 0 < x < hy["length"]:
            raise ConfigError(f"check point x={x} is outside the domain", key="checks.points")
        if hy["mode"] == "evolve" and t not in set(hy["checkpoints"]) | {0.0, float(hy["t_end"])}:
            raise ConfigError(f"check time t={t} is not a hydro checkpoint", key="checks.points")

    fl = cfg["fluct"]
    if not isinstance(fl["samples"], int) or fl["samples"] < 1000:
        raise ConfigError("'fluct.samples' must be an integer >= 1000", key="fluct.samples")
    fl["eps"] = _number_list(fl["eps"], "fluct.eps")
    if fl["weights"] is not None:
        fl["weights"] = _number_list(fl["weights"], "fluct.weights")
    qu = cfg["quantum"]
    for key in ("L", "window", "restriction_L", "kms_L"):
        if not isinstance(qu[key], int) or qu[key] < 1:
            raise ConfigError(f"'quantum.{key}' must be a positive integer", key=f"quantum.{key}")
    return cfg


def parse_config(data):
    return validate(_fill(SCHEMA, data, []))


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return parse_config(data)


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


DEFAULT_CONFIG = {
    "seed": 20240101,
    "model": {"name": "paramagnet"},
    "hydro": {"cells": 64, "left": {"theta": [0.5]}, "right": {"theta": [1.5]}},
    "checks": {"points": [[0.25, 0.0], [0.5, 0.0], [0.75, 0.0]]},
}
