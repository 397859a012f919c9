"""Run configuration: INI-style sections, validated up front.

Every key has a default here; a config file or ``--set section.key=value``
override may change values but never introduce new keys.
"""
from __future__ import annotations

import configparser

from .errors import InvalidInput

# section -> key -> (type, default); None default means "derived"
SCHEMA = {
    "run": {"seed": (int, 0), "out": (str, "out"), "threads": (int, 1)},
    "env": {"horizon": (int, 32), "dt": (float, 0.1), "c_max": (float, None), "f_clip": (float, 16.0),
            "f_acc": (float, None)},
    "embed": {"keyframes": (int, 8), "normalize": (bool, True)},
    "policy": {"time_encoding": (str, "per_step")},
    "itin": {"batch_size": (int, 64), "steering_ratio": (float, 0.3), "noise_scale": (float, None),
             "buffer_multiplier": (int, 40), "iterations": (int, 40), "ridge": (float, 1e-8)},
    "invert": {"family": (str, "linear"), "dim": (int, 3), "points": (int, None), "max_iterations": (int, 100),
               "residual_target": (float, 1e-9), "amplitude": (float, 0.01), "frequency": (float, 1.0),
               "coefficients": (list, None), "ridge": (float, 0.0)},
    "verify": {"suite": (list, ["T1", "T2", "T3", "T4", "L1"]), "dims": (list, ["1", "2", "3", "5"]),
               "trials": (int, 100), "instances": (int, 50), "epsilon_override": (float, None),
               "grid": (int, 2001), "iterations": (int, 40)},
    "data": {"generator": (str, "splines"), "count": (int, 500), "t_acc": (int, None)},
    "train": {"dataset": (str, None), "steer_size": (int, 100), "probe_size": (int, 200)},
    "eval": {"checkpoint": (str, None), "dataset": (str, None), "probe_size": (int, None)},
    "cross_eval": {"checkpoint_a": (str, None), "checkpoint_b": (str, None), "name_a": (str, "splines"),
                   "name_b": (str, "deceleration"), "dataset_a": (str, None), "dataset_b": (str, None),
                   "probe_size": (int, None)},
    "sweep": {"generator": (str, "splines"), "sizes": (list, ["0", "10", "100", "500"]),
              "seeds": (list, ["0", "1", "2"]), "probe_size": (int, 200)},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(section, key, raw):
    typ = SCHEMA[section][key][0]
    raw = raw.strip()
    if raw.lower() in ("", "none", "default"):
        return None
    try:
        if typ is bool:
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if typ is list:
            return [v.strip() for v in raw.split(",") if v.strip()]
        return typ(raw)
    except ValueError:
        raise InvalidInput(f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None


class RunConfig(dict):
    """Nested dict ``cfg[section][key]`` with every schema key present."""

    def get_list(self, section, key, conv=str):
        try:
            return [conv(v) for v in self[section][key]]
        except ValueError:
            raise InvalidInput(f"[{section}] {key} has an invalid entry") from None

    def snapshot(self) -> dict:
        return {s: dict(v) for s, v in self.items()}


def defaults() -> RunConfig:
    return RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _apply(cfg, section, key, raw):
    if section not in SCHEMA:
        raise InvalidInput(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise InvalidInput(f"unknown config key [{section}] {key}")
    cfg[section][key] = _convert(section, key, raw)


def load(path=None, overrides=()) -> RunConfig:
    cfg = defaults()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise InvalidInput(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(cfg, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise InvalidInput(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        _apply(cfg, section.strip(), key.strip(), raw)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Cross-field checks that do not need any computation."""
    env, itin = cfg["env"], cfg["itin"]
    if env["horizon"] < 1 or env["dt"] <= 0 or env["f_clip"] <= 0:
        raise InvalidInput("[env] needs horizon >= 1, dt > 0, f_clip > 0")
    if env["c_max"] is not None and env["c_max"] <= 0:
        raise InvalidInput("[env] c_max must be > 0")
    if not 0.0 <= itin["steering_ratio"] <= 1.0:
        raise InvalidInput(f"[itin] steering_ratio must lie in [0, 1], got {itin['steering_ratio']}")
    if itin["batch_size"] < 1 or itin["buffer_multiplier"] < 1 or itin["iterations"] < 0:
        raise InvalidInput("[itin] batch_size, buffer_multiplier >= 1 and iterations >= 0 required")
    if itin["noise_scale"] is not None and itin["noise_scale"] < 0:
        raise InvalidInput("[itin] noise_scale must be >= 0")
    if itin["ridge"] < 0 or cfg["invert"]["ridge"] < 0:
        raise InvalidInput("ridge must be >= 0")
    if cfg["embed"]["keyframes"] < 2:
        raise InvalidInput("[embed] keyframes must be >= 2")
    if cfg["policy"]["time_encoding"] not in ("normalized_scalar", "one_hot", "per_step"):
        raise InvalidInput("[policy] time_encoding must be normalized_scalar, one_hot or per_step")
    inv = cfg["invert"]
    if inv["family"] not in ("linear", "sin-linear", "custom"):
        raise InvalidInput("[invert] family must be linear, sin-linear or custom")
    if inv["dim"] < 1 or inv["max_iterations"] < 0 or inv["residual_target"] <= 0:
        raise InvalidInput("[invert] needs dim >= 1, max_iterations >= 0, residual_target > 0")
    if inv["points"] is not None and inv["points"] < 2:
        raise InvalidInput("[invert] points must be >= 2")
    if cfg["data"]["generator"] not in ("splines", "deceleration") or cfg["sweep"]["generator"] not in (
            "splines", "deceleration"):
        raise InvalidInput("generator must be splines or deceleration")
    if cfg["data"]["count"] < 1:
        raise InvalidInput("[data] count must be >= 1")
    if cfg["run"]["threads"] < 1:
        raise InvalidInput("[run] threads must be >= 1")
    cfg.get_list("verify", "dims", int)
    cfg.get_list("sweep", "sizes", int)
    cfg.get_list("sweep", "seeds", int)
    bad = set(cfg["verify"]["suite"]) - {"T1", "T2", "T3", "T4", "L1"}
    if bad:
        raise InvalidInput(f"[verify] unknown certificates {sorted(bad)}")


def describe_defaults() -> str:
    """Defaults as an INI document (used by ``--print-defaults``)."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default) in keys.items():
            if isinstance(default, list):
                default = ", ".join(default)
            lines.append(f"{key} = {'' if default is None else default}")
        lines.append("")
    return "\n".join(lines)

