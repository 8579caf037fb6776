"""Strict YAML experiment configuration.

One file configures one experiment.  The top level selects the experiment and
carries reproducibility plumbing (seed, output directory, thread count); all
remaining parameters live in a section named after the experiment.  Unknown
keys anywhere are rejected before any computation, defaults are filled in, and
the fully resolved document is hashed (sha256 over canonical JSON) so the
run manifest pins exactly what executed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Configuration file is malformed, incomplete, or out of schema."""


EXPERIMENTS = ("burgers1d", "fisher2d", "cavity", "kraus-compile",
               "rank-report", "stencil", "noise-sweep")

_MISSING = object()


def _field(typ, default=_MISSING, *, choices=None, minimum=None, maximum=None,
           item=None, schema=None, min_len=None):
    return {"type": typ, "default": default, "choices": choices, "min": minimum,
            "max": maximum, "item": item, "schema": schema, "min_len": min_len}


def _check_scalar(value, spec, path):
    typ = spec["type"]
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif typ is str:
        if isinstance(value, bool):
            # YAML 1.1 reads bare off/on/yes/no as booleans; accept the token
            # when this field's vocabulary includes it, else say what happened.
            token = "off" if value is False else "on"
            if spec["choices"] is not None and token in spec["choices"]:
                value = token
            else:
                raise ConfigError(
                    f"{path}: expected a string, got a YAML boolean "
                    f"(bare off/on/yes/no parse as booleans; quote the value)")
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    if spec["choices"] is not None and value not in spec["choices"]:
        raise ConfigError(f"{path}: {value!r} not one of {sorted(spec['choices'])}")
    if spec["min"] is not None and value < spec["min"]:
        raise ConfigError(f"{path}: {value!r} below minimum {spec['min']}")
    if spec["max"] is not None and value > spec["max"]:
        raise ConfigError(f"{path}: {value!r} above maximum {spec['max']}")
    return value


def _validate(data, schema: dict, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'document'}: expected a mapping, got {type(data).__name__}")
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"{path or 'document'}: unknown keys {sorted(unknown)}")
    out = {}
    for key, spec in schema.items():
        where = f"{path}.{key}" if path else key
        if key not in data:
            if spec["default"] is _MISSING:
                raise ConfigError(f"{where}: required key missing")
            default = spec["default"]
            if spec["schema"] is not None and default is not None:
                default = _validate(dict(default), spec["schema"], where)
            elif isinstance(default, list):
                default = list(default)
            out[key] = default
            continue
        value = data[key]
        if value is None and spec["default"] is None:
            out[key] = None
            continue
        if spec["schema"] is not None:
            out[key] = _validate(value, spec["schema"], where)
        elif spec["type"] is list:
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list, got {value!r}")
            if spec["min_len"] is not None and len(value) < spec["min_len"]:
                raise ConfigError(f"{where}: needs at least {spec['min_len']} entries")
            item = spec["item"]
            if item.get("schema") is not None:
                out[key] = [_validate(v, item["schema"], f"{where}[{i}]")
                            for i, v in enumerate(value)]
            else:
                out[key] = [_check_scalar(v, item, f"{where}[{i}]")
                            for i, v in enumerate(value)]
        else:
            out[key] = _check_scalar(value, spec, where)
    return out


_GRID1 = {
    "points": _field(int, minimum=3),
    "length": _field(float, 1.0, minimum=0.0),
    "origin": _field(float, 0.0),
    "boundary": _field(str, "periodic", choices={"periodic", "dirichlet"}),
    "boundary_value": _field(float, 0.0),
}

_GRID2 = {
    "nx": _field(int, minimum=3),
    "ny": _field(int, minimum=3),
    "length": _field(float, 1.0, minimum=0.0),
    "origin": _field(list, [-0.5, -0.5], item=_field(float)),
    "cell_centered": _field(bool, True),
    "boundary": _field(str, "periodic", choices={"periodic", "dirichlet"}),
    "boundary_value": _field(float, 0.0),
}

_INITIAL1 = {
    "profile": _field(str, "gaussian", choices={"gaussian", "sine", "constant"}),
    "amplitude": _field(float, 1.0),
    "offset": _field(float, 0.0),
    "center": _field(float, 0.5),
    "width": _field(float, 0.1, minimum=0.0),
    "wavenumber": _field(int, 1, minimum=1),
}

_INITIAL2 = {
    "profile": _field(str, "gaussian", choices={"gaussian", "constant"}),
    "amplitude": _field(float, 1.0),
    "offset": _field(float, 0.0),
    "center": _field(list, [0.0, 0.25], item=_field(float)),
    "width": _field(float, 0.1, minimum=0.0),
}

_EVOLVE = {
    "dt": _field(float, minimum=0.0),
    "t_end": _field(float, minimum=0.0),
    "scheme": _field(str, "euler1", choices={"euler1", "trotter2"}),
    "controller": _field(str, "off", choices={"off", "pa-bound"}),
    "epsilon": _field(float, 0.05, minimum=0.0),
    "save_times": _field(list, [], item=_field(float)),
}

_SCHEMAS: dict[str, dict] = {
    "burgers1d": {
        "grid": _field(dict, schema=_GRID1),
        "re": _field(float, minimum=0.0),
        "initial": _field(dict, dict(), schema=_INITIAL1),
        "variance0": _field(float, 0.0, minimum=0.0),
        "shots": _field(int, 10000, minimum=2),
        **_EVOLVE,
    },
    "fisher2d": {
        "grid": _field(dict, schema=_GRID2),
        "pe": _field(float, minimum=0.0),
        "da": _field(float),
        "velocity": _field(str, "rotational", choices={"rotational", "none"}),
        "initial": _field(dict, dict(), schema=_INITIAL2),
        "variance0": _field(float, 0.0, minimum=0.0),
        "shots": _field(int, 10000, minimum=2),
        **_EVOLVE,
    },
    "cavity": {
        "points": _field(int, 128, minimum=8),
        "re": _field(float, 1000.0, minimum=0.0),
        "dt_omega": _field(float, 0.005, minimum=0.0),
        "dtau_psi": _field(float, 5.0e-6, minimum=0.0),
        "tol_frobenius": _field(float, 1.0e-5, minimum=0.0),
        "scheme": _field(str, "trotter2", choices={"euler1", "trotter2"}),
        "inner_rel_tol": _field(float, 5.0e-5, minimum=0.0),
        "inner_min_sweeps": _field(int, 20, minimum=1),
        "inner_max_sweeps": _field(int, 200000, minimum=1),
        "max_steps": _field(int, 400000, minimum=1),
        "lid_velocity": _field(float, 1.0),
    },
    "kraus-compile": {
        "modes": _field(int, minimum=1),
        "levels": _field(int, minimum=2),
        "dt": _field(float, minimum=0.0),
        "pad_rank": _field(int, None, minimum=2),
        "generator": _field(dict, schema={
            "kind": _field(str, choices={"burgers", "zero", "linear-diffusion"}),
            "re": _field(float, 20.0, minimum=0.0),
            "boundary": _field(str, "dirichlet", choices={"periodic", "dirichlet"}),
            "spacing": _field(float, 1.0, minimum=0.0),
        }),
        "shift": _field(float, None),
        "probe_amplitude": _field(float, 0.2),
        "fault_injection": _field(float, 0.0, minimum=0.0),
    },
    "rank-report": {
        "l_values": _field(list, item=_field(int, minimum=1), min_len=1),
        "dims": _field(int, 1, minimum=1),
        "deriv_order": _field(int, 2, minimum=1),
        "degree": _field(int, 1, minimum=1),
        "self_coupling": _field(bool, True),
    },
    "stencil": {
        "rows": _field(list, min_len=1, item=_field(dict, schema={
            "deriv_order": _field(int, minimum=1),
            "radius": _field(int, minimum=0),
        })),
    },
    "noise-sweep": {
        "grid": _field(dict, schema=_GRID1),
        "re": _field(float, minimum=0.0),
        "initial": _field(dict, dict(), schema=_INITIAL1),
        "gammas": _field(list, item=_field(float, minimum=0.0), min_len=1),
        "calibration": _field(float, 1.0, minimum=0.0),
        "order": _field(int, None, minimum=1),
        **_EVOLVE,
    },
}

_TOP = {
    "experiment": _field(str, choices=set(EXPERIMENTS)),
    "seed": _field(int, 0, minimum=0),
    "out": _field(str, None),
    "threads": _field(int, 1, minimum=1),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment selection plus its resolved parameter block."""

    experiment: str
    seed: int
    out: str | None
    threads: int
    params: dict
    sha256: str

    def resolved(self) -> dict:
        doc = {"experiment": self.experiment, "seed": self.seed,
               "out": self.out, "threads": self.threads,
               self.experiment: self.params}
        return doc


def config_digest(document: dict) -> str:
    """sha256 of the canonical JSON rendering of a resolved config."""
    blob = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def validate_config(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    if "experiment" not in data:
        raise ConfigError("experiment: required key missing")
    exp = data["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: {exp!r} not one of {sorted(EXPERIMENTS)}")
    top_schema = dict(_TOP)
    top_schema[exp] = _field(dict, schema=_SCHEMAS[exp])
    out = _validate(data, top_schema, "")
    params = out[exp]
    doc = {"experiment": exp, "seed": out["seed"], "out": out["out"],
           "threads": out["threads"], exp: params}
    return ExperimentConfig(experiment=exp, seed=out["seed"], out=out["out"],
                            threads=out["threads"], params=params,
                            sha256=config_digest(doc))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return validate_config(data)
