"""Run configuration stored as a sectioned INI file.

Every key has a typed default; unknown sections or keys are rejected so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import io
import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict[str, dict] = {
    "run": {"seed": 0, "out": "out"},
    "corpus": {
        "generator": "markov1", "K_data": 6, "L": 16, "n": 2000,
        "p_next": 0.85, "shift": 1, "table_seed": -1, "noise": 0.1, "n_templates": 4,
    },
    "model": {"d_emb": 32, "d_hidden": 64, "time_conditioning": False},
    "schedule": {"kind": "log_linear", "sigma_max": 1e8, "eps": 1e-5},
    "objective": {"kind": "continuous", "T": 1000},
    "train": {
        "steps": 2000, "batch_size": 64, "lr": 3e-3, "warmup_steps": 100,
        "seed": 0, "log_every": 100, "time_sampler": "low_discrepancy",
    },
    "eval": {"estimator": "mc", "n_samples": 8, "max_sequences": 500},
    "sample": {"mode": "plain", "n": 64, "T": 100, "L_prime": 8, "rounds": 2, "cache": True},
    "bench": {"T_list": [16, 64, 256], "n_seq": 16, "repeats": 5},
    "ablate": {"T_list": [10, 100, 1000], "max_sequences": 64},
}


def _parse(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            return [int(v) for v in value.replace(",", " ").split()]
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, data: dict | None = None):
        self.data = copy.deepcopy(DEFAULTS)
        for section, values in (data or {}).items():
            for key, value in values.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value):
        if section not in self.data:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in self.data[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        default = DEFAULTS[section][key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse(value, default, f"{section}.{key}")
        self.data[section][key] = value

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for section, values in self.data.items():
            cp[section] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig()
    for section in cp.sections():
        for key, value in cp[section].items():
            cfg.set(section, key, value)
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text())
