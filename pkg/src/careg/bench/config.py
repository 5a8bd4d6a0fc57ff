"""Run configuration: one JSON file, every key overridable from the command line."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..resampling import SUPPORT

ENV_OUTPUT = "CAREG_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


DEFAULTS: dict = {
    "seed": 0,
    "master": None,
    "slave": None,
    "truth": None,
    "output_dir": "careg-out",
    "synthetic": None,
    "canny": {"sigma": 1.4, "low": 0.04, "high": 0.1},
    "ca": {"work_size": 128, "object_z": 1.0, "max_steps": 20, "evolve": True,
           "ga_population": 12, "ga_generations": 8},
    "segmentation": {"beta": 1.0, "E": 3, "mu": None, "max_train": 800, "max_sweeps": 5,
                     "max_objects": 6},
    "coreset": {"k": [1, 2, 4], "epsilon": 0.1},
    "maca": {"m": 3},
    "sift": {"contrast_thresh": 0.03, "edge_ratio": 10.0, "ratio": 0.8},
    "refine": {"threshold": 0.9, "min_pairs": 12},
    "prune": {"factor": 3.0, "rounds": 2},
    "transform": {"neighbors": 6, "power": 2.0},
    "resample": {"levels": 4, "max_area": 4, "min_contrast": 0.3,
                 "table": {"1": "BL", "2": "CC", "3": "KD16"}, "fine_kernel": "CC"},
}

SYNTH_DEFAULTS = {"size": 512, "scene_seed": 0, "tx": 0.0, "ty": 0.0, "rotation": 0.0, "scale": 1.0,
                  "bump_amplitude": 0.0, "bump_sigma": 64.0, "bump_angle": 0.0, "noise_sigma": 0.0}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and key == "table":
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = {**base[key], **{str(k): v for k, v in val.items()}}
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value``; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip().split("."), val


def _nest(keys, val) -> dict:
    d = val
    for k in reversed(keys):
        d = {k: d}
    return d


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    @classmethod
    def from_dict(cls, d: dict, overrides=(), env=None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        data = _merge(DEFAULTS, d)
        env = os.environ if env is None else env
        if env.get(ENV_OUTPUT):
            data["output_dir"] = env[ENV_OUTPUT]
        for item in overrides:
            keys, val = parse_override(item) if isinstance(item, str) else item
            if keys[0] == "synthetic" and data["synthetic"] is None:
                data["synthetic"] = {}
            if keys[0] == "synthetic" and len(keys) > 1:
                data["synthetic"] = {**data["synthetic"], **_nest(keys[1:], val)}
            else:
                data = _merge(data, _nest(keys, val))
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=(), env=None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
        base = path.parent
        for key in ("master", "slave", "truth"):
            if isinstance(d.get(key), str) and not Path(d[key]).is_absolute():
                d[key] = str(base / d[key])
        return cls.from_dict(d, overrides, env)

    def validate(self) -> None:
        d = self.data
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if d["synthetic"] is not None:
            if not isinstance(d["synthetic"], dict):
                raise ConfigError("'synthetic' must be an object or null")
            unknown = set(d["synthetic"]) - set(SYNTH_DEFAULTS)
            if unknown:
                raise ConfigError(f"unknown synthetic keys {sorted(unknown)}")
            d["synthetic"] = {**SYNTH_DEFAULTS, **d["synthetic"]}
            if d["synthetic"]["size"] < 64:
                raise ConfigError("synthetic.size must be >= 64")
        else:
            for key in ("master", "slave"):
                if not d[key]:
                    raise ConfigError(f"'{key}' image path required when no synthetic pair is configured")
        for key in ("master", "slave", "truth"):
            if d[key] and not Path(d[key]).is_file():
                raise ConfigError(f"{key} file not found: {d[key]}")
        c = d["canny"]
        if not (c["sigma"] > 0 and 0 <= c["low"] <= c["high"]):
            raise ConfigError("canny needs sigma > 0 and 0 <= low <= high")
        if d["ca"]["work_size"] < 16:
            raise ConfigError("ca.work_size must be >= 16")
        ks = d["coreset"]["k"]
        ks = ks if isinstance(ks, list) else [ks]
        if not ks or any(not isinstance(k, int) or k < 1 for k in ks):
            raise ConfigError("infeasible coreset: every k must be an integer >= 1")
        if not 0 < d["coreset"]["epsilon"] < 1:
            raise ConfigError("coreset.epsilon must lie in (0, 1)")
        mu = d["segmentation"]["mu"]
        if mu is not None and not 0 <= mu <= 1:
            raise ConfigError("segmentation.mu must be null (GA-tuned) or lie in [0, 1]")
        if not 0 < d["sift"]["ratio"] < 1:
            raise ConfigError("sift.ratio must lie in (0, 1)")
        if d["transform"]["neighbors"] < 3 or d["transform"]["power"] <= 0:
            raise ConfigError("transform needs neighbors >= 3 and power > 0")
        r = d["resample"]
        if r["levels"] < 2:
            raise ConfigError("resample.levels must be >= 2")
        for lvl, name in r["table"].items():
            if not str(lvl).isdigit() or int(lvl) < 1:
                raise ConfigError(f"resample.table level '{lvl}' must be an integer >= 1")
            if name not in SUPPORT:
                raise ConfigError(f"resample.table kernel '{name}' not in {sorted(SUPPORT)}")
        if r["fine_kernel"] not in SUPPORT:
            raise ConfigError(f"resample.fine_kernel '{r['fine_kernel']}' unknown")

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)
