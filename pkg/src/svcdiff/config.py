"""Run configuration: one JSON file with nested sections, flag overrides win.

The effective configuration (defaults, overlaid by the file, overlaid by CLI
flags) is what gets hashed into the reproducibility record, so identical
hashes really do mean identical runs.
"""

from __future__ import annotations

import copy
import hashlib
import json

from .errors import ConfigError

DEFAULTS = {
    "schedule": {"kind": "vp-cosine", "params": []},
    "sampler": {"mode": "ddim", "steps": 32, "kappa": 0.0, "seed": 0, "time_grid": "uniform"},
    "denoiser": {
        "arch": [128, 128],
        "time_embed": 32,
        "cond_dim": 256,
        "seed": 0,
        "use_attention": False,
    },
    "loss": {
        "weight_fn": "unit",
        "batch": 8,
        "lr": 1e-4,
        "optimizer": "adam",
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
    },
    "train": {"steps": 2000, "seed": 0},
    "distill": {
        "start_steps": 64,
        "halvings": 3,
        "steps_per_stage": 1000,
        "lr": 5e-5,
        "seed": 0,
        "batch": 64,
    },
    "slim": {"latency_target": 0.005, "latency_reps": 10, "eval_frames": 256},
    "slicer": {"silence_db": -40.0, "min_silence": 0.5, "max_segment": 30.0, "min_segment": 1.0},
    "features": {"target_rate": 40000, "cond_seed": 0, "gl_iters": 60},
    "augment": {"sizes": [], "overlap": 0.0},
    "bench": {"repetitions": 10, "steps": [8, 64], "threads": [1]},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be a section, got {type(value).__name__}")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid by the JSON file at ``path``, overlaid by overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, loaded)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# --- constructors from config sections -----------------------------------------

def schedule_from(cfg: dict):
    from .schedule import make_schedule

    sec = cfg["schedule"]
    return make_schedule(sec["kind"], tuple(sec["params"]))


def sampler_cfg_from(cfg: dict):
    from .sampler import SamplerConfig

    sec = cfg["sampler"]
    return SamplerConfig(
        mode=sec["mode"], steps=int(sec["steps"]), kappa=float(sec["kappa"]),
        seed=int(sec["seed"]), time_grid=sec["time_grid"],
    )


def loss_cfg_from(cfg: dict):
    from .denoiser import LossConfig

    sec = cfg["loss"]
    return LossConfig(
        weight_fn=sec["weight_fn"], batch=int(sec["batch"]), lr=float(sec["lr"]),
        optimizer=sec["optimizer"], beta1=float(sec["beta1"]), beta2=float(sec["beta2"]),
        eps=float(sec["eps"]),
    )


def distill_cfg_from(cfg: dict):
    from .distill import DistillConfig

    sec = cfg["distill"]
    return DistillConfig(
        start_steps=int(sec["start_steps"]), halvings=int(sec["halvings"]),
        steps_per_stage=int(sec["steps_per_stage"]), lr=float(sec["lr"]),
        seed=int(sec["seed"]), batch=int(sec["batch"]),
    )


def slicer_cfg_from(cfg: dict):
    from .features import SlicerConfig

    sec = cfg["slicer"]
    return SlicerConfig(
        silence_db=float(sec["silence_db"]), min_silence=float(sec["min_silence"]),
        max_segment=float(sec["max_segment"]), min_segment=float(sec["min_segment"]),
    )
