"""Strict YAML configuration: unknown keys are rejected with their dotted
path, defaults are filled in, and `--override key.path=value` edits apply
last-wins before validation. All randomness fans out from the single root
`seed` by purpose-keyed derivation.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from . import nnet
from .data import MixtureSpec
from .errors import ConfigError
from .harness import AdapterConfig, SuiteEntry
from .policy import PolicyConfig
from .trainer import TrainerConfig


def _scalar(expected_type, default):
    def check(value, path):
        if value is None:
            return default
        if expected_type is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, expected_type) or isinstance(value, bool) != (expected_type is bool):
            raise ConfigError(
                f"{path}: expected {expected_type.__name__}, got {type(value).__name__}"
            )
        return value

    return check


def _any_list(default):
    def check(value, path):
        if value is None:
            return copy.deepcopy(default)
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return value

    return check


def _lr(value, path):
    # scalar applies to both parameter groups; a map may name them separately
    if value is None:
        return {"backbone": 1e-3, "head": 1e-3}
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return {"backbone": float(value), "head": float(value)}
    if isinstance(value, dict):
        unknown = set(value) - {"backbone", "head"}
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown parameter group")
        return {
            "backbone": float(value.get("backbone", 1e-3)),
            "head": float(value.get("head", 1e-3)),
        }
    raise ConfigError(f"{path}: expected number or {{backbone, head}} map")


SCHEMA = {
    "seed": _scalar(int, 0),
    "run_name": _scalar(str, "run"),
    "model": {
        "backbone_id": _scalar(str, "vlm"),
        "head_id": _scalar(str, "oft"),
        "k": _scalar(int, 8),
        "d": _scalar(int, 32),
        "hidden": _scalar(int, 64),
        "aux_scale": _scalar(float, 0.0),
        "denoise_steps": _scalar(int, 10),
        "system2_period": _scalar(int, 2),
        "fast_gamma": _scalar(float, 0.1),
        "fast_alphabet": _scalar(int, 256),
        "fast_token_dim": _scalar(int, 32),
        "fast_merge_budget": _scalar(int, 64),
        "fast_merges": _any_list([]),
    },
    "trainer": {
        "learning_rate": _lr,
        "lr_min": _scalar(float, 1e-5),
        "max_steps": _scalar(int, 5000),
        "batch_size": _scalar(int, 16),
        "accumulation_steps": _scalar(int, 1),
        "grad_clip_norm": _scalar(float, 1.0),
        "weight_decay": _scalar(float, 0.0),
        "checkpoint_every": _scalar(int, 10_000),
        "freeze_modules": _scalar(str, ""),
        "loss_scale": {"vlm": _scalar(float, 0.0)},
        "aux_batch_size": _scalar(int, 16),
    },
    "datasets": {
        "root": _scalar(str, "runs/data"),
        "gen": _any_list(
            [{"env": "point_reach", "tasks": 10, "episodes_per_task": 50,
              "max_steps": 60, "noise_scale": 0.0}]
        ),
        "vla_data": {
            "data_mix": _any_list([["point_reach", 1.0, "point2d"]]),
        },
        "aux_data": {"source": _scalar(str, "vla")},
    },
    "eval": {
        "suite": _any_list(
            [{"env": "point_reach", "tasks": 10, "episodes_per_task": 50,
              "max_steps": 60}]
        ),
        "adapter": {
            "resize_to": _any_list([64, 64]),
            "open_loop_horizon": _scalar(int, 4),
            "ensemble_m": _scalar(float, -1.0),  # negative disables
            "sticky_latch": _scalar(int, 0),  # 0 disables
            "delta_to_absolute": _scalar(bool, False),
            "gripper_dims": _any_list([]),
        },
    },
    "serve": {
        "host": _scalar(str, "127.0.0.1"),
        "port": _scalar(int, 8765),
        "queue_depth": _scalar(int, 32),
    },
}

_GEN_KEYS = {"env", "tasks", "episodes_per_task", "max_steps", "noise_scale"}
_SUITE_KEYS = {"env", "tasks", "episodes_per_task", "max_steps", "success_epsilon"}


def _walk(schema: dict, doc, path: str) -> dict:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    unknown = set(doc) - set(schema)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {path + '.' if path else ''}{key}")
    out = {}
    for key, rule in schema.items():
        sub_path = f"{path}.{key}" if path else key
        if isinstance(rule, dict):
            out[key] = _walk(rule, doc.get(key), sub_path)
        else:
            out[key] = rule(doc.get(key), sub_path)
    return out


def validate_config(doc: dict) -> dict:
    resolved = _walk(SCHEMA, doc, "")
    for i, entry in enumerate(resolved["datasets"]["gen"]):
        unknown = set(entry) - _GEN_KEYS
        if unknown:
            raise ConfigError(f"datasets.gen[{i}].{sorted(unknown)[0]}: unknown key")
    for i, entry in enumerate(resolved["eval"]["suite"]):
        unknown = set(entry) - _SUITE_KEYS
        if unknown:
            raise ConfigError(f"eval.suite[{i}].{sorted(unknown)[0]}: unknown key")
    for i, row in enumerate(resolved["datasets"]["vla_data"]["data_mix"]):
        if not (isinstance(row, list) and len(row) == 3):
            raise ConfigError(
                f"datasets.vla_data.data_mix[{i}]: expected [name, weight, robot_type]"
            )
    return resolved


def load_config(path, overrides: list[str] = ()) -> dict:
    with open(path) as f:
        doc = yaml.safe_load(f) or {}
    for item in overrides:
        doc = apply_override(doc, item)
    return validate_config(doc)


def apply_override(doc: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    dotted, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    doc = copy.deepcopy(doc)
    node = doc
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted}: {part} is not a mapping")
    node[parts[-1]] = value
    return doc


# ---------------------------------------------------------------------------
# purpose-keyed seed derivation


def purpose_seed(root_seed: int, purpose: str) -> int:
    h = 0xCBF29CE484222325
    for byte in purpose.encode():
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    rng = nnet.derive_rng(root_seed, h)
    return int(rng.integers(0, 2**31 - 1))


# ---------------------------------------------------------------------------
# section -> runtime objects


def policy_config(resolved: dict) -> PolicyConfig:
    m = resolved["model"]
    return PolicyConfig(
        backbone_id=m["backbone_id"],
        head_id=m["head_id"],
        k=m["k"],
        d=m["d"],
        hidden=m["hidden"],
        aux_scale=m["aux_scale"],
        seed=purpose_seed(resolved["seed"], "model_init"),
        denoise_steps=m["denoise_steps"],
        system2_period=m["system2_period"],
        fast_gamma=m["fast_gamma"],
        fast_alphabet=m["fast_alphabet"],
        fast_token_dim=m["fast_token_dim"],
        fast_merges=tuple(tuple(p) for p in m["fast_merges"]),
    )


def trainer_config(resolved: dict) -> TrainerConfig:
    t = resolved["trainer"]
    return TrainerConfig(
        learning_rate=t["learning_rate"],
        lr_min=t["lr_min"],
        max_steps=t["max_steps"],
        batch_size=t["batch_size"],
        accumulation_steps=t["accumulation_steps"],
        grad_clip_norm=t["grad_clip_norm"],
        weight_decay=t["weight_decay"],
        checkpoint_every=t["checkpoint_every"],
        freeze_modules=t["freeze_modules"],
        loss_scale_vlm=t["loss_scale"]["vlm"],
        aux_batch_size=t["aux_batch_size"],
        seed=resolved["seed"],
    )


def mixture_spec(resolved: dict) -> MixtureSpec:
    return MixtureSpec.from_lists(
        resolved["datasets"]["vla_data"]["data_mix"],
        seed=purpose_seed(resolved["seed"], "data_sampling"),
    )


def adapter_config(resolved: dict) -> AdapterConfig:
    a = resolved["eval"]["adapter"]
    return AdapterConfig(
        resize_to=tuple(a["resize_to"]),
        open_loop_horizon=a["open_loop_horizon"],
        ensemble_m=a["ensemble_m"] if a["ensemble_m"] >= 0 else None,
        sticky_latch=a["sticky_latch"] if a["sticky_latch"] > 0 else None,
        delta_to_absolute=a["delta_to_absolute"],
        gripper_dims=tuple(a["gripper_dims"]),
    )


def suite_entries(resolved: dict) -> list[SuiteEntry]:
    task_seed = purpose_seed(resolved["seed"], "task_placement")
    return [
        SuiteEntry(
            env_id=e["env"],
            tasks=e["tasks"],
            episodes_per_task=e["episodes_per_task"],
            max_steps=e.get("max_steps", 60),
            success_epsilon=e.get("success_epsilon", 0.1),
            task_seed=task_seed,
        )
        for e in resolved["eval"]["suite"]
    ]


def run_dir(resolved: dict) -> Path:
    return Path("runs") / resolved["run_name"]
