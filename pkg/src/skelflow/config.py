"""Run configuration: nested YAML mapping with defaults, presets and overrides.

Every section maps onto one of the library's config dataclasses, so the
defaults here are the defaults of the code. Unknown keys are rejected with
their full dotted path. ``preset`` picks a base layer (``desk`` or
``full``) that the file and ``--set`` overrides are merged onto.
"""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .c3d import C3dConfig
from .data import BenchmarkConfig
from .errors import InvalidArgumentError
from .fusion import FusionConfig
from .skeleton import ResTcnConfig
from .training import FlowPrep, TrainConfig


class MissingKeyError(InvalidArgumentError):
    def __init__(self, key: str, why: str = "") -> None:
        super().__init__(f"missing config key {key}" + (f" ({why})" if why else ""))
        self.key = key


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


def _fields(instance, skip: Sequence[str] = ()) -> dict:
    return {f.name: _plain(getattr(instance, f.name)) for f in dataclasses.fields(instance) if f.name not in skip}


def _defaults() -> dict:
    c3d = _fields(C3dConfig(), skip=("attention",))
    c3d["attention"] = "none"
    return {
        "preset": "desk",
        "seed": 0,
        "data": {
            "manifest": None,
            "benchmark": _fields(BenchmarkConfig()),
            "protocol": "cross_subject",
            "train_actors": [0, 1],
            "test_view": 2,
        },
        "skeleton": {
            "model": _fields(ResTcnConfig()),
            "train": _fields(
                TrainConfig(epochs=50, batch_size=8, learning_rate=0.01, schedule="plateau",
                            decay_factor=10.0, patience=5)
            ),
            "checkpoint": None,
        },
        "flow": {
            "model": c3d,
            "prep": _fields(FlowPrep()),
            "train": _fields(
                TrainConfig(epochs=48, batch_size=8, learning_rate=0.005, schedule="step",
                            decay_factor=5.0, decay_every=20)
            ),
            "checkpoint": None,
            "scores": None,
        },
        "fusion": {
            "policy": "joint",
            "score_layers": "sum",
            "allow_untrained_skeleton": False,
            "train": _fields(
                TrainConfig(epochs=48, batch_size=8, learning_rate=0.005, schedule="step",
                            decay_factor=5.0, decay_every=20)
            ),
            "checkpoint": None,
        },
        "scores": {"layers": "sum"},
        "masks": {"sample": 0, "layer": 1, "level": 1},
        "eval": {"model": "flow", "predictions": None},
        "run": {"record_wall_time": True},
    }


DEFAULTS = _defaults()

_FULL_SKELETON = _fields(ResTcnConfig.full_scale())
_FULL_C3D = _fields(C3dConfig.full_scale(), skip=("attention",))

PRESETS: dict[str, dict] = {
    "desk": {},
    # full-scale hyperparameters; far too slow for a CPU but kept expressible
    "full": {
        "data": {"benchmark": {"num_classes": 8}},
        "skeleton": {
            "model": {**_FULL_SKELETON, "num_classes": 8},
            "train": {"epochs": 150, "batch_size": 128, "learning_rate": 0.01, "schedule": "plateau",
                      "decay_factor": 10.0, "patience": 10, "l1_weight": 1e-4, "momentum": 0.9},
        },
        "flow": {
            "model": {**_FULL_C3D, "num_classes": 8, "dropout": 0.5},
            "prep": {"downsample": 2, "clip_len": 16, "overlap": 8, "crop": 112},
            "train": {"epochs": 30, "batch_size": 60, "learning_rate": 0.003, "schedule": "step",
                      "decay_factor": 5.0, "decay_every": 4, "l1_weight": 1e-4, "momentum": 0.9},
        },
        "fusion": {
            "train": {"epochs": 30, "batch_size": 60, "learning_rate": 0.003, "schedule": "step",
                      "decay_factor": 5.0, "decay_every": 4, "l1_weight": 1e-4, "momentum": 0.9},
        },
    },
}

# keys whose value is a free-form mapping or may change type freely
_OPEN = {"flow.model.attention", "flow.model.pools", "flow.model.radius_override"}


def merge(base: dict, update: dict, path: str = "") -> dict:
    """Recursive merge that rejects keys absent from ``base``."""
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        full = f"{path}{key}"
        if key not in out:
            raise InvalidArgumentError(f"unknown config key {full}")
        if isinstance(out[key], dict) and full not in _OPEN:
            if not isinstance(value, dict):
                raise InvalidArgumentError(f"config key {full} must be a mapping")
            out[key] = merge(out[key], value, full + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise InvalidArgumentError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise InvalidArgumentError(f"override {text!r} has an empty key")
    return key, yaml.safe_load(raw) if raw.strip() else None


def _nest(key: str, value) -> dict:
    node: dict = {}
    cur = node
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return node


class RunConfig:
    def __init__(self, tree: dict) -> None:
        self.tree = tree

    @classmethod
    def load(
        cls,
        path: Optional[str] = None,
        overrides: Sequence[str] = (),
        seed: Optional[int] = None,
    ) -> "RunConfig":
        user: dict = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise InvalidArgumentError(f"config file {path} does not exist")
            user = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            if not isinstance(user, dict):
                raise InvalidArgumentError(f"config file {path} must hold a mapping")
        parsed = [parse_override(o) for o in overrides]
        preset = user.get("preset", "desk")
        for k, v in parsed:
            if k == "preset":
                preset = v
        if preset not in PRESETS:
            raise InvalidArgumentError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        tree = merge(DEFAULTS, PRESETS[preset])
        tree = merge(tree, user)
        for k, v in parsed:
            tree = merge(tree, _nest(k, v))
        if seed is not None:
            tree["seed"] = seed
        return cls(tree)

    def get(self, key: str):
        node = self.tree
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                raise MissingKeyError(key)
            node = node[part]
        return node

    def require(self, key: str, why: str = ""):
        value = self.get(key)
        if value is None:
            raise MissingKeyError(key, why)
        return value

    def dump(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=False, default_flow_style=None)

    def write_resolved(self, out_dir) -> Path:
        out = Path(out_dir) / "config.resolved"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(self.dump(), encoding="utf-8")
        return out

    # -- typed views --------------------------------------------------------

    def benchmark(self) -> BenchmarkConfig:
        b = dict(self.get("data.benchmark"))
        b["distractor_amplitude"] = tuple(b["distractor_amplitude"])
        return BenchmarkConfig(**b)

    def skeleton_model(self) -> ResTcnConfig:
        return ResTcnConfig(**self.get("skeleton.model"))

    def flow_model(self, attention=None) -> C3dConfig:
        m = dict(self.get("flow.model"))
        if attention is not None:
            m["attention"] = attention
        return C3dConfig(**m)

    def flow_prep(self) -> FlowPrep:
        return FlowPrep(**self.get("flow.prep"))

    def train_config(self, section: str) -> TrainConfig:
        return TrainConfig(**self.get(f"{section}.train"))

    def fusion(self, flow_width: int, skeleton_width: int, num_classes: int, policy=None) -> FusionConfig:
        return FusionConfig(
            flow_width=flow_width,
            skeleton_width=skeleton_width,
            num_classes=num_classes,
            policy=policy or self.get("fusion.policy"),
            score_layers=self.get("fusion.score_layers"),
            allow_untrained_skeleton=bool(self.get("fusion.allow_untrained_skeleton")),
        )
