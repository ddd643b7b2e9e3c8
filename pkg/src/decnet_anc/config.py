"""Experiment configuration: one versioned JSON document, validated before any run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import InvalidArgumentError
from .experiments import SceneSpec, synth_scene
from .paths import AcousticScene, load_scene, scene_from_dict
from .simulate import ALGORITHMS, AlgorithmConfig, NoiseSource, ScenarioEvent

CONFIG_VERSION = 1

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}

SCENE_SYNTH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "K": _pos_int,
        "Lp": _pos_int,
        "Ls": _pos_int,
        "seed": _nonneg_int,
        "secondary_t60_taps": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "primary_t60_taps": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "direct_delay": _nonneg_int,
        "cross_delay": _nonneg_int,
        "cross_gain": _num,
        "primary_delay": _nonneg_int,
        "noise_variance": {"type": "number", "minimum": 0},
        "free_field": {"type": "boolean"},
        "alternate": {"type": "boolean"},
        "sample_rate_hz": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "file": {"type": "string"},
                "synth": SCENE_SYNTH_SCHEMA,
                "inline": {"type": "object"},
            },
            "maxProperties": 1,
        },
        "algorithms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name"],
                "properties": {
                    "name": {"enum": list(ALGORITHMS)},
                    "label": {"type": "string"},
                    "L": _pos_int,
                    "mu": {"type": ["number", "null"], "exclusiveMinimum": 0},
                    "alpha": {"type": "number", "exclusiveMinimum": 0},
                    "beta": {"type": "number", "minimum": 0},
                    "delay": {"type": ["integer", "null"], "minimum": 0},
                    "L_f": _pos_int,
                },
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["white", "car", "file"]},
                "variance": {"type": "number", "exclusiveMinimum": 0},
                "path": {"type": "string"},
            },
        },
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["at_s"],
                "properties": {"at_s": {"type": "number", "minimum": 0}, "action": {"const": "switch-primary"}},
            },
        },
        "n_runs": _pos_int,
        "master_seed": _nonneg_int,
        "output_dir": {"type": "string"},
        "window": _pos_int,
        "checkpoint": {"type": "string"},
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": {"type": ["integer", "null"], "minimum": 0},
                "epochs": _nonneg_int,
                "steps_per_epoch": _pos_int,
                "batch": _pos_int,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "hidden": _pos_int,
                "frame_length": _pos_int,
                "window": _pos_int,
                "optimizer": {"enum": ["adam", "sgd"]},
                "seed": _nonneg_int,
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "L_list": {"type": "array", "items": _pos_int},
                "channel": _nonneg_int,
                "simulate": {"type": "boolean"},
                "n_samples": _pos_int,
                "n_runs": _pos_int,
            },
        },
    },
}


@dataclass
class ExperimentConfig:
    scene: dict = field(default_factory=lambda: {"synth": {}})
    algorithms: list = field(default_factory=list)
    noise: dict = field(default_factory=dict)
    duration_s: float = 20.0
    events: list = field(default_factory=list)
    n_runs: int = 1
    master_seed: int = 0
    output_dir: str = "out"
    window: int = 400
    checkpoint: str | None = None
    training: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def build_scene(self) -> AcousticScene:
        if "file" in self.scene:
            return load_scene(self._resolve(self.scene["file"]))
        if "inline" in self.scene:
            return scene_from_dict(self.scene["inline"])
        return synth_scene(SceneSpec(**self.scene.get("synth", {})))

    def algorithm_configs(self, default_L=160, default_tau=None):
        out = []
        for a in self.algorithms:
            a = dict(a)
            name = a.pop("name")
            if name == "InverseFxLMS" and a.get("delay") is None:
                a["delay"] = default_tau
            out.append(AlgorithmConfig(name, adapt=name != "FixedWiener", **{"L": default_L, **a}))
        return out

    def noise_source(self, seed) -> NoiseSource:
        n = dict(self.noise)
        if "path" in n:
            n["path"] = str(self._resolve(n["path"]))
        return NoiseSource(seed=seed, **n)

    def scenario_events(self, fs):
        return [ScenarioEvent(int(round(e["at_s"] * fs)), e.get("action", "switch-primary")) for e in self.events]

    def _resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def validate(doc) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise InvalidArgumentError(f"config {where}: {exc.message}") from None


def parse_config(doc, base_dir=None) -> ExperimentConfig:
    validate(doc)
    kw = {k: v for k, v in doc.items() if k != "version"}
    cfg = ExperimentConfig(**kw)
    if base_dir is not None:
        cfg.base_dir = Path(base_dir)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)
