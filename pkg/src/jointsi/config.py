"""JSON run configuration: schema, validation and conversion to runner configs.

A config file is one JSON object with the optional sections ``model``,
``train``, ``jsi``, ``oracle`` and ``run``. Every key is optional; unknown keys
are rejected with the offending key named in the error.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import jsonschema

from .baselines import ReinventConfig
from .harness import (ABLATION_VARIANTS, OFFLINE_METHODS, ONLINE_METHODS, OfflineRunConfig,
                      OnlineRunConfig, WorldConfig, _finetune_default, _retrain_default)
from .jsi import MU_KINDS, OFFLINE_BEST, ONLINE_BEST, JsiConfig
from .seqcore import ConfigError

OUT_DIR_ENV = "JSI_OUT_DIR"

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_PATH = {"type": ["string", "null"]}


def _section(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": _section({
            "max_len": {"type": "integer", "minimum": 2}, "context": _POS_INT, "embed_dim": _POS_INT,
            "hidden": _POS_INT, "pretrain_size": _POS_INT, "pretrain_epochs": {"type": "integer", "minimum": 0},
            "pretrain_learning_rate": {"type": "number", "minimum": 0},
        }),
        "train": _section({
            "lam": {"type": "number", "minimum": 0}, "learning_rate": {"type": "number", "minimum": 0},
            "batch_size": _POS_INT, "epochs": {"type": "integer", "minimum": 0},
            "patience": {"type": ["integer", "null"], "minimum": 1},
            "max_steps": {"type": ["integer", "null"], "minimum": 1},
            "generative_weight": {"type": "number", "minimum": 0},
            "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
        }),
        "jsi": _section({
            "K": _POS_INT, "n_rounds": _POS_INT, "sigma": _POS_NUM, "temperature": _POS_NUM,
            "mu_kind": {"enum": list(MU_KINDS)},
            "preset": {"enum": sorted(OFFLINE_BEST)},
        }),
        "oracle": _section({
            "landscape": _PATH, "landscape_seed": _INT, "budget": _POS_INT, "n_eval": _POS_INT,
            "dataset_size": {"type": "integer", "minimum": 2},
            "active_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        }),
        "run": _section({
            "seed": {"type": "integer", "minimum": 0},
            "dataset": _PATH, "checkpoint": _PATH,
            "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "method": {"enum": sorted(set(OFFLINE_METHODS) | set(ONLINE_METHODS))},
            "keep_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "retrain_steps": {"type": "integer", "minimum": 0},
            "best_of_n": _POS_INT,
            "variants": {"type": "array", "items": {"enum": list(ABLATION_VARIANTS)}},
            "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "reinvent": _section({
                "sigma_r": _POS_NUM, "learning_rate": {"type": "number", "minimum": 0},
                "batch_size": _POS_INT, "steps": {"type": ["integer", "null"], "minimum": 1},
                "temperature": _POS_NUM,
            }),
        }),
    },
}


def _key_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path)


def validate(doc) -> dict:
    """Check ``doc`` against the schema; raise ``ConfigError`` naming the offending key."""
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return doc
    err = errors[0]
    where = _key_path(err)
    if err.validator == "additionalProperties":
        known = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - known)
        name = f"{where}.{extra[0]}" if where else extra[0]
        raise ConfigError(f"unknown config key {name!r}")
    raise ConfigError(f"invalid config value at {where or '<root>'!r}: {err.message}")


@dataclasses.dataclass
class RunSpec:
    """A validated config document plus command-line overrides."""

    doc: dict
    seed_override: int | None = None

    def section(self, name: str) -> dict:
        return dict(self.doc.get(name, {}))

    @property
    def seed(self) -> int:
        if self.seed_override is not None:
            return self.seed_override
        return int(self.section("run").get("seed", 0))

    @property
    def seeds(self) -> list[int]:
        if self.seed_override is not None:
            return [self.seed_override]
        return list(self.section("run").get("seeds", [self.seed]))

    def world(self) -> WorldConfig:
        m, o = self.section("model"), self.section("oracle")
        keys = {f.name for f in dataclasses.fields(WorldConfig)}
        return WorldConfig(**{k: v for k, v in {**m, **o}.items() if k in keys})

    def _jsi(self, regime: str, default: JsiConfig) -> JsiConfig:
        j = self.section("jsi")
        preset = j.pop("preset", None)
        if preset is not None:
            K, n, s = (OFFLINE_BEST if regime == "offline" else ONLINE_BEST)[preset]
            default = dataclasses.replace(default, K=K, n_rounds=n, sigma=s)
        return dataclasses.replace(default, **j)

    def offline(self, method: str | None = None) -> OfflineRunConfig:
        o, r = self.section("oracle"), self.section("run")
        method = method or r.get("method", "jsi")
        if method not in OFFLINE_METHODS:
            raise ConfigError(f"run.method {method!r} is not an offline method {OFFLINE_METHODS}")
        base = OfflineRunConfig()
        return OfflineRunConfig(
            world=self.world(), dataset=r.get("dataset"), checkpoint=r.get("checkpoint"),
            train=dataclasses.replace(_finetune_default(), **self.section("train")),
            jsi=self._jsi("offline", base.jsi),
            n_eval=o.get("n_eval", base.n_eval), budget=o.get("budget", base.budget),
            train_fraction=r.get("train_fraction", base.train_fraction), method=method,
            best_of_n=r.get("best_of_n", base.best_of_n), seed=self.seed)

    def online(self, method: str | None = None) -> OnlineRunConfig:
        o, r = self.section("oracle"), self.section("run")
        method = method or r.get("method", "jsi")
        if method not in ONLINE_METHODS:
            raise ConfigError(f"run.method {method!r} is not an online method {ONLINE_METHODS}")
        base = OnlineRunConfig()
        return OnlineRunConfig(
            world=self.world(), jsi=self._jsi("online", base.jsi), budget=o.get("budget", base.budget),
            keep_fraction=r.get("keep_fraction", base.keep_fraction),
            retrain_steps=r.get("retrain_steps", base.retrain_steps),
            retrain=dataclasses.replace(_retrain_default(), **self.section("train")),
            method=method, best_of_n=r.get("best_of_n", base.best_of_n),
            reinvent=dataclasses.replace(ReinventConfig(), **r.get("reinvent", {})), seed=self.seed)

    @property
    def variants(self) -> list[str]:
        v = self.section("run").get("variants", list(ABLATION_VARIANTS))
        if not v:
            raise ConfigError("run.variants must list at least one ablation variant")
        return v


def parse_config(text: str, seed: int | None = None) -> RunSpec:
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunSpec(validate(doc), seed)


def load_config(path: str | Path | None, seed: int | None = None) -> RunSpec:
    if path is None:
        return RunSpec({}, seed)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(encoding="utf-8"), seed)


def output_dir(flag: str | None, default: str = "runs") -> Path:
    """``--out`` wins, then the ``JSI_OUT_DIR`` environment variable, then ``default``."""
    return Path(flag or os.environ.get(OUT_DIR_ENV) or default)
