"""Run configuration: one strict JSON document with three sections.

``generator`` (synthetic benchmark settings), ``architecture`` (context
and hidden sizes; feature/vocab dims come from the generator so the two
can never disagree), and ``training`` (TrainConfig fields). Unknown keys
are errors, not warnings: a typo in alpha/delta/tau would silently
invalidate an experiment. Only generator.vocab_size and
generator.feature_dim are required; everything else has a default.

training.alpha defaults to 1e-3 in the EMA modes (kaizen, stu) and to 0.0
in the frozen-teacher modes, where a nonzero value is rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

from .datasets import GenConfig
from .errors import ConfigError
from .model import Architecture
from .trainer import EMA_MODES, TrainConfig

_SECTIONS = ("generator", "architecture", "training")
_ARCH_KEYS = ("context", "hidden_sizes")
_REQUIRED_GENERATOR = ("vocab_size", "feature_dim")


@dataclass(frozen=True)
class AppConfig:
    gen: GenConfig
    arch: Architecture
    train: TrainConfig


def _require_type(value, types, key, label):
    if isinstance(value, bool) or not isinstance(value, types):
        raise ConfigError(f"{key} must be {label}, got {value!r}")
    return value


def _as_int(value, key) -> int:
    return int(_require_type(value, int, key, "an integer"))


def _as_float(value, key) -> float:
    return float(_require_type(value, (int, float), key, "a number"))


def _as_str(value, key) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _as_int_list(value, key) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a nonempty list of integers, got {value!r}")
    return tuple(_as_int(v, key) for v in value)


def _check_unknown(doc: dict, allowed, where: str):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def parse_config(doc, mode_override: str | None = None, seed_override: int | None = None) -> AppConfig:
    """Validate a config document and assemble the typed configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _check_unknown(doc, _SECTIONS, "config section")

    gen_doc = doc.get("generator", {})
    if not isinstance(gen_doc, dict):
        raise ConfigError("generator section must be an object")
    gen_fields = {f.name: f for f in fields(GenConfig)}
    _check_unknown(gen_doc, gen_fields, "generator")
    for req in _REQUIRED_GENERATOR:
        if req not in gen_doc:
            raise ConfigError(f"generator.{req} is required")
    gen_kwargs = {}
    for name in gen_fields:
        if name not in gen_doc:
            continue
        key = f"generator.{name}"
        if name in ("noise_sigma", "source_shift", "target_shift", "silence_prob"):
            gen_kwargs[name] = _as_float(gen_doc[name], key)
        else:
            gen_kwargs[name] = _as_int(gen_doc[name], key)
    gen = GenConfig(**gen_kwargs)
    gen.validate()

    arch_doc = doc.get("architecture", {})
    if not isinstance(arch_doc, dict):
        raise ConfigError("architecture section must be an object")
    _check_unknown(arch_doc, _ARCH_KEYS, "architecture")
    context = _as_int(arch_doc["context"], "architecture.context") if "context" in arch_doc else 2
    hidden = (
        _as_int_list(arch_doc["hidden_sizes"], "architecture.hidden_sizes")
        if "hidden_sizes" in arch_doc
        else (64, 64)
    )
    arch = Architecture(feature_dim=gen.feature_dim, context=context, hidden_sizes=hidden, vocab_size=gen.vocab_size)

    train_doc = doc.get("training", {})
    if not isinstance(train_doc, dict):
        raise ConfigError("training section must be an object")
    train_fields = {f.name: f for f in fields(TrainConfig)}
    _check_unknown(train_doc, train_fields, "training")
    mode = mode_override if mode_override is not None else train_doc.get("mode", "stu")
    mode = _as_str(mode, "training.mode")
    train_kwargs = {"mode": mode, "alpha": 1e-3 if mode in EMA_MODES else 0.0}
    for name in train_fields:
        if name == "mode" or name not in train_doc:
            continue
        key = f"training.{name}"
        if name in ("alpha", "tau", "lr"):
            train_kwargs[name] = _as_float(train_doc[name], key)
        else:
            train_kwargs[name] = _as_int(train_doc[name], key)
    if seed_override is not None:
        train_kwargs["seed"] = int(seed_override)
    train = TrainConfig(**train_kwargs)
    train.validate()
    return AppConfig(gen=gen, arch=arch, train=train)


def load_config(path, mode_override: str | None = None, seed_override: int | None = None) -> AppConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(doc, mode_override=mode_override, seed_override=seed_override)


def config_to_dict(cfg: AppConfig) -> dict:
    """Fully explicit document (every key present) that re-parses to `cfg`."""
    return {
        "generator": {f.name: getattr(cfg.gen, f.name) for f in fields(GenConfig)},
        "architecture": {"context": cfg.arch.context, "hidden_sizes": list(cfg.arch.hidden_sizes)},
        "training": {f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)},
    }


def default_config() -> AppConfig:
    return parse_config({"generator": {"vocab_size": 8, "feature_dim": 16}})


def with_train(cfg: AppConfig, **changes) -> AppConfig:
    """AppConfig with some TrainConfig fields replaced (validated)."""
    train = replace(cfg.train, **changes)
    train.validate()
    return AppConfig(gen=cfg.gen, arch=cfg.arch, train=train)
