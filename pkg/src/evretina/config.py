"""Strict JSON run configuration shared by the command-line stages."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .emulator import EmulatorConfig
from .energy import EnergyModel
from .errors import ConfigError
from .srnn import PRESETS, ArchSpec, NeuronConfig
from .training import TrainConfig


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class RangeError(ConfigError):
    pass


@dataclass
class RunConfig:
    window_ms: float = 33.0
    steps: int = 20
    tau: float = 2.0
    seed: int = 0
    threads: int | None = None  # None -> all available cores
    preset: str = "full"
    arch: dict = field(default_factory=dict)  # ArchSpec field overrides
    train: TrainConfig = field(default_factory=TrainConfig)
    emulator: EmulatorConfig = field(default_factory=EmulatorConfig)
    energy: dict = field(default_factory=dict)  # EnergyModel field overrides
    data: dict = field(default_factory=dict)
    denoise: bool = True
    base_dir: str = "."  # directory relative data paths resolve against

    def arch_spec(self) -> ArchSpec:
        spec = PRESETS[self.preset]()
        d = spec.to_dict()
        d.update(self.arch)
        # top-level tau applies to both neuron types unless the arch block sets them
        lif = dict(d["lif"])
        if "tau" not in (self.arch.get("lif") or {}):
            lif["tau"] = self.tau
        d["lif"] = lif
        if "mplif_tau" not in self.arch:
            d["mplif_tau"] = self.tau
        try:
            return ArchSpec.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"arch: {exc}") from exc

    def energy_model(self) -> EnergyModel:
        try:
            return replace(EnergyModel(), **self.energy)
        except TypeError as exc:
            raise UnknownKey(f"energy: {exc}") from exc
        except ValueError as exc:
            raise RangeError(f"energy: {exc}") from exc

    def train_config(self, threads: int | None = None, seed: int | None = None) -> TrainConfig:
        over = {}
        if threads is not None:
            over["threads"] = threads
        if seed is not None:
            over["seed"] = seed
        return replace(self.train, **over)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


_TOP_KEYS = {f.name for f in fields(RunConfig)} - {"base_dir"}
_DATA_KEYS = {"manifest", "synthetic"}
_SYNTH_KEYS = {"n_scenes", "geometry", "duration_s", "fps", "hop_ms"}


def _sub(cls, raw: Any, section: str):
    if not isinstance(raw, dict):
        raise ParseError(f"{section} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise UnknownKey(f"{section}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except ConfigError as exc:
        raise RangeError(f"{section}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise RangeError(f"{section}: {exc}") from exc


def config_from_dict(raw: Any, base_dir: str = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ParseError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise UnknownKey(f"unknown keys {unknown}")
    d = dict(raw)
    if "train" in d:
        d["train"] = _sub(TrainConfig, d["train"], "train")
    if "emulator" in d:
        d["emulator"] = _sub(EmulatorConfig, d["emulator"], "emulator")
    cfg = RunConfig(**d, base_dir=base_dir)

    if not isinstance(cfg.steps, int) or isinstance(cfg.steps, bool) or cfg.steps < 1:
        raise RangeError("steps must be an integer >= 1")
    if not isinstance(cfg.window_ms, (int, float)) or not cfg.window_ms > 0:
        raise RangeError("window_ms must be > 0")
    if not isinstance(cfg.tau, (int, float)) or not cfg.tau >= 1:
        raise RangeError("tau must be >= 1")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise RangeError("seed must be a non-negative integer")
    if cfg.threads is not None and (not isinstance(cfg.threads, int) or cfg.threads < 1):
        raise RangeError("threads must be >= 1")
    if cfg.preset not in PRESETS:
        raise RangeError(f"preset must be one of {sorted(PRESETS)}")
    if not isinstance(cfg.arch, dict):
        raise ParseError("arch must be a JSON object")
    arch_keys = {f.name for f in fields(ArchSpec)}
    if set(cfg.arch) - arch_keys:
        raise UnknownKey(f"arch: unknown keys {sorted(set(cfg.arch) - arch_keys)}")
    if isinstance(cfg.arch.get("lif"), dict):
        bad = set(cfg.arch["lif"]) - {f.name for f in fields(NeuronConfig)}
        if bad:
            raise UnknownKey(f"arch.lif: unknown keys {sorted(bad)}")
    if not isinstance(cfg.energy, dict):
        raise ParseError("energy must be a JSON object")
    cfg.energy_model()
    if not isinstance(cfg.data, dict):
        raise ParseError("data must be a JSON object")
    if set(cfg.data) - _DATA_KEYS:
        raise UnknownKey(f"data: unknown keys {sorted(set(cfg.data) - _DATA_KEYS)}")
    synth = cfg.data.get("synthetic")
    if synth is not None:
        if not isinstance(synth, dict):
            raise ParseError("data.synthetic must be a JSON object")
        if set(synth) - _SYNTH_KEYS:
            raise UnknownKey(f"data.synthetic: unknown keys {sorted(set(synth) - _SYNTH_KEYS)}")
    cfg.arch_spec()
    return cfg


def parse_config(path: str | os.PathLike | None) -> RunConfig:
    """Load and validate a config file; ``None`` yields all defaults."""
    if path is None:
        return config_from_dict({})
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    return config_from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))
