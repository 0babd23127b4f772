"""Run configuration: one YAML/JSON document, strict keys, dotted overrides."""

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union, get_args, get_origin, get_type_hints

import numpy as np
import yaml

from .graph import BIPARTITE, HOMOGENEOUS, load_events
from .htsbm import (DEFAULT_DURATIONS, HtsbmParams, PlantedHyperedge, block_communities, default_sweep_params,
                    plant_disjoint, sample_htsbm)
from .model import BuilderConfig, ModelConfig
from .train import TrainConfig

OUTPUT_ROOT_ENV = "HTGN_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class HtsbmConfig:
    preset: Optional[str] = None  # "sweep" or "learning"; explicit keys below are then ignored
    n: int = 60
    K: int = 3
    lambda0: Optional[list] = None  # full K x K matrix; overrides diag/off
    lambda0_diag: float = 1.0
    lambda0_off: float = 0.1
    lam: float = 1.0
    noise_scale: float = 1.0
    horizon: float = 1.0
    jitter: float = 1e-3
    planted: list = field(default_factory=list)  # [{members, low, high, bursts}]
    disjoint: Optional[dict] = None  # {count, size, seed, bursts, low, high}


@dataclass
class DataConfig:
    path: Optional[str] = None
    side_b_path: Optional[str] = None
    kind: str = HOMOGENEOUS
    d_e: Optional[int] = None
    seed: Optional[int] = None
    htsbm: Optional[HtsbmConfig] = None


@dataclass
class OutputConfig:
    directory: str = "runs/default"
    wall_clock: bool = False


@dataclass
class SweepConfig:
    durations: list = field(default_factory=lambda: list(DEFAULT_DURATIONS))
    seeds: int = 20
    mode: str = "window"
    seed0: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    builder: BuilderConfig = field(default_factory=BuilderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["split"] = list(d["train"]["split"])
        return d

    def output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        p = Path(self.output.directory)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p


_NESTED = {
    RunConfig: {"data": DataConfig, "builder": BuilderConfig, "model": ModelConfig, "train": TrainConfig,
                "output": OutputConfig, "sweep": SweepConfig},
    DataConfig: {"htsbm": HtsbmConfig},
}


def _coerce(hint, v, where: str):
    """Match a parsed scalar to a numeric field type (YAML reads ``3e-3`` as a string)."""
    if get_origin(hint) is Union:
        if v is None and type(None) in get_args(hint):
            return None
        hint = next(a for a in get_args(hint) if a is not type(None))
    if hint is float and not isinstance(v, bool):
        if isinstance(v, (int, float)):
            return float(v)
        if isinstance(v, str):
            try:
                return float(v)
            except ValueError:
                pass
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if hint is int and (isinstance(v, bool) or not isinstance(v, int)):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if hint is bool and not isinstance(v, bool):
        raise ConfigError(f"{where}: expected true or false, got {v!r}")
    return v


def _build(cls, d, where: str):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(d).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    hints = get_type_hints(cls)
    kw = {}
    for k, v in d.items():
        sub = _NESTED.get(cls, {}).get(k)
        key = f"{where}.{k}" if where else k
        if sub is not None and v is not None:
            kw[k] = _build(sub, v, key)
        else:
            kw[k] = _coerce(hints.get(k), v, key)
    try:
        obj = cls(**kw)
    except TypeError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None
    return obj


def config_from_dict(d: dict) -> RunConfig:
    cfg = _build(RunConfig, copy.deepcopy(d), "")
    if isinstance(cfg.train.split, list):
        cfg.train.split = tuple(cfg.train.split)
    try:
        cfg.model.validate()
        cfg.train.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.data.kind not in (HOMOGENEOUS, BIPARTITE):
        raise ConfigError(f"data.kind must be {HOMOGENEOUS!r} or {BIPARTITE!r}")
    if cfg.model.mode != cfg.data.kind:
        raise ConfigError(f"model.mode {cfg.model.mode!r} differs from data.kind {cfg.data.kind!r}")
    if cfg.sweep.mode not in ("window", "count"):
        raise ConfigError("sweep.mode must be 'window' or 'count'")
    return cfg


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    d = copy.deepcopy(d)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        cur = d
        for p in parts[:-1]:
            nxt = cur.get(p)
            if nxt is None:
                nxt = cur[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p} is not a section")
            cur = nxt
        cur[parts[-1]] = yaml.safe_load(raw)
    return d


def load_config(path=None, overrides=()) -> RunConfig:
    d = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        d = yaml.safe_load(text) or {}
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(apply_overrides(d, overrides))


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def learning_params() -> HtsbmParams:
    """100 nodes, 4 communities, 30 recurring triangles, light background."""
    n, K, H = 100, 4, 1000.0
    com = block_communities(n, K)
    planted = plant_disjoint(com, 30, 3, seed=1, bursts=50)
    L0 = np.full((K, K), 0.05) + 0.95 * np.eye(K)
    p = HtsbmParams(n, K, com, L0, lam=1e-3, planted=planted, noise_scale=1.0, horizon=H, jitter=0.5)
    p.noise_scale = 500.0 / p.expected_background()
    return p


PRESETS = {"sweep": default_sweep_params, "learning": learning_params}


def htsbm_params(h: HtsbmConfig) -> HtsbmParams:
    if h.preset is not None:
        if h.preset not in PRESETS:
            raise ConfigError(f"unknown htsbm preset {h.preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[h.preset]()
    com = block_communities(h.n, h.K)
    if h.lambda0 is not None:
        L0 = np.asarray(h.lambda0, dtype=np.float64)
    else:
        L0 = np.full((h.K, h.K), float(h.lambda0_off)) + (float(h.lambda0_diag) - float(h.lambda0_off)) * np.eye(h.K)
    planted = [PlantedHyperedge(tuple(p["members"]), p.get("low", 0.0), p.get("high"), p.get("bursts", 1))
               for p in h.planted]
    if h.disjoint:
        kw = dict(h.disjoint)
        planted += plant_disjoint(com, kw.pop("count"), kw.pop("size", 3), kw.pop("seed", 0), **kw)
    try:
        return HtsbmParams(h.n, h.K, com, L0, lam=h.lam, planted=planted, noise_scale=h.noise_scale,
                           horizon=h.horizon, jitter=h.jitter)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"data.htsbm: {e}") from None


def load_dataset(cfg: RunConfig):
    """``(graph, planted or None)`` from ``data.path`` or the HT-SBM section."""
    d = cfg.data
    if d.path:
        g = load_events(d.path, kind=d.kind, d_e=d.d_e, side_b_path=d.side_b_path)
        return g, None
    if d.htsbm is None:
        raise ConfigError("data needs either path or htsbm")
    if d.seed is None:
        raise ConfigError("data.seed is required to generate an HT-SBM dataset")
    return sample_htsbm(htsbm_params(d.htsbm), int(d.seed))
