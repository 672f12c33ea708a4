"""Flat JSON run configuration shared by every CLI subcommand."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import (SyntheticSpec, generate_synthetic, leave_one_out_splits, load_scene,
                   make_windows)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # schedule
    K: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.05
    # model
    d_model: int = 64
    heads: int = 4
    layers: int = 3
    ff_dim: int = 128
    enc_dim: int = 32
    enc_hidden: int = 64
    T_init: int = 8
    T_pred: int = 12
    # training
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 1000
    grad_clip: float = 0.0
    checkpoint_every: int = 0
    # data
    dataset: str = "synthetic"
    synthetic_modes: int = 3
    synthetic_noise: float = 0.02
    synthetic_speed: float = 0.3
    synthetic_turn_rate: float = 0.15
    synthetic_train_count: int = 2000
    synthetic_test_count: int = 60
    train_files: list = field(default_factory=list)
    test_files: list = field(default_factory=list)
    scenes: list = field(default_factory=list)
    leave_out: str = ""
    window_stride: int = 1
    frame_step: int = 0
    coord_scale: float = 1.0
    # evaluation
    n_samples: int = 20
    sweep_stride: int = 10
    sweep_window: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            expected = {"int": int, "float": (int, float), "str": str, "list": list}[f.type]
            if isinstance(value, bool) or not isinstance(value, expected):
                raise ConfigError(f"config key {f.name!r} must be {f.type}, got {value!r}")
            if f.type == "float":
                setattr(self, f.name, float(value))
        if self.dataset not in ("synthetic", "files"):
            raise ConfigError(f"dataset must be 'synthetic' or 'files', got {self.dataset!r}")
        positive = ("K", "d_model", "heads", "layers", "ff_dim", "enc_dim", "enc_hidden",
                    "T_init", "T_pred", "batch_size", "synthetic_modes", "window_stride",
                    "n_samples", "sweep_stride")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"config key {name!r} must be >= 1")
        for name in ("steps", "checkpoint_every", "frame_step", "sweep_window",
                     "synthetic_train_count", "synthetic_test_count"):
            if getattr(self, name) < 0:
                raise ConfigError(f"config key {name!r} must be >= 0")
        if not (0 < self.beta_min <= self.beta_max < 1):
            raise ConfigError("need 0 < beta_min <= beta_max < 1")
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")
        if self.learning_rate <= 0 or self.coord_scale <= 0 or self.grad_clip < 0:
            raise ConfigError("learning_rate and coord_scale must be positive, grad_clip >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(modes=self.synthetic_modes, noise=self.synthetic_noise,
                             speed=self.synthetic_speed, turn_rate=self.synthetic_turn_rate,
                             T_init=self.T_init, T_pred=self.T_pred)

    def estimator_params(self) -> dict:
        return dict(n_steps=self.K, beta_min=self.beta_min, beta_max=self.beta_max,
                    d_model=self.d_model, heads=self.heads, layers=self.layers,
                    ff_dim=self.ff_dim, enc_dim=self.enc_dim, enc_hidden=self.enc_hidden,
                    learning_rate=self.learning_rate, batch_size=self.batch_size,
                    max_steps=self.steps, grad_clip=self.grad_clip, n_samples=self.n_samples,
                    coord_scale=self.coord_scale, random_state=self.seed)


def _windows_from_files(cfg: RunConfig, paths) -> list:
    windows = []
    for p in paths:
        scene = load_scene(p)
        windows.extend(make_windows(scene, cfg.T_init, cfg.T_pred, cfg.window_stride,
                                    cfg.frame_step or None))
    return windows


def build_datasets(cfg: RunConfig) -> tuple[list, list]:
    """(train, test) windows. Synthetic sets use distinct seeds derived from ``seed``."""
    if cfg.dataset == "synthetic":
        spec = cfg.synthetic_spec()
        return (generate_synthetic(spec, cfg.synthetic_train_count, cfg.seed * 2 + 1),
                generate_synthetic(spec, cfg.synthetic_test_count, cfg.seed * 2 + 2))
    if cfg.leave_out:
        for held, train, test in leave_one_out_splits(cfg.scenes):
            if held == cfg.leave_out:
                return _windows_from_files(cfg, train), _windows_from_files(cfg, test)
        raise ConfigError(f"leave_out scene {cfg.leave_out!r} is not among scenes")
    return _windows_from_files(cfg, cfg.train_files), _windows_from_files(cfg, cfg.test_files)
