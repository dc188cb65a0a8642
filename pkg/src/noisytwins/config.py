"""Experiment configuration: nested dataclasses loaded from TOML with strict keys."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import STRATEGIES, LTProfile, ModeGridSpec
from .numcore import ParameterError
from .twins_loss import INVARIANCE_FORMS, NORMALIZATIONS, TwinsLossConfig


class ConfigError(ParameterError):
    pass


@dataclass
class DataConfig:
    num_classes: int = 10
    n_max: int = 5000
    rho: float = 100.0
    modes_per_class: int = 8
    ring_radius: float = 2.0
    grid_spacing: float = 6.0
    grid_cols: int = 4
    mode_std: float = 0.05
    seed: int = 1234

    def profile(self) -> LTProfile:
        return LTProfile(self.num_classes, self.n_max, self.rho)

    def spec(self) -> ModeGridSpec:
        return ModeGridSpec.ring_grid(
            self.num_classes, self.modes_per_class, self.ring_radius, self.grid_spacing, self.grid_cols, self.mode_std
        )


@dataclass
class ModelConfig:
    dim: int = 64
    mapping_layers: int = 2
    mapping_width: int = 0  # 0 means 2 * dim
    synthesis_layers: int = 3
    synthesis_width: int = 64
    disc_layers: int = 3
    disc_width: int = 64
    slope: float = 0.2
    embed_init_std: float = 1.0


@dataclass
class NoiseConfig:
    sigma: float = 0.75
    alpha: float = 0.99


@dataclass
class LossConfig:
    lam: float = 0.01
    gamma: float = 0.05
    invariance_form: str = "paper"
    normalization: str = "standardize"
    r1_gamma: float = 0.01

    def twins(self) -> TwinsLossConfig:
        return TwinsLossConfig(self.lam, self.gamma, self.invariance_form, self.normalization)


@dataclass
class OptimConfig:
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8


@dataclass
class EvalConfig:
    samples: int = 2000
    coverage_radius: float = 0.15
    k: int = 3
    min_per_class: int = 50
    runs: int = 1
    seed: int = 777


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 64
    seed: int = 0
    sampling: str = "instance"
    eval_every: int = 0
    checkpoint_every: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "TrainConfig":
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.sampling not in STRATEGIES:
            raise ConfigError(f"sampling must be one of {STRATEGIES}")
        if self.loss.invariance_form not in INVARIANCE_FORMS:
            raise ConfigError(f"loss.invariance_form must be one of {INVARIANCE_FORMS}")
        if self.loss.normalization not in NORMALIZATIONS:
            raise ConfigError(f"loss.normalization must be one of {NORMALIZATIONS}")
        if min(self.loss.lam, self.loss.gamma, self.loss.r1_gamma, self.noise.sigma) < 0:
            raise ConfigError("lam, gamma, r1_gamma and sigma must be >= 0")
        if not 0 <= self.noise.alpha < 1:
            raise ConfigError(f"noise.alpha must lie in [0, 1), got {self.noise.alpha}")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("eval_every and checkpoint_every must be >= 0")
        self.data.profile()
        return self

    @property
    def is_baseline(self) -> bool:
        return self.noise.sigma == 0 and self.loss.lam == 0

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"loss.lam": 0.0})``."""
        cfg = from_dict(self.to_dict())
        for path, value in changes.items():
            set_path(cfg, path, value)
        return cfg.validate()


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "noise": NoiseConfig, "loss": LossConfig, "optim": OptimConfig, "eval": EvalConfig}


def _coerce(cls, name, value, where):
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    if ftype in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if ftype in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if ftype in ("str", str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _build(cls, raw: dict, prefix: str):
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {where!r}")
        if cls is TrainConfig and key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a table")
            kwargs[key] = _build(_SECTIONS[key], value, f"{where}.")
        else:
            kwargs[key] = _coerce(cls, key, value, where)
    return cls(**kwargs)


def from_dict(raw: dict) -> TrainConfig:
    return _build(TrainConfig, raw, "").validate()


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def set_path(cfg: TrainConfig, path: str, value) -> None:
    *parents, leaf = path.split(".")
    obj = cfg
    for p in parents:
        if p not in _SECTIONS:
            raise ConfigError(f"unknown config section {p!r}")
        obj = getattr(obj, p)
    if leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {path!r}")
    setattr(obj, leaf, _coerce(type(obj), leaf, value, path))


def dump_toml(cfg: TrainConfig) -> str:
    """Serialise to TOML (flat top-level keys, then one table per section)."""
    d = cfg.to_dict()
    lines = [f"{k} = {_toml_value(v)}" for k, v in d.items() if not isinstance(v, dict)]
    for section, body in d.items():
        if isinstance(body, dict):
            lines.append(f"\n[{section}]")
            lines += [f"{k} = {_toml_value(v)}" for k, v in body.items()]
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    return str(v)
