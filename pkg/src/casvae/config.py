"""Flat ``key = value`` run configuration and grid specifications.

Lines are UTF-8, ``#`` starts a comment, blank lines are ignored. Unknown
keys and malformed values are rejected before any work starts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .divergence import SurrogateKind
from .errors import CasvaeError, ConfigError
from .models import TrainConfig
from .synthdata import GeneratorConfig

METHODS = ("casvae", "vae_pca", "vae_isomap", "dklvae_pca", "dklvae_isomap")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


@dataclass
class RunConfig:
    # data
    n_train: int = 4000
    n_eval: int = 1000
    channels: int = 3
    size: int = 32
    balance: float = 0.5
    contamination: float = 0.1
    noise_sigma: float = 1.0
    data_seed: int = 11
    flux_min: float = 50.0
    flux_max: float = 5000.0
    hlr_min: float = 1.5
    hlr_max: float = 3.5
    train_file: str = ""
    eval_file: str = ""
    # method
    method: str = "casvae"
    dklvae_surrogate: str = "pw"
    ml_k: int = 10
    ml_subsample: int = 2000
    # training
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    head_epochs: int = 30
    surrogate: str = "pw"
    m: float = 2.0
    s: float = 1.0
    alpha: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    eval_noise: bool = False
    recon_space: str = "code"
    code_dim: int = 30
    latent_dim: int = 2
    activation: str = "tanh"
    per_dim_divergence: bool = True
    # seeds and output
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        for name in ("n_train", "n_eval", "channels", "size", "ml_k", "ml_subsample"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not 0 <= self.balance <= 1:
            raise ConfigError("balance must lie in [0, 1]")
        if not 0 <= self.contamination <= 1:
            raise ConfigError("contamination must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0 < self.flux_min <= self.flux_max:
            raise ConfigError("need 0 < flux_min <= flux_max")
        if not 0 < self.hlr_min <= self.hlr_max:
            raise ConfigError("need 0 < hlr_min <= hlr_max")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if bool(self.train_file) != bool(self.eval_file):
            raise ConfigError("train_file and eval_file must be given together")
        SurrogateKind.parse(self.dklvae_surrogate)
        try:
            self.train_config()
        except CasvaeError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self, seed: int | None = None) -> TrainConfig:
        kw = {k: getattr(self, k) for k in TRAIN_KEYS}
        return TrainConfig(seed=self.seed if seed is None else seed, **kw)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(flux_range=(self.flux_min, self.flux_max),
                               hlr_range=(self.hlr_min, self.hlr_max))

    def with_values(self, **values) -> "RunConfig":
        return replace(self, **values)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_value(key: str, text: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "list[int]":
            return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        yield lineno, key.strip(), value.strip()


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, key, value in _lines(text):
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return replace(base or RunConfig(), **values)


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    cfg = RunConfig() if path is None else parse_config(Path(path).read_text(encoding="utf-8"))
    return cfg.with_values(**overrides) if overrides else cfg


@dataclass
class GridSpec:
    """Per-key value lists; the Cartesian product in key order defines the runs."""

    axes: dict[str, list]

    @property
    def size(self) -> int:
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n

    def points(self) -> list[dict]:
        keys = list(self.axes)
        return [dict(zip(keys, combo)) for combo in itertools.product(*self.axes.values())]

    def configs(self, base: RunConfig, max_runs: int) -> list[tuple[dict, RunConfig]]:
        if self.size > max_runs:
            raise ConfigError(f"grid has {self.size} runs, above --max-runs {max_runs}")
        return [(p, base.with_values(**p)) for p in self.points()]


def parse_grid(text: str) -> GridSpec:
    """``key = v1, v2, ...`` per line (list-valued keys such as ``seeds`` cannot vary)."""
    axes: dict[str, list] = {}
    for lineno, key, value in _lines(text):
        if key in axes:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if _FIELD_TYPES.get(key) == "list[int]":
            raise ConfigError(f"line {lineno}: {key!r} cannot be a grid axis")
        items = [v for v in value.split(",") if v.strip()]
        if not items:
            raise ConfigError(f"line {lineno}: {key!r} has no values")
        axes[key] = [parse_value(key, v) for v in items]
    if not axes:
        raise ConfigError("grid defines no axes")
    return GridSpec(axes)
