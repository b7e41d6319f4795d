"""Run configuration: strict JSON schema with line-anchored validation errors."""

from __future__ import annotations

import json
import re
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ARCHITECTURES

PARAM_MATCH_TOLERANCE = 0.02


@dataclass
class ModelConfig:
    d: int = 32
    depth: int = 1
    n_tokens: int = 4


@dataclass
class RouterConfig:
    T: Optional[int] = None  # abstract tasks; None means T_real
    S: int = 4
    r: int = 4
    k: int = 2


@dataclass
class SuiteConfig:
    T_real: int = 10
    G: int = 3
    n_train: int = 64
    n_eval: int = 32
    noise_std: float = 0.05
    seed: Optional[int] = None  # None means the run seed
    group_rank: int = 2
    group_scale: float = 1.0
    perturb_rank: int = 1
    perturb_scale: float = 0.1
    token_jitter: float = 0.1


@dataclass
class OptimizerConfig:
    lr_max: float = 1e-2
    weight_decay: float = 0.01
    warmup_ratio: float = 0.06
    epochs: int = 10
    batch_size: int = 4


@dataclass
class TransferConfig:
    n_new: int = 5
    n_shot: int = 16
    epochs: int = 5


@dataclass
class RunConfig:
    architecture: str
    seed: int
    model: ModelConfig = field(default_factory=ModelConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    transfer: Optional[TransferConfig] = None
    parameter_matched: bool = True
    output_dir: str = "runs/default"

    @property
    def suite_seed(self) -> int:
        return self.seed if self.suite.seed is None else self.suite.seed

    @property
    def n_abstract_tasks(self) -> int:
        return self.suite.T_real if self.router.T is None else self.router.T

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "router": RouterConfig,
    "suite": SuiteConfig,
    "optimizer": OptimizerConfig,
    "transfer": TransferConfig,
}


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _check_type(value, annotation: str, path: str, text) -> object:
    optional = annotation.startswith("Optional[")
    base = annotation[9:-1] if optional else annotation
    key = path.rsplit(".", 1)[-1]
    if value is None:
        if optional:
            return None
        raise ConfigError(f"field '{path}' must not be null", path, _line_of(text, key))
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
    }.get(base, True)
    if not ok:
        raise ConfigError(f"field '{path}' must be of type {base}, got {type(value).__name__}", path, _line_of(text, key))
    return float(value) if base == "float" else value


def _build(cls, raw: dict, prefix: str, text):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{prefix or 'root'}' must be an object", prefix or None, _line_of(text, prefix))
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"unknown field '{path}'", path, _line_of(text, key))
    kwargs = {}
    for name, f in known.items():
        path = f"{prefix}.{name}" if prefix else name
        if name not in raw:
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"missing required field '{path}'", path, 1 if text else None)
            continue
        value = raw[name]
        if name in _SECTIONS and not prefix:
            kwargs[name] = None if value is None and name == "transfer" else _build(_SECTIONS[name], value, name, text)
        else:
            kwargs[name] = _check_type(value, str(f.type), path, text)
    return cls(**kwargs)


def _require(cond: bool, message: str, path: str, text) -> None:
    if not cond:
        raise ConfigError(message, path, _line_of(text, path.rsplit(".", 1)[-1]))


def validate(cfg: RunConfig, text: Optional[str] = None) -> RunConfig:
    _require(cfg.architecture in ARCHITECTURES, f"architecture must be one of {ARCHITECTURES}", "architecture", text)
    m, r, s, o = cfg.model, cfg.router, cfg.suite, cfg.optimizer
    _require(m.d >= 2, "model.d must be >= 2", "model.d", text)
    _require(m.depth >= 1, "model.depth must be >= 1", "model.depth", text)
    _require(m.n_tokens >= 1, "model.n_tokens must be >= 1", "model.n_tokens", text)
    _require(r.T is None or r.T >= 1, "router.T must be >= 1", "router.T", text)
    _require(r.S >= 1, "router.S must be >= 1", "router.S", text)
    _require(1 <= r.r < m.d, "router.r must satisfy 1 <= r < d", "router.r", text)
    if cfg.architecture == "moe-lora-topk":
        _require(1 <= r.k <= r.S, "router.k must satisfy 1 <= k <= S", "router.k", text)
    _require(1 <= s.G <= s.T_real, "suite.G must satisfy 1 <= G <= T_real", "suite.G", text)
    _require(s.n_train >= 1, "suite.n_train must be >= 1", "suite.n_train", text)
    _require(s.n_eval >= 1, "suite.n_eval must be >= 1", "suite.n_eval", text)
    _require(s.noise_std >= 0, "suite.noise_std must be >= 0", "suite.noise_std", text)
    _require(o.lr_max > 0, "optimizer.lr_max must be > 0", "optimizer.lr_max", text)
    _require(o.weight_decay >= 0, "optimizer.weight_decay must be >= 0", "optimizer.weight_decay", text)
    _require(0 <= o.warmup_ratio < 1, "optimizer.warmup_ratio must lie in [0, 1)", "optimizer.warmup_ratio", text)
    _require(o.epochs >= 1, "optimizer.epochs must be >= 1", "optimizer.epochs", text)
    _require(o.batch_size >= 1, "optimizer.batch_size must be >= 1", "optimizer.batch_size", text)
    if cfg.transfer is not None:
        t = cfg.transfer
        _require(t.n_new >= 1, "transfer.n_new must be >= 1", "transfer.n_new", text)
        _require(t.n_shot >= 0, "transfer.n_shot must be >= 0", "transfer.n_shot", text)
        _require(t.epochs >= 0, "transfer.epochs must be >= 0", "transfer.epochs", text)
    return cfg


def config_from_dict(raw: dict, text: Optional[str] = None) -> RunConfig:
    return validate(_build(RunConfig, raw, "", text), text)


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON config; ``seed`` / ``out`` override the file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", None, e.lineno) from None
    cfg = config_from_dict(raw, text)
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.output_dir = str(out)
    return cfg


def param_gap(a: int, b: int) -> float:
    return abs(a - b) / max(a, b)
