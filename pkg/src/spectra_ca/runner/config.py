"""Experiment configuration files.

Grammar, one statement per line::

    # comment (also ';')
    [experiment-name]
    key = value

Exactly one section is allowed and its header names the experiment. Keys
not given take the per-experiment defaults in :data:`DEFAULTS`. Values are
ints, floats, ``true``/``false``, ``none`` or bare strings. Serialising a
config writes every key, so ``parse_config(serialize_config(c)) == c``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

from ..errors import ConfigError

EXPERIMENTS = ("regress", "image", "afe", "heatmap", "poisson1d", "poisson2d", "pb3d", "appendix")
MODELS = ("rff-ca", "nn-ca", "rff-nn")
LOSSES = ("regression", "pinn", "ritz")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    model: str = "rff-ca"
    target: str = "f2"
    # frequency bank
    m_base: int = 128
    K: int = 3
    sigma: float = 0.1
    beta0: float = 0.1
    learn_beta: bool = True
    mean_shift: float | None = None
    # network
    d_q: int = 64
    n_heads: int = 4
    n_layers: int = 4
    width: int = 0            # rff-nn hidden width; 0 matches the rff-ca parameter count
    # training
    epochs: int = 1000
    batch: int = 4000
    lr: float = 2e-3
    lr_step: int = 100
    lr_gamma: float = 0.5
    clip: float = 1.0
    weight_decay: float = 0.0
    record_every: int = 10
    checkpoint_every: int = 0
    grid: int = 500
    # physics losses
    loss: str = "regression"
    penalty: float = 1000.0
    n_interior: int = 1000
    n_boundary: int = 1
    fd_h: float = 1e-4
    alpha: str = "optimal"     # optimal | learnable | fixed:<value>
    low_width: int = 64
    low_depth: int = 3
    nu: float = 100.0
    mu: float = 50.0
    # adaptive frequency enhancement
    lam: float = 0.02
    e1: int = 5000
    e2: int = 5000
    eta_start: float = -6.0
    hold_frac: float = 0.7
    n_fft: int = 4096
    n_train: int = 2048
    n_test: int = 4096
    augment: bool = True
    # images
    image: str = ""
    downsample: int = 4
    max_pixels: int = 262144
    # mode-dynamics model
    mode_k: int = 20
    mode_c: float = 1.0
    order: int = 2
    euler_eta: float = 1e-9
    steps: int = 2000
    out: str = ""

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    def alpha_strategy(self) -> tuple[str, float | None]:
        if self.alpha in ("optimal", "learnable"):
            return self.alpha, None
        return "fixed", float(self.alpha.split(":", 1)[1])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# per-experiment values that differ from the dataclass defaults
DEFAULTS: dict[str, dict] = {
    "regress": {},
    "image": {"epochs": 2000, "lr_step": 1000, "target": "image", "grid": 0},
    "afe": {"target": "afe", "K": 0, "n_layers": 3, "sigma": 0.01, "beta0": 0.01, "lr": 1e-3, "lr_step": 500,
            "lr_gamma": 0.9, "record_every": 250, "epochs": 10000},
    "heatmap": {"target": "heatmap", "model": "rff-nn", "m_base": 64, "K": 2, "width": 64,
                "n_layers": 3, "sigma": 0.1, "epochs": 2000, "lr": 1e-3, "lr_step": 1000,
                "lr_gamma": 0.5, "loss": "regression", "n_interior": 1000, "penalty": 100.0,
                "grid": 2001},
    "poisson1d": {"target": "poisson1d", "loss": "pinn", "sigma": 0.02, "lr": 5e-3,
                  "lr_step": 1000, "lr_gamma": 0.5, "epochs": 10000, "n_interior": 1000,
                  "penalty": 1000.0, "grid": 2001},
    "poisson2d": {"target": "poisson2d", "loss": "pinn", "sigma": 0.1, "lr": 1e-3,
                  "lr_step": 2000, "lr_gamma": 0.5, "epochs": 20000, "n_interior": 10000,
                  "n_boundary": 1000, "penalty": 10000.0, "weight_decay": 0.01, "grid": 256},
    "pb3d": {"target": "pb3d", "loss": "ritz", "n_layers": 3, "sigma": 1.0, "alpha": "learnable",
             "lr": 1e-3, "lr_step": 1000, "lr_gamma": 0.6, "epochs": 10000, "n_interior": 5000,
             "n_boundary": 4000, "penalty": 10000.0, "grid": 64},
    "appendix": {"target": "none"},
}

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def default_config(experiment: str) -> ExperimentConfig:
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    cfg = ExperimentConfig(experiment, **DEFAULTS[experiment])
    validate(cfg)
    return cfg


def _parse_value(name: str, text: str, line: int):
    f = _FIELDS[name]
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    low = text.lower()
    try:
        if kind == "bool":
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "float | None":
            return None if low == "none" else float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {text!r} as {kind}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    experiment, line_of, values = None, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            if experiment is not None:
                raise ConfigError("only one experiment section is allowed", lineno)
            experiment = line[1:-1].strip()
            if experiment not in DEFAULTS:
                raise ConfigError(f"unknown experiment {experiment!r}", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", lineno)
        if experiment is None:
            raise ConfigError("key before any [experiment] section", lineno)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _FIELDS or key == "experiment":
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        values[key] = _parse_value(key, value, lineno)
        line_of[key] = lineno
    if experiment is None:
        raise ConfigError("missing [experiment] section", 1)
    cfg = dataclasses.replace(default_config(experiment), **values)
    try:
        validate(cfg)
    except ConfigError as exc:
        key = getattr(exc, "key", None)
        raise ConfigError(exc.bare, line_of.get(key)) from None
    return cfg


def _fail(key: str, message: str):
    exc = ConfigError(message)
    exc.key = key
    raise exc


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        _fail("experiment", f"unknown experiment {cfg.experiment!r}")
    if cfg.model not in MODELS:
        _fail("model", f"model must be one of {', '.join(MODELS)}")
    if cfg.loss not in LOSSES:
        _fail("loss", f"loss must be one of {', '.join(LOSSES)}")
    if not 0.0 < cfg.lam < 1.0:
        _fail("lam", f"lam must lie in (0, 1), got {cfg.lam}")
    if not cfg.sigma > 0:
        _fail("sigma", "sigma must be positive")
    if cfg.beta0 < 0:
        _fail("beta0", "beta0 must be non-negative")
    if cfg.d_q < 1 or cfg.n_heads < 1 or cfg.d_q % cfg.n_heads:
        _fail("n_heads", f"d_q={cfg.d_q} must be a positive multiple of n_heads={cfg.n_heads}")
    for key in ("m_base", "epochs", "batch", "lr_step", "n_interior", "n_boundary", "record_every",
                "n_fft", "n_train", "n_test", "downsample", "max_pixels", "low_width", "low_depth",
                "mode_k", "steps"):
        if getattr(cfg, key) < 1:
            _fail(key, f"{key} must be at least 1")
    for key in ("K", "n_layers", "width", "checkpoint_every", "e1", "e2", "grid"):
        if getattr(cfg, key) < 0:
            _fail(key, f"{key} must be non-negative")
    for key in ("lr", "fd_h", "euler_eta"):
        if not getattr(cfg, key) > 0:
            _fail(key, f"{key} must be positive")
    if not 0 < cfg.lr_gamma <= 1:
        _fail("lr_gamma", "lr_gamma must lie in (0, 1]")
    if cfg.clip < 0 or cfg.weight_decay < 0 or cfg.penalty < 0:
        _fail("penalty", "clip, weight_decay and penalty must be non-negative")
    if cfg.eta_start > 0:
        _fail("eta_start", "eta_start must be <= 0")
    if not 0 <= cfg.hold_frac <= 1:
        _fail("hold_frac", "hold_frac must lie in [0, 1]")
    if cfg.order not in (0, 1, 2):
        _fail("order", "order must be 0, 1 or 2")
    if cfg.alpha not in ("optimal", "learnable"):
        head, _, value = cfg.alpha.partition(":")
        try:
            ok = head == "fixed" and math.isfinite(float(value))
        except ValueError:
            ok = False
        if not ok:
            _fail("alpha", f"alpha must be optimal, learnable or fixed:<number>, got {cfg.alpha!r}")
    for name, value in cfg.to_dict().items():
        if isinstance(value, float) and not math.isfinite(value):
            _fail(name, f"{name} must be finite")
        if isinstance(value, str) and ("\n" in value or value != value.strip()):
            _fail(name, f"{name} has leading/trailing whitespace or a newline")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"[{cfg.experiment}]"]
    for f in fields(cfg):
        if f.name != "experiment":
            lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
