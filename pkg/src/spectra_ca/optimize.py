"""Adam, gradient clipping, learning-rate and mask schedules, and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericalError, ParameterError
from .tensor import Tape, Tensor


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``."""
    if not max_norm > 0:
        raise ParameterError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


@dataclass(frozen=True)
class StepSchedule:
    """eta_e = eta0 * gamma ** floor(e / step)."""

    eta0: float
    step: int = 100
    gamma: float = 0.5

    def __post_init__(self):
        if self.step < 1 or not 0 < self.gamma <= 1:
            raise ParameterError(f"invalid step schedule (step={self.step}, gamma={self.gamma})")

    def lr_at(self, epoch: int) -> float:
        return self.eta0 * self.gamma ** (epoch // self.step)


def lr_at(schedule: StepSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)


@dataclass(frozen=True)
class AfeSchedule:
    """Posterior-token mask strength: hold at ``eta_start``, then cosine release to 0."""

    eta_start: float = -6.0
    hold_frac: float = 0.7
    total: int = 5000

    def __post_init__(self):
        if self.eta_start > 0 or not 0 <= self.hold_frac <= 1 or self.total < 1:
            raise ParameterError("invalid AFE schedule")

    def eta(self, epoch: int) -> float:
        if not 0 <= epoch <= self.total:
            raise ParameterError(f"epoch {epoch} outside [0, {self.total}]")
        hold = self.hold_frac * self.total
        if epoch < hold:
            return self.eta_start
        if self.hold_frac >= 1.0:
            return self.eta_start if epoch < self.total else 0.0
        t = (epoch - hold) / ((1.0 - self.hold_frac) * self.total)
        return self.eta_start * 0.5 * (1.0 + math.cos(math.pi * t))


def afe_eta(schedule: AfeSchedule, epoch: int) -> float:
    return schedule.eta(epoch)


@dataclass
class Adam:
    """Adam with bias correction; ``weight_decay`` > 0 gives decoupled (AdamW) decay."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def reset(self) -> None:
        self.step_count = 0
        self.m.clear()
        self.v.clear()

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], rate: float) -> None:
        """Update ``params`` in place. Parameters without a gradient are left alone."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p.data -= rate * self.weight_decay * p.data
            p.data -= rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: Adam, params, grads, rate: float) -> None:
    state.step(params, grads, rate)


@dataclass
class TrainingRecord:
    """Rows of per-epoch measurements; missing cells are stored as None."""

    columns: list[str]
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown record columns {sorted(unknown)}")
        self.rows.append({c: row.get(c) for c in self.columns})

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)

    def last(self, name: str):
        for r in reversed(self.rows):
            if r[name] is not None:
                return r[name]
        return None

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {c: self.column(c) for c in self.columns}

    @classmethod
    def from_arrays(cls, columns, arrays) -> "TrainingRecord":
        rec = cls(list(columns))
        n = len(arrays[columns[0]]) if columns else 0
        for i in range(n):
            row = {}
            for c in columns:
                v = float(arrays[c][i])
                row[c] = None if math.isnan(v) else v
            rec.rows.append(row)
        return rec


def train_step(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], adam: Adam,
               rate: float, clip: float = 1.0, epoch: int | None = None) -> float:
    """One tape pass, clip and Adam update. Returns the loss before the update."""
    with Tape() as tape:
        loss = loss_fn()
    value = loss.item()
    if not math.isfinite(value):
        where = "" if epoch is None else f" at epoch {epoch}"
        raise NumericalError(f"loss became {value}{where}")
    grads = tape.backward(loss)
    if clip:
        grads = clip_gradients(grads, clip)
    adam.step(params, grads, rate)
    return value


def train(loss_fn: Callable[[int], Tensor], params: Mapping[str, Tensor], adam: Adam,
          schedule: StepSchedule, epochs: int, *, start: int = 0, clip: float = 1.0,
          record: TrainingRecord | None = None, metrics: Callable[[int], dict] | None = None,
          record_every: int = 10, extra: Callable[[int], dict] | None = None,
          before_epoch: Callable[[int], None] | None = None,
          after_epoch: Callable[[int], None] | None = None) -> TrainingRecord:
    """Run ``epochs - start`` Adam updates on ``loss_fn``.

    Row ``e`` of the record holds the loss of the ``e``-th update (evaluated
    before the step) and, every ``record_every`` epochs and at the final epoch,
    the grid metrics after the step. Row 0 holds the metrics at initialisation
    and is only written when ``start == 0``. ``extra`` supplies cheap per-epoch
    values such as the mixing factor or the mask strength.
    """
    if record is None:
        record = TrainingRecord(["epoch", "loss", "lr"] + (list(metrics(0)) if metrics else []))
    if start == 0:
        row = {"epoch": 0}
        if metrics:
            row.update(metrics(0))
        if extra:
            row.update(extra(0))
        record.append(row)
    for e in range(start + 1, epochs + 1):
        if before_epoch:
            before_epoch(e)
        rate = schedule.lr_at(e - 1)
        value = train_step(lambda: loss_fn(e), params, adam, rate, clip, epoch=e)
        row = {"epoch": e, "loss": value, "lr": rate}
        if extra:
            row.update(extra(e))
        if metrics and (e % record_every == 0 or e == epochs):
            row.update(metrics(e))
        record.append(row)
        if after_epoch:
            after_epoch(e)
    return record
