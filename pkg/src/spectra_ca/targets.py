"""Benchmark targets, exact PDE solutions and their analytic source terms.

All evaluators take points as an array of shape (B, d) (or (B,) for
one-dimensional targets) and return shape (B,).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError, NumericalError


def _cols(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if d == 1:
        return x.reshape(-1, 1)
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ContractError(f"expected points with {d} coordinates, got shape {x.shape}")
    return x


def _polar(x):
    x = _cols(x, 2)
    r = np.hypot(x[:, 0], x[:, 1])
    # atan2(0, 0) is 0 in numpy, which is the convention we want at the origin
    theta = np.arctan2(x[:, 1], x[:, 0])
    return x[:, 0], x[:, 1], r, theta


def logistic(t, k: float):
    return 0.5 * (1.0 + np.tanh(0.5 * k * t))


def angular_gate(theta, a0: float, a1: float, k: float):
    mid = 0.5 * (a0 + a1)
    wrapped = np.arctan2(np.sin(theta - mid), np.cos(theta - mid))
    return logistic(0.5 * (a1 - a0) - np.abs(wrapped), k)


def band_pass(r, r1: float, r2: float, k: float):
    return logistic(r - r1, k) * (1.0 - logistic(r - r2, k))


SECTORS = ((-0.9 * np.pi, -0.3 * np.pi), (-0.1 * np.pi, 0.5 * np.pi), (0.6 * np.pi, 0.95 * np.pi))


def f1(x):
    """Sector-gated anisotropic waves, a ring, a spiral packet, a star-shaped jump and a cross term."""
    x1, x2, r, th = _polar(x)
    sectors = sum(angular_gate(th, a0, a1, 50.0) for a0, a1 in SECTORS)
    out = 0.35 * sectors * np.cos(2 * np.pi * (2.2 + 2.5 * r) * (x1 * np.cos(2.5 * th) + x2 * np.sin(2.5 * th)))
    out += 0.40 * band_pass(r, 0.62, 0.78, 60.0) * np.cos(
        2 * np.pi * (6 + 5 * r) * (x1 * np.cos(3 * th) + x2 * np.sin(3 * th)))
    r_spiral = 0.2 + 0.15 * (th + np.pi) / (2 * np.pi)
    out += 0.28 * np.exp(-(r - r_spiral) ** 2 / (2 * 0.04 ** 2)) * np.cos(
        2 * np.pi * (3 + 3 * r) * (x1 * np.cos(th + 0.8) + x2 * np.sin(th + 0.8)))
    out += 0.12 * np.sign(r - (0.55 + 0.10 * np.cos(5 * th)))
    out += 0.10 * np.cos(6 * np.pi * x1) * np.cos(7 * np.pi * x2)
    return out


def f2(x, kappa: float = 5.0, w0: float = 4.0, w1: float = 3.0):
    """Swirl: radially chirped plane wave whose direction turns with the polar angle."""
    x1, x2, r, th = _polar(x)
    return np.cos(2 * np.pi * (w0 + w1 * r) * (x1 * np.cos(kappa * th) + x2 * np.sin(kappa * th)))


def f3(x, fx: float = 1.0, fy: float = 1.0):
    """Checkerboard of signs, values in {-1, 0, 1}."""
    x = _cols(x, 2)
    return np.sign(np.sin(2 * np.pi * fx * x[:, 0]) * np.sin(2 * np.pi * fy * x[:, 1]))


HEATMAP_MODES = (1, 5, 20)


def heatmap_target(x):
    x = _cols(x, 1)[:, 0]
    return sum(np.sin(k * np.pi * x) for k in HEATMAP_MODES)


def heatmap_source(x):
    x = _cols(x, 1)[:, 0]
    return sum((k * np.pi) ** 2 * np.sin(k * np.pi * x) for k in HEATMAP_MODES)


def afe_target(x):
    x = _cols(x, 1)[:, 0]
    return (np.sin(2 * np.pi * 2 * x) + 0.5 * np.sin(2 * np.pi * 20 * x + 0.3)
            + 0.5 * np.cos(2 * np.pi * 40 * x - 0.2))


def _poisson1d_terms(nu: float):
    third = nu / 3.0
    return ((1.0, 0.1 * np.pi), (0.2, np.pi), (0.4, third * np.pi),
            (0.6, 2 * third * np.pi), (1.0, nu * np.pi))


def poisson1d_exact(x, nu: float = 100.0):
    x = _cols(x, 1)[:, 0]
    return sum(a * np.sin(w * x) for a, w in _poisson1d_terms(nu))


def poisson1d_source(x, nu: float = 100.0):
    x = _cols(x, 1)[:, 0]
    return sum(a * w * w * np.sin(w * x) for a, w in _poisson1d_terms(nu))


def poisson2d_exact(x, mu: float = 50.0):
    x = _cols(x, 2)
    return np.sin(mu * x[:, 0] ** 2) + np.sin(mu * x[:, 1] ** 2)


def poisson2d_source(x, mu: float = 50.0):
    x = _cols(x, 2)
    s = mu * x ** 2
    return np.sum(4 * mu ** 2 * x ** 2 * np.sin(s) - 2 * mu * np.cos(s), axis=1)


def pb_exact(x, mu: float = 15.0):
    x = _cols(x, 3)
    rho = np.sum(x * x, axis=1)
    return np.exp(np.sum(np.sin(mu * x), axis=1)) * (rho - 1.0) / (rho + 1.0)


def pb_laplacian(x, mu: float = 15.0):
    """Analytic Laplacian of :func:`pb_exact`, written as E * g with E = exp(sum sin(mu x_i))."""
    x = _cols(x, 3)
    d = x.shape[1]
    rho = np.sum(x * x, axis=1)
    E = np.exp(np.sum(np.sin(mu * x), axis=1))
    grad_s = mu * np.cos(mu * x)
    lap_E = E * (np.sum(grad_s ** 2, axis=1) - mu ** 2 * np.sum(np.sin(mu * x), axis=1))
    g = (rho - 1.0) / (rho + 1.0)
    grad_g = 4.0 * x / (rho + 1.0)[:, None] ** 2
    lap_g = 4.0 * d / (rho + 1.0) ** 2 - 16.0 * rho / (rho + 1.0) ** 3
    return lap_E * g + 2.0 * E * np.sum(grad_s * grad_g, axis=1) + E * lap_g


def pb_source(x, mu: float = 15.0, kappa=None):
    """f = -Laplacian(u) + kappa u; ``kappa`` is a callable on points or a constant."""
    x = _cols(x, 3)
    k = kappa(x) if callable(kappa) else (1.0 if kappa is None else kappa)
    return -pb_laplacian(x, mu) + k * pb_exact(x, mu)


@dataclass
class TargetFn:
    """A named target with its evaluator and, for PDE problems, the exact source."""

    name: str
    dim: int
    evaluate: Callable
    source: Callable | None = None
    params: dict = field(default_factory=dict)
    # interior sampling box for the consistency check, and its tolerance
    check_low: float = -1.0
    check_high: float = 1.0
    tolerance: float = 1e-5
    fd_step: float = 1e-5
    reaction: bool = False
    kappa: Callable | float = 1.0
    in_ball: bool = False

    def __call__(self, x):
        return self.evaluate(x, **self.params)

    def source_values(self, x, kappa=None):
        """Analytic source; reaction targets take ``kappa`` (callable or constant)."""
        if self.source is None:
            raise ContractError(f"target {self.name!r} has no source term")
        if self.reaction:
            return self.source(x, kappa=self.kappa if kappa is None else kappa, **self.params)
        return self.source(x, **self.params)


def _fd_minus_laplacian(fn, x, h):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[0])
    centre = fn(x)
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        out -= (fn(x + e) - 2.0 * centre + fn(x - e)) / (h * h)
    return out


def source_consistency(target: TargetFn, n_points: int = 100, seed: int = 0,
                       kappa=None) -> float:
    """Norm-wise relative mismatch between the analytic source and -Lap(u) + kappa u by central FD.

    Points are drawn uniformly from the check box (restricted to the open unit
    ball for targets posed on it). ``kappa`` overrides the reaction coefficient.
    """
    if target.source is None:
        raise ContractError(f"target {target.name!r} has no source term")
    rng = np.random.default_rng(seed)
    x = np.empty((0, target.dim))
    while x.shape[0] < n_points:
        draw = rng.uniform(target.check_low, target.check_high, (n_points, target.dim))
        if target.in_ball:
            draw = draw[np.sum(draw * draw, axis=1) < 1.0]
        x = np.concatenate([x, draw])[:n_points]
    fd = _fd_minus_laplacian(target, x, target.fd_step)
    if target.reaction:
        k = target.kappa if kappa is None else kappa
        fd = fd + (k(x) if callable(k) else k) * target(x)
    exact = target.source_values(x, kappa)
    return float(np.linalg.norm(fd - exact) / np.linalg.norm(exact))


def check_source(target: TargetFn, **kwargs) -> float:
    """Raise unless the source passes :func:`source_consistency` at the target tolerance."""
    err = source_consistency(target, **kwargs)
    if not err < target.tolerance:
        raise NumericalError(f"source of {target.name!r} inconsistent with its solution: "
                             f"relative mismatch {err:.3e} >= {target.tolerance:.1e}")
    return err


def get_target(name: str, **params) -> TargetFn:
    """Look up a target by name; ``params`` override its defaults (nu, mu, ...)."""
    if name == "f1":
        return TargetFn("f1", 2, f1)
    if name == "f2":
        return TargetFn("f2", 2, f2, params={"kappa": 5.0, "w0": 4.0, "w1": 3.0, **params})
    if name == "f3":
        return TargetFn("f3", 2, f3, params={"fx": 1.0, "fy": 1.0, **params})
    if name == "afe":
        return TargetFn("afe", 1, afe_target, check_low=0.0)
    if name == "heatmap":
        # second differences of a mode-20 sine: FD truncation ~ (20 pi h)^2 / 12
        return TargetFn("heatmap", 1, heatmap_target, heatmap_source,
                        tolerance=1e-3, fd_step=1e-4)
    if name == "poisson1d":
        return TargetFn("poisson1d", 1, poisson1d_exact, poisson1d_source,
                        params={"nu": 100.0, **params}, tolerance=1e-3, fd_step=1e-4)
    if name == "poisson2d":
        return TargetFn("poisson2d", 2, poisson2d_exact, poisson2d_source,
                        params={"mu": 50.0, **params}, tolerance=1e-4, fd_step=1e-5)
    if name == "pb3d":
        return TargetFn("pb3d", 3, pb_exact, pb_source, params={"mu": 15.0, **params},
                        tolerance=1e-5, fd_step=1e-5, reaction=True, in_ball=True)
    raise ConfigError(f"unknown target {name!r}")


TARGET_NAMES = ("f1", "f2", "f3", "afe", "heatmap", "poisson1d", "poisson2d", "pb3d")
