"""Physics-informed and Deep Ritz losses, finite-difference operators and the two-network mixture.

Differential operators act on a scalar field ``u_fn`` that maps a (B, d)
array of points to a (B,) tensor. Every stencil evaluation goes through
``u_fn`` in one batched call on the active tape, so losses stay
differentiable with respect to the network parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericalError, ParameterError
from .feature_bank import make_rng
from .tensor import Tensor

ScalarField = Callable[[np.ndarray], Tensor]


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class Box:
    """The cube [-1, 1]^d."""

    dim: int

    @property
    def volume(self) -> float:
        return 2.0 ** self.dim

    @property
    def boundary_measure(self) -> float:
        # d = 1: counting measure of the two endpoints
        return 2.0 if self.dim == 1 else 2.0 * self.dim * 2.0 ** (self.dim - 1)

    def sample_interior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_count(n)
        return rng.uniform(-1.0, 1.0, (n, self.dim))

    def sample_boundary(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` points per face (the two endpoints when d = 1)."""
        _check_count(n)
        if self.dim == 1:
            return np.array([[-1.0], [1.0]])
        faces = []
        for axis in range(self.dim):
            for side in (-1.0, 1.0):
                pts = rng.uniform(-1.0, 1.0, (n, self.dim))
                pts[:, axis] = side
                faces.append(pts)
        return np.concatenate(faces)


@dataclass(frozen=True)
class Ball:
    """The closed unit ball in R^d."""

    dim: int = 3

    @property
    def volume(self) -> float:
        return math.pi ** (self.dim / 2) / math.gamma(self.dim / 2 + 1)

    @property
    def boundary_measure(self) -> float:
        return self.dim * self.volume

    def sample_interior(self, n: int, rng: np.random.Generator, *, stats: dict | None = None) -> np.ndarray:
        """Rejection sampling from the bounding cube."""
        _check_count(n)
        kept, drawn, accepted = [], 0, 0
        while accepted < n:
            batch = rng.uniform(-1.0, 1.0, (max(2 * (n - accepted), 16), self.dim))
            drawn += batch.shape[0]
            inside = batch[np.sum(batch * batch, axis=1) <= 1.0]
            kept.append(inside)
            accepted += inside.shape[0]
        if stats is not None:
            stats["drawn"], stats["accepted"] = drawn, accepted
        return np.concatenate(kept)[:n]

    def sample_boundary(self, n: int, rng: np.random.Generator) -> np.ndarray:
        _check_count(n)
        g = rng.standard_normal((n, self.dim))
        return g / np.linalg.norm(g, axis=1, keepdims=True)


def _check_count(n: int) -> None:
    if n < 1:
        raise ParameterError(f"sample size must be at least 1, got {n}")


def sample_interior(domain, n: int, rng: np.random.Generator) -> np.ndarray:
    return domain.sample_interior(n, rng)


def sample_boundary(domain, n: int, rng: np.random.Generator) -> np.ndarray:
    return domain.sample_boundary(n, rng)


@dataclass
class BallUnionDomain:
    """Central ball of radius 0.5 plus small balls centred on its surface, inside the unit ball."""

    seed: int
    centers: np.ndarray
    radii: np.ndarray
    big_radius: float = 0.5
    outer_radius: float = 1.0
    kappa_inner: float = 1.0
    kappa_outer: float = 5.0

    def in_omega1(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        inside = np.sum(x * x, axis=1) <= self.big_radius ** 2
        for c, r in zip(self.centers, self.radii):
            inside |= np.sum((x - c) ** 2, axis=1) <= r * r
        return inside

    def kappa(self, x) -> np.ndarray:
        return np.where(self.in_omega1(x), self.kappa_inner, self.kappa_outer)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "centers": self.centers.tolist(), "radii": self.radii.tolist(),
                "big_radius": self.big_radius, "outer_radius": self.outer_radius}


def build_pb_domain(seed: int, n_small: int = 20) -> BallUnionDomain:
    rng = make_rng(seed, "pb-geometry")
    g = rng.standard_normal((n_small, 3))
    centers = 0.5 * g / np.linalg.norm(g, axis=1, keepdims=True)
    radii = rng.uniform(0.1, 0.2, n_small)
    return BallUnionDomain(seed, centers, radii)


def in_omega1(domain: BallUnionDomain, x) -> np.ndarray:
    return domain.in_omega1(x)


# ---------------------------------------------------------------- stencils

@dataclass
class Stencil:
    """u at x (``centre``, shape (B,)) and at x +- h e_i (``plus``/``minus``, shape (d, B))."""

    centre: Tensor
    plus: Tensor
    minus: Tensor
    h: float

    def laplacian(self) -> Tensor:
        second = T.add(T.sub(self.plus, T.scale(T.reshape(self.centre, (1, -1)), 2.0)), self.minus)
        return T.scale(T.sum_(second, axis=0), 1.0 / (self.h * self.h))

    def gradient(self) -> Tensor:
        """(d, B) central differences."""
        return T.scale(T.sub(self.plus, self.minus), 0.5 / self.h)


def evaluate_stencil(u_fn: ScalarField, x, h: float) -> Stencil:
    """Evaluate ``u_fn`` once on the stacked points x, x + h e_i, x - h e_i."""
    if not h > 0:
        raise ParameterError("stencil step h must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    B, d = x.shape
    shifts = np.concatenate([np.zeros((1, d)), h * np.eye(d), -h * np.eye(d)])
    stacked = (shifts[:, None, :] + x[None, :, :]).reshape(-1, d)
    u = T.reshape(u_fn(stacked), (2 * d + 1, B))
    return Stencil(T.reshape(T.slice_(u, (slice(0, 1),)), (B,)),
                   T.slice_(u, (slice(1, d + 1),)), T.slice_(u, (slice(d + 1, 2 * d + 1),)), h)


def fd_laplacian(u_fn: ScalarField, x, h: float = 1e-4) -> Tensor:
    """sum_i [u(x + h e_i) - 2 u(x) + u(x - h e_i)] / h^2, shape (B,)."""
    return evaluate_stencil(u_fn, x, h).laplacian()


def fd_gradient_vec(u_fn: ScalarField, x, h: float = 1e-4) -> Tensor:
    """Central-difference gradient, shape (B, d)."""
    return T.transpose(evaluate_stencil(u_fn, x, h).gradient())


# ---------------------------------------------------------------- problems

@dataclass
class PdeProblem:
    """-div(eps grad u) + kappa u = f in the domain, u = g on its boundary, with eps = 1.

    ``kappa`` is None for Poisson problems, else a callable on points.
    """

    domain: object
    source: Callable
    boundary: Callable
    kappa: Callable | None = None
    gamma: float = 1.0
    n_interior: int = 1000
    n_boundary: int = 1
    h: float = 1e-4

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ParameterError("boundary penalty must be non-negative")
        if self.n_interior < 1 or self.n_boundary < 1:
            raise ParameterError("sample sizes must be at least 1")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def sample(self, rng: np.random.Generator):
        return (self.domain.sample_interior(self.n_interior, rng),
                self.domain.sample_boundary(self.n_boundary, rng))

    def apply(self, stencil: Stencil, x) -> Tensor:
        """Operator applied to the stencil values at x."""
        out = T.neg(stencil.laplacian())
        if self.kappa is not None:
            out = T.add(out, T.mul(stencil.centre, self.kappa(x)))
        return out

    def operator(self, u_fn: ScalarField, x) -> Tensor:
        return self.apply(evaluate_stencil(u_fn, x, self.h), x)


def _boundary_misfit(problem: PdeProblem, u_fn: ScalarField, xb) -> Tensor:
    return T.mean(T.square(T.sub(u_fn(xb), problem.boundary(xb))))


def pinn_loss(problem: PdeProblem, u_fn: ScalarField, xr, xb) -> Tensor:
    """mean (N[u] - f)^2 over interior points + gamma * mean (u - g)^2 over boundary points."""
    residual = T.sub(problem.operator(u_fn, xr), problem.source(xr))
    loss = T.mean(T.square(residual))
    if problem.gamma:
        loss = T.add(loss, T.scale(_boundary_misfit(problem, u_fn, xb), problem.gamma))
    return loss


def ritz_energy(problem: PdeProblem, stencil: Stencil, xr) -> Tensor:
    """|Omega| * mean[0.5 (|grad u|^2 + kappa u^2) - f u] from stencil values at xr."""
    grad_sq = T.sum_(T.square(stencil.gradient()), axis=0)
    density = grad_sq
    if problem.kappa is not None:
        density = T.add(density, T.mul(T.square(stencil.centre), problem.kappa(xr)))
    density = T.sub(T.scale(density, 0.5), T.mul(stencil.centre, problem.source(xr)))
    return T.scale(T.mean(density), problem.domain.volume)


def ritz_loss(problem: PdeProblem, u_fn: ScalarField, xr, xb) -> Tensor:
    """Monte Carlo Deep Ritz energy plus gamma * |boundary| * mean (u - g)^2."""
    loss = ritz_energy(problem, evaluate_stencil(u_fn, xr, problem.h), xr)
    if problem.gamma:
        penalty = T.scale(_boundary_misfit(problem, u_fn, xb),
                          problem.gamma * problem.domain.boundary_measure)
        loss = T.add(loss, penalty)
    return loss


# ---------------------------------------------------------------- two-network mixture

FIXED, LEARNABLE, OPTIMAL = "fixed", "learnable", "optimal"


def _values(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


def optimal_alpha_from(residual_h, op_l, u_l_boundary, gamma: float) -> float:
    """-mean(r_h * N[u_l]) / (mean(N[u_l]^2) + gamma * mean(u_l^2 on the boundary))."""
    r = _values(residual_h)
    n = _values(op_l)
    ub = _values(u_l_boundary)
    denom = float(np.mean(n * n)) + gamma * float(np.mean(ub * ub))
    if not denom > 1e-30:
        raise NumericalError("optimal mixing factor undefined: the low-frequency network is degenerate")
    return -float(np.mean(r * n)) / denom


def alpha_optimal(problem: PdeProblem, u_h: ScalarField, u_l: ScalarField, xr, xb) -> float:
    """Closed-form minimiser over alpha of the sampled loss with alpha in both terms."""
    residual_h = T.sub(problem.operator(u_h, xr), problem.source(xr))
    return optimal_alpha_from(residual_h, problem.operator(u_l, xr), u_l(xb), problem.gamma)


@dataclass
class MixedSolution:
    """u = u_h + alpha u_l with a fixed, learnable or per-epoch optimal alpha."""

    u_h: object
    u_l: object
    strategy: str = OPTIMAL
    alpha: Tensor = field(default=None)

    def __post_init__(self):
        if self.strategy not in (FIXED, LEARNABLE, OPTIMAL):
            raise ContractError(f"unknown mixing strategy {self.strategy!r}")
        if self.alpha is None:
            self.alpha = Tensor([0.0 if self.strategy != LEARNABLE else 1.0], name="alpha",
                                trainable=self.strategy == LEARNABLE)
        elif not isinstance(self.alpha, Tensor):
            self.alpha = Tensor([float(self.alpha)], name="alpha",
                                trainable=self.strategy == LEARNABLE)

    @classmethod
    def fixed(cls, u_h, u_l, value: float) -> "MixedSolution":
        return cls(u_h, u_l, FIXED, Tensor([float(value)], name="alpha"))

    @property
    def alpha_value(self) -> float:
        return float(self.alpha.data[0])

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.u_h.parameters())
        if self.uses_low:
            params.update(self.u_l.parameters())
        if self.strategy == LEARNABLE:
            params["alpha"] = self.alpha
        return params

    @property
    def uses_low(self) -> bool:
        return not (self.strategy == FIXED and self.alpha_value == 0.0)

    def components(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(u_h, alpha * u_l) on x as arrays."""
        uh = self.u_h.scalar(x).data
        ul = self.u_l.scalar(x).data if self.uses_low else np.zeros_like(uh)
        return uh, self.alpha_value * ul

    def predict(self, x) -> np.ndarray:
        uh, aul = self.components(x)
        return uh + aul

    def __call__(self, x) -> Tensor:
        out = self.u_h.scalar(x)
        if self.uses_low:
            out = T.add(out, T.mul(self.u_l.scalar(x), self.alpha))
        return out


def mixed_loss(problem: PdeProblem, mixed: MixedSolution, xr, xb, kind: str = "pinn") -> Tensor:
    """Training loss of the mixture; under the optimal strategy alpha is refreshed first.

    PINN, fixed or learnable alpha: residual of u_h + alpha u_l plus
    gamma * mean[(u_h - g)^2 + alpha^2 u_l^2]. PINN, optimal alpha: alpha is set
    to the closed-form value (no gradient flows through it) and the boundary
    term drops alpha, gamma * mean[(u_h - g)^2 + u_l^2]. Ritz: the energy of
    the combined field, fixed or learnable alpha only.
    """
    if kind == "ritz":
        if mixed.strategy == OPTIMAL:
            raise ContractError("the closed-form mixing factor is defined for the residual loss only")
        return ritz_loss(problem, mixed, xr, xb)
    if kind != "pinn":
        raise ContractError(f"unknown loss kind {kind!r}")
    f = problem.source(xr)
    st_h = evaluate_stencil(mixed.u_h.scalar, xr, problem.h)
    residual_h = T.sub(problem.apply(st_h, xr), f)
    bh = T.square(T.sub(mixed.u_h.scalar(xb), problem.boundary(xb)))
    if not mixed.uses_low:
        loss = T.mean(T.square(residual_h))
        return T.add(loss, T.scale(T.mean(bh), problem.gamma)) if problem.gamma else loss
    op_l = problem.apply(evaluate_stencil(mixed.u_l.scalar, xr, problem.h), xr)
    ub_l = mixed.u_l.scalar(xb)
    if mixed.strategy == OPTIMAL:
        mixed.alpha.data[0] = optimal_alpha_from(residual_h, op_l, ub_l, problem.gamma)
        boundary = T.add(bh, T.square(ub_l))
    else:
        boundary = T.add(bh, T.mul(T.square(ub_l), T.square(mixed.alpha)))
    residual = T.add(residual_h, T.mul(op_l, mixed.alpha))
    loss = T.mean(T.square(residual))
    if problem.gamma:
        loss = T.add(loss, T.scale(T.mean(boundary), problem.gamma))
    return loss


def sampled_loss_in_alpha(problem: PdeProblem, u_h: ScalarField, u_l: ScalarField, xr, xb,
                          alpha_free_boundary: bool = False) -> Callable[[float], float]:
    """The sampled mixture loss as a plain function of alpha, for scanning.

    With ``alpha_free_boundary`` the boundary term is (u_h - g)^2 + u_l^2.
    """
    r = _values(T.sub(problem.operator(u_h, xr), problem.source(xr)))
    n = _values(problem.operator(u_l, xr))
    bh = (_values(u_h(xb)) - problem.boundary(xb)) ** 2
    bl = _values(u_l(xb)) ** 2

    def loss(alpha):
        a = np.asarray(alpha, dtype=np.float64)[..., None]
        interior = np.mean((r + a * n) ** 2, axis=-1)
        weight = 1.0 if alpha_free_boundary else a * a
        return interior + problem.gamma * np.mean(bh + weight * bl, axis=-1)

    return loss
