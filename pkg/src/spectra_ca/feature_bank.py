"""Multiscale random Fourier feature bank, token reshaping and posterior tokens."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor

BASE = "base"
POSTERIOR = "posterior"


def make_rng(seed: int, *purpose: str) -> np.random.Generator:
    """PCG64 stream derived from ``seed`` and a purpose label.

    Streams for different purposes are statistically independent
    (``SeedSequence`` spawn keys), so adding a new consumer never shifts the
    draws of an existing one.
    """
    key = tuple(int.from_bytes(p.encode(), "little") % (2**32) for p in purpose)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def inverse_softplus(y: float) -> float:
    if y <= 0:
        raise ParameterError(f"softplus cannot reach {y}")
    return float(y + np.log(-np.expm1(-y)))


@dataclass
class FrequencyBank:
    """Fixed frequencies ``2**k * omega_m`` with a learnable amplitude envelope.

    Rows of :attr:`omega` are scale-major: row ``k * m_base + m`` holds scale
    ``k`` of base frequency ``m``, so a token width of ``m_base`` gives one
    token per scale.
    """

    omega_base: np.ndarray
    K: int
    phases: np.ndarray
    beta_raw: Tensor
    sigma: float
    learn_beta: bool = True
    beta_fixed: float = 0.0
    omega: np.ndarray = field(init=False, repr=False)
    norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        scales = 2.0 ** np.arange(self.K + 1)
        self.omega = (scales[:, None, None] * self.omega_base[None, :, :]).reshape(-1, self.d_in)
        self.norms = np.linalg.norm(self.omega, axis=1)

    @property
    def d_in(self) -> int:
        return self.omega_base.shape[1]

    @property
    def m_base(self) -> int:
        return self.omega_base.shape[0]

    @property
    def M(self) -> int:
        return self.m_base * (self.K + 1)

    def beta(self) -> Tensor:
        if self.learn_beta:
            return T.softplus(self.beta_raw)
        return Tensor([self.beta_fixed])

    def parameters(self) -> dict[str, Tensor]:
        return {self.beta_raw.name: self.beta_raw} if self.learn_beta else {}


def build_bank(d_in: int, m_base: int, K: int, sigma: float, seed: int = 0, *,
               beta0: float = 0.1, learn_beta: bool = True, mean_shift=None,
               tied_phases: bool = False, name: str = "beta_raw") -> FrequencyBank:
    """Sample base frequencies from ``N(mean_shift, sigma**-2 I)`` and phases from U[0, 2pi).

    ``tied_phases`` reuses the scale-0 phase for every scale, which is only
    useful for checking the scale structure of the features.
    """
    if m_base < 1 or K < 0 or d_in < 1:
        raise ParameterError(f"invalid bank size m_base={m_base}, K={K}, d_in={d_in}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if beta0 < 0:
        raise ParameterError("beta0 must be non-negative")
    rng = make_rng(seed, "bank")
    omega_base = rng.standard_normal((m_base, d_in)) / sigma
    if mean_shift is not None:
        omega_base = omega_base + np.broadcast_to(np.asarray(mean_shift, dtype=float), (d_in,))
    if tied_phases:
        phases = np.tile(rng.uniform(0.0, 2 * np.pi, m_base), K + 1)
    else:
        phases = rng.uniform(0.0, 2 * np.pi, m_base * (K + 1))
    if learn_beta:
        raw = inverse_softplus(beta0) if beta0 > 0 else -30.0
    else:
        raw = 0.0
    beta_raw = Tensor([raw], name=name, trainable=learn_beta)
    return FrequencyBank(omega_base, K, phases, beta_raw, float(sigma),
                         learn_beta=learn_beta, beta_fixed=float(beta0))


def rff_features(bank: FrequencyBank, x) -> Tensor:
    """phi(x) for a batch ``x`` of shape (B, d_in); returns a (B, M) tensor.

    Only the envelope depends on trainable state, so the cosine block is a
    plain array and the tape only sees one broadcast multiply.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != bank.d_in:
        raise DimensionError(f"rff_features: input width {x.shape[1]} != d_in {bank.d_in}")
    waves = np.cos(x @ bank.omega.T + bank.phases) * np.sqrt(1.0 / bank.M)
    envelope = T.exp(T.neg(T.mul(bank.beta(), bank.norms)))
    return T.mul(waves, envelope)


@dataclass
class TokenBank:
    """Token matrix of shape (B, N_tok, d_q) plus the group each row belongs to."""

    tokens: Tensor
    groups: list[tuple[int, int, str]]

    @property
    def d_q(self) -> int:
        return self.tokens.shape[-1]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-2]


def tokenize(features, d_q: int, tag: str = BASE) -> TokenBank:
    """Row-major reshape of (B, F) features into ceil(F / d_q) tokens, zero padded."""
    if d_q < 1:
        raise ParameterError("d_q must be at least 1")
    features = T.as_tensor(features)
    if features.ndim == 1:
        features = T.reshape(features, (1, -1))
    B, F = features.shape
    n_tok = -(-F // d_q)
    pad = n_tok * d_q - F
    if pad:
        features = T.concat([features, np.zeros((B, pad))], axis=1)
    return TokenBank(T.reshape(features, (B, n_tok, d_q)), [(0, n_tok, tag)])


@dataclass
class PosteriorBank:
    """Deterministic frequencies ``2 pi k`` for the extracted modes ``k``."""

    modes: np.ndarray
    phases: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        return 2.0 * np.pi * self.modes

    @property
    def M(self) -> int:
        return len(self.modes)


def build_posterior(modes, seed: int = 0) -> PosteriorBank:
    modes = np.array(sorted(int(k) for k in modes), dtype=np.int64)
    rng = make_rng(seed, "posterior")
    return PosteriorBank(modes, rng.uniform(0.0, 2 * np.pi, len(modes)))


def posterior_features(pbank: PosteriorBank, x) -> np.ndarray:
    """sqrt(2 / M_post) * cos(2 pi k x + b_k) for scalar inputs; shape (B, M_post).

    No amplitude envelope is applied here.
    """
    if pbank.M == 0:
        raise ContractError("empty posterior mode set; skip augmentation instead")
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return np.sqrt(2.0 / pbank.M) * np.cos(x * pbank.omega + pbank.phases)


def augment(base: TokenBank, post: TokenBank | None) -> TokenBank:
    """Concatenate posterior tokens after the base tokens."""
    if post is None or post.n_tokens == 0:
        return base
    if post.d_q != base.d_q:
        raise DimensionError(f"augment: token widths differ ({base.d_q} vs {post.d_q})")
    offset = base.n_tokens
    groups = list(base.groups) + [(a + offset, b + offset, tag) for a, b, tag in post.groups]
    return TokenBank(T.concat([base.tokens, post.tokens], axis=1), groups)
