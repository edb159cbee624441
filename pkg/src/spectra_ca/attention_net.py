"""Cross-attention residual networks over the RFF token bank, and dense baselines."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .feature_bank import (BASE, POSTERIOR, FrequencyBank, PosteriorBank, TokenBank,
                           augment, build_bank, build_posterior, make_rng,
                           posterior_features, rff_features, tokenize)
from .tensor import Tensor


@dataclass
class NetConfig:
    d_in: int = 2
    d_out: int = 1
    m_base: int = 128
    K: int = 3
    sigma: float = 0.1
    beta0: float = 0.1
    learn_beta: bool = True
    mean_shift: tuple | None = None
    d_q: int = 64
    n_heads: int = 4
    n_layers: int = 4
    init_mode: str = "fourier"   # "fourier": psi(x) = phi(x); "latent": psi(x) = x

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttnMask:
    """Additive logit offset per token group (base is always 0)."""

    eta: float = 0.0

    def __post_init__(self):
        if self.eta > 0:
            raise ContractError(f"posterior mask strength must be <= 0, got {self.eta}")

    def offsets(self, groups) -> np.ndarray | None:
        if self.eta == 0.0 or all(tag == BASE for _, _, tag in groups):
            return None
        n = max(b for _, b, _ in groups)
        off = np.zeros(n)
        for a, b, tag in groups:
            if tag == POSTERIOR:
                off[a:b] = self.eta
        return off


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_out, fan_in))


class _Module:
    params: dict[str, Tensor]

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), name=f"{self.prefix}{name}", trainable=True)
        self.params[t.name] = t
        return t

    def scalar(self, x) -> Tensor:
        """Forward pass flattened to shape (B,), for scalar fields."""
        return T.reshape(self(x), (-1,))


def _linear(x, W: Tensor, b: Tensor) -> Tensor:
    # W is stored (out, in) and applied as W x to each row of x
    return T.add(T.matmul(x, T.transpose(W)), b)


class CrossAttnNet(_Module):
    """NN-CA (``init_mode="latent"``) or RFF-CA (``init_mode="fourier"``)."""

    def __init__(self, config: NetConfig, seed: int = 0, prefix: str = ""):
        c = config
        if c.d_q % c.n_heads:
            raise ConfigError(f"d_q={c.d_q} is not divisible by n_heads={c.n_heads}")
        if c.init_mode not in ("fourier", "latent"):
            raise ConfigError(f"unknown init_mode {c.init_mode!r}")
        self.config = c
        self.prefix = prefix
        self.params = {}
        self.bank = build_bank(c.d_in, c.m_base, c.K, c.sigma, seed, beta0=c.beta0,
                               learn_beta=c.learn_beta, mean_shift=c.mean_shift,
                               name=f"{prefix}beta_raw")
        self.params.update(self.bank.parameters())
        self.posterior: PosteriorBank | None = None
        rng = make_rng(seed, "net")
        width = self.bank.M if c.init_mode == "fourier" else c.d_in
        dq = c.d_q
        self.W0 = self._param("W0", glorot(rng, dq, width))
        self.b0 = self._param("b0", np.zeros(dq))
        self.layers = []
        for l in range(c.n_layers):
            layer = {k: self._param(f"layers.{l}.{k}", glorot(rng, dq, dq))
                     for k in ("W_Q", "W_K", "W_V", "W_ffn")}
            layer["b_ffn"] = self._param(f"layers.{l}.b_ffn", np.zeros(dq))
            self.layers.append(layer)
        self.W_out = self._param("W_out", glorot(rng, c.d_out, dq))
        self.b_out = self._param("b_out", np.zeros(c.d_out))

    @property
    def head_dim(self) -> int:
        return self.config.d_q // self.config.n_heads

    def add_posterior(self, modes, seed: int = 0) -> None:
        """Attach posterior-frequency tokens; no parameters are reset."""
        if self.config.d_in != 1:
            raise ContractError("posterior tokens are only defined for scalar inputs")
        modes = list(modes)
        self.posterior = build_posterior(modes, seed) if modes else None

    def tokens(self, x, phi: Tensor | None = None) -> TokenBank:
        if phi is None:
            phi = rff_features(self.bank, x)
        bank = tokenize(phi, self.config.d_q, BASE)
        if self.posterior is not None:
            post = tokenize(posterior_features(self.posterior, x), self.config.d_q, POSTERIOR)
            bank = augment(bank, post)
        return bank

    def initial_latent(self, x, phi: Tensor | None = None) -> Tensor:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.config.init_mode == "fourier":
            psi = phi if phi is not None else rff_features(self.bank, x)
        else:
            psi = x
        return T.tanh(_linear(psi, self.W0, self.b0))

    def cross_attention(self, Q: Tensor, H: TokenBank, mask: AttnMask | None, layer: int,
                        return_weights: bool = False):
        """Single-query multi-head attention of Q (B, d_q) over the tokens of H.

        Keys and values are never materialised per token. With one query,
        ``q_h . (W_K h_n)_h`` equals ``(W_K[:, h] q_h) . h_n``, and the value
        projection commutes with the attention-weighted token sum, so both
        projections act on (B, d_q)-sized blocks instead of (B, N_tok, d_q).
        """
        if H.n_tokens == 0:
            raise ContractError("cross attention over an empty token bank")
        p = self.layers[layer]
        B = Q.shape[0]
        n, nh, dh, dq = H.n_tokens, self.config.n_heads, self.head_dim, self.config.d_q
        q = T.transpose(T.reshape(T.matmul(Q, p["W_Q"]), (B, nh, dh)), (1, 0, 2))    # (nh, B, dh)
        wk = T.transpose(T.reshape(p["W_K"], (dq, nh, dh)), (1, 2, 0))               # (nh, dh, dq)
        qk = T.transpose(T.matmul(q, wk), (1, 0, 2))                                 # (B, nh, dq)
        logits = T.matmul(qk, T.transpose(H.tokens, (0, 2, 1)))                      # (B, nh, n)
        logits = T.scale(logits, 1.0 / np.sqrt(dh))
        offsets = mask.offsets(H.groups) if mask is not None else None
        if offsets is not None:
            if np.all(np.isneginf(offsets)):
                raise ContractError("attention mask suppresses every token")
            logits = T.add(logits, offsets)
        weights = T.softmax(logits)
        mixed = T.matmul(weights, H.tokens)                                          # (B, nh, dq)
        wv = T.transpose(T.reshape(p["W_V"], (dq, nh, dh)), (1, 0, 2))               # (nh, dq, dh)
        out = T.matmul(T.transpose(mixed, (1, 0, 2)), wv)                            # (nh, B, dh)
        out = T.reshape(T.transpose(out, (1, 0, 2)), (B, dq))
        return (out, weights) if return_weights else out

    def __call__(self, x, mask: AttnMask | None = None) -> Tensor:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        phi = rff_features(self.bank, x)
        H = self.tokens(x, phi)
        Q = self.initial_latent(x, phi)
        for l, p in enumerate(self.layers):
            Q = T.add(Q, self.cross_attention(Q, H, mask, l))
            Q = T.add(Q, T.tanh(_linear(Q, p["W_ffn"], p["b_ffn"])))
        return _linear(Q, self.W_out, self.b_out)

    forward = __call__


class RFFNet(_Module):
    """phi(x) followed by ``depth`` dense tanh layers and a linear head."""

    def __init__(self, config: NetConfig, seed: int = 0, width: int | None = None,
                 depth: int | None = None, prefix: str = ""):
        c = config
        self.config = c
        self.prefix = prefix
        self.params = {}
        self.width = width or c.d_q
        self.depth = c.n_layers if depth is None else depth
        self.bank = build_bank(c.d_in, c.m_base, c.K, c.sigma, seed, beta0=c.beta0,
                               learn_beta=c.learn_beta, mean_shift=c.mean_shift,
                               name=f"{prefix}beta_raw")
        self.params.update(self.bank.parameters())
        rng = make_rng(seed, "net")
        fan_in = self.bank.M
        self.hidden = []
        for l in range(self.depth):
            W = self._param(f"dense.{l}.W", glorot(rng, self.width, fan_in))
            b = self._param(f"dense.{l}.b", np.zeros(self.width))
            self.hidden.append((W, b))
            fan_in = self.width
        self.W_out = self._param("W_out", glorot(rng, c.d_out, fan_in))
        self.b_out = self._param("b_out", np.zeros(c.d_out))

    def __call__(self, x, mask=None) -> Tensor:
        h = rff_features(self.bank, x)
        for W, b in self.hidden:
            h = T.tanh(_linear(h, W, b))
        return _linear(h, self.W_out, self.b_out)

    forward = __call__


class DenseNet(_Module):
    """Plain tanh MLP on raw coordinates (the low-frequency partner network)."""

    def __init__(self, d_in: int, width: int = 64, depth: int = 3, d_out: int = 1,
                 seed: int = 0, prefix: str = ""):
        self.prefix = prefix
        self.params = {}
        rng = make_rng(seed, "dense")
        fan_in = d_in
        self.hidden = []
        for l in range(depth):
            self.hidden.append((self._param(f"dense.{l}.W", glorot(rng, width, fan_in)),
                                self._param(f"dense.{l}.b", np.zeros(width))))
            fan_in = width
        self.W_out = self._param("W_out", glorot(rng, d_out, fan_in))
        self.b_out = self._param("b_out", np.zeros(d_out))

    def __call__(self, x, mask=None) -> Tensor:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for W, b in self.hidden:
            h = T.tanh(_linear(h, W, b))
        return _linear(h, self.W_out, self.b_out)


def count_cross_attn_params(c: NetConfig) -> int:
    width = c.m_base * (c.K + 1) if c.init_mode == "fourier" else c.d_in
    per_layer = 4 * c.d_q * c.d_q + c.d_q
    return (c.d_q * width + c.d_q) + c.n_layers * per_layer + c.d_out * (c.d_q + 1) + int(c.learn_beta)


def count_rff_nn_params(c: NetConfig, width: int, depth: int) -> int:
    M = c.m_base * (c.K + 1)
    total, fan_in = 0, M
    for _ in range(depth):
        total += width * (fan_in + 1)
        fan_in = width
    return total + c.d_out * (fan_in + 1) + int(c.learn_beta)


def matched_width(c: NetConfig, depth: int | None = None) -> int:
    """Hidden width giving an RFF-NN roughly the parameter count of the RFF-CA net."""
    depth = c.n_layers if depth is None else depth
    target = count_cross_attn_params(c)
    best = min(range(1, 4 * c.d_q + 1),
               key=lambda w: abs(count_rff_nn_params(c, w, depth) - target))
    return best


def init_net(config: NetConfig, seed: int = 0, variant: str | None = None, prefix: str = ""):
    """Build ``rff-ca``, ``nn-ca`` or ``rff-nn`` (capacity matched to rff-ca)."""
    if variant is None:
        variant = "rff-ca" if config.init_mode == "fourier" else "nn-ca"
    if variant == "rff-ca":
        return CrossAttnNet(_with(config, init_mode="fourier"), seed, prefix)
    if variant == "nn-ca":
        return CrossAttnNet(_with(config, init_mode="latent"), seed, prefix)
    if variant == "rff-nn":
        return RFFNet(config, seed, width=matched_width(config), prefix=prefix)
    raise ConfigError(f"unknown model variant {variant!r}")


def _with(c: NetConfig, **changes) -> NetConfig:
    d = c.to_dict()
    d.update(changes)
    return NetConfig(**d)
