"""Discrete Fourier tools, frequency-wise errors, image metrics and the mode-gradient model.

The transform follows the unnormalised convention
``U_k = sum_n u_n exp(-2 pi i k n / N)``; only ``k = 0 .. N // 2`` is kept
for real input.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor

log = logging.getLogger(__name__)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def fft_radix2(x) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT of a complex sequence."""
    a = np.asarray(x, dtype=np.complex128).copy()
    n = a.size
    if not _is_pow2(n):
        raise ParameterError(f"radix-2 FFT needs a power-of-two length, got {n}")
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = a[rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        a = blocks.reshape(-1)
        size *= 2
    return a


def dft_direct(x, modes=None, block: int = 256) -> np.ndarray:
    """O(N^2) DFT evaluated block-wise; ``modes`` defaults to all 0..N-1.

    Phase indices are reduced modulo N before forming the twiddles, which
    keeps the result accurate for large N.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    ks = np.arange(n) if modes is None else np.asarray(modes, dtype=np.int64)
    out = np.empty(ks.size, dtype=np.complex128)
    j = np.arange(n)
    for s in range(0, ks.size, block):
        kb = ks[s:s + block]
        phase = (np.outer(kb, j) % n) * (2.0 * np.pi / n)
        out[s:s + block] = np.exp(-1j * phase) @ x
    return out


@dataclass
class Spectrum:
    """Real-input DFT coefficients for modes 0..N//2 on a periodic grid."""

    coefficients: np.ndarray
    n: int
    length: float = 1.0

    @property
    def modes(self) -> np.ndarray:
        return np.arange(self.coefficients.size)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coefficients)

    def energy(self) -> float:
        """Mean square of the samples recovered from the half spectrum (Parseval)."""
        w = np.full(self.coefficients.size, 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        return float(np.sum(w * self.magnitude ** 2)) / self.n ** 2

    def normalized(self) -> np.ndarray:
        peak = self.magnitude.max()
        return self.magnitude / peak if peak > 0 else self.magnitude

    def csv_rows(self):
        for k, c in enumerate(self.coefficients):
            yield k, abs(c), math.atan2(c.imag, c.real)


def dft_real(values, length: float = 1.0) -> Spectrum:
    """Radix-2 FFT for power-of-two sizes, direct DFT otherwise."""
    u = np.asarray(values, dtype=np.float64).reshape(-1)
    n = u.size
    if n < 2:
        raise ContractError("need at least two samples")
    half = n // 2 + 1
    coeffs = fft_radix2(u)[:half] if _is_pow2(n) else dft_direct(u, np.arange(half))
    coeffs[0] = coeffs[0].real
    return Spectrum(coeffs, n, length)


def periodic_grid(n: int, length: float = 1.0) -> np.ndarray:
    """n points on [0, length) without the right endpoint."""
    return np.arange(n) * (length / n)


def dominant_modes(spectrum: Spectrum, lam: float) -> list[int]:
    """Modes whose magnitude strictly exceeds ``lam`` times the peak magnitude."""
    if not 0 < lam < 1:
        raise ParameterError(f"threshold must lie in (0, 1), got {lam}")
    mag = spectrum.magnitude
    zeta = mag.max()
    if zeta == 0:
        return []
    return [int(k) for k in np.flatnonzero(mag > lam * zeta)]


def mode_projection(u_grid, modes, x=None) -> np.ndarray:
    """Sine coefficients c_k of ``u`` on a closed uniform grid over [-1, 1].

    c_k = trapz(u sin(k pi x)) / trapz(sin^2(k pi x)).
    """
    u = np.asarray(u_grid, dtype=np.float64).reshape(-1)
    if x is None:
        x = np.linspace(-1.0, 1.0, u.size)
    out = []
    for k in modes:
        s = np.sin(k * np.pi * x)
        out.append(np.trapezoid(u * s, x) / np.trapezoid(s * s, x))
    return np.array(out)


def freq_error(pred_coeffs, true_coeffs) -> np.ndarray:
    """|pred_k - true_k| / |true_k|; modes with a zero reference give NaN."""
    pred = np.asarray(pred_coeffs)
    true = np.asarray(true_coeffs)
    out = np.full(true.shape, np.nan)
    for i, t in enumerate(true):
        if t == 0:
            log.warning("reference coefficient %d is zero; skipping mode", i)
            continue
        out[i] = abs(pred[i] - t) / abs(t)
    return out


def rel_l2(pred, ref) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"rel_l2: shapes {pred.shape} and {ref.shape} differ")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ContractError("rel_l2 against an all-zero reference")
    return float(np.linalg.norm(pred - ref) / denom)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def log_kernel(size: int = 15, sigma: float = 1.5) -> np.ndarray:
    """Laplacian-of-Gaussian kernel shifted to sum to zero."""
    r = np.arange(size) - (size - 1) / 2.0
    xx, yy = np.meshgrid(r, r, indexing="ij")
    q = (xx ** 2 + yy ** 2) / (2.0 * sigma ** 2)
    k = (q - 1.0) / (np.pi * sigma ** 4) * np.exp(-q)
    return k - k.mean()


def high_pass(image, kernel=None) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    kernel = log_kernel() if kernel is None else kernel
    # symmetric extension keeps flat regions flat, so the zero-sum kernel maps them to 0
    return np.stack([ndimage.correlate(img[:, :, c], kernel, mode="reflect")
                     for c in range(img.shape[2])], axis=2)


def hfen(recon, ref) -> float:
    """Relative high-frequency error norm after channelwise LoG filtering."""
    recon = np.asarray(recon, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if recon.shape != ref.shape:
        raise DimensionError(f"hfen: shapes {recon.shape} and {ref.shape} differ")
    hp_ref = high_pass(ref)
    denom = np.linalg.norm(hp_ref)
    if denom == 0:
        raise ContractError("HFEN undefined: reference has no high-frequency content")
    return float(np.linalg.norm(high_pass(recon) - hp_ref) / denom)


def gradient_ratio(k: int, c: float, m: int) -> float:
    """k**(2m) |c|: initial gradient of mode k over mode 1 in the decoupled model."""
    if k < 1 or int(k) != k:
        raise ParameterError("k must be a positive integer")
    if m not in (0, 1, 2):
        raise ParameterError("derivative order m must be 0, 1 or 2")
    return float(k) ** (2 * m) * abs(c)


def appendix_loss(c1: Tensor, c2: Tensor, k: int, c: float, m: int) -> Tensor:
    """0.5 [pi^(2m) (c1 - 1)^2 + (k pi)^(2m) (c2 - c)^2] built on the tape."""
    w1 = np.pi ** (2 * m)
    w2 = (k * np.pi) ** (2 * m)
    return T.scale(T.add(T.scale(T.square(T.sub(c1, 1.0)), w1),
                         T.scale(T.square(T.sub(c2, c)), w2)), 0.5)


@dataclass
class ModeDynamics:
    t: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c1_exact: np.ndarray
    c2_exact: np.ndarray
    rate1: float
    rate2: float
    target2: float

    def initial_slope_ratio(self) -> float:
        """|dc2/dt| / |dc1/dt| at t = 0."""
        return abs(self.rate2 * self.target2) / self.rate1


def toy_mode_dynamics(k: int, c: float, m: int, eta: float, steps: int) -> ModeDynamics:
    """Explicit-Euler gradient flow of the two decoupled mode coefficients.

    Each step is one gradient-descent update with learning rate ``eta``; the
    continuous-time solutions are returned alongside for comparison.
    """
    r1 = eta * np.pi ** (2 * m)
    r2 = eta * (k * np.pi) ** (2 * m)
    if max(r1, r2) >= 2.0:
        raise ParameterError(f"explicit Euler unstable: eta*(k pi)^(2m) = {r2:.3g} >= 2")
    c1 = np.zeros(steps + 1)
    c2 = np.zeros(steps + 1)
    for i in range(steps):
        c1[i + 1] = c1[i] - r1 * (c1[i] - 1.0)
        c2[i + 1] = c2[i] - r2 * (c2[i] - c)
    t = np.arange(steps + 1, dtype=float)
    return ModeDynamics(t, c1, c2, 1.0 - np.exp(-r1 * t), c * (1.0 - np.exp(-r2 * t)),
                        r1, r2, float(c))
