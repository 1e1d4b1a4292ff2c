"""Deterministic tensor plumbing shared by every predictor.

Complex/real conversion, the unitary frequency<->delay transform pair,
per-sample instance normalization, and non-overlapping temporal patching.
All functions are pure and operate on numpy arrays; the network modules
re-implement the same math in torch where gradients are needed and are
tested against these references.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-9


def idft_delay(h_f: np.ndarray) -> np.ndarray:
    """Map frequency-domain CSI to the delay domain along axis 0.

    Applies the conjugate transpose of the unitary K-point DFT matrix to
    the subcarrier axis, H_tau = F_K^H H_f. Unitary scaling (1/sqrt(K))
    preserves the Frobenius norm so the two domain branches stay
    comparable in scale.

    Parameters
    ----------
    h_f : complex array [K][...]
        CSI with subcarriers on the leading axis.

    Returns
    -------
    complex array of the same shape, delay bins on the leading axis.
    """
    h_f = np.asarray(h_f)
    if h_f.shape[0] < 1:
        raise ValueError("need at least one subcarrier")
    return np.fft.ifft(h_f, axis=0, norm="ortho")


def dft_freq(h_tau: np.ndarray) -> np.ndarray:
    """Inverse of :func:`idft_delay` (unitary DFT along axis 0)."""
    return np.fft.fft(np.asarray(h_tau), axis=0, norm="ortho")


def realify(h: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts on a new leading axis.

    Channel 0 holds the real part, channel 1 the imaginary part. The map
    is an isometry: ||realify(H)||^2 equals the squared Frobenius norm
    of H.
    """
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=0)


def complexify(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`realify`; axis 0 must have length 2."""
    x = np.asarray(x)
    if x.shape[0] != 2:
        raise ValueError(f"leading axis must be 2, got {x.shape[0]}")
    return x[0] + 1j * x[1]


@dataclass(frozen=True)
class NormStats:
    """Scalar per-sample normalization statistics for one domain pair.

    mu_f/sigma_f describe the realified frequency-domain input, mu_t/sigma_t
    the realified delay-domain input. Standard deviations are floored at
    SIGMA_FLOOR so normalization never divides by zero.
    """

    mu_f: float
    sigma_f: float
    mu_t: float
    sigma_t: float

    def __post_init__(self):
        if self.sigma_f <= 0 or self.sigma_t <= 0:
            raise ValueError("sigma must be positive")


def scalar_stats(x: np.ndarray) -> tuple[float, float]:
    """Mean and (population) std over every element, std floored.

    A sub-floor std is clamped to SIGMA_FLOOR and logged; this only
    happens for (near-)constant inputs.
    """
    x = np.asarray(x)
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma < SIGMA_FLOOR:
        log.warning("std %.3e below floor, clamping to %.1e", sigma, SIGMA_FLOOR)
        sigma = SIGMA_FLOOR
    return mu, sigma


def compute_stats(x_freq: np.ndarray, x_delay: np.ndarray) -> NormStats:
    """NormStats from the realified frequency/delay input tensors."""
    mu_f, sigma_f = scalar_stats(x_freq)
    mu_t, sigma_t = scalar_stats(x_delay)
    return NormStats(mu_f=mu_f, sigma_f=sigma_f, mu_t=mu_t, sigma_t=sigma_t)


def normalize(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    """Elementwise (x - mu) / sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return (np.asarray(x) - mu) / sigma


def denormalize(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    """Exact inverse of :func:`normalize`."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.asarray(x) * sigma + mu


@dataclass(frozen=True)
class PatchedTensor:
    """Non-overlapping temporal patches of a [2K][P] tensor.

    data has shape [2K][N][P'] with P' = ceil(P/N); columns beyond P are
    zero padding in the last patch.
    """

    data: np.ndarray
    patch_size: int
    orig_len: int

    @property
    def num_patches(self) -> int:
        return self.data.shape[2]


def num_patches(p: int, n: int) -> int:
    """P' = ceil(P/N)."""
    return math.ceil(p / n)


def patch(x: np.ndarray, n: int) -> PatchedTensor:
    """Group the trailing time axis into non-overlapping patches of size n.

    x: real tensor [2K][P]. The last patch is zero-padded when n does not
    divide P.
    """
    x = np.asarray(x)
    if n < 1:
        raise ValueError("patch size must be >= 1")
    c, p = x.shape
    p_prime = num_patches(p, n)
    padded = np.zeros((c, p_prime * n), dtype=x.dtype)
    padded[:, :p] = x
    # [2K][P'*N] -> [2K][P'][N] -> [2K][N][P']
    data = padded.reshape(c, p_prime, n).transpose(0, 2, 1)
    return PatchedTensor(data=data, patch_size=n, orig_len=p)


def unpatch(pt: PatchedTensor) -> np.ndarray:
    """Invert :func:`patch`, dropping the zero padding."""
    c = pt.data.shape[0]
    flat = pt.data.transpose(0, 2, 1).reshape(c, -1)
    return flat[:, : pt.orig_len]
