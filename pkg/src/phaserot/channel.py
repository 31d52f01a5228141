"""Multichannel residual-phase-noise channel and its large-N surrogate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def snr_to_n0(snr_db: float, es: float = 1.0) -> float:
    """Noise variance per complex channel use for ``SNR = Es / N0``."""
    if not es > 0:
        raise ValueError("es must be positive")
    return es / 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    n_channels: int
    n0: float
    sigma2_p: float
    es: float = 1.0

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not self.n0 > 0:
            raise ValueError("n0 must be positive")
        if not self.sigma2_p >= 0:
            raise ValueError("sigma2_p must be non-negative")
        if not self.es > 0:
            raise ValueError("es must be positive")

    @classmethod
    def from_snr_db(cls, n_channels: int, snr_db: float, sigma2_p: float, es: float = 1.0) -> "ChannelParams":
        return cls(n_channels, snr_to_n0(snr_db, es), sigma2_p, es)

    @property
    def alpha(self) -> float:
        """Large-N attenuation ``E[exp(j theta)]``."""
        return asymptotic_alpha(self.sigma2_p)

    @property
    def asymptotic_noise_variance(self) -> float:
        return self.n0 + self.es * (1.0 - math.exp(-self.sigma2_p))

    @property
    def derotation_error_variance(self) -> float:
        """``E|r~ - s|^2`` per channel after derotation, for any rotation.

        Phase errors leave ``2 Es (1 - exp(-sigma2_p / 2))`` of the signal
        energy off the transmitted point; orthogonal derotation spreads it
        evenly across channels.
        """
        return self.n0 + 2.0 * self.es * (1.0 - math.exp(-self.sigma2_p / 2.0))


def asymptotic_alpha(sigma2_p: float) -> float:
    return math.exp(-sigma2_p / 2.0)


@dataclass
class TransmissionBatch:
    """One batch of blocks; channels on the last axis."""

    indices: np.ndarray
    symbols: np.ndarray
    transmitted: np.ndarray
    theta: np.ndarray
    noise: np.ndarray
    received: np.ndarray

    def __post_init__(self):
        shape = self.symbols.shape
        for name in ("indices", "transmitted", "theta", "noise", "received"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("non-finite phase draw")


def complex_gaussian(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian, ``variance / 2`` per real part."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return np.sqrt(variance / 2.0) * z.view(np.complex128)[..., 0]


def draw_symbols(rng: np.random.Generator, n_blocks: int, n_channels: int, order: int) -> np.ndarray:
    return rng.integers(0, order, size=(n_blocks, n_channels))


def transmit(s: np.ndarray, rotation, params: ChannelParams, rng: np.random.Generator,
             noise_rng: np.random.Generator | None = None, indices: np.ndarray | None = None) -> TransmissionBatch:
    """Send symbol blocks ``s`` (shape ``(B, N)``) through ``r = Theta f_R(s) + n``.

    ``rotation`` is any precoder with ``forward``; phases are drawn from
    ``rng`` and noise from ``noise_rng`` (defaults to ``rng``).
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.complex128))
    if s.shape[-1] != params.n_channels:
        raise ValueError(f"symbols have {s.shape[-1]} channels, params say {params.n_channels}")
    if rotation.dim != 2 * params.n_channels:
        raise ValueError(f"rotation of dim {rotation.dim} does not fit {params.n_channels} channels")
    noise_rng = rng if noise_rng is None else noise_rng
    tx = rotation.forward(s)
    theta = math.sqrt(params.sigma2_p) * rng.standard_normal(s.shape)
    noise = complex_gaussian(noise_rng, s.shape, params.n0)
    r = np.exp(1j * theta) * tx + noise
    if indices is None:
        indices = np.full(s.shape, -1, dtype=np.int64)
    return TransmissionBatch(indices, s, tx, theta, noise, r)


def asymptotic_transmit(s: np.ndarray, params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    """Derotated output of Hadamard transmission as the channel count grows without bound.

    Each channel sees ``alpha s + n~`` with ``alpha = exp(-sigma2_p / 2)`` and
    circular Gaussian ``n~`` of variance ``N0 + Es (1 - exp(-sigma2_p))``.
    """
    s = np.asarray(s, dtype=np.complex128)
    return params.alpha * s + complex_gaussian(rng, s.shape, params.asymptotic_noise_variance)


@dataclass(frozen=True)
class DerotationStats:
    """Linear fit ``r~ = alpha s + e`` and second-order statistics of ``e``."""

    alpha: complex
    noise_variance: float
    pseudo_variance: complex
    pseudo_variance_se: float
    n: int


def derotation_statistics(s: np.ndarray, r_tilde: np.ndarray) -> DerotationStats:
    """Least-squares attenuation and residual moments over all samples."""
    s = np.asarray(s, dtype=np.complex128).ravel()
    r = np.asarray(r_tilde, dtype=np.complex128).ravel()
    alpha = np.vdot(s, r) / np.vdot(s, s).real
    e = r - alpha * s
    e2 = e * e
    pv = e2.mean()
    se = math.sqrt(np.mean(np.abs(e2 - pv) ** 2) / e.size)
    return DerotationStats(complex(alpha), float(np.mean(np.abs(e) ** 2)), complex(pv), se, e.size)
