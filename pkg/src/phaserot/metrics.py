"""Error-rate and AIR bookkeeping.

A :class:`MetricsReport` holds raw counters only, so reports from separate
shards merge by addition. AIR penalty sums are kept as integers in units of
``2**-AIR_FRAC_BITS`` bits; integer addition is associative, so the merged
report does not depend on how shards were grouped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

AIR_FRAC_BITS = 40
_AIR_SCALE = float(1 << AIR_FRAC_BITS)


def _to_fixed(x: float) -> int:
    return int(round(x * _AIR_SCALE))


@dataclass(frozen=True)
class MetricsReport:
    n_channels: int
    bits_per_symbol: int
    n_blocks: int = 0
    block_errors: int = 0
    symbol_errors: int = 0
    bit_errors: int = 0
    n_soft_symbols: int = 0
    air_penalty: int = 0
    air_penalty_sq: int = 0
    seed: int | None = None

    @property
    def n_symbols(self) -> int:
        return self.n_blocks * self.n_channels

    @property
    def n_bits(self) -> int:
        return self.n_symbols * self.bits_per_symbol

    @property
    def bler(self) -> float:
        return self.block_errors / self.n_blocks if self.n_blocks else math.nan

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.n_symbols if self.n_blocks else math.nan

    @property
    def ber(self) -> float:
        return self.bit_errors / self.n_bits if self.n_blocks else math.nan

    @property
    def air(self) -> float:
        """Bits per complex symbol; NaN when no soft outputs were accumulated."""
        if not self.n_soft_symbols:
            return math.nan
        return self.bits_per_symbol - self.air_penalty / _AIR_SCALE / self.n_soft_symbols

    @staticmethod
    def _binomial_se(p, n):
        return math.sqrt(p * (1.0 - p) / n) if n else math.nan

    @property
    def bler_se(self) -> float:
        return self._binomial_se(self.bler, self.n_blocks)

    @property
    def ser_se(self) -> float:
        return self._binomial_se(self.ser, self.n_symbols)

    @property
    def ber_se(self) -> float:
        return self._binomial_se(self.ber, self.n_bits)

    @property
    def air_se(self) -> float:
        """Standard error from the sample spread of per-symbol AIR contributions."""
        n = self.n_soft_symbols
        if n < 2:
            return math.nan
        mean_pen = self.air_penalty / _AIR_SCALE / n
        mean_sq = self.air_penalty_sq / _AIR_SCALE / n
        var = max(mean_sq - mean_pen ** 2, 0.0) * n / (n - 1)
        return math.sqrt(var / n)

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        if (self.n_channels, self.bits_per_symbol) != (other.n_channels, other.bits_per_symbol):
            raise ValueError("cannot merge reports of different shapes")
        counters = {f.name: getattr(self, f.name) + getattr(other, f.name)
                    for f in fields(self) if f.name not in ("n_channels", "bits_per_symbol", "seed")}
        seed = self.seed if self.seed == other.seed else None
        return replace(self, seed=seed, **counters)

    __add__ = merge

    def summary(self) -> dict:
        return {
            "bler": self.bler, "ser": self.ser, "ber": self.ber, "air": self.air,
            "bler_se": self.bler_se, "ser_se": self.ser_se, "ber_se": self.ber_se, "air_se": self.air_se,
            "n_symbols": self.n_symbols, "n_blocks": self.n_blocks, "n_bits": self.n_bits, "seed": self.seed,
        }

    def to_dict(self) -> dict:
        return asdict(self)


def merge_reports(reports) -> MetricsReport:
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    out = reports[0]
    for r in reports[1:]:
        out = out.merge(r)
    return out


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    count = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        count += (x & np.uint64(1)).astype(np.int64)
        x >>= np.uint64(1)
    return count


def accumulate_hard(s_true: np.ndarray, s_hat: np.ndarray, bits_per_symbol: int,
                    report: MetricsReport | None = None) -> MetricsReport:
    """Count block, symbol and bit errors between index arrays of shape ``(B, N)``.

    Symbol indices are the bit labels, so bit errors are the popcount of the XOR.
    """
    s_true = np.atleast_2d(np.asarray(s_true))
    s_hat = np.atleast_2d(np.asarray(s_hat))
    if s_true.shape != s_hat.shape:
        raise ValueError(f"shape mismatch {s_true.shape} vs {s_hat.shape}")
    wrong = s_true != s_hat
    add = MetricsReport(
        n_channels=s_true.shape[1], bits_per_symbol=bits_per_symbol,
        n_blocks=s_true.shape[0],
        block_errors=int(np.any(wrong, axis=1).sum()),
        symbol_errors=int(wrong.sum()),
        bit_errors=int(_popcount(np.bitwise_xor(s_true, s_hat)).sum()),
    )
    return add if report is None else report.merge(add)


def bit_penalties(llrs: np.ndarray, true_bits: np.ndarray) -> np.ndarray:
    """``log2(1 + exp(-(2b - 1) L))`` per bit."""
    sign = 2.0 * np.asarray(true_bits, dtype=float) - 1.0
    return np.logaddexp(0.0, -sign * np.asarray(llrs, dtype=float)) / math.log(2.0)


def accumulate_soft(llrs: np.ndarray, true_bits: np.ndarray, report: MetricsReport) -> MetricsReport:
    """Add AIR statistics for LLRs of shape ``(..., m)`` to ``report``."""
    pen = bit_penalties(llrs, true_bits)
    per_symbol = pen.reshape(-1, pen.shape[-1]).sum(axis=1)
    return replace(
        report,
        n_soft_symbols=report.n_soft_symbols + per_symbol.size,
        air_penalty=report.air_penalty + _to_fixed(float(per_symbol.sum())),
        air_penalty_sq=report.air_penalty_sq + _to_fixed(float(np.square(per_symbol).sum())),
    )


def air_from_llrs(llrs: np.ndarray, true_bits: np.ndarray) -> float:
    """GMI estimate ``m - mean over symbols of sum_k log2(1 + exp(-(2b - 1) L))``.

    ``llrs`` and ``true_bits`` share shape ``(..., m)``; LLRs are natural-log
    ``ln P(b=1) / P(b=0)``.
    """
    llrs = np.asarray(llrs, dtype=float)
    m = llrs.shape[-1]
    pen = bit_penalties(llrs, true_bits)
    return m - pen.reshape(-1, m).sum(axis=1).mean()


@dataclass(frozen=True)
class RelativeMetrics:
    """Rotated over unrotated ratios (``None`` when the baseline rate is zero) and AIR difference."""

    bler: float | None
    ser: float | None
    ber: float | None
    air: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(a: float, b: float) -> float | None:
    if not (math.isfinite(a) and math.isfinite(b)) or b == 0:
        return None
    return a / b


def relative_report(rotated: MetricsReport, unrotated: MetricsReport) -> RelativeMetrics:
    d_air = rotated.air - unrotated.air
    return RelativeMetrics(
        bler=_ratio(rotated.bler, unrotated.bler),
        ser=_ratio(rotated.ser, unrotated.ser),
        ber=_ratio(rotated.ber, unrotated.ber),
        air=d_air if math.isfinite(d_air) else None,
    )


def relative_change(ratio: float) -> float:
    """Fractional decrease implied by a ratio, e.g. 0.65 -> 0.35."""
    return 1.0 - ratio
