"""Gray-labelled square QAM constellations.

Symbol index ``k`` and bit label coincide: the label of point ``k`` is the
``m``-bit binary expansion of ``k`` (MSB first). The first ``m/2`` bits select
the in-phase level, the last ``m/2`` the quadrature level, each through a
reflected binary Gray code. Bit 0 on an axis maps to the positive half, so
the QPSK label ``00`` sits in the first quadrant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64, 256, 1024)


def gray_encode(n):
    return n ^ (n >> 1)


def gray_decode(g):
    g = np.asarray(g)
    n = g.copy()
    shift = g >> 1
    while np.any(shift):
        n ^= shift
        shift >>= 1
    return n


@dataclass(frozen=True, eq=False)
class Constellation:
    """Square QAM point set with Gray labels.

    Parameters
    ----------
    order : int
        Number of points ``M``.
    es : float
        Average symbol energy.
    """

    order: int
    es: float = 1.0
    points: np.ndarray = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)
    levels: np.ndarray = field(init=False, repr=False)
    axis_codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported QAM order {self.order}; expected one of {SUPPORTED_ORDERS}")
        if not self.es > 0:
            raise ValueError("es must be positive")
        side = int(round(np.sqrt(self.order)))
        k = side.bit_length() - 1
        scale = np.sqrt(self.es / (2.0 * (self.order - 1) / 3.0))

        # Per axis: Gray code -> level position -> amplitude (descending).
        codes = np.arange(side)
        position = gray_decode(codes)
        amplitude = (side - 1 - 2 * position) * scale

        idx = np.arange(self.order)
        i_code, q_code = idx >> k, idx & (side - 1)
        points = amplitude[i_code] + 1j * amplitude[q_code]
        m = 2 * k
        labels = ((idx[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)

        # Level positions in ascending-position order, with the Gray code at each.
        by_position = np.empty(side, dtype=np.int64)
        by_position[position] = codes
        for name, value in (
            ("points", points),
            ("labels", labels),
            ("levels", amplitude[by_position]),
            ("axis_codes", by_position),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_scale", scale)

    @property
    def bits_per_symbol(self) -> int:
        return int(self.labels.shape[1])

    @property
    def side(self) -> int:
        return int(self.levels.size)

    @property
    def scale(self) -> float:
        """Distance from the origin to the innermost level on one axis."""
        return self._scale

    def descriptor(self) -> dict:
        return {"format": "qam", "order": self.order, "es": self.es}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Constellation":
        if desc.get("format", "qam") != "qam":
            raise ValueError(f"unsupported constellation format {desc.get('format')!r}")
        return cls(int(desc["order"]), float(desc.get("es", 1.0)))

    def map_bits(self, bits) -> np.ndarray:
        """Map bit groups of length ``m`` (last axis) to complex symbols."""
        return self.points[self.bits_to_indices(bits)]

    def bits_to_indices(self, bits) -> np.ndarray:
        bits = np.asarray(bits)
        m = self.bits_per_symbol
        if bits.shape[-1] != m:
            raise ValueError(f"expected bit groups of length {m}, got {bits.shape[-1]}")
        if np.any((bits != 0) & (bits != 1)):
            raise ValueError("bits must be 0 or 1")
        weights = 1 << np.arange(m - 1, -1, -1)
        return (bits.astype(np.int64) * weights).sum(axis=-1)

    def demap_symbol(self, index) -> np.ndarray:
        """Bits of the symbol(s) with the given index, shape ``(..., m)``."""
        index = np.asarray(index)
        if np.any((index < 0) | (index >= self.order)):
            raise ValueError("symbol index out of range")
        return self.labels[index]


def square_qam(order: int, es: float = 1.0) -> Constellation:
    return Constellation(order, es)
