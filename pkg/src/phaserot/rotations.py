"""Multidimensional signal rotations.

Real-basis rotations act on the interleaved component vector
``(Re s1, Im s1, Re s2, Im s2, ...)``. Complex-basis rotations act on the
complex vector directly; each has an equivalent real-basis embedding, which
is what the joint detector consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

ORTHO_TOL = 1e-12
DET_TOL = 1e-9

# 2x2 Hadamard kernel with swapped columns, so that it has determinant +1
H2_KERNEL = np.array([[1.0, 1.0], [-1.0, 1.0]]) / math.sqrt(2.0)


def _is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def wrap_angle(phi):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(phi, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def to_real(s: np.ndarray) -> np.ndarray:
    """Interleave real and imaginary parts along the last axis."""
    s = np.ascontiguousarray(s, dtype=np.complex128)
    return s.view(np.float64)


def to_complex(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ValueError("real vector length must be even")
    return x.view(np.complex128)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RotationMatrix:
    """Real orthogonal matrix with determinant +1 and its construction recipe."""

    entries: np.ndarray
    recipe: dict = field(default_factory=lambda: {"kind": "explicit"})

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("rotation matrix must be square")
        object.__setattr__(self, "entries", _readonly(m))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_channels(self) -> int:
        if self.dim % 2:
            raise ValueError("odd-dimensional rotation has no complex-channel interpretation")
        return self.dim // 2

    @property
    def T(self) -> "RotationMatrix":
        return RotationMatrix(self.entries.T, {"kind": "explicit", "transpose_of": self.recipe})

    def check(self, ortho_tol: float = ORTHO_TOL, det_tol: float = DET_TOL) -> bool:
        m = self.entries
        ortho = np.max(np.abs(m.T @ m - np.eye(self.dim))) <= ortho_tol
        return bool(ortho and abs(np.linalg.det(m) - 1.0) <= det_tol)

    def __matmul__(self, other: "RotationMatrix") -> "RotationMatrix":
        return RotationMatrix(self.entries @ other.entries, {"kind": "explicit"})

    # Precoder interface
    def forward(self, s: np.ndarray) -> np.ndarray:
        return apply_real(self, s)

    def inverse(self, r: np.ndarray) -> np.ndarray:
        return apply_real(self.entries.T, r)

    def real_matrix(self) -> np.ndarray:
        return self.entries


@dataclass(frozen=True, eq=False)
class ComplexRotation:
    """Unitary transform applied on a complex-signal basis.

    ``fast_hadamard`` switches ``forward``/``inverse`` to the butterfly path;
    the dense ``unitary`` stays the reference.
    """

    unitary: np.ndarray
    recipe: dict
    fast_hadamard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "unitary", _readonly(np.asarray(self.unitary, dtype=np.complex128)))

    @property
    def n_channels(self) -> int:
        return self.unitary.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n_channels

    def forward(self, s: np.ndarray) -> np.ndarray:
        if self.fast_hadamard:
            return complex_hadamard_apply(self.n_channels, s)
        _check_len(s, self.n_channels)
        return np.asarray(s, dtype=np.complex128) @ self.unitary.T

    def inverse(self, r: np.ndarray) -> np.ndarray:
        if self.fast_hadamard:
            # H_N is real orthogonal, so its inverse is the transpose.
            return complex_hadamard_apply(self.n_channels, r, transpose=True)
        _check_len(r, self.n_channels)
        return np.asarray(r, dtype=np.complex128) @ self.unitary.conj()

    def real_matrix(self) -> np.ndarray:
        """Real-basis embedding: each complex entry becomes a 2x2 block."""
        u = self.unitary
        n = u.shape[0]
        out = np.empty((2 * n, 2 * n))
        out[0::2, 0::2] = u.real
        out[0::2, 1::2] = -u.imag
        out[1::2, 0::2] = u.imag
        out[1::2, 1::2] = u.real
        return out

    def to_real(self) -> RotationMatrix:
        return RotationMatrix(self.real_matrix(), dict(self.recipe))


def _check_len(s, n):
    if np.shape(s)[-1] != n:
        raise ValueError(f"signal has {np.shape(s)[-1]} channels, rotation expects {n}")


def hadamard_matrix(order: int) -> np.ndarray:
    """Scaled Hadamard matrix with the swapped-column 2x2 kernel."""
    if not _is_power_of_two(order):
        raise ValueError(f"Hadamard order must be a power of two, got {order}")
    h = np.ones((1, 1))
    while h.shape[0] < order:
        h = np.kron(H2_KERNEL, h)
    return h


def hadamard_rotation(order: int) -> RotationMatrix:
    return RotationMatrix(hadamard_matrix(order), {"kind": "hadamard", "order": int(order)})


def givens(dim: int, i: int, k: int, phi: float) -> RotationMatrix:
    """Planar rotation by ``phi`` in coordinates ``i`` and ``k`` (1-based, i < k)."""
    if not (1 <= i < k <= dim):
        raise ValueError(f"need 1 <= i < k <= dim, got i={i}, k={k}, dim={dim}")
    g = np.eye(dim)
    c, s = math.cos(phi), math.sin(phi)
    g[i - 1, i - 1] = c
    g[k - 1, k - 1] = c
    g[i - 1, k - 1] = -s
    g[k - 1, i - 1] = s
    return RotationMatrix(g, {"kind": "givens", "dim": dim, "i": i, "k": k, "angle": float(phi)})


@dataclass(frozen=True)
class GivensAngles4D:
    """The four free angles of a 4D rotation; the two phase-shift angles are zero."""

    phi3: float = 0.0
    phi4: float = 0.0
    phi5: float = 0.0
    phi6: float = 0.0

    def __post_init__(self):
        for name in ("phi3", "phi4", "phi5", "phi6"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))

    @classmethod
    def from_array(cls, a) -> "GivensAngles4D":
        a = np.asarray(a, dtype=float).ravel()
        if a.size != 4:
            raise ValueError("expected exactly four angles")
        return cls(*a)

    def as_array(self) -> np.ndarray:
        return np.array([self.phi3, self.phi4, self.phi5, self.phi6])


def compose_givens(phi1, phi2, phi3, phi4, phi5, phi6) -> np.ndarray:
    """Six-angle product G34(phi1) G12(phi2) G24(phi3) G23(phi4) G14(phi5) G13(phi6)."""
    m = np.eye(4)
    for (i, k), phi in zip(((3, 4), (1, 2), (2, 4), (2, 3), (1, 4), (1, 3)),
                           (phi1, phi2, phi3, phi4, phi5, phi6)):
        m = m @ givens(4, i, k, phi).entries
    return m


def compose_4d(angles: GivensAngles4D) -> RotationMatrix:
    a = GivensAngles4D.from_array(angles.as_array()) if isinstance(angles, GivensAngles4D) \
        else GivensAngles4D.from_array(angles)
    return RotationMatrix(compose_givens(0.0, 0.0, *a.as_array()),
                          {"kind": "givens4", "angles": a.as_array().tolist()})


def apply_real(rotation, s: np.ndarray) -> np.ndarray:
    """Rotate complex signals on the real-component basis.

    ``s`` has channels on its last axis; leading axes are batch axes.
    """
    m = rotation.entries if isinstance(rotation, RotationMatrix) else np.asarray(rotation, dtype=float)
    s = np.asarray(s, dtype=np.complex128)
    if m.shape != (2 * s.shape[-1],) * 2:
        raise ValueError(f"rotation of dim {m.shape[0]} cannot act on {s.shape[-1]} channels")
    return to_complex(to_real(s) @ m.T)


def complex_hadamard_apply(n: int, s: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Fast Hadamard transform ``H_n s`` along the last axis.

    Uses ``n log2 n`` additions/subtractions followed by a single scaling.
    """
    if not _is_power_of_two(n):
        raise ValueError(f"Hadamard order must be a power of two, got {n}")
    s = np.asarray(s, dtype=np.complex128)
    _check_len(s, n)
    levels = n.bit_length() - 1
    batch = s.shape[:-1]
    x = s.reshape(batch + (2,) * levels).copy()
    lead = len(batch)
    for ax in range(lead, lead + levels):
        a = np.take(x, 0, axis=ax)
        b = np.take(x, 1, axis=ax)
        # H_2 rows: (a + b, -a + b); transposed: (a - b, a + b)
        top, bottom = (a - b, a + b) if transpose else (a + b, b - a)
        x = np.stack((top, bottom), axis=ax)
    return x.reshape(s.shape) / math.sqrt(n)


def complex_hadamard(n: int) -> ComplexRotation:
    return ComplexRotation(hadamard_matrix(n), {"kind": "hadamard", "basis": "complex", "order": int(n)},
                           fast_hadamard=True)


def phase_align_identity_check(n: int, tol: float = 1e-12) -> bool:
    """Check that per-channel pi/4 phase shifts turn ``H_2n`` into ``H_n (x) I_2``."""
    if not _is_power_of_two(n):
        raise ValueError(f"N must be a power of two, got {n}")
    shifts = np.eye(2 * n)
    for i in range(1, n + 1):
        shifts = shifts @ givens(2 * n, 2 * i - 1, 2 * i, math.pi / 4).entries
    lhs = shifts @ hadamard_matrix(2 * n)
    rhs = np.kron(hadamard_matrix(n), np.eye(2))
    return bool(np.max(np.abs(lhs - rhs)) < tol)


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation matrix (determinant +1)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    z = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        if dim == 1:
            q = -q
        else:
            q[:, [0, 1]] = q[:, [1, 0]]
    return q


def random_rotation(dim: int, rng: np.random.Generator | int) -> RotationMatrix:
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng) if seed is not None else rng
    recipe = {"kind": "random", "dim": int(dim)}
    if seed is not None:
        recipe["seed"] = int(seed)
    return RotationMatrix(random_orthogonal(dim, gen), recipe)


def dft_rotation(n: int) -> np.ndarray:
    """Unitary DFT matrix ``F[k, l] = exp(-2j pi k l / n) / sqrt(n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def ser_rotation_4d() -> RotationMatrix:
    m = np.array([[1, 1, 0, 0],
                  [0, 0, 1, 1],
                  [1, -1, 0, 0],
                  [0, 0, -1, 1]], dtype=float) / math.sqrt(2.0)
    return RotationMatrix(m, {"kind": "ser4"})


def identity_rotation(n_channels: int) -> RotationMatrix:
    return RotationMatrix(np.eye(2 * n_channels), {"kind": "identity"})


# --- recipes -----------------------------------------------------------------

RECIPE_KINDS = ("identity", "hadamard", "givens4", "dft", "random", "ser4", "explicit", "hadamard-limit")


@dataclass(frozen=True)
class RotationRecipe:
    """Serializable description of a rotation, independent of the channel count.

    ``hadamard-limit`` is not a matrix: it selects the large-N Hadamard surrogate
    channel and can only be simulated, not built.
    """

    kind: str
    basis: str = "real"
    angles: tuple | None = None
    seed: int | None = None
    entries: tuple | None = None

    def __post_init__(self):
        if self.kind not in RECIPE_KINDS:
            raise ValueError(f"unknown rotation kind {self.kind!r}")
        if self.basis not in ("real", "complex"):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.kind == "givens4":
            if self.angles is None or len(self.angles) != 4:
                raise ValueError("givens4 needs exactly four angles")
            object.__setattr__(self, "angles", tuple(float(a) for a in wrap_angle(self.angles)))
        if self.kind == "random" and self.seed is None:
            raise ValueError("random rotation needs a seed")
        if self.kind == "explicit":
            if self.entries is None:
                raise ValueError("explicit rotation needs entries")
            object.__setattr__(self, "entries", tuple(tuple(float(v) for v in row) for row in self.entries))

    @property
    def label(self) -> str:
        """Short identifier used in CSV output."""
        if self.kind == "givens4":
            return "givens4(" + ";".join(f"{a:.6f}" for a in self.angles) + ")"
        if self.kind == "random":
            return f"random({self.seed};complex)" if self.basis == "complex" else f"random({self.seed})"
        if self.kind == "hadamard" and self.basis == "complex":
            return "hadamard(complex)"
        return self.kind

    def to_descriptor(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind in ("hadamard", "random"):
            d["basis"] = self.basis
        if self.angles is not None:
            d["angles"] = list(self.angles)
        if self.seed is not None:
            d["seed"] = self.seed
        if self.entries is not None:
            d["entries"] = [list(r) for r in self.entries]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_descriptor(), sort_keys=True)

    @classmethod
    def from_descriptor(cls, d: dict) -> "RotationRecipe":
        unknown = set(d) - {"kind", "basis", "angles", "seed", "entries", "order"}
        if unknown:
            raise ValueError(f"unknown rotation descriptor keys {sorted(unknown)}")
        basis = d.get("basis", "complex" if d.get("kind") == "dft" else "real")
        return cls(kind=d["kind"], basis=basis,
                   angles=tuple(d["angles"]) if "angles" in d else None,
                   seed=int(d["seed"]) if "seed" in d else None,
                   entries=tuple(tuple(r) for r in d["entries"]) if "entries" in d else None)

    @classmethod
    def from_json(cls, text: str) -> "RotationRecipe":
        return cls.from_descriptor(json.loads(text))

    def build(self, n_channels: int):
        """Instantiate for ``n_channels`` complex channels."""
        n = int(n_channels)
        if self.kind == "identity":
            return identity_rotation(n)
        if self.kind == "hadamard":
            if self.basis == "complex":
                return complex_hadamard(n)
            return hadamard_rotation(2 * n)
        if self.kind in ("givens4", "ser4"):
            if n != 2:
                raise ValueError(f"{self.kind} is defined for two channels only, got {n}")
            return compose_4d(GivensAngles4D(*self.angles)) if self.kind == "givens4" else ser_rotation_4d()
        if self.kind == "dft":
            return ComplexRotation(dft_rotation(n), {"kind": "dft"})
        if self.kind == "random":
            rng = np.random.default_rng(self.seed)
            if self.basis == "complex":
                return ComplexRotation(random_orthogonal(n, rng),
                                       {"kind": "random", "basis": "complex", "seed": self.seed})
            return RotationMatrix(random_orthogonal(2 * n, rng), {"kind": "random", "seed": self.seed})
        if self.kind == "explicit":
            m = np.array(self.entries)
            if m.shape != (2 * n, 2 * n):
                raise ValueError(f"explicit matrix is {m.shape}, need {(2 * n, 2 * n)}")
            rot = RotationMatrix(m, {"kind": "explicit"})
            if not rot.check(ortho_tol=1e-9):
                raise ValueError("explicit matrix is not a rotation")
            return rot
        raise ValueError("hadamard-limit has no finite matrix; simulate it with the asymptotic channel")
