"""Quick internal consistency checks; each one reports observed vs expected."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import rotations
from .channel import ChannelParams, derotation_statistics, draw_symbols, transmit
from .constellation import Constellation
from .montecarlo import PlanPoint, run_point
from .optimizer import fit_angles
from .receivers import JointDetectorConfig, exact_posterior_oracle, joint_map_detect, joint_metric
from .rotations import RotationRecipe


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: str
    expected: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: observed {self.observed}; expected {self.expected} ({self.seconds:.1f}s)"


def _hadamard_closed_form(n: int) -> np.ndarray:
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    bits = np.vectorize(lambda v: bin(v).count("1"))(i & ~j & (n - 1))
    return (-1.0) ** bits / math.sqrt(n)


def check_hadamard_recursion():
    worst = 0.0
    for l in range(1, 7):
        n = 2 ** l
        worst = max(worst, float(np.max(np.abs(rotations.hadamard_matrix(n) - _hadamard_closed_form(n)))))
    return worst < 1e-12, f"max entry error {worst:.2e}", "< 1e-12 against the +-1/sqrt(n) sign pattern"


def check_phase_align_identity():
    worst = 0.0
    for n in (2, 4, 8, 16):
        shifts = np.eye(2 * n)
        for i in range(1, n + 1):
            shifts = shifts @ rotations.givens(2 * n, 2 * i - 1, 2 * i, math.pi / 4).entries
        lhs = shifts @ rotations.hadamard_matrix(2 * n)
        worst = max(worst, float(np.max(np.abs(lhs - np.kron(rotations.hadamard_matrix(n), np.eye(2))))))
    return worst < 1e-12, f"max deviation {worst:.2e}", "< 1e-12 for N in 2, 4, 8, 16"


def check_fast_hadamard():
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in (1, 2, 8, 64):
        s = rng.standard_normal((5, n)) + 1j * rng.standard_normal((5, n))
        dense = s @ rotations.hadamard_matrix(n).T
        worst = max(worst, float(np.max(np.abs(rotations.complex_hadamard_apply(n, s) - dense))))
    return worst < 1e-12, f"max deviation {worst:.2e}", "< 1e-12 against dense product"


def check_ser_rotation():
    m = rotations.ser_rotation_4d()
    printed = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, -1, 0, 0], [0, 0, -1, 1]]) / math.sqrt(2)
    err = float(np.max(np.abs(m.entries - printed)))
    ok = err < 1e-15 and m.check()
    return ok, f"entry error {err:.1e}, rotation={m.check()}", "printed matrix, orthogonal, det +1"


def check_givens_fit():
    _, _, err = fit_angles(rotations.hadamard_matrix(4), include_phase=True, restarts=32, seed=0)
    return err < 1e-9, f"residual {err:.1e}", "< 1e-9 fitting H4 with phase-shift angles free"


def check_gray_labels():
    bad = 0
    for order in (4, 16, 64, 256):
        c = Constellation(order)
        d = np.abs(c.points[:, None] - c.points[None, :])
        near = np.isclose(d, 2 * c.scale)
        hamming = (c.labels[:, None, :] != c.labels[None, :, :]).sum(-1)
        bad += int(np.sum(near & (hamming != 1)))
    return bad == 0, f"{bad} nearest-neighbour pairs with Hamming distance != 1", "0"


def _joint_setup(order, sigma2, snr, n_blocks, seed, recipe="hadamard"):
    const = Constellation(order)
    params = ChannelParams.from_snr_db(2, snr, sigma2)
    rot = RotationRecipe(recipe).build(2)
    rng = np.random.default_rng(seed)
    idx = draw_symbols(rng, n_blocks, 2, order)
    batch = transmit(const.points[idx], rot, params, rng, indices=idx)
    return batch, JointDetectorConfig(const, rot, params.n0, sigma2)


def check_joint_vs_dense():
    batch, cfg = _joint_setup(16, 3e-2, 15.0, 300, 5)
    fast = joint_map_detect(batch.received, cfg)
    from .receivers import candidate_indices
    dense = candidate_indices(16, 2)[np.argmax(joint_metric(batch.received, cfg), axis=1)]
    agree = float(np.mean(np.all(fast == dense, axis=1)))
    return agree == 1.0, f"agreement {agree:.4f}", "1.0 against exhaustive metric argmax"


def check_joint_vs_oracle():
    batch, cfg = _joint_setup(4, 1e-2, 15.0, 2000, 7)
    agree = float(np.mean(np.all(joint_map_detect(batch.received, cfg)
                                 == exact_posterior_oracle(batch.received, cfg), axis=1)))
    return agree >= 0.995, f"agreement {agree:.4f}", ">= 0.995 against numerical phase integration"


def check_awgn_qpsk_ber():
    snr = 6.8 + 10 * math.log10(2)
    rep = run_point(PlanPoint(2, 4, snr, 0.0, RotationRecipe("identity")), 200_000, master_seed=11)
    q = 0.5 * math.erfc(math.sqrt(10 ** (snr / 10)) / math.sqrt(2))
    z = (rep.ber - q) / math.sqrt(q * (1 - q) / rep.n_bits)
    return abs(z) < 3, f"BER {rep.ber:.5f} ({z:+.2f} se)", f"{q:.5f} within 3 se"


def check_asymptotic_attenuation():
    n, s2 = 64, 1e-2
    const = Constellation(64)
    params = ChannelParams.from_snr_db(n, 22.5, s2)
    rot = RotationRecipe("hadamard", basis="complex").build(n)
    rng = np.random.default_rng(13)
    idx = draw_symbols(rng, 100_000 // n, n, 64)
    s = const.points[idx]
    batch = transmit(s, rot, params, rng, indices=idx)
    st = derotation_statistics(s, rot.inverse(batch.received))
    a_err = abs(st.alpha.real / params.alpha - 1)
    v_err = abs(st.noise_variance / params.asymptotic_noise_variance - 1)
    ok = a_err < 0.02 and v_err < 0.04 and abs(st.pseudo_variance) < 3 * st.pseudo_variance_se
    return ok, (f"alpha err {a_err:.2%}, variance err {v_err:.2%}, "
                f"|pseudo-variance| {abs(st.pseudo_variance) / st.pseudo_variance_se:.2f} se"), \
        "alpha within 2%, variance within 4%, pseudo-variance within 3 se"


def check_determinism():
    pt = PlanPoint(2, 16, 15.0, 1e-2, RotationRecipe("hadamard"))
    a = run_point(pt, 40_000, master_seed=5, shard_symbols=8192)
    b = run_point(pt, 40_000, master_seed=5, shard_symbols=8192, workers=2)
    return a == b, "serial == parallel" if a == b else "reports differ", "identical reports"


CHECKS = {
    "hadamard-recursion": check_hadamard_recursion,
    "phase-align-identity": check_phase_align_identity,
    "fast-hadamard": check_fast_hadamard,
    "ser-rotation": check_ser_rotation,
    "givens-fit": check_givens_fit,
    "gray-labels": check_gray_labels,
    "joint-vs-dense": check_joint_vs_dense,
    "joint-vs-oracle": check_joint_vs_oracle,
    "awgn-qpsk-ber": check_awgn_qpsk_ber,
    "asymptotic-attenuation": check_asymptotic_attenuation,
    "determinism": check_determinism,
}


def run_checks(names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        t = time.perf_counter()
        try:
            ok, obs, exp = CHECKS[name]()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, obs, exp = False, f"{type(exc).__name__}: {exc}", "no exception"
        out.append(CheckResult(name, bool(ok), obs, exp, time.perf_counter() - t))
    return out
