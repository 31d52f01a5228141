"""Symbol detectors and soft demapping.

Three detectors are provided:

* :func:`joint_map_detect` -- approximate MAP over all ``|X|^N`` candidate
  blocks using the closed-form phase-marginalized metric
  ``sum_i |eta_i| - |s~_i|^2 / N0 - 0.5 ln |eta_i|`` with
  ``eta_i = 2 r_i conj(s~_i) / N0 + 1 / sigma2_p``.
* :func:`exact_posterior_oracle` -- the same decision with the phase integral
  evaluated by adaptive quadrature; used as ground truth in tests.
* :func:`per_channel_detect` -- derotate, then slice each channel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.special import logsumexp

from .constellation import Constellation

LLR_CLAMP = 50.0
DEFAULT_CAP = 2 ** 24


class QuadratureWarning(RuntimeWarning):
    pass


# --- per-channel ---------------------------------------------------------------

def slice_axis(y: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Nearest level on one axis; returns the Gray code of the chosen level.

    Ties go to the smaller code, which makes the 2D decision the lowest index.
    """
    levels = constellation.levels
    codes = constellation.axis_codes
    side = levels.size
    pos = ((side - 1) - y / constellation.scale) / 2.0
    lo = np.clip(np.floor(pos), 0, side - 2).astype(np.int64)
    hi = lo + 1
    d_lo = np.abs(y - levels[lo])
    d_hi = np.abs(y - levels[hi])
    take_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (codes[hi] < codes[lo]))
    return np.where(take_hi, codes[hi], codes[lo])


def slice_symbols(r_tilde: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Minimum-distance decisions on already-derotated samples."""
    k = constellation.bits_per_symbol // 2
    r_tilde = np.asarray(r_tilde)
    return (slice_axis(r_tilde.real, constellation) << k) | slice_axis(r_tilde.imag, constellation)


def per_channel_detect(r: np.ndarray, rotation, constellation: Constellation) -> np.ndarray:
    """Derotate with the transposed rotation and slice every channel independently."""
    return slice_symbols(rotation.inverse(r), constellation)


def _axis_llrs(y, constellation, n0_eff, alpha):
    levels = constellation.levels
    codes = constellation.axis_codes
    k = constellation.bits_per_symbol // 2
    metric = -((y[..., None] - alpha * levels) ** 2) / n0_eff
    out = np.empty(y.shape + (k,))
    for b in range(k):
        one = ((codes >> (k - 1 - b)) & 1).astype(bool)
        out[..., b] = logsumexp(metric[..., one], axis=-1) - logsumexp(metric[..., ~one], axis=-1)
    return out


def soft_demap(r_tilde: np.ndarray, constellation: Constellation, n0_eff: float, alpha: float = 1.0) -> np.ndarray:
    """Per-bit LLRs ``ln P(b=1) / P(b=0)`` under a Gaussian auxiliary channel ``alpha x + n``.

    The Gaussian metric factorizes over the I and Q axes and so do Gray-labelled
    square QAM bits, so each axis is demapped against its own levels.
    Output shape is ``r_tilde.shape + (m,)``, clamped to +/- ``LLR_CLAMP``.
    """
    if not n0_eff > 0:
        raise ValueError("n0_eff must be positive")
    r_tilde = np.asarray(r_tilde)
    llr = np.concatenate([_axis_llrs(r_tilde.real, constellation, n0_eff, alpha),
                          _axis_llrs(r_tilde.imag, constellation, n0_eff, alpha)], axis=-1)
    return np.clip(llr, -LLR_CLAMP, LLR_CLAMP)


def per_channel_soft(r: np.ndarray, rotation, constellation: Constellation, n0_eff: float,
                     alpha: float = 1.0) -> np.ndarray:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return soft_demap(rotation.inverse(r), constellation, n0_eff, alpha)


# --- joint ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JointDetectorConfig:
    constellation: Constellation
    rotation: object
    n0: float
    sigma2_p: float
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        n = self.rotation.dim // 2
        if self.constellation.order ** n > self.cap:
            raise ValueError(
                f"joint detection needs {self.constellation.order}^{n} candidates, above the cap of {self.cap}")
        if not self.sigma2_p > 0:
            raise ValueError("joint detection needs sigma2_p > 0; use the per-channel detector without phase noise")

    @property
    def n_channels(self) -> int:
        return self.rotation.dim // 2

    def contributions(self) -> np.ndarray:
        """``C[i, j, x]``: part of transmitted sample ``i`` due to symbol ``x`` on channel ``j``."""
        rm = np.asarray(self.rotation.real_matrix())
        pts = self.constellation.points
        n = self.n_channels
        c = np.empty((n, n, pts.size), dtype=np.complex128)
        for i in range(n):
            for j in range(n):
                blk = rm[2 * i:2 * i + 2, 2 * j:2 * j + 2]
                c[i, j] = (blk[0, 0] * pts.real + blk[0, 1] * pts.imag) \
                    + 1j * (blk[1, 0] * pts.real + blk[1, 1] * pts.imag)
        return c


@nb.njit(cache=True)
def _joint_kernel(r, contrib, n0, inv_s2, out):
    n_blocks, n = r.shape
    m = contrib.shape[2]
    w = np.empty((n, n, m), dtype=np.complex128)
    digits = np.zeros(n, dtype=np.int64)
    eta_part = np.empty((n + 1, n), dtype=np.complex128)
    tx_part = np.empty((n + 1, n), dtype=np.complex128)
    q = np.empty(n)
    total = m ** n
    for b in range(n_blocks):
        for i in range(n):
            scale = 2.0 * r[b, i] / n0
            for j in range(n):
                for x in range(m):
                    w[i, j, x] = scale * np.conj(contrib[i, j, x])
        for i in range(n):
            eta_part[0, i] = inv_s2
            tx_part[0, i] = 0.0
        digits[:] = 0
        changed = 0
        best = -np.inf
        arg = 0
        for cand in range(total):
            for lvl in range(changed, n):
                d = digits[lvl]
                for i in range(n):
                    eta_part[lvl + 1, i] = eta_part[lvl, i] + w[i, lvl, d]
                    tx_part[lvl + 1, i] = tx_part[lvl, i] + contrib[i, lvl, d]
            upper = 0.0
            qprod = 1.0
            for i in range(n):
                e = eta_part[n, i]
                t = tx_part[n, i]
                qi = e.real * e.real + e.imag * e.imag
                q[i] = qi
                qprod *= qi
                upper += math.sqrt(qi) - (t.real * t.real + t.imag * t.imag) / n0
            # -0.5 ln|eta| summed is <= 0 whenever prod |eta|^2 >= 1.
            if not (qprod >= 1.0 and upper <= best):
                metric = upper
                for i in range(n):
                    metric -= 0.25 * math.log(q[i])
                if metric > best:
                    best = metric
                    arg = cand
            lvl = n - 1
            while lvl >= 0:
                digits[lvl] += 1
                if digits[lvl] < m:
                    break
                digits[lvl] = 0
                lvl -= 1
            changed = max(lvl, 0)
        for lvl in range(n - 1, -1, -1):
            out[b, lvl] = arg % m
            arg //= m


@nb.njit(cache=True)
def _joint_kernel2(r, contrib, energy, n0, inv_s2, out):
    # Two-channel specialization; energy[x1, x2] = sum_i |s~_i|^2 / n0.
    m = contrib.shape[2]
    w = np.empty((2, 2, m), dtype=np.complex128)
    for blk in range(r.shape[0]):
        for i in range(2):
            scale = 2.0 * r[blk, i] / n0
            for j in range(2):
                for x in range(m):
                    w[i, j, x] = scale * np.conj(contrib[i, j, x])
        best = -np.inf
        arg1 = 0
        arg2 = 0
        for x1 in range(m):
            e1 = inv_s2 + w[0, 0, x1]
            e2 = inv_s2 + w[1, 0, x1]
            for x2 in range(m):
                a = e1 + w[0, 1, x2]
                b = e2 + w[1, 1, x2]
                q1 = a.real * a.real + a.imag * a.imag
                q2 = b.real * b.real + b.imag * b.imag
                upper = math.sqrt(q1) + math.sqrt(q2) - energy[x1, x2]
                if q1 * q2 >= 1.0 and upper <= best:
                    continue
                metric = upper - 0.25 * math.log(q1 * q2)
                if metric > best:
                    best = metric
                    arg1 = x1
                    arg2 = x2
        out[blk, 0] = arg1
        out[blk, 1] = arg2


def joint_map_detect(r: np.ndarray, cfg: JointDetectorConfig) -> np.ndarray:
    """Approximate MAP block decisions, shape ``(B, N)`` of symbol indices.

    Candidates are visited in odometer order (channel 1 most significant);
    only a strictly larger metric replaces the incumbent, so ties resolve to
    the lowest index.
    """
    r = np.ascontiguousarray(np.atleast_2d(r), dtype=np.complex128)
    if r.shape[1] != cfg.n_channels:
        raise ValueError(f"received blocks have {r.shape[1]} channels, detector expects {cfg.n_channels}")
    out = np.empty(r.shape, dtype=np.int64)
    contrib = cfg.contributions()
    if cfg.n_channels == 2:
        tx = contrib[:, 0, :, None] + contrib[:, 1, None, :]
        energy = np.ascontiguousarray(np.sum(np.abs(tx) ** 2, axis=0) / cfg.n0)
        _joint_kernel2(r, contrib, energy, float(cfg.n0), 1.0 / cfg.sigma2_p, out)
    else:
        _joint_kernel(r, contrib, float(cfg.n0), 1.0 / cfg.sigma2_p, out)
    return out


def candidate_indices(order: int, n: int) -> np.ndarray:
    """All index blocks in odometer order, shape ``(order**n, n)``."""
    grids = np.meshgrid(*([np.arange(order)] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def joint_metric(r: np.ndarray, cfg: JointDetectorConfig) -> np.ndarray:
    """Dense metric table ``(B, |X|^N)``; reference for small configurations."""
    r = np.atleast_2d(np.asarray(r, dtype=np.complex128))
    cands = cfg.constellation.points[candidate_indices(cfg.constellation.order, cfg.n_channels)]
    tx = cfg.rotation.forward(cands)
    eta = 2.0 * r[:, None, :] * np.conj(tx)[None] / cfg.n0 + 1.0 / cfg.sigma2_p
    a = np.abs(eta)
    return np.sum(a - np.abs(tx)[None] ** 2 / cfg.n0 - 0.5 * np.log(a), axis=-1)


# --- exact posterior by quadrature --------------------------------------------

@nb.njit(cache=True)
def _log_integrand(theta, a, b, psi, s2):
    # |r - t e^{j theta}|^2 / n0 = a - b cos(theta - psi)
    return b * math.cos(theta - psi) - a - theta * theta / (2.0 * s2)


@nb.njit(cache=True)
def _phase_integral(r, t, n0, s2, rtol, max_depth, panels):
    """log of int exp(-|r - t e^{j th}|^2 / n0) N(th; 0, s2) dth over +/- 8 sigma.

    Returns (log value, estimated relative error, converged flag).
    """
    a = (r.real * r.real + r.imag * r.imag + t.real * t.real + t.imag * t.imag) / n0
    rt = r * np.conj(t)
    b = 2.0 * abs(rt) / n0
    psi = math.atan2(rt.imag, rt.real)
    sig = math.sqrt(s2)
    lo = -8.0 * sig
    hi = 8.0 * sig
    # max-shift from a coarse grid keeps exp() in range
    shift = -np.inf
    for g in range(4 * panels + 1):
        th = lo + (hi - lo) * g / (4 * panels)
        v = _log_integrand(th, a, b, psi, s2)
        if v > shift:
            shift = v
    width = (hi - lo) / panels
    coarse = 0.0
    fa_s = np.empty(panels + 1)
    for p in range(panels + 1):
        fa_s[p] = math.exp(_log_integrand(lo + p * width, a, b, psi, s2) - shift)
    fm_s = np.empty(panels)
    for p in range(panels):
        fm_s[p] = math.exp(_log_integrand(lo + (p + 0.5) * width, a, b, psi, s2) - shift)
        coarse += width / 6.0 * (fa_s[p] + 4.0 * fm_s[p] + fa_s[p + 1])
    eps_total = rtol * abs(coarse)
    # explicit stack: a, b, fa, fm, fb, whole, eps, depth
    stack = np.empty((max_depth * 2 + panels + 4, 8))
    top = 0
    for p in range(panels):
        x0 = lo + p * width
        stack[top, 0] = x0
        stack[top, 1] = x0 + width
        stack[top, 2] = fa_s[p]
        stack[top, 3] = fm_s[p]
        stack[top, 4] = fa_s[p + 1]
        stack[top, 5] = width / 6.0 * (fa_s[p] + 4.0 * fm_s[p] + fa_s[p + 1])
        stack[top, 6] = eps_total / panels
        stack[top, 7] = 0
        top += 1
    total = 0.0
    err = 0.0
    converged = True
    while top > 0:
        top -= 1
        x0, x1, fa, fm, fb, whole, eps, depth = stack[top]
        m = 0.5 * (x0 + x1)
        lm = 0.5 * (x0 + m)
        rm = 0.5 * (m + x1)
        flm = math.exp(_log_integrand(lm, a, b, psi, s2) - shift)
        frm = math.exp(_log_integrand(rm, a, b, psi, s2) - shift)
        left = (m - x0) / 6.0 * (fa + 4.0 * flm + fm)
        right = (x1 - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps or depth >= max_depth:
            if abs(delta) > 15.0 * eps:
                converged = False
            total += left + right + delta / 15.0
            err += abs(delta) / 15.0
        else:
            stack[top, 0] = x0
            stack[top, 1] = m
            stack[top, 2] = fa
            stack[top, 3] = flm
            stack[top, 4] = fm
            stack[top, 5] = left
            stack[top, 6] = 0.5 * eps
            stack[top, 7] = depth + 1
            top += 1
            stack[top, 0] = m
            stack[top, 1] = x1
            stack[top, 2] = fm
            stack[top, 3] = frm
            stack[top, 4] = fb
            stack[top, 5] = right
            stack[top, 6] = 0.5 * eps
            stack[top, 7] = depth + 1
            top += 1
    rel = err / total if total > 0 else np.inf
    log_norm = -0.5 * math.log(2.0 * math.pi * s2)
    return math.log(total) + shift + log_norm, rel, converged


@nb.njit(cache=True)
def _posterior_kernel(r, tx, n0, s2, rtol, max_depth, panels, logp, rel_err, ok):
    n_blocks, n = r.shape
    n_cand = tx.shape[0]
    for b in range(n_blocks):
        for c in range(n_cand):
            acc = 0.0
            for i in range(n):
                v, e, conv = _phase_integral(r[b, i], tx[c, i], n0, s2, rtol, max_depth, panels)
                acc += v - math.log(math.pi * n0)
                if e > rel_err[b]:
                    rel_err[b] = e
                if not conv:
                    ok[b] = False
            logp[b, c] = acc


@dataclass
class PosteriorResult:
    log_pmf: np.ndarray
    decisions: np.ndarray
    max_rel_error: float
    converged: bool


def exact_posterior(r: np.ndarray, cfg: JointDetectorConfig, rtol: float = 1e-9,
                    max_depth: int = 40, panels: int = 16) -> PosteriorResult:
    """Block posterior with each channel's phase integrated out numerically.

    No Tikhonov or Bessel approximation is involved; the Gaussian phase prior
    is integrated over +/- 8 standard deviations.
    """
    r = np.ascontiguousarray(np.atleast_2d(r), dtype=np.complex128)
    cands = candidate_indices(cfg.constellation.order, cfg.n_channels)
    tx = np.ascontiguousarray(cfg.rotation.forward(cfg.constellation.points[cands]))
    logp = np.empty((r.shape[0], tx.shape[0]))
    rel = np.zeros(r.shape[0])
    ok = np.ones(r.shape[0], dtype=np.bool_)
    _posterior_kernel(r, tx, float(cfg.n0), float(cfg.sigma2_p), rtol, max_depth, panels, logp, rel, ok)
    log_pmf = logp - logsumexp(logp, axis=1, keepdims=True)
    converged = bool(ok.all())
    if not converged:
        warnings.warn(f"phase quadrature did not reach rtol={rtol:g}; worst relative error {rel.max():.3g}",
                      QuadratureWarning, stacklevel=2)
    return PosteriorResult(log_pmf, cands[np.argmax(logp, axis=1)], float(rel.max()), converged)


def exact_posterior_oracle(r: np.ndarray, cfg: JointDetectorConfig, **kwargs) -> np.ndarray:
    return exact_posterior(r, cfg, **kwargs).decisions
