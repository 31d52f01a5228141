"""Black-box search over the four free Givens angles of a 4D rotation.

The default method is a radial-basis-function surrogate search: a Latin
hypercube initial design, a cubic RBF with linear tail fitted to the
evaluated means, and new points chosen by minimizing the bumpiness of the
interpolant that would pass through a target value below the current
surrogate minimum. Targets cycle from global (far below) to local (at the
minimum). A restarted Nelder-Mead search is available for cross-checking.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from .metrics import MetricsReport
from .montecarlo import PAPER_MIN_SYMBOLS, PlanPoint, run_point
from .rotations import GivensAngles4D, RotationRecipe, compose_givens, wrap_angle
from .streams import substream

log = logging.getLogger(__name__)

OBJECTIVES = ("bler", "ber", "ser", "neg-air")
LOWER = -math.pi
UPPER = math.pi
# keep proposals strictly inside [-pi, pi)
_UPPER_INSIDE = math.nextafter(math.pi, 0.0)


class NoisyObjectiveWarning(UserWarning):
    pass


@dataclass
class OptimizerConfig:
    objective: str = "ber"
    receiver: str = "per-channel"
    budget: int = 150
    n_initial: int = 24
    symbols_per_eval: int = PAPER_MIN_SYMBOLS
    fidelity: str = "paper"
    kernel: str = "cubic"
    method: str = "rbf"
    seed: int = 1
    common_random_numbers: bool = True
    n_candidates: int = 4000
    workers: int = 1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.objective == "neg-air" and self.receiver == "joint":
            raise ValueError("the joint receiver produces hard decisions only; AIR is undefined")
        if self.kernel not in ("cubic", "thin-plate", "linear"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.method not in ("rbf", "nelder-mead"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_initial < 6:
            raise ValueError("initial design needs at least 6 points for a linear-tail fit in 4D")
        if self.budget < self.n_initial:
            raise ValueError("budget must cover the initial design")
        if self.fidelity == "paper" and self.symbols_per_eval < PAPER_MIN_SYMBOLS:
            raise ValueError(f"paper fidelity needs at least {PAPER_MIN_SYMBOLS} symbols per evaluation")


def objective_value(report: MetricsReport, objective: str) -> tuple[float, float]:
    if objective == "neg-air":
        return -report.air, report.air_se
    return getattr(report, objective), getattr(report, objective + "_se")


# --- surrogate -----------------------------------------------------------------

def _phi(r, kernel):
    if kernel == "cubic":
        return r ** 3
    if kernel == "thin-plate":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, r ** 2 * np.log(r), 0.0)
    return r


class RBFSurrogate:
    """RBF interpolant with a linear polynomial tail."""

    def __init__(self, x, f, kernel: str = "cubic", smoothing: float = 0.0):
        self.x = np.asarray(x, dtype=float)
        self.f = np.asarray(f, dtype=float)
        self.kernel = kernel
        n, d = self.x.shape
        phi = _phi(cdist(self.x, self.x), kernel) + smoothing * np.eye(n)
        p = np.hstack([np.ones((n, 1)), self.x])
        a = np.zeros((n + d + 1, n + d + 1))
        a[:n, :n] = phi
        a[:n, n:] = p
        a[n:, :n] = p.T
        self._a = a
        rhs = np.concatenate([self.f, np.zeros(d + 1)])
        sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        self.weights = sol[:n]
        self.tail = sol[n:]
        self._a_pinv = np.linalg.pinv(a)

    def _basis(self, y):
        y = np.atleast_2d(y)
        u = np.hstack([_phi(cdist(y, self.x), self.kernel), np.ones((y.shape[0], 1)), y])
        return y, u

    def __call__(self, y) -> np.ndarray:
        y, u = self._basis(y)
        return u[:, :self.x.shape[0]] @ self.weights + self.tail[0] + y @ self.tail[1:]

    def bumpiness(self, y, target: float) -> np.ndarray:
        """Growth in bumpiness if the interpolant were forced through ``target`` at ``y``.

        Equals ``|mu(y)| (s(y) - target)^2`` with ``mu(y) = 1 / (phi(0) - u^T A^-1 u)``.
        """
        y, u = self._basis(y)
        s = u[:, :self.x.shape[0]] @ self.weights + self.tail[0] + y @ self.tail[1:]
        quad = np.einsum("ij,jk,ik->i", u, self._a_pinv, u)
        denom = np.abs(_phi(np.zeros(1), self.kernel)[0] - quad)
        with np.errstate(divide="ignore"):
            return np.where(denom > 1e-300, (s - target) ** 2 / denom, np.inf)


def latin_hypercube(n: int, rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    unit = qmc.LatinHypercube(d=dim, seed=rng).random(n)
    return project(LOWER + unit * (UPPER - LOWER))


def project(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=float), LOWER, _UPPER_INSIDE)


# Gutmann-style cycle: weight of (max f - min s) subtracted from the surrogate minimum.
TARGET_CYCLE = (1.0, 0.3, 0.1, 0.03, 0.01, 0.0)


# --- results -------------------------------------------------------------------

@dataclass
class TraceRow:
    evaluation: int
    angles: tuple
    objective: float
    stderr: float
    incumbent: bool
    phase: str

    def as_dict(self) -> dict:
        d = {"evaluation": self.evaluation}
        d.update({f"phi{k + 3}": a for k, a in enumerate(self.angles)})
        d.update(objective=self.objective, stderr=self.stderr, incumbent=int(self.incumbent), phase=self.phase)
        return d


@dataclass
class OptimizationResult:
    angles: GivensAngles4D
    report: MetricsReport
    trace: list = field(default_factory=list)
    budget_exhausted: bool = True
    warnings: list = field(default_factory=list)

    @property
    def recipe(self) -> RotationRecipe:
        return RotationRecipe("givens4", angles=tuple(self.angles.as_array()))

    @property
    def objective(self) -> float:
        best = [r for r in self.trace if r.incumbent]
        return best[-1].objective


class _Evaluator:
    """Wraps an objective ``fun(angles, eval_index) -> (value, stderr, payload)`` and records the trace."""

    def __init__(self, cfg: OptimizerConfig, fun):
        self.cfg = cfg
        self.fun = fun
        self.trace: list[TraceRow] = []
        self.payloads: list = []
        self.best = math.inf

    @property
    def used(self) -> int:
        return len(self.trace)

    def __call__(self, x, phase: str) -> float:
        x = project(wrap_angle(x))
        val, se, payload = self.fun(x, self.used)
        better = val < self.best
        if better:
            self.best = val
        self.trace.append(TraceRow(self.used, tuple(float(a) for a in x), float(val), float(se), better, phase))
        self.payloads.append(payload)
        return val

    def best_index(self) -> int:
        return int(np.argmin([r.objective for r in self.trace]))

    def noise_warning(self) -> list:
        vals = np.array([r.objective for r in self.trace])
        ses = np.array([r.stderr for r in self.trace])
        spread = np.median(vals) - vals.min()
        if np.isfinite(ses).all() and np.median(ses) >= spread:
            msg = (f"objective noise (median stderr {np.median(ses):.3g}) is comparable to the observed "
                   f"improvement ({spread:.3g}); raise symbols_per_eval")
            warnings.warn(msg, NoisyObjectiveWarning, stacklevel=4)
            return [msg]
        return []


def search_angles(fun, cfg: OptimizerConfig):
    """Minimize ``fun(angles, eval_index) -> (value, stderr, payload)`` over ``[-pi, pi)^4``.

    Returns ``(trace, best_index, payloads, warnings)``.
    """
    ev = _Evaluator(cfg, fun)
    if cfg.method == "rbf":
        _rbf_search(cfg, ev)
    else:
        _nelder_mead_search(cfg, ev)
    return ev.trace, ev.best_index(), ev.payloads, ev.noise_warning()


def _rbf_search(cfg: OptimizerConfig, ev: _Evaluator) -> None:
    design = latin_hypercube(cfg.n_initial, substream(cfg.seed, 0, 0, "design"))
    x = []
    for p in design:
        ev(p, "design")
        x.append(project(wrap_angle(p)))
    rng = substream(cfg.seed, 0, 0, "search")
    step = 0
    width = UPPER - LOWER
    min_dist = 1e-3 * width
    while ev.used < cfg.budget:
        xs = np.array(x)
        fs = np.array([r.objective for r in ev.trace])
        sur = RBFSurrogate(xs, fs, cfg.kernel)
        weight = TARGET_CYCLE[step % len(TARGET_CYCLE)]
        best = xs[np.argmin(fs)]
        radius = 0.2 * width * (weight + 0.05)
        cands = np.vstack([
            LOWER + rng.random((cfg.n_candidates // 2, 4)) * width,
            project(best + radius * rng.standard_normal((cfg.n_candidates - cfg.n_candidates // 2, 4))),
        ])
        cands = cands[cdist(cands, xs).min(axis=1) > min_dist]
        s = sur(cands)
        s_min = float(s.min())
        if weight == 0.0:
            score = s
            start = cands[np.argmin(s)]
            res = minimize(lambda y: float(sur(y)[0]), start, method="L-BFGS-B",
                           bounds=[(LOWER, _UPPER_INSIDE)] * 4)
        else:
            target = s_min - weight * (fs.max() - s_min)
            score = sur.bumpiness(cands, target)
            start = cands[np.argmin(score)]
            res = minimize(lambda y: float(sur.bumpiness(y, target)[0]), start, method="L-BFGS-B",
                           bounds=[(LOWER, _UPPER_INSIDE)] * 4)
        new = project(res.x)
        if cdist(new[None], xs).min() <= min_dist:
            new = start
        ev(new, f"rbf-w{weight:g}")
        x.append(new)
        step += 1


class _BudgetExhausted(Exception):
    pass


def _nelder_mead_search(cfg: OptimizerConfig, ev: _Evaluator) -> None:
    starts = latin_hypercube(max(1, cfg.budget // 40), substream(cfg.seed, 0, 0, "design"))

    def fun(y):
        if ev.used >= cfg.budget:
            raise _BudgetExhausted
        return ev(y, "nelder-mead")

    k = 0
    while ev.used < cfg.budget:
        x0 = starts[k % len(starts)]
        k += 1
        try:
            minimize(fun, x0, method="Nelder-Mead",
                     options={"maxfev": cfg.budget - ev.used, "initial_simplex": x0 + 0.5 * np.vstack(
                         [np.zeros(4), np.eye(4)]), "xatol": 1e-3, "fatol": 0.0})
        except _BudgetExhausted:
            break


def optimize_rotation(cfg: OptimizerConfig, point: PlanPoint) -> OptimizationResult:
    """Search the four Givens angles for the best value of ``cfg.objective`` at ``point``.

    The rotation field of ``point`` is ignored. With common random numbers
    every evaluation reuses the same symbol, phase and noise streams, so
    candidates are compared on identical channel realizations. Deterministic
    given ``cfg.seed``.
    """
    point = replace(point, receiver=cfg.receiver)
    if point.n_channels != 2:
        raise ValueError("the angle search is defined for two channels (4 real dimensions)")
    point.validate()

    def fun(x, k):
        recipe = RotationRecipe("givens4", angles=tuple(x))
        stream = 0 if cfg.common_random_numbers else k
        rep = run_point(replace(point, rotation=recipe), cfg.symbols_per_eval, cfg.seed,
                        point_id=stream, workers=cfg.workers)
        val, se = objective_value(rep, cfg.objective)
        return val, se, rep

    trace, k, reports, notes = search_angles(fun, cfg)
    return OptimizationResult(GivensAngles4D.from_array(trace[k].angles), reports[k], trace,
                              budget_exhausted=len(trace) >= cfg.budget, warnings=notes)


def evaluate_fixed(recipe: RotationRecipe, point: PlanPoint, receiver: str | None = None,
                   n_symbols: int = PAPER_MIN_SYMBOLS, seed: int = 1, stream_id: int = 0,
                   workers: int = 1) -> MetricsReport:
    """Metrics of one explicit rotation at one channel point."""
    pt = replace(point, rotation=recipe, receiver=receiver or point.receiver)
    return run_point(pt, n_symbols, seed, point_id=stream_id, workers=workers)


def fit_angles(target, include_phase: bool = False, restarts: int = 64, seed: int = 0):
    """Least-squares Givens angles reproducing a 4x4 rotation.

    With ``include_phase`` the two leading per-channel phase shifts are fitted
    too and returned as ``(angles, (phi1, phi2), residual)``; otherwise they
    are held at zero and ``(angles, residual)`` is returned. ``residual`` is
    the largest entrywise deviation.
    """
    target = np.asarray(target, dtype=float)
    rng = np.random.default_rng(seed)
    n_free = 6 if include_phase else 4

    def resid(a):
        full = a if include_phase else np.concatenate([[0.0, 0.0], a])
        return (compose_givens(*full) - target).ravel()

    best = None
    for _ in range(restarts):
        sol = least_squares(resid, rng.uniform(LOWER, UPPER, n_free), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if best is None or sol.cost < best.cost:
            best = sol
        if best.cost < 1e-28:
            break
    a = wrap_angle(best.x)
    err = float(np.max(np.abs(resid(a))))
    if include_phase:
        return GivensAngles4D.from_array(a[2:]), (float(a[0]), float(a[1])), err
    return GivensAngles4D.from_array(a), err
