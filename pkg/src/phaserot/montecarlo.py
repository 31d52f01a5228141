"""Deterministic, sharded Monte Carlo engine.

A point's symbol budget is cut into shards of a fixed number of blocks. The
cut depends only on the point, never on the worker count, and shard reports
are merged in shard order. Serial and parallel runs therefore produce
identical reports.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .channel import ChannelParams, asymptotic_transmit, draw_symbols, transmit
from .constellation import Constellation
from .metrics import MetricsReport, RelativeMetrics, accumulate_hard, accumulate_soft, merge_reports, relative_report
from .receivers import DEFAULT_CAP, JointDetectorConfig, joint_map_detect, slice_symbols, soft_demap
from .rotations import RotationRecipe
from .streams import ShardStreams

log = logging.getLogger(__name__)

RECEIVERS = ("per-channel", "joint")
LLR_VARIANCE_POLICIES = ("matched", "nominal")
PAPER_MIN_SYMBOLS = 10 ** 6
DEFAULT_SHARD_SYMBOLS = 1 << 16


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PlanPoint:
    n_channels: int
    order: int
    snr_db: float
    sigma2_p: float
    rotation: RotationRecipe
    receiver: str = "per-channel"
    es: float = 1.0

    def __post_init__(self):
        if self.receiver not in RECEIVERS:
            raise PlanError(f"unknown receiver {self.receiver!r}; expected one of {RECEIVERS}")

    @property
    def asymptotic(self) -> bool:
        return self.rotation.kind == "hadamard-limit"

    @property
    def channel_key(self) -> tuple:
        """Everything but the rotation; points sharing it may share random streams."""
        return (self.n_channels, self.order, self.snr_db, self.sigma2_p, self.receiver, self.es)

    def params(self) -> ChannelParams:
        return ChannelParams.from_snr_db(self.n_channels, self.snr_db, self.sigma2_p, self.es)

    def constellation(self) -> Constellation:
        return _constellation(self.order, self.es)

    def validate(self, cap: int = DEFAULT_CAP) -> None:
        """Raise :class:`PlanError` for points that cannot be simulated."""
        self.params()
        self.constellation()
        if self.asymptotic:
            if self.receiver != "per-channel":
                raise PlanError("the large-N Hadamard channel is only defined for the per-channel receiver")
            return
        try:
            self.rotation.build(self.n_channels)
        except ValueError as exc:
            raise PlanError(str(exc)) from None
        if self.receiver == "joint" and self.sigma2_p > 0 and self.order ** self.n_channels > cap:
            raise PlanError(f"joint detection over {self.order}^{self.n_channels} candidates exceeds the cap of {cap}")


@lru_cache(maxsize=None)
def _constellation(order: int, es: float) -> Constellation:
    return Constellation(order, es)


@lru_cache(maxsize=64)
def _rotation(recipe: RotationRecipe, n: int):
    return recipe.build(n)


def llr_noise_variance(params: ChannelParams, policy: str = "matched") -> float:
    """Auxiliary-channel variance for finite-N per-channel soft demapping.

    ``matched`` uses ``E|r~ - s|^2 = N0 + 2 Es (1 - exp(-sigma2_p / 2))``, the
    second moment of the derotated error, which holds for every rotation.
    ``nominal`` uses ``N0`` and ignores the phase noise entirely.
    """
    if policy == "matched":
        return params.derotation_error_variance
    if policy == "nominal":
        return params.n0
    raise ValueError(f"unknown LLR variance policy {policy!r}")


def run_shard(point: PlanPoint, n_blocks: int, master_seed: int, stream_id: int, shard_id: int,
              llr_variance: str = "matched") -> MetricsReport:
    streams = ShardStreams(master_seed, stream_id, shard_id)
    const = point.constellation()
    params = point.params()
    m = const.bits_per_symbol
    idx = draw_symbols(streams.symbols, n_blocks, point.n_channels, const.order)
    s = const.points[idx]
    llr = None
    if point.asymptotic:
        r_tilde = asymptotic_transmit(s, params, streams.noise)
        s_hat = slice_symbols(r_tilde, const)
        llr = soft_demap(r_tilde, const, params.asymptotic_noise_variance, params.alpha)
    else:
        rot = _rotation(point.rotation, point.n_channels)
        batch = transmit(s, rot, params, streams.phase, streams.noise, indices=idx)
        if point.receiver == "joint" and params.sigma2_p > 0:
            s_hat = joint_map_detect(batch.received, JointDetectorConfig(const, rot, params.n0, params.sigma2_p))
        else:
            # Without phase noise MAP detection reduces to derotate-and-slice.
            r_tilde = rot.inverse(batch.received)
            s_hat = slice_symbols(r_tilde, const)
            if point.receiver == "per-channel":
                llr = soft_demap(r_tilde, const, llr_noise_variance(params, llr_variance), 1.0)
    report = accumulate_hard(idx, s_hat, m)
    if llr is not None:
        report = accumulate_soft(llr, const.labels[idx], report)
    return replace(report, seed=master_seed)


def shard_sizes(n_symbols: int, n_channels: int, shard_symbols: int = DEFAULT_SHARD_SYMBOLS) -> list[int]:
    """Blocks per shard; a function of the point only."""
    n_blocks = max(1, math.ceil(n_symbols / n_channels))
    per = max(1, shard_symbols // n_channels)
    full, rest = divmod(n_blocks, per)
    return [per] * full + ([rest] if rest else [])


def _run_task(task):
    point, n_blocks, seed, stream_id, shard_id, policy = task
    return run_shard(point, n_blocks, seed, stream_id, shard_id, policy)


def _map(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks, chunksize=1))


def default_workers() -> int:
    env = os.environ.get("PHASEROT_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_point(point: PlanPoint, n_symbols: int = PAPER_MIN_SYMBOLS, master_seed: int = 1, point_id: int = 0,
              workers: int = 1, shard_symbols: int = DEFAULT_SHARD_SYMBOLS,
              llr_variance: str = "matched") -> MetricsReport:
    """Simulate one point; the result depends only on ``(point, n_symbols, master_seed, point_id)``."""
    point.validate()
    sizes = shard_sizes(n_symbols, point.n_channels, shard_symbols)
    tasks = [(point, nb, master_seed, point_id, k, llr_variance) for k, nb in enumerate(sizes)]
    return merge_reports(_map(tasks, workers))


@dataclass
class ExperimentPlan:
    """Grid of simulation points.

    Points are enumerated with ``n_channels`` outermost, then ``order``,
    ``snr_db``, ``sigma2_p``, ``receiver`` and ``rotation`` innermost.
    """

    sigma2_p: list
    snr_db: list
    n_channels: list = field(default_factory=lambda: [2])
    order: list = field(default_factory=lambda: [64])
    rotation: list = field(default_factory=lambda: [RotationRecipe("identity")])
    receiver: list = field(default_factory=lambda: ["per-channel"])
    min_symbols: int = PAPER_MIN_SYMBOLS
    master_seed: int = 1
    fidelity: str = "paper"
    es: float = 1.0
    llr_variance: str = "matched"
    common_random_numbers: bool = True
    shard_symbols: int = DEFAULT_SHARD_SYMBOLS

    def __post_init__(self):
        if self.fidelity not in ("paper", "quick"):
            raise PlanError(f"unknown fidelity {self.fidelity!r}")
        if self.fidelity == "paper" and self.min_symbols < PAPER_MIN_SYMBOLS:
            raise PlanError(f"paper fidelity needs at least {PAPER_MIN_SYMBOLS} symbols per point, "
                            f"plan asks for {self.min_symbols}")
        if self.llr_variance not in LLR_VARIANCE_POLICIES:
            raise PlanError(f"unknown llr_variance {self.llr_variance!r}")
        if self.min_symbols < 1 or self.shard_symbols < 1:
            raise PlanError("symbol counts must be positive")
        for name in ("sigma2_p", "snr_db", "n_channels", "order", "rotation", "receiver"):
            if not getattr(self, name):
                raise PlanError(f"axis {name!r} is empty")

    def points(self) -> list[PlanPoint]:
        out = []
        for n, m, snr, s2, rx, rot in itertools.product(self.n_channels, self.order, self.snr_db,
                                                         self.sigma2_p, self.receiver, self.rotation):
            out.append(PlanPoint(int(n), int(m), float(snr), float(s2), rot, rx, self.es))
        return out

    def stream_ids(self, points: list[PlanPoint]) -> list[int]:
        if not self.common_random_numbers:
            return list(range(len(points)))
        keys: dict = {}
        return [keys.setdefault(p.channel_key, len(keys)) for p in points]


@dataclass
class PointResult:
    point_id: int
    point: PlanPoint
    report: MetricsReport | None = None
    error: str | None = None
    relative: RelativeMetrics | None = None


def run_sweep(plan: ExperimentPlan, workers: int = 1) -> list[PointResult]:
    """Run every plan point; invalid points are reported and skipped."""
    points = plan.points()
    streams = plan.stream_ids(points)
    results = [PointResult(i, p) for i, p in enumerate(points)]
    tasks, owners = [], []
    for res, sid in zip(results, streams):
        try:
            res.point.validate()
        except (PlanError, ValueError) as exc:
            res.error = str(exc)
            log.info("point %d skipped: %s", res.point_id, exc)
            continue
        for k, nb in enumerate(shard_sizes(plan.min_symbols, res.point.n_channels, plan.shard_symbols)):
            tasks.append((res.point, nb, plan.master_seed, sid, k, plan.llr_variance))
            owners.append(res.point_id)
    shard_reports = _map(tasks, workers)
    grouped: dict[int, list] = {}
    for owner, rep in zip(owners, shard_reports):
        grouped.setdefault(owner, []).append(rep)
    for pid, reps in grouped.items():
        results[pid].report = merge_reports(reps)
    _attach_relative(results)
    return results


def _attach_relative(results: list[PointResult]) -> None:
    baselines = {}
    for res in results:
        if res.report is not None and res.point.rotation.kind == "identity":
            baselines.setdefault(res.point.channel_key, res.report)
    for res in results:
        if res.report is None:
            continue
        base = baselines.get(res.point.channel_key)
        if base is not None:
            res.relative = relative_report(res.report, base)


def symbol_index_histogram(master_seed: int, point_id: int, n_blocks: int, n_channels: int, order: int,
                           shard_symbols: int = DEFAULT_SHARD_SYMBOLS) -> np.ndarray:
    """Counts of drawn symbol indices, reproducing the engine's draws."""
    counts = np.zeros(order, dtype=np.int64)
    sizes = shard_sizes(n_blocks * n_channels, n_channels, shard_symbols)
    for k, nb in enumerate(sizes):
        idx = draw_symbols(ShardStreams(master_seed, point_id, k).symbols, nb, n_channels, order)
        counts += np.bincount(idx.ravel(), minlength=order)
    return counts
