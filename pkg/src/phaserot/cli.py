"""Command-line entry point: ``phaserot simulate | optimize | selftest``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .montecarlo import PlanError, default_workers, run_sweep
from .planfile import load_optimizer_config, load_plan

log = logging.getLogger("phaserot")

CSV_COLUMNS = ("N", "M", "snr_db", "sigma2_p", "rotation", "receiver", "bler", "ser", "ber", "air",
               "bler_se", "ser_se", "ber_se", "air_se", "rel_bler", "rel_ser", "rel_ber", "rel_air",
               "n_symbols", "seed", "status")
TRACE_COLUMNS = ("evaluation", "phi3", "phi4", "phi5", "phi6", "objective", "stderr", "incumbent", "phase")

EXIT_OK, EXIT_PARTIAL, EXIT_INPUT, EXIT_SELFTEST = 0, 3, 2, 1


def fmt(v) -> str:
    """CSV cell: integers verbatim, floats round-trip exact, non-finite as NA."""
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "NA"
    return str(v)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _env_int(name: str):
    v = os.environ.get(name)
    if v is None or v == "":
        return None
    try:
        return int(v)
    except ValueError:
        raise SystemExit(f"error: environment variable {name} must be an integer, got {v!r}") from None


def result_rows(results) -> list[dict]:
    rows = []
    for res in results:
        p = res.point
        row = {"N": p.n_channels, "M": p.order, "snr_db": p.snr_db, "sigma2_p": p.sigma2_p,
               "rotation": p.rotation.label, "receiver": p.receiver}
        if res.report is None:
            row["status"] = "error"
        else:
            r = res.report
            row.update(bler=r.bler, ser=r.ser, ber=r.ber, air=r.air, bler_se=r.bler_se, ser_se=r.ser_se,
                       ber_se=r.ber_se, air_se=r.air_se, n_symbols=r.n_symbols, seed=r.seed, status="ok")
            if res.relative is not None:
                row.update({f"rel_{k}": v for k, v in res.relative.as_dict().items()})
        rows.append(row)
    return rows


def cmd_simulate(args) -> int:
    plan_path = Path(args.plan)
    try:
        text = plan_path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read plan {plan_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    seed = args.seed if args.seed is not None else _env_int("PHASEROT_SEED")
    workers = args.workers if args.workers is not None else default_workers()
    try:
        plan = load_plan(plan_path, {"master_seed": seed, "fidelity": args.fidelity})
    except PlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    results = run_sweep(plan, workers=workers)
    rows = result_rows(results)
    _write_csv(out / "results.csv", CSV_COLUMNS, rows)
    _write_json(out / "results.json", {
        "master_seed": plan.master_seed, "fidelity": plan.fidelity, "llr_variance": plan.llr_variance,
        "common_random_numbers": plan.common_random_numbers,
        "points": [{
            "point_id": r.point_id, "n_channels": r.point.n_channels, "order": r.point.order,
            "snr_db": r.point.snr_db, "sigma2_p": r.point.sigma2_p, "receiver": r.point.receiver,
            "rotation": r.point.rotation.to_descriptor(), "es": r.point.es,
            "report": r.report.summary() if r.report else None,
            "counts": r.report.to_dict() if r.report else None,
            "relative": r.relative.as_dict() if r.relative else None, "error": r.error,
        } for r in results]})
    failed = [r for r in results if r.error]
    _write_json(out / "manifest.json", {
        "tool": "phaserot", "version": __version__, "command": "simulate",
        "plan": str(plan_path.resolve()), "plan_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "master_seed": plan.master_seed, "workers": workers, "started": started, "finished": _now(),
        "outputs": ["results.csv", "results.json"], "failed_points": [r.point_id for r in failed]})
    for r in failed:
        print(f"warning: point {r.point_id} failed: {r.error}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_optimize(args) -> int:
    from .optimizer import optimize_rotation

    cfg_path = Path(args.config)
    try:
        text = cfg_path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config {cfg_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    seed = args.seed if args.seed is not None else _env_int("PHASEROT_SEED")
    workers = args.workers if args.workers is not None else _env_int("PHASEROT_WORKERS")
    try:
        cfg, point = load_optimizer_config(cfg_path, {"seed": seed, "workers": workers})
    except PlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    res = optimize_rotation(cfg, point)
    _write_csv(out / "trace.csv", TRACE_COLUMNS, [r.as_dict() for r in res.trace])
    best = next(r for r in reversed(res.trace) if r.incumbent)
    _write_json(out / "incumbent.json", {
        "rotation": res.recipe.to_descriptor(), "objective": cfg.objective, "value": best.objective,
        "stderr": best.stderr, "evaluation": best.evaluation, "report": res.report.summary(),
        "budget_exhausted": res.budget_exhausted, "warnings": res.warnings,
        "point": {"n_channels": point.n_channels, "order": point.order, "snr_db": point.snr_db,
                  "sigma2_p": point.sigma2_p, "receiver": point.receiver, "es": point.es},
        "config": {k: getattr(cfg, k) for k in ("objective", "receiver", "budget", "n_initial",
                                                 "symbols_per_eval", "fidelity", "kernel", "method", "seed",
                                                 "common_random_numbers", "n_candidates")},
        "note": "budget and initial-design size are engineering defaults, not tuned values"})
    _write_json(out / "manifest.json", {
        "tool": "phaserot", "version": __version__, "command": "optimize", "config": str(cfg_path.resolve()),
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(), "master_seed": cfg.seed,
        "started": started, "finished": _now(), "outputs": ["trace.csv", "incumbent.json"]})
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(res.trace)} evaluations; best {cfg.objective} {best.objective:.6g} +- {best.stderr:.2g} "
          f"at {res.recipe.label}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import CHECKS, run_checks

    names = args.only or None
    if names:
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            print(f"error: unknown checks {unknown}; available: {', '.join(CHECKS)}", file=sys.stderr)
            return EXIT_INPUT
    results = run_checks(names)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}"
                                                                            if failed else ""))
    return EXIT_SELFTEST if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phaserot", description="Rotated multichannel transmission under "
                                 "residual phase noise: simulation, rotation search and self-tests.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a plan file and write results.csv/results.json")
    sim.add_argument("--plan", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--workers", type=int, default=None, help="default: $PHASEROT_WORKERS or all cores")
    sim.add_argument("--seed", type=int, default=None, help="overrides the plan's master_seed "
                     "(also $PHASEROT_SEED)")
    sim.add_argument("--fidelity", choices=("paper", "quick"), default=None)
    sim.set_defaults(func=cmd_simulate)

    opt = sub.add_parser("optimize", help="search 4D rotation angles; writes trace.csv and incumbent.json")
    opt.add_argument("--config", required=True)
    opt.add_argument("--out", required=True)
    opt.add_argument("--workers", type=int, default=None)
    opt.add_argument("--seed", type=int, default=None)
    opt.set_defaults(func=cmd_optimize)

    st = sub.add_parser("selftest", help="fast consistency checks")
    st.add_argument("--only", nargs="*", metavar="CHECK")
    st.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
