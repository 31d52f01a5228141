"""Plan and optimizer-config files.

The format is flat ``key = value`` text, one entry per line, with ``#``
comments. Values are scalars or bracketed arrays::

    sigma2_p = [1e-4, 1e-3, logspace(-2, 0, 5)]
    snr_db   = 22.5
    rotation = [identity, hadamard, givens4(angles=[0.1, 0.2, 0.3, 0.4]), @h4.json]

Rotation tokens are a recipe kind optionally followed by ``(key=value, ...)``;
``@path`` loads a JSON descriptor relative to the plan file. Angles are in
radians and SNRs in dB.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .montecarlo import ExperimentPlan, PlanError, PlanPoint
from .rotations import RotationRecipe


class PlanSyntaxError(PlanError):
    def __init__(self, source: str, line: int, message: str):
        self.source = source
        self.line = line
        super().__init__(f"{source}:{line}: {message}")


@dataclass
class Entry:
    value: object
    line: int


_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RANGE = re.compile(r"^(logspace|linspace)\((.*)\)$")


def split_top(text: str, sep: str = ",") -> list[str]:
    """Split at ``sep`` outside brackets and parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced closing bracket")
        if ch == sep and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ValueError("unbalanced opening bracket")
    parts.append("".join(cur).strip())
    return parts


def parse_scalar(tok: str):
    t = tok.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    return t


def parse_value(tok: str):
    """Scalar, array, or range helper; arrays are returned as lists."""
    t = tok.strip()
    if not t:
        raise ValueError("empty value")
    if t.startswith("["):
        if not t.endswith("]"):
            raise ValueError(f"unterminated array {t!r}")
        inner = t[1:-1].strip()
        if not inner:
            return []
        out = []
        for part in split_top(inner):
            v = parse_value(part)
            out.extend(v if isinstance(v, list) and _RANGE.match(part) else [v])
        return out
    m = _RANGE.match(t)
    if m:
        args = [float(parse_scalar(a)) for a in split_top(m.group(2))]
        if len(args) != 3 or args[2] < 1 or args[2] != int(args[2]):
            raise ValueError(f"{m.group(1)} takes (start, stop, count)")
        fn = np.logspace if m.group(1) == "logspace" else np.linspace
        return [float(v) for v in fn(args[0], args[1], int(args[2]))]
    split_top(t)  # bracket balance check for tokens such as givens4(...)
    return parse_scalar(t)


def parse_text(text: str, source: str = "<plan>") -> dict[str, Entry]:
    entries: dict[str, Entry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PlanSyntaxError(source, lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if not _KEY.match(key):
            raise PlanSyntaxError(source, lineno, f"invalid key {key!r}")
        if key in entries:
            raise PlanSyntaxError(source, lineno, f"duplicate key {key!r} (first set on line {entries[key].line})")
        try:
            entries[key] = Entry(parse_value(val), lineno)
        except ValueError as exc:
            raise PlanSyntaxError(source, lineno, str(exc)) from None
    return entries


def parse_rotation(tok, base_dir: Path | None = None) -> RotationRecipe:
    """Rotation recipe from a plan token."""
    if isinstance(tok, RotationRecipe):
        return tok
    t = str(tok).strip()
    if t.startswith("@"):
        path = Path(t[1:])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise ValueError(f"cannot read rotation descriptor {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ValueError(f"rotation descriptor {path} is not valid JSON: {exc}") from None
        # incumbent files wrap the recipe
        return RotationRecipe.from_descriptor(d.get("rotation", d))
    m = re.match(r"^([a-z0-9-]+)\s*(?:\((.*)\))?$", t)
    if not m:
        raise ValueError(f"cannot parse rotation {t!r}")
    d: dict = {"kind": m.group(1)}
    if m.group(2):
        for arg in split_top(m.group(2)):
            if "=" not in arg:
                raise ValueError(f"rotation argument {arg!r} must be key=value")
            k, v = (x.strip() for x in arg.split("=", 1))
            d[k] = parse_value(v)
    return RotationRecipe.from_descriptor(d)


def _as_list(v) -> list:
    return v if isinstance(v, list) else [v]


def _number(v, kind, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{what} must be a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ValueError(f"{what} must be an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ValueError(f"{what} must be finite")
    return float(v)


def _flag(v, what):
    if not isinstance(v, bool):
        raise ValueError(f"{what} must be true or false, got {v!r}")
    return v


PLAN_KEYS = {
    "sigma2_p": ("axis", float), "snr_db": ("axis", float), "n_channels": ("axis", int),
    "order": ("axis", int), "receiver": ("axis", str), "rotation": ("axis", "rotation"),
    "min_symbols": ("scalar", int), "master_seed": ("scalar", int), "fidelity": ("scalar", str),
    "es": ("scalar", float), "llr_variance": ("scalar", str), "common_random_numbers": ("scalar", bool),
    "shard_symbols": ("scalar", int),
}
PLAN_ALIASES = {"n_symbols": "min_symbols", "seed": "master_seed", "M": "order", "N": "n_channels"}


def _convert(key, v, kind, base_dir):
    if kind == "rotation":
        return parse_rotation(v, base_dir)
    if kind is bool:
        return _flag(v, key)
    if kind is str:
        return str(v)
    return _number(v, kind, key)


def _entries_for(entries, keys, aliases, source):
    out = {}
    for key, e in entries.items():
        name = aliases.get(key, key)
        if name not in keys:
            raise PlanSyntaxError(source, e.line, f"unknown key {key!r}; known keys: {', '.join(sorted(keys))}")
        if name in out:
            raise PlanSyntaxError(source, e.line, f"{key!r} repeats {name!r}")
        out[name] = e
    return out


def plan_from_text(text: str, source: str = "<plan>", base_dir: Path | None = None,
                   overrides: dict | None = None) -> ExperimentPlan:
    """Build an :class:`ExperimentPlan`; every error names the offending line."""
    entries = _entries_for(parse_text(text, source), PLAN_KEYS, PLAN_ALIASES, source)
    kwargs = {}
    for name, e in entries.items():
        shape, kind = PLAN_KEYS[name]
        try:
            if shape == "axis":
                kwargs[name] = [_convert(name, v, kind, base_dir) for v in _as_list(e.value)]
            else:
                if isinstance(e.value, list):
                    raise ValueError(f"{name} takes a single value")
                kwargs[name] = _convert(name, e.value, kind, base_dir)
        except (ValueError, KeyError) as exc:
            raise PlanSyntaxError(source, e.line, str(exc)) from None
    for required in ("sigma2_p", "snr_db"):
        if required not in kwargs:
            raise PlanSyntaxError(source, 0, f"missing required key {required!r}")
    kwargs.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        plan = ExperimentPlan(**kwargs)
        points = plan.points()
    except PlanError as exc:
        line = _blame(entries, str(exc))
        raise PlanSyntaxError(source, line, str(exc)) from None
    for name, values in (("sigma2_p", plan.sigma2_p), ("snr_db", plan.snr_db)):
        if name == "sigma2_p" and any(v < 0 for v in values):
            raise PlanSyntaxError(source, entries[name].line, "sigma2_p must be non-negative")
    for p in points:
        if p.receiver not in ("per-channel", "joint"):
            raise PlanSyntaxError(source, entries["receiver"].line, f"unknown receiver {p.receiver!r}")
    return plan


def _blame(entries, message) -> int:
    for name in ("fidelity", "min_symbols", "llr_variance", "receiver", "shard_symbols"):
        if name in message and name in entries:
            return entries[name].line
    if "symbols" in message and "min_symbols" in entries:
        return entries["min_symbols"].line
    return 0


def load_plan(path, overrides: dict | None = None) -> ExperimentPlan:
    path = Path(path)
    return plan_from_text(path.read_text(encoding="utf-8"), str(path), path.parent, overrides)


OPT_KEYS = {
    "objective": str, "receiver": str, "budget": int, "n_initial": int, "symbols_per_eval": int,
    "fidelity": str, "kernel": str, "method": str, "seed": int, "common_random_numbers": bool,
    "n_candidates": int, "workers": int,
    "n_channels": int, "order": int, "snr_db": float, "sigma2_p": float, "es": float,
}


def optimizer_config_from_text(text: str, source: str = "<config>", overrides: dict | None = None):
    """Optimizer settings and channel point from a config file."""
    from .optimizer import OptimizerConfig

    entries = _entries_for(parse_text(text, source), OPT_KEYS,
                           {"M": "order", "N": "n_channels", "master_seed": "seed"}, source)
    vals = {}
    for name, e in entries.items():
        try:
            if isinstance(e.value, list):
                raise ValueError(f"{name} takes a single value")
            vals[name] = _convert(name, e.value, OPT_KEYS[name], None)
        except ValueError as exc:
            raise PlanSyntaxError(source, e.line, str(exc)) from None
    vals.update({k: v for k, v in (overrides or {}).items() if v is not None})
    channel = {k: vals.pop(k) for k in ("n_channels", "order", "snr_db", "sigma2_p", "es") if k in vals}
    for required in ("snr_db", "sigma2_p"):
        if required not in channel:
            raise PlanSyntaxError(source, 0, f"missing required key {required!r}")
    try:
        cfg = OptimizerConfig(**vals)
        point = PlanPoint(channel.get("n_channels", 2), channel.get("order", 64), channel["snr_db"],
                          channel["sigma2_p"], RotationRecipe("identity"), cfg.receiver, channel.get("es", 1.0))
        if point.n_channels != 2:
            raise ValueError("the angle search needs n_channels = 2")
        point.validate()
    except ValueError as exc:
        msg = str(exc)
        line = next((e.line for k, e in entries.items() if k in msg), 0)
        raise PlanSyntaxError(source, line, msg) from None
    return cfg, point


def load_optimizer_config(path, overrides: dict | None = None):
    path = Path(path)
    return optimizer_config_from_text(path.read_text(encoding="utf-8"), str(path), overrides)
