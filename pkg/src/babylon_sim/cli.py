"""Command line: run one scenario, re-check a trace, or sweep seeds."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from .core_types import ProtocolParams
from .scenarios import ScenarioConfig, run_scenario
from .sim_net import Trace
from .theorem import check_theorem

_PARAM_FIELDS = {f.name: f for f in dataclasses.fields(ProtocolParams) if f.name != "extra"}
_CONFIG_FIELDS = {"scenario": str, "arm": str, "delay": str, "max_ticks": int}


def parse_config_text(text: str) -> dict:
    """key=value lines; '#' starts a comment; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _coerce(kind, value: str):
    if kind is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return kind(value)


def build_config(values: dict) -> ScenarioConfig:
    """Split raw key/value strings into protocol params, run settings and scenario options."""
    params, cfg, options = {}, {}, {}
    for key, value in values.items():
        if key in _PARAM_FIELDS:
            kind = _PARAM_FIELDS[key].type
            if not isinstance(kind, type):
                kind = {"int": int, "float": float, "str": str}.get(kind, str)
            params[key] = _coerce(kind, value)
        elif key in _CONFIG_FIELDS:
            cfg[key] = _coerce(_CONFIG_FIELDS[key], value)
        else:
            options[key] = value
    return ScenarioConfig(params=ProtocolParams(**params), options=options, **cfg)


def load_config(path: Optional[str], overrides: dict) -> ScenarioConfig:
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    values.update({k: str(v) for k, v in overrides.items() if v is not None})
    return build_config(values)


def parse_seed_range(spec: str) -> range:
    lo, sep, hi = spec.partition("..")
    if not sep:
        return range(int(spec), int(spec) + 1)
    lo, hi = int(lo), int(hi)
    if hi < lo:
        raise ValueError(f"empty seed range {spec!r}")
    return range(lo, hi + 1)


def _overrides(args) -> dict:
    out = dict(kv.split("=", 1) for kv in (args.set or []))
    for key in ("scenario", "arm", "seed"):
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    return out


def _run_one(values: dict):
    cfg = build_config(values)
    res = run_scenario(cfg)
    return res.report


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    cfg.trace, cfg.report = args.trace, args.report
    report = run_scenario(cfg).report
    sys.stdout.write(report.to_text())
    return 0 if report.ok else 1


def cmd_check(args) -> int:
    report = check_theorem(Trace.load(args.trace))
    sys.stdout.write(report.to_text())
    return 0 if report.ok else 1


def cmd_matrix(args) -> int:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = parse_config_text(fh.read())
    base.update({k: str(v) for k, v in _overrides(args).items()})
    jobs = [dict(base, seed=str(s)) for s in parse_seed_range(args.seeds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reports = list(ex.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    header = f"{'seed':>6}  {'verdict':<14}{'slashable':>10}{'span':>6}{'sec k_w/2':>10}{'sec k_c/2':>10}"
    print(header)
    for r in reports:
        sec = r.babylon_secure_at
        print(f"{r.seed:>6}  {r.verdict:<14}{r.slashable_fraction:>10.3f}{r.liveness_violation_span:>6}"
              f"{str(sec['k_w/2']):>10}{str(sec['k_c/2']):>10}")
    verdicts = sorted({r.verdict for r in reports})
    print(f"verdicts: {', '.join(verdicts)}; uniform: {len(verdicts) == 1}")
    return 0 if all(r.ok for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="babylon-sim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario")
        p.add_argument("--arm")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key; repeatable")

    p = sub.add_parser("run", help="run one scenario and print its report")
    p.add_argument("config", nargs="?")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace")
    p.add_argument("--report")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="recompute the report for a saved trace")
    p.add_argument("trace")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("matrix", help="run a config over a seed range")
    p.add_argument("config", nargs="?")
    p.add_argument("--seeds", required=True, metavar="A..B")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_matrix)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
