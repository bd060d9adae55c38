"""Command-line entry point.

    sipqkd run --config FILE [--seed N] [--out DIR] [--format table|records]
    sipqkd characterize (ring|voa|polmod) --axis NAME --range A:B:N [--config FILE] --out DIR
    sipqkd sweep --config FILE --key PATH --values LIST --out DIR
    sipqkd calibrate-qber --target 0.054 --config FILE [--write]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date
from pathlib import Path

from ..devices import ConfigError
from .characterize import AXES, CharacterizationSweep, run_characterization
from .config import ScenarioConfig, load_config, load_preset, serialize_config, with_value
from .report import curve_csv, emit_report, write_session_outputs
from .session import StageError, calibrate_misalignment, run_session, sweep_scenarios

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("sipqkd")


def _load(args) -> ScenarioConfig:
    if getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    elif getattr(args, "config", None):
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    else:
        cfg = ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        cfg = with_value(cfg, "seed", args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_session(cfg, workers=args.workers)
    if args.out:
        for p in write_session_outputs(report, args.out, args.format):
            log.info("wrote %s", p)
    else:
        sys.stdout.write(emit_report(report, args.format))
    return EXIT_OK


def cmd_characterize(args) -> int:
    cfg = _load(args)
    try:
        sweep = CharacterizationSweep.parse_range(args.device, args.axis, args.range)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    curves = run_characterization(sweep, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in curves.items():
        p = out / f"curve_{args.device}_{args.axis}_{name}.csv"
        p.write_text(curve_csv(rows), encoding="utf-8")
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {args.values!r}") from None
    results = sweep_scenarios(cfg, args.key, values, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["value,seed,detections,raw_rate_bps,sifted_rate_bps,qber,secret_rate_bps"]
    for i, (v, rep) in enumerate(results):
        s = rep.stats
        lines.append(
            f"{v!r},{rep.config.seed},{s.detections},{s.raw_rate_bps:.6f},{s.sifted_rate_bps:.6f},"
            f"{s.qber:.6f},{s.secret_rate_bps:.6f}"
        )
        write_session_outputs(rep, out / f"point_{i:03d}", "records")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    angle, q = calibrate_misalignment(cfg, args.target, workers=args.workers)
    print(f"misalignment_rad={angle!r}")
    print(f"qber={q:.6f}")
    if args.write:
        if not args.config:
            raise ConfigError("--write needs --config")
        header = (
            f"receiver.misalignment_rad calibrated by `sipqkd calibrate-qber --target {args.target}` "
            f"on {date.today().isoformat()}\n"
            f"seed {cfg.seed}, {cfg.timing.session_pulses} pulses -> simulated QBER {q:.6f}"
        )
        new = with_value(cfg, "receiver.misalignment_rad", angle)
        Path(args.config).write_text(serialize_config(new, header), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sipqkd", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_config(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", help="scenario file (section.key = value)")
        g.add_argument("--preset", help="bundled preset name, e.g. demo")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("run", help="run one BB84 session")
    add_config(r)
    r.add_argument("--out", help="output directory (stdout when omitted)")
    r.add_argument("--format", choices=("table", "records"), default="table")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("characterize", help="sweep one device and write curve files")
    c.add_argument("device", choices=sorted(AXES))
    c.add_argument("--axis", required=True)
    c.add_argument("--range", required=True, help="START:STOP:STEPS")
    add_config(c)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_characterize)

    s = sub.add_parser("sweep", help="run sessions over values of one numeric config key")
    add_config(s)
    s.add_argument("--key", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    k = sub.add_parser("calibrate-qber", help="fit receiver misalignment to a target QBER")
    add_config(k)
    k.add_argument("--target", type=float, default=0.054)
    k.add_argument("--write", action="store_true", help="write the fitted angle back into --config")
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
