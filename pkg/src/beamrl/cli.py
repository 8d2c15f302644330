"""Command line: ``beamrl simulate ...`` and ``beamrl compare ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, PRESETS, load_config
from .harness import run_experiment
from .metrics import read_summary

log = logging.getLogger("beamrl")


def _simulate(args) -> int:
    if args.config in PRESETS:
        cfg = PRESETS[args.config]()
    else:
        cfg = load_config(args.config)
    kw = {"mode": args.mode, "output_dir": args.out}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.checkpoint:
        kw["checkpoint"] = args.checkpoint
    if args.debug_dumps:
        kw["debug_dumps"] = True
    if args.duration is not None:
        kw["duration_s"] = args.duration
    cfg = cfg.replace(**kw)
    if cfg.mode == "eval" and not cfg.checkpoint:
        log.warning("eval without --checkpoint uses an untrained network")
    report = run_experiment(cfg, out_dir=args.out)
    gm = report.gm_overall
    lat = report.latency
    gm_txt = f"{gm.value / 1e6:.3f} Mbps" if gm else "no data"
    lat_txt = f"{lat.mean * 1e3:.3f} ms" if lat else "no data"
    print(f"{cfg.mode} seed {cfg.seed}: GM overall {gm_txt}, mean latency {lat_txt}")
    print(f"outputs in {args.out}")
    return 0


def _fmt(v) -> str:
    return "nan" if v is None else f"{v:.6g}"


def _compare(args) -> int:
    base = read_summary(Path(args.baseline) / "summary.txt")
    cand = read_summary(Path(args.candidate) / "summary.txt")

    def gain(key):
        a, b = base.get(key), cand.get(key)
        if not isinstance(a, float) or not isinstance(b, float) or a != a or b != b or a <= 0:
            return None
        return 100.0 * (b / a - 1.0)

    def factor(key):
        a, b = base.get(key), cand.get(key)
        if not isinstance(a, float) or not isinstance(b, float) or a != a or b != b or b <= 0:
            return None
        return a / b

    gains = {
        "gm_overall_gain_pct": gain("gm_overall_mbps"),
        "gm_effective_gain_pct": gain("gm_effective_mbps"),
        "latency_mean_factor": factor("latency_mean_ms"),
        "latency_p95_factor": factor("latency_p95_ms"),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"baseline {args.baseline}", f"candidate {args.candidate}"]
    lines += [f"{k} {_fmt(v)}" for k, v in gains.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[2:]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamrl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one baseline, training or evaluation experiment")
    s.add_argument("--config", required=True, help="config file, or a preset name (desk, full)")
    s.add_argument("--mode", required=True, choices=["train", "eval", "baseline"])
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint", help="Q-network checkpoint to evaluate")
    s.add_argument("--debug-dumps", action="store_true", help="also write states.csv and schedule.csv")
    s.add_argument("--duration", type=float, help="override duration_s")
    s.set_defaults(func=_simulate)

    c = sub.add_parser("compare", help="gains of a candidate run over a baseline run")
    c.add_argument("--baseline", required=True)
    c.add_argument("--candidate", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
