"""Command-line entry point: run, sweep-k, compare, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import PathwayError
from .harness import (RunReport, check_comparable, compare_reports, emit_comparison, emit_report, emit_sweep,
                      load_config, run_method, sweep_k, _csv, _run_many, _write)

log = logging.getLogger("pathway_cl")


def _parse_k(text: str):
    try:
        ks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathway-cl", description="Pathway-routed continual learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one method through its task stream")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", type=Path, default=Path("out"))

    s = sub.add_parser("sweep-k", help="repeat a papi run over pathway counts")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--k", type=_parse_k, default=[1, 2, 4, 8], help="comma-separated K values")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", type=Path, default=Path("out"))

    c = sub.add_parser("compare", help="run several configs on a shared stream and tabulate trends")
    c.add_argument("--configs", required=True, nargs="+", type=Path)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out", type=Path, default=Path("out"))

    e = sub.add_parser("report", help="regenerate report files from JSON summaries in a directory")
    e.add_argument("--in", dest="in_dir", required=True, type=Path)
    e.add_argument("--out", type=Path, default=None, help="defaults to the input directory")
    return p


def _report(in_dir: Path, out_dir: Path):
    if not in_dir.is_dir():
        raise FileNotFoundError(f"no such directory: {in_dir}")
    summaries = sorted(in_dir.glob("summary_*.json"))
    if not summaries:
        raise FileNotFoundError(f"no summary_*.json files in {in_dir}")
    rows, paths = [], []
    for path in summaries:
        try:
            rep = RunReport.from_summary(json.loads(path.read_text(encoding="utf-8")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: not a run summary ({exc})") from exc
        paths += emit_report(rep, out_dir)
        head = rep.to_summary()["headline"]
        rows.append([rep.config_hash, rep.method, rep.config["seed"], rep.n_tasks, head["final_stability"],
                     head["final_plasticity"], head["mean_forgetting"], head["final_mean_loss"], rep.energy()])
    index = out_dir / "index.csv"
    _write(index, _csv(["config_hash", "method", "seed", "n_tasks", "S_final", "P_final", "mean_forgetting",
                        "final_mean_loss", "energy_total"], rows))
    return paths + [index]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            paths = emit_report(run_method(cfg), args.out)
        elif args.command == "sweep-k":
            cfg = load_config(args.config)
            paths = emit_sweep(sweep_k(cfg, args.k, workers=args.workers), cfg, args.out)
        elif args.command == "compare":
            cfgs = [load_config(p) for p in args.configs]
            check_comparable(cfgs)
            reports = _run_many(cfgs, args.workers)
            paths = emit_comparison(compare_reports(reports), cfgs, args.out)
            for rep in reports:
                paths += emit_report(rep, args.out)
        else:
            paths = _report(args.in_dir, args.out or args.in_dir)
    except (PathwayError, ValueError, OSError) as exc:
        print(f"pathway-cl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
