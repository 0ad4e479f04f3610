"""Command-line front end: simulate / grid / plot / synthesize-gain."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def _load(args):
    from .config import load_config
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_scenario(seed=args.seed)
    return cfg


def _cmd_simulate(args) -> int:
    from .harness import emit_csv, emit_plots, run_scenario
    cfg = _load(args)
    result = run_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(result, out / "run.csv")
    emit_plots(result, out, prefix="run")
    s = result.summary
    print(f"verdict: {'SAFE' if s.safe else 'UNSAFE'}  min_h={s.min_h:.6g}  "
          f"max|p|={s.max_abs_p:.6g} m  wall={s.wall_time_s:.2f}s")
    for fault in s.faults:
        print(f"fault: {fault}")
    return 0


def _cmd_grid(args) -> int:
    from .harness import run_grid
    cfg = _load(args)
    results = run_grid(cfg, out_dir=args.out, parallel=not args.serial)
    width = max(len(n) for n in results)
    for name, res in results.items():
        if res is None:
            print(f"{name:<{width}}  ERROR")
        else:
            verdict = "SAFE" if res.summary.safe else "UNSAFE"
            print(f"{name:<{width}}  {verdict:<7} min_h={res.summary.min_h:+.4f}  "
                  f"max|p|={res.summary.max_abs_p:.4f} m")
    print(f"wrote {args.out}/verdicts.csv")
    return 0


def _cmd_plot(args) -> int:
    from .harness import RunResult, RunSummary, emit_plots, parse_csv
    from .config import ScenarioConfig
    results = []
    for path in args.runs:
        samples = parse_csv(path)
        min_h = float(min(samples["h"].min(), samples["h_intersample"].min()))
        summary = RunSummary(min_h=min_h, safe=min_h >= 0.0,
                             max_abs_p=float(np.max(np.abs(samples["p"]))),
                             wall_time_s=0.0)
        results.append((Path(path).stem,
                        RunResult(scenario=ScenarioConfig(), samples=samples,
                                  summary=summary)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if len(results) == 1:
        written = emit_plots(results[0][1], out, prefix=results[0][0])
    else:
        written = emit_plots(results, out, prefix="overlay")
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_synthesize(args) -> int:
    from .harness import build_runtime
    from .synthesis import save_certificate
    cfg = _load(args)
    rt = build_runtime(cfg)
    save_certificate(rt.certificate, args.out)
    c = rt.certificate
    print(f"wrote {args.out}: worst margin {np.max(c.margins):.3e}, "
          f"rho={c.rho:.6g}, backup-set level {rt.eps_level:.6g}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdcbf",
        description="Sampled-data backup-CBF safety filter simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario from a config file")
    p.add_argument("--config", default=None, help="TOML config overlay")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="RNG seed override")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("grid", help="run the canonical five-scenario grid")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--serial", action="store_true", help="disable process pool")
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("plot", help="re-plot emitted run CSVs")
    p.add_argument("--runs", nargs="+", required=True, help="run CSV files")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("synthesize-gain", help="synthesize and save the gain certificate")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="certificate JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_synthesize)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
