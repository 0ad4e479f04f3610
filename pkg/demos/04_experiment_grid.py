"""The five-scenario experiment grid.

Nominal filtering holds at 40 Hz but breaks at 20 Hz; the robust condition
restores safety at 20 Hz; a 30 ms input delay breaks the nominal filter even
at 100 Hz, and the delay-compensating variant fixes it.  Writes per-run CSVs,
plots, and the verdict table.
"""

from sdcbf import load_config, run_grid

results = run_grid(load_config(), out_dir="demo_grid")
width = max(len(n) for n in results)
for name, res in results.items():
    if res is None:
        print(f"{name:<{width}}  ERROR")
        continue
    s = res.summary
    print(f"{name:<{width}}  {'SAFE' if s.safe else 'UNSAFE':<7} "
          f"min_h={s.min_h:+.4f}  max|p|={s.max_abs_p:.4f} m")
print("wrote demo_grid/ (verdicts.csv, per-run CSVs, SVG plots)")
