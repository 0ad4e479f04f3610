"""One closed-loop run, step by step.

Runs the robust filter at 20 Hz with the aggressive tracker pushing the
Segway toward p = 0.8 (outside the corridor), then plots position, barrier
value, and the desired-vs-applied input.
"""

from sdcbf import emit_csv, emit_plots, load_config, run_scenario

cfg = load_config().with_scenario(variant="robust", frequency_hz=20.0,
                                  duration_s=20.0, noise=True, seed=0)
res = run_scenario(cfg)

s = res.summary
print(f"verdict: {'SAFE' if s.safe else 'UNSAFE'}")
print(f"min h over run:   {s.min_h:+.4f}")
print(f"max |p| over run: {s.max_abs_p:.4f} m (bound 0.5 m)")
fallbacks = int(res.samples["fallback"].sum())
print(f"fallback samples: {fallbacks} of {res.record_count} "
      f"(backup action held for one sample, then re-evaluated)")

emit_csv(res, "demo_robust_run.csv")
emit_plots(res, ".", prefix="demo_robust")
print("wrote demo_robust_run.csv and demo_robust_{position,barrier,input}.svg")
