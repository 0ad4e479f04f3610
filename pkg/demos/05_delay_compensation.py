"""Input-delay bookkeeping, shown directly.

Noiseless run with a 150 ms delay at 20 Hz (three control periods).  The
filter stores its last three outputs, integrates the estimate through them,
and constrains the input at the state where it will actually act; with an
accurate model the prediction matches the plant exactly, three steps later.
"""

import numpy as np

from sdcbf import load_config, run_scenario

cfg = load_config().with_scenario(variant="robust_delay_aware", frequency_hz=20.0,
                                  delay_s=0.15, noise=False, duration_s=20.0)
res = run_scenario(cfg)

n = res.extras["delay_steps"]
xp = res.extras["x_pred"]
true = np.stack([res.samples[k] for k in ("p", "p_dot", "theta", "theta_dot")],
                axis=-1)
errs = [float(np.max(np.abs(xp[i] - true[i + n])))
        for i in range(len(xp) - n) if np.all(np.isfinite(xp[i]))]
print(f"delay steps n = {n}")
print(f"prediction vs plant {len(errs)} samples: worst error {max(errs):.3e}")
print(f"verdict: {'SAFE' if res.summary.safe else 'UNSAFE'} "
      f"(min h {res.summary.min_h:+.4f})")
