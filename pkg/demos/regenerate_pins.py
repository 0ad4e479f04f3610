"""Regenerate tests/_pins.py (regression pin values).

Run after any deliberate numerical change:  python demos/regenerate_pins.py
"""

import hashlib
import pathlib
import tempfile

from sdcbf.config import load_config
from sdcbf.harness import build_runtime, emit_csv, run_scenario


def main():
    cfg = load_config()
    runtime = build_runtime(cfg)
    res = run_scenario(cfg.with_scenario(duration_s=2.0, frequency_hz=20.0,
                                         seed=42, variant="robust"),
                       runtime=runtime)
    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "pin.csv"
        emit_csv(res, path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()

    out = pathlib.Path(__file__).resolve().parent.parent / "tests" / "_pins.py"
    out.write_text(
        '"""Frozen regression values. Regenerate: python demos/regenerate_pins.py"""\n\n'
        "PINS = {\n"
        f'    "short_run_csv_sha256": "{digest}",\n'
        f'    "short_run_min_h": {res.summary.min_h!r},\n'
        "}\n")
    print(f"wrote {out}")
    print(f"  sha256 {digest}")
    print(f"  min_h  {res.summary.min_h!r}")


if __name__ == "__main__":
    main()
