"""Frozen regression values. Regenerate: python demos/regenerate_pins.py"""

PINS = {
    "short_run_csv_sha256": "5dc39c9fc926998ae32e6ff2c12c977c27df45c176fc9fcdcf28149e653fda6c",
    "short_run_min_h": 0.4534097941851071,
}
