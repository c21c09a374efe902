"""A desk-scale system: 300 synthetic plants, 48 half-hours, two trading dates.

Runs the bundled ``uk_scale`` scenario through the CLI and reports the
day-ahead premium over spot for each half-hour.
"""
import csv
import tempfile
import time
from pathlib import Path

from powerterm.cli import main

out = Path(tempfile.mkdtemp(prefix="powerterm-uk-"))
t0 = time.perf_counter()
code = main(["solve", "--scenario", "uk_scale", "--out", str(out)])
print(f"exit code {code} after {time.perf_counter() - t0:.0f} s; outputs in {out}")

with open(out / "prices.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
by_delivery = {}
for r in rows:
    by_delivery.setdefault(int(r["delivery"]), []).append(float(r["expected_price"]))
for j in range(0, 48, 6):
    day_ahead, spot = by_delivery[j]
    print(f"half-hour {j:2d}: day-ahead {day_ahead:8.3f}  spot {spot:8.3f}  premium {spot - day_ahead:+.3f}")
