"""Reproduce both field campaigns at desk scale.

Short range: four out-and-back 400 m walks per station antenna, split into
25 m distance bins by garment orientation. Long range: eleven 10-minute
relay-site sessions from 280 m out to 1081 m. Correctness stays high
everywhere; the real-time share is what distance and orientation erode.
"""

import numpy as np

from fieldlink.scenario import scenario_long_range, scenario_short_range
from fieldlink.sim import run_scenario

print("== short range, omni station antenna (4 repetitions) ==")
result = run_scenario(scenario_short_range("omni"))
bins = {}
for m in result.metrics:
    print(f"  {m.label}: correct {m.pct_correct:6.2f}%  realtime {m.pct_realtime:6.2f}%")
    for b in m.bins:
        key = (b.lo_m, b.orientation)
        exp, rt = bins.get(key, (0, 0))
        bins[key] = (exp + b.expected, rt + b.realtime)

print(f"\n  {'bin':>12}  {'outbound(back)':>15}  {'inbound(front)':>15}")
for lo in np.arange(0, 400, 50):
    row = []
    for orient in ("back_to_rm", "facing_rm"):
        exp, rt = bins.get((float(lo), orient), (0, 0))
        row.append(f"{100 * rt / exp:6.1f}%" if exp else "     -")
    print(f"  {lo:>5.0f}-{lo + 25:<4.0f}m  {row[0]:>15}  {row[1]:>15}")

print("\n== long range, one 10-minute session per relay site ==")
result = run_scenario(scenario_long_range())
print(f"  {'site':>9}  {'measured':>9}  {'correct':>8}  {'realtime':>9}")
for spec in result.scenario.sessions:
    m = result.metrics_by_label()[spec.label]
    measured = result.site_references.get(spec.label, float("nan"))
    marker = "  <- beyond the 900 m knee" if spec.site_distance_m >= 900 else ""
    print(f"  {spec.site_distance_m:>8.0f}m  {measured:>8.1f}m  {m.pct_correct:>7.2f}%  {m.pct_realtime:>8.2f}%{marker}")
