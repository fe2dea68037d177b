"""Shape of the stochastic link model.

Plots (textually) delivery probability against distance for both garment
orientations, then measures the dwell-time statistics of the bursty outage
chain against their configured means.
"""

import random

import numpy as np

from fieldlink.channel import LinkCalibration, Orientation, OutageChain, OutageState, delivery_probability

cal = LinkCalibration()  # p_near 0.995, knee 900 m, cutoff 1200 m, back penalty 0.6
print(f"calibration: p_near={cal.p_near} knee={cal.knee_m:.0f} m cutoff={cal.cutoff_m:.0f} m "
      f"back_penalty={cal.back_penalty}\n")

print(f"{'distance':>9}  {'facing':>7}  {'back':>7}")
for d in np.arange(0, 1300, 100):
    front = delivery_probability(cal, float(d), Orientation.FACING_RM, textile=True)
    back = delivery_probability(cal, float(d), Orientation.BACK_TO_RM, textile=True)
    bar = "#" * int(front * 40)
    print(f"{d:>8.0f}m  {front:>7.3f}  {back:>7.3f}  {bar}")

print("\noutage chain, configured mean dwells: GOOD 20 s, BAD 5 s (100 ms steps)")
chain = OutageChain.from_dwell_means(mean_good_s=20.0, mean_bad_s=5.0, tick_ms=100)
rng = random.Random(7)
dwells = {OutageState.GOOD: [], OutageState.BAD: []}
current_state, run = chain.state, 0
for _ in range(400_000):
    before = chain.state
    chain.step(rng)
    run += 1
    if chain.state != before:
        dwells[before].append(run * 0.1)
        run = 0
for state, values in dwells.items():
    arr = np.array(values)
    print(f"  {state.value:>4}: {arr.size} episodes, mean dwell {arr.mean():.2f} s, median {np.median(arr):.2f} s")
