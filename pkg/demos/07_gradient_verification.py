"""Verify every differentiable operation against central finite differences.

Each op is instantiated at micro size in float64, a scalar loss is built,
and the hand-derived backward pass is compared element by element against
(f(x+h) - f(x-h)) / 2h. The same suite backs the `driversight check`
subcommand with its full seed count.
"""

import time

from driversight.harness.gradsuite import DEFAULT_TOLERANCE, SUITE

print(f"tolerance: relative error < {DEFAULT_TOLERANCE:g} (float64, central differences)\n")
t0 = time.perf_counter()
for name, check in SUITE.items():
    worst = max(check(seed) for seed in range(3))
    status = "ok" if worst < DEFAULT_TOLERANCE else "FAIL"
    print(f"  {name:<26} worst over 3 seeds = {worst:.3e}  [{status}]")
print(f"\ndone in {time.perf_counter() - t0:.1f}s; run `python -m driversight.harness.cli check` for 10 seeds")
