"""
Size and power of the linearity test
====================================

Each iteration simulates a panel, computes supW and a single bootstrap
supW*. The critical value is the 95th percentile of the pooled supW*
draws. The full experiment uses 500 iterations and 100 grid points; this
demo runs a reduced version (pass ``--full`` for the real thing).
"""

import os
import sys
import warnings

from dpthreshold import POWER_DESIGNS, run_power_experiment, run_size_experiment

warnings.simplefilter("ignore")

full = "--full" in sys.argv
kw = dict(iters=500 if full else 60, grid_num=100 if full else 20,
          n_jobs=os.cpu_count() or 1)

size = run_size_experiment(seed=2026, **kw)
print("size ", size.summary())
for design in POWER_DESIGNS:
    print("power", run_power_experiment(design, seed=2027, **kw).summary())
