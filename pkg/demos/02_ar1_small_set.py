"""
Approximate regeneration for an AR(1)
=====================================

A continuous chain has no atom. We estimate the transition density,
pick a small set S = [-a, a] with the largest expected number of
regenerations, and draw the Nummelin coin at each pair of visits.
The resulting blocks feed the same likelihood ratio as before.
"""

import numpy as np

from rebel import (AR1Uniform, ModelSpec, approximate_blocks, confidence_interval,
                   estimate_transition_density, mean_model, select_small_set, simulate, split)
from rebel.baselines import bel_ci, cube_root_length
from rebel.mc_harness import AR1_CANDIDATES

path = simulate(ModelSpec(AR1Uniform(0.9), seed=3), 1000)
density = estimate_transition_density(path)
print("bandwidths:", density.hx, density.hy)

# the candidates a = 0.5, 1.0, ..., 4.0 and what each would give
boxes = [np.asarray(c) for c in AR1_CANDIDATES]
small = select_small_set(path, density, boxes)
for c in small.diagnostics["candidates"]:
    print("a = %.1f  delta = %.4f  visits = %4d  expected regenerations = %5.1f"
          % (c["box"][0][1], c["delta"], c["visits"], c["expected"]))
print("chosen box:", small.box.ravel(), "delta = %.4f" % small.delta)

blocks = split(path, small, density, seed=5)
print("regenerations:", blocks.diagnostics["regenerations"],
      " complete blocks:", blocks.complete_count)

# the same thing in one call
blocks, small, _ = approximate_blocks(path, boxes, seed=5)

ci = confidence_interval(path, blocks, mean_model())
print("ReBEL 95%% interval for the mean: [%.3f, %.3f]" % (ci.lower, ci.upper))

# fixed blocks of length n^(1/3) for comparison
bel = bel_ci(path, mean_model())
print("BEL (L = %d) interval:            [%.3f, %.3f]"
      % (cube_root_length(path.n), bel.ci.lower, bel.ci.upper))
