"""
Empirical likelihood on an atomic chain
=======================================

A two-state chain visits state 0 again and again; every visit is a
regeneration time, so the path splits into i.i.d. blocks without any
approximation. We estimate the stationary probability of state 1.
"""

import numpy as np

from rebel import (FiniteMarkov, ModelSpec, atomic_blocks, block_moments, confidence_interval,
                   el_ratio, mean_model, mele, predicted_power, self_normalized_stat, simulate)
from rebel.inference import asymptotic_estimates
from rebel.regeneration import value_atom

chain = FiniteMarkov(((0.7, 0.3), (0.2, 0.8)))
pi = chain.stationary()
print("stationary law:", pi)          # (0.4, 0.6)

path = simulate(ModelSpec(chain, seed=1), 2000)
blocks = atomic_blocks(path, value_atom(0.0))
print("complete blocks:", blocks.complete_count)
print("first blocks:", blocks.blocks[:4])

# block sums of m(x, theta) = x - theta at the true value
model = mean_model()
Y = block_moments(path, blocks, model, [pi[1]])
sol = el_ratio(Y)
print("2 r_n(theta0) = %.4f   self-normalised = %.4f" % (sol.statistic, self_normalized_stat(Y)))
print("weights sum to", sol.weights.sum())

# the estimate is the block-ratio mean; the interval inverts 2 r_n <= chi2 quantile
theta, _ = mele(path, blocks, model)
ci = confidence_interval(path, blocks, model, level=0.95)
print("estimate %.4f, 95%% interval [%.4f, %.4f]" % (theta[0], ci.lower, ci.upper))

# Sigma from the blocks against the closed form 0.72
est = asymptotic_estimates(path, blocks, model, theta)
print("Sigma_hat %.3f  (long-run variance %.3f)"
      % (est.Sigma_hat[0, 0], chain.long_run_variance([0, 1])[0, 0]))

# power against theta0 + delta / sqrt(n)
for delta in (1.0, 2.0, 3.0):
    print("delta %.0f: predicted power %.3f" % (delta, predicted_power([delta], [[0.72]])))

# a quick coverage check over 500 replications
hits = 0
for seed in range(500):
    p = simulate(ModelSpec(chain, seed=seed), 2000)
    b = atomic_blocks(p, value_atom(0.0))
    hits += el_ratio(block_moments(p, b, model, [pi[1]])).statistic <= 3.8415
print("coverage over 500 paths:", hits / 500)
