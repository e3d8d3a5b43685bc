"""
Small Monte Carlo studies
=========================

The harness runs whole replication studies from an ExperimentSpec.
Here: Wilks calibration and local power on the atomic two-state chain,
then a few hundred replications of the AR(1) coverage table. The full
tables are available through ``rebel mc --preset table1`` and
``--preset table2``.
"""

from rebel import FiniteMarkov, ModelSpec
from rebel.mc_harness import (ExperimentSpec, power_table, run_coverage, run_power_comparison,
                              run_qq, table1)

chain = ModelSpec(FiniteMarkov(((0.7, 0.3), (0.2, 0.8))))

# 2 r_n(theta0) against chi2_1
spec = ExperimentSpec(chain, n=2000, replications=500, theta0=0.6, methods=("ReBEL",),
                      seed=1, small_set_policy="atom", atom=0.0)
qq = run_qq(spec)
print("KS distance to chi2_1: %.4f" % qq.ks)
for p, (emp, ref) in sorted(qq.markers.items()):
    print("  %2d%% quantile  %.3f  (chi2 %.3f)" % (100 * p, emp, ref))

# empirical acceptance at theta0 + c/sqrt(n) next to the noncentral chi2 law;
# Sigma = 0.72 is the long-run variance of the indicator of state 1
spec = ExperimentSpec(chain, n=5000, replications=500, theta0=0.6, methods=("ReBEL",),
                      alternatives=(0.0, 1.0, 2.0, 3.0), seed=2,
                      small_set_policy="atom", atom=0.0)
rows, _ = run_power_comparison(spec, Sigma=0.72)
print(power_table(rows))

# AR(1) coverage, a few hundred replications per n
for n in (250, 1000):
    report = run_coverage(table1(n, replications=300, seed=4))
    print(report.table())
