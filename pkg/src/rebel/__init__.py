"""Regenerative block empirical likelihood for Markov chains."""

__version__ = "0.1.0"

from .chain_models import (AR1Uniform, ChainPath, FiniteMarkov, ModelSpec, TGarchAR,
                           make_rng, read_path_csv, simulate, stack, write_path_csv)
from .el_core import (ELSolution, MomentModel, Status, block_moments, el_ratio,
                      indicator_model, mean_model, moment_from_spec, polynomial_model,
                      self_normalized_stat)
from .errors import (DegenerateDensity, DegreesOfFreedomZero, EmptyRegion,
                     EstimateNotConverged, NoRegeneration, NotEnoughBlocks,
                     NoViableSmallSet, OrderTestInconclusive, RebelError, SingularVariance,
                     ValidationError)
from .inference import (AsymptoticEstimates, ConfidenceInterval, StatisticKind,
                        asymptotic_estimates, confidence_interval, mele, overid_test,
                        predicted_power, subvector_interval, w1_statistic, w2_statistic)
from .regeneration import (BlockPartition, SmallSetSpec, TransitionDensityEstimate,
                           approximate_blocks, atomic_blocks, estimate_order,
                           estimate_transition_density, select_small_set, split)
from .baselines import (BaselineResult, FixedBlocks, bel_ratio, bootstrap_variance,
                        mean_estimate, trunc_estimate)
