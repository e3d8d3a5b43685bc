"""Competitors: block EL on fixed-length blocks, the sample mean, and the
truncated regenerative mean.

The mean and trunc intervals are Gaussian, ``estimate +/- z * sd``, with the
variance from a non-overlapping block bootstrap.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .chain_models import ChainPath, make_rng
from .el_core import ELSolution, MomentModel, block_moments, el_ratio
from .errors import NotEnoughBlocks, ValidationError
from .inference import (ConfidenceInterval, StatisticKind, confidence_interval,
                        mele)

N_BOOT = 500


class Method(str, enum.Enum):
    REBEL = "ReBEL"
    BEL = "BEL"
    MEAN = "Mean"
    TRUNC = "Trunc"


def cube_root_length(n) -> int:
    """``floor(n ** (1/3))`` computed exactly (``1000 ** (1/3) < 10`` in floats)."""
    n = int(n)
    L = int(round(n ** (1.0 / 3.0)))
    while L ** 3 > n:
        L -= 1
    while (L + 1) ** 3 <= n:
        L += 1
    return max(L, 1)


@dataclass(frozen=True)
class FixedBlocks:
    """Consecutive non-overlapping blocks of length ``L``; the tail
    ``n mod L`` observations are dropped.

    Exposes the same ``n``/``complete_count``/``cut_points`` interface as a
    regeneration partition, with cut points ``0, L, 2L, ...`` (block ``j``
    covers ``X_{jL+1}..X_{(j+1)L}``).
    """

    n: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValidationError("block length must be >= 1")

    @property
    def complete_count(self):
        return self.n // self.length

    @property
    def cut_points(self):
        return np.arange(self.complete_count + 1) * self.length

    @property
    def lengths(self):
        return np.full(self.complete_count, self.length)


def _resolve_length(n, block_length):
    if block_length == "auto" or block_length is None:
        return cube_root_length(n)
    L = int(block_length)
    if L < 1:
        raise ValidationError("block_length must be >= 1")
    return L


def bel_blocks(path: ChainPath, block_length="auto") -> FixedBlocks:
    L = _resolve_length(path.n, block_length)
    blocks = FixedBlocks(path.n, L)
    if blocks.complete_count < 2:
        raise NotEnoughBlocks(f"n={path.n} gives {blocks.complete_count} blocks "
                              f"of length {L}; need at least 2")
    return blocks


def bel_ratio(path: ChainPath, model: MomentModel, theta,
              block_length="auto") -> ELSolution:
    """Empirical likelihood ratio on the sums over fixed-length blocks."""
    blocks = bel_blocks(path, block_length)
    return el_ratio(block_moments(path, blocks, model, theta))


def _moment_values(path, moment):
    """Scalar moment ``h(X_i)`` for every state (callable or MomentModel at 0)."""
    if isinstance(moment, MomentModel):
        vals = moment.values(path.states, np.zeros(moment.p))[:, 0]
    else:
        vals = np.asarray(moment(path.states), dtype=float).reshape(-1)
    if vals.shape[0] != path.n:
        raise ValidationError("moment must return one value per state")
    return vals


def trunc_estimate(path: ChainPath, partition, moment) -> float:
    """Average of ``moment`` over the complete blocks only."""
    if partition.complete_count < 1:
        raise NotEnoughBlocks("trunc needs at least one complete block")
    tau = np.asarray(partition.cut_points)
    vals = _moment_values(path, moment)
    return float(vals[int(tau[0]):int(tau[-1])].mean())


def mean_estimate(path: ChainPath, moment) -> float:
    if path.n == 0:
        raise ValidationError("mean of an empty path")
    return float(_moment_values(path, moment).mean())


def _block_bootstrap(vals, L, n_boot, rng):
    b = vals.shape[0] // L
    if b < 2:
        raise NotEnoughBlocks(f"{b} bootstrap blocks of length {L}; need at least 2")
    # sorting the pool leaves the resampling law unchanged and makes the
    # result exactly invariant to the order of the blocks
    means = np.sort(vals[: b * L].reshape(b, L).mean(axis=1))
    # a resample mean is the average of b block means drawn with replacement
    draws = rng.integers(0, b, size=(n_boot, b))
    return float(np.var(means[draws].mean(axis=1), ddof=1))


def bootstrap_variance(path: ChainPath, moment, block_length="auto",
                       n_boot=N_BOOT, seed=0) -> float:
    """Non-overlapping block bootstrap variance of the sample mean of ``moment``.

    ``floor(n / L)`` blocks are resampled with replacement, the mean is
    recomputed on each resample, and the variance over ``n_boot`` resamples
    is returned.
    """
    if n_boot < 100:
        raise ValidationError("n_boot must be >= 100")
    L = _resolve_length(path.n, block_length)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return _block_bootstrap(_moment_values(path, moment), L, n_boot, rng)


@dataclass
class BaselineResult:
    estimate: float
    ci: ConfidenceInterval
    method: Method
    variance_estimate: float | None = None

    def to_dict(self):
        return {"method": Method(self.method).value, "estimate": self.estimate,
                "variance": self.variance_estimate, "ci": self.ci.to_dict()}

    def to_json(self):
        return json.dumps(self.to_dict())


def gaussian_interval(estimate, variance, level=0.95):
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    half = z * np.sqrt(max(variance, 0.0))
    return ConfidenceInterval(estimate - half, estimate + half, level,
                              StatisticKind.PLAIN, estimate, z ** 2)


def mean_ci(path, moment, level=0.95, block_length="auto", n_boot=N_BOOT,
            seed=0) -> BaselineResult:
    est = mean_estimate(path, moment)
    var = bootstrap_variance(path, moment, block_length, n_boot, seed)
    return BaselineResult(est, gaussian_interval(est, var, level), Method.MEAN, var)


def trunc_ci(path, partition, moment, level=0.95, block_length="auto",
             n_boot=N_BOOT, seed=0) -> BaselineResult:
    """trunc with a block bootstrap variance computed on the complete-block
    segment ``X_{tau(1)+1}..X_{tau(l+1)}``.
    """
    est = trunc_estimate(path, partition, moment)
    tau = np.asarray(partition.cut_points)
    seg = ChainPath(path.states[int(tau[0]):int(tau[-1])], path.dim, path.origin,
                    path.lags)
    var = bootstrap_variance(seg, moment, block_length, n_boot, seed)
    return BaselineResult(est, gaussian_interval(est, var, level), Method.TRUNC, var)


def bel_ci(path, model: MomentModel, level=0.95, block_length="auto",
           search_bounds=None) -> BaselineResult:
    """Block EL interval for a scalar parameter, centred on the block MELE.

    For a just-identified model the centre solves the full-sample moment
    equation over the retained blocks.
    """
    if model.p != 1:
        raise ValidationError("bel_ci needs a scalar parameter")
    blocks = bel_blocks(path, block_length)
    ci = confidence_interval(path, blocks, model, level, search_bounds)
    theta, _ = mele(path, blocks, model)
    return BaselineResult(float(theta[0]), ci, Method.BEL, None)


def write_segments_csv(results, filename):
    """CI segments ``method,estimate,lower,upper`` (one row per result)."""
    with open(filename, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "estimate", "lower", "upper"])
        for r in results:
            w.writerow([Method(r.method).value, repr(r.estimate), repr(r.ci.lower),
                        repr(r.ci.upper)])
    return filename

