"""Confidence regions, estimation and tests built on the block EL ratio.

Everything here treats the complete blocks of a partition as i.i.d.
observations ``M(B_j, theta)``; the partition may come from an atom, from
Nummelin splitting, or (for the block EL baseline) from fixed-length
blocks.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .chain_models import ChainPath
from .el_core import ELSolution, MomentModel, block_moments, el_ratio
from .errors import (DegreesOfFreedomZero, EmptyRegion, EstimateNotConverged,
                     NotEnoughBlocks, SingularVariance, ValidationError)

BISECT_TOL = 1e-9
MAX_BISECT = 200
# stand-in for an infinite ratio inside derivative-free optimisers
_PENALTY = 1e12


class StatisticKind(str, enum.Enum):
    PLAIN = "PlainRatio"
    CORRECTED = "Corrected"
    SUBVECTOR = "Subvector"


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    statistic_kind: StatisticKind = StatisticKind.PLAIN
    estimate: float = np.nan
    critical_value: float = np.nan
    evaluations: list = field(default_factory=list)

    @property
    def empty(self):
        return not (self.lower <= self.upper)

    def contains(self, theta):
        return (not self.empty) and self.lower <= theta <= self.upper

    @property
    def width(self):
        return self.upper - self.lower if not self.empty else 0.0

    def to_dict(self):
        def num(v):
            v = float(v)
            return v if np.isfinite(v) else ("nan" if np.isnan(v) else
                                             ("inf" if v > 0 else "-inf"))
        return {"lower": num(self.lower), "upper": num(self.upper),
                "level": float(self.level), "kind": StatisticKind(self.statistic_kind).value,
                "estimate": num(self.estimate), "critical_value": float(self.critical_value),
                "empty": self.empty}

    def to_json(self):
        return json.dumps(self.to_dict())


def empty_interval(level, kind, estimate=np.nan, crit=np.nan, evaluations=None):
    return ConfidenceInterval(np.nan, np.nan, level, kind, estimate, crit,
                              evaluations or [])


def chi2_quantile(level, df):
    return float(stats.chi2.ppf(level, df))


def ratio_at(path, partition, model, theta) -> ELSolution:
    return el_ratio(block_moments(path, partition, model, theta))


def two_r(path, partition, model, theta) -> float:
    return 2.0 * ratio_at(path, partition, model, theta).ratio


def _penalised(path, partition, model):
    def f(theta):
        r = ratio_at(path, partition, model, theta).ratio
        return r if np.isfinite(r) else _PENALTY
    return f


def _check_blocks(partition, need):
    if partition.complete_count < need:
        raise NotEnoughBlocks(f"{partition.complete_count} complete blocks, "
                              f"need at least {need}")


def mele(path: ChainPath, partition, model: MomentModel, theta_init=None,
         optimizer_budget=4000):
    """Maximum empirical likelihood estimate ``argmin_theta r_n(theta)``.

    In the just-identified case the minimum is zero and is attained where
    the block moments sum to zero, so that equation is solved directly;
    otherwise the ratio is minimised by Nelder-Mead. Returns
    ``(theta_tilde, ratio_at_min)``.
    """
    _check_blocks(partition, model.p + 1 if model.r > model.p else 1)
    x0 = (np.zeros(model.p) if theta_init is None
          else np.atleast_1d(np.asarray(theta_init, dtype=float)))
    if x0.shape != (model.p,):
        raise ValidationError(f"theta_init must have length {model.p}")

    if model.r == model.p:
        theta = _solve_moment_equation(path, partition, model, x0)
        if theta is not None:
            sol = ratio_at(path, partition, model, theta)
            if np.isfinite(sol.ratio):
                return theta, sol.ratio
        x0 = theta if theta is not None else x0
    elif theta_init is None:
        x0 = _first_p_root(path, partition, model, x0)

    f = _penalised(path, partition, model)
    res = optimize.minimize(f, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-13,
                                     "maxfev": optimizer_budget,
                                     "initial_simplex": _simplex(x0)})
    if not res.success or res.fun >= _PENALTY:
        raise EstimateNotConverged(f"MELE did not converge: {res.message}",
                                   best=(res.x, res.fun))
    return np.atleast_1d(res.x), float(res.fun)


def _simplex(x0):
    p = x0.size
    step = 0.05 * np.maximum(np.abs(x0), 1.0)
    return np.vstack([x0] + [x0 + step[k] * np.eye(p)[k] for k in range(p)])


def _moment_sum(path, partition, model):
    tau = np.asarray(partition.cut_points)
    seg = path.states[int(tau[0]):int(tau[-1])]

    def F(theta):
        return model.values(seg, theta).sum(axis=0) / seg.shape[0]
    return F


def _solve_moment_equation(path, partition, model, x0):
    F = _moment_sum(path, partition, model)
    res = optimize.root(F, x0, method="hybr", options={"xtol": 1e-14})
    # the residual decides: hybr reports failure when xtol is below rounding
    if np.all(np.isfinite(res.x)) and np.all(np.abs(F(res.x)) < 1e-10):
        return np.atleast_1d(res.x)
    return None


def _first_p_root(path, partition, model, x0):
    F = _moment_sum(path, partition, model)
    res = optimize.root(lambda t: F(t)[: model.p], x0, method="hybr")
    return np.atleast_1d(res.x) if res.success else x0


def overid_test(path, partition, model, theta_init=None):
    """Over-identification statistic ``2 r_n(theta_tilde)`` against chi2(r - p).

    Returns ``(statistic, df, p_value)``.
    """
    if model.r == model.p:
        raise DegreesOfFreedomZero("model is just identified (r == p)")
    df = model.r - model.p
    try:
        _, rmin = mele(path, partition, model, theta_init)
    except EstimateNotConverged as exc:
        if exc.best is not None and exc.best[1] >= _PENALTY:
            # zero leaves the hull for every theta: the moments are rejected outright
            return np.inf, df, 0.0
        raise
    stat = 2.0 * rmin
    return stat, df, float(stats.chi2.sf(stat, df))


def w1_statistic(path, partition, model, theta0, theta_tilde=None):
    """``2 r_n(theta0) - 2 r_n(theta_tilde)``."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta_tilde is None:
        theta_tilde, rmin = mele(path, partition, model)
    else:
        rmin = ratio_at(path, partition, model, theta_tilde).ratio
    r0 = ratio_at(path, partition, model, theta0).ratio
    if r0 < rmin:
        # theta0 beats the optimiser's minimum: restart from it
        _, rmin = mele(path, partition, model, theta_init=theta0)
        rmin = min(rmin, r0)
    return 2.0 * (r0 - rmin)


def profile_ratio(path, partition, model, gamma, gamma_index=None,
                  beta_init=None, nuisance_bounds=None, budget=4000):
    """``inf_beta r_n((gamma, beta))`` and the minimising ``beta``.

    ``gamma_index`` lists the coordinates of ``theta`` held fixed
    (default: the first ``len(gamma)``).
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    q = gamma.size
    idx = np.arange(q) if gamma_index is None else np.asarray(gamma_index)
    rest = np.setdiff1d(np.arange(model.p), idx)

    def full(beta):
        theta = np.empty(model.p)
        theta[idx] = gamma
        theta[rest] = beta
        return theta

    if rest.size == 0:
        return ratio_at(path, partition, model, gamma).ratio, np.empty(0)
    f = _penalised(path, partition, model)
    if rest.size == 1 and nuisance_bounds is not None:
        lo, hi = nuisance_bounds
        res = optimize.minimize_scalar(lambda b: f(full([b])), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-10})
        beta, val, ok = np.array([res.x]), res.fun, res.success
    else:
        b0 = np.zeros(rest.size) if beta_init is None else np.atleast_1d(beta_init)
        res = optimize.minimize(lambda b: f(full(b)), b0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-13,
                                         "maxfev": budget,
                                         "initial_simplex": _simplex(b0)})
        beta, val, ok = np.atleast_1d(res.x), res.fun, res.success
    if val >= _PENALTY:
        # no nuisance value puts zero inside the hull
        return np.inf, beta
    if not ok:
        raise EstimateNotConverged("profiling over the nuisance parameter failed",
                                   best=(beta, val))
    return float(val), beta


def w2_statistic(path, partition, model, gamma0, gamma_index=None,
                 nuisance_bounds=None, theta_tilde=None):
    """``2 (inf_beta r_n((gamma0, beta)) - r_n(theta_tilde))``."""
    gamma0 = np.atleast_1d(np.asarray(gamma0, dtype=float))
    if theta_tilde is None:
        theta_tilde, rmin = mele(path, partition, model)
    else:
        rmin = ratio_at(path, partition, model, theta_tilde).ratio
    idx = np.arange(gamma0.size) if gamma_index is None else np.asarray(gamma_index)
    rest = np.setdiff1d(np.arange(model.p), idx)
    beta_init = np.asarray(theta_tilde)[rest] if rest.size else None
    prof, _ = profile_ratio(path, partition, model, gamma0, idx, beta_init,
                            nuisance_bounds)
    stat = 2.0 * (prof - rmin)
    # the profile can undercut rmin by optimiser tolerance only
    return 0.0 if -1e-6 < stat < 0.0 else stat


@dataclass
class AsymptoticEstimates:
    """Block estimates of ``Sigma``, ``D`` and ``(D' Sigma^-1 D)^-1``.

    ``n_obs`` is the total length of the complete blocks; standard errors
    of the estimate are ``sqrt(diag(covariance) / n_obs)``.
    """

    Sigma_hat: np.ndarray
    D_hat: np.ndarray
    covariance: np.ndarray
    n_obs: int

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.covariance) / self.n_obs)


def asymptotic_estimates(path, partition, model, theta) -> AsymptoticEstimates:
    """``Sigma_hat = sum_j Y_j Y_j' / sum_j len(B_j)`` and ``D_hat`` averaged
    over the in-block observations.
    """
    _check_blocks(partition, 2)
    Y = block_moments(path, partition, model, theta)
    tau = np.asarray(partition.cut_points)
    n_obs = int(tau[-1] - tau[0])
    Sigma = Y.T @ Y / n_obs
    seg = path.states[int(tau[0]):int(tau[-1])]
    D = model.jacobian_values(seg, theta).mean(axis=0)
    if np.linalg.matrix_rank(Sigma) < Sigma.shape[0]:
        raise SingularVariance("estimated Sigma is singular")
    info = D.T @ np.linalg.solve(Sigma, D)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularVariance("D' Sigma^-1 D is singular") from exc
    return AsymptoticEstimates(Sigma, D, 0.5 * (cov + cov.T), n_obs)


def predicted_power(delta, Sigma, level=0.95, tail=1e-12) -> float:
    """Asymptotic power ``P(chi2'_p(delta' Sigma^-1 delta) > chi2_p(level))``.

    The noncentral tail is summed as the Poisson mixture
    ``sum_k Pois(k; ncp/2) P(chi2_{p+2k} > c)``, truncated once the
    remaining Poisson mass is below ``tail``.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    p = delta.size
    ncp = float(delta @ np.linalg.solve(Sigma, delta))
    crit = chi2_quantile(level, p)
    return noncentral_chi2_sf(crit, p, ncp, tail)


def noncentral_chi2_sf(x, df, ncp, tail=1e-12):
    half = 0.5 * ncp
    if half == 0:
        return float(stats.chi2.sf(x, df))
    kmax = int(stats.poisson.isf(tail, half)) + 1
    k = np.arange(kmax + 1)
    w = stats.poisson.pmf(k, half)
    return float(np.sum(w * stats.chi2.sf(x, df + 2 * k)))


# ---------------------------------------------------------------------------
# intervals


def _bisect(g, inside, outside, trace):
    """Root of ``g`` between ``inside`` (g <= 0) and ``outside`` (g > 0)."""
    a, b = inside, outside
    for _ in range(MAX_BISECT):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        gm = g(mid)
        trace.append((mid, gm))
        if abs(gm) <= BISECT_TOL:
            return mid
        if gm <= 0:
            a = mid
        else:
            b = mid
    return a


def interval_from_statistic(stat, center, level, df, scale, kind,
                            search_bounds=None, widen=3):
    """Region ``{theta : stat(theta) <= chi2_df(level)}`` around ``center``.

    Each endpoint is located by bisection from ``center`` outward. Without
    ``search_bounds`` the search starts at ``center -/+ 10 scale`` and is
    doubled up to ``widen`` times; a side that never crosses is reported
    as infinite.
    """
    crit = chi2_quantile(level, df)
    trace = []

    def g(t):
        v = stat(t) - crit
        return v if np.isfinite(v) else np.inf

    g0 = g(center)
    trace.append((center, g0))
    if g0 > 0:
        if all(not np.isfinite(v) for _, v in trace):
            raise EmptyRegion("likelihood ratio is infinite at the estimate")
        return empty_interval(level, kind, center, crit, trace)
    ends = []
    for sign in (-1.0, 1.0):
        if search_bounds is not None:
            far = search_bounds[0] if sign < 0 else search_bounds[1]
            tries = 0
        else:
            far = center + sign * 10.0 * scale
            tries = widen
        gf = g(far)
        trace.append((far, gf))
        while gf <= 0 and tries > 0:
            far = center + 2.0 * (far - center)
            gf = g(far)
            trace.append((far, gf))
            tries -= 1
        if gf <= 0:
            ends.append(sign * np.inf)
        else:
            ends.append(_bisect(g, center, far, trace))
    return ConfidenceInterval(ends[0], ends[1], level, kind, center, crit, trace)


def _scale(path, partition, model, theta):
    try:
        se = float(asymptotic_estimates(path, partition, model, theta).standard_errors[0])
    except (SingularVariance, NotEnoughBlocks):
        se = np.nan
    if not np.isfinite(se) or se <= 0:
        seg = model.values(path.states, theta)[:, 0]
        se = max(float(np.std(seg)), 1e-8) / np.sqrt(max(path.n, 1))
    return se


def confidence_interval(path, partition, model: MomentModel, level=0.95,
                        search_bounds=None, kind=StatisticKind.PLAIN):
    """Interval for a scalar parameter from ``2 r_n`` (``PLAIN``) or ``W_1``
    (``CORRECTED``), centred on the MELE.
    """
    if model.p != 1:
        raise ValidationError("confidence_interval needs a scalar parameter")
    _check_blocks(partition, 2)
    kind = StatisticKind(kind)
    theta_tilde, rmin = mele(path, partition, model)
    offset = 2.0 * rmin if kind is StatisticKind.CORRECTED else 0.0

    def stat(t):
        return two_r(path, partition, model, [t]) - offset

    scale = _scale(path, partition, model, theta_tilde)
    return interval_from_statistic(stat, float(theta_tilde[0]), level, 1, scale,
                                   kind, search_bounds)


def subvector_interval(path, partition, model, coord=0, level=0.95,
                       search_bounds=None, nuisance_bounds=None):
    """Interval for ``theta[coord]`` from the profiled statistic ``W_2``."""
    _check_blocks(partition, 2)
    theta_tilde, rmin = mele(path, partition, model)
    rest = np.setdiff1d(np.arange(model.p), [coord])
    beta0 = theta_tilde[rest]

    def stat(t):
        prof, _ = profile_ratio(path, partition, model, [t], [coord], beta0,
                                nuisance_bounds)
        return 2.0 * (prof - rmin)

    try:
        est = asymptotic_estimates(path, partition, model, theta_tilde)
        scale = float(est.standard_errors[coord])
    except (SingularVariance, NotEnoughBlocks):
        scale = _scale(path, partition, model, theta_tilde)
    return interval_from_statistic(stat, float(theta_tilde[coord]), level, 1,
                                   scale, StatisticKind.SUBVECTOR, search_bounds)


def likelihood_curve(path, partition, model, grid):
    """``(theta, 2 r_n(theta))`` pairs over a grid of scalar parameters."""
    return [(float(t), two_r(path, partition, model, [t])) for t in grid]


def write_curve_csv(rows, filename, column="two_r_n") -> Path:
    filename = Path(filename)
    with filename.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", column])
        for t, v in rows:
            w.writerow([repr(t), "inf" if not np.isfinite(v) else repr(v)])
    return filename
