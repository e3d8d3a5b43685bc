"""Block moments and the empirical log-likelihood ratio.

Given block moment vectors ``Y_1..Y_l`` the ratio is

    r(Y) = -max { sum_j log(l q_j) : q in simplex, sum_j q_j Y_j = 0 }
         =  sup_lambda sum_j log(1 + lambda' Y_j),

and the dual is solved by damped Newton with a backtracking line search
that never leaves the domain ``1 + lambda' Y_j > 0``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .chain_models import ChainPath
from .errors import NotEnoughBlocks, SingularVariance, ValidationError
from .regeneration import BlockPartition

GRAD_TOL = 1e-10
MAX_ITER = 100
ARMIJO = 1e-4
DOMAIN_EPS = 1e-10
LAMBDA_CAP = 1e8
STALL_STEPS = 50


@dataclass(frozen=True)
class MomentModel:
    """Estimating function ``m(x, theta)`` with ``E_mu[m(X, theta_0)] = 0``.

    ``m`` is vectorised: it takes an ``(n, d)`` array of states and a
    length-``p`` parameter and returns an ``(n, r)`` array. ``jacobian``,
    if given, returns the ``(n, r, p)`` array of ``dm/dtheta``.
    """

    m: Callable
    p: int = 1
    r: int = 1
    jacobian: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.p < 1 or self.r < self.p:
            raise ValidationError("moment model needs 1 <= p <= r")

    def values(self, states, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.asarray(self.m(np.atleast_2d(states), theta), dtype=float)
        return out.reshape(-1, self.r)

    def jacobian_values(self, states, theta, step=1e-6):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        states = np.atleast_2d(states)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(states, theta), dtype=float).reshape(
                -1, self.r, self.p)
        return finite_difference_jacobian(self, states, theta, step)


def finite_difference_jacobian(model, states, theta, step=1e-6):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.empty((np.atleast_2d(states).shape[0], model.r, model.p))
    for k in range(model.p):
        h = step * max(1.0, abs(theta[k]))
        e = np.zeros_like(theta)
        e[k] = h
        out[:, :, k] = (model.values(states, theta + e)
                        - model.values(states, theta - e)) / (2 * h)
    return out


def mean_model(p=1):
    """``m(x, theta) = x[:p] - theta`` (the mean of the first ``p`` coordinates)."""
    def m(states, theta):
        return states[:, :p] - theta

    def jac(states, theta):
        return np.broadcast_to(-np.eye(p), (states.shape[0], p, p))

    return MomentModel(m, p, p, jac, "mean")


def indicator_model(threshold, coord=0):
    """``m(x, theta) = 1{x[coord] >= threshold} - theta``."""
    def m(states, theta):
        return (states[:, coord:coord + 1] >= threshold) - theta

    def jac(states, theta):
        return np.full((states.shape[0], 1, 1), -1.0)

    return MomentModel(m, 1, 1, jac, f"indicator_ge({threshold:g})")


def polynomial_model(coeffs, coord=0):
    """``m(x, theta) = sum_k coeffs[k] x^k - theta``."""
    coeffs = [float(c) for c in coeffs]

    def m(states, theta):
        return np.polynomial.polynomial.polyval(states[:, coord:coord + 1], coeffs) - theta

    def jac(states, theta):
        return np.full((states.shape[0], 1, 1), -1.0)

    return MomentModel(m, 1, 1, jac, f"polynomial({','.join(map(str, coeffs))})")


def moment_from_spec(spec) -> MomentModel:
    """Build a preset moment model from a dict or a string.

    ``{"kind": "mean"}``, ``{"kind": "indicator_ge", "threshold": 10}``,
    ``{"kind": "polynomial", "coeffs": [0, 0, 1]}``; strings ``"mean"``,
    ``"indicator-ge:10"`` and ``"polynomial:0,0,1"`` are accepted too.
    """
    if isinstance(spec, MomentModel):
        return spec
    if isinstance(spec, str):
        kind, _, arg = spec.partition(":")
        spec = {"kind": kind.replace("-", "_")}
        if spec["kind"] == "indicator_ge":
            spec["threshold"] = float(arg)
        elif spec["kind"] == "polynomial":
            spec["coeffs"] = [float(c) for c in arg.split(",") if c]
    kind = spec.get("kind")
    coord = int(spec.get("coord", 0))
    if kind == "mean":
        return mean_model(int(spec.get("p", 1)))
    if kind == "indicator_ge":
        return indicator_model(float(spec["threshold"]), coord)
    if kind == "polynomial":
        if not spec.get("coeffs"):
            raise ValidationError("polynomial moment needs coefficients")
        return polynomial_model(spec["coeffs"], coord)
    raise ValidationError(f"unknown moment preset {kind!r}")

def block_moments(path: ChainPath, partition: BlockPartition, model: MomentModel,
                  theta) -> np.ndarray:
    """``Y_j = sum_{i in B_j} m(X_i, theta)`` over the complete blocks, shape (l, r).

    ``partition`` is anything exposing ``n``, ``complete_count`` and
    ``cut_points`` (regeneration partitions and fixed-length blocks).
    """
    if partition.n != path.n:
        raise ValidationError("partition does not match the path length")
    if partition.complete_count < 1:
        raise NotEnoughBlocks("no complete block")
    tau = np.asarray(partition.cut_points)
    first, last = int(tau[0]), int(tau[-1])
    vals = model.values(path.states[first:last], theta)
    # cut points are strictly increasing, so every reduceat slice is non-empty
    return np.add.reduceat(vals, tau[:-1] - first, axis=0)


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    UNBOUNDED = "Unbounded"
    NOT_ENOUGH_BLOCKS = "NotEnoughBlocks"


@dataclass(frozen=True)
class ELSolution:
    """Dual solution of the empirical likelihood program.

    ``ratio`` is ``inf`` when zero lies outside the interior of the convex
    hull of the block moments (``status == UNBOUNDED``); ``weights`` is then
    ``None``.
    """

    lam: np.ndarray
    ratio: float
    weights: np.ndarray | None
    status: Status
    iterations: int

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    @property
    def statistic(self):
        """``2 r``."""
        return 2.0 * self.ratio

    def to_dict(self):
        return {"lambda": self.lam.tolist(),
                "ratio": "inf" if not np.isfinite(self.ratio) else self.ratio,
                "weights": None if self.weights is None else self.weights.tolist(),
                "status": self.status.value, "iterations": self.iterations}

    def to_json(self):
        return json.dumps(self.to_dict())


def _as_blocks(Y):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2:
        raise ValidationError("block moments must be an (l, r) array")
    return Y


def _unbounded(Y, iterations):
    return ELSolution(np.full(Y.shape[1], np.nan), np.inf, None,
                      Status.UNBOUNDED, iterations)


def _whiten(Y):
    """Orthonormal coordinates ``Z`` (scaled by ``sqrt(l)``) of the numerical
    column space of ``Y`` and the map ``back`` with ``Y @ (back @ mu) = Z @ mu``.
    """
    l, r = Y.shape
    tol = max(l, r) * np.finfo(float).eps
    scale = np.abs(Y).max()
    U, S, Vt = np.linalg.svd(Y / scale, full_matrices=False)
    k = int(np.sum(S > S[0] * tol))
    Z = np.sqrt(l) * U[:, :k]
    # entries at rounding level carry no sign information
    Z[np.abs(Z) <= tol * np.abs(Z).max()] = 0.0
    return Z, np.sqrt(l) * Vt[:k].T / (S[:k] * scale)


def zero_in_hull_interior(Y) -> bool:
    """Whether 0 lies in the relative interior of the convex hull of the rows
    of ``Y`` (all-zero ``Y`` counts as inside).

    Solved as an LP in whitened coordinates: maximise ``t`` subject to
    ``sum q_j Z_j = 0``, ``sum q_j = 1`` and ``q_j >= t``.
    """
    Y = _as_blocks(Y)
    if not np.any(Y):
        return True
    Y = _whiten(Y)[0]
    l, r = Y.shape
    if r == 1:
        return bool(Y.min() < 0 < Y.max())
    c = np.zeros(l + 1)
    c[-1] = -1.0
    A_eq = np.zeros((r + 1, l + 1))
    A_eq[:r, :l] = Y.T
    A_eq[r, :l] = 1.0
    b_eq = np.zeros(r + 1)
    b_eq[r] = 1.0
    A_ub = np.hstack([-np.eye(l), np.ones((l, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(l), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, 1)] * l + [(None, 1)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-12)


def el_ratio(Y, tol=GRAD_TOL, max_iter=MAX_ITER) -> ELSolution:
    """Empirical log-likelihood ratio of block moments ``Y`` (shape (l, r)).

    Raises :class:`NotEnoughBlocks` when ``l < 1`` or ``r > l``.
    """
    Y = _as_blocks(Y)
    l, r = Y.shape
    if l < 1:
        raise NotEnoughBlocks("empirical likelihood needs at least one block")
    if r > l:
        raise NotEnoughBlocks(f"{l} blocks cannot identify {r} moment conditions")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("block moments must be finite")
    if not np.any(Y):
        return ELSolution(np.zeros(r), 0.0, np.full(l, 1.0 / l), Status.CONVERGED, 0)
    # Newton runs on whitened coordinates Z spanning the numerical column
    # space of Y; the ratio is invariant under this change of basis and
    # rank-deficient or badly scaled moments stay well conditioned
    Z, back = _whiten(Y)
    k = Z.shape[1]
    if k == 1 and not (Z.min() < 0 < Z.max()):
        return _unbounded(Y, 0)

    mu = np.zeros(k)
    f = 0.0
    best_gnorm = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        denom = 1.0 + Z @ mu
        g = Z.T @ (1.0 / denom)
        gnorm = float(np.linalg.norm(g))
        # sum_j q_j = 1 - mu'g / l, so the scaled test also pins the weights
        if gnorm * max(1.0, float(np.linalg.norm(mu))) < tol:
            return _solution(Z, mu, back, it - 1)
        W = Z / denom[:, None]
        H = W.T @ W
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ step)
        if slope < 1e-24:
            # Newton decrement below rounding: f is maximised to machine precision
            return _checked(Y, Z, mu, back, it - 1)
        # predicted gain under rounding noise of f: Armijo cannot discriminate
        local = slope < 1e-10 * max(1.0, abs(f))
        t = 1.0
        while True:
            cand = mu + t * step
            dc = 1.0 + Z @ cand
            if dc.min() >= DOMAIN_EPS:
                fc = float(np.sum(np.log(dc)))
                if local or fc >= f + ARMIJO * t * slope:
                    break
            t *= 0.5
            if t < 1e-30:
                return _checked(Y, Z, mu, back, it)
        mu, f = cand, fc
        if np.linalg.norm(mu) > LAMBDA_CAP:
            return _unbounded(Y, it)
        if gnorm < best_gnorm:
            best_gnorm, stall = gnorm, 0
        else:
            stall += 1
            if stall >= STALL_STEPS:
                return _unbounded(Y, it)
    return _checked(Y, Z, mu, back, max_iter)


def _checked(Y, Z, mu, back, iterations):
    # exits without a small gradient: a drift towards the hull boundary
    # stalls the same way, so membership is settled by the LP
    if not zero_in_hull_interior(Z):
        return _unbounded(Y, iterations)
    return _solution(Z, mu, back, iterations)


def _solution(Z, mu, back, iterations):
    l = Z.shape[0]
    denom = 1.0 + Z @ mu
    ratio = float(np.sum(np.log(denom)))
    weights = 1.0 / (l * denom)
    return ELSolution(back @ mu, max(ratio, 0.0), weights, Status.CONVERGED, iterations)


def self_normalized_stat(Y) -> float:
    """``l * Ybar' S^-2 Ybar`` with ``S^2 = (1/l) sum_j Y_j Y_j'``.

    Second-order expansion of ``2 r``; used as a cross-check.
    """
    Y = _as_blocks(Y)
    l = Y.shape[0]
    ybar = Y.mean(axis=0)
    S2 = Y.T @ Y / l
    if np.linalg.matrix_rank(S2) < S2.shape[0]:
        raise SingularVariance("block second-moment matrix is singular")
    return float(l * ybar @ np.linalg.solve(S2, ybar))


def primal_objective(Y, weights):
    """``sum_j log(l q_j)`` when ``weights`` satisfy the constraints."""
    q = np.asarray(weights, dtype=float)
    return float(np.sum(np.log(len(q) * q)))
