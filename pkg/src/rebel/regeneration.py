"""Regeneration blocks, exact and approximate.

Exact blocks come from visits to a known atom (:func:`atomic_blocks`).
For a general Harris chain the atom is manufactured by Nummelin splitting:
estimate the transition density with Gaussian kernels, pick a small set
``S`` with a uniform minorizing density, compute the minorization
constant ``delta`` on a grid, then flip a coin with probability
``delta * phi(X_{i+1}) / p_n(X_i, X_{i+1})`` at each visit to ``S``
(:func:`split`).

Stacked paths (see :func:`rebel.chain_models.stack`) are handled by
conditioning on the whole stacked state and estimating the density of the
newest base-chain coordinate only, since the remaining coordinates of the
next state are copies of the current one.

All indices in a :class:`BlockPartition` are 1-based and inclusive,
matching ``X_1..X_n``.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .chain_models import ChainPath, make_rng, stack
from .errors import (DegenerateDensity, NoRegeneration, NoViableSmallSet,
                     OrderTestInconclusive, ValidationError)

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12
DEFAULT_GRID = 50
# cap on the number of (x, y) grid points used to evaluate delta
MAX_GRID_POINTS = 2_000_000
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Cut of ``[1, n]`` at regeneration times ``tau(1) < ... < tau(l+1)``.

    ``blocks`` lists ``B_0``, the complete blocks ``B_1..B_l`` and the
    trailing ``B_{l+1}`` as ``(start, end)`` pairs; an empty block has
    ``end == start - 1``.
    """

    n: int
    regeneration_times: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        tau = np.asarray(self.regeneration_times, dtype=np.int64).ravel()
        if tau.size and (tau[0] < 1 or tau[-1] > self.n or np.any(np.diff(tau) <= 0)):
            raise ValidationError("regeneration times must be strictly "
                                  "increasing within [1, n]")
        tau.setflags(write=False)
        object.__setattr__(self, "regeneration_times", tau)

    def __eq__(self, other):
        if not isinstance(other, BlockPartition):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.regeneration_times,
                                                    other.regeneration_times)

    def __hash__(self):
        return hash((self.n, self.regeneration_times.tobytes()))

    @property
    def complete_count(self):
        return max(len(self.regeneration_times) - 1, 0)

    @property
    def blocks(self):
        tau = self.regeneration_times
        if tau.size == 0:
            return [(1, self.n)]
        out = [(1, int(tau[0]))]
        out += [(int(a) + 1, int(b)) for a, b in zip(tau[:-1], tau[1:])]
        out.append((int(tau[-1]) + 1, self.n))
        return out

    @property
    def complete_blocks(self):
        return self.blocks[1:-1] if self.regeneration_times.size else []

    @property
    def cut_points(self):
        """Block boundaries: complete block ``j`` is ``(cut[j], cut[j+1]]``."""
        return self.regeneration_times

    @property
    def lengths(self):
        return np.diff(self.regeneration_times)

    @property
    def labels(self):
        """Block index of every observation (0-based array over ``1..n``).

        Observations outside complete blocks get ``-1``.
        """
        lab = np.full(self.n, -1, dtype=np.int64)
        for j, (a, b) in enumerate(self.complete_blocks):
            lab[a - 1: b] = j
        return lab

    def to_csv(self, filename) -> Path:
        filename = Path(filename)
        with filename.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block", "start", "end", "length"])
            for j, (a, b) in enumerate(self.blocks):
                w.writerow([j, a, b, b - a + 1])
        return filename

    @classmethod
    def from_csv(cls, filename):
        with Path(filename).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValidationError(f"{filename}: no blocks")
        n = int(rows[-1]["end"])
        tau = [int(r["end"]) for r in rows[:-1]]
        return cls(n, np.asarray(tau, dtype=np.int64))


def partition_from_times(n, times, **diagnostics) -> BlockPartition:
    return BlockPartition(int(n), np.asarray(times, dtype=np.int64), diagnostics)


def atomic_blocks(path: ChainPath, atom_predicate) -> BlockPartition:
    """Blocks between successive visits to an atom.

    ``atom_predicate`` maps an ``(n, dim)`` array of states to a boolean
    array, or a single state to a bool (then applied row by row).
    """
    if path.n == 0:
        raise ValidationError("path is empty")
    try:
        hit = np.asarray(atom_predicate(path.states), dtype=bool).ravel()
        if hit.shape != (path.n,):
            raise TypeError
    except (TypeError, ValueError):
        hit = np.array([bool(atom_predicate(s)) for s in path.states])
    times = np.flatnonzero(hit) + 1
    if times.size == 0:
        raise NoRegeneration("the path never visits the atom", visits=0)
    return partition_from_times(path.n, times, visits=int(times.size))


def value_atom(value, coord=0):
    """Predicate for the atom ``{x : x[coord] == value}``."""
    def pred(states):
        return np.asarray(states)[..., coord] == value
    return pred


# ---------------------------------------------------------------------------
# transition density


def silverman_bandwidth(values):
    """Per-column ``1.06 * sd * n^(-1/5)``."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n = values.shape[0]
    return 1.06 * values.std(axis=0, ddof=1) * n ** (-0.2)


def _scaled_sqdist(a, b, h):
    """``||(a_i - b_j) / h||^2`` for all pairs, as a single matrix product
    of the augmented rows ``(a, |a|^2, 1)`` and ``(-2b, 1, |b|^2)``.
    """
    a = a / h
    b = b / h
    A = np.hstack([a, (a * a).sum(axis=1, keepdims=True), np.ones((a.shape[0], 1))])
    B = np.hstack([-2.0 * b, np.ones((b.shape[0], 1)), (b * b).sum(axis=1, keepdims=True)])
    d = A @ B.T
    np.maximum(d, 0.0, out=d)
    return d


@dataclass(frozen=True)
class TransitionDensityEstimate:
    """Nadaraya-Watson estimate of the transition density.

    ``p_n(x, y) = sum_i K(x - X_i) K(y - Y_i) / sum_i K(x - X_i)`` with
    product Gaussian kernels; ``X_i`` is the conditioning state and
    ``Y_i`` the newest coordinates of the next state.
    """

    x: np.ndarray
    y: np.ndarray
    hx: np.ndarray
    hy: np.ndarray

    @property
    def sample_pairs(self):
        return self.x, self.y

    @property
    def bandwidth(self):
        return np.concatenate([self.hx, self.hy])

    def _log_kx(self, xs):
        d = _scaled_sqdist(xs, self.x, self.hx)
        d *= -0.5
        return d

    def _ky(self, ys):
        norm = np.prod(self.hy) * (2 * np.pi) ** (self.hy.size / 2)
        k = _scaled_sqdist(ys, self.y, self.hy)
        k *= -0.5
        np.exp(k, out=k)
        k /= norm
        return k

    def _weights(self, xs):
        lk = self._log_kx(xs)
        lk -= lk.max(axis=1, keepdims=True)
        np.exp(lk, out=lk)
        lk /= lk.sum(axis=1, keepdims=True)
        return lk

    def evaluate(self, x, y):
        """Density at paired points ``x`` (m, dx) and ``y`` (m, dy)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if x.shape[1] != self.x.shape[1]:
            x = x.reshape(-1, self.x.shape[1])
        if y.shape[1] != self.y.shape[1]:
            y = y.reshape(-1, self.y.shape[1])
        out = np.empty(x.shape[0])
        for s in range(0, x.shape[0], _CHUNK):
            w = self._weights(x[s:s + _CHUNK])
            ky = self._ky(y[s:s + _CHUNK])
            out[s:s + _CHUNK] = np.einsum("ai,ai->a", w, ky)
        return out

    def evaluate_grid(self, xs, ys):
        """Matrix ``p_n(xs[a], ys[b])`` of shape (len(xs), len(ys))."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.x.shape[1])
        ys = np.asarray(ys, dtype=float).reshape(-1, self.y.shape[1])
        ky = self._ky(ys).T
        out = np.empty((xs.shape[0], ys.shape[0]))
        for s in range(0, xs.shape[0], _CHUNK):
            out[s:s + _CHUNK] = self._weights(xs[s:s + _CHUNK]) @ ky
        return out

    def __call__(self, x, y):
        return self.evaluate(x, y)

    def restricted(self, box, width=8.0):
        """Same estimate on ``box``, keeping only pairs whose conditioning
        state lies within ``width`` bandwidths of it.

        Dropped pairs carry kernel weight below ``exp(-width^2 / 2)``
        relative to any retained pair near the box.
        """
        box = np.atleast_2d(box)
        lo = box[:, 0] - width * self.hx
        hi = box[:, 1] + width * self.hx
        keep = np.all((self.x >= lo) & (self.x <= hi), axis=1)
        if keep.all() or not keep.any():
            return self
        return TransitionDensityEstimate(self.x[keep], self.y[keep], self.hx, self.hy)


def _pairs(path: ChainPath):
    return path.states[:-1], path.current[1:]


def estimate_transition_density(path: ChainPath, bandwidth="auto"):
    """Kernel estimate of the one-step transition density of ``path``.

    ``bandwidth`` is a positive scalar, one value per conditioning
    coordinate followed by one per new coordinate, or ``"auto"`` for
    Silverman's rule applied column by column.
    """
    if path.n < 2:
        raise ValidationError("need at least two observations")
    x, y = _pairs(path)
    dx, dy = x.shape[1], y.shape[1]
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise ValidationError(f"unknown bandwidth rule {bandwidth!r}")
        if x.shape[0] < 2 or np.all(path.states == path.states[0]):
            raise DegenerateDensity("constant path: bandwidth rule undefined")
        h = silverman_bandwidth(np.hstack([x, y]))
        if np.any(h <= 0):
            raise DegenerateDensity("a coordinate of the path is constant")
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float).ravel(),
                            (dx + dy,)) if np.size(bandwidth) in (1, dx + dy) else None
        if h is None:
            raise ValidationError("bandwidth must be scalar or have one entry per coordinate")
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            raise ValidationError("bandwidth must be positive")
    h = np.array(h, dtype=float)
    return TransitionDensityEstimate(np.array(x), np.array(y), h[:dx], h[dx:])


# ---------------------------------------------------------------------------
# small sets


@dataclass(frozen=True, eq=False)
class SmallSetSpec:
    """Small set ``S`` (a box) with minorizing density ``phi`` and constant.

    ``phi`` is ``"uniform"`` (density ``1/vol`` of the box projected on the
    newest coordinates), ``"atom"`` (point mass; every visit regenerates
    with probability ``delta``) or a callable ``y -> density``.
    """

    box: np.ndarray
    delta: float = 1.0
    phi: str | Callable = "uniform"
    grid: int = DEFAULT_GRID
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        box = np.atleast_2d(np.asarray(self.box, dtype=float))
        if box.shape[1] != 2 or np.any(box[:, 1] < box[:, 0]):
            raise ValidationError("box must be a (d, 2) array of [lo, hi] rows")
        object.__setattr__(self, "box", box)

    def __eq__(self, other):
        if not isinstance(other, SmallSetSpec):
            return NotImplemented
        return (np.array_equal(self.box, other.box) and self.delta == other.delta
                and self.phi == other.phi and self.grid == other.grid)

    def __hash__(self):
        return hash((self.box.tobytes(), self.delta, self.grid))

    @property
    def dim(self):
        return self.box.shape[0]

    def contains(self, states):
        states = np.atleast_2d(states)
        return np.all((states >= self.box[:, 0]) & (states <= self.box[:, 1]), axis=1)

    def new_box(self, base_dim):
        return self.box[:base_dim]

    def phi_values(self, y, base_dim):
        y = np.atleast_2d(y)
        ybox = self.new_box(base_dim)
        inside = np.all((y >= ybox[:, 0]) & (y <= ybox[:, 1]), axis=1)
        if callable(self.phi):
            return np.where(inside, np.asarray(self.phi(y), dtype=float), 0.0)
        if self.phi == "uniform":
            vol = float(np.prod(ybox[:, 1] - ybox[:, 0]))
            return inside / vol if vol > 0 else inside * np.inf
        raise ValidationError(f"phi {self.phi!r} has no density")

    def to_dict(self):
        return {"box": self.box.tolist(), "delta": float(self.delta),
                "phi": self.phi if isinstance(self.phi, str) else "custom",
                "grid": int(self.grid)}

    def to_json(self, filename=None):
        text = json.dumps(self.to_dict(), indent=2)
        if filename is not None:
            Path(filename).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["box"], dtype=float), float(data["delta"]),
                   data.get("phi", "uniform"), int(data.get("grid", DEFAULT_GRID)))


def box_power(lo, hi, k):
    """The box ``[lo, hi]^k``."""
    return np.tile([[float(lo), float(hi)]], (int(k), 1))


def default_candidates(path: ChainPath, levels=np.linspace(0.05, 0.45, 9)):
    """Boxes ``[q(1/2-c), q(1/2+c)]^k`` on sample quantiles of the base chain."""
    base = path.current[:, 0] if path.base_dim == 1 else path.current
    boxes = []
    for c in levels:
        lo, hi = np.quantile(base, [0.5 - c, 0.5 + c], axis=0)
        row = np.column_stack([np.atleast_1d(lo), np.atleast_1d(hi)])
        boxes.append(np.tile(row, (path.lags, 1)))
    return boxes


def _grid_axes(box, g):
    return [np.linspace(lo, hi, g) for lo, hi in box]


def _mesh(axes):
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def minorization_constant(density: TransitionDensityEstimate, box, base_dim,
                          grid=DEFAULT_GRID):
    """``min p_n(x, y) / phi(y)`` over a grid of ``S x S`` for uniform ``phi``.

    Returns ``(delta, grid_per_axis, min_density)``. The number of points
    per axis is reduced when ``grid^(dx + dy)`` would exceed
    ``MAX_GRID_POINTS``.
    """
    box = np.atleast_2d(box)
    ybox = box[:base_dim]
    total_dims = box.shape[0] + ybox.shape[0]
    g = int(grid)
    while g > 2 and g ** total_dims > MAX_GRID_POINTS:
        g -= 1
    xs = _mesh(_grid_axes(box, g))
    ys = _mesh(_grid_axes(ybox, g))
    p = np.maximum(density.restricted(box).evaluate_grid(xs, ys), DENSITY_FLOOR)
    vol = float(np.prod(ybox[:, 1] - ybox[:, 0]))
    pmin = float(p.min())
    return min(pmin * vol, 1.0), g, pmin


def _bernoulli_parameters(path, small_set, density):
    """Visit times (1-based) and the splitting probabilities at each."""
    inside = small_set.contains(path.states)
    if small_set.phi == "atom":
        visits = np.flatnonzero(inside) + 1
        return visits, np.full(visits.size, min(float(small_set.delta), 1.0)), 0
    visits = np.flatnonzero(inside[:-1]) + 1
    if visits.size == 0:
        return visits, np.empty(0), 0
    x = path.states[visits - 1]
    y = path.current[visits]
    phi = small_set.phi_values(y, path.base_dim)
    pn = np.maximum(density.restricted(small_set.box).evaluate(x, y), DENSITY_FLOOR)
    prob = small_set.delta * phi / pn
    clamped = int(np.sum(prob > 1.0))
    return visits, np.minimum(prob, 1.0), clamped


def select_small_set(path: ChainPath, density: TransitionDensityEstimate,
                     candidates: Sequence = None, grid=DEFAULT_GRID,
                     min_expected=2.0) -> SmallSetSpec:
    """Pick the candidate box with the largest expected number of regenerations.

    For each box the minorization constant is computed on the grid, then
    the expected count ``sum_{X_i in S} delta phi(X_{i+1}) / p_n(X_i, X_{i+1})``
    is evaluated along the path. Ties go to the smaller box.
    """
    if candidates is None:
        candidates = default_candidates(path)
    candidates = [np.atleast_2d(np.asarray(c, dtype=float)) for c in candidates]
    if not candidates:
        raise ValidationError("no candidate small sets")
    scored = []
    for box in candidates:
        if box.shape != (path.dim, 2):
            raise ValidationError(f"candidate box has shape {box.shape}, "
                                  f"expected ({path.dim}, 2)")
        spec = SmallSetSpec(box, 1.0, "uniform", grid)
        visits = int(spec.contains(path.states).sum())
        if visits < 2:
            scored.append((box, 0.0, -np.inf, visits, grid))
            continue
        delta, g, _ = minorization_constant(density, box, path.base_dim, grid)
        if delta <= 0:
            scored.append((box, delta, -np.inf, visits, g))
            continue
        _, prob, _ = _bernoulli_parameters(path, SmallSetSpec(box, delta, "uniform", g),
                                           density)
        scored.append((box, delta, float(prob.sum()), visits, g))
    viable = [s for s in scored if s[2] >= min_expected]
    if not viable:
        raise NoViableSmallSet(
            "no candidate small set yields enough expected regenerations: "
            + ", ".join(f"{s[0].tolist()}: delta={s[1]:.3g}, E={s[2]:.3g}" for s in scored))
    best = max(viable, key=lambda s: (s[2], -float(np.prod(s[0][:, 1] - s[0][:, 0]))))
    box, delta, expected, visits, g = best
    diag = {"expected_regenerations": expected, "visits": visits,
            "candidates": [{"box": s[0].tolist(), "delta": s[1],
                            "expected": s[2], "visits": s[3]} for s in scored]}
    return SmallSetSpec(box, delta, "uniform", g, diag)


def fit_small_set(path: ChainPath, box, density: TransitionDensityEstimate,
                  grid=DEFAULT_GRID) -> SmallSetSpec:
    """Uniform-phi small set on a fixed ``box`` with its grid ``delta``."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    delta, g, pmin = minorization_constant(density, box, path.base_dim, grid)
    return SmallSetSpec(box, delta, "uniform", g, {"min_density": pmin})


def split(path: ChainPath, small_set: SmallSetSpec,
          density: TransitionDensityEstimate = None, seed=0) -> BlockPartition:
    """Approximate regeneration blocks by Nummelin splitting.

    ``seed`` is an integer or a :class:`numpy.random.Generator`. One
    uniform is drawn per visit to the small set, in time order.
    """
    if path.n < 2:
        raise ValidationError("need at least two observations")
    if not 0 < small_set.delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    if small_set.phi != "atom" and density is None:
        raise ValidationError("a transition density estimate is required")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    visits, prob, clamped = _bernoulli_parameters(path, small_set, density)
    if clamped:
        logger.warning("%d splitting probabilities exceeded 1 and were clamped", clamped)
    u = rng.random(visits.size)
    times = visits[u < prob]
    diag = {"visits": int(visits.size), "regenerations": int(times.size),
            "delta": float(small_set.delta), "clamped": clamped,
            "expected_regenerations": float(prob.sum())}
    if times.size < 2:
        raise NoRegeneration(f"only {times.size} regeneration(s) from "
                             f"{visits.size} visits to the small set",
                             visits=int(times.size))
    return partition_from_times(path.n, times, **diag)


def approximate_blocks(path: ChainPath, candidates=None, bandwidth="auto",
                       seed=0, grid=DEFAULT_GRID):
    """Estimate the density, choose the small set and split, in one call.

    Returns ``(partition, small_set, density)``. With a single candidate
    the box is used as given.
    """
    density = estimate_transition_density(path, bandwidth)
    if candidates is not None and len(candidates) == 1:
        small = fit_small_set(path, candidates[0], density, grid)
    else:
        small = select_small_set(path, density, candidates, grid)
    return split(path, small, density, seed), small, density


# ---------------------------------------------------------------------------
# order heuristic


@dataclass
class OrderContext:
    """What the order heuristic needs to form block moments.

    ``moment`` maps the ``(n, dim)`` states to one real per state; block
    moments are centred at the truncated regenerative mean of ``moment``.
    ``candidates`` is a list of base-chain intervals ``(lo, hi)`` raised
    to the ``k``-th power at order ``k``, or ``None`` for quantile boxes.
    """

    moment: Callable = None
    candidates: Sequence | None = None
    bandwidth: object = "auto"
    seed: int = 0
    level: float = 0.05
    min_blocks: int = 10
    grid: int = DEFAULT_GRID


@dataclass
class OrderEstimate:
    order: int
    accepted: bool
    results: list


def _lag_one_ttest(y):
    """No-intercept regression ``Y_j = rho Y_{j-1} + e``; two-sided p-value."""
    x, z = y[:-1], y[1:]
    sxx = float(x @ x)
    m = z.size
    if sxx == 0 or m < 2:
        return 0.0, 1.0
    rho = float(x @ z) / sxx
    resid = z - rho * x
    s2 = float(resid @ resid) / (m - 1)
    if s2 == 0:
        return rho, 0.0 if rho != 0 else 1.0
    t = rho / np.sqrt(s2 / sxx)
    return rho, float(2 * stats.t.sf(abs(t), m - 1))


def estimate_order(path: ChainPath, max_k: int, ctx: OrderContext = None) -> OrderEstimate:
    """Smallest stacking order whose block moments look uncorrelated.

    For ``k = 1, 2, ...`` the path is stacked, split into approximate
    regeneration blocks and the lag-one autocorrelation of the block
    moments is t-tested at ``ctx.level``. The first order not rejected is
    returned; if every order up to ``max_k`` is rejected, ``max_k`` is
    returned with ``accepted=False`` and a warning.
    """
    from .baselines import trunc_estimate

    if max_k < 1:
        raise ValidationError("max_k must be >= 1")
    ctx = ctx or OrderContext()
    moment = ctx.moment or (lambda s: s[:, 0])
    results = []
    for k in range(1, max_k + 1):
        sp = stack(path, k)
        cands = None
        if ctx.candidates is not None:
            cands = [box_power(lo, hi, k) for lo, hi in ctx.candidates]
        try:
            part, small, _ = approximate_blocks(sp, cands, ctx.bandwidth,
                                                make_rng(ctx.seed, k), ctx.grid)
        except (NoRegeneration, NoViableSmallSet) as exc:
            raise OrderTestInconclusive(f"order {k}: {exc}", results) from exc
        if part.complete_count < ctx.min_blocks:
            raise OrderTestInconclusive(
                f"order {k}: only {part.complete_count} blocks", results)
        theta = trunc_estimate(sp, part, moment)
        g = np.asarray(moment(sp.states), dtype=float) - theta
        csum = np.concatenate([[0.0], np.cumsum(g)])
        tau = part.regeneration_times
        y = csum[tau[1:]] - csum[tau[:-1]]
        rho, pval = _lag_one_ttest(y)
        rejected = pval < ctx.level
        results.append({"k": k, "blocks": part.complete_count, "rho": rho,
                        "p_value": pval, "rejected": rejected,
                        "box": small.box.tolist(), "delta": small.delta})
        if not rejected:
            return OrderEstimate(k, True, results)
    warnings.warn(f"independence rejected at every order up to {max_k}")
    return OrderEstimate(max_k, False, results)
