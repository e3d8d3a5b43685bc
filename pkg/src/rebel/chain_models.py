"""Seeded simulation of the data-generating processes.

Three families are supported:

* :class:`FiniteMarkov` -- a chain on ``{0, ..., K-1}`` driven by a
  row-stochastic transition matrix.
* :class:`AR1Uniform` -- ``X_i = rho X_{i-1} + eps_i`` with uniform
  innovations on ``[-sqrt(3), sqrt(3)]`` (mean 0, variance 1) and ``X_0 = 0``.
* :class:`TGarchAR` -- an AR(1) with threshold-GARCH volatility,
  ``X_i = a X_{i-1} + eps_i``, ``eps_i = sigma_i nu_i``,
  ``sigma_i = w + b|eps_{i-1}| + c max(eps_{i-1}, 0)``, ``X_0 = eps_0 = 0``.

Randomness comes from a PCG64 generator seeded through
:class:`numpy.random.SeedSequence` with ``(seed, stream)``, so that
``(seed, stream)`` fully determines the output. Gaussians use numpy's
ziggurat sampler and uniforms ``Generator.random``; neither is changed so
frozen test values stay stable.
"""

from __future__ import annotations

import bisect
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ValidationError

SQRT3 = float(np.sqrt(3.0))


def make_rng(seed, *stream):
    """Return the generator for ``(seed, *stream)``.

    The stream indices form the seed sequence's spawn key, which is how
    numpy derives independent child streams; ``make_rng(s)`` and
    ``make_rng(s, 0)`` are the same stream.
    """
    key = tuple(int(k) for k in stream) or (0,)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ChainPath:
    """Observed trajectory ``X_1..X_n`` stored as an ``(n, dim)`` array.

    ``lags`` is the stacking order: a path built by :func:`stack` with
    ``k`` lags has ``lags == k`` and its state ``i`` is
    ``(X_{i+k-1}, ..., X_i)`` (most recent first) on a base chain of
    dimension ``dim // k``.
    """

    states: np.ndarray
    dim: int = 1
    origin: str = ""
    lags: int = 1

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        if states.ndim != 2 or states.shape[1] != self.dim:
            raise ValidationError(
                f"states must have shape (n, {self.dim}), got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValidationError("path contains non-finite values")
        if self.lags < 1 or self.dim % self.lags:
            raise ValidationError("dim must be a multiple of lags")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def n(self):
        return self.states.shape[0]

    @property
    def base_dim(self):
        return self.dim // self.lags

    @property
    def current(self):
        """The most recent base-chain value of each state, shape (n, base_dim)."""
        return self.states[:, : self.base_dim]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class FiniteMarkov:
    transition: tuple
    initial_state: int = 0

    def matrix(self):
        return np.asarray(self.transition, dtype=float)

    def validate(self):
        P = self.matrix()
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ValidationError("transition matrix must be square")
        if np.any(P < 0) or np.any(~np.isfinite(P)):
            raise ValidationError("transition entries must be finite and >= 0")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("transition rows must sum to 1")
        if not 0 <= self.initial_state < P.shape[0]:
            raise ValidationError("initial state out of range")

    def stationary(self):
        """Stationary distribution from the left Perron eigenvector."""
        P = self.matrix()
        w, v = np.linalg.eig(P.T)
        k = int(np.argmin(np.abs(w - 1.0)))
        pi = np.real(v[:, k])
        return pi / pi.sum()

    def long_run_variance(self, values):
        """``sum_k Cov_pi(f(X_0), f(X_k))`` over all lags ``k`` in Z, for ``f``
        given by its values on the states (shape (K,) or (K, r)).

        Uses the fundamental matrix ``Z = (I - P + 1 pi')^-1``.
        """
        P = self.matrix()
        pi = self.stationary()
        F = np.asarray(values, dtype=float).reshape(P.shape[0], -1)
        Fc = F - pi @ F
        K = P.shape[0]
        Z = np.linalg.inv(np.eye(K) - P + np.outer(np.ones(K), pi))
        A = Fc.T @ (pi[:, None] * (Z @ Fc))
        return A + A.T - Fc.T @ (pi[:, None] * Fc)


@dataclass(frozen=True)
class AR1Uniform:
    """AR(1) with ``U[-half_width, half_width]`` innovations.

    The default half-width ``sqrt(3)`` gives unit innovation variance.
    """

    rho: float = 0.9
    half_width: float = SQRT3

    def validate(self):
        if not -1.0 < self.rho < 1.0:
            raise ValidationError("AR(1) coefficient must lie in (-1, 1)")
        if not self.half_width > 0:
            raise ValidationError("half_width must be positive")


@dataclass(frozen=True)
class TGarchAR:
    ar: float = 0.97
    intercept: float = 1.0
    abs_coef: float = 0.5
    pos_coef: float = 0.4

    def validate(self):
        if not -1.0 < self.ar < 1.0:
            raise ValidationError("AR coefficient must lie in (-1, 1)")
        if self.intercept <= 0 or self.abs_coef < 0 or self.pos_coef < 0:
            raise ValidationError("volatility coefficients must be >= 0 "
                                  "with a positive intercept")


_KINDS = {"finite_markov": FiniteMarkov, "ar1_uniform": AR1Uniform,
          "tgarch_ar": TGarchAR}


@dataclass(frozen=True)
class ModelSpec:
    kind: FiniteMarkov | AR1Uniform | TGarchAR
    seed: int = 0
    stream: int = field(default=0, compare=True)

    def validate(self):
        if not isinstance(self.kind, tuple(_KINDS.values())):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        self.kind.validate()

    @property
    def name(self):
        for key, cls in _KINDS.items():
            if isinstance(self.kind, cls):
                return key
        raise ValidationError(f"unknown model kind {self.kind!r}")

    def with_stream(self, stream):
        return ModelSpec(self.kind, self.seed, stream)

    def to_dict(self):
        params = {k: (list(map(list, v)) if k == "transition" else v)
                  for k, v in self.kind.__dict__.items()}
        return {"model": self.name, "params": params, "seed": self.seed,
                "stream": self.stream}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        try:
            kind_cls = _KINDS[data["model"]]
        except KeyError:
            raise ValidationError(f"unknown model {data.get('model')!r}")
        params = dict(data.get("params", {}))
        if "transition" in params:
            params["transition"] = tuple(tuple(map(float, row))
                                         for row in params["transition"])
        spec = cls(kind_cls(**params), int(data.get("seed", 0)),
                   int(data.get("stream", 0)))
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _simulate_finite(kind, n, rng):
    P = kind.matrix()
    cum = [list(np.minimum(np.cumsum(row), 1.0)) for row in P]
    last = P.shape[0] - 1
    u = rng.random(n).tolist()
    out = [0] * n
    x = kind.initial_state
    for i in range(n):
        x = min(bisect.bisect_right(cum[x], u[i]), last)
        out[i] = x
    return np.asarray(out, dtype=float)


def _simulate_ar1(kind, n, rng):
    eps = kind.half_width * (2.0 * rng.random(n) - 1.0)
    # X_0 = 0, so X_1 = eps_1 and the filter needs no initial state
    return lfilter([1.0], [1.0, -kind.rho], eps)


def _simulate_tgarch(kind, n, rng, return_sigma=False):
    nu = rng.standard_normal(n).tolist()
    a, w, b, c = kind.ar, kind.intercept, kind.abs_coef, kind.pos_coef
    xs = [0.0] * n
    sig = [0.0] * n
    x = 0.0
    e = 0.0
    for i in range(n):
        s = w + b * abs(e) + (c * e if e > 0.0 else 0.0)
        e = s * nu[i]
        x = a * x + e
        xs[i] = x
        sig[i] = s
    if return_sigma:
        return np.asarray(xs), np.asarray(sig)
    return np.asarray(xs)


def simulate(spec: ModelSpec, n: int) -> ChainPath:
    """Simulate ``n`` observations ``X_1..X_n`` of ``spec``.

    The result is a pure function of ``(spec, n)``. The TGARCH model
    returns the scalar ``X`` path; stack it with :func:`stack` to obtain
    an order-one chain.
    """
    spec.validate()
    n = int(n)
    if n < 0:
        raise ValidationError("n must be >= 0")
    rng = make_rng(spec.seed, spec.stream)
    kind = spec.kind
    if isinstance(kind, FiniteMarkov):
        x = _simulate_finite(kind, n, rng)
    elif isinstance(kind, AR1Uniform):
        x = _simulate_ar1(kind, n, rng)
    else:
        x = _simulate_tgarch(kind, n, rng)
    return ChainPath(x.reshape(n, 1), 1, spec.to_json())


def tgarch_volatility(spec: ModelSpec, n: int) -> np.ndarray:
    """Volatility sequence ``sigma_1..sigma_n`` matching :func:`simulate`."""
    spec.validate()
    if not isinstance(spec.kind, TGarchAR):
        raise ValidationError("volatility is defined for TGarchAR only")
    rng = make_rng(spec.seed, spec.stream)
    return _simulate_tgarch(spec.kind, int(n), rng, return_sigma=True)[1]


def stack(path: ChainPath, k: int) -> ChainPath:
    """Stack ``k`` consecutive states, most recent first.

    State ``i`` of the result is ``(X_{i+k-1}, ..., X_i)``; the result has
    ``n - k + 1`` states of dimension ``k * dim``.

    >>> stack(ChainPath([1.0, 2.0, 3.0]), 2).states.tolist()
    [[2.0, 1.0], [3.0, 2.0]]
    """
    k = int(k)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > path.n:
        raise ValidationError(f"cannot stack {k} lags of a path of length {path.n}")
    if k == 1:
        return path
    m = path.n - k + 1
    cols = [path.states[k - 1 - j: k - 1 - j + m] for j in range(k)]
    return ChainPath(np.hstack(cols), path.dim * k, path.origin,
                     lags=path.lags * k)


def write_path_csv(path: ChainPath, filename) -> Path:
    filename = Path(filename)
    with filename.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(path.dim)])
        for row in path.states:
            writer.writerow([repr(float(v)) for v in row])
    return filename


def read_path_csv(filename, origin="") -> ChainPath:
    with Path(filename).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{filename}: missing header")
    dim = len(rows[0])
    data = np.array([[float(v) for v in r] for r in rows[1:] if r],
                    dtype=float).reshape(-1, dim)
    return ChainPath(data, dim, origin or str(filename))
