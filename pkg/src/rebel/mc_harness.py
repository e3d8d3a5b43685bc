"""Monte Carlo replication engine: coverage, type-II error and QQ data.

Replication ``i`` of an experiment with master seed ``s`` draws its path
from stream ``(s, i)``, its splitting coins from ``(s, i, 1)`` and its
bootstrap resamples from ``(s, i, 2)`` (mean) and ``(s, i, 3)`` (trunc),
so every replication is a pure function of ``(spec, i)`` and the report
does not depend on the number of workers or the order of execution.

A replication in which a method fails (no regeneration, too few blocks,
non-convergence) is counted as a failure for that method and excluded
from its rate; an infinite ratio (zero outside the hull) is a rejection
and is tallied separately.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import baselines
from .chain_models import AR1Uniform, ModelSpec, TGarchAR, make_rng, simulate, stack
from .el_core import block_moments, el_ratio, moment_from_spec
from .errors import RebelError, ValidationError
from .inference import asymptotic_estimates, chi2_quantile, predicted_power, w1_statistic
from .regeneration import (approximate_blocks, atomic_blocks, estimate_transition_density,
                           fit_small_set, split, value_atom)

METHODS = ("ReBEL", "BEL", "Mean", "Trunc")
POLICIES = ("per_replication", "frozen", "atom")
FAILURE_FLAG = 0.05


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo cell family.

    ``alternatives`` are offsets ``c`` tested at ``theta0 + c / sqrt(n)``
    (0 gives coverage). ``small_set`` is the frozen box for
    ``small_set_policy="frozen"``; ``candidates`` the boxes searched
    per replication; ``atom`` the exact atom value for ``"atom"``.
    ``stack`` is the order the ReBEL/trunc chain is stacked to; BEL and
    the sample mean use the raw path.
    """

    model: ModelSpec
    n: int
    replications: int
    theta0: float
    methods: tuple = ("ReBEL", "BEL")
    level: float = 0.95
    alternatives: tuple = (0.0,)
    seed: int = 0
    moment: dict = field(default_factory=lambda: {"kind": "mean"})
    small_set_policy: str = "per_replication"
    small_set: tuple | None = None
    candidates: tuple | None = None
    atom: float = 0.0
    stack: int = 1
    bandwidth: object = "auto"
    grid: int = 50
    n_boot: int = baselines.N_BOOT
    block_length: object = "auto"

    def validate(self):
        self.model.validate()
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if self.n < 2:
            raise ValidationError("n must be >= 2")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValidationError(f"unknown methods {sorted(bad)}")
        if self.small_set_policy not in POLICIES:
            raise ValidationError(f"small_set_policy must be one of {POLICIES}")
        if self.small_set_policy == "frozen" and self.small_set is None:
            raise ValidationError("frozen policy needs a small_set box")
        if not all(np.isfinite(a) for a in self.alternatives):
            raise ValidationError("alternatives must be finite")
        if not 0.0 < self.level < 1.0:
            raise ValidationError("level must lie in (0, 1)")

    def thetas(self):
        return [self.theta0 + a / np.sqrt(self.n) for a in self.alternatives]

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


# ---------------------------------------------------------------------------
# one replication


def _partition(spec, chain, i):
    if spec.small_set_policy == "atom":
        return atomic_blocks(chain, value_atom(spec.atom)), {}
    coin = make_rng(spec.seed, i, 1)
    if spec.small_set_policy == "frozen":
        density = estimate_transition_density(chain, spec.bandwidth)
        small = fit_small_set(chain, np.asarray(spec.small_set, dtype=float),
                              density, spec.grid)
        part = split(chain, small, density, seed=coin)
    else:
        cands = None if spec.candidates is None else [np.asarray(c, dtype=float)
                                                      for c in spec.candidates]
        part, small, _ = approximate_blocks(chain, cands, spec.bandwidth, coin,
                                            spec.grid)
    return part, {"delta": small.delta, "box": small.box.tolist()}


def replicate(spec: ExperimentSpec, i: int) -> dict:
    """Run replication ``i``; returns per-method outcomes and diagnostics.

    ``outcomes[method]`` is either a list of ``"accept"``/``"reject"``/
    ``"unbounded"`` (one per alternative) or the name of the failure.
    """
    model = moment_from_spec(spec.moment)
    crit = chi2_quantile(spec.level, model.p)
    path = simulate(ModelSpec(spec.model.kind, spec.seed, i), spec.n)
    thetas = spec.thetas()
    out = {"i": i, "outcomes": {}, "stat0": np.nan, "sigma": None, "diag": {}}

    need_blocks = {"ReBEL", "Trunc"} & set(spec.methods)
    part = chain = None
    if need_blocks:
        chain = stack(path, spec.stack)
        try:
            part, info = _partition(spec, chain, i)
            out["diag"] = {"blocks": part.complete_count,
                           "visits": part.diagnostics.get("visits", part.complete_count + 1),
                           **info}
        except RebelError as exc:
            for m in need_blocks:
                out["outcomes"][m] = type(exc).__name__
            out["diag"] = {"error": type(exc).__name__,
                           "visits": getattr(exc, "visits", np.nan)}

    for method in spec.methods:
        if method in out["outcomes"]:
            continue
        try:
            if method == "ReBEL":
                res = []
                for k, t in enumerate(thetas):
                    if model.r > model.p:
                        stat = w1_statistic(chain, part, model, [t])
                    else:
                        stat = el_ratio(block_moments(chain, part, model, [t])).statistic
                    if spec.alternatives[k] == 0:
                        out["stat0"] = stat
                    res.append("unbounded" if not np.isfinite(stat) else
                               ("accept" if stat <= crit else "reject"))
                try:
                    est = asymptotic_estimates(chain, part, model, [spec.theta0])
                    out["sigma"] = est.Sigma_hat.tolist()
                except RebelError:
                    pass
            elif method == "BEL":
                res = []
                for t in thetas:
                    sol = baselines.bel_ratio(path, model, [t], spec.block_length)
                    res.append("unbounded" if not sol.converged else
                               ("accept" if sol.statistic <= crit else "reject"))
            elif method == "Mean":
                r = baselines.mean_ci(path, model, spec.level, spec.block_length,
                                      spec.n_boot, make_rng(spec.seed, i, 2))
                res = ["accept" if r.ci.contains(t) else "reject" for t in thetas]
            else:
                r = baselines.trunc_ci(chain, part, model, spec.level, spec.block_length,
                                       spec.n_boot, make_rng(spec.seed, i, 3))
                res = ["accept" if r.ci.contains(t) else "reject" for t in thetas]
            out["outcomes"][method] = res
        except RebelError as exc:
            out["outcomes"][method] = type(exc).__name__
    return out


def _run_chunk(args):
    spec, idx = args
    return [replicate(spec, i) for i in idx]


def run_replications(spec: ExperimentSpec, workers=1):
    spec.validate()
    idx = list(range(spec.replications))
    if workers is None or workers <= 1:
        return [replicate(spec, i) for i in idx]
    chunks = [idx[k::workers * 4] for k in range(workers * 4)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(spec, c) for c in chunks if c]))
    results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r["i"])


# ---------------------------------------------------------------------------
# reports


@dataclass
class Cell:
    method: str
    n: int
    alternative: float
    accepted: int
    successes: int
    unbounded: int
    failures: dict

    @property
    def rate(self):
        return self.accepted / self.successes if self.successes else np.nan

    @property
    def se(self):
        p = self.rate
        return float(np.sqrt(p * (1 - p) / self.successes)) if self.successes else np.nan

    @property
    def failure_count(self):
        return sum(self.failures.values())

    @property
    def flagged(self):
        total = self.successes + self.failure_count
        return total > 0 and self.failure_count / total > FAILURE_FLAG


@dataclass
class MCReport:
    spec: ExperimentSpec
    cells: list
    diagnostics: dict
    runtime: float
    stats0: np.ndarray = None
    sigmas: list = None

    def cell(self, method, alternative=0.0):
        for c in self.cells:
            if c.method == method and c.alternative == alternative:
                return c
        raise KeyError((method, alternative))

    def to_csv(self, filename=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "n", "alternative", "rate", "se", "successes",
                    "unbounded", "failures", "flagged"])
        for c in self.cells:
            fails = ";".join(f"{k}={v}" for k, v in sorted(c.failures.items()))
            w.writerow([c.method, c.n, c.alternative, f"{c.rate:.6f}", f"{c.se:.6f}",
                        c.successes, c.unbounded, fails, int(c.flagged)])
        text = buf.getvalue()
        if filename is not None:
            Path(filename).write_text(text, encoding="utf-8")
        return text

    def table(self):
        alts = list(self.spec.alternatives)
        head = f"{'method':<8}{'n':>7}" + "".join(
            f"{('cover' if a == 0 else f'accept+{a:g}'):>16}" for a in alts) + "  failures"
        lines = [head, "-" * len(head)]
        for m in self.spec.methods:
            cells = [self.cell(m, a) for a in alts]
            row = f"{m:<8}{self.spec.n:>7}"
            for c in cells:
                mark = "*" if c.flagged else " "
                row += f"{c.rate:.3f} ({c.se:.3f})".rjust(15) + mark
            row += f"  {cells[0].failure_count}"
            lines.append(row)
        d = self.diagnostics
        lines.append(f"blocks mean {d.get('blocks_mean', np.nan):.1f}, "
                     f"delta mean {d.get('delta_mean', np.nan):.4f}, "
                     f"visits mean {d.get('visits_mean', np.nan):.1f}, "
                     f"partition failure rate {d.get('partition_failure_rate', 0):.3f}")
        lines.append("(* = more than 5% failed replications)")
        return "\n".join(lines)


def _aggregate(spec, results, runtime):
    cells = []
    for m in spec.methods:
        for k, a in enumerate(spec.alternatives):
            acc = succ = unb = 0
            fails = {}
            for r in results:
                o = r["outcomes"][m]
                if isinstance(o, str):
                    fails[o] = fails.get(o, 0) + 1
                    continue
                succ += 1
                acc += o[k] == "accept"
                unb += o[k] == "unbounded"
            cells.append(Cell(m, spec.n, a, acc, succ, unb, fails))
    diags = [r["diag"] for r in results]
    ok = [d for d in diags if "error" not in d]

    def mean_of(key):
        vals = [d[key] for d in ok if key in d]
        return float(np.mean(vals)) if vals else np.nan

    summary = {"blocks_mean": mean_of("blocks"), "delta_mean": mean_of("delta"),
               "visits_mean": mean_of("visits"),
               "blocks_min": min((d["blocks"] for d in ok), default=np.nan),
               "partition_failure_rate": (len(diags) - len(ok)) / len(diags) if diags else 0.0}
    stats0 = np.array([r["stat0"] for r in results], dtype=float)
    sigmas = [r["sigma"] for r in results if r["sigma"] is not None]
    return MCReport(spec, cells, summary, runtime, stats0, sigmas)


def run_coverage(spec: ExperimentSpec, workers=1) -> MCReport:
    """Acceptance rates at ``theta0`` and each alternative, per method."""
    t0 = time.perf_counter()
    results = run_replications(spec, workers)
    return _aggregate(spec, results, time.perf_counter() - t0)


@dataclass
class QQResult:
    sample: np.ndarray
    reference: np.ndarray
    df: int
    ks: float
    markers: dict
    failures: int

    def to_csv(self, filename=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["empirical", "chi2"])
        for e, q in zip(self.sample, self.reference):
            w.writerow(["inf" if not np.isfinite(e) else repr(float(e)), repr(float(q))])
        text = buf.getvalue()
        if filename is not None:
            Path(filename).write_text(text, encoding="utf-8")
        return text


def qq_from_sample(sample, df=1, failures=0) -> QQResult:
    """Sorted statistics against chi2 plotting-position quantiles, the KS
    distance, and the empirical 50/90/95% quantiles next to the chi2 ones.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    m = x.size
    ref = stats.chi2.ppf((np.arange(1, m + 1) - 0.5) / m, df)
    F = stats.chi2.cdf(x, df)
    ks = float(max(np.max(np.arange(1, m + 1) / m - F), np.max(F - np.arange(m) / m)))
    markers = {}
    for p in (0.5, 0.9, 0.95):
        # interpolating towards an infinite statistic gives nan: report inf
        with np.errstate(invalid="ignore"):
            q = float(np.quantile(x, p))
        markers[p] = (q if np.isfinite(q) else np.inf, float(stats.chi2.ppf(p, df)))
    return QQResult(x, ref, df, ks, markers, failures)


def run_qq(spec: ExperimentSpec, workers=1) -> QQResult:
    """QQ data for the ReBEL statistic ``2 r_n(theta0)``."""
    spec = replace(spec, methods=("ReBEL",), alternatives=(0.0,))
    report = run_coverage(spec, workers)
    s = report.stats0
    ok = ~np.isnan(s)
    df = moment_from_spec(spec.moment).p
    return qq_from_sample(s[ok], df, int((~ok).sum()))


@dataclass
class PowerRow:
    alternative: float
    empirical_acceptance: float
    se: float
    predicted_acceptance: float


def run_power_comparison(spec: ExperimentSpec, Sigma=None, workers=1):
    """Empirical ReBEL acceptance at each offset next to ``1 - predicted_power``.

    ``Sigma`` is the long-run moment variance; if omitted the average of
    the per-replication block estimates is used. Returns ``(rows, report)``.
    """
    model = moment_from_spec(spec.moment)
    if model.p != 1:
        raise ValidationError("power comparison needs a scalar parameter")
    spec = replace(spec, methods=("ReBEL",))
    report = run_coverage(spec, workers)
    if Sigma is None:
        if not report.sigmas:
            raise ValidationError("no replication produced a variance estimate")
        Sigma = np.mean(np.asarray(report.sigmas), axis=0)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    # local shift of the moment mean: D * c with D = E[dm/dtheta]
    sample = simulate(ModelSpec(spec.model.kind, spec.seed, 0), spec.n).states
    D = float(model.jacobian_values(sample[:1], [spec.theta0])[0, 0, 0])
    rows = []
    for a in spec.alternatives:
        c = report.cell("ReBEL", a)
        pw = predicted_power([D * a], Sigma, spec.level)
        rows.append(PowerRow(a, c.rate, c.se, 1.0 - pw))
    return rows, report


def power_table(rows):
    lines = [f"{'offset':>8}{'empirical':>12}{'se':>8}{'predicted':>12}"]
    for r in rows:
        lines.append(f"{r.alternative:>8g}{r.empirical_acceptance:>12.3f}"
                     f"{r.se:>8.3f}{r.predicted_acceptance:>12.3f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# presets

TGARCH_BOX = ((-1.3, 4.7), (-1.3, 4.7))
TGARCH_THETA0 = 0.1479
AR1_CANDIDATES = tuple(((-a, a),) for a in np.arange(0.5, 4.01, 0.5))


def table1(n, replications=10_000, seed=0):
    """AR(1) coverage of the mean, ReBEL (per-replication small set) vs BEL."""
    return ExperimentSpec(ModelSpec(AR1Uniform(0.9)), n, replications, 0.0,
                          methods=("ReBEL", "BEL"), seed=seed,
                          small_set_policy="per_replication",
                          candidates=AR1_CANDIDATES)


def table2(n, replications=2000, seed=0):
    """TGARCH exceedance probability of 10: coverage and type-II errors."""
    return ExperimentSpec(ModelSpec(TGarchAR()), n, replications, TGARCH_THETA0,
                          methods=METHODS, alternatives=(0.0, 5.0, 10.0), seed=seed,
                          moment={"kind": "indicator_ge", "threshold": 10.0},
                          small_set_policy="frozen", small_set=TGARCH_BOX, stack=2)


def qqplot(n=10_000, replications=1000, seed=0):
    return replace(table2(n, replications, seed), methods=("ReBEL",),
                   alternatives=(0.0,))


PRESETS = {"table1": table1, "table2": table2, "qqplot": qqplot}
