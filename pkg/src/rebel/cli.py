"""Command-line front end.

Subcommands ``simulate``, ``split``, ``el-ci``, ``mc`` and ``qq``. Each
accepts ``--config FILE`` (a JSON object keyed by option name, or a
previous ``manifest.json``); flags given on the command line override the
file. Every run writes ``manifest.json`` with the resolved configuration,
which can be fed back through ``--config`` to repeat the run.

Exit codes: 0 success, 2 usage, 3 no regeneration, 4 empty region,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, inference, mc_harness
from .chain_models import (AR1Uniform, FiniteMarkov, ModelSpec, TGarchAR, read_path_csv,
                           simulate, stack, write_path_csv)
from .el_core import moment_from_spec
from .errors import (EmptyRegion, NoRegeneration, NoViableSmallSet, OrderTestInconclusive,
                     RebelError, ValidationError)
from .regeneration import (BlockPartition, OrderContext, approximate_blocks, atomic_blocks,
                           box_power, estimate_order, value_atom)

EXIT_OK, EXIT_USAGE, EXIT_NO_REGEN, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4, 5

DEFAULTS = {
    "simulate": {"model": "ar1", "n": 1000, "seed": 0, "rho": 0.9,
                 "half_width": float(np.sqrt(3.0)), "ar": 0.97, "intercept": 1.0,
                 "abs_coef": 0.5, "pos_coef": 0.4, "transition": None,
                 "initial_state": 0, "output": "."},
    "split": {"input": None, "atom_value": None, "stack": 1, "order": None,
              "max_order": 4, "box": None, "bandwidth": "auto", "grid": 50,
              "seed": 0, "moment": "mean", "output": "."},
    "el-ci": {"input": None, "blocks": None, "stack": 1, "moment": "mean",
              "indicator_ge": None, "level": 0.95, "methods": "rebel",
              "block_length": "auto", "n_boot": baselines.N_BOOT, "seed": 0,
              "curve": None, "curve_range": None, "output": "."},
    "mc": {"preset": "table1", "n": None, "reps": None, "seed": 0, "workers": 1,
           "output": "."},
    "qq": {"preset": "qqplot", "n": 10_000, "reps": 1000, "seed": 0, "workers": 1,
           "output": "."},
}


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="rebel", description=(
        "Regenerative block empirical likelihood for Markov chains."))
    p.add_argument("--version", action="version", version=f"rebel {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", default=S, help="JSON config or manifest file")
        sp.add_argument("-o", "--output", default=S, help="output directory")
        sp.add_argument("--seed", type=int, default=S)

    s = sub.add_parser("simulate", help="simulate a chain and write path.csv",
                       argument_default=S)
    common(s)
    s.add_argument("--model", choices=["ar1", "tgarch", "finite"])
    s.add_argument("--n", type=int)
    s.add_argument("--rho", type=float, help="AR(1) coefficient")
    s.add_argument("--half-width", type=float, dest="half_width",
                   help="AR(1) uniform innovation half-width")
    s.add_argument("--ar", type=float, help="TGARCH AR coefficient")
    s.add_argument("--intercept", type=float)
    s.add_argument("--abs-coef", type=float, dest="abs_coef")
    s.add_argument("--pos-coef", type=float, dest="pos_coef")
    s.add_argument("--transition", help="finite chain matrix as JSON, e.g. [[0.7,0.3],[0.2,0.8]]")
    s.add_argument("--initial-state", type=int, dest="initial_state")

    s = sub.add_parser("split", help="build regeneration blocks", argument_default=S)
    common(s)
    s.add_argument("--input", help="path CSV")
    s.add_argument("--atom-value", type=float, dest="atom_value",
                   help="exact atom {x = value}; skips splitting")
    s.add_argument("--stack", type=int, help="stacking order k")
    s.add_argument("--order", help="'auto' runs the order heuristic")
    s.add_argument("--max-order", type=int, dest="max_order")
    s.add_argument("--box", action="append",
                   help="candidate base interval LO,HI (repeatable); raised to the stacking order")
    s.add_argument("--bandwidth", help="'auto' or a positive number")
    s.add_argument("--grid", type=int)
    s.add_argument("--moment", help="moment used by --order auto")

    s = sub.add_parser("el-ci", help="confidence intervals", argument_default=S)
    common(s)
    s.add_argument("--input", help="path CSV")
    s.add_argument("--blocks", help="blocks CSV from 'split'")
    s.add_argument("--stack", type=int)
    s.add_argument("--moment", help="mean | indicator-ge:T | polynomial:c0,c1,...")
    s.add_argument("--indicator-ge", type=float, dest="indicator_ge",
                   help="shorthand for --moment indicator-ge:T")
    s.add_argument("--level", type=float)
    s.add_argument("--methods", help="comma list of rebel,bel,mean,trunc")
    s.add_argument("--block-length", dest="block_length")
    s.add_argument("--n-boot", type=int, dest="n_boot")
    s.add_argument("--curve", type=int, help="write the likelihood curve on this many points")
    s.add_argument("--curve-range", dest="curve_range", help="LO,HI for --curve")

    for name, helptext in (("mc", "coverage / type-II table"), ("qq", "QQ data for 2 r_n")):
        s = sub.add_parser(name, help=helptext, argument_default=S)
        common(s)
        s.add_argument("--preset", choices=(["table1", "table2", "qqplot"] if name == "mc"
                                            else ["qqplot", "tgarch"]))
        s.add_argument("--n", type=int, action="append" if name == "mc" else "store")
        s.add_argument("--reps", type=int)
        s.add_argument("--workers", type=int)
    return p


def _resolve(command, given):
    cfg = dict(DEFAULTS[command])
    if "config" in given:
        data = json.loads(Path(given["config"]).read_text(encoding="utf-8"))
        data = data.get("config", data)
        unknown = set(data) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    cfg.update({k: v for k, v in given.items() if k not in ("config", "command")})
    return cfg


def _write_manifest(out, command, cfg, **results):
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "version": __version__, "config": cfg, **results}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default)
                                       + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _model_spec(cfg):
    m = cfg["model"]
    if m == "ar1":
        kind = AR1Uniform(float(cfg["rho"]), float(cfg["half_width"]))
    elif m == "tgarch":
        kind = TGarchAR(float(cfg["ar"]), float(cfg["intercept"]), float(cfg["abs_coef"]),
                        float(cfg["pos_coef"]))
    elif m == "finite":
        _require(cfg, "transition")
        P = cfg["transition"]
        if isinstance(P, str):
            P = json.loads(P)
        kind = FiniteMarkov(tuple(tuple(float(v) for v in row) for row in P),
                            int(cfg["initial_state"]))
    else:
        raise UsageError(f"unknown model {m!r}")
    return ModelSpec(kind, int(cfg["seed"]))


def cmd_simulate(cfg):
    spec = _model_spec(cfg)
    path = simulate(spec, int(cfg["n"]))
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    write_path_csv(path, out / "path.csv")
    _write_manifest(out, "simulate", cfg, model_spec=spec.to_dict(), rows=path.n)
    print(out / "path.csv")
    return EXIT_OK


def _parse_interval(text):
    lo, hi = (float(v) for v in str(text).split(","))
    return lo, hi


def _bandwidth(value):
    return "auto" if value in (None, "auto") else float(value)


def _moment(cfg):
    if cfg.get("indicator_ge") is not None:
        return moment_from_spec({"kind": "indicator_ge",
                                 "threshold": float(cfg["indicator_ge"])})
    return moment_from_spec(cfg["moment"])


def cmd_split(cfg):
    _require(cfg, "input")
    raw = read_path_csv(cfg["input"])
    out = Path(cfg["output"])
    intervals = [_parse_interval(b) for b in cfg["box"]] if cfg.get("box") else None
    results = {}
    k = int(cfg["stack"])
    if cfg.get("order") == "auto":
        model = moment_from_spec(cfg["moment"])
        ctx = OrderContext(lambda s: model.values(s, np.zeros(model.p))[:, 0], intervals,
                           _bandwidth(cfg["bandwidth"]), int(cfg["seed"]),
                           grid=int(cfg["grid"]))
        est = estimate_order(raw, int(cfg["max_order"]), ctx)
        k = est.order
        results["order"] = {"order": est.order, "accepted": est.accepted,
                            "tests": est.results}
        print(f"order {est.order} ({'accepted' if est.accepted else 'not accepted'})")
    elif cfg.get("order") is not None:
        k = int(cfg["order"])
    path = stack(raw, k)
    results["stack"] = k
    if cfg.get("atom_value") is not None:
        part = atomic_blocks(path, value_atom(float(cfg["atom_value"])))
    else:
        cands = None if intervals is None else [box_power(lo, hi, k) for lo, hi in intervals]
        part, small, _ = approximate_blocks(path, cands, _bandwidth(cfg["bandwidth"]),
                                            int(cfg["seed"]), int(cfg["grid"]))
        out.mkdir(parents=True, exist_ok=True)
        small.to_json(out / "smallset.json")
        results["small_set"] = small.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    part.to_csv(out / "blocks.csv")
    results.update(complete_blocks=part.complete_count,
                   regeneration_times=len(part.regeneration_times),
                   diagnostics={k2: v for k2, v in part.diagnostics.items()
                                if np.isscalar(v)})
    _write_manifest(out, "split", cfg, **results)
    print(f"{part.complete_count} complete blocks from {len(part.regeneration_times)} "
          f"regeneration times -> {out / 'blocks.csv'}")
    return EXIT_OK


def cmd_el_ci(cfg):
    _require(cfg, "input")
    path = stack(read_path_csv(cfg["input"]), int(cfg["stack"]))
    raw = read_path_csv(cfg["input"])
    model = _moment(cfg)
    level = float(cfg["level"])
    methods = [m.strip().lower() for m in str(cfg["methods"]).split(",") if m.strip()]
    bad = set(methods) - {"rebel", "bel", "mean", "trunc"}
    if bad:
        raise UsageError(f"unknown methods {sorted(bad)}")
    part = None
    if {"rebel", "trunc"} & set(methods):
        _require(cfg, "blocks")
        part = BlockPartition.from_csv(cfg["blocks"])
        if part.n != path.n:
            raise UsageError(f"blocks cover {part.n} states but the (stacked) path has "
                             f"{path.n}; check --stack")
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    rng = int(cfg["seed"])
    report = {}
    for m in methods:
        if m == "rebel":
            ci = inference.confidence_interval(path, part, model, level)
            report[m] = {"estimate": ci.estimate, "ci": ci.to_dict(),
                         "blocks": part.complete_count}
        elif m == "bel":
            report[m] = baselines.bel_ci(raw, model, level, cfg["block_length"]).to_dict()
        elif m == "mean":
            report[m] = baselines.mean_ci(raw, model, level, cfg["block_length"],
                                          int(cfg["n_boot"]), rng).to_dict()
        else:
            report[m] = baselines.trunc_ci(path, part, model, level, cfg["block_length"],
                                           int(cfg["n_boot"]), rng).to_dict()
    if cfg.get("curve"):
        if part is None:
            raise UsageError("--curve needs --blocks")
        if cfg.get("curve_range"):
            lo, hi = _parse_interval(cfg["curve_range"])
        else:
            ci = inference.confidence_interval(path, part, model, level)
            half = 2.0 * max(ci.width, 1e-6)
            lo, hi = ci.estimate - half, ci.estimate + half
        rows = inference.likelihood_curve(path, part, model,
                                          np.linspace(lo, hi, int(cfg["curve"])))
        inference.write_curve_csv(rows, out / "curve.csv")
    (out / "ci.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n",
                                 encoding="utf-8")
    _write_manifest(out, "el-ci", cfg, results=report)
    print(json.dumps(report, indent=2, default=_json_default))
    return EXIT_OK


def cmd_mc(cfg):
    preset = mc_harness.PRESETS[cfg["preset"]]
    ns = cfg.get("n") or ([250, 500, 1000] if cfg["preset"] == "table1" else
                          [10_000] if cfg["preset"] == "qqplot" else [1000])
    if isinstance(ns, int):
        ns = [ns]
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    csv_parts, tables, summaries = [], [], {}
    for n in ns:
        kwargs = {"seed": int(cfg["seed"])}
        if cfg.get("reps"):
            kwargs["replications"] = int(cfg["reps"])
        spec = preset(int(n), **kwargs)
        report = mc_harness.run_coverage(spec, int(cfg["workers"]))
        text = report.to_csv()
        csv_parts.append(text if not csv_parts else text.split("\n", 1)[1])
        tables.append(report.table())
        summaries[str(n)] = {"diagnostics": report.diagnostics,
                             "runtime_seconds": report.runtime}
        print(report.table(), flush=True)
    (out / "report.csv").write_text("".join(csv_parts), encoding="utf-8")
    (out / "report.txt").write_text("\n\n".join(tables) + "\n", encoding="utf-8")
    _write_manifest(out, "mc", cfg, summaries=summaries)
    return EXIT_OK


def cmd_qq(cfg):
    spec = mc_harness.qqplot(int(cfg["n"]), int(cfg["reps"]), int(cfg["seed"]))
    res = mc_harness.run_qq(spec, int(cfg["workers"]))
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "qq.csv")
    markers = {f"{int(p * 100)}%": {"empirical": e, "chi2": q}
               for p, (e, q) in res.markers.items()}
    _write_manifest(out, "qq", cfg, ks=res.ks, markers=markers, failures=res.failures)
    print(f"KS distance {res.ks:.4f}; failures {res.failures}")
    for k, v in markers.items():
        print(f"{k:>4}: empirical {v['empirical']:.3f}  chi2 {v['chi2']:.3f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "split": cmd_split, "el-ci": cmd_el_ci,
            "mc": cmd_mc, "qq": cmd_qq}


def main(argv=None):
    parser = _parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        cfg = _resolve(command, args)
        return COMMANDS[command](cfg)
    except (UsageError, ValidationError, KeyError, ValueError, FileNotFoundError) as exc:
        print(f"rebel {command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoRegeneration, NoViableSmallSet, OrderTestInconclusive) as exc:
        print(f"rebel {command}: no regeneration: {exc}", file=sys.stderr)
        return EXIT_NO_REGEN
    except EmptyRegion as exc:
        print(f"rebel {command}: empty confidence region: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except RebelError as exc:
        print(f"rebel {command}: numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
