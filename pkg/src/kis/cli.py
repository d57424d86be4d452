"""Command-line entry points.

Subcommands: ``simulate`` (synthetic benchmark data), ``fit`` (MCMC over
the hyperparameters), ``select`` (interval-based variable selection from
stored traces), and ``benchmark`` (marginal-likelihood scaling sweeps).

Every output file embeds the resolved configuration and seed: JSON files
carry them inline, CSV files as one leading ``# {json}`` comment line
(skipped by the package's readers).  Floats are written with round-trip
precision.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .features import EffectId
from .likelihood import Dataset, benchmark_marginal, fit_loglog_slope
from .sampler import SamplerConfig, Trace, posterior_summaries, rhat_table, run_chains
from .select import DEFAULT_Z, hierarchical_screen
from .skim import GLOBAL_NAMES, HyperState, SkimConfig

__all__ = [
    "SyntheticSpec",
    "simulate_dataset",
    "read_data_csv",
    "write_data_csv",
    "read_config_file",
    "write_trace_csv",
    "read_trace_csv",
    "main",
]


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings: X ~ N(0, signal_scale^2 I), response built from
    a fixed set of true mains plus all their pairwise interactions."""

    n: int = 200
    p: int = 50
    signal_scale: float = 5.0
    true_mains: tuple = None
    n_true: int = 5
    effect_magnitude: float = 1.0
    noise_variance: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.signal_scale <= 0:
            raise ValueError("signal scale must be positive (zero-signal grids are rejected)")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")
        if self.true_mains is not None:
            tm = tuple(sorted(int(i) for i in self.true_mains))
            if len(set(tm)) != len(tm):
                raise ValueError("true mains must be distinct")
            if tm and (tm[0] < 1 or tm[-1] > self.p):
                raise ValueError("true mains must lie in 1..p")
            object.__setattr__(self, "true_mains", tm)
            object.__setattr__(self, "n_true", len(tm))
        elif self.p < self.n_true:
            raise ValueError(f"p must be >= {self.n_true} to place the true mains")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "signal_scale": self.signal_scale,
            "true_mains": list(self.true_mains) if self.true_mains else None,
            "n_true": self.n_true,
            "effect_magnitude": self.effect_magnitude,
            "noise_variance": self.noise_variance,
            "seed": self.seed,
        }


def simulate_dataset(spec: SyntheticSpec):
    """Draw (X, y, truth) where y sums the true main and pairwise effects
    of X plus Gaussian noise."""
    rng = np.random.default_rng(spec.seed)
    if spec.true_mains is None:
        mains = tuple(sorted(int(i) + 1 for i in rng.choice(spec.p, size=spec.n_true, replace=False)))
    else:
        mains = spec.true_mains
    X = rng.normal(0.0, spec.signal_scale, (spec.n, spec.p))
    pairs = [
        (mains[a], mains[b]) for a in range(len(mains)) for b in range(a + 1, len(mains))
    ]
    y = np.zeros(spec.n)
    for i in mains:
        y += spec.effect_magnitude * X[:, i - 1]
    for i, j in pairs:
        y += spec.effect_magnitude * X[:, i - 1] * X[:, j - 1]
    y += rng.normal(0.0, math.sqrt(spec.noise_variance), spec.n)
    truth = {
        "true_mains": list(mains),
        "true_pairs": [list(pr) for pr in pairs],
        "magnitude": spec.effect_magnitude,
        "noise_variance": spec.noise_variance,
    }
    return X, y, truth


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def _meta_line(meta: dict) -> str:
    return "# " + json.dumps(meta)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_data_csv(path, X, y, meta: dict, response: str = "y"):
    X = np.asarray(X, dtype=float)
    header = [f"x{i}" for i in range(1, X.shape[1] + 1)] + [response]
    with open(path, "w") as fh:
        fh.write(_meta_line(meta) + "\n")
        fh.write(",".join(header) + "\n")
        for row, yv in zip(X, y):
            fh.write(",".join(_fmt(v) for v in row) + "," + _fmt(yv) + "\n")


def read_data_csv(path, response: str = None):
    """Parse a data CSV: header row, numeric cells, '#' comment lines
    skipped.  Non-numeric cells, ragged rows, and missing values are
    hard errors reporting the offending row and column."""
    with open(path) as fh:
        lines = [
            (k + 1, line.rstrip("\n"))
            for k, line in enumerate(fh)
            if line.strip() and not line.lstrip().startswith("#")
        ]
    if not lines:
        raise ValueError(f"{path}: no data")
    header = [c.strip() for c in lines[0][1].split(",")]
    if response is None:
        resp_idx = len(header) - 1
    else:
        if response not in header:
            raise ValueError(f"{path}: response column {response!r} not in header {header}")
        resp_idx = header.index(response)
    rows = []
    for lineno, line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(
                f"{path}:{lineno}: expected {len(header)} cells, found {len(cells)}"
            )
        parsed = []
        for col, cell in zip(header, cells):
            cell = cell.strip()
            if not cell:
                raise ValueError(f"{path}:{lineno}: missing value in column {col!r}")
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-numeric cell {cell!r} in column {col!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: header but no observations")
    M = np.asarray(rows, dtype=float)
    y = M[:, resp_idx]
    X = np.delete(M, resp_idx, axis=1)
    covariates = [h for k, h in enumerate(header) if k != resp_idx]
    return X, y, covariates, header[resp_idx]


def read_config_file(path) -> dict:
    """Key-value config: JSON when the file starts with '{', otherwise
    simple ``key = value`` lines (comments with '#')."""
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        value = value.strip("\"'")
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


_TRACE_COLUMNS = ["iteration", "log_post", "accept"] + list(GLOBAL_NAMES)


def write_trace_csv(path, trace: Trace, meta: dict):
    p = trace.z.shape[1] - 6
    header = _TRACE_COLUMNS + [f"lambda_{i}" for i in range(1, p + 1)]
    with open(path, "w") as fh:
        fh.write(_meta_line(meta) + "\n")
        fh.write(",".join(header) + "\n")
        for it, state in enumerate(trace.draws):
            vals = [float(it), trace.log_post[it], trace.accept_stats[it]]
            vals += [getattr(state, name) for name in GLOBAL_NAMES]
            vals += list(state.lam)
            fh.write(",".join(_fmt(v) for v in vals) + "\n")


def read_trace_csv(path, chain_id: int = 0) -> Trace:
    return _read_trace(path, chain_id)


def _read_trace(path, chain_id: int) -> Trace:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    header = lines[0].split(",")
    ncol = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != ncol:
            raise ValueError(f"{path}:{lineno}: ragged row")
        rows.append([float(c) for c in cells])
    M = np.asarray(rows)
    cols = {name: M[:, k] for k, name in enumerate(header)}
    p = ncol - len(_TRACE_COLUMNS)
    lam = np.column_stack([cols[f"lambda_{i}"] for i in range(1, p + 1)])
    draws = []
    for r in range(M.shape[0]):
        draws.append(
            HyperState(
                m2=cols["m2"][r], xi2=cols["xi2"][r], psi2=cols["psi2"][r],
                c2=cols["c2"][r], sigma=cols["sigma"][r], eta1=cols["eta1"][r],
                lam=lam[r],
            )
        )
    z = np.column_stack(
        [np.log(cols[name]) for name in GLOBAL_NAMES] + [np.log(lam)]
    )
    return Trace(
        chain_id=chain_id,
        seed=(),
        z=z,
        log_post=cols["log_post"],
        accept_stats=cols["accept"],
        draws=draws,
    )


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_simulate(args) -> int:
    true_mains = (
        tuple(int(v) for v in args.true_mains.split(",")) if args.true_mains else None
    )
    spec = SyntheticSpec(
        n=args.n,
        p=args.p,
        signal_scale=args.signal_scale,
        true_mains=true_mains,
        effect_magnitude=args.magnitude,
        noise_variance=args.noise_variance,
        seed=0 if args.seed is None else args.seed,
    )
    X, y, truth = simulate_dataset(spec)
    out = _outdir(args)
    meta = {"command": "simulate", "config": spec.to_dict(), "seed": spec.seed}
    write_data_csv(os.path.join(out, "data.csv"), X, y, meta)
    truth.update(meta)
    with open(os.path.join(out, "truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2)
    print(f"wrote {out}/data.csv and {out}/truth.json")
    return 0


def _standardize(X):
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    if np.any(sds == 0):
        bad = int(np.flatnonzero(sds == 0)[0]) + 1
        raise ValueError(f"cannot standardize constant column x{bad}")
    return (X - means) / sds, means, sds


def _load_dataset(args, standardization=None):
    X, y, _, resp = read_data_csv(args.data, response=args.response)
    applied = {"applied": False, "means": None, "sds": None}
    if standardization is not None and standardization.get("applied"):
        means = np.asarray(standardization["means"], dtype=float)
        sds = np.asarray(standardization["sds"], dtype=float)
        X = (X - means) / sds
        applied = standardization
        flags = np.ones(X.shape[1], dtype=bool)
    elif getattr(args, "standardize", False):
        X, means, sds = _standardize(X)
        applied = {"applied": True, "means": means.tolist(), "sds": sds.tolist()}
        flags = np.ones(X.shape[1], dtype=bool)
    else:
        flags = np.zeros(X.shape[1], dtype=bool)
    return Dataset(X, y, standardized=flags), applied, resp


def _skim_config_from(args, n: int, p: int):
    overrides = read_config_file(args.config) if args.config else {}
    seed = overrides.pop("seed", None)
    if args.seed is not None:
        seed = args.seed
    known = {"s", "alpha1", "alpha2", "alpha3", "alpha4", "alpha5",
             "beta1", "beta2", "beta3", "beta4"}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return SkimConfig(p=p, N=n, **overrides), (0 if seed is None else int(seed))


def cmd_fit(args) -> int:
    dataset, standardization, resp = _load_dataset(args)
    skim_config, seed = _skim_config_from(args, dataset.n, dataset.p)
    sampler_config = SamplerConfig(
        algorithm=args.algorithm,
        chains=args.chains,
        warmup=args.warmup,
        iterations=args.iterations,
        target_accept=args.target_accept,
        seed=seed,
    )
    threads = args.threads or os.cpu_count() or 1
    traces = run_chains(dataset, skim_config, sampler_config, threads=threads)
    out = _outdir(args)
    resolved = {
        "command": "fit",
        "data": args.data,
        "response": resp,
        "skim_config": skim_config.to_dict(),
        "sampler_config": sampler_config.to_dict(),
        "standardization": standardization,
        "seed": seed,
    }
    for trace in traces:
        meta = dict(resolved, chain_id=trace.chain_id, chain_seed=list(trace.seed))
        write_trace_csv(
            os.path.join(out, f"trace_chain{trace.chain_id}.csv"), trace, meta
        )
    rhat = rhat_table(traces) if len(traces) >= 2 else {}
    mains = [EffectId.main(i) for i in range(1, dataset.p + 1)]
    summaries = posterior_summaries(traces, dataset, mains)
    summary_rows = [
        {
            "effect": e.label(),
            "mu_T": s.mean,
            "sigma_T": s.sd,
            "sd_across_draws": s.sd_across,
        }
        for e, s in summaries.items()
    ]
    report = dict(
        resolved,
        rhat=rhat,
        main_summaries=summary_rows,
        constraint_rejections=[t.constraint_rejections for t in traces],
        warnings=[t.warnings for t in traces],
    )
    with open(os.path.join(out, "fit.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    n_bad = sum(1 for v in rhat.values() if v >= 1.05)
    print(f"wrote {len(traces)} trace files and fit.json to {out}")
    if rhat:
        print(f"split-Rhat: max {max(rhat.values()):.4f} ({n_bad} of {len(rhat)} >= 1.05)")
    return 0


def cmd_select(args) -> int:
    meta_path = os.path.join(args.traces, "fit.json")
    with open(meta_path) as fh:
        fit_meta = json.load(fh)
    dataset, _, _ = _load_dataset(args, standardization=fit_meta.get("standardization"))
    traces = []
    for c in range(fit_meta["sampler_config"]["chains"]):
        path = os.path.join(args.traces, f"trace_chain{c}.csv")
        if not os.path.exists(path):
            raise ValueError(f"missing trace file {path}")
        traces.append(_read_trace(path, c))
    report = hierarchical_screen(traces, dataset, k=args.k, z=args.z)
    out = _outdir(args)
    resolved = {
        "command": "select",
        "k": args.k,
        "z": args.z,
        "data": args.data,
        "traces": args.traces,
        "fit_config": {k: fit_meta[k] for k in ("skim_config", "sampler_config")},
        "seed": fit_meta.get("seed"),
    }
    with open(os.path.join(out, "selection.json"), "w") as fh:
        fh.write(report.to_json(**resolved))
    with open(os.path.join(out, "selection.txt"), "w") as fh:
        fh.write(report.format_table() + "\n")
    print(report.format_table())
    n_main = len(report.selected_mains)
    n_pair = len(report.selected_pairs)
    print(f"selected {n_main} mains, {n_pair} pairs "
          f"({report.candidate_pair_count} pair candidates)")
    return 0


def cmd_benchmark(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    p_grid = [int(v) for v in args.p_grid.split(",")]
    out = _outdir(args)
    resolved = {
        "command": "benchmark",
        "methods": methods,
        "N": args.n,
        "p_grid": p_grid,
        "repetitions": args.reps,
        "seed": args.seed or 0,
    }
    all_cells = []
    slopes = {}
    for method in methods:
        cells = benchmark_marginal(method, args.n, p_grid, repetitions=args.reps,
                                   seed=resolved["seed"])
        all_cells += cells
        try:
            slopes[method] = fit_loglog_slope(cells)
        except ValueError:
            slopes[method] = None
    csv_path = os.path.join(out, "benchmark.csv")
    with open(csv_path, "w") as fh:
        fh.write(_meta_line(resolved) + "\n")
        fh.write("method,N,p,rep,seconds,bytes_peak_estimate\n")
        for c in all_cells:
            sec = "" if c.skipped else _fmt(c.seconds)
            fh.write(f"{c.method},{c.N},{c.p},{c.rep},{sec},{c.bytes_peak_estimate}\n")
    with open(os.path.join(out, "benchmark_summary.json"), "w") as fh:
        json.dump(dict(resolved, loglog_slopes=slopes), fh, indent=2)
    for method, slope in slopes.items():
        print(f"{method}: log-log slope {slope if slope is None else f'{slope:.3f}'}")
    print(f"wrote {csv_path} and benchmark_summary.json")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kis",
        description="Sparse Bayesian interaction regression with O(p) per-iteration MCMC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker parallelism (default: available cores)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--config", default=None,
                        help="key-value config file (s, alpha1..alpha5, beta1..beta4, seed)")

    sp = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    shared(sp)
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--p", type=int, default=50)
    sp.add_argument("--signal-scale", type=float, default=5.0,
                    help="covariate SD (signal-to-noise control)")
    sp.add_argument("--noise-variance", type=float, default=25.0)
    sp.add_argument("--magnitude", type=float, default=1.0)
    sp.add_argument("--true-mains", default=None,
                    help="comma-separated 1-based indices (default: 5 drawn by seed)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="run MCMC on a data CSV")
    shared(sp)
    sp.add_argument("data", help="input data CSV")
    sp.add_argument("--response", default=None, help="response column (default: last)")
    sp.add_argument("--chains", type=int, default=4)
    sp.add_argument("--warmup", type=int, default=1000)
    sp.add_argument("--iterations", type=int, default=1000)
    sp.add_argument("--algorithm", choices=["adaptive-rwm", "hmc"], default="adaptive-rwm")
    sp.add_argument("--target-accept", type=float, default=None)
    sp.add_argument("--standardize", action="store_true",
                    help="standardize covariate columns (recorded in metadata)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="variable selection from stored traces")
    shared(sp)
    sp.add_argument("--data", required=True, help="the data CSV used for the fit")
    sp.add_argument("--response", default=None)
    sp.add_argument("--traces", required=True, help="directory with trace files and fit.json")
    sp.add_argument("--k", type=int, default=5, help="number of screened main effects")
    sp.add_argument("--z", type=float, default=DEFAULT_Z)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("benchmark", help="marginal-likelihood scaling sweep")
    shared(sp)
    sp.add_argument("--methods", default="kis,woodbury")
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--p-grid", default="200,400,800,1600,3200,6400")
    sp.add_argument("--reps", type=int, default=3)
    sp.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
