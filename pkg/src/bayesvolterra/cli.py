"""Command-line interface: identify, predict, evaluate, simulate, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import prediction
from .data import (
    calibrate_components,
    center_output,
    compute_normalization,
    load_csv,
    normalize_input,
    random_cpd_system,
    save_csv,
    split_count,
    standardize_output,
    synthesize,
)
from .errors import BayesVolterraError
from .features import build_lagged_matrix
from .inference import FitConfig, identify
from .model import PriorConfig
from .persistence import load_manifest, load_model, save_model

TRACE_NAME = "trace.csv"


def _positive_int(label):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{label} must be an integer") from None
        if value < 1:
            raise argparse.ArgumentTypeError(f"{label} must be at least 1")
        return value

    return parse


def _nonnegative_int(label):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{label} must be an integer") from None
        if value < 0:
            raise argparse.ArgumentTypeError(f"{label} must be nonnegative")
        return value

    return parse


def _positive_float(label):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{label} must be a number") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"{label} must be positive")
        return value

    return parse


def _nonnegative_float(label):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{label} must be a number") from None
        if value < 0:
            raise argparse.ArgumentTypeError(f"{label} must be nonnegative")
        return value

    return parse


def _parse_priors(text):
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            "expected six comma-separated values: a0,b0,c0,d0,g0,h0"
        )
    try:
        a0, b0, c0, d0, g0, h0 = (float(p) for p in parts)
        return PriorConfig(
            noise_shape=a0, noise_rate=b0,
            col_shape=c0, col_rate=d0,
            row_shape=g0, row_rate=h0,
        )
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _parse_split(text):
    try:
        if any(c in text for c in ".eE"):
            value = float(text)
            if not 0.0 < value < 1.0:
                raise argparse.ArgumentTypeError(
                    "fractional split must be in (0, 1)"
                )
            return value
        value = int(text)
        if value < 1:
            raise argparse.ArgumentTypeError("split count must be at least 1")
        return value
    except ValueError:
        raise argparse.ArgumentTypeError(
            "split must be a sample count or a fraction"
        ) from None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bayesvolterra",
        description="Bayesian identification of truncated Volterra systems "
        "with low-rank tensor kernel coefficients.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", help="fit a model to a u,y record")
    p.add_argument("--data", required=True, type=Path, help="input CSV (header u,y)")
    p.add_argument("--order", required=True, type=_positive_int("order"),
                   help="Volterra order D")
    p.add_argument("--memory", required=True, type=_positive_int("memory"),
                   help="memory length M (the window adds a constant term)")
    p.add_argument("--rank", type=_positive_int("rank"), default=20,
                   help="initial CPD rank (default 20)")
    p.add_argument("--max-iter", type=_positive_int("max-iter"), default=200)
    p.add_argument("--tol", type=_positive_float("tol"), default=1e-6,
                   help="relative bound change declaring convergence")
    p.add_argument("--truncate-tol", type=_positive_float("truncate-tol"),
                   default=1e-3, help="relative column-RMS truncation threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_positive_int("seeds"), default=1,
                   help="run this many consecutive seeds and aggregate metrics")
    p.add_argument("--delta", choices=("on", "off"), default="on",
                   help="learn per-lag precisions (off fixes them at 1)")
    p.add_argument("--priors", type=_parse_priors, default=None,
                   metavar="a0,b0,c0,d0,g0,h0",
                   help="Gamma prior constants: noise, column, row pairs")
    p.add_argument("--split", type=_parse_split, default=None,
                   help="estimation size (count or fraction); metrics then "
                   "cover the remaining samples")
    p.add_argument("--skip-warmup", type=_nonnegative_int("skip-warmup"), default=0,
                   help="drop this many leading samples from the metrics")
    p.add_argument("--noise-update", choices=("sweep", "final"), default="sweep",
                   help="refresh the noise precision every sweep or once at the end")
    p.add_argument("--ordered-sums", action="store_true",
                   help="fixed summation order in the large reductions")
    p.add_argument("--out", type=Path, default=None,
                   help="model directory (best-bound seed when --seeds > 1)")
    p.add_argument("--metrics-out", type=Path, default=None,
                   help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("predict", help="per-sample predictive distribution")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path,
                   help="output CSV: y_mean,y_scale,y_dof per input row")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a stored model on a record")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--split", type=_parse_split, default=None,
                   help="skip this estimation prefix and score the remainder")
    p.add_argument("--skip-warmup", type=_nonnegative_int("skip-warmup"), default=0)
    p.add_argument("--out", type=Path, default=None,
                   help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="draw a synthetic record from a random system")
    p.add_argument("--order", required=True, type=_positive_int("order"))
    p.add_argument("--memory", required=True, type=_positive_int("memory"))
    p.add_argument("--rank", type=_positive_int("rank"), default=2,
                   help="true CPD rank of the random system (default 2)")
    p.add_argument("--noise-std", type=_nonnegative_float("noise-std"), default=0.01,
                   help="output noise std; the clean output is scaled to std 1")
    p.add_argument("--n", type=_positive_int("n"), default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", help="emit fit diagnostics from a model directory")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--trace", type=Path, default=None,
                   help="write the per-sweep CSV (iter,elbo,rank,e_tau) here")
    p.add_argument("--delta-profile", type=Path, default=None,
                   help="write the per-lag relevance CSV (lag,e_delta,row_rms) here")
    p.set_defaults(func=_cmd_report)

    return parser


def _write_metrics(metrics, path):
    text = json.dumps(metrics, indent=2)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")


def _write_trace(path, trace):
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", "elbo", "rank", "e_tau", "wall_s"])
        for row in zip(trace.iterations, trace.elbo, trace.rank,
                       trace.noise_mean, trace.wall_s):
            writer.writerow([row[0], repr(row[1]), row[2], repr(row[3]), repr(row[4])])


def _cmd_identify(args):
    dataset = load_csv(args.data)
    n = len(dataset)
    n_est = split_count(n, args.split) if args.split is not None else n
    u_est, y_est = dataset.u[:n_est], dataset.y[:n_est]
    record = compute_normalization(u_est, y_est)
    U_est = build_lagged_matrix(normalize_input(u_est, record), args.memory)
    y_model = standardize_output(y_est, record)
    priors = args.priors if args.priors is not None else PriorConfig()

    runs = []
    for k in range(args.seeds):
        config = FitConfig(
            order=args.order,
            rank=args.rank,
            max_iter=args.max_iter,
            elbo_rel_tol=args.tol,
            truncation_threshold=args.truncate_tol,
            lag_sparsity=(args.delta == "on"),
            noise_update=args.noise_update,
            ordered_sums=args.ordered_sums,
            seed=args.seed + k,
        )
        started = time.perf_counter()
        state, trace = identify(U_est, y_model, config, priors=priors,
                                normalization=record)
        runtime = time.perf_counter() - started
        if args.split is not None:
            report = prediction.evaluate(state, dataset.u, dataset.y,
                                         start=n_est, skip=args.skip_warmup)
        else:
            report = prediction.evaluate(state, u_est, y_est,
                                         start=0, skip=args.skip_warmup)
        runs.append({
            "seed": config.seed,
            "rmse": report.rmse,
            "nll": report.nll,
            "final_rank": state.rank,
            "elbo": trace.final_elbo,
            "runtime_s": runtime,
            "state": state,
            "trace": trace,
        })

    best = max(runs, key=lambda run: run["elbo"])
    if args.out is not None:
        info = {key: best[key] for key in
                ("seed", "rmse", "nll", "final_rank", "elbo", "runtime_s")}
        save_model(best["state"], args.out, info=info)
        _write_trace(args.out / TRACE_NAME, best["trace"])

    if len(runs) == 1:
        run = runs[0]
        metrics = {key: run[key] for key in
                   ("rmse", "nll", "final_rank", "elbo", "runtime_s", "seed")}
    else:
        metrics = {}
        for key in ("rmse", "nll", "elbo", "runtime_s"):
            values = np.array([run[key] for run in runs])
            metrics[key] = {"mean": float(values.mean()),
                            "std": float(values.std(ddof=1))}
        metrics["final_rank"] = [run["final_rank"] for run in runs]
        metrics["seed"] = [run["seed"] for run in runs]
    _write_metrics(metrics, args.metrics_out)
    return 0


def _cmd_predict(args):
    state = load_model(args.model)
    dataset = load_csv(args.data)
    record = state.normalization
    U = build_lagged_matrix(normalize_input(dataset.u, record), state.memory)
    locations, scale_sq, dof = prediction.predictive_arrays(state, U)
    locations = record.output_mean + record.output_std * locations
    scales = record.output_std * np.sqrt(scale_sq)
    with args.out.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["y_mean", "y_scale", "y_dof"])
        for loc, scale in zip(locations, scales):
            writer.writerow([repr(float(loc)), repr(float(scale)), repr(float(dof))])
    return 0


def _cmd_evaluate(args):
    state = load_model(args.model)
    info = load_manifest(args.model).get("info", {})
    dataset = load_csv(args.data)
    start = split_count(len(dataset), args.split) if args.split is not None else 0
    started = time.perf_counter()
    report = prediction.evaluate(state, dataset.u, dataset.y,
                                 start=start, skip=args.skip_warmup)
    wall = time.perf_counter() - started
    metrics = {
        "rmse": report.rmse,
        "nll": report.nll,
        "final_rank": state.rank,
        "elbo": info.get("elbo"),
        "runtime_s": info.get("runtime_s", wall),
        "seed": info.get("seed"),
    }
    _write_metrics(metrics, args.out)
    return 0


def _cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    u = rng.uniform(0.0, 1.0, args.n)
    system = random_cpd_system(args.order, args.memory, args.rank, rng,
                               noise_std=args.noise_std)
    system = calibrate_components(system, u,
                                  component_std=1.0 / np.sqrt(args.rank))
    system = center_output(system, u)
    dataset = synthesize(system, u, rng=rng)
    save_csv(args.out, dataset)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def _cmd_report(args):
    if args.trace is None and args.delta_profile is None:
        print("error: report needs --trace and/or --delta-profile", file=sys.stderr)
        return 2
    if args.trace is not None:
        source = args.model / TRACE_NAME
        if not source.is_file():
            raise BayesVolterraError(f"{source}: model was saved without a trace")
        with source.open(newline="") as handle:
            rows = list(csv.reader(handle))
        with args.trace.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iter", "elbo", "rank", "e_tau"])
            for row in rows[1:]:
                writer.writerow(row[:4])
    if args.delta_profile is not None:
        state = load_model(args.model)
        e_delta = state.row_prec_means()
        stacked = np.stack([f.mean for f in state.factors])
        row_rms = np.sqrt((stacked**2).mean(axis=(0, 2)))
        with args.delta_profile.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["lag", "e_delta", "row_rms"])
            for i in range(state.window):
                # the constant window entry is reported as lag -1
                writer.writerow([i - 1, repr(float(e_delta[i])),
                                 repr(float(row_rms[i]))])
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BayesVolterraError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
