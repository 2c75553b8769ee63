"""Command-line entry point: fit, forecast, evaluate, explain, synth.

Exit codes: 0 on success, 1 on input problems, 2 on numeric failures.
Machine-readable results go to files; standard output carries only short
human-readable summaries.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import interpret, mdl, synth
from .autodiff import GradientError
from .forecasting import DEFAULT_HORIZONS, baseline_seasonal_naive, evaluate, forecast
from .model import TrainConfig, dump_json, load_model, save_model
from .tensor_data import IngestionError, TensorView, load_csv, normalize, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2


def _load_config(path, seed) -> TrainConfig:
    doc = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if seed is not None:
        doc["seed"] = seed
    if "hidden_candidates" in doc:
        doc["hidden_candidates"] = tuple(doc["hidden_candidates"])
    return TrainConfig.from_dict(doc)


def cmd_fit(args) -> int:
    config = _load_config(args.config, args.seed)
    tensor = load_csv(args.input, interpolate=args.interpolate)
    normalized, stats = normalize(tensor)
    model = mdl.select(normalized, config, workers=args.threads)
    model.norm_stats = stats
    model.time_labels = tensor.time_labels
    model.location_labels = tensor.location_labels
    model.keyword_labels = tensor.keyword_labels
    keep = max(config.p, 1)
    model.recent_observations = np.array(normalized.values[-keep:])
    save_model(model, args.out)

    print(f"fitted {model.d_l} area group(s) on {tensor.shape[0]} steps "
          f"x {tensor.shape[1]} locations x {tensor.shape[2]} keywords")
    print("d_l  data_bits      model_bits    total_bits    accepted")
    for row in model.selection_trace:
        print(f"{row['d_l']:<4d} {row['data_cost']:<14.2f}{row['model_cost']:<14.2f}"
              f"{row['total']:<14.2f}{'yes' if row['accepted'] else 'no'}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        print("horizon must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    model = load_model(args.model)
    result = forecast(model, horizon=args.horizon)
    values = result.denormalized if result.denormalized is not None else result.predictions
    view = TensorView(values, result.time_labels, model.location_labels,
                      model.keyword_labels, normalized=False)
    write_csv(args.out, view)
    print(f"wrote {args.horizon * values.shape[1] * values.shape[2]} forecast rows to {args.out}")
    return EXIT_OK


def _align_truth(model, truth_tensor):
    if tuple(truth_tensor.location_labels) != tuple(model.location_labels):
        raise IngestionError("truth locations do not match the model: "
                             f"{list(truth_tensor.location_labels)} vs "
                             f"{list(model.location_labels)}")
    if tuple(truth_tensor.keyword_labels) != tuple(model.keyword_labels):
        raise IngestionError("truth keywords do not match the model: "
                             f"{list(truth_tensor.keyword_labels)} vs "
                             f"{list(model.keyword_labels)}")
    last_fit_date = model.time_labels[-1]
    future = [i for i, d in enumerate(truth_tensor.time_labels) if str(d) > str(last_fit_date)]
    if not future:
        raise IngestionError(f"truth data does not extend past {last_fit_date}")
    return truth_tensor.values[future]


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    truth_raw = load_csv(args.truth, interpolate=args.interpolate)
    future = _align_truth(model, truth_raw)
    span = model.norm_stats.maximum - model.norm_stats.minimum
    span = np.where(span == 0.0, 1.0, span)
    truth_norm = (future - model.norm_stats.minimum) / span

    horizons = tuple(int(h) for h in args.horizons.split(","))
    l_f = min(max(horizons), future.shape[0])
    result = forecast(model, horizon=max(horizons))
    table = evaluate(result.predictions, truth_norm, horizons)
    naive = baseline_seasonal_naive(model.recent_observations, max(horizons), model.period)
    naive_table = evaluate(naive, truth_norm, horizons)

    doc = {"horizons": list(horizons), "fluxcube": table.to_dict(),
           "seasonal_naive": naive_table.to_dict()}
    if args.denormalized:
        denorm_truth = future
        denorm_table = evaluate(result.denormalized, denorm_truth, horizons)
        doc["fluxcube_denormalized"] = denorm_table.to_dict()
    dump_json(doc, args.out + ".json")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("horizon,metric,fluxcube,seasonal_naive\n")
        for metric in ("rmse", "mae"):
            for horizon in horizons:
                ours = table.value(horizon, metric)
                base = naive_table.value(horizon, metric)
                fh.write(f"{horizon},{metric},"
                         f"{'' if ours is None else repr(ours)},"
                         f"{'' if base is None else repr(base)}\n")

    print(f"evaluated {l_f} future steps (normalized units)")
    print(f"{'horizon':<8}{'metric':<7}{'fluxcube':<14}{'seasonal-naive':<14}")
    for metric in ("rmse", "mae"):
        for horizon in horizons:
            ours = table.value(horizon, metric)
            base = naive_table.value(horizon, metric)
            ours_s = "n/a" if ours is None else f"{ours:.6f}"
            base_s = "n/a" if base is None else f"{base:.6f}"
            print(f"{horizon:<8}{metric:<7}{ours_s:<14}{base_s:<14}")
    print(f"table written to {args.out} and {args.out}.json")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = load_model(args.model)
    try:
        written = interpret.write_artifacts(model, args.out_dir, eps_zero=args.eps_zero)
    except OSError as exc:
        print(f"cannot write to {args.out_dir}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = synth.SynthSpec.from_dict(json.load(fh))
    else:
        if args.scenario not in synth.SCENARIOS:
            print(f"unknown scenario {args.scenario!r}; available: "
                  f"{', '.join(sorted(synth.SCENARIOS))}", file=sys.stderr)
            return EXIT_INPUT
        spec = synth.SCENARIOS[args.scenario](seed=args.seed or 0)
    tensor = synth.generate(spec)
    write_csv(args.out, tensor)
    sidecar = os.path.splitext(args.out)[0] + ".truth.json"
    dump_json({"spec": spec.to_dict(), "trajectory_sha256": synth.trajectory_hash(tensor.values)},
              sidecar)
    print(f"wrote {tensor.shape[0] * tensor.shape[1] * tensor.shape[2]} rows to {args.out}")
    print(f"ground truth written to {sidecar}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxcube",
                                     description="Reaction-diffusion forecasting for "
                                                 "activity tensors")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model with automatic group-count selection")
    p_fit.add_argument("--input", required=True, help="long-format CSV (date,location,keyword,value)")
    p_fit.add_argument("--config", help="JSON training configuration")
    p_fit.add_argument("--out", required=True, help="output model JSON path")
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p_fit.add_argument("--interpolate", action="store_true",
                       help="fill isolated missing cells by time interpolation")
    p_fit.set_defaults(func=cmd_fit)

    p_fc = sub.add_parser("forecast", help="multi-step forecast from a fitted model")
    p_fc.add_argument("--model", required=True)
    p_fc.add_argument("--horizon", type=int, required=True)
    p_fc.add_argument("--out", required=True, help="output CSV path")
    p_fc.set_defaults(func=cmd_forecast)

    p_ev = sub.add_parser("evaluate", help="score forecasts against held-out truth")
    p_ev.add_argument("--model", required=True)
    p_ev.add_argument("--truth", required=True, help="CSV extending past the modeling window")
    p_ev.add_argument("--horizons", default=",".join(str(h) for h in DEFAULT_HORIZONS))
    p_ev.add_argument("--out", required=True, help="output CSV path (JSON written alongside)")
    p_ev.add_argument("--denormalized", action="store_true",
                      help="also score in original units")
    p_ev.add_argument("--interpolate", action="store_true")
    p_ev.set_defaults(func=cmd_evaluate)

    p_ex = sub.add_parser("explain", help="export interpretability artifacts")
    p_ex.add_argument("--model", required=True)
    p_ex.add_argument("--out-dir", required=True)
    p_ex.add_argument("--eps-zero", type=float, default=interpret.EPS_ZERO,
                      help="coefficients within this of zero count as zero")
    p_ex.set_defaults(func=cmd_explain)

    p_sy = sub.add_parser("synth", help="generate a ground-truth tensor")
    group = p_sy.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", help="one of: " + ", ".join(sorted(synth.SCENARIOS)))
    group.add_argument("--spec", help="JSON spec file")
    p_sy.add_argument("--out", required=True, help="output CSV path")
    p_sy.add_argument("--seed", type=int, default=None)
    p_sy.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestionError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GradientError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
