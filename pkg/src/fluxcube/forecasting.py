"""Multi-step forecasting and the accuracy scores used to judge it.

A forecast warms the recurrent state with a teacher-forced pass over the
history (the flow generator consumes only time features, so this needs no
data), then rolls out autoregressively, continuing the global time index and
seasonal phase. Scores are cumulative to each horizon: the n-step RMSE/MAE
averages over the first n steps and all cells, in normalized units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DiffusionNet, rollout
from .model import FluxCubeModel
from .tensor_data import denormalize, extend_time_labels

DEFAULT_HORIZONS = (13, 26, 52)


@dataclass
class ForecastResult:
    """Normalized and denormalized predictions with horizon metadata."""

    predictions: np.ndarray  # (l_f, L, K), normalized units
    denormalized: np.ndarray | None
    start_index: int  # global index of the first forecast step (t_c)
    horizon: int
    time_labels: tuple = ()


def warm_hidden(model: FluxCubeModel, n_steps: int) -> np.ndarray | None:
    """Hidden state after a teacher-forced pass over ``n_steps`` model steps."""
    net = model.diffusion
    if not isinstance(net, DiffusionNet) or model.d_l == 1:
        return None
    hidden = net.initial_hidden()
    for t in range(n_steps):
        hidden = net.advance(hidden, t, model.time_scale, model.period)
    return hidden


def forecast(model: FluxCubeModel, history=None, horizon: int = 52) -> ForecastResult:
    """Autoregressive ``horizon``-step forecast continuing the history.

    ``history`` is the modeling window the model was fit on; when omitted,
    the observations stored with the model are used. The first step consumes
    the last observed slice, so a one-step forecast coincides with the last
    teacher-forced prediction extended by one step.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if history is not None:
        if (tuple(history.location_labels) != tuple(model.location_labels)
                and model.location_labels):
            raise ValueError("history location labels do not match the model")
        if (tuple(history.keyword_labels) != tuple(model.keyword_labels)
                and model.keyword_labels):
            raise ValueError("history keyword labels do not match the model")
        values = np.asarray(history.values, dtype=np.float64)
    else:
        if model.recent_observations is None:
            raise ValueError("model carries no observations; pass a history")
        values = model.recent_observations
    if values.shape[1:] != model.shape:
        raise ValueError(f"history shape {values.shape[1:]} does not match model {model.shape}")

    t_start = model.time_scale - 1 if history is None else values.shape[0] - 1
    hidden = warm_hidden(model, t_start)
    result = rollout(model.dynamics(), values[-1], horizon, "autoregressive",
                     t_start=t_start, hidden=hidden)
    preds = result.predictions
    denorm = denormalize(preds, model.norm_stats) if model.norm_stats is not None else None
    labels = tuple(extend_time_labels(model.time_labels, horizon)) if model.time_labels else ()
    return ForecastResult(preds, denorm, t_start + 1, horizon, labels)


@dataclass
class MetricTable:
    """Cumulative-to-horizon scores plus a per-step breakdown."""

    horizons: tuple
    rows: list  # {"horizon": int, "metric": str, "value": float | None}
    per_step: list  # {"step": int, "rmse": float, "mae": float}

    def value(self, horizon: int, metric: str) -> float | None:
        for row in self.rows:
            if row["horizon"] == horizon and row["metric"] == metric:
                return row["value"]
        raise KeyError((horizon, metric))

    def to_csv(self) -> str:
        lines = ["horizon,metric,value"]
        for row in self.rows:
            value = "" if row["value"] is None else repr(row["value"])
            lines.append(f"{row['horizon']},{row['metric']},{value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"horizons": list(self.horizons), "rows": self.rows, "per_step": self.per_step}


def evaluate(predictions: np.ndarray, truth: np.ndarray,
             horizons=DEFAULT_HORIZONS) -> MetricTable:
    """RMSE and MAE over the first n steps for each horizon n.

    A horizon beyond the available truth is reported with a None value
    rather than failing the others.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    usable = min(predictions.shape[0], truth.shape[0])
    err = predictions[:usable] - truth[:usable]
    rows = []
    for horizon in horizons:
        if horizon < 1:
            raise ValueError("horizons must be >= 1")
        if horizon > usable:
            rows.append({"horizon": horizon, "metric": "rmse", "value": None})
            rows.append({"horizon": horizon, "metric": "mae", "value": None})
            continue
        window = err[:horizon]
        rows.append({"horizon": horizon, "metric": "rmse",
                     "value": float(np.sqrt(np.mean(window * window)))})
        rows.append({"horizon": horizon, "metric": "mae",
                     "value": float(np.mean(np.abs(window)))})
    per_step = [{"step": s + 1,
                 "rmse": float(np.sqrt(np.mean(err[s] * err[s]))),
                 "mae": float(np.mean(np.abs(err[s])))}
                for s in range(usable)]
    return MetricTable(tuple(horizons), rows, per_step)


def baseline_seasonal_naive(history: np.ndarray, l_f: int, p: int) -> np.ndarray:
    """Repeat the last observed value from the same seasonal phase."""
    history = np.asarray(history, dtype=np.float64)
    t = history.shape[0]
    if t < p:
        raise ValueError(f"history length {t} is shorter than the period {p}")
    steps = np.arange(l_f)
    return history[t - p + (steps % p)]
