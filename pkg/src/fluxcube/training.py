"""Fitting every model parameter on a modeling window by gradient descent.

One epoch evaluates the whole window as a single teacher-forced graph: the
reaction term is batched over all steps, the recurrent flow generator is
unrolled (its inputs are time features, so the unroll is data-independent),
and the squared one-step error plus mean-scaled penalties on the flow and
seasonal magnitudes is backpropagated through the tape. Early stopping
watches one-step error on the trailing slice of the window; the best
snapshot wins. Several recurrent sizes are tried and the best validation
candidate is kept.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradientError
from .dynamics import (ConstantDiffusion, DiffusionNet, GroupAssignment, ReactionParams,
                       SeasonalityMatrix, offdiagonal_mask, time_features)
from .model import FitReport, FluxCubeModel, TrainConfig

logger = logging.getLogger(__name__)

GRAD_CLIP_NORM = 10.0


def _window_values(window) -> np.ndarray:
    values = window.values if hasattr(window, "values") else np.asarray(window)
    return np.asarray(values, dtype=np.float64)


def init_raws(l: int, k: int, d_l: int, hidden: int, config: TrainConfig,
              rng: np.random.Generator) -> dict:
    """Fresh unconstrained parameter blocks for one training candidate.

    Growth starts at 0.5 and capacity at 1.0 (log-space zeros-ish), keyword
    couplings near zero, recurrent weights uniform in +-1/sqrt(h) with zero
    biases, and seasonal raws at -3 so seasonality only grows if the data
    demand it.
    """
    raws = {
        "theta_a": np.full((l, k), np.log(0.5)),
        "theta_b": np.full((l, k), np.log(1.0)),
        "couplings": np.where(np.eye(k, dtype=bool), 1.0,
                              rng.uniform(-0.01, 0.01, size=(l, k, k))),
    }
    if d_l > 1 and config.diffusion == "rnn":
        bound = 1.0 / np.sqrt(hidden)
        n_out = d_l * d_l * k
        raws["w_hidden"] = rng.uniform(-bound, bound, size=(hidden, hidden))
        raws["w_input"] = rng.uniform(-bound, bound, size=(hidden, 3))
        raws["b_hidden"] = np.zeros(hidden)
        raws["w_out"] = rng.uniform(-bound, bound, size=(n_out, hidden))
        raws["b_out"] = np.zeros(n_out)
    elif d_l > 1 and config.diffusion == "constant":
        raws["flow_raw"] = np.full((d_l, d_l, k), 0.01)
    if config.seasonality:
        raws["seasonal_raw"] = np.full((config.p, l, k), -3.0)
    return raws


@dataclass
class WindowGraph:
    """One teacher-forced evaluation of a window (with or without a tape)."""

    predictions: np.ndarray  # (n, L, K)
    loss: object  # Tensor when taped, float otherwise
    train_mse: float
    flow_penalty: float
    seasonal_penalty: float
    leaves: dict


def build_window_graph(raws: dict, groups: GroupAssignment, window_values: np.ndarray,
                       config: TrainConfig, time_scale: int, n_train_steps: int | None = None,
                       tape: ad.Tape | None = None, t_start: int = 0) -> WindowGraph:
    """Assemble predictions and the training loss for one window pass.

    The loss (error term and flow penalty) covers only the first
    ``n_train_steps`` one-step predictions; the remaining trailing steps are
    still predicted so the caller can score them for early stopping.
    """
    x = _window_values(window_values)
    n = x.shape[0] - 1
    if n < 1:
        raise ValueError("window must contain at least 2 time points")
    n_train = n if n_train_steps is None else int(n_train_steps)
    if not 1 <= n_train <= n:
        raise ValueError("n_train_steps outside [1, n_steps]")
    inputs, targets = x[:-1], x[1:]
    l, k = x.shape[1], x.shape[2]
    d_l = groups.d_l

    def leaf(name):
        return tape.leaf(raws[name]) if tape is not None else ad.Tensor(raws[name])

    leaves = {name: leaf(name) for name in raws}

    growth = ad.exp(leaves["theta_a"])
    capacity = ad.exp(leaves["theta_b"])
    eye = np.eye(k)
    couplings = ad.add(ad.mul(leaves["couplings"], 1.0 - eye), eye)
    cx = ad.reshape(ad.matmul(couplings, inputs.reshape(n, l, k, 1)), (n, l, k))
    reaction = ad.mul(ad.mul(growth, inputs), ad.sub(1.0, ad.div(cx, capacity)))

    change = reaction
    flows = None
    flow_sq_mean = None
    if d_l > 1 and ("w_hidden" in raws or "flow_raw" in raws):
        mask = offdiagonal_mask(d_l, k)
        if "w_hidden" in raws:
            u = np.stack([time_features(t_start + s, time_scale, config.p) for s in range(n)])
            pre = ad.add(ad.matmul(ad.Tensor(u), ad.transpose(leaves["w_input"])),
                         leaves["b_hidden"])
            hidden = ad.elman_chain(leaves["w_hidden"], pre)
            raw_out = ad.add(ad.matmul(hidden, ad.transpose(leaves["w_out"])), leaves["b_out"])
            flows = ad.mul(ad.reshape(ad.relu(raw_out), (n, d_l, d_l, k)), mask)
            flow_train = ad.take_rows(flows, np.arange(n_train))
            flow_sq_mean = ad.reduce_mean(ad.mul(flow_train, flow_train))
        else:
            constant = ad.mul(ad.relu(leaves["flow_raw"]), mask)
            flows = ad.reshape(constant, (1, d_l, d_l, k))
            flow_sq_mean = ad.reduce_mean(ad.mul(constant, constant))
        pooled = groups.pooling_matrix() @ inputs  # (n, d_l, K), constant
        received = ad.reduce_sum(ad.mul(flows, pooled[:, None, :, :]), axis=2)
        inflow = ad.matmul(ad.Tensor(groups.membership_matrix()), received)
        change = ad.add(change, inflow)

    base = ad.add(change, inputs)
    seasonal_sq_mean = None
    if "seasonal_raw" in raws:
        gains = ad.softplus(leaves["seasonal_raw"])
        phases = (t_start + np.arange(n)) % config.p
        preds = ad.mul(ad.add(1.0, ad.take_rows(gains, phases)), base)
        seasonal_sq_mean = ad.reduce_mean(ad.mul(gains, gains))
    else:
        preds = base

    err = ad.sub(ad.take_rows(preds, np.arange(n_train)), targets[:n_train])
    mse = ad.reduce_mean(ad.mul(err, err))
    loss = mse
    if flow_sq_mean is not None and config.alpha > 0:
        loss = ad.add(loss, ad.mul(flow_sq_mean, config.alpha))
    if seasonal_sq_mean is not None and config.beta > 0:
        loss = ad.add(loss, ad.mul(seasonal_sq_mean, config.beta))

    return WindowGraph(
        predictions=preds.data,
        loss=loss if tape is not None else float(loss.data),
        train_mse=float(mse.data),
        flow_penalty=float(flow_sq_mean.data) * config.alpha if flow_sq_mean is not None else 0.0,
        seasonal_penalty=float(seasonal_sq_mean.data) * config.beta if seasonal_sq_mean is not None else 0.0,
        leaves=leaves,
    )


def loss(model: FluxCubeModel, window) -> float:
    """Teacher-forced training objective of a fitted model over a window."""
    values = _window_values(window)
    graph = build_window_graph(model_raws(model), model.groups, values, model.config,
                               model.time_scale)
    if not np.isfinite(graph.loss):
        raise GradientError("training loss is not finite")
    return float(graph.loss)


def predict_window(model: FluxCubeModel, window) -> np.ndarray:
    """One-step teacher-forced predictions for targets window[1:]."""
    values = _window_values(window)
    graph = build_window_graph(model_raws(model), model.groups, values, model.config,
                               model.time_scale)
    return graph.predictions


def residuals(model: FluxCubeModel, window) -> np.ndarray:
    """Flattened one-step prediction errors over the whole window."""
    values = _window_values(window)
    return (values[1:] - predict_window(model, values)).ravel()


def model_raws(model: FluxCubeModel) -> dict:
    raws = {
        "theta_a": model.reaction.theta_a,
        "theta_b": model.reaction.theta_b,
        "couplings": model.reaction.couplings,
    }
    if isinstance(model.diffusion, DiffusionNet):
        net = model.diffusion
        raws.update(w_hidden=net.w_hidden, w_input=net.w_input, b_hidden=net.b_hidden,
                    w_out=net.w_out, b_out=net.b_out)
    elif isinstance(model.diffusion, ConstantDiffusion):
        raws["flow_raw"] = model.diffusion.raw
    if model.seasonality is not None:
        raws["seasonal_raw"] = model.seasonality.raw
    return raws


def assemble_model(raws: dict, groups: GroupAssignment, config: TrainConfig,
                   time_scale: int, hidden: int, k: int) -> FluxCubeModel:
    reaction = ReactionParams(raws["theta_a"], raws["theta_b"], raws["couplings"])
    diffusion = None
    if "w_hidden" in raws:
        diffusion = DiffusionNet(raws["w_hidden"], raws["w_input"], raws["b_hidden"],
                                 raws["w_out"], raws["b_out"], groups.d_l, k)
    elif "flow_raw" in raws:
        diffusion = ConstantDiffusion(raws["flow_raw"])
    seasonality = SeasonalityMatrix(raws["seasonal_raw"]) if "seasonal_raw" in raws else None
    return FluxCubeModel(reaction=reaction, diffusion=diffusion, seasonality=seasonality,
                         groups=groups, period=config.p, time_scale=time_scale, config=config)


@dataclass
class _CandidateResult:
    hidden: int
    raws: dict
    metric: float
    epochs_run: int
    final_train_loss: float


def _fit_candidate(window_values: np.ndarray, groups: GroupAssignment,
                   config: TrainConfig, hidden: int) -> _CandidateResult:
    t_w = window_values.shape[0]
    l, k = window_values.shape[1], window_values.shape[2]
    n = t_w - 1
    n_val = min(int(config.val_fraction * t_w), n - 1)
    n_train = n - n_val
    targets_val = window_values[1 + n_train:]

    rng = np.random.default_rng([config.seed, groups.d_l, hidden])
    raws = init_raws(l, k, groups.d_l, hidden, config, rng)
    adam = ad.AdamState()
    best_metric = np.inf
    best_raws = {name: arr.copy() for name, arr in raws.items()}
    epochs_run = 0
    final_train_loss = np.nan
    wait = 0

    for epoch in range(config.max_epochs):
        tape = ad.Tape()
        graph = build_window_graph(raws, groups, window_values, config,
                                   time_scale=t_w, n_train_steps=n_train, tape=tape)
        total = float(graph.loss.data)
        if not np.isfinite(total):
            raise GradientError(f"training loss became non-finite at epoch {epoch + 1}")
        final_train_loss = total
        epochs_run = epoch + 1
        if n_val > 0:
            diff = graph.predictions[n_train:] - targets_val
            metric = float(np.mean(diff * diff))
        else:
            metric = graph.train_mse
        if metric < best_metric:
            best_metric = metric
            best_raws = {name: arr.copy() for name, arr in raws.items()}
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
        tape.backward(graph.loss)
        grads = {name: tape.grad_of(leaf) for name, leaf in graph.leaves.items()}
        ad.clip_global_norm(grads, GRAD_CLIP_NORM)
        ad.adam_step(raws, grads, adam)

    return _CandidateResult(hidden, best_raws, best_metric, epochs_run, final_train_loss)


def _candidate_worker(args) -> _CandidateResult:
    return _fit_candidate(*args)


def fit(window, groups: GroupAssignment, config: TrainConfig | None = None,
        workers: int = 1) -> tuple[FluxCubeModel, FitReport]:
    """Fit all parameters on a modeling window for a fixed group assignment.

    Runs one training candidate per recurrent hidden size (in parallel when
    ``workers`` > 1) and keeps the snapshot with the lowest validation
    one-step error. When no recurrent network exists (single group, or
    diffusion constant/off) the hidden size is irrelevant and only one
    candidate runs.
    """
    config = config or TrainConfig()
    values = _window_values(window)
    t_w = values.shape[0]
    if t_w < config.p + 2:
        raise ValueError(f"window length {t_w} is too short for period {config.p} "
                         f"(need at least p + 2)")
    if t_w < 2 * config.p:
        logger.warning("window length %d is below two seasonal periods (%d); "
                       "seasonal estimates may be weak", t_w, 2 * config.p)

    uses_rnn = groups.d_l > 1 and config.diffusion == "rnn"
    candidates = list(config.hidden_candidates) if uses_rnn else [config.hidden_candidates[0]]

    started = time.perf_counter()
    jobs = [(values, groups, config, h) for h in candidates]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_candidate_worker, jobs))
    else:
        results = [_candidate_worker(job) for job in jobs]
    best = min(results, key=lambda r: (r.metric, r.hidden))
    wall = time.perf_counter() - started

    model = assemble_model(best.raws, groups, config, t_w, best.hidden, values.shape[2])
    report = FitReport(
        hidden_size=best.hidden,
        best_val_mse=best.metric,
        final_train_loss=best.final_train_loss,
        epochs_run=best.epochs_run,
        wall_time_s=wall,
        stop_metric="validation" if int(config.val_fraction * t_w) > 0 else "training",
        candidates=[{"hidden_size": r.hidden, "best_val_mse": r.metric,
                     "epochs_run": r.epochs_run} for r in results],
    )
    model.report = report
    return model, report
