"""Reaction-diffusion forecasting and interaction mining for activity tensors."""

from .clustering import Embedding, cluster, embed
from .dynamics import (ConstantDiffusion, DiffusionNet, DiffusionSchedule, Dynamics,
                       GroupAssignment, ReactionParams, SeasonalityMatrix, diffusion_step,
                       forward_step, group_means, reaction, rollout)
from .estimator import FluxCubeForecaster
from .forecasting import (ForecastResult, MetricTable, baseline_seasonal_naive, evaluate,
                          forecast)
from .interpret import (FlowSummary, RelationshipGraph, classify_pair,
                        classify_relationships, seasonal_profile, summarize_flows)
from .mdl import MdlCost, data_cost, log_star, model_cost, select
from .model import FitReport, FluxCubeModel, TrainConfig, load_model, save_model
from .synth import SynthSpec, generate, standard_scenarios
from .tensor_data import (ActivityTensor, IngestionError, NormStats, SplitSpec, TensorView,
                          denormalize, from_arrays, load_csv, normalize, split)
from .training import fit, loss, predict_window, residuals

__version__ = "0.1.0"

__all__ = [
    "ActivityTensor", "ConstantDiffusion", "DiffusionNet", "DiffusionSchedule", "Dynamics",
    "Embedding", "FitReport", "FlowSummary", "FluxCubeForecaster", "FluxCubeModel",
    "ForecastResult", "GroupAssignment", "IngestionError", "MdlCost", "MetricTable",
    "NormStats", "ReactionParams", "RelationshipGraph", "SeasonalityMatrix", "SplitSpec",
    "SynthSpec", "TensorView", "TrainConfig", "baseline_seasonal_naive", "classify_pair",
    "classify_relationships", "cluster", "data_cost", "denormalize", "diffusion_step",
    "embed", "evaluate", "fit", "forecast", "forward_step", "from_arrays", "generate",
    "group_means", "load_csv", "load_model", "log_star", "loss", "model_cost", "normalize",
    "predict_window", "reaction", "residuals", "rollout", "save_model", "seasonal_profile",
    "select", "split", "standard_scenarios", "summarize_flows",
]
