"""Scikit-learn style front door: fit on a tensor, predict future steps.

The estimator wraps normalization, automatic group-count selection, and
autoregressive forecasting behind the familiar ``fit``/``predict`` surface
so the model slots into pipelines and parameter search tooling. Inputs are
(T, L, K) arrays or labeled activity tensors.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import mdl
from .clustering import cluster, embed
from .dynamics import GroupAssignment
from .forecasting import forecast
from .model import TrainConfig
from .tensor_data import ActivityTensor, from_arrays, normalize
from .training import fit as fit_groups


class FluxCubeForecaster(BaseEstimator):
    """Reaction-diffusion activity-tensor forecaster with automatic grouping.

    Parameters mirror the training configuration. ``n_groups=None`` selects
    the number of area groups by description length; a fixed integer skips
    the selection loop (clustering locations on a preliminary single-group
    fit when needed). With ``normalize_input=False`` the data is taken to be
    scaled to [0, 1] already.
    """

    def __init__(self, alpha=0.1, beta=0.1, max_epochs=2000, patience=100,
                 val_fraction=0.1, hidden_candidates=(16, 32, 64), p=52, seed=0,
                 n_groups=None, diffusion="rnn", seasonality=True,
                 normalize_input=True, n_jobs=1):
        self.alpha = alpha
        self.beta = beta
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.hidden_candidates = hidden_candidates
        self.p = p
        self.seed = seed
        self.n_groups = n_groups
        self.diffusion = diffusion
        self.seasonality = seasonality
        self.normalize_input = normalize_input
        self.n_jobs = n_jobs

    def _config(self) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, beta=self.beta, max_epochs=self.max_epochs,
                           patience=self.patience, val_fraction=self.val_fraction,
                           hidden_candidates=tuple(self.hidden_candidates), seed=self.seed,
                           p=self.p, diffusion=self.diffusion, seasonality=self.seasonality)

    def fit(self, X, y=None):
        """Fit on a (T, L, K) array or ActivityTensor; returns self."""
        tensor = X if isinstance(X, ActivityTensor) else from_arrays(
            np.asarray(X, dtype=np.float64), normalized=not self.normalize_input)
        config = self._config()
        if self.normalize_input:
            working, stats = normalize(tensor)
        else:
            working, stats = tensor, None

        if self.n_groups is None:
            model = mdl.select(working, config, workers=self.n_jobs)
        else:
            d_l = int(self.n_groups)
            l = working.shape[1]
            if d_l == 1:
                groups = GroupAssignment.single_group(l)
            else:
                seedling, _ = fit_groups(working, GroupAssignment.single_group(l),
                                         config, workers=self.n_jobs)
                groups = cluster(embed(seedling.reaction), d_l, seed=config.seed)
            model, _ = fit_groups(working, groups, config, workers=self.n_jobs)
            model.selection_trace = []
        model.norm_stats = stats
        model.time_labels = tensor.time_labels
        model.location_labels = tensor.location_labels
        model.keyword_labels = tensor.keyword_labels
        model.recent_observations = np.array(working.values[-max(config.p, 1):])
        self.model_ = model
        self.report_ = model.report
        self.trace_ = model.selection_trace
        self.groups_ = model.groups.group.copy()
        self.n_groups_ = model.d_l
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this FluxCubeForecaster is not fitted; call fit first")

    def predict(self, horizon: int = 52, denormalized: bool = True) -> np.ndarray:
        """(horizon, L, K) autoregressive forecast continuing the fit window."""
        self._check_fitted()
        result = forecast(self.model_, horizon=int(horizon))
        if denormalized and result.denormalized is not None:
            return result.denormalized
        return result.predictions

    def score(self, X, y=None) -> float:
        """Negative 13-step-horizon RMSE against held-out truth (higher is better)."""
        self._check_fitted()
        truth = X.values if hasattr(X, "values") else np.asarray(X, dtype=np.float64)
        horizon = min(13, truth.shape[0])
        preds = self.predict(horizon=horizon, denormalized=False)
        stats = self.model_.norm_stats
        if stats is not None:
            span = stats.maximum - stats.minimum
            span = np.where(span == 0.0, 1.0, span)
            truth = (truth - stats.minimum) / span
        err = preds - truth[:horizon]
        return -float(np.sqrt(np.mean(err * err)))
