"""Two-part description-length scoring and the group-count selection loop.

The total cost of a candidate model is the bits needed to encode the
modeling window's one-step residuals under a fitted Gaussian, plus the bits
needed to describe the parameters that scale with the number of area groups:
the nonzero entries of the stacked flow tensors. Terms identical across
candidates are left out. Selection starts from a single group and grows the
group count while the total cost keeps improving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .clustering import cluster, embed
from .dynamics import GroupAssignment
from .model import FluxCubeModel, TrainConfig
from .training import fit, residuals

logger = logging.getLogger(__name__)

FLOAT_COST_BITS = 32.0
NONZERO_TOLERANCE = 1e-6
SIGMA_FLOOR = 1e-6
MAX_GROUPS = 12
LOG2_E = math.log2(math.e)


def log_star(n: float) -> float:
    """Universal code length for a nonnegative integer, in bits.

    log*(n) = log2(2.865) + log2(n) + log2(log2(n)) + ... keeping only
    strictly positive terms; log*(0) is defined as 0.
    """
    if n < 0:
        raise ValueError("log_star is defined for nonnegative integers")
    if n == 0:
        return 0.0
    total = math.log2(2.865)
    term = float(n)
    while True:
        term = math.log2(term)
        if term <= 0.0:
            break
        total += term
    return total


def gaussian_fit(values: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood mean and standard deviation, floored for stability."""
    mu = float(np.mean(values))
    sigma = float(np.sqrt(np.mean((values - mu) ** 2)))
    return mu, max(sigma, SIGMA_FLOOR)


def data_cost(residual_values: np.ndarray) -> float:
    """Bits to encode residuals under their own fitted Gaussian.

    Code lengths are differential (no quantization offset), so individual
    lengths may be negative; only differences across candidates matter.
    """
    r = np.asarray(residual_values, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("empty residual set")
    mu, sigma = gaussian_fit(r)
    per_point = 0.5 * math.log2(2.0 * math.pi * sigma * sigma) \
        + LOG2_E * ((r - mu) ** 2) / (2.0 * sigma * sigma)
    return float(per_point.sum())


def flow_description_bits(n_nonzero: int, t_c: int, d_l: int, k: int) -> float:
    """Bits to describe the nonzero stacked-flow entries (index + value)."""
    if n_nonzero == 0:
        return 0.0
    per_entry = math.log2(t_c) + 2.0 * math.log2(d_l) + math.log2(k) + FLOAT_COST_BITS
    return n_nonzero * per_entry + log_star(n_nonzero)


def model_cost(model: FluxCubeModel, flows: np.ndarray | None = None) -> float:
    """Bits to describe the group count and the stacked flow tensors."""
    if flows is None:
        flows = model.materialize_flows()
    n_nonzero = int(np.count_nonzero(flows > NONZERO_TOLERANCE))
    k = model.shape[1]
    return log_star(model.d_l) + flow_description_bits(n_nonzero, model.time_scale, model.d_l, k)


@dataclass
class MdlCost:
    """Itemized description length of one candidate group count."""

    d_l: int
    data_cost: float
    model_cost: float
    total: float
    nonzero_flows: int
    residual_mu: float
    residual_sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.data_cost) and np.isfinite(self.model_cost)):
            raise ValueError("non-finite description length")
        if abs(self.total - (self.data_cost + self.model_cost)) > 1e-9:
            raise ValueError("total must equal data_cost + model_cost")
        if self.nonzero_flows < 0:
            raise ValueError("negative nonzero count")

    def to_dict(self) -> dict:
        return {"d_l": self.d_l, "data_cost": self.data_cost,
                "model_cost": self.model_cost, "total": self.total,
                "nonzero_flows": self.nonzero_flows,
                "residual_mu": self.residual_mu, "residual_sigma": self.residual_sigma}


def cost_of(model: FluxCubeModel, window) -> MdlCost:
    r = residuals(model, window)
    mu, sigma = gaussian_fit(r)
    dc = data_cost(r)
    flows = model.materialize_flows()
    nz = int(np.count_nonzero(flows > NONZERO_TOLERANCE))
    mc = log_star(model.d_l) + flow_description_bits(nz, model.time_scale, model.d_l,
                                                     model.shape[1])
    return MdlCost(model.d_l, dc, mc, dc + mc, nz, mu, sigma)


def select(window, config: TrainConfig | None = None, workers: int = 1,
           max_groups: int = MAX_GROUPS) -> FluxCubeModel:
    """Grow the number of area groups while the description length improves.

    Starts with every location in one group; each further candidate clusters
    locations on the previously accepted model's reaction parameters, refits,
    and is kept only if its total cost beats the running minimum. The
    accepted model is returned with the full selection trace attached. A
    training failure past the first candidate returns the best model so far.
    """
    config = config or TrainConfig()
    l = window.values.shape[1] if hasattr(window, "values") else np.asarray(window).shape[1]
    cap = min(l, max_groups)

    best_model: FluxCubeModel | None = None
    best_cost = math.inf
    trace: list[dict] = []
    d_l = 1
    while d_l <= cap:
        if d_l == 1:
            groups = GroupAssignment.single_group(l)
        else:
            groups = cluster(embed(best_model.reaction), d_l, seed=config.seed)
        try:
            model, _ = fit(window, groups, config, workers=workers)
        except Exception:
            if best_model is None:
                raise
            logger.warning("training failed at d_l=%d; keeping d_l=%d",
                           d_l, best_model.d_l, exc_info=True)
            break
        cost = cost_of(model, window)
        accepted = cost.total < best_cost
        trace.append({**cost.to_dict(), "accepted": accepted})
        logger.info("d_l=%d data=%.1f model=%.1f total=%.1f bits%s", d_l, cost.data_cost,
                    cost.model_cost, cost.total, " (accepted)" if accepted else "")
        if not accepted:
            break
        best_model, best_cost = model, cost.total
        d_l += 1

    best_model.selection_trace = trace
    return best_model
