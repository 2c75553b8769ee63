"""The fitted model object, its training configuration, and JSON persistence.

A saved model file is a single JSON document holding axis labels,
normalization statistics, the group assignment, every unconstrained
parameter (17 significant digits, which round-trips float64 exactly), the
training configuration and report, the group-count selection trace, and the
tail of the modeling window needed to continue the series. Loading it back
reproduces forecasts bit for bit.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (ConstantDiffusion, DiffusionNet, Dynamics, GroupAssignment,
                       ReactionParams, SeasonalityMatrix, offdiagonal_mask)
from .tensor_data import NormStats

SCHEMA_VERSION = 1

DIFFUSION_MODES = ("rnn", "constant", "off")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run; all fields have sane defaults."""

    alpha: float = 0.1
    beta: float = 0.1
    max_epochs: int = 2000
    patience: int = 100
    val_fraction: float = 0.1
    hidden_candidates: tuple = (16, 32, 64)
    seed: int = 0
    p: int = 52
    diffusion: str = "rnn"
    seasonality: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0 <= self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in [0, 0.5)")
        if not self.hidden_candidates:
            raise ValueError("hidden_candidates must be nonempty")
        object.__setattr__(self, "hidden_candidates",
                           tuple(sorted(int(h) for h in self.hidden_candidates)))
        if self.p < 1:
            raise ValueError("seasonality period must be >= 1")
        if self.diffusion not in DIFFUSION_MODES:
            raise ValueError(f"diffusion must be one of {DIFFUSION_MODES}")

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return TrainConfig(**doc)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden_candidates"] = list(self.hidden_candidates)
        return out


@dataclass
class FitReport:
    """What one fit() run did and which candidate it kept."""

    hidden_size: int
    best_val_mse: float
    final_train_loss: float
    epochs_run: int
    wall_time_s: float
    stop_metric: str = "validation"
    regularizer_scaling: str = "mean"
    embedding_method: str = "pca"
    candidates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "FitReport":
        return FitReport(**doc)


@dataclass
class FluxCubeModel:
    """A complete fitted parameter snapshot plus everything needed to use it."""

    reaction: ReactionParams
    diffusion: DiffusionNet | ConstantDiffusion | None
    seasonality: SeasonalityMatrix | None
    groups: GroupAssignment
    period: int
    time_scale: int  # length of the modeling window the model was fit on
    config: TrainConfig
    norm_stats: NormStats | None = None
    time_labels: tuple = ()
    location_labels: tuple = ()
    keyword_labels: tuple = ()
    report: FitReport | None = None
    selection_trace: list | None = None
    embedding: np.ndarray | None = None
    recent_observations: np.ndarray | None = None  # normalized tail of the window

    @property
    def shape(self) -> tuple:
        return self.reaction.theta_a.shape

    @property
    def d_l(self) -> int:
        return self.groups.d_l

    def dynamics(self) -> Dynamics:
        seasonal = self.seasonality.values if self.seasonality is not None else None
        return Dynamics(self.reaction, self.groups, self.diffusion, seasonal,
                        self.period, self.time_scale)

    def n_model_steps(self) -> int:
        """One-step predictions the modeling window supports."""
        return self.time_scale - 1

    def materialize_flows(self, n_steps: int | None = None, t_start: int = 0) -> np.ndarray:
        """(n, d_l, d_l, K) flow tensors over modeling steps.

        The flow generator consumes only time features, so this needs no
        data. Inert diffusion yields zeros.
        """
        n = self.n_model_steps() if n_steps is None else int(n_steps)
        d_l = self.d_l
        k = self.shape[1]
        if self.diffusion is None or d_l == 1:
            return np.zeros((n, d_l, d_l, k))
        if isinstance(self.diffusion, ConstantDiffusion):
            return np.broadcast_to(self.diffusion.materialize(), (n, d_l, d_l, k)).copy()
        net = self.diffusion
        out = np.empty((n, d_l, d_l, k))
        hidden = net.initial_hidden()
        for s in range(n):
            hidden = net.advance(hidden, t_start + s, self.time_scale, self.period)
            out[s] = net.emit(hidden)
        return out


# ---------------------------------------------------------------------------
# persistence


def _fmt(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError("cannot serialize non-finite number")
    return f"{float(x):.17g}"


def _write_json(obj, out: io.TextIOBase, indent: int = 0) -> None:
    # hand-rolled so floats carry 17 significant digits
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            out.write("{}")
            return
        out.write("{\n")
        for i, (key, val) in enumerate(obj.items()):
            out.write(f'{pad}  "{key}": ')
            _write_json(val, out, indent + 2)
            out.write(",\n" if i < len(obj) - 1 else "\n")
        out.write(pad + "}")
    elif isinstance(obj, (list, tuple)):
        items = list(obj)
        out.write("[")
        for i, val in enumerate(items):
            _write_json(val, out, indent)
            if i < len(items) - 1:
                out.write(", ")
        out.write("]")
    elif isinstance(obj, bool):
        out.write("true" if obj else "false")
    elif obj is None:
        out.write("null")
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(_fmt(obj))
    elif isinstance(obj, str):
        out.write('"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"')
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dump_json(obj, path_or_file) -> None:
    if hasattr(path_or_file, "write"):
        _write_json(obj, path_or_file)
        path_or_file.write("\n")
        return
    with open(path_or_file, "w", encoding="utf-8") as fh:
        _write_json(obj, fh)
        fh.write("\n")


def _arr(a: np.ndarray) -> list:
    return a.tolist()


def to_document(model: FluxCubeModel) -> dict:
    diff = None
    if isinstance(model.diffusion, DiffusionNet):
        net = model.diffusion
        diff = {"kind": "rnn", "hidden_size": net.hidden_size,
                "w_hidden": _arr(net.w_hidden), "w_input": _arr(net.w_input),
                "b_hidden": _arr(net.b_hidden), "w_out": _arr(net.w_out),
                "b_out": _arr(net.b_out)}
    elif isinstance(model.diffusion, ConstantDiffusion):
        diff = {"kind": "constant", "raw": _arr(model.diffusion.raw)}
    stats = None
    if model.norm_stats is not None:
        s = model.norm_stats
        stats = {"minimum": _arr(s.minimum), "maximum": _arr(s.maximum),
                 "window_end": s.window_end, "clamp_limit": s.clamp_limit,
                 "clamped_count": s.clamped_count,
                 "constant_series": [list(p) for p in s.constant_series]}
    return {
        "schema_version": SCHEMA_VERSION,
        "time_labels": list(model.time_labels),
        "location_labels": list(model.location_labels),
        "keyword_labels": list(model.keyword_labels),
        "norm_stats": stats,
        "d_l": model.d_l,
        "groups": model.groups.group.tolist(),
        "period": model.period,
        "time_scale": model.time_scale,
        "reaction": {"theta_a": _arr(model.reaction.theta_a),
                     "theta_b": _arr(model.reaction.theta_b),
                     "couplings": _arr(model.reaction.couplings)},
        "diffusion": diff,
        "seasonality_raw": _arr(model.seasonality.raw) if model.seasonality is not None else None,
        "config": model.config.to_dict(),
        "report": model.report.to_dict() if model.report is not None else None,
        "selection_trace": model.selection_trace,
        "embedding": _arr(model.embedding) if model.embedding is not None else None,
        "recent_observations": _arr(model.recent_observations)
        if model.recent_observations is not None else None,
    }


def from_document(doc: dict) -> FluxCubeModel:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {version!r}")
    reaction = ReactionParams(np.array(doc["reaction"]["theta_a"]),
                              np.array(doc["reaction"]["theta_b"]),
                              np.array(doc["reaction"]["couplings"]))
    diff_doc = doc["diffusion"]
    diffusion = None
    if diff_doc is not None and diff_doc["kind"] == "rnn":
        k = reaction.n_keywords
        diffusion = DiffusionNet(np.array(diff_doc["w_hidden"]), np.array(diff_doc["w_input"]),
                                 np.array(diff_doc["b_hidden"]), np.array(diff_doc["w_out"]),
                                 np.array(diff_doc["b_out"]), int(doc["d_l"]), k)
    elif diff_doc is not None and diff_doc["kind"] == "constant":
        diffusion = ConstantDiffusion(np.array(diff_doc["raw"]))
    seasonality = None
    if doc["seasonality_raw"] is not None:
        seasonality = SeasonalityMatrix(np.array(doc["seasonality_raw"]))
    stats = None
    if doc["norm_stats"] is not None:
        s = doc["norm_stats"]
        stats = NormStats(np.array(s["minimum"]), np.array(s["maximum"]),
                          int(s["window_end"]), float(s["clamp_limit"]),
                          int(s["clamped_count"]),
                          tuple(tuple(p) for p in s["constant_series"]))
    return FluxCubeModel(
        reaction=reaction,
        diffusion=diffusion,
        seasonality=seasonality,
        groups=GroupAssignment(np.array(doc["groups"], dtype=np.int64), int(doc["d_l"])),
        period=int(doc["period"]),
        time_scale=int(doc["time_scale"]),
        config=TrainConfig.from_dict(doc["config"]),
        norm_stats=stats,
        time_labels=tuple(doc["time_labels"]),
        location_labels=tuple(doc["location_labels"]),
        keyword_labels=tuple(doc["keyword_labels"]),
        report=FitReport.from_dict(doc["report"]) if doc["report"] is not None else None,
        selection_trace=doc["selection_trace"],
        embedding=np.array(doc["embedding"]) if doc["embedding"] is not None else None,
        recent_observations=np.array(doc["recent_observations"])
        if doc["recent_observations"] is not None else None,
    )


def save_model(model: FluxCubeModel, path) -> None:
    dump_json(to_document(model), path)


def load_model(path) -> FluxCubeModel:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return from_document(doc)
