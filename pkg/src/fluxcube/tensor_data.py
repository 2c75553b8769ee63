"""Loading, validation, normalization, and slicing of activity tensors.

An activity tensor is a dense T x L x K grid of nonnegative activity volumes
(time x location x keyword) with labeled axes. Ingestion accepts long-format
CSV with header ``date,location,keyword,value``; axes are sorted (time
ascending, locations and keywords lexicographic) so every downstream result
is reproducible from the same file regardless of row order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CLAMP_LIMIT = 1.5


class IngestionError(ValueError):
    """The input file violates the dense-grid contract."""


@dataclass(frozen=True)
class ActivityTensor:
    """Dense labeled T x L x K grid. Immutable after construction."""

    values: np.ndarray
    time_labels: tuple
    location_labels: tuple
    keyword_labels: tuple
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "time_labels", tuple(self.time_labels))
        object.__setattr__(self, "location_labels", tuple(self.location_labels))
        object.__setattr__(self, "keyword_labels", tuple(self.keyword_labels))
        t, l, k = self.shape
        if t < 2 or l < 1 or k < 1:
            raise ValueError(f"tensor needs T >= 2, L >= 1, K >= 1, got {self.shape}")
        for name, labels, n in (("time", self.time_labels, t),
                                ("location", self.location_labels, l),
                                ("keyword", self.keyword_labels, k)):
            if len(labels) != n:
                raise ValueError(f"{name} labels do not match axis length")
            if len(set(labels)) != n:
                raise ValueError(f"{name} labels are not unique")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def series(self, location: int, keyword: int) -> np.ndarray:
        return self.values[:, location, keyword]


@dataclass(frozen=True)
class NormStats:
    """Per-(location, keyword) min/max of the modeling window.

    Stored with any normalized tensor so denormalization is exact. Series
    that were constant over the window map to zero and are listed in
    ``constant_series``. Values outside the window that left [0, 1] were
    clamped to [0, CLAMP_LIMIT]; ``clamped_count`` counts them.
    """

    minimum: np.ndarray
    maximum: np.ndarray
    window_end: int
    clamp_limit: float = CLAMP_LIMIT
    clamped_count: int = 0
    constant_series: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError("min/max shapes differ")
        if np.any(hi < lo):
            raise ValueError("max < min for some series")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)
        object.__setattr__(self, "constant_series", tuple(map(tuple, self.constant_series)))


@dataclass(frozen=True)
class SplitSpec:
    """Modeling-window end (exclusive) and forecast horizon length."""

    t_c: int
    l_f: int

    def validate(self, t_total: int) -> None:
        if not 1 <= self.t_c <= t_total:
            raise ValueError(f"t_c={self.t_c} outside [1, {t_total}]")
        if self.l_f < 1:
            raise ValueError(f"l_f={self.l_f} must be >= 1")


def _parse_dates(raw) -> list:
    out = []
    for s in raw:
        try:
            out.append(date.fromisoformat(str(s)))
        except ValueError as exc:
            raise IngestionError(f"unparseable date {s!r}") from exc
    return out


def infer_cadence(dates) -> timedelta:
    """The constant gap between consecutive distinct dates; error otherwise."""
    ds = sorted(set(dates))
    if len(ds) < 2:
        raise IngestionError("need at least two distinct dates")
    gaps = {(b - a) for a, b in zip(ds, ds[1:])}
    if len(gaps) != 1:
        raise IngestionError(f"non-uniform date cadence: gaps {sorted(g.days for g in gaps)} days")
    return gaps.pop()


def load_csv(path, interpolate: bool = False) -> ActivityTensor:
    """Read long-format CSV (``date,location,keyword,value``) into a dense tensor.

    With ``interpolate=True``, an isolated missing (date, location, keyword)
    cell whose two time-neighbors are present is filled by their mean;
    anything else missing is an error. Duplicated triples and non-uniform
    cadences are always errors.
    """
    try:
        frame = pd.read_csv(path, dtype=str)
    except Exception as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    expected = ["date", "location", "keyword", "value"]
    if list(frame.columns) != expected:
        raise IngestionError(f"header must be {','.join(expected)}, got {','.join(map(str, frame.columns))}")
    if len(frame) == 0:
        raise IngestionError("empty file")

    dates = _parse_dates(frame["date"])
    try:
        values = frame["value"].astype(np.float64).to_numpy()
    except (TypeError, ValueError) as exc:
        raise IngestionError(f"unparseable value: {exc}") from exc
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        bad = int(np.flatnonzero(~np.isfinite(values) | (values < 0))[0])
        raise IngestionError(f"value must be a nonnegative real at input row {bad + 2}")

    infer_cadence(dates)
    time_labels = sorted(set(dates))
    locations = sorted(set(frame["location"]))
    keywords = sorted(set(frame["keyword"]))
    t_idx = {d: i for i, d in enumerate(time_labels)}
    l_idx = {s: i for i, s in enumerate(locations)}
    k_idx = {s: i for i, s in enumerate(keywords)}

    grid = np.full((len(time_labels), len(locations), len(keywords)), np.nan)
    for d, loc, kw, val in zip(dates, frame["location"], frame["keyword"], values):
        cell = (t_idx[d], l_idx[loc], k_idx[kw])
        if not np.isnan(grid[cell]):
            raise IngestionError(f"duplicate entry for ({d.isoformat()}, {loc}, {kw})")
        grid[cell] = val

    missing = np.isnan(grid)
    if missing.any() and interpolate:
        # only isolated interior gaps qualify: both time-neighbors present
        fillable = missing.copy()
        fillable[0] = False
        fillable[-1] = False
        fillable[1:-1] &= ~missing[:-2] & ~missing[2:]
        t_m, l_m, k_m = np.nonzero(fillable)
        grid[t_m, l_m, k_m] = 0.5 * (grid[t_m - 1, l_m, k_m] + grid[t_m + 1, l_m, k_m])
        missing = np.isnan(grid)
    if missing.any():
        ti, li, ki = (int(i[0]) for i in np.nonzero(missing))
        raise IngestionError(
            "missing cell "
            f"({time_labels[ti].isoformat()}, {locations[li]}, {keywords[ki]})"
            + ("" if interpolate else "; rerun with interpolation to fill isolated gaps")
        )

    return ActivityTensor(grid, [d.isoformat() for d in time_labels], locations, keywords)


def from_arrays(values, time_labels=None, location_labels=None, keyword_labels=None,
                normalized: bool = False, start=date(2011, 1, 2), cadence_days: int = 7) -> ActivityTensor:
    """Wrap a raw (T, L, K) array, generating weekly date labels if absent."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ValueError(f"expected a 3rd-order array, got ndim={values.ndim}")
    t, l, k = values.shape
    if time_labels is None:
        time_labels = [(start + timedelta(days=cadence_days * i)).isoformat() for i in range(t)]
    if location_labels is None:
        location_labels = [f"L{i:02d}" for i in range(l)]
    if keyword_labels is None:
        keyword_labels = [f"k{i:02d}" for i in range(k)]
    return ActivityTensor(values, time_labels, location_labels, keyword_labels, normalized=normalized)


def normalize(tensor: ActivityTensor, stats_window_end: int | None = None) -> tuple[ActivityTensor, NormStats]:
    """Min-max scale each (location, keyword) series into [0, 1].

    Statistics come only from [0, stats_window_end) so later values leak
    nothing; those later values may leave [0, 1] and are clamped to
    [0, CLAMP_LIMIT] with a count kept in the returned stats. A constant
    series maps to zeros and is flagged rather than rejected.
    """
    if tensor.normalized:
        raise ValueError("tensor is already normalized")
    t_total = tensor.shape[0]
    end = t_total if stats_window_end is None else int(stats_window_end)
    if not 1 <= end <= t_total:
        raise ValueError(f"stats_window_end={end} outside [1, {t_total}]")

    window = tensor.values[:end]
    lo = window.min(axis=0)
    hi = window.max(axis=0)
    span = hi - lo
    flat = span == 0.0
    safe_span = np.where(flat, 1.0, span)

    scaled = (tensor.values - lo) / safe_span
    scaled[:, flat] = 0.0
    out_of_range = (scaled < 0.0) | (scaled > 1.0)
    clamped = int(np.count_nonzero(out_of_range))
    if clamped:
        logger.warning("%d normalized values fell outside [0, 1] and were clamped to [0, %.1f]",
                       clamped, CLAMP_LIMIT)
        scaled = np.clip(scaled, 0.0, CLAMP_LIMIT)

    stats = NormStats(lo, hi, end, CLAMP_LIMIT, clamped,
                      tuple(zip(*np.nonzero(flat))) if flat.any() else ())
    result = ActivityTensor(scaled, tensor.time_labels, tensor.location_labels,
                            tensor.keyword_labels, normalized=True)
    return result, stats


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Exact inverse of normalize() for non-clamped entries."""
    values = np.asarray(values, dtype=np.float64)
    span = stats.maximum - stats.minimum
    return values * span + stats.minimum


@dataclass(frozen=True)
class TensorView:
    """A time slice of a tensor; may be shorter than a valid full tensor."""

    values: np.ndarray
    time_labels: tuple
    location_labels: tuple
    keyword_labels: tuple
    normalized: bool

    def __post_init__(self):
        object.__setattr__(self, "time_labels", tuple(self.time_labels))

    @property
    def shape(self) -> tuple:
        return self.values.shape


def split(tensor: ActivityTensor, spec: SplitSpec) -> tuple[TensorView, TensorView]:
    """Cut [0, t_c) as the modeling view and [t_c, t_c + l_f) as the truth view.

    The truth view is truncated (and its real length logged) when the tensor
    ends early; with t_c == T it is empty (pure forecasting mode). The views
    share location/keyword labels and jointly cover [0, t_c + l_f) within
    the tensor.
    """
    spec.validate(tensor.shape[0])
    t_total = tensor.shape[0]
    truth_end = min(spec.t_c + spec.l_f, t_total)
    actual = truth_end - spec.t_c
    if actual < spec.l_f:
        logger.warning("truth view truncated to %d of %d requested steps", actual, spec.l_f)

    def view(a: int, b: int) -> TensorView:
        return TensorView(tensor.values[a:b], tensor.time_labels[a:b],
                          tensor.location_labels, tensor.keyword_labels, tensor.normalized)

    return view(0, spec.t_c), view(spec.t_c, truth_end)


def extend_time_labels(time_labels, steps: int) -> list:
    """Continue the label cadence past the last date for forecast output."""
    dates = _parse_dates(time_labels)
    cadence = infer_cadence(dates)
    last = max(dates)
    return [(last + cadence * (i + 1)).isoformat() for i in range(steps)]


def write_csv(path, tensor_like, time_labels=None) -> None:
    """Write values back to the long-format CSV schema, axes in label order."""
    values = tensor_like.values if hasattr(tensor_like, "values") else np.asarray(tensor_like)
    times = tuple(time_labels) if time_labels is not None else tensor_like.time_labels
    locs = tensor_like.location_labels
    kws = tensor_like.keyword_labels
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,location,keyword,value\n")
        for ti, d in enumerate(times):
            for li, loc in enumerate(locs):
                for ki, kw in enumerate(kws):
                    fh.write(f"{d},{loc},{kw},{values[ti, li, ki]!r}\n")
