"""Turning fitted parameters into human-readable findings.

Three artifacts come out of a fitted model: the typed relationship graph
between keywords at each location (read off the signs of the interaction
coefficients), the time-varying flow of influence between area groups, and
per-series seasonal profiles. Everything is emitted as plot-ready data; no
rendering happens here.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from datetime import date

import numpy as np

from .clustering import embed
from .model import FluxCubeModel, dump_json

EPS_ZERO = 0.05
MAX_FLOW_SERIES = 16

COMPETITIVE = "competitive"
PARASITIC = "parasitic"
COMMENSAL = "commensal"
MUTUALISTIC = "mutualistic"
NONE = "none"
UNCLASSIFIED = "unclassified"


def classify_pair(c_ab: float, c_ba: float, eps_zero: float = EPS_ZERO) -> str:
    """Relationship type for one keyword pair from its two coefficients.

    Coefficients within ``eps_zero`` of zero count as zero. Sign patterns
    outside the four named classes (a positive paired with a zero) are kept
    apart as "unclassified" instead of being forced into a class.
    """
    s1 = 0.0 if abs(c_ab) <= eps_zero else c_ab
    s2 = 0.0 if abs(c_ba) <= eps_zero else c_ba
    if s1 > 0 and s2 > 0:
        return COMPETITIVE
    if (s1 < 0 < s2) or (s2 < 0 < s1):
        return PARASITIC
    if (s1 < 0 and s2 == 0) or (s2 < 0 and s1 == 0):
        return COMMENSAL
    if s1 < 0 and s2 < 0:
        return MUTUALISTIC
    if s1 == 0 and s2 == 0:
        return NONE
    return UNCLASSIFIED


@dataclass
class RelationshipGraph:
    """Typed keyword-pair relationships for one location's coefficients."""

    pairs: list  # one record per unordered keyword pair
    edges: list  # directed edges (source influences target), with intensity


def classify_relationships(c: np.ndarray, eps_zero: float = EPS_ZERO,
                           keywords=None) -> RelationshipGraph:
    """Classify every keyword pair of one K x K interaction matrix.

    ``c[j, j2]`` is the influence of keyword j2 on keyword j. A directed
    edge j2 -> j is emitted whenever that coefficient survives the zero
    threshold, labeled with the pair's relationship type and the
    coefficient's magnitude as intensity.
    """
    c = np.asarray(c, dtype=np.float64)
    k = c.shape[0]
    if c.shape != (k, k):
        raise ValueError("interaction matrix must be square")
    if not np.all(np.diag(c) == 1.0):
        raise ValueError("interaction diagonal must be exactly 1")
    names = list(keywords) if keywords is not None else [f"k{i:02d}" for i in range(k)]
    pairs = []
    edges = []
    for j in range(k):
        for j2 in range(j + 1, k):
            kind = classify_pair(c[j, j2], c[j2, j], eps_zero)
            pairs.append({"keywords": [names[j], names[j2]], "type": kind,
                          "coefficients": {f"{names[j2]}->{names[j]}": float(c[j, j2]),
                                           f"{names[j]}->{names[j2]}": float(c[j2, j])}})
            if abs(c[j, j2]) > eps_zero:
                edges.append({"source": names[j2], "target": names[j], "type": kind,
                              "intensity": float(abs(c[j, j2]))})
            if abs(c[j2, j]) > eps_zero:
                edges.append({"source": names[j], "target": names[j2], "type": kind,
                              "intensity": float(abs(c[j2, j]))})
    return RelationshipGraph(pairs, edges)


@dataclass
class FlowSummary:
    """Averaged group-to-group flows per aggregation bucket, plus raw series."""

    aggregation: str
    buckets: list  # {"label": str, "start": int, "end": int}
    means: list  # {"bucket", "source", "target", "keyword", "value"}
    series: list  # {"source", "target", "keyword", "values": [...]} for top flows


def summarize_flows(model: FluxCubeModel, window: tuple | None = None,
                    aggregation: str = "yearly",
                    max_series: int = MAX_FLOW_SERIES) -> FlowSummary:
    """Average the flow tensors over yearly buckets (or the whole window).

    ``window`` is a (start, end) range of modeling steps; it must stay within
    the modeling window, where the fitted generator is trusted. Per-step
    series are kept for the strongest flows so the averages can be re-checked.
    """
    if aggregation not in ("yearly", "full"):
        raise ValueError("aggregation must be 'yearly' or 'full'")
    n_total = model.n_model_steps()
    start, end = (0, n_total) if window is None else (int(window[0]), int(window[1]))
    if not 0 <= start < end <= n_total:
        raise ValueError(f"window [{start}, {end}) outside the modeling range [0, {n_total})")

    flows = model.materialize_flows()[start:end]
    d_l = model.d_l
    k = model.shape[1]
    keywords = list(model.keyword_labels) or [f"k{i:02d}" for i in range(k)]
    group_names = [f"group{g}" for g in range(d_l)]

    if aggregation == "full":
        bounds = [(start, end)]
    else:
        p = model.period
        bounds = [(s, min(s + p, end)) for s in range(start, end, p)]
    buckets = []
    for lo, hi in bounds:
        label = str(model.time_labels[lo]) if lo < len(model.time_labels) else f"step{lo}"
        buckets.append({"label": label, "start": lo, "end": hi})

    means = []
    totals = np.zeros((d_l, d_l, k))
    for bucket, (lo, hi) in zip(buckets, bounds):
        avg = flows[lo - start:hi - start].mean(axis=0)
        totals += avg
        for g in range(d_l):
            for g2 in range(d_l):
                if g == g2:
                    continue
                for j in range(k):
                    means.append({"bucket": bucket["label"], "source": group_names[g2],
                                  "target": group_names[g], "keyword": keywords[j],
                                  "value": float(avg[g, g2, j])})

    series = []
    flat = [(totals[g, g2, j], g, g2, j)
            for g in range(d_l) for g2 in range(d_l) for j in range(k) if g != g2]
    flat.sort(key=lambda item: (-item[0], item[1], item[2], item[3]))
    for _, g, g2, j in flat[:max_series]:
        series.append({"source": group_names[g2], "target": group_names[g],
                       "keyword": keywords[j],
                       "values": flows[:, g, g2, j].tolist()})
    return FlowSummary(aggregation, buckets, means, series)


def seasonal_profile(model: FluxCubeModel, location, keyword) -> dict:
    """The fitted seasonal gain of one series, phase by phase.

    Phases are mapped back to calendar positions (ISO weeks for weekly data)
    using the modeling window's time labels.
    """
    locations = list(model.location_labels)
    keywords = list(model.keyword_labels)
    try:
        li = locations.index(location) if isinstance(location, str) else int(location)
        ki = keywords.index(keyword) if isinstance(keyword, str) else int(keyword)
    except ValueError as exc:
        raise KeyError(f"unknown location or keyword: {location!r}, {keyword!r}") from exc
    if not (0 <= li < model.shape[0] and 0 <= ki < model.shape[1]):
        raise KeyError(f"location/keyword index out of range: {location!r}, {keyword!r}")
    p = model.period
    values = (model.seasonality.values[:, li, ki] if model.seasonality is not None
              else np.zeros(p))
    labels = []
    for phase in range(p):
        if phase < len(model.time_labels):
            iso = date.fromisoformat(str(model.time_labels[phase])).isocalendar()
            labels.append(f"W{iso.week:02d}")
        else:
            labels.append(f"phase{phase}")
    return {"location": locations[li] if locations else li,
            "keyword": keywords[ki] if keywords else ki,
            "phases": list(range(p)), "labels": labels,
            "values": [float(v) for v in values]}


# ---------------------------------------------------------------------------
# artifact writers used by the explain command


def write_artifacts(model: FluxCubeModel, out_dir, eps_zero: float = EPS_ZERO) -> list:
    """Emit interactions.json, flows.json, seasonality.csv, and groups.json."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    locations = list(model.location_labels) or [f"L{i:02d}" for i in range(model.shape[0])]
    keywords = list(model.keyword_labels) or [f"k{i:02d}" for i in range(model.shape[1])]

    interactions = []
    c_all = model.reaction.c
    for li, loc in enumerate(locations):
        graph = classify_relationships(c_all[li], eps_zero, keywords)
        interactions.append({"location": loc, "pairs": graph.pairs, "edges": graph.edges})
    path = os.path.join(out_dir, "interactions.json")
    dump_json({"eps_zero": eps_zero, "locations": interactions}, path)
    written.append(path)

    summary = summarize_flows(model)
    path = os.path.join(out_dir, "flows.json")
    dump_json({"aggregation": summary.aggregation, "buckets": summary.buckets,
               "means": summary.means, "series": summary.series}, path)
    written.append(path)

    path = os.path.join(out_dir, "seasonality.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phase,location,keyword,value\n")
        gains = (model.seasonality.values if model.seasonality is not None
                 else np.zeros((model.period, *model.shape)))
        for phase in range(model.period):
            for li, loc in enumerate(locations):
                for ki, kw in enumerate(keywords):
                    fh.write(f"{phase},{loc},{kw},{gains[phase, li, ki]!r}\n")
    written.append(path)

    coords = model.embedding
    if coords is None and model.shape[0] >= 2:
        coords = embed(model.reaction).coordinates
    rows = []
    for li, loc in enumerate(locations):
        xy = [float(coords[li, 0]), float(coords[li, 1])] if coords is not None else [0.0, 0.0]
        rows.append({"location": loc, "group": int(model.groups.group[li]), "embedding": xy})
    path = os.path.join(out_dir, "groups.json")
    dump_json({"d_l": model.d_l, "embedding_method": "pca", "locations": rows}, path)
    written.append(path)
    return written
