"""Border samples and nearest-neighbour matching weights.

Matching is one-directional (treated to control) with replacement at the
municipality-year level. A control spell's weight is the number of treated
spells matched to its municipality-year divided by the number of control
spells in that municipality-year; treated spells weigh one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import pandas as pd

from .data import spells_frame
from .errors import InputError

METRICS = {"km": "travel_km", "minutes": "travel_min"}


@dataclass(frozen=True)
class DistanceRecord:
    muni_a: object
    muni_b: object
    travel_km: float
    travel_min: float


@dataclass(frozen=True)
class MatchConfig:
    metric: str = "km"
    threshold: float = 20.0
    same_year: bool = True

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InputError(f"metric must be one of {sorted(METRICS)}, got {self.metric!r}")
        if not self.threshold > 0:
            raise InputError("threshold must be positive")


@dataclass(frozen=True)
class MatchWeight:
    spell_ref: object
    weight: float
    matched_muni: object
    matched_distance: float


def distances_frame(distances) -> pd.DataFrame:
    if isinstance(distances, pd.DataFrame):
        frame = distances.copy()
    else:
        frame = pd.DataFrame([vars(d) if not isinstance(d, dict) else d for d in distances],
                             columns=["muni_a", "muni_b", "travel_km", "travel_min"])
    for c in ("travel_km", "travel_min"):
        vals = frame[c].to_numpy(dtype=float)
        if np.any(vals < 0) or np.any(np.isnan(vals)):
            raise InputError(f"{c} must be nonnegative")
    return frame


def _sort_ids(ids):
    try:
        return sorted(ids)
    except TypeError:
        return sorted(ids, key=str)


def distance_matrix(distances, metric="km", ids=None):
    """Symmetric distance matrix over sorted municipality ids; missing pairs are inf."""
    frame = distances_frame(distances)
    col = METRICS[metric]
    if ids is None:
        ids = set(frame["muni_a"]).union(frame["muni_b"])
    ids = _sort_ids(set(ids))
    pos = {m: i for i, m in enumerate(ids)}
    D = np.full((len(ids), len(ids)), np.inf)
    np.fill_diagonal(D, 0.0)
    a = frame["muni_a"].to_numpy()
    b = frame["muni_b"].to_numpy()
    vals = frame[col].to_numpy(dtype=float)
    for x, y, v in zip(a, b, vals):
        i, j = pos.get(x), pos.get(y)
        if i is None or j is None:
            continue
        if i == j:
            if v != 0:
                raise InputError(f"self-distance of municipality {x!r} must be 0")
            continue
        for r, c in ((i, j), (j, i)):
            if np.isfinite(D[r, c]) and D[r, c] != v:
                raise InputError(f"asymmetric distance between {x!r} and {y!r}")
            D[r, c] = v
    return ids, D


def municipalities_from_spells(spells, same_year=True) -> list[tuple]:
    """Distinct ``(municipality, treated, year)`` triples present in the spells."""
    frame = spells_frame(spells)
    year = frame["sample_year"] if (same_year and "sample_year" in frame.columns) else None
    keys = pd.DataFrame({"m": frame["municipality_id"], "t": frame["treated"],
                         "y": year if year is not None else None})
    keys = keys.drop_duplicates()
    conflict = keys.groupby("m")["t"].nunique()
    if (conflict > 1).any():
        raise InputError(f"municipality {conflict[conflict > 1].index[0]!r} is both "
                         "treated and control")
    return [(m, bool(t), None if pd.isna(y) else y) for m, t, y in keys.itertuples(index=False)]


def nearest_counterpart(munis: Iterable[tuple], distances, config: MatchConfig = MatchConfig()):
    """Nearest opposite-group municipality for every ``(municipality, year)``.

    Returns ``{(muni, year): (match, distance)}``; the value is ``None`` when
    no counterpart lies at finite distance. Ties go to the smaller id.
    """
    munis = list(munis)
    if not config.same_year:
        munis = list({(m, t, None) for m, t, _ in munis})
    ids, D = distance_matrix(distances, config.metric,
                             ids=set(m for m, _, _ in munis) | _ids_in(distances))
    pos = {m: i for i, m in enumerate(ids)}
    out = {}
    years = {}
    for m, t, y in munis:
        years.setdefault(y, {})[m] = t
    for y, members in years.items():
        cols = np.array([pos[m] for m in ids if m in members])
        treated = np.array([members[ids[c]] for c in cols], dtype=bool)
        for m, t in members.items():
            cand = cols[treated != t]
            if cand.size == 0:
                out[(m, y)] = None
                continue
            d = D[pos[m], cand]
            k = int(np.argmin(d))  # cand ascending by id, so ties go to the smaller id
            out[(m, y)] = None if not np.isfinite(d[k]) else (ids[cand[k]], float(d[k]))
    return out


def _ids_in(distances):
    frame = distances_frame(distances)
    return set(frame["muni_a"]).union(frame["muni_b"])


def _spell_keys(frame: pd.DataFrame, config: MatchConfig):
    if config.same_year and "sample_year" in frame.columns:
        years = [None if pd.isna(y) else y for y in frame["sample_year"]]
    else:
        years = [None] * len(frame)
    return list(zip(frame["municipality_id"], years))


def local_sample(spells, nearest: dict, config: MatchConfig = MatchConfig()) -> pd.DataFrame:
    """Spells whose municipality's nearest counterpart is within the threshold."""
    frame = spells_frame(spells)
    keep = np.zeros(len(frame), dtype=bool)
    for i, key in enumerate(_spell_keys(frame, config)):
        hit = nearest.get(key)
        keep[i] = hit is not None and hit[1] <= config.threshold
    return frame.loc[keep].reset_index(drop=True)


def pairwise_weights(spells, nearest: dict, config: MatchConfig = MatchConfig()) -> pd.DataFrame:
    """Nearest-neighbour pairwise-difference weights for a local sample.

    Returns a frame aligned with ``spells`` with columns
    ``subject_id, weight, matched_muni, matched_distance``.
    """
    frame = spells_frame(spells)
    treated = frame["treated"].to_numpy(dtype=bool)
    if not treated.any() or treated.all():
        raise InputError("local sample needs spells in both treatment arms")
    keys = _spell_keys(frame, config)
    matched = [nearest.get(k) for k in keys]

    demand = {}
    for k, hit, t in zip(keys, matched, treated):
        if t and hit is not None:
            cell = (hit[0], k[1])
            demand[cell] = demand.get(cell, 0) + 1
    supply = {}
    for k, t in zip(keys, treated):
        if not t:
            supply[k] = supply.get(k, 0) + 1

    weight = np.zeros(len(frame))
    for i, (k, t) in enumerate(zip(keys, treated)):
        weight[i] = 1.0 if t else demand.get(k, 0) / supply[k]
    return pd.DataFrame({
        "subject_id": frame["subject_id"].to_numpy(),
        "weight": weight,
        "matched_muni": [h[0] if h else None for h in matched],
        "matched_distance": [h[1] if h else np.nan for h in matched],
    })


def apply_weights(spells, weights: pd.DataFrame) -> pd.DataFrame:
    """Replace spell weights by matching weights (row-aligned)."""
    frame = spells_frame(spells)
    if len(weights) != len(frame):
        raise InputError("weights are not aligned with spells")
    frame["weight"] = weights["weight"].to_numpy(dtype=float)
    return frame


def matched_sample(spells, distances, config: MatchConfig = MatchConfig(), nearest=None):
    """Local sample with matching weights applied, plus the weight table."""
    frame = spells_frame(spells)
    if nearest is None:
        nearest = nearest_counterpart(municipalities_from_spells(frame, config.same_year),
                                      distances, config)
    local = local_sample(frame, nearest, config)
    weights = pairwise_weights(local, nearest, config)
    return apply_weights(local, weights), weights
