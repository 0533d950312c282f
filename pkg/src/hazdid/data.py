"""Record types and tabular coercion for spells and episodes.

Spells and episodes are handled internally as :class:`pandas.DataFrame`
objects (one row per record). The dataclasses here are the row-level view
used by callers that prefer records; every public function accepts either.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import InputError

SPELL_COLUMNS = (
    "subject_id", "birth_year", "entry_age", "exit_age", "event", "treated",
    "municipality_id", "weight", "cluster_id",
)
# Optional columns with a fixed meaning; everything else is a covariate.
SPELL_OPTIONAL = ("sample_year",)

EPISODE_COLUMNS = (
    "subject_id", "start", "stop", "event", "d", "p", "q", "pre", "stratum",
    "weight", "cluster_id", "municipality_id", "birth_year",
)


@dataclass(frozen=True)
class Spell:
    subject_id: object
    birth_year: int
    exit_age: float
    event: bool
    treated: bool
    municipality_id: object = None
    weight: float = 1.0
    cluster_id: object = None
    entry_age: float = 18.0
    covariates: Mapping[str, float] = field(default_factory=dict)
    sample_year: int | None = None


@dataclass(frozen=True)
class PeriodWindows:
    """Calendar windows for the pilot and post indicators (end-exclusive)."""

    pilot_start: int = 2002
    pilot_end_exclusive: int = 2005
    post_end_exclusive: int = 2012

    def __post_init__(self):
        if not (self.pilot_start < self.pilot_end_exclusive <= self.post_end_exclusive):
            raise InputError(
                "windows must satisfy pilot_start < pilot_end_exclusive <= post_end_exclusive, "
                f"got {self.pilot_start}, {self.pilot_end_exclusive}, {self.post_end_exclusive}")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "PeriodWindows":
        if d is None:
            return cls()
        return cls(**{k: int(v) for k, v in d.items()})

    def to_dict(self):
        return {"pilot_start": self.pilot_start,
                "pilot_end_exclusive": self.pilot_end_exclusive,
                "post_end_exclusive": self.post_end_exclusive}


@dataclass(frozen=True)
class Episode:
    start: float
    stop: float
    event: bool
    d: int
    p: int
    q: int
    stratum: int
    weight: float
    cluster_id: object
    subject_id: object = None
    pre: int = 0
    covariates: Mapping[str, float] = field(default_factory=dict)


def covariate_columns(frame: pd.DataFrame, reserved=SPELL_COLUMNS + SPELL_OPTIONAL):
    return [c for c in frame.columns if c not in reserved]


def spells_frame(spells) -> pd.DataFrame:
    """Coerce a list of :class:`Spell` or a DataFrame to a validated spell frame."""
    if isinstance(spells, pd.DataFrame):
        frame = spells.copy()
    else:
        spells = list(spells)
        rows = []
        for s in spells:
            row = {"subject_id": s.subject_id, "birth_year": s.birth_year,
                   "entry_age": s.entry_age, "exit_age": s.exit_age,
                   "event": s.event, "treated": s.treated,
                   "municipality_id": s.municipality_id, "weight": s.weight,
                   "cluster_id": s.subject_id if s.cluster_id is None else s.cluster_id}
            if s.sample_year is not None:
                row["sample_year"] = s.sample_year
            row.update(s.covariates)
            rows.append(row)
        frame = pd.DataFrame(rows, columns=None if rows else list(SPELL_COLUMNS))
    missing = [c for c in SPELL_COLUMNS if c not in frame.columns]
    if "cluster_id" in missing and "subject_id" in frame.columns:
        frame["cluster_id"] = frame["subject_id"]
        missing.remove("cluster_id")
    if "weight" in missing:
        frame["weight"] = 1.0
        missing.remove("weight")
    if "entry_age" in missing:
        frame["entry_age"] = 18.0
        missing.remove("entry_age")
    if "municipality_id" in missing:
        frame["municipality_id"] = None
        missing.remove("municipality_id")
    if missing:
        raise InputError(f"spell data lacks required columns: {missing}")
    validate_spells(frame)
    frame["event"] = frame["event"].astype(bool)
    frame["treated"] = frame["treated"].astype(bool)
    frame["weight"] = frame["weight"].astype(float)
    frame["entry_age"] = frame["entry_age"].astype(float)
    frame["exit_age"] = frame["exit_age"].astype(float)
    frame["birth_year"] = frame["birth_year"].astype(np.int64)
    return frame.reset_index(drop=True)


def validate_spells(frame: pd.DataFrame, max_age: float | None = None) -> None:
    """Raise :class:`InputError` naming the first offending subject."""
    by = pd.to_numeric(frame["birth_year"], errors="coerce")
    bad = by.isna().to_numpy()
    if bad.any():
        sid = frame["subject_id"].to_numpy()[bad.argmax()]
        raise InputError(f"subject {sid!r}: unknown birth_year")
    entry = frame["entry_age"].to_numpy(dtype=float)
    exit_ = frame["exit_age"].to_numpy(dtype=float)
    bad = ~(entry < exit_)
    if bad.any():
        i = bad.argmax()
        sid = frame["subject_id"].to_numpy()[i]
        raise InputError(
            f"subject {sid!r}: entry_age {entry[i]:g} is not before exit_age {exit_[i]:g}")
    w = frame["weight"].to_numpy(dtype=float)
    bad = ~(w >= 0)
    if bad.any():
        sid = frame["subject_id"].to_numpy()[bad.argmax()]
        raise InputError(f"subject {sid!r}: weight must be nonnegative")
    if max_age is not None:
        bad = frame["event"].to_numpy(dtype=bool) & (exit_ > max_age)
        if bad.any():
            sid = frame["subject_id"].to_numpy()[bad.argmax()]
            raise InputError(f"subject {sid!r}: event after censoring age {max_age:g}")


def episodes_to_records(episodes: pd.DataFrame) -> list[Episode]:
    covs = covariate_columns(episodes, EPISODE_COLUMNS)
    out = []
    for row in episodes.itertuples(index=False):
        r = row._asdict()
        out.append(Episode(
            start=r["start"], stop=r["stop"], event=bool(r["event"]), d=int(r["d"]),
            p=int(r["p"]), q=int(r["q"]), pre=int(r["pre"]), stratum=int(r["stratum"]),
            weight=float(r["weight"]), cluster_id=r["cluster_id"], subject_id=r["subject_id"],
            covariates={c: r[c] for c in covs}))
    return out


def episodes_frame(episodes: Iterable[Episode] | pd.DataFrame) -> pd.DataFrame:
    if isinstance(episodes, pd.DataFrame):
        return episodes
    rows = []
    for e in episodes:
        row = {"subject_id": e.subject_id, "start": e.start, "stop": e.stop,
               "event": bool(e.event), "d": e.d, "p": e.p, "q": e.q, "pre": e.pre,
               "stratum": e.stratum, "weight": e.weight, "cluster_id": e.cluster_id,
               "municipality_id": None, "birth_year": None}
        row.update(e.covariates)
        rows.append(row)
    return pd.DataFrame(rows, columns=None if rows else list(EPISODE_COLUMNS))
