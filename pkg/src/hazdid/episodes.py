"""Split age-timescale spells into counting-process episodes.

An age interval ``(a, a + 1]`` is lived in calendar year ``birth_year + a``,
so a calendar boundary ``Y`` becomes the age cut ``Y - birth_year``. Every
episode lies between two consecutive cuts and therefore carries constant
period indicators.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .data import PeriodWindows, covariate_columns, spells_frame
from .errors import InputError


def build_episodes(spells, windows: PeriodWindows | None = None, stratum_width: int = 5,
                   pre_window: tuple[int, int] | None = None) -> pd.DataFrame:
    """Split each spell at the pilot and post boundaries.

    Parameters
    ----------
    spells : list of Spell or DataFrame
    windows : PeriodWindows
        Pilot window ``[pilot_start, pilot_end_exclusive)`` and post window
        ``[pilot_end_exclusive, post_end_exclusive)``.
    stratum_width : int
        Birth-cohort width in years; ``stratum = birth_year // stratum_width``.
    pre_window : (start, end_exclusive), optional
        Extra calendar window (placebo reform) flagged in column ``pre``.

    Returns
    -------
    DataFrame
        One row per episode ``(start, stop]`` with columns ``d``, ``p``,
        ``q``, ``pre``, ``stratum``, the spell identifiers, weight and
        covariates. Only the last episode of a spell can carry the event.
    """
    windows = windows or PeriodWindows()
    if int(stratum_width) < 1:
        raise InputError("stratum_width must be at least 1")
    frame = spells_frame(spells)
    covs = covariate_columns(frame)
    n = len(frame)

    birth = frame["birth_year"].to_numpy(dtype=np.int64)
    entry = frame["entry_age"].to_numpy(dtype=float)
    exit_ = frame["exit_age"].to_numpy(dtype=float)

    boundaries = [windows.pilot_start, windows.pilot_end_exclusive, windows.post_end_exclusive]
    if pre_window is not None:
        boundaries += list(pre_window)
    boundaries = sorted(set(boundaries))
    cuts = np.array(boundaries, dtype=float)[None, :] - birth[:, None]
    inside = (cuts > entry[:, None]) & (cuts < exit_[:, None])
    cuts = np.where(inside, cuts, np.inf)
    cuts.sort(axis=1)
    n_cuts = inside.sum(axis=1)
    n_pieces = n_cuts + 1

    rows = np.repeat(np.arange(n), n_pieces)
    piece = np.arange(rows.size) - np.repeat(np.cumsum(n_pieces) - n_pieces, n_pieces)
    # edges[i] = [entry, cut_1, ..., cut_k, exit] padded with inf
    edges = np.column_stack([entry, cuts, np.full(n, np.inf)])
    edges[np.arange(n), n_cuts + 1] = exit_
    start = edges[rows, piece]
    stop = edges[rows, piece + 1]
    last = piece == n_pieces[rows] - 1

    mid = birth[rows] + 0.5 * (start + stop)
    p = (mid >= windows.pilot_start) & (mid < windows.pilot_end_exclusive)
    q = (mid >= windows.pilot_end_exclusive) & (mid < windows.post_end_exclusive)
    if pre_window is not None:
        pre = (mid >= pre_window[0]) & (mid < pre_window[1])
    else:
        pre = np.zeros(rows.size, dtype=bool)

    out = pd.DataFrame({
        "subject_id": frame["subject_id"].to_numpy()[rows],
        "start": start,
        "stop": stop,
        "event": frame["event"].to_numpy(dtype=bool)[rows] & last,
        "d": frame["treated"].to_numpy(dtype=np.int64)[rows],
        "p": p.astype(np.int64),
        "q": q.astype(np.int64),
        "pre": pre.astype(np.int64),
        "stratum": np.floor_divide(birth, int(stratum_width))[rows],
        "weight": frame["weight"].to_numpy(dtype=float)[rows],
        "cluster_id": frame["cluster_id"].to_numpy()[rows],
        "municipality_id": frame["municipality_id"].to_numpy()[rows],
        "birth_year": birth[rows],
    })
    for c in covs:
        out[c] = frame[c].to_numpy()[rows]
    return out


def censor_spells(spells, calendar_end: int) -> pd.DataFrame:
    """Censor every spell at the start of calendar year ``calendar_end``.

    Spells that begin at or after the cut are dropped.
    """
    frame = spells_frame(spells)
    limit = calendar_end - frame["birth_year"].to_numpy(dtype=float)
    exit_ = frame["exit_age"].to_numpy(dtype=float)
    over = exit_ > limit
    frame.loc[over, "exit_age"] = limit[over]
    frame.loc[over, "event"] = False
    keep = frame["exit_age"].to_numpy(dtype=float) > frame["entry_age"].to_numpy(dtype=float)
    return frame.loc[keep].reset_index(drop=True)
