"""Assumption diagnostics and robustness checks.

Log cumulative hazard curves by group, placebo reforms, distance-window
sweeps and a back-of-the-envelope savings calculator.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .cox import CoxFit, default_terms, fit_cox, ratt_from_fit
from .data import PeriodWindows, episodes_frame, spells_frame
from .episodes import build_episodes, censor_spells
from .errors import EstimationError, InputError
from .matching import (MatchConfig, local_sample, municipalities_from_spells,
                       nearest_counterpart, pairwise_weights, apply_weights)


@dataclass
class CumHazCurve:
    group: object
    ages: np.ndarray
    cumhaz: np.ndarray
    at_risk: np.ndarray
    stratum: object = None

    @property
    def log_points(self):
        pos = self.cumhaz > 0
        return self.ages[pos], np.log(self.cumhaz[pos])

    def at(self, ages):
        c = np.concatenate([[0.0], self.cumhaz])
        return c[np.searchsorted(self.ages, np.asarray(ages, float), side="right")]


def nelson_aalen(start, stop, event, weight=None):
    """Weighted Nelson-Aalen estimate on counting-process data.

    Returns ``(ages, cumhaz, at_risk)`` at the distinct event ages, where
    ``at_risk`` is the unweighted number of rows with ``start < t <= stop``.
    """
    start = np.asarray(start, float)
    stop = np.asarray(stop, float)
    event = np.asarray(event, bool)
    w = np.ones(len(stop)) if weight is None else np.asarray(weight, float)
    ev = event & (w > 0)
    times = np.unique(stop[ev])
    so, sto = np.argsort(stop, kind="stable"), np.argsort(start, kind="stable")
    ws = np.concatenate([np.cumsum(w[so][::-1])[::-1], [0.0]])
    wst = np.concatenate([np.cumsum(w[sto][::-1])[::-1], [0.0]])
    i1 = np.searchsorted(stop[so], times, "left")
    i2 = np.searchsorted(start[sto], times, "left")
    risk_w = ws[i1] - wst[i2]
    risk_n = (len(stop) - i1) - (len(start) - i2)
    deaths = np.bincount(np.searchsorted(times, stop[ev]), weights=w[ev], minlength=times.size)
    return times, np.cumsum(deaths / risk_w), risk_n


@dataclass
class LoglogResult:
    curves: list
    parallelism_stat: float
    flagged: bool
    flag_level: float
    n_compared: int

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.curves:
            label = c.group if c.stratum is None else f"{c.group}@{c.stratum}"
            with np.errstate(divide="ignore"):
                logs = np.where(c.cumhaz > 0, np.log(np.where(c.cumhaz > 0, c.cumhaz, 1.0)), np.nan)
            rows.append(pd.DataFrame({"group": label, "age": c.ages, "cumhaz": c.cumhaz,
                                      "log_cumhaz": logs}))
        if not rows:
            return pd.DataFrame(columns=["group", "age", "cumhaz", "log_cumhaz"])
        return pd.concat(rows, ignore_index=True)


def _at_risk(start, stop, ages):
    """Unweighted count of rows with ``start < t <= stop`` at each age."""
    start = np.sort(np.asarray(start, float))
    stop = np.sort(np.asarray(stop, float))
    return (stop.size - np.searchsorted(stop, ages, "left")) - (start.size - np.searchsorted(start, ages, "left"))


def _parallelism(block, floor):
    """Max deviation of log-cumhaz differences from their median, against the
    first group of the block."""
    if len(block) < 2:
        return float("nan"), 0
    ref = block[0]
    worst, n_cmp = float("nan"), 0
    for other in block[1:]:
        ages = np.union1d(ref[0].ages, other[0].ages)
        ok = np.ones(ages.size, bool)
        vals = []
        for curve, start, stop in (ref, other):
            ch = curve.at(ages)
            ok &= (_at_risk(start, stop, ages) >= floor) & (ch > 0)
            vals.append(ch)
        if not ok.any():
            continue
        delta = np.log(vals[1][ok]) - np.log(vals[0][ok])
        dev = float(np.max(np.abs(delta - np.median(delta))))
        worst = dev if math.isnan(worst) else max(worst, dev)
        n_cmp += int(ok.sum())
    return worst, n_cmp


def loglog_curves(episodes, group_var="d", by_stratum=False, floor=30, flag_level=0.25):
    """Nelson-Aalen curves per group (optionally per stratum) and a
    parallelism statistic.

    The statistic is the largest absolute deviation of the between-group
    log cumulative hazard difference from its median, over ages where both
    groups have at least ``floor`` episodes at risk. It is flagged when it
    exceeds ``flag_level``.
    """
    frame = episodes_frame(episodes)
    if group_var == "treated":
        group_var = "d"
    if group_var not in frame.columns:
        raise InputError(f"unknown group variable {group_var!r}")
    blocks = [(None, frame)]
    if by_stratum:
        blocks = [(s, frame[frame["stratum"] == s]) for s in sorted(frame["stratum"].unique(), key=str)]
    curves, stat, n_cmp = [], float("nan"), 0
    for s, sub in blocks:
        block = []
        for g in sorted(sub[group_var].unique(), key=str):
            gs = sub[sub[group_var] == g]
            if not gs["event"].to_numpy(bool).any():
                warnings.warn(f"group {g!r} (stratum {s!r}) has no events; curve omitted",
                              stacklevel=2)
                continue
            ages, ch, risk = nelson_aalen(gs["start"], gs["stop"], gs["event"], gs["weight"])
            block.append((CumHazCurve(_plain(g), ages, ch, risk, _plain(s)),
                          gs["start"].to_numpy(float), gs["stop"].to_numpy(float)))
        curves.extend(c for c, _, _ in block)
        st, nc = _parallelism(block, floor)
        if not math.isnan(st):
            stat = st if math.isnan(stat) else max(stat, st)
        n_cmp += nc
    flagged = bool(not math.isnan(stat) and stat > flag_level)
    return LoglogResult(curves, stat, flagged, flag_level, n_cmp)


def _plain(x):
    return x.item() if isinstance(x, np.generic) else x


# ---------------------------------------------------------------------------
# placebo reform


def _as_window(w):
    if isinstance(w, PeriodWindows):
        return w.pilot_start, w.pilot_end_exclusive
    start, end = w
    return int(start), int(end)


def placebo_fit(spells, pseudo_window, windows: PeriodWindows | None = None, retain="none",
                ties="efron", stratum_width=5, covariates=(), cluster="cluster_id",
                **fit_options) -> CoxFit:
    """Fit the hazard model with a pseudo-treatment window before the pilot.

    ``retain`` controls the true-reform terms: ``'none'`` censors all spells
    at the end of the pseudo window; ``'pilot'`` censors at the end of the
    pilot and adds the pilot terms; ``'all'`` keeps every spell and adds pilot
    and post terms. The pseudo terms are ``pre`` and ``treat_x_pre``.
    """
    windows = windows or PeriodWindows()
    start, end = _as_window(pseudo_window)
    if not start < end:
        raise InputError("pseudo window must be non-empty")
    if end > windows.pilot_start:
        raise InputError("pseudo window overlaps the true pilot window")
    frame = spells_frame(spells)
    terms = ["pre", "treat", "treat_x_pre"]
    if retain == "none":
        frame = censor_spells(frame, end)
    elif retain == "pilot":
        frame = censor_spells(frame, windows.pilot_end_exclusive)
        terms += ["pilot", "treat_x_pilot"]
    elif retain == "all":
        terms += ["pilot", "treat_x_pilot"]
    else:
        raise InputError("retain must be 'none', 'pilot' or 'all'")
    eps = build_episodes(frame, windows, stratum_width, pre_window=(start, end))
    if retain == "all" and eps["q"].to_numpy().any():
        terms += ["post", "treat_x_post"]
    terms += list(covariates)
    return fit_cox(eps, terms, ties=ties, cluster=cluster, **fit_options)


# ---------------------------------------------------------------------------
# distance windows


@dataclass
class SweepResult:
    threshold: float
    metric: str
    hazard_ratio: float
    ci: tuple
    n_failures_pilot: int
    n_spells: int
    available: bool = True
    message: str = ""

    def to_dict(self):
        return {"threshold": self.threshold, "metric": self.metric,
                "hazard_ratio": _num(self.hazard_ratio), "ci_low": _num(self.ci[0]),
                "ci_high": _num(self.ci[1]), "n_failures_pilot": self.n_failures_pilot,
                "n_spells": self.n_spells, "available": self.available,
                "message": self.message}


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)


def distance_sweep(spells, distances, thresholds, metric="km", windows=None, ties="efron",
                   stratum_width=5, same_year=True, terms=None, cluster="cluster_id",
                   level=0.95, threads=1) -> list[SweepResult]:
    """Refit the matched local-sample model for each distance threshold."""
    thresholds = [float(t) for t in thresholds]
    if not thresholds or any(t <= 0 for t in thresholds):
        raise InputError("thresholds must be positive")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InputError("thresholds must be strictly increasing")
    windows = windows or PeriodWindows()
    frame = spells_frame(spells)
    base = MatchConfig(metric=metric, threshold=thresholds[-1], same_year=same_year)
    nearest = nearest_counterpart(municipalities_from_spells(frame, same_year), distances, base)

    def one(thr):
        cfg = MatchConfig(metric=metric, threshold=thr, same_year=same_year)
        local = local_sample(frame, nearest, cfg)
        nan2 = (float("nan"), float("nan"))
        try:
            weights = pairwise_weights(local, nearest, cfg)
        except InputError as exc:
            return SweepResult(thr, metric, float("nan"), nan2, 0, len(local), False, str(exc))
        eps = build_episodes(apply_weights(local, weights), windows, stratum_width)
        fails = int((eps["event"].to_numpy(bool) & (eps["p"].to_numpy() == 1)
                     & (eps["weight"].to_numpy() > 0)).sum())
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_cox(eps, terms if terms is not None else default_terms(eps), ties=ties,
                              cluster=cluster, with_baseline=False)
                est = ratt_from_fit(fit, level)
        except EstimationError as exc:
            return SweepResult(thr, metric, float("nan"), nan2, fails, len(local), False, str(exc))
        return SweepResult(thr, metric, est.hazard_ratio, (est.ci_low, est.ci_high), fails,
                           len(local), bool(fit.converged), fit.message)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, thresholds))
    return [one(t) for t in thresholds]


# ---------------------------------------------------------------------------
# cost effectiveness

COST_PARAMS = ("at_risk_population", "hazard_reduction_per_year", "avg_annual_benefit",
               "avg_remaining_years", "physician_positions", "cost_per_position")


def cost_effectiveness(params: dict) -> dict:
    """Yearly savings from prevented benefit entries net of staffing outlays."""
    missing = [k for k in COST_PARAMS if k not in params]
    if missing:
        raise InputError(f"missing cost parameters: {missing}")
    vals = {k: float(params[k]) for k in COST_PARAMS}
    neg = [k for k, v in vals.items() if not v >= 0]
    if neg:
        raise InputError(f"cost parameters must be nonnegative: {neg}")
    prevented = vals["at_risk_population"] * vals["hazard_reduction_per_year"]
    gross = prevented * vals["avg_annual_benefit"] * vals["avg_remaining_years"]
    staff = vals["physician_positions"] * vals["cost_per_position"]
    return {"prevented_entries": prevented, "gross_savings": gross, "staff_cost": staff,
            "net_savings": gross - staff}
