"""Text tables in the style of hazard-ratio regression tables."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import stats as _stats

from .data import episodes_frame

LABELS = {
    "treat": "Treat",
    "pilot": "Pilot time",
    "treat_x_pilot": "Treat x pilot",
    "post": "Post time",
    "treat_x_post": "Treat x post",
    "pre": "Pre-pilot time",
    "treat_x_pre": "Treat x pre",
}


def stars(coef, se, levels=(0.10, 0.05, 0.01)) -> str:
    """Significance stars from a two-sided normal test of ``coef / se``."""
    if coef == 0 or not np.isfinite(se) or se <= 0:
        return ""
    p = 2 * _stats.norm.sf(abs(coef) / se)
    return "*" * sum(p < lv for lv in levels)


def sample_counts(episodes) -> dict:
    """Municipality, individual and failure counts (zero-weight rows included)."""
    frame = episodes_frame(episodes)
    ev = frame["event"].to_numpy(bool)
    return {
        "n_municipalities": int(frame["municipality_id"].nunique()),
        "n_individuals": int(frame["subject_id"].nunique()),
        "n_failures": int(ev.sum()),
        "n_failures_pilot": int((ev & (frame["p"].to_numpy() == 1)).sum()),
        "n_episodes": int(len(frame)),
    }


def coefficient_table(fit) -> pd.DataFrame:
    """Hazard ratios with delta-method standard errors and stars from the
    robust z statistic of the log coefficient."""
    se = fit.se_robust
    if not np.all(np.isfinite(se)):
        se = fit.se_model
    rows = []
    for t, b, s in zip(fit.terms, fit.beta, se):
        hr = float(np.exp(b))
        rows.append({"term": t, "label": LABELS.get(t, t), "hazard_ratio": hr,
                     "se": hr * float(s), "stars": stars(b, s)})
    return pd.DataFrame(rows, columns=["term", "label", "hazard_ratio", "se", "stars"])


def format_cox_table(fit, counts: dict | None = None) -> str:
    table = coefficient_table(fit)
    width = max([len(x) for x in table["label"]] + [24])
    out = []
    for r in table.itertuples(index=False):
        out.append(f"{r.label:<{width}} {r.hazard_ratio:>9.3f}{r.stars:<3}")
        out.append(f"{'':<{width}} {'(' + format(r.se, '.3f') + ')':>9}")
    out.append("-" * (width + 13))
    if counts:
        names = [("N municipalities", "n_municipalities"), ("N individuals", "n_individuals"),
                 ("N failures", "n_failures"), ("N failures during pilot", "n_failures_pilot")]
        for label, key in names:
            if key in counts:
                out.append(f"{label:<{width}} {counts[key]:>9,d}")
    out.append("Hazard ratios; standard errors (delta method, clustered) in parentheses.")
    out.append("*, ** and *** denote significance at the 10%, 5% and 1% level.")
    return "\n".join(out) + "\n"
