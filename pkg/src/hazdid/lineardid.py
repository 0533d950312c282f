"""Linear difference-in-differences with two-way fixed effects.

Unit (canton) and time (year) effects are absorbed by alternating weighted
demeaning; inference uses the cluster-robust sandwich (CR0 by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import EstimationError, InputError, SingularDesignError
from .report import stars

PANEL_RESERVED = ("outcome", "treat", "pilot", "post", "canton", "year", "weight",
                  "cluster_id", "treat_x_pilot", "treat_x_post")


@dataclass(frozen=True)
class PanelRow:
    outcome: float
    treat_x_pilot: int
    unit_fe: object
    time_fe: object
    cluster_id: object
    treat_x_post: int = 0
    weight: float = 1.0
    covariates: dict = field(default_factory=dict)


@dataclass
class OlsFit:
    terms: list
    beta: np.ndarray
    vcov_cluster: np.ndarray
    n: int
    r2_within: float
    n_clusters: int
    iterations: int = 0
    correction: str = "CR0"

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.vcov_cluster), 0, None))

    def to_dict(self):
        return {"terms": list(self.terms),
                "beta": {t: float(b) for t, b in zip(self.terms, self.beta)},
                "se": {t: float(s) for t, s in zip(self.terms, self.se)},
                "vcov_cluster": self.vcov_cluster.tolist(),
                "n": int(self.n), "n_clusters": int(self.n_clusters),
                "r2_within": float(self.r2_within), "correction": self.correction}


def panel_frame(rows) -> pd.DataFrame:
    """Accept PanelRow records or a frame with either interaction columns or
    ``treat``/``pilot``/``post`` indicators."""
    if isinstance(rows, pd.DataFrame):
        frame = rows.copy()
    else:
        recs = []
        for r in rows:
            rec = {"outcome": r.outcome, "treat_x_pilot": r.treat_x_pilot,
                   "treat_x_post": r.treat_x_post, "canton": r.unit_fe, "year": r.time_fe,
                   "weight": r.weight, "cluster_id": r.cluster_id}
            rec.update(r.covariates)
            recs.append(rec)
        frame = pd.DataFrame(recs)
    if "treat_x_pilot" not in frame.columns:
        if not {"treat", "pilot"} <= set(frame.columns):
            raise InputError("panel needs treat_x_pilot or treat and pilot columns")
        frame["treat_x_pilot"] = frame["treat"].astype(float) * frame["pilot"].astype(float)
    if "treat_x_post" not in frame.columns and {"treat", "post"} <= set(frame.columns):
        frame["treat_x_post"] = frame["treat"].astype(float) * frame["post"].astype(float)
    if "weight" not in frame.columns:
        frame["weight"] = 1.0
    for c in ("outcome", "canton", "year", "cluster_id"):
        if c not in frame.columns:
            raise InputError(f"panel lacks column {c!r}")
    if np.any(frame["weight"].to_numpy(dtype=float) < 0):
        raise InputError("weights must be nonnegative")
    return frame


def default_panel_terms(frame: pd.DataFrame) -> list[str]:
    terms = ["treat_x_pilot"]
    if "treat_x_post" in frame.columns and frame["treat_x_post"].astype(float).any():
        terms.append("treat_x_post")
    return terms + [c for c in frame.columns if c not in PANEL_RESERVED]


def demean_twoway(M, unit, time, w, tol=1e-10, max_iter=10_000):
    """Weighted within transformation for two sets of fixed effects.

    Alternates subtraction of weighted unit and time means until the largest
    change in a pass falls below ``tol``.
    """
    M = np.array(M, dtype=float, copy=True)
    if M.ndim == 1:
        M = M[:, None]
    ug = pd.factorize(unit)[0]
    tg = pd.factorize(time)[0]
    wu = np.bincount(ug, weights=w)
    wt = np.bincount(tg, weights=w)
    for it in range(1, max_iter + 1):
        change = 0.0
        for g, wg in ((ug, wu), (tg, wt)):
            means = np.column_stack([np.bincount(g, weights=w * M[:, k]) for k in range(M.shape[1])])
            means = means / wg[:, None]
            M -= means[g]
            change = max(change, float(np.max(np.abs(means[g]))) if M.size else 0.0)
        if change < tol:
            return M, it
    raise EstimationError(f"fixed-effect demeaning did not converge in {max_iter} passes")


def _sandwich(Xd, e, w, groups, bread):
    ng = groups.max() + 1
    s = np.column_stack([np.bincount(groups, weights=w * e * Xd[:, k], minlength=ng)
                         for k in range(Xd.shape[1])])
    meat = np.einsum("ci,cj->ij", s, s)
    v = bread @ meat @ bread
    return 0.5 * (v + v.T), ng


def fit_ols_fe(rows, terms=None, tol=1e-10, correction="CR0") -> OlsFit:
    """Weighted two-way fixed-effects OLS with cluster-robust variance.

    Parameters
    ----------
    rows : DataFrame or list of PanelRow
    terms : list of str, optional
        Slope regressors; defaults to the DiD interactions plus any
        covariate columns.
    correction : {'CR0', 'CR1'}
        CR1 scales by ``G/(G-1) * (N-1)/(N-K)``.
    """
    frame = panel_frame(rows)
    terms = list(terms) if terms is not None else default_panel_terms(frame)
    w = frame["weight"].to_numpy(dtype=float)
    keep = w > 0
    frame = frame.loc[keep].reset_index(drop=True)
    w = w[keep]
    for t in terms:
        if t not in frame.columns:
            raise InputError(f"unknown term {t!r}")
    y = frame["outcome"].to_numpy(dtype=float)
    X = frame[terms].to_numpy(dtype=float) if terms else np.zeros((len(frame), 0))
    Z, iters = demean_twoway(np.column_stack([y, X]), frame["canton"].to_numpy(),
                             frame["year"].to_numpy(), w, tol=tol)
    yd, Xd = Z[:, 0], Z[:, 1:]

    G = np.einsum("n,ni,nj->ij", w, Xd, Xd)
    scale = np.sqrt(np.diag(G))
    raw = np.sqrt(np.einsum("n,ni,ni->i", w, X - np.average(X, axis=0, weights=w),
                            X - np.average(X, axis=0, weights=w))) if len(terms) else scale
    for k, t in enumerate(terms):
        if scale[k] <= 1e-9 * max(raw[k], 1.0):
            raise SingularDesignError(t, f"term {t!r} is absorbed by the fixed effects")
        if k:
            Gs = G[:k + 1, :k + 1] / np.outer(scale[:k + 1], scale[:k + 1])
            c = Gs[:k, k]
            if 1.0 - c @ np.linalg.solve(Gs[:k, :k], c) < 1e-10:
                raise SingularDesignError(t)

    xty = np.einsum("n,ni,n->i", w, Xd, yd)
    beta = np.linalg.solve(G, xty) if terms else np.zeros(0)
    e = yd - (Xd @ beta if terms else 0.0)

    groups = pd.factorize(frame["cluster_id"])[0]
    if groups.max() + 1 < 2:
        raise EstimationError("cluster-robust variance needs at least two clusters")
    bread = np.linalg.inv(G) if terms else np.zeros((0, 0))
    vcov, ng = _sandwich(Xd, e, w, groups, bread)
    if correction == "CR1":
        n, k = len(y), len(terms)
        vcov = vcov * (ng / (ng - 1)) * ((n - 1) / (n - k))
    elif correction != "CR0":
        raise InputError("correction must be CR0 or CR1")

    sst = float(np.sum(w * yd ** 2))
    ssr = float(np.sum(w * e ** 2))
    r2 = 0.0 if sst <= 0 else min(max(1.0 - ssr / sst, 0.0), 1.0)
    return OlsFit(terms=terms, beta=beta, vcov_cluster=vcov, n=len(y), r2_within=r2,
                  n_clusters=ng, iterations=iters, correction=correction)


def did_report(fit: OlsFit, labels=None) -> pd.DataFrame:
    labels = labels or {}
    rows = []
    for t, b, s in zip(fit.terms, fit.beta, fit.se):
        rows.append({"term": labels.get(t, t), "coefficient": float(b), "se": float(s),
                     "stars": stars(b, s)})
    return pd.DataFrame(rows, columns=["term", "coefficient", "se", "stars"])


def format_did_table(fit: OlsFit, labels=None) -> str:
    table = did_report(fit, labels)
    width = max([len(t) for t in table["term"]] + [12])
    lines = []
    for r in table.itertuples(index=False):
        lines.append(f"{r.term:<{width}}  {r.coefficient:>10.3f}{r.stars:<3}")
        lines.append(f"{'':<{width}}  {'(' + format(r.se, '.3f') + ')':>10}")
    lines.append(f"{'N':<{width}}  {fit.n:>10,d}")
    lines.append(f"{'Clusters':<{width}}  {fit.n_clusters:>10,d}")
    lines.append(f"{'Within R2':<{width}}  {fit.r2_within:>10.3f}")
    return "\n".join(lines) + "\n"
