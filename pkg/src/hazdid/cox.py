"""Stratified, weighted Cox proportional hazards regression.

Episodes are counting-process rows ``(start, stop]``: a row is at risk at an
event age ``t`` when ``start < t <= stop`` and belongs to the same stratum.
Tied event ages are handled with Efron's or Breslow's approximation.

For tied deaths at age ``t`` with ``d`` deaths of total weight ``W``, the
weighted Efron contribution is::

    sum_D w_i eta_i - (W / d) * sum_{r=0}^{d-1} log(R(t) - (r / d) * A(t))

with ``R`` the weighted risk-set sum of ``exp(eta)`` and ``A`` the same sum
over the deaths. Breslow replaces the second term by ``W log R(t)``.

All reductions over observations are plain numpy sums and cumulative sums,
never BLAS products, so results do not depend on thread counts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .data import episodes_frame
from .errors import EstimationError, InputError, SingularDesignError

TIES = ("efron", "breslow")

INDICATOR_TERMS = {
    "pilot": ("p",),
    "treat": ("d",),
    "treat_x_pilot": ("d", "p"),
    "post": ("q",),
    "treat_x_post": ("d", "q"),
    "pre": ("pre",),
    "treat_x_pre": ("d", "pre"),
}


def default_terms(episodes) -> list[str]:
    """Pilot, treat and their interaction, plus post terms when the post
    window is populated."""
    frame = episodes_frame(episodes)
    terms = ["pilot", "treat", "treat_x_pilot"]
    if len(frame) and frame["q"].to_numpy().any():
        terms += ["post", "treat_x_post"]
    return terms


def design_matrix(episodes, terms) -> np.ndarray:
    frame = episodes_frame(episodes)
    cols = []
    for t in terms:
        if t in INDICATOR_TERMS:
            col = np.ones(len(frame))
            for name in INDICATOR_TERMS[t]:
                col = col * frame[name].to_numpy(dtype=float)
        elif t in frame.columns:
            col = pd.to_numeric(frame[t], errors="coerce").to_numpy(dtype=float)
            if np.isnan(col).any():
                raise InputError(f"term {t!r} has missing or non-numeric values")
        else:
            raise InputError(f"unknown term {t!r}")
        cols.append(col)
    if not cols:
        return np.zeros((len(frame), 0))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# likelihood machinery


@dataclass
class _Stratum:
    label: object
    rows: np.ndarray          # row indices into the (collapsed) arrays
    times: np.ndarray         # distinct event ages, ascending
    stop_order: np.ndarray    # rows sorted by stop
    start_order: np.ndarray   # rows sorted by start
    stop_pos: np.ndarray      # first position in stop-sorted rows with stop >= t
    start_pos: np.ndarray     # first position in start-sorted rows with start >= t
    death_rows: np.ndarray    # event rows sorted by time
    death_bounds: np.ndarray  # reduceat boundaries into death_rows, one per time
    d: np.ndarray             # number of deaths per time
    W: np.ndarray             # weight of deaths per time


@dataclass
class _Prepared:
    X: np.ndarray
    w: np.ndarray
    count: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    strata: list
    center: np.ndarray
    ties: str


def _prepare(X, w, start, stop, event, stratum, ties, count=None, center=None):
    if ties not in TIES:
        raise InputError(f"ties must be one of {TIES}, got {ties!r}")
    X = np.asarray(X, dtype=float)
    if center is None:
        center = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
    X = X - center
    count = np.ones(len(w)) if count is None else np.asarray(count, dtype=float)
    strata = []
    labels, codes = np.unique(stratum, return_inverse=True)
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(len(labels) + 1))
    for k, label in enumerate(labels):
        rows = order[bounds[k]:bounds[k + 1]]
        ev = rows[event[rows]]
        if ev.size == 0:
            continue
        times = np.unique(stop[ev])
        so = rows[np.argsort(stop[rows], kind="stable")]
        sto = rows[np.argsort(start[rows], kind="stable")]
        stop_pos = np.searchsorted(stop[so], times, side="left")
        start_pos = np.searchsorted(start[sto], times, side="left")
        ev = ev[np.argsort(stop[ev], kind="stable")]
        death_bounds = np.searchsorted(stop[ev], times, side="left")
        d = np.add.reduceat(count[ev], death_bounds)
        W = np.add.reduceat(w[ev], death_bounds)
        strata.append(_Stratum(label, rows, times, so, sto, stop_pos, start_pos,
                               ev, death_bounds, d, W))
    return _Prepared(X, np.asarray(w, float), count, start, stop, event, strata, center, ties)


def _suffix(a):
    """Suffix sums with a trailing zero row: out[k] = sum(a[k:])."""
    out = np.zeros((a.shape[0] + 1,) + a.shape[1:])
    out[:-1] = np.cumsum(a[::-1], axis=0)[::-1]
    return out


def _tie_rows(st: _Stratum, ties):
    """Expand event times into approximation rows (time index, fraction, multiplier)."""
    if ties == "breslow":
        idx = np.arange(st.times.size)
        return idx, np.zeros(idx.size), st.W.astype(float)
    d = np.rint(st.d).astype(np.int64)
    idx = np.repeat(np.arange(st.times.size), d)
    r = np.arange(idx.size) - np.repeat(np.cumsum(d) - d, d)
    frac = r / d[idx]
    mult = (st.W / d)[idx]
    return idx, frac, mult


def _moments(prep: _Prepared, eta, order):
    v = prep.w * np.exp(eta)
    out = [v]
    if order >= 1:
        vx = v[:, None] * prep.X
        out.append(vx)
    if order >= 2:
        out.append(vx[:, :, None] * prep.X[:, None, :])
    return out


def _stratum_sums(st: _Stratum, moments):
    """Risk-set and death sums of each moment at the stratum's event times."""
    out = []
    for m in moments:
        risk = _suffix(m[st.stop_order])[st.stop_pos] - _suffix(m[st.start_order])[st.start_pos]
        death = np.add.reduceat(m[st.death_rows], st.death_bounds, axis=0)
        out.append((risk, death))
    return out


def _evaluate(prep: _Prepared, beta, order=2):
    p = prep.X.shape[1]
    eta = prep.X @ beta if p else np.zeros(len(prep.w))
    loglik = 0.0
    score = np.zeros(p)
    info = np.zeros((p, p))
    moments = _moments(prep, eta, order)
    for st in prep.strata:
        sums = _stratum_sums(st, moments)
        ev = st.death_rows
        loglik += np.sum(prep.w[ev] * eta[ev])
        idx, frac, mult = _tie_rows(st, prep.ties)
        R, A = sums[0]
        phi = R[idx] - frac * A[idx]
        if np.any(phi <= 0):
            raise EstimationError("non-positive risk-set sum; check episode intervals")
        loglik -= np.sum(mult * np.log(phi))
        if order >= 1:
            R1, A1 = sums[1]
            S1 = R1[idx] - frac[:, None] * A1[idx]
            score += np.sum(prep.w[ev][:, None] * prep.X[ev], axis=0)
            score -= np.sum((mult / phi)[:, None] * S1, axis=0)
        if order >= 2:
            R2, A2 = sums[2]
            S2 = R2[idx] - frac[:, None, None] * A2[idx]
            xbar = S1 / phi[:, None]
            info += np.sum((mult / phi)[:, None, None] * S2, axis=0)
            info -= np.sum(mult[:, None, None] * xbar[:, :, None] * xbar[:, None, :], axis=0)
    return loglik, score, info


def _score_residuals(prep: _Prepared, beta):
    """Per-row score residuals L_i with sum_i w_i L_i equal to the score."""
    n, p = prep.X.shape
    eta = prep.X @ beta if p else np.zeros(n)
    ee = np.exp(eta)
    resid = np.zeros((n, p))
    moments = _moments(prep, eta, 1)
    for st in prep.strata:
        sums = _stratum_sums(st, moments)
        R, A = sums[0]
        R1, A1 = sums[1]
        idx, frac, mult = _tie_rows(st, prep.ties)
        phi = R[idx] - frac * A[idx]
        xbar = (R1[idx] - frac[:, None] * A1[idx]) / phi[:, None]
        nt = st.times.size
        g = mult / phi
        a = np.bincount(idx, weights=g, minlength=nt)
        b = np.column_stack([np.bincount(idx, weights=g * xbar[:, k], minlength=nt)
                             for k in range(p)]) if p else np.zeros((nt, 0))
        a2 = np.bincount(idx, weights=g * frac, minlength=nt)
        b2 = np.column_stack([np.bincount(idx, weights=g * frac * xbar[:, k], minlength=nt)
                              for k in range(p)]) if p else np.zeros((nt, 0))
        nrow = np.bincount(idx, minlength=nt)
        xstar = np.column_stack([np.bincount(idx, weights=xbar[:, k], minlength=nt)
                                 for k in range(p)]) / nrow[:, None] if p else np.zeros((nt, 0))
        ca = np.concatenate([[0.0], np.cumsum(a)])
        cb = np.vstack([np.zeros((1, p)), np.cumsum(b, axis=0)])

        rows = st.rows
        hi = np.searchsorted(st.times, prep.stop[rows], side="right")
        lo = np.searchsorted(st.times, prep.start[rows], side="right")
        x = prep.X[rows]
        dA = ca[hi] - ca[lo]
        dB = cb[hi] - cb[lo]
        r = -ee[rows][:, None] * (x * dA[:, None] - dB)
        dead = prep.event[rows]
        if dead.any():
            j = hi[dead] - 1
            xd = x[dead]
            r[dead] += xd - xstar[j]
            r[dead] += ee[rows][dead][:, None] * (xd * a2[j][:, None] - b2[j])
        resid[rows] = r
    return resid


def _collapse(X, w, start, stop, event, stratum):
    """Merge rows identical in every likelihood-relevant field, summing weights."""
    key = np.column_stack([stratum.astype(float), start, stop, event.astype(float), X])
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    wsum = np.bincount(inverse, weights=w, minlength=len(uniq))
    cnt = np.bincount(inverse, minlength=len(uniq)).astype(float)
    return (uniq[:, 4:], wsum, cnt, uniq[:, 1], uniq[:, 2], uniq[:, 3].astype(bool),
            uniq[:, 0])


# ---------------------------------------------------------------------------
# public API


@dataclass
class CoxFit:
    """Result of :func:`fit_cox`.

    ``beta`` follows ``terms``. ``vcov_robust`` is the cluster sandwich
    (``None`` when fewer than two clusters are present). ``baseline`` holds
    the Breslow cumulative baseline hazard with columns
    ``stratum, age, cumhaz``.
    """

    terms: list
    beta: np.ndarray
    vcov_model: np.ndarray | None = None
    vcov_robust: np.ndarray | None = None
    loglik: float = float("nan")
    iterations: int = 0
    converged: bool = True
    ties: str = "efron"
    baseline: pd.DataFrame | None = None
    score: np.ndarray | None = None
    message: str = ""
    n_episodes: int = 0
    n_events: int = 0
    cluster: str | None = "cluster_id"
    dropped_strata: list = field(default_factory=list)

    def index(self, term):
        try:
            return self.terms.index(term)
        except ValueError:
            raise EstimationError(f"fit has no term {term!r}") from None

    @property
    def hazard_ratios(self):
        return {t: float(math.exp(b)) for t, b in zip(self.terms, self.beta)}

    @property
    def se_model(self):
        if self.vcov_model is None:
            return np.full(len(self.terms), np.nan)
        return np.sqrt(np.clip(np.diag(self.vcov_model), 0, None))

    @property
    def se_robust(self):
        if self.vcov_robust is None:
            return np.full(len(self.terms), np.nan)
        return np.sqrt(np.clip(np.diag(self.vcov_robust), 0, None))

    def to_dict(self):
        base = [] if self.baseline is None else [
            {"stratum": _jsonable(s), "age": float(a), "cumhaz": float(c)}
            for s, a, c in self.baseline[["stratum", "age", "cumhaz"]].itertuples(index=False)]
        return {
            "terms": list(self.terms),
            "beta": {t: float(b) for t, b in zip(self.terms, self.beta)},
            "se_model": {t: _finite(s) for t, s in zip(self.terms, self.se_model)},
            "se_robust": {t: _finite(s) for t, s in zip(self.terms, self.se_robust)},
            "hazard_ratios": self.hazard_ratios,
            "loglik": float(self.loglik),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "ties": self.ties,
            "cluster": self.cluster,
            "message": self.message,
            "n_episodes": int(self.n_episodes),
            "n_events": int(self.n_events),
            "baseline": base,
        }


def _finite(x):
    return float(x) if np.isfinite(x) else None


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    return x


def _frame_arrays(episodes, terms):
    frame = episodes_frame(episodes)
    X = design_matrix(frame, terms)
    w = frame["weight"].to_numpy(dtype=float)
    start = frame["start"].to_numpy(dtype=float)
    stop = frame["stop"].to_numpy(dtype=float)
    event = frame["event"].to_numpy(dtype=bool)
    stratum = frame["stratum"].to_numpy()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InputError("episode weights must be finite and nonnegative")
    if np.any(~(start < stop)):
        raise InputError("every episode needs start < stop")
    return frame, X, w, start, stop, event, stratum


def _strata_codes(stratum):
    _, codes = np.unique(stratum, return_inverse=True)
    return codes.ravel()


def _prepare_for(episodes, terms, ties, collapse=True):
    frame, X, w, start, stop, event, stratum = _frame_arrays(episodes, terms)
    keep = w > 0
    codes = _strata_codes(stratum)
    args = X[keep], w[keep], start[keep], stop[keep], event[keep], codes[keep]
    center = args[0].mean(axis=0) if keep.any() else np.zeros(X.shape[1])
    if collapse:
        Xc, wc, cc, s0, s1, ev, sc = _collapse(*args)
        prep = _prepare(Xc, wc, s0, s1, ev, sc, ties, count=cc, center=center)
    else:
        prep = _prepare(*args, ties, center=center)
    return frame, keep, stratum, prep


def _check_rank(prep: _Prepared, terms):
    """Name the first term whose stratum-centred column is in the span of
    the earlier ones (or constant within strata)."""
    p = len(terms)
    if p == 0:
        return
    X, w = prep.X, prep.w
    G = np.zeros((p, p))
    for st in prep.strata:
        r = st.rows
        ws = w[r]
        if ws.sum() <= 0:
            continue
        xc = X[r] - np.sum(ws[:, None] * X[r], axis=0) / ws.sum()
        G += np.einsum("n,ni,nj->ij", ws, xc, xc)
    scale = np.sqrt(np.maximum(np.diag(G), 0))
    xr = X - np.sum(w[:, None] * X, axis=0) / w.sum()
    raw = np.sqrt(np.einsum("n,ni,ni->i", w, xr, xr))
    for k in range(p):
        if scale[k] <= 1e-9 * raw[k] or scale[k] == 0:
            raise SingularDesignError(terms[k])
        if k == 0:
            continue
        Gs = G[:k + 1, :k + 1] / np.outer(scale[:k + 1], scale[:k + 1])
        prev = Gs[:k, :k]
        c = Gs[:k, k]
        try:
            resid = 1.0 - c @ np.linalg.solve(prev, c)
        except np.linalg.LinAlgError:
            resid = 0.0
        if resid < 1e-10:
            raise SingularDesignError(terms[k])


def partial_loglik(episodes, beta, terms=None, ties="efron"):
    """Weighted stratified log partial likelihood with analytic derivatives.

    Returns a dict with ``loglik``, ``score`` and ``hessian`` (the matrix of
    second derivatives, negative semidefinite).
    """
    terms = list(terms) if terms is not None else default_terms(episodes)
    beta = np.asarray(beta, dtype=float).reshape(len(terms))
    if not np.all(np.isfinite(beta)):
        raise InputError("beta must be finite")
    _, _, _, prep = _prepare_for(episodes, terms, ties)
    ll, score, info = _evaluate(prep, beta, order=2)
    return {"loglik": float(ll), "score": score, "hessian": -info}


def fit_cox(episodes, terms=None, ties="efron", tol=1e-9, max_iter=100,
            beta_bound=20.0, max_halvings=30, cluster="cluster_id",
            with_baseline=True) -> CoxFit:
    """Fit a stratified weighted Cox model by Newton-Raphson with step halving.

    Parameters
    ----------
    episodes : DataFrame or list of Episode
        Output of :func:`hazdid.episodes.build_episodes`.
    terms : list of str, optional
        Indicator terms (``pilot``, ``treat``, ``treat_x_pilot``, ``post``,
        ``treat_x_post``, ``pre``, ``treat_x_pre``) or covariate columns.
    ties : {'efron', 'breslow'}
    tol : float
        Convergence tolerance on the max-norm of the score.
    beta_bound : float
        A coefficient exceeding this in absolute value is reported as a
        diverging (monotone likelihood) term and the fit is non-converged.
    cluster : str or None
        Column defining clusters for the robust variance; ``None`` treats
        every episode as its own cluster.
    """
    terms = list(terms) if terms is not None else default_terms(episodes)
    frame, keep, stratum, prep = _prepare_for(episodes, terms, ties)
    with_events = set(pd.unique(stratum[keep & frame["event"].to_numpy(dtype=bool)]).tolist())
    dropped = sorted(set(pd.unique(stratum[keep]).tolist()) - with_events, key=str)
    if dropped:
        warnings.warn(f"dropping {len(dropped)} strata without events: {dropped}",
                      stacklevel=2)
    if not prep.strata:
        raise EstimationError("no events with positive weight")
    _check_rank(prep, terms)

    p = len(terms)
    beta = np.zeros(p)
    ll, score, info = _evaluate(prep, beta)
    converged = False
    message = ""
    it = 0
    for it in range(1, max_iter + 1):
        if p == 0 or np.max(np.abs(score)) < tol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularDesignError(_worst_term(info, terms)) from None
        new = beta + step
        ll_new = _evaluate(prep, new, order=0)[0]
        halvings = 0
        while not (np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll)) and halvings < max_halvings:
            step = step / 2
            new = beta + step
            ll_new = _evaluate(prep, new, order=0)[0]
            halvings += 1
        if not np.isfinite(ll_new) or ll_new < ll - 1e-12 * abs(ll):
            message = "step halving failed to increase the likelihood"
            break
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        beta = new
        ll, score, info = _evaluate(prep, beta)
        big = np.abs(beta) > beta_bound
        if big.any():
            names = [t for t, b in zip(terms, big) if b]
            message = f"monotone likelihood: coefficient diverging for {names}"
            warnings.warn(message, stacklevel=2)
            break
        if np.max(np.abs(score)) < tol or rel < 1e-12:
            converged = True
            break
    else:
        message = f"no convergence after {max_iter} iterations"

    try:
        vcov_model = np.linalg.inv(info) if p else np.zeros((0, 0))
    except np.linalg.LinAlgError:
        vcov_model = np.full((p, p), np.nan)
    vcov_model = 0.5 * (vcov_model + vcov_model.T)

    fit = CoxFit(terms=terms, beta=beta, vcov_model=vcov_model, loglik=float(ll),
                 iterations=it, converged=converged, ties=ties, score=score,
                 message=message, n_episodes=len(frame),
                 n_events=int(frame["event"].to_numpy(dtype=bool)[keep].sum()),
                 cluster=cluster, dropped_strata=dropped)
    try:
        fit.vcov_robust = robust_vcov(fit, frame, cluster=cluster)
    except EstimationError:
        fit.vcov_robust = None
    if with_baseline:
        fit.baseline = baseline_cumhaz(fit, frame)
    return fit


def _worst_term(info, terms):
    vals, vecs = np.linalg.eigh(info)
    return terms[int(np.argmax(np.abs(vecs[:, 0])))]


def score_residuals(fit: CoxFit, episodes) -> np.ndarray:
    """Weighted score residuals ``w_i L_i`` per episode (zero for weight 0)."""
    frame, X, w, start, stop, event, stratum = _frame_arrays(episodes, fit.terms)
    keep = w > 0
    codes = _strata_codes(stratum)
    prep = _prepare(X[keep], w[keep], start[keep], stop[keep], event[keep], codes[keep],
                    fit.ties)
    resid = np.zeros_like(X)
    resid[keep] = w[keep][:, None] * _score_residuals(prep, np.asarray(fit.beta, float))
    return resid


def robust_vcov(fit: CoxFit, episodes, cluster="cluster_id") -> np.ndarray:
    """Cluster sandwich ``H^-1 (sum_c s_c s_c') H^-1``.

    ``s_c`` sums the weighted score residuals of cluster ``c``. With
    ``cluster=None`` every episode is its own cluster.
    """
    frame = episodes_frame(episodes)
    s = score_residuals(fit, frame)
    if cluster is None:
        groups = np.arange(len(frame))
    else:
        if cluster not in frame.columns:
            raise InputError(f"no cluster column {cluster!r}")
        groups = pd.factorize(frame[cluster], sort=False)[0]
    keep = frame["weight"].to_numpy(dtype=float) > 0
    if np.unique(groups[keep]).size < 2:
        raise EstimationError("robust variance needs at least two clusters")
    if not fit.terms:
        return np.zeros((0, 0))
    ng = groups.max() + 1
    sc = np.column_stack([np.bincount(groups, weights=s[:, k], minlength=ng)
                          for k in range(s.shape[1])])
    meat = np.einsum("ci,cj->ij", sc, sc)
    _, _, info = _evaluate(_prepare_for(frame, fit.terms, fit.ties)[3],
                           np.asarray(fit.beta, float))
    bread = np.linalg.inv(info)
    v = bread @ meat @ bread
    return 0.5 * (v + v.T)


def baseline_cumhaz(fit: CoxFit, episodes) -> pd.DataFrame:
    """Breslow cumulative baseline hazard per stratum at covariates zero.

    Increment at event age ``t``: weighted events at ``t`` divided by the
    risk-set sum of ``w exp(x beta)``.
    """
    frame, X, w, start, stop, event, stratum = _frame_arrays(episodes, fit.terms)
    keep = w > 0
    beta = np.asarray(fit.beta, float)
    eta = X @ beta if len(beta) else np.zeros(len(w))
    v = w * np.exp(eta)
    out = []
    for label in pd.unique(stratum[keep]):
        m = keep & (stratum == label)
        ev = m & event
        if not ev.any():
            continue
        times = np.unique(stop[ev])
        so = np.sort(stop[m])
        vs = v[m][np.argsort(stop[m], kind="stable")]
        sto = np.sort(start[m])
        vst = v[m][np.argsort(start[m], kind="stable")]
        risk = (_suffix(vs)[np.searchsorted(so, times, "left")]
                - _suffix(vst)[np.searchsorted(sto, times, "left")])
        deaths = np.bincount(np.searchsorted(times, stop[ev]), weights=w[ev],
                             minlength=times.size)
        out.append(pd.DataFrame({"stratum": label, "age": times,
                                 "cumhaz": np.cumsum(deaths / risk)}))
    if not out:
        return pd.DataFrame({"stratum": [], "age": [], "cumhaz": []})
    res = pd.concat(out, ignore_index=True)
    return res.sort_values(["stratum", "age"], key=_sort_key, kind="stable").reset_index(drop=True)


def _sort_key(col):
    return col.map(str) if col.dtype == object else col


def cumhaz_at(baseline: pd.DataFrame, stratum, ages) -> np.ndarray:
    """Evaluate the right-continuous step function (zero before the first event)."""
    sub = baseline[baseline["stratum"] == stratum]
    t = sub["age"].to_numpy(dtype=float)
    c = np.concatenate([[0.0], sub["cumhaz"].to_numpy(dtype=float)])
    return c[np.searchsorted(t, np.asarray(ages, dtype=float), side="right")]


@dataclass(frozen=True)
class RattEstimate:
    hazard_ratio: float
    ci_low: float
    ci_high: float
    percent_change: float
    se_log: float
    level: float = 0.95

    @property
    def se(self):
        """Standard error on the hazard-ratio scale (delta method)."""
        return self.hazard_ratio * self.se_log

    def to_dict(self):
        return {"hazard_ratio": self.hazard_ratio, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "percent_change": self.percent_change,
                "se": self.se, "se_log": self.se_log, "level": self.level}


def ratt_from_fit(fit: CoxFit, level=0.95, term="treat_x_pilot", robust=True) -> RattEstimate:
    """Relative ATT ``exp(beta)`` for the interaction term with a log-scale CI."""
    if term not in fit.terms:
        raise EstimationError(f"fit has no interaction term {term!r}")
    k = fit.terms.index(term)
    b = float(fit.beta[k])
    vcov = fit.vcov_robust if robust else fit.vcov_model
    if vcov is None:
        raise EstimationError("fit has no robust variance (fewer than two clusters)")
    se = float(math.sqrt(max(vcov[k, k], 0.0)))
    z = stats.norm.ppf(0.5 + level / 2)
    hr = math.exp(b)
    return RattEstimate(hazard_ratio=hr, ci_low=math.exp(b - z * se),
                        ci_high=math.exp(b + z * se), percent_change=100.0 * (hr - 1.0),
                        se_log=se, level=level)
