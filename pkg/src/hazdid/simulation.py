"""Synthetic populations with latent eligibility types.

Each subject has a birth year, an arm (treated region or not) and a latent
eligibility type. Failure is a yearly Bernoulli draw from age 18: the age
interval ``(a, a + 1]`` is lived in calendar year ``birth_year + a`` and an
event in it is recorded at exit age ``a + 1``.

The yearly hazard is the product of an age/stratum schedule, arm, period
and drift multipliers, and a type hazard: ``h1(E)`` for treated-arm
subjects during the pilot window, ``h0(E)`` otherwise. When the share of
eligible applicants under treatment differs from the population share, the
treated pilot hazards are reweighted by ``p1/p0`` (eligible) and
``(1-p1)/(1-p0)`` (ineligible) so the aggregate treated hazard equals the
mixture with shares ``p1``.

Random numbers come from fixed-size chunks of subjects, each with its own
Philox stream keyed by ``(seed, chunk)``, so output does not depend on how
chunks are scheduled across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .data import PeriodWindows
from .errors import EstimationError, InputError

CHUNK = 8192


@dataclass(frozen=True)
class TypeEffects:
    h0_eligible: float = 0.004
    h1_eligible: float = 0.004
    h0_ineligible: float = 0.004
    h1_ineligible: float = 0.004

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not 0.0 <= v < 1.0:
                raise InputError(f"{k} must lie in [0, 1), got {v}")

    @classmethod
    def proportional(cls, h0: float, ratio: float) -> "TypeEffects":
        """Both types share hazard ``h0`` and the same treatment ratio."""
        return cls(h0, h0 * ratio, h0, h0 * ratio)


@dataclass(frozen=True)
class DgpConfig:
    n_subjects: int = 100_000
    p_eligible: float = 0.6
    p_eligible_treated_counterfactual: float | None = None
    effects: TypeEffects = field(default_factory=TypeEffects)
    share_treated: float = 0.5
    birth_year_range: tuple = (1940, 1985)
    windows: PeriodWindows = field(default_factory=PeriodWindows)
    anticipation_shift: int = 0
    anticipation_level: float = 1.25
    trend_break: float = 1.0
    treat_level: float = 1.0
    pilot_level: float = 1.0
    post_level: float = 1.0
    treat_post_effect: float = 1.0
    age_slope: float = 0.0
    stratum_multipliers: dict = field(default_factory=dict)
    stratum_width: int = 5
    entry_age: int = 18
    retirement_age: int = 64
    horizon: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise InputError("n_subjects must be at least 1")
        for k in ("p_eligible", "share_treated"):
            v = getattr(self, k)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{k} must be a probability")
        p1 = self.p_eligible_treated_counterfactual
        if p1 is not None and not 0.0 <= p1 <= 1.0:
            raise InputError("p_eligible_treated_counterfactual must be a probability")
        lo, hi = self.birth_year_range
        if lo > hi:
            raise InputError("birth_year_range must be increasing")
        if self.anticipation_shift < 0:
            raise InputError("anticipation_shift must be nonnegative")
        if self.retirement_age <= self.entry_age:
            raise InputError("retirement_age must exceed entry_age")

    @property
    def sampling_horizon(self) -> int:
        return self.horizon if self.horizon is not None else self.windows.post_end_exclusive

    def to_dict(self):
        d = asdict(self)
        d["birth_year_range"] = list(self.birth_year_range)
        d["windows"] = self.windows.to_dict()
        d["stratum_multipliers"] = {str(k): v for k, v in self.stratum_multipliers.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown simulation settings: {sorted(unknown)}")
        if "effects" in d and not isinstance(d["effects"], TypeEffects):
            d["effects"] = TypeEffects(**d["effects"])
        if "windows" in d and not isinstance(d["windows"], PeriodWindows):
            d["windows"] = PeriodWindows.from_dict(d["windows"])
        if "birth_year_range" in d:
            d["birth_year_range"] = tuple(int(x) for x in d["birth_year_range"])
        if "stratum_multipliers" in d:
            d["stratum_multipliers"] = {int(k): float(v) for k, v in d["stratum_multipliers"].items()}
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from None


def _screen_factors(config: DgpConfig):
    """Multipliers on treated-pilot type hazards implementing p1 != p0."""
    p0 = config.p_eligible
    p1 = config.p_eligible_treated_counterfactual
    if p1 is None or p1 == p0:
        return 1.0, 1.0
    if p0 in (0.0, 1.0):
        raise InputError("self-screening needs 0 < p_eligible < 1")
    return p1 / p0, (1.0 - p1) / (1.0 - p0)


def type_hazards(config: DgpConfig, treated_pilot: np.ndarray, eligible: np.ndarray):
    """Type component of the yearly hazard."""
    fe = config.effects
    s1, s0 = _screen_factors(config)
    h_treat = np.where(eligible, fe.h1_eligible * s1, fe.h1_ineligible * s0)
    h_base = np.where(eligible, fe.h0_eligible, fe.h0_ineligible)
    return np.where(treated_pilot, h_treat, h_base)


def yearly_hazard(config: DgpConfig, birth, age, treated, eligible):
    """Hazard for the age interval ``(age, age + 1]``; arrays broadcast."""
    w = config.windows
    cal = birth + age
    P = (cal >= w.pilot_start) & (cal < w.pilot_end_exclusive)
    Q = (cal >= w.pilot_end_exclusive) & (cal < w.post_end_exclusive)
    h = type_hazards(config, treated & P, eligible)
    h = h * np.exp(config.age_slope * (age - config.entry_age))
    if config.stratum_multipliers:
        strata = np.floor_divide(birth, config.stratum_width)
        mult = np.vectorize(lambda s: config.stratum_multipliers.get(int(s), 1.0),
                            otypes=[float])(strata)
        h = h * mult
    h = h * np.where(treated, config.treat_level, 1.0)
    h = h * np.where(P, config.pilot_level, 1.0)
    h = h * np.where(Q, config.post_level * np.where(treated, config.treat_post_effect, 1.0), 1.0)
    h = h * np.where(treated & (cal >= w.pilot_start), config.trend_break, 1.0)
    if config.anticipation_shift:
        ant = treated & (cal >= w.pilot_start - config.anticipation_shift) & (cal < w.pilot_start)
        h = h * np.where(ant, config.anticipation_level, 1.0)
    if np.any(h < 0) or np.any(h >= 1):
        raise InputError("yearly hazard outside [0, 1) after modulation")
    return h


def _rng(seed, key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def _simulate_chunk(config: DgpConfig, chunk: int, geography):
    lo_id = chunk * CHUNK
    m = min(CHUNK, config.n_subjects - lo_id)
    rng = _rng(config.seed, (chunk,))
    lo, hi = config.birth_year_range
    birth = rng.integers(lo, hi + 1, size=m)
    treated = rng.random(m) < config.share_treated
    eligible = rng.random(m) < config.p_eligible
    muni_draw = rng.random(m)
    A = config.retirement_age - config.entry_age
    U = rng.random((m, A))

    ages = config.entry_age + np.arange(A)
    limit = np.minimum(config.retirement_age, config.sampling_horizon - birth)
    H = yearly_hazard(config, birth[:, None], ages[None, :], treated[:, None], eligible[:, None])
    hit = (U < H) & (ages[None, :] < limit[:, None])
    any_hit = hit.any(axis=1)
    first = hit.argmax(axis=1)
    exit_age = np.where(any_hit, config.entry_age + first + 1, limit).astype(float)
    keep = limit > config.entry_age

    if geography is None:
        muni = np.where(treated, 1, 0)
    else:
        t_ids, c_ids = geography
        muni = np.where(treated,
                        np.asarray(t_ids)[np.minimum((muni_draw * len(t_ids)).astype(int), len(t_ids) - 1)],
                        np.asarray(c_ids)[np.minimum((muni_draw * len(c_ids)).astype(int), len(c_ids) - 1)])
    ids = lo_id + np.arange(m)
    return pd.DataFrame({
        "subject_id": ids[keep],
        "birth_year": birth[keep],
        "entry_age": float(config.entry_age),
        "exit_age": exit_age[keep],
        "event": any_hit[keep],
        "treated": treated[keep],
        "municipality_id": muni[keep],
        "weight": 1.0,
        "cluster_id": ids[keep],
        "eligible": eligible[keep].astype(np.int64),
    })


def simulate_population(config: DgpConfig, geography=None, threads: int = 1) -> pd.DataFrame:
    """Simulate spells; identical seeds give identical frames for any ``threads``.

    ``geography`` is an optional ``(treated_ids, control_ids)`` pair; subjects
    are spread uniformly over the municipalities of their arm.
    """
    n_chunks = math.ceil(config.n_subjects / CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _simulate_chunk(config, c, geography), range(n_chunks)))
    else:
        parts = [_simulate_chunk(config, c, geography) for c in range(n_chunks)]
    return pd.concat(parts, ignore_index=True)


def simulate_geography(n_munis: int = 60, seed: int = 0, width_km: float = 80.0,
                       detour: float = 1.3, speed_kmh: float = 50.0):
    """Municipalities on a square with the treated region at ``x < 0``.

    Returns ``(munis, distances)``: a frame ``muni, x, y, treated`` and the
    all-pairs distance table ``muni_a, muni_b, travel_km, travel_min``.
    """
    rng = _rng(seed, (10_000_019,))
    xy = (rng.random((n_munis, 2)) - 0.5) * width_km
    munis = pd.DataFrame({"muni": np.arange(1, n_munis + 1), "x": xy[:, 0], "y": xy[:, 1],
                          "treated": xy[:, 0] < 0})
    i, j = np.triu_indices(n_munis, k=1)
    km = detour * np.hypot(*(xy[i] - xy[j]).T)
    km = np.round(km, 3)
    dist = pd.DataFrame({"muni_a": i + 1, "muni_b": j + 1, "travel_km": km,
                         "travel_min": np.round(km / speed_kmh * 60.0, 3)})
    return munis, dist


# ---------------------------------------------------------------------------
# decomposition by latent type


def analytic_ratt(config_or_effects, p_eligible=None, p_treated=None) -> float:
    """Mixture ratio of treated to untreated hazards over eligibility types.

    ``[h1(E=1) p1 + h1(E=0)(1-p1)] / [h0(E=1) p0 + h0(E=0)(1-p0)]`` with
    ``p0 = p_eligible`` and ``p1`` the treated-state share (defaults to p0).
    """
    if isinstance(config_or_effects, DgpConfig):
        fe = config_or_effects.effects
        p0 = config_or_effects.p_eligible
        p1 = config_or_effects.p_eligible_treated_counterfactual
    else:
        fe = config_or_effects
        p0 = p_eligible
        p1 = p_treated
    p1 = p0 if p1 is None else p1
    num = fe.h1_eligible * p1 + fe.h1_ineligible * (1.0 - p1)
    den = fe.h0_eligible * p0 + fe.h0_ineligible * (1.0 - p0)
    if den == 0:
        raise EstimationError("untreated mixture hazard is zero")
    return num / den


@dataclass(frozen=True)
class BoundReport:
    ratt: float
    ineq8_holds: bool
    ineq9_holds: bool
    mtr_holds: bool
    quadrant: str
    eligible_effect: float
    ineligible_reduction: float
    total_reduction: float

    def to_dict(self):
        return asdict(self)


def bound_check(effects: TypeEffects, p_eligible: float) -> BoundReport:
    """Aggregate-reduction, rearranged-inequality and monotone-response checks.

    The quadrant classifies the direction of the effect on each type:
    ``lower_bound`` (ineligible hazard falls, eligible does not),
    ``upper_bound`` (both fall), ``dismissed_nonreduction`` (ineligible rises,
    eligible does not fall) and ``dismissed_implausible`` (ineligible rises,
    eligible falls).
    """
    p = p_eligible
    ratt = analytic_ratt(effects, p)
    elig = effects.h1_eligible - effects.h0_eligible
    inel = effects.h1_ineligible - effects.h0_ineligible
    ineq8 = ratt <= 1.0
    ineq9 = elig * p <= -inel * (1.0 - p)
    mtr = elig >= 0
    inel_nonperverse = inel <= 0
    if inel_nonperverse:
        quadrant = "lower_bound" if mtr else "upper_bound"
    else:
        quadrant = "dismissed_nonreduction" if mtr else "dismissed_implausible"
    den = effects.h0_eligible * p + effects.h0_ineligible * (1 - p)
    num = effects.h1_eligible * p + effects.h1_ineligible * (1 - p)
    return BoundReport(ratt=ratt, ineq8_holds=bool(ineq8), ineq9_holds=bool(ineq9),
                       mtr_holds=bool(mtr), quadrant=quadrant, eligible_effect=elig * p,
                       ineligible_reduction=-inel * (1 - p), total_reduction=den - num)


def pilot_rate_ratio(config: DgpConfig, n: int = 1_000_000, seed: int | None = None):
    """Monte Carlo pilot-year event-rate ratio for treated subjects.

    Draws two independent cross-sections of ``n`` subjects with eligibility
    share ``p_eligible``; one lives a pilot year treated, the other
    untreated, using the same type hazards as :func:`simulate_population`.
    Returns ``(ratio, se_log)`` with the delta-method standard error of the
    log ratio.
    """
    rng = _rng(config.seed if seed is None else seed, (20_000_003,))
    out = []
    for treated_pilot in (True, False):
        eligible = rng.random(n) < config.p_eligible
        h = type_hazards(config, np.full(n, treated_pilot), eligible)
        events = int(np.sum(rng.random(n) < h))
        out.append(events)
    e1, e0 = out
    if e0 == 0 or e1 == 0:
        raise EstimationError("no pilot events simulated; increase n")
    r1, r0 = e1 / n, e0 / n
    se_log = math.sqrt((1 - r1) / (n * r1) + (1 - r0) / (n * r0))
    return r1 / r0, se_log


# ---------------------------------------------------------------------------
# Monte Carlo experiments


def replicate_seeds(seed: int, reps: int, stream: int = 0) -> list[int]:
    ss = np.random.SeedSequence(int(seed), spawn_key=(30_000_001, stream))
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in ss.spawn(reps)]


def assumption_violation_suite(config: DgpConfig, reps: int = 20, ties="efron",
                               anticipation_shift: int | None = None,
                               trend_break: float | None = None) -> dict:
    """Fitted interaction hazard ratios under paired assumption violations.

    Scenarios: ``baseline`` (no anticipation, common trend), ``anticipation``
    (treated-arm hazards raised in the years before the pilot) and
    ``trend_break`` (treated-arm hazards scaled from the pilot onward). Each
    reports the mean fitted ``exp(beta)`` for the pilot interaction and for a
    placebo window covering the three pre-pilot years, against the analytic
    mixture ratio.
    """
    from .cox import fit_cox, ratt_from_fit
    from .diagnostics import placebo_fit
    from .episodes import build_episodes

    shift = anticipation_shift if anticipation_shift is not None else max(1, config.anticipation_shift)
    brk = trend_break if trend_break is not None else (config.trend_break if config.trend_break != 1 else 1.10)
    scenarios = {
        "baseline": replace(config, anticipation_shift=0, trend_break=1.0),
        "anticipation": replace(config, anticipation_shift=shift, trend_break=1.0),
        "trend_break": replace(config, anticipation_shift=0, trend_break=brk),
    }
    truth = analytic_ratt(config)
    w = config.windows
    pseudo = (w.pilot_start - 3, w.pilot_start)
    report = {"truth": truth, "reps": reps, "scenarios": {}}
    for k, (name, cfg) in enumerate(scenarios.items()):
        main, placebo = [], []
        for s in replicate_seeds(config.seed, reps, stream=k):
            c = replace(cfg, seed=s)
            spells = simulate_population(c)
            fit = fit_cox(build_episodes(spells, c.windows, c.stratum_width), ties=ties,
                          with_baseline=False)
            main.append(ratt_from_fit(fit).hazard_ratio)
            pf = placebo_fit(spells, pseudo, windows=c.windows, ties=ties,
                             stratum_width=c.stratum_width)
            placebo.append(ratt_from_fit(pf, term="treat_x_pre").hazard_ratio)
        main, placebo = np.array(main), np.array(placebo)
        mc_se = float(main.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
        report["scenarios"][name] = {
            "mean_hazard_ratio": float(main.mean()),
            "mc_se": mc_se,
            "bias": float(main.mean() - truth),
            "mean_placebo_hazard_ratio": float(placebo.mean()),
            "placebo_mc_se": float(placebo.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan"),
            "anticipation_shift": cfg.anticipation_shift,
            "trend_break": cfg.trend_break,
        }
    return report
