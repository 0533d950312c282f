"""Difference-in-differences in stratified Cox hazard models."""

__version__ = "0.1.0"

from .cox import CoxFit, RattEstimate, baseline_cumhaz, fit_cox, partial_loglik, ratt_from_fit, robust_vcov
from .data import Episode, PeriodWindows, Spell
from .diagnostics import cost_effectiveness, distance_sweep, loglog_curves, placebo_fit
from .episodes import build_episodes
from .errors import EstimationError, InputError, SingularDesignError
from .lineardid import OlsFit, PanelRow, fit_ols_fe
from .matching import DistanceRecord, MatchConfig, nearest_counterpart, pairwise_weights
from .simulation import DgpConfig, TypeEffects, analytic_ratt, bound_check, simulate_population

__all__ = [
    "CoxFit", "RattEstimate", "baseline_cumhaz", "fit_cox", "partial_loglik", "ratt_from_fit",
    "robust_vcov", "Episode", "PeriodWindows", "Spell", "cost_effectiveness", "distance_sweep",
    "loglog_curves", "placebo_fit", "build_episodes", "EstimationError", "InputError",
    "SingularDesignError", "OlsFit", "PanelRow", "fit_ols_fe", "DistanceRecord", "MatchConfig",
    "nearest_counterpart", "pairwise_weights", "DgpConfig", "TypeEffects", "analytic_ratt",
    "bound_check", "simulate_population",
]
