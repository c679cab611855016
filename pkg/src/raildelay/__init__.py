"""Weather effects on train delays: recurrent-event Cox and panel Markov models."""
from .cox import fit as fit_cox
from .cox import HeavisideSpec, fit_with_heaviside, hazard_ratios, interval_effects
from .diagnostics import ph_test, schoenfeld_residuals, suggest_changepoint
from .domain import CountingProcessDataset, CoxFit, MsmFit, PanelStateDataset
from .markov import IntensitySpec, fit_msm, msm_loglik, transition_hazard_ratios

__version__ = "0.1.0"

__all__ = [
    "CountingProcessDataset", "CoxFit", "HeavisideSpec", "IntensitySpec", "MsmFit",
    "PanelStateDataset", "fit_cox", "fit_msm", "fit_with_heaviside", "hazard_ratios",
    "interval_effects", "msm_loglik", "ph_test", "schoenfeld_residuals",
    "suggest_changepoint", "transition_hazard_ratios",
]
