"""Covariate-dependent tail regression with a spliced Gaussian-exponential-GPD model."""

__version__ = "0.1.0"

from .distributions import (
    DomainError,
    GpdParams,
    ObsParams,
    ParameterError,
    derive_obs_params,
    gpd_cdf,
    gpd_logpdf,
    gpd_pdf,
    gpd_quantile,
    gpd_sf,
    splice_cdf,
    splice_logpdf,
    splice_pdf,
    splice_quantile,
    splice_sample,
    splice_sf,
)
from .estimate import CensoringSpec, EstimationError, FitOptions, FitResult, PotThreshold, fit_pot, fit_splice
from .inference import adm_statistic, attach_covariance, pit_residuals, sandwich_cov, select_tau, wald_test
from .panel import LinkConfig, PanelData, PanelError, ThetaVector, link_eval, read_panel_csv, write_panel_csv
from .pareto import pareto_wml
from .quantreg import quantreg_fit
from .simulate import DgpSpec, McConfig, generate, replicate_rng, run_mc
