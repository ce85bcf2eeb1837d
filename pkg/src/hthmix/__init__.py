"""Hidden truncation hyperbolic (HTH) mixture models for clustering.

Library surface: special functions, the HTH distribution family (density,
sampler, truncated moments), an ECM fitting engine with deterministic
annealing and BIC model selection, cluster-agreement scoring, and a batch
CLI (``hthmix``) for fitting, contour export and convexity checks.
"""

from .specfun import (
    QuadratureSpec,
    MvnSpec,
    log_bessel_k,
    bessel_k_ratio,
    dlog_bessel_k_dorder,
    dlog_bessel_k_darg,
    mvn_rectangle_prob,
)
from .gig import GigParams, gig_logpdf, gig_moments, gig_sample
from .dist_core import (
    HthParams,
    sym_hyperbolic_logpdf,
    sym_hyperbolic_cdf,
    cfusn_logpdf,
    hth_logpdf,
    hth_sample,
    posterior_w_logdensity_unnorm,
)
from .trunc_moments import (
    ThParams,
    th_orthant_prob,
    th_mean,
    th_second_moment,
    th_univariate_moments,
)
from .em_engine import (
    MixtureModel,
    EStepCache,
    FitConfig,
    FitResult,
    kmeans_init,
    e_step,
    m_step,
    observed_loglik,
    ecm_fit,
    count_free_params,
    bic,
)
from .metrics import ari
from .dataset import Dataset, load_csv, standardize
from .contours import contour_grid, quasiconcavity_check

__version__ = "0.1.0"

__all__ = [
    "QuadratureSpec",
    "MvnSpec",
    "log_bessel_k",
    "bessel_k_ratio",
    "dlog_bessel_k_dorder",
    "dlog_bessel_k_darg",
    "mvn_rectangle_prob",
    "GigParams",
    "gig_logpdf",
    "gig_moments",
    "gig_sample",
    "HthParams",
    "sym_hyperbolic_logpdf",
    "sym_hyperbolic_cdf",
    "cfusn_logpdf",
    "hth_logpdf",
    "hth_sample",
    "posterior_w_logdensity_unnorm",
    "ThParams",
    "th_orthant_prob",
    "th_mean",
    "th_second_moment",
    "th_univariate_moments",
    "MixtureModel",
    "EStepCache",
    "FitConfig",
    "FitResult",
    "kmeans_init",
    "e_step",
    "m_step",
    "observed_loglik",
    "ecm_fit",
    "count_free_params",
    "bic",
    "ari",
    "Dataset",
    "load_csv",
    "standardize",
    "contour_grid",
    "quasiconcavity_check",
]
