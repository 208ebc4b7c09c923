"""Cross-validated targeted maximum likelihood estimation.

Implements two versions of CV-TMLE for the average treatment effect (ATE),
the treatment-specific mean (TSM) and the variance of the treatment effect
(VTE): a *stacked* version that targets the concatenated validation-fold
predictions like an ordinary TMLE, and the classic *foldwise* version that
keeps fold-specific means.
"""

from .data import (
    CVTMLEError,
    DataError,
    Dataset,
    FoldError,
    FoldPlan,
    OutcomeScale,
    ParameterKind,
    load_csv,
    make_dataset,
    make_folds,
    scale_parameter,
    unscale_parameter,
)
from .crossfit import CrossFittedNuisances, crossfit_nuisances, truncate_propensity
from .estimator import Fit, estimate
from .inference import EstimateReport, confidence_interval, standard_error
from .learners import LearnerSpec, fit_learner, parse_learner, predict, select_learner
from .parameters import Variant, blip, clever_covariates, influence_curve, plugin_estimate
from .simulator import (
    DGP_PRESETS,
    DGPSpec,
    EstimatorConfig,
    compare_variants,
    draw_sample,
    get_dgp,
    run_monte_carlo,
    true_value,
)
from .targeting import fit_epsilon, run_targeting, stopping_check

__version__ = "0.1.0"
