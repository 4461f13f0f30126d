"""Observed-information estimation for EM-fitted models.

A generic EM engine, an item-factor-analysis model suite, a family of
rate-matrix (supplemented-EM style) observed-information estimators, a
Richardson-extrapolation benchmark, precision metrics, and a Monte Carlo
study harness with a CLI.
"""

from .builtin import BUILTIN_NAMES, builtin_spec
from .emcore import EMConfig, EMRun, additive_precision_limit, rel_ll_change, run_em
from .fit import IfaGroupSpec, IfaModel, Quadrature, as_em_model, build_quadrature
from .harness import (
    StudySpec,
    TrialResult,
    multinomial_linkage_fixture,
    run_study,
    run_trial,
    summarize_study,
)
from .items import (
    ItemSpec,
    LatentDist,
    ResponseData,
    item_deriv,
    logistic_clamped,
    prob_dichotomous,
    prob_graded,
    prob_nominal,
    sample_responses,
)
from .metrics import condition_log, kl_divergence, mc_ground_truth, mre, rd_norm
from .numdiff import RichardsonConfig, richardson_hessian
from .params import ParamVector
from .sem import (
    RateMatrix,
    SemConfig,
    SemReport,
    agile_column,
    assemble,
    estimate_rate_matrix,
    fit_noise_model,
    history_column,
    noise_curve,
    probe_em,
    record_diff,
    sem_standard_errors,
    target_sweep,
    tian_window,
)

__version__ = "0.1.0"
