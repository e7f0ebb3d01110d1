"""Bayesian factor-augmented Markov switching autoregressions."""

from .core import (
    DimensionError,
    PriorConfig,
    RegimeParams,
    TimePanel,
    build_lag_design,
    check_states,
    standardize_panel,
)
from .factor_sv import (
    FactorState,
    SVParams,
    draw_factors,
    draw_loadings,
    draw_logvariance_path,
    draw_sv_params,
    explained_variance_share,
    export_centered_factor_means,
    factor_count_criterion,
    run_factor_sv,
    top_loadings_report,
)
from .msar import (
    FilterOutput,
    IdentificationRule,
    TransitionPath,
    companion_eigenvalues,
    draw_regime_regression,
    enforce_identification,
    ffbs_sample,
    hamilton_filter,
    regime_density,
)
from .pipeline import DrawStore, FamsConfig, run_fams, smoothed_state_probabilities, summarize
from .shrinkage import (
    NormalGammaState,
    draw_gig,
    update_global_scale,
    update_local_scales,
    update_normal_gamma,
)
from .simulation import (
    SimStudyConfig,
    StudyReport,
    mcr_metric,
    rmse_metric,
    run_study,
    simulate_factors,
    simulate_ms_ar,
    simulate_panel,
)
from .tvtp import (
    FactorPath,
    TvtpCoefficients,
    build_transition_path,
    draw_mnl_coefficients,
    logistic_mixture_table,
    transition_matrix,
)

__version__ = "0.1.0"
