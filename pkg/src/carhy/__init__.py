"""Circadian harmonic regression with heteroskedastic differential-rhythm tests."""

from __future__ import annotations

from .errors import (
    CarhyError,
    DegenerateDesign,
    DimensionMismatch,
    DuplicateGene,
    InputValidationError,
    InsufficientReplication,
    InvalidConditionCount,
    InvalidOrder,
    InvalidTime,
    MissingSample,
    MomentMismatch,
    NonpositiveTau,
    NonpositiveVariance,
    SingularNormalEquations,
    SingularOmega,
    UnitsMismatch,
    ZeroAmplitude,
)
from .harmonic import (
    PERIOD,
    ConditionDesign,
    ConditionFit,
    amplitude_phase,
    build_design,
    fit_condition,
    fit_many,
    phase_to_hours,
)
from .moments import SigmaMoments, chi2_central_moments, chi2_raw_moment, sigma_hat_moments
from .multiplicity import bh_adjust, storey_qvalue
from .pipeline import (
    AnalysisConfig,
    analyze_all,
    build_dataset,
    circular_phase_difference,
    ingest,
    preprocess,
)
from .rhythm_tests import (
    MonteCarloInfo,
    TestResult,
    delta_gradient,
    test_differential_amplitude,
    test_differential_mesor,
    test_differential_phase,
    test_differential_rhythmicity,
    test_rhythmicity,
)
from .satterthwaite import (
    ContrastSpec,
    FApprox,
    QuadFormContext,
    build_contrast,
    build_sensitivity_matrices,
    compute_mu1_mu2,
    f_pvalue,
    make_context,
    solve_df_c,
)
from .simulation import (
    FdrExperimentSpec,
    MetricsReport,
    ScenarioSpec,
    generate_gene,
    run_fdr_experiment,
    run_rejection_experiment,
)

__version__ = "0.1.0"
