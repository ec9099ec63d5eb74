//! Estimation of the probability of causation
//! `PC(x) = P(Y0 = 0 | Y = 1, A = 1, X = x)`.
//!
//! Under positivity, consistency, no unmeasured confounding of `Y0` and
//! monotonicity, `PC(x)` equals `gamma(x) = 1 - mu0(x) / mu1(x)`. The crate
//! estimates the best weighted-L2 approximation `g(x; beta)` of `gamma` within
//! a working model, by solving an estimating equation built from the
//! efficient influence function of the projection's moment condition. The
//! nuisance functions may be fitted with flexible regressors and cross-fitting
//! while `beta` keeps root-n rates and Wald intervals.

pub mod data;
pub mod error;
pub mod estimator;
pub mod model_selection;
pub mod nuisance;
pub mod report;
pub mod seed;
pub mod simulation;
pub mod working_model;

pub use data::{
    complete_case_filter, load_csv, read_csv, save_csv, validate_positivity, write_csv, Dataset,
    Observation, PositivityReport, PotentialOutcomeRecord,
};
pub use error::{Error, Result};
pub use nuisance::{
    crossfit_nuisances, fit_nuisances_full_sample, fit_regressor, Eta, FeatureMatrix,
    ForestParams, FittedRegressor, NuisanceConfig, NuisanceFit, RegressorKind, RegressorSpec,
};
pub use working_model::{
    expit, g_eval, g_grad, h_eval, logit, Beta, ModelFamily, Weight, WorkingModelSpec,
};
pub use estimator::{
    bootstrap_covariance, estimating_equation, fit_projection, gamma_plugin, if_correction,
    influence_contribution, jacobian_m, odds_of_causation, odds_ratio, plugin_projection,
    plugin_projection_parametric, predict_pc_with_ci, pseudo_outcome, sandwich_covariance,
    solve_beta, z_quantile, EstimatorKind, FitDocument, PcEstimate, ProjectionFit, SolveOptions,
    SolverDiagnostics,
};
pub use model_selection::{
    estimate_pseudo_risk, fit_candidate, pseudo_risk_contribution, select_model,
    select_with_nuisances, Candidate, FailedCandidate, FittedCandidate, RiskEstimate,
    SelectionReport,
};
pub use report::{
    coefficient_rows, coefficient_table, compare_estimators, pc_table, significance_code,
    two_sided_p, typical_profile, CoefficientRow, PcRow,
};
pub use simulation::{
    generate, run_replication, run_study, true_gamma, DgpConfig, EstimatorChoice, Regime,
    ReportCell, SimulatedSample, SimulationReport, StudyConfig,
};
