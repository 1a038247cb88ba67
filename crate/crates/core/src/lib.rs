//! Steady-state multi-sensor Kalman fusion with locally differentially
//! private release.
//!
//! The crate synthesizes the steady-state filter for each sensor of a linear
//! time-invariant plant, assembles the cross-sensor covariance ensemble,
//! decides whether the system's intrinsic randomness already keeps the
//! released estimates (ε, δ)-indistinguishable between sensors, calibrates
//! the minimal isotropic Gaussian perturbation when it does not, fuses the
//! released estimates with minimum-variance weights, and verifies both the
//! estimation accuracy and the privacy guarantee by seeded Monte Carlo.
//!
//! Modules mirror the pipeline:
//!
//! * [`matrix`] — dense matrix primitives with tested numerical contracts
//! * [`rng`] — splittable reproducible random streams
//! * [`model`] — the plant, its validation, and trajectory generation
//! * [`estimator`] — Riccati fixed points, gains, cross-covariances, filter
//! * [`privacy`] — sensitivity, mechanism calibration, privacy-loss checks
//! * [`fusion`] — minimum-variance weights and fusion
//! * [`sim`] — Monte Carlo harness and RMSE summaries
//! * [`scenario`] — named scenario registry with the two built-ins

pub mod error;
pub mod estimator;
pub mod fusion;
pub mod matrix;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use estimator::{
    assemble_ensemble, filter_step, solve_cross_cov, solve_riccati, CovarianceEnsemble,
    FilterState, SteadySensorSolution,
};
pub use fusion::{fuse, fused_covariance, fusion_weights, perturbed_stacked_cov, FusedResult,
    FusionWeights};
pub use matrix::{
    inverse_difference_identity_check, numerical_rank, solve_linear, spectral_norm,
    sym_eig_extremes, Matrix,
};
pub use model::{
    measure, simulate_trajectory, step_state, validate_model, Drive, SensorModel, SystemModel,
    TrajectorySample, ValidationReport,
};
pub use privacy::{
    chebyshev_bound_check, empirical_privacy_check, exceedance_region_1d, intrinsic_threshold,
    perturb_estimate, plan_mechanism, privacy_loss, sensitivity_profile, GaussianMechanism,
    IntrinsicMechanism, Mechanism, MechanismKind, MechanismPlan, PrivacyBudget,
    PrivacyCheckReport, SensitivityProfile,
};
pub use rng::RandomSource;
pub use scenario::{
    build_oxygen_scenario, build_tracking_scenario, ScenarioBuilder, ScenarioOverrides,
    ScenarioRegistry,
};
pub use sim::{
    rmse_summary, run_monte_carlo, RmseSummary, Scenario, SimulationResult, SolverOptions,
};
