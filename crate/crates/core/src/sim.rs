//! Seeded Monte Carlo execution: plant + filters + release mechanism +
//! fusion, with per-step RMSE series across runs and an empirical privacy
//! check on the released covariances.
//!
//! Runs are embarrassingly parallel. Each run owns substreams derived from
//! the master seed by run index, and the cross-run reduction happens in run
//! order, so a result is bit-identical for a fixed seed no matter how many
//! worker threads execute it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{self, CovarianceEnsemble, FilterState};
use crate::fusion::{self, FusionWeights};
use crate::matrix::{sym_eig_extremes, vec_sub, Matrix};
use crate::model::SystemModel;
use crate::privacy::{
    empirical_privacy_check, MechanismKind, MechanismPlan, PrivacyBudget, PrivacyCheckReport,
};
use crate::rng::RandomSource;

/// Samples used for the embedded privacy check of a simulation.
pub const PRIVACY_CHECK_SAMPLES: usize = 100_000;

/// Fixed-point solver settings carried by a scenario so results can record
/// exactly what produced them.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub zeta_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: estimator::DEFAULT_TOL,
            max_iter: estimator::DEFAULT_MAX_ITER,
            zeta_margin: 0.0,
        }
    }
}

/// A fully resolved experiment: model, budget, calibrated release plan, and
/// Monte Carlo controls.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub budget: PrivacyBudget,
    pub plan: MechanismPlan,
    pub horizon: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub burn_in: usize,
    pub solver: SolverOptions,
}

/// Provenance recorded with every simulation result.
#[derive(Debug, Clone)]
pub struct SimulationMetadata {
    pub master_seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub version: &'static str,
}

/// Per-step RMSE series (one value per recorded step) for each estimator,
/// plus per-component series and the embedded privacy check.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// `[sensor][t]`, full state 2-norm.
    pub rmse_local: Vec<Vec<f64>>,
    pub rmse_fused: Vec<f64>,
    /// Present when the plan injects noise.
    pub rmse_perturbed_fused: Option<Vec<f64>>,
    /// `[sensor][component][t]`.
    pub rmse_local_components: Vec<Vec<Vec<f64>>>,
    /// `[component][t]`.
    pub rmse_fused_components: Vec<Vec<f64>>,
    pub rmse_perturbed_fused_components: Option<Vec<Vec<f64>>>,
    /// Empirical privacy check on the released covariances; absent when the
    /// release densities are degenerate (zero covariance).
    pub privacy_report: Option<PrivacyCheckReport>,
    pub metadata: SimulationMetadata,
}

impl SimulationResult {
    pub fn recorded_steps(&self) -> usize {
        self.rmse_fused.len()
    }
}

/// Squared-error accumulators for one run.
struct RunErrors {
    /// `[sensor][t]` squared full-state error.
    local: Vec<Vec<f64>>,
    fused: Vec<f64>,
    perturbed: Option<Vec<f64>>,
    /// `[sensor][component][t]`.
    local_comp: Vec<Vec<Vec<f64>>>,
    fused_comp: Vec<Vec<f64>>,
    perturbed_comp: Option<Vec<Vec<f64>>>,
}

fn simulate_run(
    s: &Scenario,
    ensemble: &CovarianceEnsemble,
    weights: &FusionWeights,
    weights_perturbed: Option<&FusionWeights>,
    run_idx: usize,
) -> Result<RunErrors> {
    let m = &s.model;
    let l = m.n_sensors();
    let n_x = m.n_x();
    let recorded = s.horizon - s.burn_in;
    let root = RandomSource::from_seed(s.master_seed);
    let run_rng = root.substream(run_idx as u64);
    let mut process_rng = run_rng.substream(0);
    let mut measure_rngs: Vec<RandomSource> =
        (0..l).map(|i| run_rng.substream(1 + i as u64)).collect();
    let mut perturb_rngs: Vec<RandomSource> = (0..l)
        .map(|i| run_rng.substream(1 + (l + i) as u64))
        .collect();
    let mechanism = s.plan.mechanism();
    let perturbing = s.plan.kind == MechanismKind::Gaussian;

    let mut x = vec![0.0; n_x];
    let mut filters: Vec<FilterState> = (0..l).map(|i| FilterState::new(i, n_x)).collect();

    let mut errors = RunErrors {
        local: vec![Vec::with_capacity(recorded); l],
        fused: Vec::with_capacity(recorded),
        perturbed: perturbing.then(|| Vec::with_capacity(recorded)),
        local_comp: vec![vec![Vec::with_capacity(recorded); n_x]; l],
        fused_comp: vec![Vec::with_capacity(recorded); n_x],
        perturbed_comp: perturbing.then(|| vec![Vec::with_capacity(recorded); n_x]),
    };

    for k in 1..=s.horizon {
        let u = m.drive().at(k, n_x);
        x = crate::model::step_state(m, &x, &u, &mut process_rng)?;

        let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(l);
        let mut released: Vec<Vec<f64>> = Vec::with_capacity(l);
        for i in 0..l {
            let y = crate::model::measure(m.sensor(i), &x, &mut measure_rngs[i])?;
            filters[i] =
                estimator::filter_step(&filters[i], &ensemble.per_sensor[i], m, &y, &u)?;
            let estimate = filters[i].estimate.clone();
            released.push(mechanism.apply(&estimate, &mut perturb_rngs[i]));
            estimates.push(estimate);
        }

        let fused = fusion::fuse(weights, &estimates)?;
        let fused_perturbed = match weights_perturbed {
            Some(wp) => Some(fusion::fuse(wp, &released)?),
            None => None,
        };

        if k <= s.burn_in {
            continue;
        }
        for i in 0..l {
            let e = vec_sub(&x, &estimates[i]);
            errors.local[i].push(e.iter().map(|v| v * v).sum());
            for c in 0..n_x {
                errors.local_comp[i][c].push(e[c] * e[c]);
            }
        }
        let ef = vec_sub(&x, &fused);
        errors.fused.push(ef.iter().map(|v| v * v).sum());
        for c in 0..n_x {
            errors.fused_comp[c].push(ef[c] * ef[c]);
        }
        if let (Some(fp), Some(acc), Some(acc_c)) = (
            fused_perturbed,
            errors.perturbed.as_mut(),
            errors.perturbed_comp.as_mut(),
        ) {
            let ep = vec_sub(&x, &fp);
            acc.push(ep.iter().map(|v| v * v).sum());
            for c in 0..n_x {
                acc_c[c].push(ep[c] * ep[c]);
            }
        }
    }
    Ok(errors)
}

fn rmse_from_sums(sums: &[f64], runs: usize) -> Vec<f64> {
    sums.iter().map(|s| (s / runs as f64).sqrt()).collect()
}

/// Executes the scenario's Monte Carlo experiment.
///
/// RMSE at recorded step t is sqrt(mean over runs of the squared error at
/// that step); the series starts after the burn-in.
pub fn run_monte_carlo(s: &Scenario) -> Result<SimulationResult> {
    if s.horizon == 0 || s.runs == 0 {
        return Err(Error::invalid("horizon and runs must be positive"));
    }
    if s.burn_in >= s.horizon {
        return Err(Error::invalid("burn_in must be smaller than the horizon"));
    }
    let l = s.model.n_sensors();
    let n_x = s.model.n_x();
    let recorded = s.horizon - s.burn_in;

    let ensemble = estimator::assemble_ensemble(&s.model, s.solver.tol, s.solver.max_iter)?;
    let weights = fusion::fusion_weights(&ensemble.stacked, n_x, l)?;
    let perturbing = s.plan.kind == MechanismKind::Gaussian;
    let weights_perturbed = if perturbing {
        let stacked_p = fusion::perturbed_stacked_cov(&ensemble, s.plan.q_a)?;
        Some(fusion::fusion_weights(&stacked_p, n_x, l)?)
    } else {
        None
    };

    // Ordered collection + sequential reduction keeps f64 summation
    // deterministic regardless of the thread count.
    let per_run: Vec<Result<RunErrors>> = (0..s.runs)
        .into_par_iter()
        .map(|r| simulate_run(s, &ensemble, &weights, weights_perturbed.as_ref(), r))
        .collect();

    let mut sum_local = vec![vec![0.0; recorded]; l];
    let mut sum_fused = vec![0.0; recorded];
    let mut sum_perturbed = perturbing.then(|| vec![0.0; recorded]);
    let mut sum_local_comp = vec![vec![vec![0.0; recorded]; n_x]; l];
    let mut sum_fused_comp = vec![vec![0.0; recorded]; n_x];
    let mut sum_perturbed_comp = perturbing.then(|| vec![vec![0.0; recorded]; n_x]);

    for run in per_run {
        let run = run?;
        for i in 0..l {
            for t in 0..recorded {
                sum_local[i][t] += run.local[i][t];
            }
            for c in 0..n_x {
                for t in 0..recorded {
                    sum_local_comp[i][c][t] += run.local_comp[i][c][t];
                }
            }
        }
        for t in 0..recorded {
            sum_fused[t] += run.fused[t];
        }
        for c in 0..n_x {
            for t in 0..recorded {
                sum_fused_comp[c][t] += run.fused_comp[c][t];
            }
        }
        if let (Some(acc), Some(run_p)) = (sum_perturbed.as_mut(), run.perturbed.as_ref()) {
            for t in 0..recorded {
                acc[t] += run_p[t];
            }
        }
        if let (Some(acc), Some(run_p)) =
            (sum_perturbed_comp.as_mut(), run.perturbed_comp.as_ref())
        {
            for c in 0..n_x {
                for t in 0..recorded {
                    acc[c][t] += run_p[c][t];
                }
            }
        }
    }

    // Privacy check on the released covariances: diagonal blocks, inflated by
    // q_a when the plan injects noise. Degenerate (non-PD) blocks cannot be
    // checked against density ratios, so the report is omitted for them.
    let released_blocks: Vec<Matrix> = ensemble
        .diagonal_blocks()
        .iter()
        .map(|b| {
            let mut blk = b.clone();
            for d in 0..n_x {
                blk.set(d, d, blk.get(d, d) + s.plan.q_a);
            }
            blk
        })
        .collect();
    let all_pd = released_blocks
        .iter()
        .all(|b| matches!(sym_eig_extremes(b), Ok((lo, _)) if lo > 0.0));
    let privacy_report = if all_pd {
        let privacy_rng = RandomSource::from_seed(s.master_seed).substream(u64::MAX);
        Some(empirical_privacy_check(
            &released_blocks,
            &s.budget,
            PRIVACY_CHECK_SAMPLES,
            &privacy_rng,
        )?)
    } else {
        None
    };

    Ok(SimulationResult {
        rmse_local: sum_local
            .iter()
            .map(|sums| rmse_from_sums(sums, s.runs))
            .collect(),
        rmse_fused: rmse_from_sums(&sum_fused, s.runs),
        rmse_perturbed_fused: sum_perturbed.map(|sums| rmse_from_sums(&sums, s.runs)),
        rmse_local_components: sum_local_comp
            .iter()
            .map(|per_c| per_c.iter().map(|sums| rmse_from_sums(sums, s.runs)).collect())
            .collect(),
        rmse_fused_components: sum_fused_comp
            .iter()
            .map(|sums| rmse_from_sums(sums, s.runs))
            .collect(),
        rmse_perturbed_fused_components: sum_perturbed_comp
            .map(|per_c| per_c.iter().map(|sums| rmse_from_sums(sums, s.runs)).collect()),
        privacy_report,
        metadata: SimulationMetadata {
            master_seed: s.master_seed,
            runs: s.runs,
            horizon: s.horizon,
            burn_in: s.burn_in,
            solver_tol: s.solver.tol,
            solver_max_iter: s.solver.max_iter,
            version: env!("CARGO_PKG_VERSION"),
        },
    })
}

/// Steady-state summary of one estimator's RMSE series.
#[derive(Debug, Clone)]
pub struct SteadyRmse {
    pub estimator: String,
    pub steady_rmse: f64,
    pub standard_error: f64,
}

/// Steady-state means over the last half of the horizon, with Monte Carlo
/// standard errors of those means.
#[derive(Debug, Clone)]
pub struct RmseSummary {
    pub window: usize,
    pub entries: Vec<SteadyRmse>,
}

impl RmseSummary {
    pub fn entry(&self, name: &str) -> Option<&SteadyRmse> {
        self.entries.iter().find(|e| e.estimator == name)
    }
}

fn steady_stats(series: &[f64], window: usize) -> (f64, f64) {
    let w = window.min(series.len()).max(1);
    let tail = &series[series.len() - w..];
    let mean = tail.iter().sum::<f64>() / w as f64;
    if w < 2 {
        return (mean, 0.0);
    }
    let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (w - 1) as f64;
    (mean, (var / w as f64).sqrt())
}

/// Summarizes a simulation: per-estimator steady RMSE means over the last
/// 50% of the horizon and their standard errors.
pub fn rmse_summary(r: &SimulationResult) -> RmseSummary {
    let window = r.metadata.horizon.div_ceil(2);
    let mut entries = Vec::new();
    for (i, series) in r.rmse_local.iter().enumerate() {
        let (mean, se) = steady_stats(series, window);
        entries.push(SteadyRmse {
            estimator: format!("local_{}", i + 1),
            steady_rmse: mean,
            standard_error: se,
        });
    }
    let (mean, se) = steady_stats(&r.rmse_fused, window);
    entries.push(SteadyRmse {
        estimator: "fused".to_string(),
        steady_rmse: mean,
        standard_error: se,
    });
    if let Some(series) = &r.rmse_perturbed_fused {
        let (mean, se) = steady_stats(series, window);
        entries.push(SteadyRmse {
            estimator: "perturbed_fused".to_string(),
            steady_rmse: mean,
            standard_error: se,
        });
    }
    RmseSummary {
        window: window.min(r.recorded_steps()),
        entries,
    }
}
