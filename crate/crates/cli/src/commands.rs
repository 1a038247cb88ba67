//! The five batch commands: validate, calibrate, simulate, privacy-check,
//! and report. Each writes machine-readable artifacts into the output
//! directory and signals its verdict through the exit code alone.

use std::path::Path;

use serde::Serialize;

use ldpfuse_core::estimator::assemble_ensemble;
use ldpfuse_core::fusion::{fused_covariance, fusion_weights, perturbed_stacked_cov};
use ldpfuse_core::matrix::Matrix;
use ldpfuse_core::privacy::{
    empirical_privacy_check, exceedance_region_1d, sensitivity_profile,
};
use ldpfuse_core::rng::RandomSource;
use ldpfuse_core::sim::{rmse_summary, run_monte_carlo, Scenario};
use ldpfuse_core::validate_model;

use crate::config::ResolvedConfig;
use crate::output::{fmt_float, write_csv, write_json, Metadata};
use crate::AppError;

#[derive(Serialize)]
struct SensorValidationOut {
    sensor: usize,
    q_v_psd: bool,
    q_v_bar_full_rank: bool,
}

#[derive(Serialize)]
struct ValidationOut {
    metadata: Metadata,
    accepted: bool,
    n_x: usize,
    controllability_rank: usize,
    observability_rank: usize,
    q_w_psd: bool,
    sensors: Vec<SensorValidationOut>,
}

/// Writes `validation.json`; exit 0 iff the model is accepted.
pub fn cmd_validate(cfg: &ResolvedConfig) -> Result<i32, AppError> {
    let (model, _budget) = cfg.build_model()?;
    let report = validate_model(&model).map_err(AppError::domain_from)?;
    let out = ValidationOut {
        metadata: Metadata::new(&cfg.config_hash, cfg.seed(), "validate", &cfg.scenario_label()),
        accepted: report.accepted,
        n_x: report.n_x,
        controllability_rank: report.controllability_rank,
        observability_rank: report.observability_rank,
        q_w_psd: report.q_w_psd,
        sensors: report
            .q_v_psd
            .iter()
            .zip(&report.q_v_bar_full_rank)
            .enumerate()
            .map(|(i, (psd, full))| SensorValidationOut {
                sensor: i + 1,
                q_v_psd: *psd,
                q_v_bar_full_rank: *full,
            })
            .collect(),
    };
    write_json(&cfg.out_dir().join("validation.json"), &out)?;
    Ok(if report.accepted { 0 } else { 1 })
}

#[derive(Serialize)]
struct BudgetOut {
    epsilon: f64,
    delta: f64,
}

#[derive(Serialize)]
struct ProfileOut {
    delta2: f64,
    p_min: f64,
    p_max: f64,
}

#[derive(Serialize)]
struct PlanOut {
    kind: String,
    q_a: f64,
    zeta: f64,
    threshold: f64,
}

impl PlanOut {
    fn from(plan: &ldpfuse_core::MechanismPlan) -> Self {
        PlanOut {
            kind: plan.kind.as_str().to_string(),
            q_a: plan.q_a,
            zeta: plan.zeta,
            threshold: plan.threshold,
        }
    }
}

#[derive(Serialize)]
struct SolverOut {
    tol: f64,
    max_iter: usize,
    zeta_margin: f64,
}

#[derive(Serialize)]
struct CalibrationOut {
    metadata: Metadata,
    budget: BudgetOut,
    n_x: usize,
    profile: ProfileOut,
    plan: PlanOut,
    solver: SolverOut,
}

fn calibration_out(cfg: &ResolvedConfig, scenario: &Scenario) -> Result<CalibrationOut, AppError> {
    let ens = assemble_ensemble(&scenario.model, scenario.solver.tol, scenario.solver.max_iter)
        .map_err(AppError::domain_from)?;
    let profile = sensitivity_profile(&ens).map_err(AppError::domain_from)?;
    Ok(CalibrationOut {
        metadata: Metadata::new(
            &cfg.config_hash,
            cfg.seed(),
            "calibrate",
            &cfg.scenario_label(),
        ),
        budget: BudgetOut {
            epsilon: scenario.budget.epsilon,
            delta: scenario.budget.delta,
        },
        n_x: scenario.model.n_x(),
        profile: ProfileOut {
            delta2: profile.delta2,
            p_min: profile.p_min,
            p_max: profile.p_max,
        },
        plan: PlanOut::from(&scenario.plan),
        solver: SolverOut {
            tol: scenario.solver.tol,
            max_iter: scenario.solver.max_iter,
            zeta_margin: scenario.solver.zeta_margin,
        },
    })
}

/// Writes `calibration.json` with the sensitivity profile and release plan.
pub fn cmd_calibrate(cfg: &ResolvedConfig) -> Result<i32, AppError> {
    let scenario = cfg.build_scenario()?;
    let out = calibration_out(cfg, &scenario)?;
    write_json(&cfg.out_dir().join("calibration.json"), &out)?;
    Ok(0)
}

#[derive(Serialize)]
struct SteadyOut {
    estimator: String,
    steady_rmse: f64,
    standard_error: f64,
    predicted_rmse: Option<f64>,
}

#[derive(Serialize)]
struct PrivacySummaryOut {
    samples: usize,
    max_fraction: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SummaryOut {
    metadata: Metadata,
    plan: PlanOut,
    runs: usize,
    horizon: usize,
    burn_in: usize,
    window: usize,
    steady: Vec<SteadyOut>,
    privacy: Option<PrivacySummaryOut>,
}

/// Writes `rmse.csv`, `rmse_components.csv`, and `summary.json`.
pub fn cmd_simulate(cfg: &ResolvedConfig) -> Result<i32, AppError> {
    let scenario = cfg.build_scenario()?;
    let result = run_monte_carlo(&scenario).map_err(AppError::domain_from)?;
    let summary = rmse_summary(&result);
    let metadata = Metadata::new(
        &cfg.config_hash,
        cfg.seed(),
        "simulate",
        &cfg.scenario_label(),
    );

    let l = scenario.model.n_sensors();
    let n_x = scenario.model.n_x();
    let recorded = result.recorded_steps();
    let perturbed = result.rmse_perturbed_fused.is_some();

    // rmse.csv: step, per-sensor full-state RMSE, fused, then (Gaussian plans
    // only) perturbed fused.
    let mut header: Vec<String> = vec!["step".to_string()];
    header.extend((1..=l).map(|i| format!("rmse_local_{i}")));
    header.push("rmse_fused".to_string());
    if perturbed {
        header.push("rmse_perturbed_fused".to_string());
    }
    let mut rows = Vec::with_capacity(recorded);
    for t in 0..recorded {
        let mut row = vec![format!("{}", scenario.burn_in + t + 1)];
        for i in 0..l {
            row.push(fmt_float(result.rmse_local[i][t]));
        }
        row.push(fmt_float(result.rmse_fused[t]));
        if let Some(series) = &result.rmse_perturbed_fused {
            row.push(fmt_float(series[t]));
        }
        rows.push(row);
    }
    write_csv(&cfg.out_dir().join("rmse.csv"), &metadata, &header, &rows)?;

    // rmse_components.csv: the same layout expanded per state component.
    let mut cheader: Vec<String> = vec!["step".to_string()];
    for i in 1..=l {
        for c in 1..=n_x {
            cheader.push(format!("rmse_local_{i}_c{c}"));
        }
    }
    for c in 1..=n_x {
        cheader.push(format!("rmse_fused_c{c}"));
    }
    if perturbed {
        for c in 1..=n_x {
            cheader.push(format!("rmse_perturbed_fused_c{c}"));
        }
    }
    let mut crows = Vec::with_capacity(recorded);
    for t in 0..recorded {
        let mut row = vec![format!("{}", scenario.burn_in + t + 1)];
        for i in 0..l {
            for c in 0..n_x {
                row.push(fmt_float(result.rmse_local_components[i][c][t]));
            }
        }
        for c in 0..n_x {
            row.push(fmt_float(result.rmse_fused_components[c][t]));
        }
        if let Some(series) = &result.rmse_perturbed_fused_components {
            for c in 0..n_x {
                row.push(fmt_float(series[c][t]));
            }
        }
        crows.push(row);
    }
    write_csv(
        &cfg.out_dir().join("rmse_components.csv"),
        &metadata,
        &cheader,
        &crows,
    )?;

    // Predicted steady RMSE per estimator from the solved covariances.
    let ens = assemble_ensemble(&scenario.model, scenario.solver.tol, scenario.solver.max_iter)
        .map_err(AppError::domain_from)?;
    let weights =
        fusion_weights(&ens.stacked, n_x, l).map_err(AppError::domain_from)?;
    let fused_trace = fused_covariance(&weights, &ens.stacked)
        .map_err(AppError::domain_from)?
        .trace();
    let perturbed_trace = if perturbed {
        let stacked_p =
            perturbed_stacked_cov(&ens, scenario.plan.q_a).map_err(AppError::domain_from)?;
        let w_p = fusion_weights(&stacked_p, n_x, l).map_err(AppError::domain_from)?;
        Some(
            fused_covariance(&w_p, &stacked_p)
                .map_err(AppError::domain_from)?
                .trace(),
        )
    } else {
        None
    };
    let predicted = |name: &str| -> Option<f64> {
        if let Some(rest) = name.strip_prefix("local_") {
            let i: usize = rest.parse().ok()?;
            return Some(ens.p_est(i - 1).trace().sqrt());
        }
        match name {
            "fused" => Some(fused_trace.sqrt()),
            "perturbed_fused" => perturbed_trace.map(|t| t.sqrt()),
            _ => None,
        }
    };

    let out = SummaryOut {
        metadata,
        plan: PlanOut::from(&scenario.plan),
        runs: scenario.runs,
        horizon: scenario.horizon,
        burn_in: scenario.burn_in,
        window: summary.window,
        steady: summary
            .entries
            .iter()
            .map(|e| SteadyOut {
                estimator: e.estimator.clone(),
                steady_rmse: e.steady_rmse,
                standard_error: e.standard_error,
                predicted_rmse: predicted(&e.estimator),
            })
            .collect(),
        privacy: result.privacy_report.as_ref().map(|p| PrivacySummaryOut {
            samples: p.samples,
            max_fraction: p.max_fraction,
            tolerance: p.tolerance,
            pass: p.pass,
        }),
    };
    write_json(&cfg.out_dir().join("summary.json"), &out)?;
    Ok(0)
}

#[derive(Serialize)]
struct PairOut {
    sensor_i: usize,
    sensor_j: usize,
    fraction: f64,
}

#[derive(Serialize)]
struct RegionOut {
    sensor_i: usize,
    sensor_j: usize,
    /// Open intervals in the deviation X−x; null endpoints are unbounded.
    intervals: Vec<[Option<f64>; 2]>,
}

#[derive(Serialize)]
struct PrivacyOut {
    metadata: Metadata,
    epsilon: f64,
    delta: f64,
    samples: usize,
    q_a: f64,
    q_a_forced: bool,
    pairs: Vec<PairOut>,
    max_fraction: f64,
    tolerance: f64,
    pass: bool,
    /// Analytic exceedance regions, scalar state only.
    exceedance_regions: Option<Vec<RegionOut>>,
}

/// Writes `privacy.csv` and `privacy.json`; exit 0 iff every pairwise
/// exceedance fraction stays within the sampling tolerance of δ.
pub fn cmd_privacy_check(cfg: &ResolvedConfig) -> Result<i32, AppError> {
    let scenario = cfg.build_scenario()?;
    let q_a_forced = cfg.force_q_a().is_some();
    let q_a = cfg.force_q_a().unwrap_or(scenario.plan.q_a);
    if q_a < 0.0 {
        return Err(AppError::usage("force_q_a must be non-negative".to_string()));
    }
    let ens = assemble_ensemble(&scenario.model, scenario.solver.tol, scenario.solver.max_iter)
        .map_err(AppError::domain_from)?;
    let n_x = scenario.model.n_x();
    let released: Vec<Matrix> = ens
        .diagonal_blocks()
        .iter()
        .map(|b| b.add(&Matrix::identity(n_x).scale(q_a)).unwrap())
        .collect();

    let rng = RandomSource::from_seed(cfg.seed()).substream(u64::MAX);
    let report = empirical_privacy_check(&released, &scenario.budget, cfg.samples(), &rng)
        .map_err(AppError::domain_from)?;

    let metadata = Metadata::new(
        &cfg.config_hash,
        cfg.seed(),
        "privacy-check",
        &cfg.scenario_label(),
    );

    let header = vec![
        "sensor_i".to_string(),
        "sensor_j".to_string(),
        "exceedance_fraction".to_string(),
    ];
    let rows: Vec<Vec<String>> = report
        .pairs
        .iter()
        .map(|p| {
            vec![
                format!("{}", p.sensor_i + 1),
                format!("{}", p.sensor_j + 1),
                fmt_float(p.fraction),
            ]
        })
        .collect();
    write_csv(&cfg.out_dir().join("privacy.csv"), &metadata, &header, &rows)?;

    // Scalar systems admit closed-form exceedance regions; the loss is
    // symmetric under swapping the pair, so unordered pairs suffice.
    let exceedance_regions = if n_x == 1 {
        let mut regions = Vec::new();
        for i in 0..released.len() {
            for j in (i + 1)..released.len() {
                let p_i = released[i].get(0, 0);
                let p_j = released[j].get(0, 0);
                let intervals = if p_i == p_j {
                    Vec::new()
                } else {
                    exceedance_region_1d(p_i, p_j, scenario.budget.epsilon)
                        .map_err(AppError::domain_from)?
                };
                regions.push(RegionOut {
                    sensor_i: i + 1,
                    sensor_j: j + 1,
                    intervals: intervals
                        .iter()
                        .map(|(lo, hi)| {
                            [

                                lo.is_finite().then_some(*lo),
                                hi.is_finite().then_some(*hi),
                            ]
                        })
                        .collect(),
                });
            }
        }
        Some(regions)
    } else {
        None
    };

    let pass = report.pass;
    let out = PrivacyOut {
        metadata,
        epsilon: scenario.budget.epsilon,
        delta: scenario.budget.delta,
        samples: report.samples,
        q_a,
        q_a_forced,
        pairs: report
            .pairs
            .iter()
            .map(|p| PairOut {
                sensor_i: p.sensor_i + 1,
                sensor_j: p.sensor_j + 1,
                fraction: p.fraction,
            })
            .collect(),
        max_fraction: report.max_fraction,
        tolerance: report.tolerance,
        pass,
        exceedance_regions,
    };
    write_json(&cfg.out_dir().join("privacy.json"), &out)?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct ReportOut {
    metadata: Metadata,
    validation: Option<serde_json::Value>,
    calibration: Option<serde_json::Value>,
    summary: Option<serde_json::Value>,
    privacy: Option<serde_json::Value>,
}

fn read_json_if_present(path: &Path) -> Result<Option<serde_json::Value>, AppError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::domain(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| AppError::domain(format!("cannot parse {}: {e}", path.display())))
}

/// Aggregates whichever prior artifacts exist into `report.json`.
pub fn cmd_report(cfg: &ResolvedConfig) -> Result<i32, AppError> {
    let dir = cfg.out_dir();
    let out = ReportOut {
        metadata: Metadata::new(&cfg.config_hash, cfg.seed(), "report", &cfg.scenario_label()),
        validation: read_json_if_present(&dir.join("validation.json"))?,
        calibration: read_json_if_present(&dir.join("calibration.json"))?,
        summary: read_json_if_present(&dir.join("summary.json"))?,
        privacy: read_json_if_present(&dir.join("privacy.json"))?,
    };
    if out.validation.is_none()
        && out.calibration.is_none()
        && out.summary.is_none()
        && out.privacy.is_none()
    {
        return Err(AppError::domain(format!(
            "no prior outputs found in {}",
            dir.display()
        )));
    }
    write_json(&dir.join("report.json"), &out)?;
    Ok(0)
}
