//! Steady-state Kalman synthesis per sensor and the online filter recursion.
//!
//! The prediction covariance is the fixed point of the discrete Riccati
//! recursion
//!
//! ```text
//! P⁻ = A·P⁻·Aᵀ + Q̄_w − A·P⁻·Cᵀ·(C·P⁻·Cᵀ + Q̄_v)⁻¹·C·P⁻·Aᵀ
//! ```
//!
//! solved by value iteration from P⁰ = Q̄_w, matching the recursion the
//! filter itself runs. Gains and estimation covariances follow from the
//! fixed point, cross-covariances between sensors from a second fixed-point
//! pass on the closed-loop error dynamics.

use crate::error::{Error, Result};
use crate::matrix::{self, solve_linear, sym_eig_extremes, Matrix};
use crate::model::SystemModel;

/// Default max-entry convergence tolerance for the fixed-point solvers.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Default iteration cap for the fixed-point solvers.
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Residual bound enforced on every converged solution.
const RESIDUAL_BOUND: f64 = 1e-8;

/// Steady-state filter for one sensor: prediction covariance, gain, and
/// estimation covariance.
#[derive(Debug, Clone)]
pub struct SteadySensorSolution {
    pub p_pred: Matrix,
    pub gain: Matrix,
    pub p_est: Matrix,
}

impl SteadySensorSolution {
    pub fn n_x(&self) -> usize {
        self.p_pred.rows()
    }
}

/// All steady second-order statistics of the sensor network: per-sensor
/// solutions, the full table of cross-covariances (diagonal = estimation
/// covariances), and the stacked block matrix.
#[derive(Debug, Clone)]
pub struct CovarianceEnsemble {
    pub per_sensor: Vec<SteadySensorSolution>,
    pub cross: Vec<Vec<Matrix>>,
    pub stacked: Matrix,
}

impl CovarianceEnsemble {
    pub fn n_sensors(&self) -> usize {
        self.per_sensor.len()
    }

    pub fn n_x(&self) -> usize {
        self.per_sensor[0].n_x()
    }

    /// Diagonal block i (the steady estimation covariance of sensor i).
    pub fn p_est(&self, i: usize) -> &Matrix {
        &self.cross[i][i]
    }

    /// The diagonal blocks as a list, the shape the privacy layer consumes.
    pub fn diagonal_blocks(&self) -> Vec<Matrix> {
        (0..self.n_sensors()).map(|i| self.cross[i][i].clone()).collect()
    }
}

/// One sensor's running estimate.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub sensor: usize,
    pub estimate: Vec<f64>,
}

impl FilterState {
    pub fn new(sensor: usize, n_x: usize) -> Self {
        FilterState {
            sensor,
            estimate: vec![0.0; n_x],
        }
    }
}

/// Riccati residual: max-entry gap between P and one sweep applied to P.
fn riccati_residual(m: &SystemModel, i: usize, p: &Matrix) -> Result<f64> {
    let next = riccati_sweep(m, i, p)?;
    Ok(next.max_abs_diff(p))
}

/// One Riccati sweep P ↦ A·P·Aᵀ + Q̄_w − A·P·Cᵀ·S⁻¹·C·P·Aᵀ, evaluated with a
/// linear solve against the innovation covariance S.
fn riccati_sweep(m: &SystemModel, i: usize, p: &Matrix) -> Result<Matrix> {
    let a = m.a();
    let sensor = m.sensor(i);
    let c = sensor.c();
    let apat = a.matmul(p)?.matmul(&a.transpose())?;
    let s = c
        .matmul(p)?
        .matmul(&c.transpose())?
        .add(sensor.q_v_bar())?
        .symmetrized();
    // A·P·Cᵀ·S⁻¹·C·P·Aᵀ = Mᵀ·S⁻¹·M with M = C·P·Aᵀ.
    let mid = c.matmul(p)?.matmul(&a.transpose())?;
    let x = solve_linear(&s, &mid)?;
    let correction = mid.transpose().matmul(&x)?;
    Ok(apat.add(m.q_w_bar())?.sub(&correction)?.symmetrized())
}

/// Solves the steady prediction covariance for sensor `i` by value iteration
/// from P⁰ = Q̄_w, then derives the steady gain and estimation covariance.
pub fn solve_riccati(
    m: &SystemModel,
    i: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SteadySensorSolution> {
    if tol <= 0.0 {
        return Err(Error::invalid("riccati tolerance must be positive"));
    }
    if i >= m.n_sensors() {
        return Err(Error::invalid(format!("sensor index {i} out of range")));
    }
    let mut p = m.q_w_bar().clone();
    let mut delta = f64::INFINITY;
    let mut envelope = f64::INFINITY;
    let mut warned = false;
    for iter in 0..max_iter {
        let next = riccati_sweep(m, i, &p)?;
        delta = next.max_abs_diff(&p);
        // Deltas should contract once past the first sweeps. Complex
        // closed-loop poles make individual steps oscillate, so only a clear
        // break of the running envelope is flagged; it is a warning, not a
        // failure.
        if iter > 5 && delta > 4.0 * envelope && delta > tol && !warned {
            log::warn!(
                "Riccati deltas stopped contracting at iteration {iter} for sensor {i} \
                 ({envelope:.3e} -> {delta:.3e})"
            );
            warned = true;
        }
        envelope = envelope.min(delta);
        p = next;
        if delta <= tol {
            let sol = finish_solution(m, i, p)?;
            return Ok(sol);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        residual: delta,
        context: format!("Riccati iteration for sensor {i}"),
    })
}

fn finish_solution(m: &SystemModel, i: usize, p_pred: Matrix) -> Result<SteadySensorSolution> {
    let sensor = m.sensor(i);
    let c = sensor.c();
    let n_x = m.n_x();
    let s = c
        .matmul(&p_pred)?
        .matmul(&c.transpose())?
        .add(sensor.q_v_bar())?
        .symmetrized();
    // K = P⁻·Cᵀ·S⁻¹ computed as (S⁻¹·C·P⁻)ᵀ.
    let kt = solve_linear(&s, &c.matmul(&p_pred)?)?;
    let gain = kt.transpose();
    let ikc = Matrix::identity(n_x).sub(&gain.matmul(c)?)?;
    let p_est = ikc.matmul(&p_pred)?.symmetrized();

    // Contract checks: PSD-ness, P_est ⪯ P_pred, and the Riccati residual.
    let (pred_min, _) = sym_eig_extremes(&p_pred)?;
    let (est_min, _) = sym_eig_extremes(&p_est)?;
    if pred_min < -1e-9 || est_min < -1e-9 {
        return Err(Error::invalid(format!(
            "steady covariances lost positive semi-definiteness ({pred_min:.3e}, {est_min:.3e})"
        )));
    }
    let (gap_min, _) = sym_eig_extremes(&p_pred.sub(&p_est)?)?;
    if gap_min < -1e-9 {
        return Err(Error::invalid(format!(
            "estimation covariance exceeds prediction covariance ({gap_min:.3e})"
        )));
    }
    let residual = riccati_residual(m, i, &p_pred)?;
    if residual > RESIDUAL_BOUND {
        return Err(Error::ConvergenceFailure {
            iterations: 0,
            residual,
            context: format!("converged Riccati point violates residual bound for sensor {i}"),
        });
    }
    Ok(SteadySensorSolution {
        p_pred,
        gain,
        p_est,
    })
}

/// One sweep of the cross-covariance recursion
/// P ↦ (I−K̄ᵢCᵢ)(A·P·Aᵀ + Q̄_w)(I−K̄ⱼCⱼ)ᵀ [+ K̄ᵢQ̄_vᵢK̄ᵢᵀ when i=j].
///
/// The added term for i=j carries the measurement-noise contribution that is
/// present exactly when both indices refer to the same sensor; with it the
/// recursion at i=j reproduces the Riccati estimation covariance.
fn cross_sweep(
    m: &SystemModel,
    i: usize,
    j: usize,
    ei: &Matrix,
    ej: &Matrix,
    p: &Matrix,
    gain_i: &Matrix,
) -> Result<Matrix> {
    let a = m.a();
    let inner = a.matmul(p)?.matmul(&a.transpose())?.add(m.q_w_bar())?;
    let mut next = ei.matmul(&inner)?.matmul(&ej.transpose())?;
    if i == j {
        let noise = gain_i
            .matmul(m.sensor(i).q_v_bar())?
            .matmul(&gain_i.transpose())?;
        next = next.add(&noise)?.symmetrized();
    }
    Ok(next)
}

/// Solves the steady cross estimation error covariance between sensors `i`
/// and `j`, iterating from zero.
pub fn solve_cross_cov(
    m: &SystemModel,
    i: usize,
    j: usize,
    sol_i: &SteadySensorSolution,
    sol_j: &SteadySensorSolution,
    tol: f64,
    max_iter: usize,
) -> Result<Matrix> {
    if tol <= 0.0 {
        return Err(Error::invalid("cross-covariance tolerance must be positive"));
    }
    let n_x = m.n_x();
    let ei = Matrix::identity(n_x).sub(&sol_i.gain.matmul(m.sensor(i).c())?)?;
    let ej = Matrix::identity(n_x).sub(&sol_j.gain.matmul(m.sensor(j).c())?)?;
    let mut p = Matrix::zeros(n_x, n_x);
    let mut delta = f64::INFINITY;
    for _ in 0..max_iter {
        let next = cross_sweep(m, i, j, &ei, &ej, &p, &sol_i.gain)?;
        delta = next.max_abs_diff(&p);
        p = next;
        if delta <= tol {
            let residual = cross_sweep(m, i, j, &ei, &ej, &p, &sol_i.gain)?.max_abs_diff(&p);
            if residual > RESIDUAL_BOUND {
                return Err(Error::ConvergenceFailure {
                    iterations: 0,
                    residual,
                    context: format!("cross-covariance residual bound violated for ({i},{j})"),
                });
            }
            return Ok(p);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        residual: delta,
        context: format!(
            "cross-covariance iteration for sensors ({i},{j}); the closed-loop \
             dynamics may not be contractive"
        ),
    })
}

/// Computes every steady solution and cross block and assembles the stacked
/// covariance matrix.
pub fn assemble_ensemble(
    m: &SystemModel,
    tol: f64,
    max_iter: usize,
) -> Result<CovarianceEnsemble> {
    let l = m.n_sensors();
    let n_x = m.n_x();
    let per_sensor: Vec<SteadySensorSolution> = (0..l)
        .map(|i| solve_riccati(m, i, tol, max_iter))
        .collect::<Result<_>>()?;

    let mut cross: Vec<Vec<Matrix>> = vec![vec![Matrix::zeros(n_x, n_x); l]; l];
    for i in 0..l {
        cross[i][i] = per_sensor[i].p_est.clone();
        for j in (i + 1)..l {
            let pij = solve_cross_cov(m, i, j, &per_sensor[i], &per_sensor[j], tol, max_iter)?;
            cross[j][i] = pij.transpose();
            cross[i][j] = pij;
        }
    }

    let stacked = matrix::assemble_blocks(&cross, n_x)?.symmetrized();
    let (lambda_min, _) = sym_eig_extremes(&stacked)?;
    if lambda_min < -1e-8 {
        return Err(Error::invalid(format!(
            "stacked covariance lost positive semi-definiteness (eigenvalue {lambda_min:.3e})"
        )));
    }
    Ok(CovarianceEnsemble {
        per_sensor,
        cross,
        stacked,
    })
}

/// One step of the steady-state filter:
/// x̂ ← A·x̂ + u + K̄·(y − C·(A·x̂ + u)).
pub fn filter_step(
    fs: &FilterState,
    sol: &SteadySensorSolution,
    m: &SystemModel,
    y: &[f64],
    u: &[f64],
) -> Result<FilterState> {
    let sensor = m.sensor(fs.sensor);
    let predicted = matrix::vec_add(&m.a().matvec(&fs.estimate)?, u);
    let innovation = matrix::vec_sub(y, &sensor.c().matvec(&predicted)?);
    let correction = sol.gain.matvec(&innovation)?;
    Ok(FilterState {
        sensor: fs.sensor,
        estimate: matrix::vec_add(&predicted, &correction),
    })
}
