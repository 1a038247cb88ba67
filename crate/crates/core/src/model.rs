//! Linear time-invariant multi-sensor plant: representation, validation, and
//! trajectory generation.
//!
//! The plant is
//!
//! ```text
//! x_{k+1} = A x_k + u_k + B w_k,      w ~ N(0, Q_w)
//! y_{i,k} = C_i x_k + D_i v_{i,k},    v_i ~ N(0, Q_v_i)
//! ```
//!
//! with mutually independent noises across sensors and time. The optional
//! deterministic drive `u_k` is known to every filter, so it cancels out of
//! all error statistics; it exists so scenarios with an exogenous input can
//! be simulated in physical units.

use crate::error::{Error, Result};
use crate::matrix::{self, numerical_rank, sym_eig_extremes, Matrix};
use crate::rng::RandomSource;

/// Absolute eigenvalue slack below zero still accepted as "non-negative
/// definite" for covariance inputs.
pub const PSD_SLACK: f64 = 1e-10;

/// Relative singular-value tolerance for the controllability/observability
/// rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Deterministic known input applied at every step.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    /// No exogenous input (the default).
    Zero,
    /// The same vector at every step.
    Constant(Vec<f64>),
}

impl Drive {
    /// Input vector at step `k` (1-based step index; constant drives ignore it).
    pub fn at(&self, _k: usize, n_x: usize) -> Vec<f64> {
        match self {
            Drive::Zero => vec![0.0; n_x],
            Drive::Constant(u) => u.clone(),
        }
    }
}

/// One sensor: observation map, noise input map, and measurement-noise
/// covariance.
#[derive(Debug, Clone)]
pub struct SensorModel {
    c: Matrix,
    d: Matrix,
    q_v: Matrix,
    /// Effective measurement-noise covariance D·Q_v·Dᵀ, cached because every
    /// Riccati sweep needs it.
    q_v_bar: Matrix,
}

impl SensorModel {
    /// Validates dimensions and PSD-ness of `q_v`. Full rank of D·Q_v·Dᵀ
    /// (needed to invert the innovation covariance when synthesizing a
    /// filter) is checked by `validate_model`, not here, so that degenerate
    /// sensors can still be simulated.
    pub fn new(c: Matrix, d: Matrix, q_v: Matrix) -> Result<Self> {
        let n_y = c.rows();
        if d.rows() != n_y {
            return Err(Error::invalid(format!(
                "sensor noise map D has {} rows but C has {}",
                d.rows(),
                n_y
            )));
        }
        if q_v.rows() != d.cols() || !q_v.is_square() {
            return Err(Error::invalid(format!(
                "Q_v must be {}x{} to match D",
                d.cols(),
                d.cols()
            )));
        }
        q_v.check_symmetric()?;
        let (lambda_min, _) = sym_eig_extremes(&q_v)?;
        if lambda_min < -PSD_SLACK {
            return Err(Error::invalid(format!(
                "Q_v is not non-negative definite (eigenvalue {lambda_min:.3e})"
            )));
        }
        let q_v_bar = d.matmul(&q_v)?.matmul(&d.transpose())?.symmetrized();
        Ok(SensorModel { c, d, q_v, q_v_bar })
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn q_v(&self) -> &Matrix {
        &self.q_v
    }

    /// D·Q_v·Dᵀ.
    pub fn q_v_bar(&self) -> &Matrix {
        &self.q_v_bar
    }

    pub fn n_y(&self) -> usize {
        self.c.rows()
    }
}

/// The full plant: state dynamics plus an ordered list of sensors.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: Matrix,
    b: Matrix,
    q_w: Matrix,
    sensors: Vec<SensorModel>,
    drive: Drive,
    /// B·Q_w·Bᵀ, cached for the solvers.
    q_w_bar: Matrix,
}

impl SystemModel {
    pub fn new(
        a: Matrix,
        b: Matrix,
        q_w: Matrix,
        sensors: Vec<SensorModel>,
        drive: Drive,
    ) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::invalid("state transition matrix A must be square"));
        }
        let n_x = a.rows();
        if b.rows() != n_x {
            return Err(Error::invalid(format!(
                "noise input B has {} rows, expected {n_x}",
                b.rows()
            )));
        }
        if !q_w.is_square() || q_w.rows() != b.cols() {
            return Err(Error::invalid(format!(
                "Q_w must be {}x{} to match B",
                b.cols(),
                b.cols()
            )));
        }
        q_w.check_symmetric()?;
        let (lambda_min, _) = sym_eig_extremes(&q_w)?;
        if lambda_min < -PSD_SLACK {
            return Err(Error::invalid(format!(
                "Q_w is not non-negative definite (eigenvalue {lambda_min:.3e})"
            )));
        }
        if sensors.is_empty() {
            return Err(Error::invalid("at least one sensor is required"));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.c.cols() != n_x {
                return Err(Error::invalid(format!(
                    "sensor {i}: C has {} columns, expected {n_x}",
                    s.c.cols()
                )));
            }
        }
        if let Drive::Constant(u) = &drive {
            if u.len() != n_x {
                return Err(Error::invalid(format!(
                    "drive vector has length {}, expected {n_x}",
                    u.len()
                )));
            }
        }
        let q_w_bar = b.matmul(&q_w)?.matmul(&b.transpose())?.symmetrized();
        Ok(SystemModel {
            a,
            b,
            q_w,
            sensors,
            drive,
            q_w_bar,
        })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn q_w(&self) -> &Matrix {
        &self.q_w
    }

    /// B·Q_w·Bᵀ.
    pub fn q_w_bar(&self) -> &Matrix {
        &self.q_w_bar
    }

    pub fn sensors(&self) -> &[SensorModel] {
        &self.sensors
    }

    pub fn sensor(&self, i: usize) -> &SensorModel {
        &self.sensors[i]
    }

    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn drive(&self) -> &Drive {
        &self.drive
    }
}

/// Outcome of `validate_model`: ranks, PSD verdicts, and the accept decision.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub n_x: usize,
    pub controllability_rank: usize,
    pub observability_rank: usize,
    pub q_w_psd: bool,
    pub q_v_psd: Vec<bool>,
    pub q_v_bar_full_rank: Vec<bool>,
    pub accepted: bool,
}

/// Checks controllability of (A, B), observability of (A, stacked C), and
/// PSD-ness of all noise covariances. The model is accepted iff both ranks
/// equal n_x and every PSD check passes.
pub fn validate_model(m: &SystemModel) -> Result<ValidationReport> {
    let n_x = m.n_x();

    // Controllability matrix [B AB ... A^{n_x-1}B].
    let mut ctrb_cols: Vec<Matrix> = Vec::with_capacity(n_x);
    let mut power = m.b.clone();
    for _ in 0..n_x {
        ctrb_cols.push(power.clone());
        power = m.a.matmul(&power)?;
    }
    let total_cols: usize = ctrb_cols.iter().map(|c| c.cols()).sum();
    let mut ctrb = Matrix::zeros(n_x, total_cols);
    let mut offset = 0;
    for blk in &ctrb_cols {
        ctrb.set_block(0, offset, blk);
        offset += blk.cols();
    }
    let controllability_rank = numerical_rank(&ctrb, RANK_TOL)?;

    // Observability matrix for the stacked observation map of all sensors.
    let total_rows: usize = m.sensors.iter().map(|s| s.n_y()).sum();
    let mut stacked_c = Matrix::zeros(total_rows, n_x);
    let mut roff = 0;
    for s in &m.sensors {
        stacked_c.set_block(roff, 0, &s.c);
        roff += s.n_y();
    }
    let mut obs = Matrix::zeros(total_rows * n_x, n_x);
    let mut block = stacked_c.clone();
    for i in 0..n_x {
        obs.set_block(i * total_rows, 0, &block);
        block = block.matmul(&m.a)?;
    }
    let observability_rank = numerical_rank(&obs, RANK_TOL)?;

    let q_w_psd = sym_eig_extremes(&m.q_w)?.0 >= -PSD_SLACK;
    let mut q_v_psd = Vec::with_capacity(m.n_sensors());
    let mut q_v_bar_full_rank = Vec::with_capacity(m.n_sensors());
    for s in &m.sensors {
        q_v_psd.push(sym_eig_extremes(&s.q_v)?.0 >= -PSD_SLACK);
        q_v_bar_full_rank.push(numerical_rank(&s.q_v_bar, RANK_TOL)? == s.n_y());
    }

    // Acceptance gates the estimator pipeline, so it also requires each
    // effective measurement covariance to be invertible.
    let accepted = controllability_rank == n_x
        && observability_rank == n_x
        && q_w_psd
        && q_v_psd.iter().all(|b| *b)
        && q_v_bar_full_rank.iter().all(|b| *b);

    Ok(ValidationReport {
        n_x,
        controllability_rank,
        observability_rank,
        q_w_psd,
        q_v_psd,
        q_v_bar_full_rank,
        accepted,
    })
}

/// Draws a zero-mean Gaussian vector with the given covariance.
fn gaussian_draw(cov_sqrt: &Matrix, rng: &mut RandomSource) -> Vec<f64> {
    let z = rng.standard_normal_vec(cov_sqrt.cols());
    cov_sqrt.matvec(&z).expect("square root shape")
}

/// Advances the true state one step: A·x_k + u_k + B·w with w ~ N(0, Q_w).
pub fn step_state(
    m: &SystemModel,
    x_k: &[f64],
    u_k: &[f64],
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    if x_k.len() != m.n_x() || u_k.len() != m.n_x() {
        return Err(Error::invalid("state/input dimension mismatch"));
    }
    let w_sqrt = matrix::sym_sqrt_psd(&m.q_w, PSD_SLACK)?;
    let w = gaussian_draw(&w_sqrt, rng);
    let bw = m.b.matvec(&w)?;
    let ax = m.a.matvec(x_k)?;
    Ok(ax.iter().zip(u_k).zip(&bw).map(|((a, u), n)| a + u + n).collect())
}

/// Produces one measurement: C·x_k + D·v with v ~ N(0, Q_v).
pub fn measure(s: &SensorModel, x_k: &[f64], rng: &mut RandomSource) -> Result<Vec<f64>> {
    if x_k.len() != s.c.cols() {
        return Err(Error::invalid("state dimension mismatch in measure"));
    }
    let v_sqrt = matrix::sym_sqrt_psd(&s.q_v, PSD_SLACK)?;
    let v = gaussian_draw(&v_sqrt, rng);
    let dv = s.d.matvec(&v)?;
    let cx = s.c.matvec(x_k)?;
    Ok(matrix::vec_add(&cx, &dv))
}

/// One realized trajectory: states x_0..x_K and per-sensor measurements
/// y_{i,1}..y_{i,K}.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub horizon: usize,
    pub states: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<Vec<f64>>>,
}

/// Simulates `horizon` steps from `x0` under the model's drive, using one
/// noise substream per role: label 0 for the process, label 1+i for sensor i.
pub fn simulate_trajectory(
    m: &SystemModel,
    x0: &[f64],
    horizon: usize,
    rng: &RandomSource,
) -> Result<TrajectorySample> {
    let mut process_rng = rng.substream(0);
    let mut sensor_rngs: Vec<RandomSource> = (0..m.n_sensors())
        .map(|i| rng.substream(1 + i as u64))
        .collect();

    let w_sqrt = matrix::sym_sqrt_psd(&m.q_w, PSD_SLACK)?;
    let v_sqrts: Vec<Matrix> = m
        .sensors
        .iter()
        .map(|s| matrix::sym_sqrt_psd(&s.q_v, PSD_SLACK))
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.to_vec());
    let mut measurements: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(horizon); m.n_sensors()];

    let mut x = x0.to_vec();
    for k in 1..=horizon {
        let u = m.drive.at(k, m.n_x());
        let w = gaussian_draw(&w_sqrt, &mut process_rng);
        let bw = m.b.matvec(&w)?;
        let ax = m.a.matvec(&x)?;
        x = ax.iter().zip(&u).zip(&bw).map(|((a, ui), n)| a + ui + n).collect();
        states.push(x.clone());
        for (i, s) in m.sensors.iter().enumerate() {
            let v = gaussian_draw(&v_sqrts[i], &mut sensor_rngs[i]);
            let dv = s.d.matvec(&v)?;
            let cx = s.c.matvec(&x)?;
            measurements[i].push(matrix::vec_add(&cx, &dv));
        }
    }

    Ok(TrajectorySample {
        horizon,
        states,
        measurements,
    })
}
