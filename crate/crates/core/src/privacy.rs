//! Local differential privacy for the fusion network: covariance-based
//! sensitivity, the intrinsic-randomness sufficiency test, Gaussian noise
//! calibration, and analytic plus empirical privacy-loss evaluation.
//!
//! The privacy metric compares the release densities of two sensors' state
//! estimates: the estimates share a mean (the true state) and differ only in
//! their steady error covariances, so both the sensitivity and the
//! mechanisms are functions of those covariances alone.
//!
//! Two mechanisms implement the release:
//!
//! * **intrinsic** — the system's own process/measurement noise already
//!   separates the densities by no more than the budget allows; estimates
//!   are released untouched.
//! * **gaussian** — isotropic noise q_a·I is added to every estimate, with
//!   q_a calibrated so the inflated covariances satisfy the same condition.

use crate::error::{Error, Result};
use crate::estimator::CovarianceEnsemble;
use crate::matrix::{
    self, solve_linear_vec, spectral_norm, sym_eig_extremes, sym_logdet_pd, Matrix,
};
use crate::rng::RandomSource;

/// (ε, δ) privacy budget. ε bounds the log-likelihood ratio between any two
/// sensors' release densities; δ bounds the probability mass where the
/// ε-bound may fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::BudgetOutOfRange(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::BudgetOutOfRange(format!(
                "delta must lie strictly between 0 and 1, got {delta}"
            )));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }

    /// The high-dimensional mechanism statements additionally require ε < 1.
    fn check_high_dimensional(&self, n_x: usize) -> Result<()> {
        if n_x > 1 && self.epsilon >= 1.0 {
            return Err(Error::BudgetOutOfRange(format!(
                "the high-dimensional mechanisms (n_x = {n_x}) require epsilon < 1, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Covariance-based sensitivity summary of an ensemble: the largest 2-norm
/// distance between any two estimation covariances, and the extreme 2-norms.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityProfile {
    pub delta2: f64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Which release mechanism a calibration chose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismKind {
    Intrinsic,
    Gaussian,
}

impl MechanismKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismKind::Intrinsic => "intrinsic",
            MechanismKind::Gaussian => "gaussian",
        }
    }
}

/// Calibration outcome: the chosen mechanism, its noise level, the ζ factor
/// used (Gaussian only), and the evaluated intrinsic-condition threshold.
#[derive(Debug, Clone, Copy)]
pub struct MechanismPlan {
    pub kind: MechanismKind,
    pub q_a: f64,
    pub zeta: f64,
    pub threshold: f64,
}

impl MechanismPlan {
    /// Instantiates the runtime perturbation strategy for this plan.
    pub fn mechanism(&self) -> Box<dyn Mechanism> {
        match self.kind {
            MechanismKind::Intrinsic => Box::new(IntrinsicMechanism),
            MechanismKind::Gaussian => Box::new(GaussianMechanism { q_a: self.q_a }),
        }
    }
}

/// A release mechanism applied to each local estimate before transmission.
pub trait Mechanism: Send + Sync {
    fn kind(&self) -> MechanismKind;
    /// Variance of the injected isotropic noise (zero for intrinsic release).
    fn noise_variance(&self) -> f64;
    /// Applies the mechanism to one estimate.
    fn apply(&self, estimate: &[f64], rng: &mut RandomSource) -> Vec<f64>;
}

/// Pass-through release: the system's intrinsic randomness is sufficient.
pub struct IntrinsicMechanism;

impl Mechanism for IntrinsicMechanism {
    fn kind(&self) -> MechanismKind {
        MechanismKind::Intrinsic
    }

    fn noise_variance(&self) -> f64 {
        0.0
    }

    fn apply(&self, estimate: &[f64], _rng: &mut RandomSource) -> Vec<f64> {
        estimate.to_vec()
    }
}

/// Isotropic Gaussian noise injection with variance `q_a`.
pub struct GaussianMechanism {
    pub q_a: f64,
}

impl Mechanism for GaussianMechanism {
    fn kind(&self) -> MechanismKind {
        MechanismKind::Gaussian
    }

    fn noise_variance(&self) -> f64 {
        self.q_a
    }

    fn apply(&self, estimate: &[f64], rng: &mut RandomSource) -> Vec<f64> {
        perturb_estimate(estimate, self.q_a, rng)
    }
}

/// Computes Δ₂ = max over ordered pairs of ‖P̄ᵢᵢ − P̄ⱼⱼ‖₂ and the extreme
/// norms over the diagonal blocks.
pub fn sensitivity_profile(ens: &CovarianceEnsemble) -> Result<SensitivityProfile> {
    sensitivity_profile_of_blocks(&ens.diagonal_blocks())
}

/// Same computation starting from an explicit list of per-sensor estimation
/// covariances (used for perturbed profiles).
pub fn sensitivity_profile_of_blocks(blocks: &[Matrix]) -> Result<SensitivityProfile> {
    if blocks.is_empty() {
        return Err(Error::invalid("sensitivity profile needs at least one block"));
    }
    let mut p_min = f64::INFINITY;
    let mut p_max = 0.0_f64;
    for b in blocks {
        let norm = spectral_norm(b)?;
        p_min = p_min.min(norm);
        p_max = p_max.max(norm);
    }
    let mut delta2 = 0.0_f64;
    for i in 0..blocks.len() {
        for j in 0..blocks.len() {
            if i == j {
                continue;
            }
            delta2 = delta2.max(spectral_norm(&blocks[i].sub(&blocks[j])?)?);
        }
    }
    // Reverse triangle inequality: Δ₂ ≥ P̄_max − P̄_min (round-off slack only).
    if delta2 < p_max - p_min - 1e-12 * p_max.max(1.0) {
        return Err(Error::invalid(format!(
            "sensitivity {delta2:.6e} fell below the norm gap {:.6e}",
            p_max - p_min
        )));
    }
    Ok(SensitivityProfile {
        delta2,
        p_min,
        p_max,
    })
}

/// Right-hand side of the intrinsic-mechanism condition:
/// Δ₂·sqrt((δ+1)² + 8εδ) / (2εδ) in one dimension, with (δ+1) → (δ+n_x) and
/// 8εδ → 8·n_x·εδ in the high-dimensional form. The release is intrinsically
/// private when P̄_min exceeds this value.
pub fn intrinsic_threshold(sp: &SensitivityProfile, b: &PrivacyBudget, n_x: usize) -> Result<f64> {
    if n_x == 0 {
        return Err(Error::invalid("state dimension must be positive"));
    }
    b.check_high_dimensional(n_x)?;
    let nf = n_x as f64;
    let disc = if n_x == 1 {
        (b.delta + 1.0).powi(2) + 8.0 * b.epsilon * b.delta
    } else {
        (b.delta + nf).powi(2) + 8.0 * nf * b.epsilon * b.delta
    };
    Ok(sp.delta2 * disc.sqrt() / (2.0 * b.epsilon * b.delta))
}

/// Lower bound on the Gaussian mechanism's ζ factor (the intrinsic threshold
/// with the ε divisor removed).
fn zeta_bound(b: &PrivacyBudget, n_x: usize) -> f64 {
    let nf = n_x as f64;
    let disc = if n_x == 1 {
        (b.delta + 1.0).powi(2) + 8.0 * b.epsilon * b.delta
    } else {
        (b.delta + nf).powi(2) + 8.0 * nf * b.epsilon * b.delta
    };
    disc.sqrt() / (2.0 * b.delta)
}

/// Decides between the intrinsic and Gaussian mechanisms and calibrates the
/// Gaussian noise floor q_a = max(0, ζ·Δ₂/ε − P̄_min) with
/// ζ = (1 + zeta_margin) × its strict lower bound.
pub fn plan_mechanism(
    sp: &SensitivityProfile,
    b: &PrivacyBudget,
    n_x: usize,
    zeta_margin: f64,
) -> Result<MechanismPlan> {
    if zeta_margin < 0.0 {
        return Err(Error::invalid("zeta_margin must be non-negative"));
    }
    let threshold = intrinsic_threshold(sp, b, n_x)?;
    if sp.delta2 == 0.0 && sp.p_min == 0.0 {
        return Err(Error::invalid(
            "degenerate deterministic system: all estimation covariances are zero, \
             no randomized release is possible",
        ));
    }
    if sp.p_min > threshold {
        return Ok(MechanismPlan {
            kind: MechanismKind::Intrinsic,
            q_a: 0.0,
            zeta: 0.0,
            threshold,
        });
    }
    let zeta = (1.0 + zeta_margin) * zeta_bound(b, n_x);
    let q_a = (zeta * sp.delta2 / b.epsilon - sp.p_min).max(0.0);
    Ok(MechanismPlan {
        kind: MechanismKind::Gaussian,
        q_a,
        zeta,
        threshold,
    })
}

/// Adds isotropic Gaussian noise with variance `q_a` to an estimate;
/// `q_a = 0` returns the input unchanged without consuming draws.
pub fn perturb_estimate(x_hat: &[f64], q_a: f64, rng: &mut RandomSource) -> Vec<f64> {
    assert!(q_a >= 0.0, "noise variance must be non-negative");
    if q_a == 0.0 {
        return x_hat.to_vec();
    }
    let sd = q_a.sqrt();
    x_hat
        .iter()
        .map(|v| v + sd * rng.standard_normal())
        .collect()
}

/// Absolute log-ratio of two Gaussian densities with common mean `x`,
/// evaluated at `x_obs`:
///
/// ```text
/// | ½·ln(|P_j|/|P_i|) − ½·(X−x)ᵀ(P_i⁻¹ − P_j⁻¹)(X−x) |
/// ```
///
/// Determinants go through symmetric eigendecomposition in log-space;
/// inverse applications through linear solves.
pub fn privacy_loss(x_obs: &[f64], x: &[f64], p_i: &Matrix, p_j: &Matrix) -> Result<f64> {
    if x_obs.len() != x.len() || p_i.rows() != x.len() || p_j.rows() != x.len() {
        return Err(Error::invalid("privacy_loss dimension mismatch"));
    }
    for (name, p) in [("P_i", p_i), ("P_j", p_j)] {
        p.check_symmetric()?;
        let (lo, _) = sym_eig_extremes(p)?;
        if lo <= 0.0 {
            return Err(Error::invalid(format!(
                "{name} must be positive definite (eigenvalue {lo:.3e})"
            )));
        }
    }
    let logdet_i = sym_logdet_pd(p_i)?;
    let logdet_j = sym_logdet_pd(p_j)?;
    let d = matrix::vec_sub(x_obs, x);
    let wi = solve_linear_vec(p_i, &d)?;
    let wj = solve_linear_vec(p_j, &d)?;
    let quad: f64 = d.iter().zip(wi.iter().zip(&wj)).map(|(di, (a, b))| di * (a - b)).sum();
    Ok((0.5 * (logdet_j - logdet_i) - 0.5 * quad).abs())
}

/// A half-open interval of the real line; endpoints may be infinite.
pub type Interval = (f64, f64);

/// For scalar covariances, the set of deviations X−x whose privacy loss
/// exceeds `eps`, as disjoint symmetric intervals.
///
/// With a = ½·ln(p_j/p_i) and b = (p_j−p_i)/(−2·p_i·p_j), the loss at
/// t = (X−x)² is |a + b·t|; the solution in t is a tail region and, when
/// |a| > eps, also a neighborhood of zero.
pub fn exceedance_region_1d(p_i: f64, p_j: f64, eps: f64) -> Result<Vec<Interval>> {
    if p_i <= 0.0 || p_j <= 0.0 {
        return Err(Error::invalid("scalar covariances must be positive"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("eps must be positive"));
    }
    if p_i == p_j {
        return Ok(Vec::new());
    }
    let a = 0.5 * (p_j / p_i).ln();
    let b = (p_j - p_i) / (-2.0 * p_i * p_j);
    // a and b always have opposite signs, so |a + b·t| dips to zero once and
    // then grows without bound: the loss exceeds eps on a neighborhood of
    // t = 0 (iff |a| > eps) and on a tail t > (|a|+eps)/|b|.
    let abs_a = a.abs();
    let abs_b = b.abs();
    let t_tail = (abs_a + eps) / abs_b;
    let u_tail = t_tail.sqrt();
    let mut intervals = Vec::new();
    if abs_a > eps {
        let u_near = ((abs_a - eps) / abs_b).sqrt();
        intervals.push((f64::NEG_INFINITY, -u_tail));
        intervals.push((-u_near, u_near));
        intervals.push((u_tail, f64::INFINITY));
    } else {
        intervals.push((f64::NEG_INFINITY, -u_tail));
        intervals.push((u_tail, f64::INFINITY));
    }
    Ok(intervals)
}

/// Per-pair outcome of the empirical privacy check.
#[derive(Debug, Clone)]
pub struct PairExceedance {
    pub sensor_i: usize,
    pub sensor_j: usize,
    pub fraction: f64,
}

/// Result of `empirical_privacy_check`.
#[derive(Debug, Clone)]
pub struct PrivacyCheckReport {
    pub pairs: Vec<PairExceedance>,
    pub max_fraction: f64,
    pub samples: usize,
    /// Pass bound: δ + 3·sqrt(δ(1−δ)/samples).
    pub tolerance: f64,
    pub pass: bool,
}

/// Draws `samples` releases from each sensor's density and measures, for
/// every ordered pair (i, j), the fraction whose loss against sensor j's
/// density exceeds ε. Passes when every fraction stays within
/// δ + 3·sqrt(δ(1−δ)/samples).
pub fn empirical_privacy_check(
    covariances: &[Matrix],
    b: &PrivacyBudget,
    samples: usize,
    rng: &RandomSource,
) -> Result<PrivacyCheckReport> {
    if samples < 10_000 {
        return Err(Error::invalid("empirical check needs at least 10^4 samples"));
    }
    let l = covariances.len();
    let n_x = covariances[0].rows();
    for p in covariances {
        let (lo, _) = sym_eig_extremes(p)?;
        if lo <= 0.0 {
            return Err(Error::invalid(
                "empirical check requires positive definite covariances",
            ));
        }
    }
    let sqrts: Vec<Matrix> = covariances
        .iter()
        .map(|p| matrix::sym_sqrt_psd(p, 0.0))
        .collect::<Result<_>>()?;

    let zero = vec![0.0; n_x];
    let mut pairs = Vec::new();
    let mut max_fraction = 0.0_f64;
    for i in 0..l {
        for j in 0..l {
            if i == j {
                continue;
            }
            let mut stream = rng.substream((i * l + j) as u64);
            let mut exceed = 0usize;
            for _ in 0..samples {
                let z = stream.standard_normal_vec(n_x);
                let x_obs = sqrts[i].matvec(&z)?;
                let loss = privacy_loss(&x_obs, &zero, &covariances[i], &covariances[j])?;
                if loss > b.epsilon {
                    exceed += 1;
                }
            }
            let fraction = exceed as f64 / samples as f64;
            max_fraction = max_fraction.max(fraction);
            pairs.push(PairExceedance {
                sensor_i: i,
                sensor_j: j,
                fraction,
            });
        }
    }
    let tolerance =
        b.delta + 3.0 * (b.delta * (1.0 - b.delta) / samples as f64).sqrt();
    Ok(PrivacyCheckReport {
        pass: max_fraction <= tolerance,
        pairs,
        max_fraction,
        samples,
        tolerance,
    })
}

/// Empirical tail probability P(‖x−μ‖² > t²) for x ~ N(μ, P) next to its
/// Chebyshev bound trace(P)/t².
pub fn chebyshev_bound_check(
    p: &Matrix,
    t: f64,
    samples: usize,
    rng: &mut RandomSource,
) -> Result<(f64, f64)> {
    if t <= 0.0 {
        return Err(Error::invalid("t must be positive"));
    }
    let sqrt = matrix::sym_sqrt_psd(p, 1e-10)?;
    let n = p.rows();
    let t2 = t * t;
    let mut exceed = 0usize;
    for _ in 0..samples {
        let z = rng.standard_normal_vec(n);
        let x = sqrt.matvec(&z)?;
        if matrix::vec_norm_sq(&x) > t2 {
            exceed += 1;
        }
    }
    Ok((exceed as f64 / samples as f64, p.trace() / t2))
}
