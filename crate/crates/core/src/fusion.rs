//! Linear minimum-variance fusion of local estimates.
//!
//! Weights come from W = (I_aᵀ·P̄⁻¹·I_a)⁻¹·I_aᵀ·P̄⁻¹ where I_a stacks L
//! identity blocks; every inverse is evaluated through linear solves against
//! the stacked covariance. The same formulas serve the clean and the
//! noise-perturbed ensembles — the perturbed stacked covariance just adds
//! q_a·I to each diagonal block.

use log::warn;

use crate::error::{Error, Result};
use crate::estimator::CovarianceEnsemble;
use crate::matrix::{solve_linear, Matrix};

/// Max-entry tolerance for the weight-sum identity Σ W_i = I.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Per-sensor fusion weight blocks; they always sum to the identity.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    blocks: Vec<Matrix>,
    n_x: usize,
}

impl FusionWeights {
    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_sensors(&self) -> usize {
        self.blocks.len()
    }

    /// The blocks side by side as one n_x × n_x·L matrix.
    pub fn flat(&self) -> Matrix {
        let mut w = Matrix::zeros(self.n_x, self.n_x * self.blocks.len());
        for (i, blk) in self.blocks.iter().enumerate() {
            w.set_block(0, i * self.n_x, blk);
        }
        w
    }

    /// Max-entry deviation of Σ W_i from the identity.
    pub fn sum_identity_residual(&self) -> f64 {
        let mut sum = Matrix::zeros(self.n_x, self.n_x);
        for blk in &self.blocks {
            sum = sum.add(blk).expect("consistent block shapes");
        }
        sum.max_abs_diff(&Matrix::identity(self.n_x))
    }
}

/// Computes the minimum-variance weights for a stacked covariance of L
/// sensors with state dimension n_x.
///
/// A singular stacked covariance (duplicated sensors, or the all-zero
/// degenerate system) gets one shot of diagonal jitter — 1e-10·trace/n, with
/// an absolute floor when the trace itself is zero — before failing.
pub fn fusion_weights(p_stacked: &Matrix, n_x: usize, l: usize) -> Result<FusionWeights> {
    if p_stacked.rows() != n_x * l || !p_stacked.is_square() {
        return Err(Error::invalid(format!(
            "stacked covariance must be {}x{}, got {}x{}",
            n_x * l,
            n_x * l,
            p_stacked.rows(),
            p_stacked.cols()
        )));
    }
    p_stacked.check_symmetric()?;

    let mut identity_stack = Matrix::zeros(n_x * l, n_x);
    for i in 0..l {
        identity_stack.set_block(i * n_x, 0, &Matrix::identity(n_x));
    }

    let solve_weights = |p: &Matrix| -> Result<Matrix> {
        // S = P̄⁻¹·I_a, G = I_aᵀ·S, W = G⁻¹·Sᵀ.
        let s = solve_linear(p, &identity_stack)?;
        let g = identity_stack.transpose().matmul(&s)?.symmetrized();
        solve_linear(&g, &s.transpose())
    };

    let w_flat = match solve_weights(p_stacked) {
        Ok(w) => w,
        Err(Error::SingularMatrix { condition, .. }) => {
            let n = p_stacked.rows();
            let mut jitter = 1e-10 * p_stacked.trace() / n as f64;
            if jitter <= 0.0 {
                jitter = 1e-12;
            }
            warn!(
                "stacked covariance is numerically singular (condition {condition:.3e}); \
                 applying diagonal jitter {jitter:.3e}"
            );
            let jittered = p_stacked.add(&Matrix::identity(n).scale(jitter))?;
            solve_weights(&jittered)?
        }
        Err(e) => return Err(e),
    };

    let blocks: Vec<Matrix> = (0..l).map(|i| w_flat.block(0, i * n_x, n_x, n_x)).collect();
    let weights = FusionWeights { blocks, n_x };
    let residual = weights.sum_identity_residual();
    if residual > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!(
            "fusion weights violate the sum-to-identity constraint (residual {residual:.3e})"
        )));
    }
    Ok(weights)
}

/// Stacked covariance after adding isotropic noise q_a·I to every sensor's
/// estimate: diagonal blocks gain q_a·I, off-diagonal blocks are unchanged
/// because the injected noises are mutually independent.
pub fn perturbed_stacked_cov(ens: &CovarianceEnsemble, q_a: f64) -> Result<Matrix> {
    if q_a < 0.0 {
        return Err(Error::invalid("q_a must be non-negative"));
    }
    let n_x = ens.n_x();
    let l = ens.n_sensors();
    let mut out = ens.stacked.clone();
    for i in 0..l {
        for d in 0..n_x {
            let idx = i * n_x + d;
            out.set(idx, idx, out.get(idx, idx) + q_a);
        }
    }
    Ok(out)
}

/// Weighted sum Σ W_i·x̂_i.
pub fn fuse(w: &FusionWeights, estimates: &[Vec<f64>]) -> Result<Vec<f64>> {
    if estimates.len() != w.n_sensors() {
        return Err(Error::invalid(format!(
            "expected {} estimates, got {}",
            w.n_sensors(),
            estimates.len()
        )));
    }
    let mut out = vec![0.0; w.n_x()];
    for (blk, est) in w.blocks.iter().zip(estimates) {
        let contribution = blk.matvec(est)?;
        for (o, c) in out.iter_mut().zip(&contribution) {
            *o += c;
        }
    }
    Ok(out)
}

/// Fused covariance [W₁ … W_L]·P̄·[W₁ … W_L]ᵀ.
pub fn fused_covariance(w: &FusionWeights, p_stacked: &Matrix) -> Result<Matrix> {
    let flat = w.flat();
    if flat.cols() != p_stacked.rows() {
        return Err(Error::invalid(
            "stacked covariance does not match the weight layout",
        ));
    }
    Ok(flat.matmul(p_stacked)?.matmul(&flat.transpose())?.symmetrized())
}

/// A fused estimate together with its covariance.
#[derive(Debug, Clone)]
pub struct FusedResult {
    pub estimate: Vec<f64>,
    pub covariance: Matrix,
}

impl FusedResult {
    pub fn new(w: &FusionWeights, estimates: &[Vec<f64>], p_stacked: &Matrix) -> Result<Self> {
        Ok(FusedResult {
            estimate: fuse(w, estimates)?,
            covariance: fused_covariance(w, p_stacked)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix;
    use approx::assert_relative_eq;

    fn stacked_scalar(p11: f64, p22: f64, p12: f64) -> Matrix {
        Matrix::from_rows(&[vec![p11, p12], vec![p12, p22]]).unwrap()
    }

    #[test]
    fn identical_independent_blocks_average() {
        // Block-diagonal P̄ with equal blocks: every weight is I/L.
        let p = Matrix::from_rows(&[
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.0],
            vec![0.0, 0.0, 0.0, 0.5],
        ])
        .unwrap();
        let w = fusion_weights(&p, 2, 2).unwrap();
        for blk in w.blocks() {
            assert!(blk.max_abs_diff(&Matrix::identity(2).scale(0.5)) <= 1e-12);
        }
    }

    #[test]
    fn scalar_uncorrelated_weights_are_inverse_variance() {
        let w = fusion_weights(&stacked_scalar(1.0, 2.0, 0.0), 1, 2).unwrap();
        assert_relative_eq!(w.blocks()[0].get(0, 0), 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(w.blocks()[1].get(0, 0), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_correlated_weights_match_closed_form() {
        // W₁ = (P₂₂−P₁₂)/(P₁₁+P₂₂−2P₁₂) = 1.5/2 = 0.75.
        let w = fusion_weights(&stacked_scalar(1.0, 2.0, 0.5), 1, 2).unwrap();
        assert_relative_eq!(w.blocks()[0].get(0, 0), 0.75, epsilon = 1e-12);
        assert_relative_eq!(w.blocks()[1].get(0, 0), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn weight_sum_identity_holds() {
        let w = fusion_weights(&stacked_scalar(0.2435, 0.2587, 0.1521), 1, 2).unwrap();
        assert!(w.sum_identity_residual() <= WEIGHT_SUM_TOL);
    }

    #[test]
    fn singular_stack_gets_jitter_and_degrades_to_averaging() {
        // Two duplicated sensors: P̄ is exactly rank-1; the jittered solve
        // must return the symmetric average.
        let p = stacked_scalar(0.3, 0.3, 0.3);
        let w = fusion_weights(&p, 1, 2).unwrap();
        assert_relative_eq!(w.blocks()[0].get(0, 0), 0.5, epsilon = 1e-6);
        assert_relative_eq!(w.blocks()[1].get(0, 0), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn zero_stack_falls_back_to_equal_weights() {
        let w = fusion_weights(&Matrix::zeros(2, 2), 1, 2).unwrap();
        assert_relative_eq!(w.blocks()[0].get(0, 0), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn perturbed_stack_shifts_only_diagonal_blocks() {
        use crate::estimator::{CovarianceEnsemble, SteadySensorSolution};
        let p11 = Matrix::scalar(0.2435);
        let p22 = Matrix::scalar(0.2587);
        let p12 = Matrix::scalar(0.1521);
        let ens = CovarianceEnsemble {
            per_sensor: vec![
                SteadySensorSolution {
                    p_pred: p11.clone(),
                    gain: Matrix::scalar(0.4),
                    p_est: p11.clone(),
                },
                SteadySensorSolution {
                    p_pred: p22.clone(),
                    gain: Matrix::scalar(0.37),
                    p_est: p22.clone(),
                },
            ],
            cross: vec![
                vec![p11.clone(), p12.clone()],
                vec![p12.clone(), p22.clone()],
            ],
            stacked: stacked_scalar(0.2435, 0.2587, 0.1521),
        };
        let same = perturbed_stacked_cov(&ens, 0.0).unwrap();
        assert_eq!(same, ens.stacked);
        let shifted = perturbed_stacked_cov(&ens, 0.1).unwrap();
        assert_relative_eq!(shifted.get(0, 0), 0.3435, epsilon = 1e-12);
        assert_relative_eq!(shifted.get(1, 1), 0.3587, epsilon = 1e-12);
        assert_relative_eq!(shifted.get(0, 1), 0.1521, epsilon = 1e-12);
        // PSD is preserved under any non-negative diagonal shift.
        let (lo, _) = matrix::sym_eig_extremes(&shifted).unwrap();
        assert!(lo >= 0.0);
    }

    #[test]
    fn fuse_equal_estimates_returns_them() {
        let w = fusion_weights(&stacked_scalar(1.0, 2.0, 0.5), 1, 2).unwrap();
        let v = fuse(&w, &[vec![3.5], vec![3.5]]).unwrap();
        assert_relative_eq!(v[0], 3.5, epsilon = 1e-12);
    }

    #[test]
    fn fuse_weighted_arithmetic() {
        let w = fusion_weights(&stacked_scalar(1.0, 2.0, 0.0), 1, 2).unwrap();
        let v = fuse(&w, &[vec![3.0], vec![0.0]]).unwrap();
        assert_relative_eq!(v[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fusion_is_permutation_consistent() {
        let p = stacked_scalar(1.0, 2.0, 0.5);
        let w = fusion_weights(&p, 1, 2).unwrap();
        let fused = fuse(&w, &[vec![3.0], vec![-1.0]]).unwrap();
        // Swap sensors everywhere and fuse again.
        let p_swapped = stacked_scalar(2.0, 1.0, 0.5);
        let w_swapped = fusion_weights(&p_swapped, 1, 2).unwrap();
        let fused_swapped = fuse(&w_swapped, &[vec![-1.0], vec![3.0]]).unwrap();
        assert_relative_eq!(fused[0], fused_swapped[0], epsilon = 1e-12);
    }

    #[test]
    fn single_sensor_fused_covariance_is_its_block() {
        let p = Matrix::scalar(0.42);
        let w = fusion_weights(&p, 1, 1).unwrap();
        let pf = fused_covariance(&w, &p).unwrap();
        assert_relative_eq!(pf.get(0, 0), 0.42, epsilon = 1e-12);
    }

    #[test]
    fn scalar_uncorrelated_fused_variance_is_harmonic() {
        // (1/P₁ + 1/P₂)⁻¹ = (1 + 1/2)⁻¹ = 2/3.
        let p = stacked_scalar(1.0, 2.0, 0.0);
        let w = fusion_weights(&p, 1, 2).unwrap();
        let pf = fused_covariance(&w, &p).unwrap();
        assert_relative_eq!(pf.get(0, 0), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn oxygen_fused_variance_beats_best_local() {
        let p = stacked_scalar(0.2435, 0.2587, 0.1521);
        let w = fusion_weights(&p, 1, 2).unwrap();
        let pf = fused_covariance(&w, &p).unwrap();
        assert!(pf.trace() <= 0.2435);
    }
}
