//! KL machinery for matrix normals, the Δ functional and the correlation condition.

pub mod inequalities;
pub mod suites;

use std::f64::consts::E;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cavi::{self, MatrixNormal, VariationalState};
use crate::error::{BpcaError, Result};
use crate::linalg;
use crate::model::{self, DataMatrix, Hyper};

/// (1 + e⁻¹)/4.
pub fn gamma0() -> f64 {
    (1.0 + (-1.0f64).exp()) / 4.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub gamma_w: DMatrix<f64>,
    pub gamma_z: DMatrix<f64>,
}

impl MomentSummary {
    pub fn of(state: &VariationalState, hyper: &Hyper) -> Self {
        MomentSummary { gamma_w: cavi::gamma_w(state, hyper.d), gamma_z: cavi::gamma_z(state, hyper.n) }
    }
}

fn check_pair(q: &MatrixNormal, q_star: &MatrixNormal) -> Result<()> {
    if q.mean.shape() != q_star.mean.shape() {
        return Err(BpcaError::Dimension(format!(
            "matrix normals have means {:?} and {:?}",
            q.mean.shape(),
            q_star.mean.shape()
        )));
    }
    Ok(())
}

/// KL(q ‖ q*) = ½[r(tr(Σ*⁻¹Σ) − k − logdet(Σ*⁻¹Σ)) + tr((μ−μ*)Σ*⁻¹(μ−μ*)')].
pub fn kl_matrix_normal(q: &MatrixNormal, q_star: &MatrixNormal) -> Result<f64> {
    check_pair(q, q_star)?;
    let (r, k) = (q.rows() as f64, q.k() as f64);
    let star_inv = linalg::spd_inverse(&q_star.row_cov)?;
    let logdet = linalg::spd_logdet(&q.row_cov)? - linalg::spd_logdet(&q_star.row_cov)?;
    // Nonnegative exactly; clamp rounding below zero.
    let cov_term = (r * (linalg::trace_prod(&star_inv, &q.row_cov) - k - logdet)).max(0.0);
    let diff = &q.mean - &q_star.mean;
    let mean_term = (&diff * &star_inv).component_mul(&diff).sum();
    Ok(0.5 * (cov_term + mean_term))
}

pub fn sym_kl(q: &MatrixNormal, q_star: &MatrixNormal) -> Result<f64> {
    Ok(0.5 * (kl_matrix_normal(q, q_star)? + kl_matrix_normal(q_star, q)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlLowerBound {
    pub value: f64,
    /// KL(q* ‖ q), the ball-membership statistic.
    pub kl_star_to_q: f64,
    pub in_ball: bool,
}

/// Lower bound on the symmetric KL for q within KL(q*‖q) ≤ r0; rows r of the block enter the constants.
pub fn kl_lower_bound(q: &MatrixNormal, q_star: &MatrixNormal, r0: f64) -> Result<KlLowerBound> {
    check_pair(q, q_star)?;
    if !(r0 > 0.0) {
        return Err(BpcaError::Precondition("r0 must be positive".into()));
    }
    let r = q.rows() as f64;
    let expo = (1.0 + 2.0 * r0 / r).exp();
    let c2 = 0.25 * (1.0 + 1.0 / expo);
    let c3 = 0.5;
    let star_norm = q_star.row_cov.norm();
    let dcov = (&q.row_cov - &q_star.row_cov).norm_squared();
    let dmean = (&q.mean - &q_star.mean).norm_squared();
    let value = r * c3 / (star_norm * star_norm * expo) * dcov + c2 / star_norm * dmean;
    let kl_star_to_q = kl_matrix_normal(q_star, q)?;
    Ok(KlLowerBound { value, kl_star_to_q, in_ball: kl_star_to_q <= r0 })
}

/// Box implied by KL(q*‖q) ≤ r0: (‖Σ‖_op ceiling, ‖μ−μ*‖² ceiling).
pub fn ball_inclusion_bounds(q_star: &MatrixNormal, r0: f64) -> (f64, f64) {
    let r = q_star.rows() as f64;
    let expo = (1.0 + 2.0 * r0 / r).exp();
    let star_op = linalg::sym_max_eig(&q_star.row_cov);
    (q_star.row_cov.norm() * expo, 2.0 * r0 * expo * star_op)
}

/// √(2r e^{1+2r/rows}); `rows` = d gives G1, `rows` = n gives G2.
pub fn ball_radius_factor(r: f64, rows: usize) -> f64 {
    (2.0 * r * (1.0 + 2.0 * r / rows as f64).exp()).sqrt()
}

fn check_states(state: &VariationalState, star: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<()> {
    state.check_hyper(hyper)?;
    star.check_hyper(hyper)?;
    data.check_hyper(hyper)
}

/// τ0 tr((μ_W−μ_W*)(μ_Z−μ_Z*)'X) − (τ0/2) tr((Γ_W−Γ_W*)(Γ_Z−Γ_Z*)).
pub fn delta_exact(state: &VariationalState, star: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<f64> {
    check_states(state, star, data, hyper)?;
    let dmw = state.mu_w() - star.mu_w();
    let dmz = state.mu_z() - star.mu_z();
    let m = MomentSummary::of(state, hyper);
    let ms = MomentSummary::of(star, hyper);
    let fit = (&data.x * &dmw).component_mul(&dmz).sum();
    let quad = linalg::trace_prod(&(&m.gamma_w - &ms.gamma_w), &(&m.gamma_z - &ms.gamma_z).transpose());
    Ok(hyper.tau0 * fit - 0.5 * hyper.tau0 * quad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Signed four-measure estimate of Δ. Each sample draws (ξ_W, ξ_Z) once and pushes them through
/// both W-blocks and both Z-blocks, so the four evaluations share randomness.
pub fn delta_monte_carlo(
    state: &VariationalState,
    star: &VariationalState,
    data: &DataMatrix,
    hyper: &Hyper,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_states(state, star, data, hyper)?;
    if n_samples < 2 {
        return Err(BpcaError::Precondition("need at least two samples".into()));
    }
    let lw = linalg::cholesky_factor(state.sigma_w())?.transpose();
    let lw_s = linalg::cholesky_factor(star.sigma_w())?.transpose();
    let lz = linalg::cholesky_factor(state.sigma_z())?.transpose();
    let lz_s = linalg::cholesky_factor(star.sigma_z())?.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let xi_w = standard_normal(&mut rng, hyper.d, hyper.k);
        let xi_z = standard_normal(&mut rng, hyper.n, hyper.k);
        let w = state.mu_w() + &xi_w * &lw;
        let w_s = star.mu_w() + &xi_w * &lw_s;
        let z = state.mu_z() + &xi_z * &lz;
        let z_s = star.mu_z() + &xi_z * &lz_s;
        let f = model::log_posterior_raw(&w, &z, &data.x, hyper)?
            - model::log_posterior_raw(&w_s, &z, &data.x, hyper)?
            - model::log_posterior_raw(&w, &z_s, &data.x, hyper)?
            + model::log_posterior_raw(&w_s, &z_s, &data.x, hyper)?;
        if !f.is_finite() {
            return Err(BpcaError::NonFinite("log posterior sample".into()));
        }
        sum += f;
        sum_sq += f * f;
    }
    let m = n_samples as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(MonteCarloEstimate { estimate: mean, std_err: (var / m).sqrt(), n_samples })
}

/// Upper bound on |Δ| from Frobenius distances between the two states.
pub fn delta_upper_bound(state: &VariationalState, star: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<f64> {
    check_states(state, star, data, hyper)?;
    let (n, d, tau0) = (hyper.n as f64, hyper.d as f64, hyper.tau0);
    let a1 = (state.mu_z() - star.mu_z()).norm();
    let a2 = (state.mu_w() - star.mu_w()).norm();
    let b1 = (state.sigma_z() - star.sigma_z()).norm();
    let b2 = (state.sigma_w() - star.sigma_w()).norm();
    let c1 = state.mu_z().norm() + star.mu_z().norm();
    let c2 = state.mu_w().norm() + star.mu_w().norm();
    Ok((tau0 * data.x.norm() + c1 * c2 * tau0 / 2.0) * a1 * a2
        + (n * d * tau0 * b1 * b2 + d * c1 * tau0 * b2 * a1 + n * c2 * tau0 * a2 * b1) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GCorrReport {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub term4: f64,
    pub gamma0: f64,
    /// One-based index of the largest term and its value.
    pub max_term: (usize, f64),
    pub satisfied: bool,
    pub r0_note: String,
}

pub fn gcorr_condition(star: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<GCorrReport> {
    star.check_hyper(hyper)?;
    data.check_hyper(hyper)?;
    let (n, d, tau0) = (hyper.n as f64, hyper.d as f64, hyper.tau0);
    let g0 = gamma0();
    let sw = star.sigma_w().norm();
    let sz = star.sigma_z().norm();
    let mw = star.mu_w().norm();
    let mz = star.mu_z().norm();
    let x = data.x.norm();
    let terms = [
        tau0 * (sw * sz).sqrt() * (x + 2.0 * mw * mz) / g0,
        E * tau0 * sw * sz * (n * d).sqrt(),
        tau0 * sw * sz.sqrt() * (2.0 * d * E).sqrt() * mz / g0.sqrt(),
        tau0 * sw.sqrt() * sz * (2.0 * n * E).sqrt() * mw / g0.sqrt(),
    ];
    let (idx, val) = terms
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    Ok(GCorrReport {
        term1: terms[0],
        term2: terms[1],
        term3: terms[2],
        term4: terms[3],
        gamma0: g0,
        max_term: (idx + 1, val),
        satisfied: val < 1.0,
        r0_note: "limit form r0 -> 0 of the sufficient condition".into(),
    })
}
