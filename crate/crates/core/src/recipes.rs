//! Experiment protocols shared by the command line and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cavi::{self, CaviConfig, TraceLog, VariationalState};
use crate::error::{BpcaError, Result};
use crate::k1::{self, FixedPointReport, RateBoundReport};
use crate::model::{self, DataMatrix, Hyper, SpectralDecomposition};
use crate::stationary::{self, HessianReport};
use crate::stats::{self, LineFit};

/// Errors at or below this level are treated as numerical noise.
pub const NUMERICAL_FLOOR: f64 = 1e-12;
/// Cap on the sweeps run after the CAVI loop stops when chasing the limit.
pub const LIMIT_SWEEPS: usize = 200_000;

/// Rank-one experiment configuration: n = 100, d = 10, τ0 = 100, Λ = 1.
pub fn rank_one_hyper() -> Hyper {
    Hyper { n: 100, d: 10, k: 1, tau0: 100.0, lambda_diag: vec![1.0] }
}

/// A k = 1 run: the CAVI loop followed by extra sweeps until the iterates stop moving.
#[derive(Debug, Clone)]
pub struct K1Trajectory {
    pub mu_z0: DVector<f64>,
    /// Index t holds the iterate after sweep t (t = 0 is the initialization).
    pub mu_z: Vec<DVector<f64>>,
    pub mu_w: Vec<DVector<f64>>,
    pub sigma_z: Vec<f64>,
    pub trace: TraceLog,
    /// Sweep at which the CAVI loop stopped.
    pub algorithm_stop: usize,
    pub limit: VariationalState,
}

impl K1Trajectory {
    pub fn a(&self) -> Vec<f64> {
        self.mu_z.iter().map(|v| v.norm()).collect()
    }
}

fn col(m: &DMatrix<f64>) -> DVector<f64> {
    m.column(0).into_owned()
}

pub fn k1_trajectory(data: &DataMatrix, hyper: &Hyper, config: &CaviConfig) -> Result<K1Trajectory> {
    hyper.check_k1()?;
    let init = cavi::initial_state(data, hyper, config)?;
    let mu_z0 = col(init.mu_z());
    let mut mu_z = Vec::new();
    let mut mu_w = Vec::new();
    let mut sigma_z = Vec::new();
    let (state, trace) = cavi::run_cavi_observed(data, hyper, config, init, |_, s| {
        mu_z.push(col(s.mu_z()));
        mu_w.push(col(s.mu_w()));
        sigma_z.push(s.sigma_z()[(0, 0)]);
    })?;
    let algorithm_stop = trace.records.len();
    let (limit, _) = cavi::run_to_limit_observed(&state, data, hyper, LIMIT_SWEEPS, |_, s| {
        mu_z.push(col(s.mu_z()));
        mu_w.push(col(s.mu_w()));
        sigma_z.push(s.sigma_z()[(0, 0)]);
    })?;
    Ok(K1Trajectory { mu_z0, mu_z, mu_w, sigma_z, trace, algorithm_stop, limit })
}

/// Directional errors against the rate bounds for t ≥ 1.
pub fn figure1(spec: &SpectralDecomposition, traj: &K1Trajectory, hyper: &Hyper) -> Result<RateBoundReport> {
    let mut report = k1::rate_bound_report(spec, &traj.mu_z0, hyper)?;
    let snaps: Vec<(usize, DVector<f64>, DVector<f64>)> = (1..traj.mu_z.len())
        .map(|t| (t, traj.mu_z[t].clone(), traj.mu_w[t].clone()))
        .collect();
    k1::attach_observed(&mut report, spec, &snaps);
    Ok(report)
}

/// True when every observed error from t = 2 on is under its bound or at the numerical floor.
pub fn figure1_bounds_hold(report: &RateBoundReport) -> bool {
    report
        .observed
        .iter()
        .filter(|p| p.t >= 2)
        .all(|p| (p.err_z <= p.bound_z || p.err_z <= NUMERICAL_FLOOR) && (p.err_w <= p.bound_w || p.err_w <= NUMERICAL_FLOOR))
}

/// Log-linear fits of the z and w directional errors over t ≥ 2 above the floor.
pub fn figure1_slopes(report: &RateBoundReport) -> (Option<LineFit>, Option<LineFit>) {
    let pts: Vec<_> = report.observed.iter().filter(|p| p.t >= 2).collect();
    let ts: Vec<f64> = pts.iter().map(|p| p.t as f64).collect();
    let ez: Vec<f64> = pts.iter().map(|p| p.err_z).collect();
    let ew: Vec<f64> = pts.iter().map(|p| p.err_w).collect();
    (stats::log_decay_fit(&ts, &ez, NUMERICAL_FLOOR), stats::log_decay_fit(&ts, &ew, NUMERICAL_FLOOR))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingErrorPoint {
    pub t: usize,
    pub err_a: f64,
    pub err_b: f64,
}

/// |a⁽ᵗ⁾ − a*| and |b⁽ᵗ⁾ − b*| for t ≥ 1.
pub fn figure2(traj: &K1Trajectory, a_star: f64, b_star: f64) -> Vec<ScalingErrorPoint> {
    (1..traj.mu_z.len())
        .map(|t| ScalingErrorPoint {
            t,
            err_a: (traj.mu_z[t].norm() - a_star).abs(),
            err_b: (traj.sigma_z[t] - b_star).abs(),
        })
        .collect()
}

/// Floor scaled to the magnitude of the target value.
pub fn relative_floor(target: f64) -> f64 {
    NUMERICAL_FLOOR * target.abs().max(1.0)
}

pub fn figure2_fits(series: &[ScalingErrorPoint], a_star: f64, b_star: f64) -> (Option<LineFit>, Option<LineFit>) {
    let ts: Vec<f64> = series.iter().map(|p| p.t as f64).collect();
    let ea: Vec<f64> = series.iter().map(|p| p.err_a).collect();
    let eb: Vec<f64> = series.iter().map(|p| p.err_b).collect();
    (
        stats::log_decay_fit(&ts, &ea, relative_floor(a_star)),
        stats::log_decay_fit(&ts, &eb, relative_floor(b_star)),
    )
}

/// The single verified fixed point, or the one with the larger ELBO when there are two.
pub fn chosen_fixed_point(
    lambda1: f64,
    spec: &SpectralDecomposition,
    data: &DataMatrix,
    hyper: &Hyper,
) -> Result<(FixedPointReport, usize)> {
    let mut report = k1::solve_fixed_points(lambda1, hyper)?;
    k1::attach_elbos(&mut report, spec, data, hyper)?;
    let best = report
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.verified)
        .max_by(|(_, x), (_, y)| x.elbo.unwrap_or(f64::NEG_INFINITY).total_cmp(&y.elbo.unwrap_or(f64::NEG_INFINITY)))
        .map(|(i, _)| i)
        .ok_or_else(|| BpcaError::Precondition(format!("no verified fixed point: {}", report.status)))?;
    Ok((report, best))
}

/// Stationary-point fixture: n = 4, d = 3, τ0 = 100, W0 all ones, initial entries 0.1.
pub fn small_fixture(lambda_diag: Vec<f64>, seed: u64) -> Result<(DataMatrix, Hyper)> {
    let k = lambda_diag.len();
    let hyper = Hyper::new(4, 3, k, 100.0, lambda_diag)?;
    let (data, _) = model::sample_dataset(&hyper, &model::default_w0(3, k), seed)?;
    Ok((data, hyper))
}

#[derive(Debug, Clone)]
pub struct RefinedPoint {
    pub cavi_state: VariationalState,
    pub cavi_grad: f64,
    pub state: VariationalState,
    pub hessian: HessianReport,
    pub newton_iterations: usize,
}

/// CAVI with the default start followed by Newton refinement to `tol`.
pub fn refine_stationary(data: &DataMatrix, hyper: &Hyper, config: &CaviConfig, tol: f64) -> Result<RefinedPoint> {
    let (cavi_state, _) = cavi::run_cavi(data, hyper, config)?;
    let cavi_grad = stationary::psi_gradient(&stationary::FlatParams::pack(&cavi_state), data, hyper)?.amax();
    let (state, hessian, trace) = stationary::newton_refine_traced(&cavi_state, data, hyper, tol, 100)?;
    if hessian.grad_norm_at_point > tol {
        return Err(BpcaError::Stalled(format!(
            "Newton refinement at gradient {:e} after {} iterations",
            hessian.grad_norm_at_point, trace.iterations
        )));
    }
    Ok(RefinedPoint { cavi_state, cavi_grad, state, hessian, newton_iterations: trace.iterations })
}

/// max_{|α| ≤ alpha_max} |Ψ0(θ + α v) − Ψ0(θ)| over a uniform grid of `steps` values per side.
pub fn flat_direction_variation(
    state: &VariationalState,
    direction: &[f64],
    data: &DataMatrix,
    hyper: &Hyper,
    alpha_max: f64,
    steps: usize,
) -> Result<f64> {
    let theta = stationary::FlatParams::pack(state);
    let base = stationary::psi_at(&theta, data, hyper)?;
    let v = DVector::from_column_slice(direction);
    let mut worst = 0.0_f64;
    for i in 1..=steps {
        for sign in [-1.0, 1.0] {
            let alpha = sign * alpha_max * i as f64 / steps as f64;
            let p = stationary::FlatParams { theta: &theta.theta + &v * alpha, layout: theta.layout };
            worst = worst.max((stationary::psi_at(&p, data, hyper)? - base).abs());
        }
    }
    Ok(worst)
}
