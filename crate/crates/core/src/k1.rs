//! Rank-one dynamics: the maps F, G and Φ, power iteration, direction-error bounds and fixed points.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::cavi::{self, VariationalState};
use crate::error::{BpcaError, Result};
use crate::model::{DataMatrix, Hyper, SpectralDecomposition};

/// Relative tolerance for accepting a fixed point of Φ.
pub const FP_TOL: f64 = 1e-8;
/// Coefficients c_j below `C_TOL · ‖μ_Z⁽⁰⁾‖` count as zero.
pub const C_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    pub a: f64,
    pub b: f64,
}

impl ScalingState {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(BpcaError::Precondition(format!("scaling state needs a >= 0, b > 0, got ({a}, {b})")));
        }
        Ok(ScalingState { a, b })
    }
}

fn check_vec(v: &DVector<f64>, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(BpcaError::Dimension(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

/// F(μ_Z, Σ_Z) = (τ0X'μ_Z / D, 1/D), D = τ0(nΣ_Z + ‖μ_Z‖²) + Λ.
pub fn map_f(mu_z: &DVector<f64>, sigma_z: f64, data: &DataMatrix, hyper: &Hyper) -> Result<(DVector<f64>, f64)> {
    hyper.check_k1()?;
    data.check_hyper(hyper)?;
    check_vec(mu_z, hyper.n, "mu_z")?;
    let denom = hyper.tau0 * (hyper.n as f64 * sigma_z + mu_z.norm_squared()) + hyper.lambda_scalar();
    Ok((data.x.transpose() * mu_z * (hyper.tau0 / denom), 1.0 / denom))
}

/// G(μ_W, Σ_W) = (τ0Xμ_W / D, 1/D), D = τ0(dΣ_W + ‖μ_W‖²) + 1.
pub fn map_g(mu_w: &DVector<f64>, sigma_w: f64, data: &DataMatrix, hyper: &Hyper) -> Result<(DVector<f64>, f64)> {
    hyper.check_k1()?;
    data.check_hyper(hyper)?;
    check_vec(mu_w, hyper.d, "mu_w")?;
    let denom = hyper.tau0 * (hyper.d as f64 * sigma_w + mu_w.norm_squared()) + 1.0;
    Ok((&data.x * mu_w * (hyper.tau0 / denom), 1.0 / denom))
}

/// Aᵗv0/‖Aᵗv0‖ by repeated multiply-and-normalize.
pub fn power_iterate(a: &DMatrix<f64>, v0: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
    Ok(power_sequence(a, v0, t)?.pop().expect("sequence holds t + 1 vectors"))
}

/// Normalized iterates for 0..=t_max.
pub fn power_sequence(a: &DMatrix<f64>, v0: &DVector<f64>, t_max: usize) -> Result<Vec<DVector<f64>>> {
    if !a.is_square() || a.nrows() != v0.len() {
        return Err(BpcaError::Dimension("power iteration operands".into()));
    }
    let norm = v0.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(BpcaError::Precondition("v0 must be nonzero".into()));
    }
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(v0 / norm);
    for step in 1..=t_max {
        let w = a * out.last().expect("nonempty");
        let wn = w.norm();
        if wn == 0.0 || !wn.is_finite() {
            return Err(BpcaError::Precondition(format!("A^t v0 vanished at step {step}")));
        }
        out.push(w / wn);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionErrorPoint {
    pub t: usize,
    pub err_z: f64,
    pub err_w: f64,
    pub bound_z: f64,
    pub bound_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBoundReport {
    /// One-based index of the first nonzero c_j.
    pub i_star: usize,
    pub coeffs: Vec<f64>,
    pub rate: f64,
    pub c0: f64,
    pub c0_prime: f64,
    pub sign: f64,
    pub reliable: bool,
    pub observed: Vec<DirectionErrorPoint>,
}

impl RateBoundReport {
    pub fn bound_z(&self, t: usize) -> f64 {
        self.c0 * self.rate.powi(t as i32)
    }

    pub fn bound_w(&self, t: usize) -> f64 {
        self.c0_prime * self.rate.powi(t as i32)
    }
}

/// Constants of the directional rate bound for a given initialization.
pub fn rate_bound_report(spec: &SpectralDecomposition, mu_z0: &DVector<f64>, hyper: &Hyper) -> Result<RateBoundReport> {
    hyper.check_k1()?;
    let d = spec.d();
    check_vec(mu_z0, spec.eigvecs_left.nrows(), "mu_z0")?;
    let coeffs: Vec<f64> = (0..d).map(|j| spec.eigvecs_left.column(j).dot(mu_z0)).collect();
    let tol = C_TOL * mu_z0.norm();
    let i0 = coeffs
        .iter()
        .position(|c| c.abs() > tol)
        .ok_or_else(|| BpcaError::Precondition("initialization orthogonal to the range of X".into()))?;
    if i0 + 1 >= d {
        return Err(BpcaError::Precondition(format!(
            "first nonzero coefficient has index {} >= d = {d}; the rate bound does not apply",
            i0 + 1
        )));
    }
    let rate = spec.eigvals[i0 + 1] / spec.eigvals[i0];
    let cmax = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let c0 = 2.0 * d as f64 * cmax / coeffs[i0].abs();
    let c0_prime = c0 * hyper.tau0 * spec.lambda1().sqrt() / hyper.lambda_scalar();
    Ok(RateBoundReport {
        i_star: i0 + 1,
        sign: coeffs[i0].signum(),
        coeffs,
        rate,
        c0,
        c0_prime,
        reliable: spec.distinct,
        observed: Vec::new(),
    })
}

pub fn direction_error_bound(
    spec: &SpectralDecomposition,
    mu_z0: &DVector<f64>,
    t: usize,
    hyper: &Hyper,
) -> Result<(f64, f64, RateBoundReport)> {
    if t < 2 {
        return Err(BpcaError::Precondition("rate bound holds for t >= 2".into()));
    }
    let report = rate_bound_report(spec, mu_z0, hyper)?;
    Ok((report.bound_z(t), report.bound_w(t), report))
}

/// Direction targets sgn(c_i)μ_i and sgn(c_i)X'μ_i/‖X'μ_i‖.
pub fn direction_targets(spec: &SpectralDecomposition, report: &RateBoundReport) -> (DVector<f64>, DVector<f64>) {
    let i = report.i_star - 1;
    (
        spec.eigvecs_left.column(i) * report.sign,
        spec.eigvecs_right.column(i) * report.sign,
    )
}

/// Distance from the normalized vector to the target.
pub fn direction_error(v: &DVector<f64>, target: &DVector<f64>) -> f64 {
    (v / v.norm() - target).norm()
}

/// Fills `report.observed` from (t, μ_Z⁽ᵗ⁾, μ_W⁽ᵗ⁾) snapshots.
pub fn attach_observed(
    report: &mut RateBoundReport,
    spec: &SpectralDecomposition,
    snapshots: &[(usize, DVector<f64>, DVector<f64>)],
) {
    let (tz, tw) = direction_targets(spec, report);
    report.observed = snapshots
        .iter()
        .map(|(t, mz, mw)| DirectionErrorPoint {
            t: *t,
            err_z: direction_error(mz, &tz),
            err_w: direction_error(mw, &tw),
            bound_z: report.bound_z(*t),
            bound_w: report.bound_w(*t),
        })
        .collect();
}

/// L(a, b) = τ0(nb + a²) + Λ.
fn ell(s: ScalingState, hyper: &Hyper) -> f64 {
    hyper.tau0 * (hyper.n as f64 * s.b + s.a * s.a) + hyper.lambda_scalar()
}

pub fn map_phi(s: ScalingState, lambda1: f64, hyper: &Hyper) -> Result<ScalingState> {
    hyper.check_k1()?;
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(BpcaError::Precondition("lambda1 must be positive".into()));
    }
    Ok(phi_raw(s, lambda1, hyper))
}

fn phi_raw(s: ScalingState, lambda1: f64, hyper: &Hyper) -> ScalingState {
    let tau0 = hyper.tau0;
    let l = ell(s, hyper);
    let den = hyper.d as f64 * tau0 * l + tau0.powi(3) * s.a * s.a * lambda1 + l * l;
    ScalingState { a: tau0 * tau0 * s.a * l * lambda1 / den, b: l * l / den }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub matrix: [[f64; 2]; 2],
    pub eig_magnitudes: [f64; 2],
    pub complex: bool,
}

fn phi_vec(a: f64, b: f64, lambda1: f64, hyper: &Hyper) -> [f64; 2] {
    let p = phi_raw(ScalingState { a, b }, lambda1, hyper);
    [p.a, p.b]
}

fn fd_jacobian(s: ScalingState, lambda1: f64, hyper: &Hyper, stencil4: bool) -> Matrix2<f64> {
    let mut j = Matrix2::zeros();
    let coords = [s.a, s.b];
    for col in 0..2 {
        let h = 1e-6 * coords[col].abs().max(1.0);
        let at = |delta: f64| {
            let mut c = coords;
            c[col] += delta;
            phi_vec(c[0], c[1], lambda1, hyper)
        };
        for row in 0..2 {
            j[(row, col)] = if stencil4 {
                (-at(2.0 * h)[row] + 8.0 * at(h)[row] - 8.0 * at(-h)[row] + at(-2.0 * h)[row]) / (12.0 * h)
            } else {
                (at(h)[row] - at(-h)[row]) / (2.0 * h)
            };
        }
    }
    j
}

fn eig2_magnitudes(j: &Matrix2<f64>) -> ([f64; 2], bool) {
    let tr = j.trace();
    let det = j.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        let mut m = [(tr / 2.0 + r).abs(), (tr / 2.0 - r).abs()];
        m.sort_by(|x, y| y.total_cmp(x));
        (m, false)
    } else {
        let m = det.abs().sqrt();
        ([m, m], true)
    }
}

fn jacobian_report(j: Matrix2<f64>) -> Result<JacobianReport> {
    if j.iter().any(|v| !v.is_finite()) {
        return Err(BpcaError::NonFinite("Jacobian of Phi".into()));
    }
    let (eig_magnitudes, complex) = eig2_magnitudes(&j);
    Ok(JacobianReport { matrix: [[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]], eig_magnitudes, complex })
}

/// Central-difference Jacobian of Φ with h = 1e-6·max(1, |coord|).
pub fn jacobian_phi(s: ScalingState, lambda1: f64, hyper: &Hyper) -> Result<JacobianReport> {
    hyper.check_k1()?;
    if !(s.a > 0.0 && s.b > 0.0) {
        return Err(BpcaError::Precondition("Jacobian requires a > 0 and b > 0".into()));
    }
    jacobian_report(fd_jacobian(s, lambda1, hyper, false))
}

/// Five-point-stencil variant used as a cross-check.
pub fn jacobian_phi_richer(s: ScalingState, lambda1: f64, hyper: &Hyper) -> Result<JacobianReport> {
    hyper.check_k1()?;
    jacobian_report(fd_jacobian(s, lambda1, hyper, true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCandidate {
    pub u: f64,
    pub a: f64,
    pub b: f64,
    pub verified: bool,
    pub residual: f64,
    pub jacobian: Option<JacobianReport>,
    pub elbo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaBeta {
    Real { alpha: f64, beta: f64 },
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub lambda1: f64,
    /// (c2, c1, c0) of P(u) = c2u² + c1u + c0.
    pub poly_coeffs: [f64; 3],
    pub positive_roots_u: Vec<f64>,
    pub candidates: Vec<FixedPointCandidate>,
    pub alpha_beta: AlphaBeta,
    pub status: String,
    pub diagnostics: Vec<String>,
}

impl FixedPointReport {
    pub fn verified(&self) -> impl Iterator<Item = &FixedPointCandidate> {
        self.candidates.iter().filter(|c| c.verified)
    }
}

pub fn poly_coeffs(lambda1: f64, hyper: &Hyper) -> [f64; 3] {
    let (tau0, lam, n, d) = (hyper.tau0, hyper.lambda_scalar(), hyper.n as f64, hyper.d as f64);
    let p = lambda1 * tau0 - n;
    let q = d - lambda1 * tau0;
    [
        lambda1 * tau0 * tau0,
        tau0 * (2.0 * lambda1 * lam + q * p + p * p),
        lambda1 * lam * lam + q * p * lam,
    ]
}

/// Real roots of c2x² + c1x + c0 by the cancellation-free form.
pub fn quadratic_roots(c2: f64, c1: f64, c0: f64) -> Option<(f64, f64)> {
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 || !disc.is_finite() {
        return None;
    }
    if c1 == 0.0 && c0 == 0.0 {
        return Some((0.0, 0.0));
    }
    let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 {
        let r = (-c0 / c2).sqrt();
        (-r, r)
    } else {
        (q / c2, c0 / q)
    };
    Some(if r1 <= r2 { (r1, r2) } else { (r2, r1) })
}

pub fn alpha_beta(hyper: &Hyper) -> AlphaBeta {
    let (tau0, lam, n, d) = (hyper.tau0, hyper.lambda_scalar(), hyper.n as f64, hyper.d as f64);
    match quadratic_roots(tau0 * tau0, -(lam + (d + n) * tau0), d * n) {
        Some((alpha, beta)) => AlphaBeta::Real { alpha, beta },
        None => AlphaBeta::Complex,
    }
}

pub fn solve_fixed_points(lambda1: f64, hyper: &Hyper) -> Result<FixedPointReport> {
    hyper.check_k1()?;
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(BpcaError::Precondition("lambda1 must be positive".into()));
    }
    let (tau0, lam, n) = (hyper.tau0, hyper.lambda_scalar(), hyper.n as f64);
    let coeffs = poly_coeffs(lambda1, hyper);
    let mut positive = Vec::new();
    if let Some((r1, r2)) = quadratic_roots(coeffs[0], coeffs[1], coeffs[2]) {
        for r in [r1, r2] {
            if r > 0.0 && !positive.contains(&r) {
                positive.push(r);
            }
        }
    }
    let mut diagnostics = Vec::new();
    let mut candidates = Vec::new();
    let b_den = tau0 * tau0 * lambda1 - n * tau0;
    for &u in &positive {
        if b_den == 0.0 {
            diagnostics.push(format!("root u = {u:e} rejected: tau0^2 lambda1 - n tau0 = 0"));
            continue;
        }
        let a = u.sqrt();
        let b = (lam + tau0 * u) / b_den;
        if !(b > 0.0) {
            diagnostics.push(format!("root u = {u:e} rejected: b* = {b:e} is not positive"));
            continue;
        }
        let s = ScalingState { a, b };
        let img = phi_raw(s, lambda1, hyper);
        let residual = ((img.a - a).abs() / a).max((img.b - b).abs() / b);
        let jacobian = jacobian_phi(s, lambda1, hyper).ok();
        candidates.push(FixedPointCandidate { u, a, b, verified: residual <= FP_TOL, residual, jacobian, elbo: None });
    }
    let status = if candidates.is_empty() {
        "no fixed point; CAVI does not converge".to_string()
    } else {
        format!("{} candidate(s)", candidates.len())
    };
    Ok(FixedPointReport {
        lambda1,
        poly_coeffs: coeffs,
        positive_roots_u: positive,
        candidates,
        alpha_beta: alpha_beta(hyper),
        status,
        diagnostics,
    })
}

/// State with μ_Z = aμ1, Σ_Z = b and q_W = F(μ_Z, Σ_Z).
pub fn state_at(a: f64, b: f64, spec: &SpectralDecomposition, data: &DataMatrix, hyper: &Hyper) -> Result<VariationalState> {
    let mu_z = spec.mu(0) * a;
    let (mu_w, sigma_w) = map_f(&mu_z, b, data, hyper)?;
    VariationalState::new(
        DMatrix::from_column_slice(hyper.d, 1, mu_w.as_slice()),
        DMatrix::from_element(1, 1, sigma_w),
        DMatrix::from_column_slice(hyper.n, 1, mu_z.as_slice()),
        DMatrix::from_element(1, 1, b),
    )
}

/// Records elbo_0 of each candidate so the caller can pick the better one.
pub fn attach_elbos(report: &mut FixedPointReport, spec: &SpectralDecomposition, data: &DataMatrix, hyper: &Hyper) -> Result<()> {
    for c in &mut report.candidates {
        c.elbo = Some(cavi::elbo_0(&state_at(c.a, c.b, spec, data, hyper)?, data, hyper)?);
    }
    Ok(())
}

/// Orbit of Φ from `s`, including `s`.
pub fn phi_orbit(s: ScalingState, lambda1: f64, hyper: &Hyper, steps: usize) -> Result<Vec<ScalingState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for _ in 0..steps {
        out.push(map_phi(*out.last().expect("nonempty"), lambda1, hyper)?);
    }
    Ok(out)
}
