//! The loss Ψ0, its gradient and Hessian, Newton refinement and rotations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cavi::{MatrixNormal, VariationalState};
use crate::error::{BpcaError, Result};
use crate::linalg;
use crate::model::{DataMatrix, Hyper};

/// Ratio min|eig| / max|eig| below which the Hessian is flagged singular.
pub const SING_TOL: f64 = 1e-8;
pub const MAX_HALVINGS: usize = 60;

/// Coordinates: μ_W (row-major), upper triangle of Σ_W, μ_Z (row-major), upper triangle of Σ_Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

impl Layout {
    pub fn of(hyper: &Hyper) -> Self {
        Layout { n: hyper.n, d: hyper.d, k: hyper.k }
    }

    pub fn tri(&self) -> usize {
        self.k * (self.k + 1) / 2
    }

    pub fn len(&self) -> usize {
        (self.n + self.d) * self.k + 2 * self.tri()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.d * self.k;
        let b = a + self.tri();
        let c = b + self.n * self.k;
        [0, a, b, c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub theta: DVector<f64>,
    pub layout: Layout,
}

fn push_rows(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
}

fn push_upper(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn read_upper(vals: &[f64], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut p = 0;
    for i in 0..k {
        for j in i..k {
            m[(i, j)] = vals[p];
            m[(j, i)] = vals[p];
            p += 1;
        }
    }
    m
}

/// Symmetric-matrix gradient to upper-triangle coordinates: off-diagonals count twice.
fn push_upper_grad(out: &mut Vec<f64>, g: &DMatrix<f64>) {
    for i in 0..g.nrows() {
        for j in i..g.ncols() {
            out.push(if i == j { g[(i, i)] } else { g[(i, j)] + g[(j, i)] });
        }
    }
}

impl FlatParams {
    pub fn pack(state: &VariationalState) -> Self {
        let layout = Layout { n: state.q_z.rows(), d: state.q_w.rows(), k: state.k() };
        let mut v = Vec::with_capacity(layout.len());
        push_rows(&mut v, state.mu_w());
        push_upper(&mut v, state.sigma_w());
        push_rows(&mut v, state.mu_z());
        push_upper(&mut v, state.sigma_z());
        FlatParams { theta: DVector::from_vec(v), layout }
    }

    /// Rebuilds the state; fails when a covariance is not positive definite.
    pub fn unpack(&self) -> Result<VariationalState> {
        let Layout { n, d, k } = self.layout;
        if self.theta.len() != self.layout.len() {
            return Err(BpcaError::Dimension(format!(
                "theta has {} entries, layout needs {}",
                self.theta.len(),
                self.layout.len()
            )));
        }
        let t = self.theta.as_slice();
        let [o1, o2, o3, o4] = self.layout.offsets();
        VariationalState::new(
            DMatrix::from_row_slice(d, k, &t[o1..o2]),
            read_upper(&t[o2..o3], k),
            DMatrix::from_row_slice(n, k, &t[o3..o4]),
            read_upper(&t[o4..], k),
        )
    }
}

fn tr_lambda(lambda: &[f64], m: &DMatrix<f64>) -> f64 {
    lambda.iter().enumerate().map(|(j, l)| l * m[(j, j)]).sum()
}

/// KL-to-posterior loss with the log-evidence constant dropped.
pub fn psi_loss(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<f64> {
    state.check_hyper(hyper)?;
    data.check_hyper(hyper)?;
    let (n, d, tau0) = (hyper.n as f64, hyper.d as f64, hyper.tau0);
    let lam = &hyper.lambda_diag;
    let (mu_w, mu_z, sw, sz) = (state.mu_w(), state.mu_z(), state.sigma_w(), state.sigma_z());
    let resid = &data.x - mu_z * mu_w.transpose();
    let mztmz = mu_z.transpose() * mu_z;
    let mwtmw = mu_w.transpose() * mu_w;
    let value = 0.5 * tau0 * resid.norm_squared()
        + 0.5 * tr_lambda(lam, &mwtmw)
        + 0.5 * mztmz.trace()
        + 0.5 * d * tr_lambda(lam, sw)
        + 0.5 * n * sz.trace()
        + 0.5 * tau0 * d * n * linalg::trace_prod(sw, sz)
        + 0.5 * tau0 * d * linalg::trace_prod(sw, &mztmz)
        + 0.5 * tau0 * n * linalg::trace_prod(&mwtmw, sz)
        - 0.5 * d * linalg::spd_logdet(sw)?
        - 0.5 * n * linalg::spd_logdet(sz)?;
    if !value.is_finite() {
        return Err(BpcaError::NonFinite("psi".into()));
    }
    Ok(value)
}

pub fn psi_at(theta: &FlatParams, data: &DataMatrix, hyper: &Hyper) -> Result<f64> {
    psi_loss(&theta.unpack()?, data, hyper)
}

/// Analytic gradient of Ψ0 in flat coordinates.
pub fn psi_gradient(theta: &FlatParams, data: &DataMatrix, hyper: &Hyper) -> Result<DVector<f64>> {
    let state = theta.unpack()?;
    state.check_hyper(hyper)?;
    data.check_hyper(hyper)?;
    gradient_of_state(&state, data, hyper)
}

fn gradient_of_state(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<DVector<f64>> {
    let (n, d, tau0, k) = (hyper.n as f64, hyper.d as f64, hyper.tau0, hyper.k);
    let lambda = hyper.lambda();
    let (mu_w, mu_z, sw, sz) = (state.mu_w(), state.mu_z(), state.sigma_w(), state.sigma_z());
    let resid = &data.x - mu_z * mu_w.transpose();
    let g_mw = -(resid.transpose() * mu_z) * tau0 + mu_w * &lambda + mu_w * sz * (tau0 * n);
    let g_mz = -(&resid * mu_w) * tau0 + mu_z + mu_z * sw * (tau0 * d);
    let g_sw = &lambda * (0.5 * d) + sz * (0.5 * tau0 * d * n) + mu_z.transpose() * mu_z * (0.5 * tau0 * d)
        - linalg::spd_inverse(sw)? * (0.5 * d);
    let g_sz = DMatrix::<f64>::identity(k, k) * (0.5 * n) + sw * (0.5 * tau0 * d * n)
        + mu_w.transpose() * mu_w * (0.5 * tau0 * n)
        - linalg::spd_inverse(sz)? * (0.5 * n);
    let mut v = Vec::with_capacity(Layout::of(hyper).len());
    push_rows(&mut v, &g_mw);
    push_upper_grad(&mut v, &linalg::symmetrize(&g_sw));
    push_rows(&mut v, &g_mz);
    push_upper_grad(&mut v, &linalg::symmetrize(&g_sz));
    Ok(DVector::from_vec(v))
}

/// Central differences of Ψ0 itself; the reference for the analytic gradient.
pub fn psi_gradient_fd(theta: &FlatParams, data: &DataMatrix, hyper: &Hyper, rel_step: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(theta.theta.len());
    for i in 0..theta.theta.len() {
        let h = rel_step * (1.0 + theta.theta[i].abs());
        let mut p = theta.clone();
        p.theta[i] += h;
        let mut m = theta.clone();
        m.theta[i] -= h;
        g[i] = (psi_at(&p, data, hyper)? - psi_at(&m, data, hyper)?) / (2.0 * h);
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    /// Ascending.
    pub eigvals: Vec<f64>,
    pub min_abs_over_max_abs: f64,
    pub singular_flag: bool,
    pub grad_norm_at_point: f64,
    /// Unit eigenvector of the smallest-magnitude eigenvalue.
    pub flat_direction: Vec<f64>,
}

/// Central differences of the analytic gradient with h = 1e-5·(1+|θ_i|), symmetrized.
pub fn hessian_matrix(theta: &FlatParams, data: &DataMatrix, hyper: &Hyper) -> Result<DMatrix<f64>> {
    let m = theta.theta.len();
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        let step = 1e-5 * (1.0 + theta.theta[i].abs());
        let mut p = theta.clone();
        p.theta[i] += step;
        let mut q = theta.clone();
        q.theta[i] -= step;
        let col = (psi_gradient(&p, data, hyper)? - psi_gradient(&q, data, hyper)?) / (2.0 * step);
        h.set_column(i, &col);
    }
    let h = linalg::symmetrize(&h);
    linalg::ensure_finite(&h, "hessian")?;
    Ok(h)
}

fn report_from(h: &DMatrix<f64>, grad_norm: f64) -> HessianReport {
    let eig = SymmetricEigen::new(h.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigvals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let max_abs = eigvals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (flat_i, min_abs) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v.abs() < acc.1 { (i, v.abs()) } else { acc });
    let ratio = if max_abs > 0.0 { min_abs / max_abs } else { 0.0 };
    HessianReport {
        eigvals,
        min_abs_over_max_abs: ratio,
        singular_flag: ratio < SING_TOL,
        grad_norm_at_point: grad_norm,
        flat_direction: eig.eigenvectors.column(flat_i).iter().copied().collect(),
    }
}

pub fn hessian_spectrum(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<HessianReport> {
    let theta = FlatParams::pack(state);
    let grad = psi_gradient(&theta, data, hyper)?;
    let h = hessian_matrix(&theta, data, hyper)?;
    Ok(report_from(&h, grad.amax()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonTrace {
    pub iterations: usize,
    pub grad_norms: Vec<f64>,
}

/// Damped Newton on Ψ0 with eigenvalue clamping; stops when ‖∇Ψ0‖∞ ≤ tol.
pub fn newton_refine(
    start: &VariationalState,
    data: &DataMatrix,
    hyper: &Hyper,
    tol: f64,
) -> Result<(VariationalState, HessianReport)> {
    newton_refine_traced(start, data, hyper, tol, 100).map(|(s, h, _)| (s, h))
}

pub fn newton_refine_traced(
    start: &VariationalState,
    data: &DataMatrix,
    hyper: &Hyper,
    tol: f64,
    max_iters: usize,
) -> Result<(VariationalState, HessianReport, NewtonTrace)> {
    start.check_hyper(hyper)?;
    let mut theta = FlatParams::pack(start);
    let mut grad = psi_gradient(&theta, data, hyper)?;
    let mut value = psi_at(&theta, data, hyper)?;
    let mut trace = NewtonTrace { iterations: 0, grad_norms: vec![grad.amax()] };
    while grad.amax() > tol && trace.iterations < max_iters {
        let h = hessian_matrix(&theta, data, hyper)?;
        let eig = SymmetricEigen::new(h);
        let max_abs = eig.eigenvalues.amax();
        let floor = 1e-12 * max_abs;
        let mut step = DVector::zeros(grad.len());
        for (i, lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() > floor {
                let v = eig.eigenvectors.column(i);
                step -= v * (v.dot(&grad) / lam.abs());
            }
        }
        let grad_norm = grad.amax();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = FlatParams { theta: &theta.theta + &step * t, layout: theta.layout };
            if let (Ok(v), Ok(g)) = (psi_at(&cand, data, hyper), psi_gradient(&cand, data, hyper)) {
                let slack = 1e-13 * (1.0 + value.abs());
                if v < value || (v <= value + slack && g.amax() < grad_norm) {
                    accepted = Some((cand, v, g));
                    break;
                }
            }
            t *= 0.5;
        }
        let (cand, v, g) = accepted.ok_or(BpcaError::LineSearch(MAX_HALVINGS))?;
        theta = cand;
        value = v;
        grad = g;
        trace.iterations += 1;
        trace.grad_norms.push(grad.amax());
    }
    let state = theta.unpack()?;
    let report = if trace.iterations == 0 && grad.amax() <= tol {
        hessian_spectrum(&state, data, hyper)?
    } else {
        report_from(&hessian_matrix(&theta, data, hyper)?, grad.amax())
    };
    Ok((state, report, trace))
}

/// (μ_W R, R'Σ_W R, μ_Z R, R'Σ_Z R).
pub fn rotate_state(state: &VariationalState, r: &DMatrix<f64>) -> Result<VariationalState> {
    let k = state.k();
    if r.shape() != (k, k) {
        return Err(BpcaError::Dimension(format!("rotation must be {k}x{k}")));
    }
    let dev = (r.transpose() * r - DMatrix::identity(k, k)).amax();
    if dev > 1e-10 {
        return Err(BpcaError::Precondition(format!("matrix is not orthogonal (deviation {dev:e})")));
    }
    Ok(VariationalState {
        q_w: MatrixNormal {
            mean: state.mu_w() * r,
            row_cov: linalg::symmetrize(&(r.transpose() * state.sigma_w() * r)),
        },
        q_z: MatrixNormal {
            mean: state.mu_z() * r,
            row_cov: linalg::symmetrize(&(r.transpose() * state.sigma_z() * r)),
        },
    })
}

/// Planar rotation by `angle`.
pub fn rotation2(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}
