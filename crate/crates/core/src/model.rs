//! Generative model, log posterior and the spectrum of the data.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BpcaError, Result};
use crate::linalg;

/// Relative smallest/largest singular value below which X counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Relative eigen-gap below which two eigenvalues are flagged as tied.
pub const GAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub tau0: f64,
    pub lambda_diag: Vec<f64>,
}

impl Hyper {
    pub fn new(n: usize, d: usize, k: usize, tau0: f64, lambda_diag: Vec<f64>) -> Result<Self> {
        let h = Hyper { n, d, k, tau0, lambda_diag };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n >= self.d && self.d >= self.k && self.k >= 1) {
            return Err(BpcaError::InvalidHyper(format!(
                "need n >= d >= k >= 1, got n={}, d={}, k={}",
                self.n, self.d, self.k
            )));
        }
        if !(self.tau0.is_finite() && self.tau0 > 0.0) {
            return Err(BpcaError::InvalidHyper(format!("tau0 must be positive, got {}", self.tau0)));
        }
        if self.lambda_diag.len() != self.k {
            return Err(BpcaError::InvalidHyper(format!(
                "lambda_diag has {} entries, expected k={}",
                self.lambda_diag.len(),
                self.k
            )));
        }
        if self.lambda_diag.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(BpcaError::InvalidHyper("lambda_diag entries must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.lambda_diag.clone()))
    }

    /// Λ as a scalar; only meaningful for k = 1.
    pub fn lambda_scalar(&self) -> f64 {
        self.lambda_diag[0]
    }

    pub fn check_k1(&self) -> Result<()> {
        if self.k != 1 {
            return Err(BpcaError::Precondition(format!("k = 1 required, got k = {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Simulated {
        seed: u64,
        #[serde(with = "crate::io::mat_rows")]
        w0: DMatrix<f64>,
    },
    Loaded { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub x: DMatrix<f64>,
    pub provenance: Provenance,
}

impl DataMatrix {
    /// Wraps `x` after checking finiteness and full column rank.
    pub fn new(x: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        linalg::ensure_finite(&x, "data matrix")?;
        if x.nrows() < x.ncols() || x.ncols() == 0 {
            return Err(BpcaError::Dimension(format!(
                "data must be n x d with n >= d >= 1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        let sv = x.clone().singular_values();
        let ratio = if sv.max() > 0.0 { sv.min() / sv.max() } else { 0.0 };
        if ratio <= RANK_TOL {
            return Err(BpcaError::RankDeficient { ratio });
        }
        Ok(DataMatrix { x, provenance })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn check_hyper(&self, hyper: &Hyper) -> Result<()> {
        if self.n() != hyper.n || self.d() != hyper.d {
            return Err(BpcaError::Dimension(format!(
                "data is {}x{}, hyper expects {}x{}",
                self.n(),
                self.d(),
                hyper.n,
                hyper.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeDraw {
    pub w0: DMatrix<f64>,
    pub z0: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl GenerativeDraw {
    pub fn x(&self) -> DMatrix<f64> {
        &self.z0 * self.w0.transpose() + &self.e
    }
}

/// All-ones loading, the default W0.
pub fn default_w0(d: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_element(d, k, 1.0)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    let vals: Vec<f64> = (0..rows * cols)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    DMatrix::from_row_slice(rows, cols, &vals)
}

/// Draws (Z0, E); `noiseless` forces E = 0.
pub fn sample_draw(hyper: &Hyper, w0: &DMatrix<f64>, seed: u64, noiseless: bool) -> Result<GenerativeDraw> {
    hyper.validate()?;
    if w0.nrows() != hyper.d || w0.ncols() != hyper.k {
        return Err(BpcaError::Dimension(format!(
            "w0 is {}x{}, expected {}x{}",
            w0.nrows(),
            w0.ncols(),
            hyper.d,
            hyper.k
        )));
    }
    linalg::ensure_finite(w0, "w0")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = normal_matrix(&mut rng, hyper.n, hyper.k, 1.0);
    let e = if noiseless {
        DMatrix::zeros(hyper.n, hyper.d)
    } else {
        normal_matrix(&mut rng, hyper.n, hyper.d, 1.0 / hyper.tau0.sqrt())
    };
    Ok(GenerativeDraw { w0: w0.clone(), z0, e })
}

pub fn sample_dataset(hyper: &Hyper, w0: &DMatrix<f64>, seed: u64) -> Result<(DataMatrix, GenerativeDraw)> {
    let draw = sample_draw(hyper, w0, seed, false)?;
    let data = DataMatrix::new(draw.x(), Provenance::Simulated { seed, w0: w0.clone() })?;
    Ok((data, draw))
}

/// τ0 tr(WZ'X) − (τ0/2) tr(WZ'ZW') − ½ tr(WΛW') − ½ tr(ZZ'), additive constant dropped.
pub fn log_posterior_unnorm(w: &DMatrix<f64>, z: &DMatrix<f64>, data: &DataMatrix, hyper: &Hyper) -> Result<f64> {
    log_posterior_raw(w, z, &data.x, hyper)
}

pub(crate) fn log_posterior_raw(w: &DMatrix<f64>, z: &DMatrix<f64>, x: &DMatrix<f64>, hyper: &Hyper) -> Result<f64> {
    if w.nrows() != x.ncols() || z.nrows() != x.nrows() || w.ncols() != hyper.k || z.ncols() != hyper.k {
        return Err(BpcaError::Dimension("log posterior arguments".into()));
    }
    let fit = (x * w).component_mul(z).sum();
    let ztz = z.transpose() * z;
    let wtw = w.transpose() * w;
    let quad = linalg::trace_prod(&ztz, &wtw);
    let prior_w: f64 = (0..hyper.k)
        .map(|j| hyper.lambda_diag[j] * w.column(j).norm_squared())
        .sum();
    let prior_z = z.norm_squared();
    Ok(hyper.tau0 * fit - 0.5 * hyper.tau0 * quad - 0.5 * prior_w - 0.5 * prior_z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    /// Eigenvalues of XX', nonincreasing, length n; entries past d are zero.
    #[serde(with = "crate::io::vec_serde")]
    pub eigvals: DVector<f64>,
    #[serde(with = "crate::io::mat_rows")]
    pub eigvecs_left: DMatrix<f64>,
    #[serde(with = "crate::io::mat_rows")]
    pub eigvecs_right: DMatrix<f64>,
    /// ρ_i = λ_i − λ_{i+1} for i < d.
    pub gaps: Vec<f64>,
    pub distinct: bool,
    pub warnings: Vec<String>,
}

impl SpectralDecomposition {
    pub fn d(&self) -> usize {
        self.eigvecs_right.ncols()
    }

    pub fn lambda1(&self) -> f64 {
        self.eigvals[0]
    }

    pub fn mu(&self, i: usize) -> DVector<f64> {
        self.eigvecs_left.column(i).into_owned()
    }
}

pub fn spectral_decompose(data: &DataMatrix) -> Result<SpectralDecomposition> {
    let x = &data.x;
    let (n, d) = (x.nrows(), x.ncols());
    let (vals_r, vecs_r) = linalg::sym_eigen_desc(&(x.transpose() * x));
    if vals_r.iter().any(|v| !v.is_finite()) {
        return Err(BpcaError::Eigen("non-finite eigenvalue".into()));
    }
    let top = vals_r[0].max(0.0);
    let bottom = vals_r[d - 1].max(0.0);
    let ratio = if top > 0.0 { (bottom / top).sqrt() } else { 0.0 };
    if ratio <= RANK_TOL {
        return Err(BpcaError::RankDeficient { ratio });
    }

    let mut left = DMatrix::zeros(n, n);
    let mut right = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut mu = x * vecs_r.column(i);
        mu /= mu.norm();
        linalg::sign_normalize(&mut mu);
        let mut nu = x.transpose() * &mu;
        nu /= nu.norm();
        left.set_column(i, &mu);
        right.set_column(i, &nu);
    }
    if n > d {
        // Null space of XX': smallest eigenvectors, re-orthogonalized against the range.
        let (_, vecs_l) = linalg::sym_eigen_desc(&(x * x.transpose()));
        for c in d..n {
            let mut v = vecs_l.column(c).into_owned();
            for _ in 0..2 {
                for j in 0..c {
                    let proj = left.column(j).dot(&v);
                    v -= left.column(j) * proj;
                }
            }
            v /= v.norm();
            linalg::sign_normalize(&mut v);
            left.set_column(c, &v);
        }
    }
    let mut eigvals = DVector::zeros(n);
    for i in 0..d {
        eigvals[i] = vals_r[i];
    }
    let gaps: Vec<f64> = (0..d.saturating_sub(1)).map(|i| eigvals[i] - eigvals[i + 1]).collect();
    let mut warnings = Vec::new();
    for (i, g) in gaps.iter().enumerate() {
        if *g <= GAP_TOL * eigvals[0] {
            warnings.push(format!(
                "eigenvalues {} and {} are tied within relative gap {GAP_TOL:e}; rate bounds unreliable",
                i + 1,
                i + 2
            ));
        }
    }
    Ok(SpectralDecomposition {
        eigvals,
        eigvecs_left: left,
        eigvecs_right: right,
        gaps,
        distinct: warnings.is_empty(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_hyper() -> Hyper {
        Hyper::new(1, 1, 1, 1.0, vec![1.0]).unwrap()
    }

    #[test]
    fn hyper_rejects_bad_shapes() {
        assert!(Hyper::new(3, 4, 1, 1.0, vec![1.0]).is_err());
        assert!(Hyper::new(4, 3, 2, 1.0, vec![1.0]).is_err());
        assert!(Hyper::new(4, 3, 1, 0.0, vec![1.0]).is_err());
        assert!(Hyper::new(4, 3, 1, 1.0, vec![-1.0]).is_err());
    }

    #[test]
    fn log_posterior_zero_at_origin() {
        let h = Hyper::new(3, 2, 1, 2.0, vec![1.0]).unwrap();
        let data = DataMatrix::new(dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0], Provenance::Loaded { path: "-".into() }).unwrap();
        let v = log_posterior_unnorm(&DMatrix::zeros(2, 1), &DMatrix::zeros(3, 1), &data, &h).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn log_posterior_scalar_case() {
        let data = DataMatrix::new(dmatrix![2.0], Provenance::Loaded { path: "-".into() }).unwrap();
        let v = log_posterior_unnorm(&dmatrix![1.0], &dmatrix![1.0], &data, &scalar_hyper()).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_noise_reproduces_signal() {
        let h = Hyper::new(6, 3, 1, 100.0, vec![1.0]).unwrap();
        let w0 = default_w0(3, 1);
        let draw = sample_draw(&h, &w0, 3, true).unwrap();
        assert_eq!(draw.x(), &draw.z0 * w0.transpose());
    }

    #[test]
    fn sampling_is_deterministic() {
        let h = Hyper::new(20, 4, 1, 100.0, vec![1.0]).unwrap();
        let w0 = default_w0(4, 1);
        let (a, _) = sample_dataset(&h, &w0, 11).unwrap();
        let (b, _) = sample_dataset(&h, &w0, 11).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn diagonal_spectrum() {
        let data = DataMatrix::new(dmatrix![3.0, 0.0; 0.0, 2.0], Provenance::Loaded { path: "-".into() }).unwrap();
        let s = spectral_decompose(&data).unwrap();
        assert_relative_eq!(s.eigvals[0], 9.0, epsilon = 1e-12);
        assert_relative_eq!(s.eigvals[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(s.eigvecs_left[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.eigvecs_left[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_rejected() {
        let x = dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0];
        assert!(matches!(
            DataMatrix::new(x, Provenance::Loaded { path: "-".into() }),
            Err(BpcaError::RankDeficient { .. })
        ));
    }
}
