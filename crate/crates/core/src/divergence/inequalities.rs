//! Randomized checks of the auxiliary matrix inequalities.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg;

const SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub statement: String,
    pub trials: usize,
    pub passed: usize,
    pub counterexample: Option<String>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub seed: u64,
    pub dim: usize,
    pub suites: Vec<SuiteResult>,
    /// (LHS, RHS) of the trace inequality at A = diag(2, 1), B = I.
    pub tightness_witness: (f64, f64),
}

impl InequalityReport {
    pub fn all_pass(&self) -> bool {
        self.suites.iter().all(SuiteResult::ok) && (self.tightness_witness.0 - self.tightness_witness.1).abs() < 1e-12
    }
}

/// M'M + 0.1 I with standard-normal M.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    linalg::symmetrize(&(m.transpose() * &m + DMatrix::identity(dim, dim) * 0.1))
}

/// Eigenvalues of AB for SPD A, B via the congruent symmetric matrix L'BL with A = LL'.
fn product_eigs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let l = linalg::cholesky_factor(a).expect("spd");
    let c = l.transpose() * b * &l;
    (linalg::sym_min_eig(&c), linalg::sym_max_eig(&c))
}

/// (LHS, RHS) of tr(A⁻¹B) + tr(B⁻¹A) − 2k ≥ ‖A−B‖²/(λmax(A)λmax(B)).
pub fn trace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let ai = linalg::spd_inverse(a).expect("spd");
    let bi = linalg::spd_inverse(b).expect("spd");
    let k = a.nrows() as f64;
    let lhs = linalg::trace_prod(&ai, b) + linalg::trace_prod(&bi, a) - 2.0 * k;
    let rhs = (a - b).norm_squared() / (linalg::sym_max_eig(a) * linalg::sym_max_eig(b));
    (lhs, rhs)
}

/// ψ(x) = x − 1 − log x.
pub fn psi(x: f64) -> f64 {
    x - 1.0 - x.ln()
}

/// The root ℓ_c of ψ in (0, 1), by bisection on (e^{−(1+c)}, 1) to 1e-12.
pub fn ell_c(c: f64) -> f64 {
    let (mut lo, mut hi) = ((-(1.0 + c)).exp(), 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if psi(mid) > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn leq(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + SLACK * (1.0 + rhs.abs())
}

pub(crate) struct Tally {
    pub(crate) result: SuiteResult,
}

impl Tally {
    pub(crate) fn new(name: &str, statement: &str) -> Self {
        Tally {
            result: SuiteResult {
                name: name.into(),
                statement: statement.into(),
                trials: 0,
                passed: 0,
                counterexample: None,
            },
        }
    }

    pub(crate) fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.result.trials += 1;
        if ok {
            self.result.passed += 1;
        } else if self.result.counterexample.is_none() {
            self.result.counterexample = Some(detail());
        }
    }
}

pub fn check_aux_inequalities(trials: usize, dim: usize, seed: u64) -> InequalityReport {
    let dim = dim.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_eig = Tally::new("min-eig-product", "lambda_min(AB) <= lambda_min(A) lambda_max(B)");
    let mut gap = Tally::new("trace-gap", "tr(A^-1 B) + tr(B^-1 A) - 2k >= |A-B|^2 / (lambda_max(A) lambda_max(B))");
    let mut cauchy = Tally::new("trace-cauchy-schwarz", "|tr(AB)| <= |A| |B|");
    let mut ell = Tally::new("ell-c-bracket", "exp(-(1+c)) < l_c < exp(-c)");
    let mut norms = Tally::new("op-frobenius", "|A| / sqrt(d) <= |A|_op <= |A|");
    for _ in 0..trials {
        let a = random_spd(&mut rng, dim);
        let b = random_spd(&mut rng, dim);

        let (min_ab, _) = product_eigs(&a, &b);
        let rhs_eig = linalg::sym_min_eig(&a) * linalg::sym_max_eig(&b);
        min_eig.record(leq(min_ab, rhs_eig), || format!("A={a:?} B={b:?}: {min_ab} > {rhs_eig}"));

        let (lhs_gap, rhs_gap) = trace_gap(&a, &b);
        gap.record(leq(rhs_gap, lhs_gap), || format!("A={a:?} B={b:?}: {lhs_gap} < {rhs_gap}"));

        let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let h = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let tr = linalg::trace_prod(&g, &h).abs();
        cauchy.record(leq(tr, g.norm() * h.norm()), || format!("A={g:?} B={h:?}"));

        let c = 10f64.powf(rng.random_range(-3.0..1.0));
        let l = ell_c(c);
        ell.record((-(1.0 + c)).exp() < l && l < (-c).exp(), || format!("c={c}: l_c={l}"));

        let op = linalg::op_norm(&g);
        let fro = g.norm();
        norms.record(leq(fro / (dim as f64).sqrt(), op) && leq(op, fro), || format!("A={g:?}: op={op} fro={fro}"));
    }
    let witness = trace_gap(
        &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0])),
        &DMatrix::identity(2, 2),
    );
    InequalityReport {
        seed,
        dim,
        suites: [min_eig, gap, cauchy, ell, norms].into_iter().map(|t| t.result).collect(),
        tightness_witness: witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn tightness_witness() {
        let (lhs, rhs) = trace_gap(&dmatrix![2.0, 0.0; 0.0, 1.0], &DMatrix::identity(2, 2));
        assert_relative_eq!(lhs, 0.5, epsilon = 1e-15);
        assert_relative_eq!(rhs, 0.5, epsilon = 1e-15);
        let (lhs, rhs) = trace_gap(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3));
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn product_eig_hand_case() {
        let (lo, _) = product_eigs(&dmatrix![1.0, 0.0; 0.0, 2.0], &dmatrix![3.0, 0.0; 0.0, 1.0]);
        assert_relative_eq!(lo, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ell_c_solves_psi() {
        for c in [1e-3, 0.1, 1.0, 7.0] {
            assert!((psi(ell_c(c)) - c).abs() < 1e-9);
        }
    }

    #[test]
    fn small_run_passes() {
        let rep = check_aux_inequalities(50, 3, 2);
        assert!(rep.all_pass(), "{rep:?}");
    }
}
