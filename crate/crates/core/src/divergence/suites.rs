//! Randomized checks of the KL and Δ bounds, runnable outside the test harness.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::inequalities::{leq, random_spd, SuiteResult, Tally};
use crate::cavi::{MatrixNormal, VariationalState};
use crate::linalg;
use crate::model::{DataMatrix, Hyper, Provenance};

/// Radii for the lower-bound suite; the bound is only checked in this small-ball regime.
pub const R0_RANGE: (f64, f64) = (1e-4, 1e-2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl DivergenceReport {
    pub fn all_pass(&self) -> bool {
        self.suites.iter().all(SuiteResult::ok)
    }
}

fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_normal<R: Rng>(rng: &mut R, rows: usize, k: usize) -> MatrixNormal {
    MatrixNormal::new(gaussian(rng, rows, k), random_spd(rng, k)).expect("spd by construction")
}

/// q on the segment from `far` to q* with KL(q*‖q) ≤ r0; SPD is preserved along the segment.
fn pull_into_ball(star: &MatrixNormal, far: &MatrixNormal, r0: f64) -> MatrixNormal {
    let mut t = 1.0;
    loop {
        let q = MatrixNormal::new(
            &star.mean + (&far.mean - &star.mean) * t,
            linalg::symmetrize(&(&star.row_cov + (&far.row_cov - &star.row_cov) * t)),
        )
        .expect("convex combination of spd");
        if super::kl_matrix_normal(star, &q).map_or(false, |kl| kl <= r0) {
            return q;
        }
        t *= 0.7;
    }
}

fn small_problem<R: Rng>(rng: &mut R) -> (DataMatrix, Hyper) {
    loop {
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=n);
        let k = rng.random_range(1..=d.min(2));
        let lambda = (0..k).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
        let hyper = Hyper::new(n, d, k, 0.5 + 10.0 * rng.random::<f64>(), lambda).expect("valid by construction");
        if let Ok(data) = DataMatrix::new(gaussian(rng, n, d), Provenance::Loaded { path: "<random>".into() }) {
            return (data, hyper);
        }
    }
}

fn random_state<R: Rng>(rng: &mut R, hyper: &Hyper) -> VariationalState {
    let k = hyper.k;
    VariationalState::new(gaussian(rng, hyper.d, k), random_spd(rng, k), gaussian(rng, hyper.n, k), random_spd(rng, k))
        .expect("spd by construction")
}

pub fn check_divergence_bounds(trials: usize, seed: u64) -> DivergenceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nonneg = Tally::new("KL>=0", "KL(q|q*) >= 0 and KL(q|q) = 0");
    let mut tensor = Tally::new("KL-rows", "matrix-normal KL equals the sum of row-wise Gaussian KLs");
    let mut delta_bound = Tally::new("delta-bound", "|Delta| <= upper bound");
    let mut lower = Tally::new("small-ball-lower", "lower bound <= symmetric KL inside KL(q*|q) <= r0, r0 in [1e-4, 1e-2]");
    let mut boxes = Tally::new("ball-in-box", "KL(q*|q) <= r0 implies the operator-norm and mean boxes");
    for _ in 0..trials {
        let k = rng.random_range(1..=3);
        let rows = rng.random_range(1..=5);
        let q = random_normal(&mut rng, rows, k);
        let star = random_normal(&mut rng, rows, k);

        let kl = super::kl_matrix_normal(&q, &star).expect("matching shapes");
        let self_kl = super::kl_matrix_normal(&q, &q).expect("matching shapes");
        nonneg.record(kl >= 0.0 && self_kl.abs() <= 1e-12, || format!("kl={kl} self={self_kl}"));

        let rowwise: f64 = (0..rows)
            .map(|i| {
                let qi = MatrixNormal::new(q.mean.rows(i, 1).into_owned(), q.row_cov.clone()).expect("spd");
                let si = MatrixNormal::new(star.mean.rows(i, 1).into_owned(), star.row_cov.clone()).expect("spd");
                super::kl_matrix_normal(&qi, &si).expect("matching shapes")
            })
            .sum();
        tensor.record((rowwise - kl).abs() <= 1e-9 * kl.max(1.0), || format!("rows={rows} k={k}: {kl} vs {rowwise}"));

        let r0 = R0_RANGE.0 * (R0_RANGE.1 / R0_RANGE.0).powf(rng.random::<f64>());
        let inner = pull_into_ball(&star, &q, r0);
        let lb = super::kl_lower_bound(&inner, &star, r0).expect("matching shapes");
        let sym = super::sym_kl(&inner, &star).expect("matching shapes");
        lower.record(leq(lb.value, sym), || format!("r0={r0} q={inner:?} star={star:?}: bound {} > {sym}", lb.value));

        let (cov_cap, mean_cap) = super::ball_inclusion_bounds(&star, r0);
        let op = linalg::sym_max_eig(&inner.row_cov);
        let dm = (&inner.mean - &star.mean).norm_squared();
        boxes.record(leq(op, cov_cap) && leq(dm, mean_cap), || format!("r0={r0}: op {op} cap {cov_cap}, mean {dm} cap {mean_cap}"));

        let (data, hyper) = small_problem(&mut rng);
        let a = random_state(&mut rng, &hyper);
        let b = random_state(&mut rng, &hyper);
        let delta = super::delta_exact(&a, &b, &data, &hyper).expect("matching shapes");
        let ub = super::delta_upper_bound(&a, &b, &data, &hyper).expect("matching shapes");
        delta_bound.record(leq(delta.abs(), ub), || format!("n={} d={} k={}: |delta| {} > {ub}", hyper.n, hyper.d, hyper.k, delta.abs()));
    }
    DivergenceReport { seed, suites: [nonneg, tensor, delta_bound, lower, boxes].into_iter().map(|t| t.result).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_and_are_seeded() {
        let a = check_divergence_bounds(200, 4);
        assert!(a.all_pass(), "{a:?}");
        assert_eq!(a, check_divergence_bounds(200, 4));
        assert!(a.suites.iter().all(|s| s.trials == 200));
    }
}
