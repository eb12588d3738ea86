use bpca_core::cavi::{self, CaviConfig, MatrixNormal};
use bpca_core::divergence::{self, inequalities};
use bpca_core::k1::{self, AlphaBeta, ScalingState};
use bpca_core::model::{self, Hyper};
use bpca_core::recipes;
use bpca_core::stationary::{self, FlatParams};
use nalgebra::DMatrix;

fn scalar(mean: f64, var: f64) -> MatrixNormal {
    MatrixNormal::new(DMatrix::from_element(1, 1, mean), DMatrix::from_element(1, 1, var)).unwrap()
}

#[test]
fn quoted_top_eigenvalue_gives_single_attracting_fixed_point() {
    let hyper = recipes::rank_one_hyper();
    let rep = k1::solve_fixed_points(1098.453, &hyper).unwrap();
    assert!(rep.poly_coeffs[2] < 0.0, "constant term {}", rep.poly_coeffs[2]);
    assert_eq!(rep.positive_roots_u.len(), 1);
    let c = &rep.candidates[0];
    assert!(c.verified);
    assert!((c.a - 10.039223865837567).abs() / 10.039223865837567 < 1e-3);
    assert!((c.b - 0.0009184540276287452).abs() / 0.0009184540276287452 < 1e-3);
    let jac = c.jacobian.as_ref().unwrap();
    assert!(jac.eig_magnitudes.iter().all(|m| *m < 1.0));
}

#[test]
fn alpha_beta_bracket_for_quoted_config() {
    match k1::alpha_beta(&recipes::rank_one_hyper()) {
        AlphaBeta::Real { alpha, beta } => {
            assert!((alpha - 0.099989).abs() < 1e-5, "{alpha}");
            assert!((beta - 1.000111).abs() < 1e-5, "{beta}");
        }
        AlphaBeta::Complex => panic!("expected a real interval"),
    }
}

// Frozen from a brute-force scan over (τ0, Λ, n, d, λ1): both roots of P are negative.
#[test]
fn weak_signal_has_no_fixed_point() {
    let hyper = Hyper::new(10, 2, 1, 1.0, vec![1.0]).unwrap();
    let rep = k1::solve_fixed_points(5.0, &hyper).unwrap();
    assert_eq!(rep.poly_coeffs, [5.0, 50.0, 20.0]);
    assert!(rep.positive_roots_u.is_empty());
    assert!(rep.candidates.is_empty());
    assert_eq!(rep.status, "no fixed point; CAVI does not converge");
}

// disc(P) = τ0²[(p(d−n))² + 4λ1Λp²] with p = λ1τ0 − n, so it is never negative.
#[test]
fn fixed_point_polynomial_discriminant_is_nonnegative() {
    for tau0 in [0.01, 0.3, 1.0, 7.0, 100.0] {
        for lam in [0.01, 1.0, 50.0] {
            for (n, d) in [(2, 1), (10, 2), (100, 10), (50, 50)] {
                for lambda1 in [1e-3, 0.5, 2.0, 30.0, 1e3, 1e5] {
                    let hyper = Hyper::new(n, d, 1, tau0, vec![lam]).unwrap();
                    let [c2, c1, c0] = k1::poly_coeffs(lambda1, &hyper);
                    let p = lambda1 * tau0 - n as f64;
                    let closed = tau0 * tau0 * ((p * (d as f64 - n as f64)).powi(2) + 4.0 * lambda1 * lam * p * p);
                    let disc = c1 * c1 - 4.0 * c2 * c0;
                    assert!(disc >= -1e-9 * (c1 * c1).max(1.0));
                    assert!((disc - closed).abs() <= 1e-9 * closed.abs().max(c1 * c1).max(1.0));
                }
            }
        }
    }
}

// Contraction ≈ 0.9973 per step, so a 0.1 offset needs ~6000 steps to reach 1e-8, not hundreds.
#[test]
fn phi_orbit_returns_to_fixed_point_at_the_linear_rate() {
    let hyper = recipes::rank_one_hyper();
    let rep = k1::solve_fixed_points(1098.453, &hyper).unwrap();
    let c = &rep.candidates[0];
    let rate = c.jacobian.as_ref().unwrap().eig_magnitudes[0];
    let orbit = k1::phi_orbit(ScalingState::new(c.a + 0.1, c.b).unwrap(), 1098.453, &hyper, 20_000).unwrap();
    let hit = orbit
        .iter()
        .position(|s| (s.a - c.a).abs() <= 1e-8 && (s.b - c.b).abs() <= 1e-8)
        .expect("orbit reaches the fixed point");
    let predicted = (1e-8 / 0.1f64).ln() / rate.ln();
    assert!(hit > 200);
    assert!((hit as f64 - predicted).abs() / predicted < 0.1, "hit {hit} predicted {predicted}");
}

#[test]
fn simulated_top_eigenvalue_has_quoted_magnitude() {
    let hyper = recipes::rank_one_hyper();
    let (data, _) = model::sample_dataset(&hyper, &model::default_w0(10, 1), 7).unwrap();
    let l1 = model::spectral_decompose(&data).unwrap().lambda1();
    assert!((300.0..3000.0).contains(&l1), "{l1}");
}

// Equal means, Σ* = 1, Σ = 1/ℓ_c with c = 2r0/r: KL(q*‖q) sits just inside r0 = 0.15,
// yet the lower bound exceeds the symmetric KL. The ¼ vs ½ weighting on the covariance
// term breaks the bound once e^{1+c}ℓ_c < 2.
#[test]
fn lower_bound_fails_outside_the_small_ball_regime() {
    let r0 = 0.15;
    let sigma = (1.0 - 1e-6) / inequalities::ell_c(2.0 * r0);
    let (q, star) = (scalar(0.0, sigma), scalar(0.0, 1.0));
    let lb = divergence::kl_lower_bound(&q, &star, r0).unwrap();
    let sym = divergence::sym_kl(&q, &star).unwrap();
    assert!(lb.in_ball);
    assert!((sigma - 2.4324).abs() < 1e-3);
    assert!((sym - 0.2109).abs() < 1e-3);
    assert!((lb.value - 0.2796).abs() < 1e-3);
    assert!(lb.value > sym);
}

#[test]
fn lower_bound_holds_on_scalar_grid_for_small_radii() {
    for r0 in [1e-4, 1e-3, 1e-2] {
        for m in [-0.05, 0.0, 0.01, 0.1] {
            for v in [0.8, 0.95, 1.0, 1.05, 1.2] {
                let (q, star) = (scalar(m, v), scalar(0.0, 1.0));
                let lb = divergence::kl_lower_bound(&q, &star, r0).unwrap();
                if lb.in_ball {
                    assert!(lb.value <= divergence::sym_kl(&q, &star).unwrap() + 1e-15);
                }
            }
        }
    }
}

#[test]
fn scalar_kl_examples() {
    assert!((divergence::kl_matrix_normal(&scalar(0.0, 2.0), &scalar(0.0, 1.0)).unwrap() - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
    assert!((divergence::kl_matrix_normal(&scalar(0.0, 2.0), &scalar(0.0, 1.0)).unwrap() - 0.153426).abs() < 1e-6);
    assert!((divergence::sym_kl(&scalar(0.0, 2.0), &scalar(0.0, 1.0)).unwrap() - 0.125).abs() < 1e-15);
    assert!((divergence::sym_kl(&scalar(0.0, 1.0), &scalar(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn stopping_tolerance_trades_sweeps_for_stationarity() {
    let (data, hyper) = recipes::small_fixture(vec![1.0, 2.0], 1).unwrap();
    let mut grads = Vec::new();
    let mut sweeps = Vec::new();
    for eps in [1e-3, 1e-6, 1e-10, 1e-15] {
        let cfg = CaviConfig { epsilon: eps, ..CaviConfig::default() };
        let (state, log) = cavi::run_cavi(&data, &hyper, &cfg).unwrap();
        let g = stationary::psi_gradient(&FlatParams::pack(&state), &data, &hyper).unwrap();
        grads.push(g.amax());
        sweeps.push(log.records.len());
    }
    assert!(sweeps.windows(2).all(|w| w[0] <= w[1]), "{sweeps:?}");
    assert!(sweeps[0] < sweeps[3]);
    assert!(grads[1..].windows(2).all(|w| w[1] <= w[0]), "{grads:?}");
}

#[test]
fn newton_leaves_an_exact_stationary_point_alone() {
    let (data, hyper) = recipes::small_fixture(vec![1.0], 2).unwrap();
    let refined = recipes::refine_stationary(&data, &hyper, &CaviConfig::default(), 1e-12).unwrap();
    let (again, _, trace) = stationary::newton_refine_traced(&refined.state, &data, &hyper, 1e-10, 100).unwrap();
    assert_eq!(trace.iterations, 0);
    assert_eq!(again.max_abs_diff(&refined.state), 0.0);
}

#[test]
fn isotropic_stationary_point_has_a_flat_rotation_direction() {
    let (data, hyper) = recipes::small_fixture(vec![1.0, 1.0], 3).unwrap();
    let p = recipes::refine_stationary(&data, &hyper, &CaviConfig::default(), 1e-12).unwrap();
    assert!(p.hessian.singular_flag);
    let psi = stationary::psi_loss(&p.state, &data, &hyper).unwrap();
    for angle in [0.1, 0.7, 2.0] {
        let turned = stationary::rotate_state(&p.state, &stationary::rotation2(angle)).unwrap();
        let v = stationary::psi_loss(&turned, &data, &hyper).unwrap();
        assert!((v - psi).abs() <= 1e-10 * psi.abs().max(1.0));
    }
}

#[test]
fn gcorr_on_converged_fit_is_finite() {
    let hyper = Hyper::new(30, 4, 1, 10.0, vec![1.0]).unwrap();
    let (data, _) = model::sample_dataset(&hyper, &model::default_w0(4, 1), 11).unwrap();
    let (state, _) = cavi::run_cavi(&data, &hyper, &CaviConfig::default()).unwrap();
    let rep = divergence::gcorr_condition(&state, &data, &hyper).unwrap();
    for t in [rep.term1, rep.term2, rep.term3, rep.term4] {
        assert!(t.is_finite() && t > 0.0);
    }
    assert!((rep.gamma0 - (1.0 + (-1f64).exp()) / 4.0).abs() < 1e-12);
    assert!((1..=4).contains(&rep.max_term.0));
}

#[test]
fn monte_carlo_delta_is_centred_at_zero_for_equal_states() {
    let hyper = Hyper::new(3, 2, 1, 1.0, vec![1.0]).unwrap();
    let (data, _) = model::sample_dataset(&hyper, &model::default_w0(2, 1), 5).unwrap();
    let (state, _) = cavi::run_cavi(&data, &hyper, &CaviConfig::default()).unwrap();
    let mc = divergence::delta_monte_carlo(&state, &state, &data, &hyper, 10_000, 3).unwrap();
    assert!(mc.estimate.abs() <= 3.0 * mc.std_err.max(1e-15));
}

#[test]
fn trace_survives_jsonl_round_trip() {
    let hyper = Hyper::new(6, 3, 2, 5.0, vec![1.0, 2.0]).unwrap();
    let (data, _) = model::sample_dataset(&hyper, &model::default_w0(3, 2), 9).unwrap();
    let cfg = CaviConfig { max_iters: 25, ..CaviConfig::default() };
    let (_, log) = cavi::run_cavi(&data, &hyper, &cfg).unwrap();
    let back = cavi::TraceLog::from_jsonl(&log.to_jsonl()).unwrap();
    assert_eq!(back, log.records);
}
