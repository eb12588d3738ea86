//! Browser bindings. Every export takes plain numbers and returns a JSON string.

use std::f64::consts::PI;

use bpca_core::cavi::{self, CaviConfig};
use bpca_core::k1::{self, ScalingState};
use bpca_core::model::{self, Hyper};
use bpca_core::{recipes, stationary, BpcaError};
use nalgebra::DVector;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn render(r: Result<serde_json::Value, BpcaError>) -> Result<String, String> {
    r.map(|v| v.to_string()).map_err(|e| e.to_string())
}

fn dims(n: u32, d: u32) -> (usize, usize) {
    (n as usize, d as usize)
}

/// Fixed points of Φ for the given spectrum, and the orbit of Φ from (a0, b0).
#[wasm_bindgen]
pub fn phi_explorer(tau0: f64, lambda: f64, n: u32, d: u32, lambda1: f64, a0: f64, b0: f64, steps: u32) -> Result<String, String> {
    render((|| {
        let (n, d) = dims(n, d);
        let hyper = Hyper::new(n, d, 1, tau0, vec![lambda])?;
        let report = k1::solve_fixed_points(lambda1, &hyper)?;
        let orbit = k1::phi_orbit(ScalingState::new(a0, b0)?, lambda1, &hyper, steps as usize)?;
        let orbit: Vec<[f64; 2]> = orbit.iter().map(|s| [s.a, s.b]).collect();
        Ok(json!({ "report": report, "orbit": orbit }))
    })())
}

/// Simulate a rank-one dataset, run CAVI for up to `t_max` sweeps, and compare the
/// directional errors of μ_Z and μ_W with their geometric bounds.
#[wasm_bindgen]
pub fn direction_errors(n: u32, d: u32, tau0: f64, signal: f64, seed: u64, t_max: u32) -> Result<String, String> {
    render((|| {
        let (n, d) = dims(n, d);
        let hyper = Hyper::new(n, d, 1, tau0, vec![1.0])?;
        let (data, _) = model::sample_dataset(&hyper, &(model::default_w0(d, 1) * signal), seed)?;
        let spec = model::spectral_decompose(&data)?;
        let config = CaviConfig { max_iters: t_max.max(1) as usize, ..CaviConfig::default() };
        let init = cavi::initial_state(&data, &hyper, &config)?;
        let mu_z0 = DVector::from_column_slice(init.mu_z().as_slice());
        let mut snaps = Vec::new();
        cavi::run_cavi_observed(&data, &hyper, &config, init, |t, s| {
            if t >= 1 {
                snaps.push((t, DVector::from_column_slice(s.mu_z().as_slice()), DVector::from_column_slice(s.mu_w().as_slice())));
            }
        })?;
        let mut report = k1::rate_bound_report(&spec, &mu_z0, &hyper)?;
        k1::attach_observed(&mut report, &spec, &snaps);
        Ok(json!({ "eigvals": spec.eigvals.as_slice(), "report": report }))
    })())
}

/// Ψ0 along the rotation orbit q*R(θ) of a refined stationary point (n = 4, d = 3, k = 2).
#[wasm_bindgen]
pub fn rotation_slice(lambda1: f64, lambda2: f64, seed: u64, samples: u32) -> Result<String, String> {
    render((|| {
        let (data, hyper) = recipes::small_fixture(vec![lambda1, lambda2], seed)?;
        let point = recipes::refine_stationary(&data, &hyper, &CaviConfig::default(), 1e-12)?;
        let base = stationary::psi_loss(&point.state, &data, &hyper)?;
        let samples = samples.max(2) as usize;
        let mut angles = Vec::with_capacity(samples);
        let mut delta = Vec::with_capacity(samples);
        for i in 0..samples {
            let angle = 2.0 * PI * i as f64 / (samples - 1) as f64;
            let turned = stationary::rotate_state(&point.state, &stationary::rotation2(angle))?;
            angles.push(angle);
            delta.push(stationary::psi_loss(&turned, &data, &hyper)? - base);
        }
        Ok(json!({
            "psi": base,
            "angles": angles,
            "delta_psi": delta,
            "hessian": point.hessian,
            "newton_iterations": point.newton_iterations,
        }))
    })())
}
