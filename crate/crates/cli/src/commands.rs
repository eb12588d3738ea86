use std::path::Path;

use bpca_core::divergence::{self, inequalities, suites};
use bpca_core::recipes::{self, NUMERICAL_FLOOR};
use bpca_core::{cavi, io, k1, model, stationary};
use serde_json::json;

use crate::config::{FitConfig, SimulateConfig, StationaryConfig, VerifyConfig};
use crate::error::CliError;
use crate::output::OutDir;

pub fn simulate(cfg: &SimulateConfig, out: &OutDir) -> Result<(), CliError> {
    let hyper = cfg.model.hyper()?;
    let (data, draw) = cfg.simulation().draw(&hyper)?;
    let spec = model::spectral_decompose(&data)?;
    out.matrix("X.csv", &data.x)?;
    out.json(
        "generative.json",
        &json!({
            "name": cfg.name,
            "seed": cfg.seed,
            "noiseless": cfg.noiseless,
            "model": cfg.model,
            "w0": io::rows_of(&draw.w0),
            "eigvals": spec.eigvals.as_slice(),
            "gap_warnings": spec.warnings,
        }),
    )
}

pub fn fit(cfg: &FitConfig, base: &Path, out: &OutDir) -> Result<(), CliError> {
    let hyper = cfg.model.hyper()?;
    let data = cfg.data.load(base, &hyper)?;
    let (state, log) = cavi::run_cavi(&data, &hyper, &cfg.cavi)?;
    out.text("trace.jsonl", &log.to_jsonl())?;
    out.json(
        "state.json",
        &json!({
            "name": cfg.name,
            "status": log.status,
            "sweeps": log.records.len(),
            "elbo": cavi::elbo_0(&state, &data, &hyper)?,
            "mu_z_norm": state.mu_z().norm(),
            "state": state,
        }),
    )
}

pub fn analyze_k1(cfg: &FitConfig, base: &Path, out: &OutDir) -> Result<(), CliError> {
    let hyper = cfg.model.hyper()?;
    if hyper.k != 1 {
        return Err(CliError::Schema(format!("analyze-k1 needs k = 1, got k = {}", hyper.k)));
    }
    let data = cfg.data.load(base, &hyper)?;
    let spec = model::spectral_decompose(&data)?;
    let traj = recipes::k1_trajectory(&data, &hyper, &cfg.cavi)?;
    out.text("trace.jsonl", &traj.trace.to_jsonl())?;

    let rates = recipes::figure1(&spec, &traj, &hyper)?;
    let z: Vec<Vec<f64>> = rates.observed.iter().map(|p| vec![p.t as f64, p.err_z, p.bound_z]).collect();
    let w: Vec<Vec<f64>> = rates.observed.iter().map(|p| vec![p.t as f64, p.err_w, p.bound_w]).collect();
    out.rows("figure1_mu_z.csv", &z)?;
    out.rows("figure1_mu_w.csv", &w)?;
    let (slope_z, slope_w) = recipes::figure1_slopes(&rates);

    let (report, chosen) = match recipes::chosen_fixed_point(spec.lambda1(), &spec, &data, &hyper) {
        Ok((report, idx)) => (report, Some(idx)),
        Err(_) => {
            let mut report = k1::solve_fixed_points(spec.lambda1(), &hyper)?;
            k1::attach_elbos(&mut report, &spec, &data, &hyper)?;
            (report, None)
        }
    };
    let a_lim = traj.limit.mu_z().norm();
    let b_lim = traj.limit.sigma_z()[(0, 0)];
    let scaling = match chosen {
        Some(idx) => {
            let c = &report.candidates[idx];
            let series = recipes::figure2(&traj, c.a, c.b);
            let rows: Vec<Vec<f64>> = series.iter().map(|p| vec![p.t as f64, p.err_a, p.err_b]).collect();
            out.rows("figure2.csv", &rows)?;
            let (fit_a, fit_b) = recipes::figure2_fits(&series, c.a, c.b);
            json!({
                "a_star": c.a,
                "b_star": c.b,
                "limit_rel_err_a": (a_lim - c.a).abs() / c.a,
                "limit_rel_err_b": (b_lim - c.b).abs() / c.b,
                "fit_a": fit_a,
                "fit_b": fit_b,
            })
        }
        None => serde_json::Value::Null,
    };
    out.json(
        "fixed_points.json",
        &json!({
            "name": cfg.name,
            "lambda1": spec.lambda1(),
            "report": report,
            "chosen": chosen,
            "rate_bound": {
                "i_star": rates.i_star,
                "coeffs": rates.coeffs,
                "rate": rates.rate,
                "c0": rates.c0,
                "c0_prime": rates.c0_prime,
                "reliable": rates.reliable,
                "bounds_hold": recipes::figure1_bounds_hold(&rates),
                "floor": NUMERICAL_FLOOR,
                "slope_mu_z": slope_z,
                "slope_mu_w": slope_w,
            },
            "scaling": scaling,
            "run": {
                "status": traj.trace.status,
                "algorithm_stop": traj.algorithm_stop,
                "total_sweeps": traj.mu_z.len() - 1,
                "limit_a": a_lim,
                "limit_b": b_lim,
            },
        }),
    )
}

fn refined(cfg: &StationaryConfig, base: &Path) -> Result<(model::DataMatrix, model::Hyper, recipes::RefinedPoint), CliError> {
    let hyper = cfg.model.hyper()?;
    let data = cfg.data.load(base, &hyper)?;
    let point = recipes::refine_stationary(&data, &hyper, &cfg.cavi, cfg.newton_tol)?;
    Ok((data, hyper, point))
}

pub fn gcorr(cfg: &StationaryConfig, base: &Path, out: &OutDir) -> Result<(), CliError> {
    let (data, hyper, point) = refined(cfg, base)?;
    let report = divergence::gcorr_condition(&point.state, &data, &hyper)?;
    out.json(
        "gcorr.json",
        &json!({
            "name": cfg.name,
            "report": report,
            "point": {
                "psi": stationary::psi_loss(&point.state, &data, &hyper)?,
                "grad_norm": point.hessian.grad_norm_at_point,
                "cavi_grad_norm": point.cavi_grad,
                "newton_iterations": point.newton_iterations,
            },
        }),
    )
}

pub fn stationary(cfg: &StationaryConfig, base: &Path, out: &OutDir) -> Result<(), CliError> {
    let (data, hyper, point) = refined(cfg, base)?;
    let flat = recipes::flat_direction_variation(&point.state, &point.hessian.flat_direction, &data, &hyper, cfg.flat_alpha_max, 50)?;
    let eig: Vec<Vec<f64>> = point.hessian.eigvals.iter().map(|v| vec![*v]).collect();
    out.rows("eigenvalues.csv", &eig)?;
    out.json("state.json", &json!({ "name": cfg.name, "state": point.state }))?;
    out.json(
        "hessian.json",
        &json!({
            "name": cfg.name,
            "hessian": point.hessian,
            "psi": stationary::psi_loss(&point.state, &data, &hyper)?,
            "cavi_grad_norm": point.cavi_grad,
            "newton_iterations": point.newton_iterations,
            "flat_alpha_max": cfg.flat_alpha_max,
            "flat_variation": flat,
        }),
    )
}

pub fn verify(cfg: &VerifyConfig, out: &OutDir) -> Result<(), CliError> {
    let ineq = inequalities::check_aux_inequalities(cfg.trials, cfg.dim, cfg.seed);
    let div = suites::check_divergence_bounds(cfg.trials, cfg.seed);
    let all_pass = ineq.all_pass() && div.all_pass();
    out.json(
        "verify.json",
        &json!({
            "name": cfg.name,
            "trials": cfg.trials,
            "dim": cfg.dim,
            "seed": cfg.seed,
            "all_pass": all_pass,
            "inequalities": ineq,
            "divergence": div,
        }),
    )?;
    if all_pass {
        return Ok(());
    }
    let failed: Vec<&str> = ineq.suites.iter().chain(&div.suites).filter(|s| !s.ok()).map(|s| s.name.as_str()).collect();
    Err(CliError::Property(format!("failing suites: {}", failed.join(", "))))
}
