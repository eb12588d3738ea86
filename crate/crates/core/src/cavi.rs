//! Block updates, the ELBO and the coordinate ascent loop.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BpcaError, Result};
use crate::linalg;
use crate::model::{DataMatrix, Hyper};

/// N(mean, I_r ⊗ row_cov).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormal {
    #[serde(with = "crate::io::mat_rows")]
    pub mean: DMatrix<f64>,
    #[serde(with = "crate::io::mat_rows")]
    pub row_cov: DMatrix<f64>,
}

impl MatrixNormal {
    pub fn new(mean: DMatrix<f64>, row_cov: DMatrix<f64>) -> Result<Self> {
        let mn = MatrixNormal { mean, row_cov };
        mn.validate()?;
        Ok(mn)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.mean.ncols();
        if self.row_cov.nrows() != k || self.row_cov.ncols() != k {
            return Err(BpcaError::Dimension(format!(
                "row covariance is {}x{}, mean has {k} columns",
                self.row_cov.nrows(),
                self.row_cov.ncols()
            )));
        }
        linalg::ensure_finite(&self.mean, "mean")?;
        let asym = (&self.row_cov - self.row_cov.transpose()).amax();
        if asym > 1e-12 * (1.0 + self.row_cov.amax()) {
            return Err(BpcaError::NotPositiveDefinite(format!("row covariance asymmetric by {asym:e}")));
        }
        if !linalg::is_spd(&self.row_cov) {
            return Err(BpcaError::NotPositiveDefinite("row covariance".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn k(&self) -> usize {
        self.mean.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub q_w: MatrixNormal,
    pub q_z: MatrixNormal,
}

impl VariationalState {
    pub fn new(mu_w: DMatrix<f64>, sigma_w: DMatrix<f64>, mu_z: DMatrix<f64>, sigma_z: DMatrix<f64>) -> Result<Self> {
        let s = VariationalState {
            q_w: MatrixNormal::new(mu_w, sigma_w)?,
            q_z: MatrixNormal::new(mu_z, sigma_z)?,
        };
        if s.q_w.k() != s.q_z.k() {
            return Err(BpcaError::Dimension("q_w and q_z disagree on k".into()));
        }
        Ok(s)
    }

    pub fn mu_w(&self) -> &DMatrix<f64> {
        &self.q_w.mean
    }
    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.q_w.row_cov
    }
    pub fn mu_z(&self) -> &DMatrix<f64> {
        &self.q_z.mean
    }
    pub fn sigma_z(&self) -> &DMatrix<f64> {
        &self.q_z.row_cov
    }
    pub fn k(&self) -> usize {
        self.q_w.k()
    }

    pub fn check_hyper(&self, hyper: &Hyper) -> Result<()> {
        if self.q_w.rows() != hyper.d || self.q_z.rows() != hyper.n || self.k() != hyper.k {
            return Err(BpcaError::Dimension(format!(
                "state is (W {}x{}, Z {}x{}), hyper is n={}, d={}, k={}",
                self.q_w.rows(),
                self.k(),
                self.q_z.rows(),
                self.q_z.k(),
                hyper.n,
                hyper.d,
                hyper.k
            )));
        }
        Ok(())
    }

    /// Largest absolute entry difference over all four blocks.
    pub fn max_abs_diff(&self, other: &VariationalState) -> f64 {
        [
            (self.mu_w() - other.mu_w()).amax(),
            (self.sigma_w() - other.sigma_w()).amax(),
            (self.mu_z() - other.mu_z()).amax(),
            (self.sigma_z() - other.sigma_z()).amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn max_abs_entry(&self) -> f64 {
        [self.mu_w().amax(), self.sigma_w().amax(), self.mu_z().amax(), self.sigma_z().amax()]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Starting point for q_Z; q_W is produced by the first update.
#[derive(Debug, Clone, PartialEq)]
pub enum MuZInit {
    Value(f64),
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaZInit {
    Identity,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(with = "mu_z_init_serde", default = "default_mu_z")]
    pub mu_z: MuZInit,
    #[serde(with = "sigma_z_init_serde", default = "default_sigma_z")]
    pub sigma_z: SigmaZInit,
}

fn default_mu_z() -> MuZInit {
    MuZInit::Value(0.1)
}

fn default_sigma_z() -> SigmaZInit {
    SigmaZInit::Identity
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec { mu_z: default_mu_z(), sigma_z: default_sigma_z() }
    }
}

impl InitSpec {
    pub fn resolve(&self, n: usize, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mu_z = match self.mu_z {
            MuZInit::Value(v) => DMatrix::from_element(n, k, v),
            MuZInit::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let vals: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(&mut rng)).collect();
                DMatrix::from_row_slice(n, k, &vals)
            }
        };
        let sigma_z = match self.sigma_z {
            SigmaZInit::Identity => DMatrix::identity(k, k),
            SigmaZInit::Value(v) if v > 0.0 && v.is_finite() => DMatrix::identity(k, k) * v,
            SigmaZInit::Value(v) => {
                return Err(BpcaError::Precondition(format!("sigma_z init must be positive, got {v}")))
            }
        };
        Ok((mu_z, sigma_z))
    }
}

fn parse_random(s: &str) -> Option<u64> {
    s.trim().strip_prefix("random(")?.strip_suffix(')')?.trim().parse().ok()
}

mod mu_z_init_serde {
    use super::{parse_random, MuZInit};
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &MuZInit, s: S) -> Result<S::Ok, S::Error> {
        match v {
            MuZInit::Value(x) => Raw::Num(*x).serialize(s),
            MuZInit::Random(seed) => Raw::Str(format!("random({seed})")).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MuZInit, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(MuZInit::Value(x)),
            Raw::Str(s) => {
                if let Some(seed) = parse_random(&s) {
                    Ok(MuZInit::Random(seed))
                } else if let Ok(x) = s.trim().parse::<f64>() {
                    Ok(MuZInit::Value(x))
                } else {
                    Err(D::Error::custom(format!("mu_z init must be a number or \"random(<seed>)\", got {s:?}")))
                }
            }
        }
    }
}

mod sigma_z_init_serde {
    use super::SigmaZInit;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &SigmaZInit, s: S) -> Result<S::Ok, S::Error> {
        match v {
            SigmaZInit::Identity => Raw::Str("identity".into()).serialize(s),
            SigmaZInit::Value(x) => Raw::Num(*x).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SigmaZInit, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(SigmaZInit::Value(x)),
            Raw::Str(s) if s.trim() == "identity" => Ok(SigmaZInit::Identity),
            Raw::Str(s) => s
                .trim()
                .parse::<f64>()
                .map(SigmaZInit::Value)
                .map_err(|_| D::Error::custom(format!("sigma_z init must be \"identity\" or a number, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaviConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub init: InitSpec,
}

fn default_epsilon() -> f64 {
    1e-15
}

fn default_max_iters() -> usize {
    100_000
}

impl Default for CaviConfig {
    fn default() -> Self {
        CaviConfig { epsilon: default_epsilon(), max_iters: default_max_iters(), init: InitSpec::default() }
    }
}

impl CaviConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(BpcaError::Precondition("epsilon must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(BpcaError::Precondition("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub elbo: f64,
    pub delta_rel: f64,
    pub mu_z_norm: f64,
    pub mu_w_norm: f64,
    pub sigma_z_norm: f64,
    pub sigma_w_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "t", rename_all = "snake_case")]
pub enum TerminalStatus {
    Converged(usize),
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub records: Vec<TraceRecord>,
    pub status: TerminalStatus,
}

impl TraceLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<TraceRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(BpcaError::from))
            .collect()
    }
}

/// Σ_W = (τ0(nΣ_Z + μ_Z'μ_Z) + Λ)⁻¹, μ_W = τ0 X'μ_Z Σ_W.
pub fn update_w(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<VariationalState> {
    state.check_hyper(hyper)?;
    data.check_hyper(hyper)?;
    let mu_z = state.mu_z();
    let prec = (state.sigma_z() * hyper.n as f64 + mu_z.transpose() * mu_z) * hyper.tau0 + hyper.lambda();
    let sigma_w = linalg::spd_inverse(&prec)?;
    let mu_w = data.x.transpose() * mu_z * &sigma_w * hyper.tau0;
    linalg::ensure_finite(&mu_w, "mu_w update")?;
    Ok(VariationalState { q_w: MatrixNormal { mean: mu_w, row_cov: sigma_w }, q_z: state.q_z.clone() })
}

/// Σ_Z = (τ0(dΣ_W + μ_W'μ_W) + I)⁻¹, μ_Z = τ0 X μ_W Σ_Z.
pub fn update_z(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<VariationalState> {
    state.check_hyper(hyper)?;
    data.check_hyper(hyper)?;
    let mu_w = state.mu_w();
    let k = hyper.k;
    let prec = (state.sigma_w() * hyper.d as f64 + mu_w.transpose() * mu_w) * hyper.tau0 + DMatrix::identity(k, k);
    let sigma_z = linalg::spd_inverse(&prec)?;
    let mu_z = &data.x * mu_w * &sigma_z * hyper.tau0;
    linalg::ensure_finite(&mu_z, "mu_z update")?;
    Ok(VariationalState { q_w: state.q_w.clone(), q_z: MatrixNormal { mean: mu_z, row_cov: sigma_z } })
}

pub fn gamma_w(state: &VariationalState, d: usize) -> DMatrix<f64> {
    state.sigma_w() * d as f64 + state.mu_w().transpose() * state.mu_w()
}

pub fn gamma_z(state: &VariationalState, n: usize) -> DMatrix<f64> {
    state.sigma_z() * n as f64 + state.mu_z().transpose() * state.mu_z()
}

/// ELBO with the additive constant dropped.
pub fn elbo_0(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<f64> {
    state.check_hyper(hyper)?;
    data.check_hyper(hyper)?;
    let (n, d, tau0) = (hyper.n as f64, hyper.d as f64, hyper.tau0);
    let lambda = &hyper.lambda_diag;
    let (mu_w, mu_z, sigma_w, sigma_z) = (state.mu_w(), state.mu_z(), state.sigma_w(), state.sigma_z());
    let fit = (&data.x * mu_w).component_mul(mu_z).sum();
    let gw = gamma_w(state, hyper.d);
    let gz = gamma_z(state, hyper.n);
    let tr_lambda_sigma: f64 = (0..hyper.k).map(|j| lambda[j] * sigma_w[(j, j)]).sum();
    let tr_mu_lambda_mu: f64 = (0..hyper.k).map(|j| lambda[j] * mu_w.column(j).norm_squared()).sum();
    let value = tau0 * fit - 0.5 * tau0 * linalg::trace_prod(&gw, &gz) - 0.5 * d * tr_lambda_sigma - 0.5 * tr_mu_lambda_mu
        - 0.5 * gz.trace()
        + 0.5 * d * linalg::spd_logdet(sigma_w)?
        + 0.5 * n * linalg::spd_logdet(sigma_z)?;
    if !value.is_finite() {
        return Err(BpcaError::NonFinite("elbo".into()));
    }
    Ok(value)
}

/// Initial state: q_Z from the config, q_W a placeholder that the first sweep overwrites.
pub fn initial_state(data: &DataMatrix, hyper: &Hyper, config: &CaviConfig) -> Result<VariationalState> {
    let (mu_z, sigma_z) = config.init.resolve(hyper.n, hyper.k)?;
    initial_state_from(data, hyper, mu_z, sigma_z)
}

pub fn initial_state_from(
    data: &DataMatrix,
    hyper: &Hyper,
    mu_z: DMatrix<f64>,
    sigma_z: DMatrix<f64>,
) -> Result<VariationalState> {
    hyper.validate()?;
    data.check_hyper(hyper)?;
    if mu_z.amax() == 0.0 {
        return Err(BpcaError::Precondition("initial mu_z must be nonzero".into()));
    }
    VariationalState::new(DMatrix::zeros(hyper.d, hyper.k), DMatrix::identity(hyper.k, hyper.k), mu_z, sigma_z)
}

fn record(t: usize, elbo: f64, delta_rel: f64, s: &VariationalState) -> TraceRecord {
    TraceRecord {
        t,
        elbo,
        delta_rel,
        mu_z_norm: s.mu_z().norm(),
        mu_w_norm: s.mu_w().norm(),
        sigma_z_norm: s.sigma_z().norm(),
        sigma_w_norm: s.sigma_w().norm(),
    }
}

pub fn sweep(state: &VariationalState, data: &DataMatrix, hyper: &Hyper) -> Result<VariationalState> {
    update_z(&update_w(state, data, hyper)?, data, hyper)
}

/// The CAVI loop. The first relative increase is measured against the half-step state (q_W⁽¹⁾, q_Z⁽⁰⁾).
pub fn run_cavi(data: &DataMatrix, hyper: &Hyper, config: &CaviConfig) -> Result<(VariationalState, TraceLog)> {
    let init = initial_state(data, hyper, config)?;
    run_cavi_observed(data, hyper, config, init, |_, _| {})
}

/// As [`run_cavi`] from an explicit start, calling `observe(t, state)` for t = 0 and after every sweep.
pub fn run_cavi_observed<F>(
    data: &DataMatrix,
    hyper: &Hyper,
    config: &CaviConfig,
    init: VariationalState,
    mut observe: F,
) -> Result<(VariationalState, TraceLog)>
where
    F: FnMut(usize, &VariationalState),
{
    config.validate()?;
    init.check_hyper(hyper)?;
    if init.mu_z().amax() == 0.0 {
        return Err(BpcaError::Precondition("initial mu_z must be nonzero".into()));
    }
    observe(0, &init);
    let half = update_w(&init, data, hyper)?;
    let mut prev_elbo = elbo_0(&half, data, hyper)?;
    let mut state = update_z(&half, data, hyper)?;
    let mut records = Vec::new();
    let mut status = TerminalStatus::MaxIters;
    for t in 1..=config.max_iters {
        if t > 1 {
            state = sweep(&state, data, hyper)?;
        }
        observe(t, &state);
        let elbo = elbo_0(&state, data, hyper)?;
        let delta_rel = (elbo - prev_elbo) / (prev_elbo.abs() + 1.0);
        records.push(record(t, elbo, delta_rel, &state));
        prev_elbo = elbo;
        if delta_rel <= config.epsilon {
            status = TerminalStatus::Converged(t);
            break;
        }
    }
    Ok((state, TraceLog { records, status }))
}

/// Keeps sweeping until successive states agree to a few ulps or `max_sweeps` is reached.
/// Returns the final state and the number of extra sweeps.
pub fn run_to_limit(
    start: &VariationalState,
    data: &DataMatrix,
    hyper: &Hyper,
    max_sweeps: usize,
) -> Result<(VariationalState, usize)> {
    run_to_limit_observed(start, data, hyper, max_sweeps, |_, _| {})
}

/// As [`run_to_limit`], calling `observe(s, state)` after extra sweep s.
pub fn run_to_limit_observed<F>(
    start: &VariationalState,
    data: &DataMatrix,
    hyper: &Hyper,
    max_sweeps: usize,
    mut observe: F,
) -> Result<(VariationalState, usize)>
where
    F: FnMut(usize, &VariationalState),
{
    let mut state = start.clone();
    for s in 1..=max_sweeps {
        let next = sweep(&state, data, hyper)?;
        let stalled = next.max_abs_diff(&state) <= 8.0 * f64::EPSILON * next.max_abs_entry();
        state = next;
        observe(s, &state);
        if stalled {
            return Ok((state, s));
        }
    }
    Ok((state, max_sweeps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar() -> (DataMatrix, Hyper) {
        (
            DataMatrix::new(dmatrix![2.0], Provenance::Loaded { path: "-".into() }).unwrap(),
            Hyper::new(1, 1, 1, 1.0, vec![1.0]).unwrap(),
        )
    }

    #[test]
    fn scalar_sweep() {
        let (data, h) = scalar();
        let s0 = VariationalState::new(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let s1 = update_w(&s0, &data, &h).unwrap();
        assert_relative_eq!(s1.sigma_w()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s1.mu_w()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        let s2 = update_z(&s1, &data, &h).unwrap();
        assert_relative_eq!(s2.sigma_z()[(0, 0)], 9.0 / 16.0, epsilon = 1e-15);
        assert_relative_eq!(s2.mu_z()[(0, 0)], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn zero_mean_update_w() {
        let data = DataMatrix::new(dmatrix![1.0; 3.0], Provenance::Loaded { path: "-".into() }).unwrap();
        let h = Hyper::new(2, 1, 1, 1.0, vec![1.0]).unwrap();
        let s0 = VariationalState::new(dmatrix![5.0], dmatrix![1.0], dmatrix![0.0; 0.0], dmatrix![1.0]).unwrap();
        let s1 = update_w(&s0, &data, &h).unwrap();
        assert_relative_eq!(s1.sigma_w()[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s1.mu_w()[(0, 0)], 0.0);
    }

    #[test]
    fn elbo_at_trivial_state() {
        let data = DataMatrix::new(dmatrix![1.0], Provenance::Loaded { path: "-".into() }).unwrap();
        let h = Hyper::new(1, 1, 1, 1.0, vec![1.0]).unwrap();
        let s = VariationalState::new(dmatrix![0.0], dmatrix![1.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
        assert_relative_eq!(elbo_0(&s, &data, &h).unwrap(), -1.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_init_rejected() {
        let (data, h) = scalar();
        let cfg = CaviConfig { init: InitSpec { mu_z: MuZInit::Value(0.0), sigma_z: SigmaZInit::Identity }, ..Default::default() };
        assert!(matches!(run_cavi(&data, &h, &cfg), Err(BpcaError::Precondition(_))));
    }

    #[test]
    fn config_json_forms() {
        let c: CaviConfig = serde_json::from_str(r#"{"epsilon":1e-6,"max_iters":10,"init":{"mu_z":"random(7)","sigma_z":"identity"}}"#).unwrap();
        assert_eq!(c.init.mu_z, MuZInit::Random(7));
        let c: CaviConfig = serde_json::from_str(r#"{"init":{"mu_z":0.1,"sigma_z":2.0}}"#).unwrap();
        assert_eq!(c.init.sigma_z, SigmaZInit::Value(2.0));
        assert_eq!(c.max_iters, 100_000);
        assert!(serde_json::from_str::<CaviConfig>(r#"{"init":{"mu_z":"bogus","sigma_z":"identity"}}"#).is_err());
        let back: CaviConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let c: CaviConfig = serde_json::from_str(r#"{"init":{"mu_z":"random(3)"}}"#).unwrap();
        assert_eq!(c.init.sigma_z, SigmaZInit::Identity);
        assert!(serde_json::from_str::<CaviConfig>(r#"{"init":{"mu":0.1}}"#).is_err());
    }
}
