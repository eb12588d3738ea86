//! Per-command JSON configs. Unknown fields are rejected.

use std::path::{Path, PathBuf};

use bpca_core::io;
use bpca_core::model::{self, DataMatrix, Hyper, Provenance};
use bpca_core::CaviConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn read_raw(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Schema(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("config {} is not JSON: {e}", path.display())))
}

pub fn parse<T: DeserializeOwned + Validate>(raw: &serde_json::Value) -> Result<T, CliError> {
    let cfg: T = serde_json::from_value(raw.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub trait Validate {
    fn validate(&self) -> Result<(), CliError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub tau0: f64,
    pub lambda_diag: Vec<f64>,
}

impl ModelSpec {
    pub fn hyper(&self) -> Result<Hyper, CliError> {
        Ok(Hyper::new(self.n, self.d, self.k, self.tau0, self.lambda_diag.clone())?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub seed: u64,
    /// d × k loading matrix as rows; all ones when absent.
    #[serde(default)]
    pub w0: Option<Vec<Vec<f64>>>,
    /// Drop the noise term, so X = Z0 W0'.
    #[serde(default)]
    pub noiseless: bool,
}

impl Simulation {
    pub fn w0(&self, hyper: &Hyper) -> Result<nalgebra::DMatrix<f64>, CliError> {
        let w0 = match &self.w0 {
            Some(rows) => io::from_rows(rows)?,
            None => model::default_w0(hyper.d, hyper.k),
        };
        if w0.shape() != (hyper.d, hyper.k) {
            return Err(CliError::Schema(format!("w0 is {}x{}, expected {}x{}", w0.nrows(), w0.ncols(), hyper.d, hyper.k)));
        }
        Ok(w0)
    }

    pub fn draw(&self, hyper: &Hyper) -> Result<(DataMatrix, model::GenerativeDraw), CliError> {
        let w0 = self.w0(hyper)?;
        let draw = model::sample_draw(hyper, &w0, self.seed, self.noiseless)?;
        let data = DataMatrix::new(draw.x(), Provenance::Simulated { seed: self.seed, w0 })?;
        Ok((data, draw))
    }
}

/// Either a headerless CSV (relative paths resolve against the config file) or an inline draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv(PathBuf),
    Simulate(Simulation),
}

impl DataSource {
    pub fn load(&self, base: &Path, hyper: &Hyper) -> Result<DataMatrix, CliError> {
        let data = match self {
            DataSource::Csv(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let x = io::read_matrix_csv(&path).map_err(|e| CliError::Schema(format!("data {}: {e}", path.display())))?;
                DataMatrix::new(x, Provenance::Loaded { path: path.display().to_string() })?
            }
            DataSource::Simulate(sim) => sim.draw(hyper)?.0,
        };
        data.check_hyper(hyper)?;
        Ok(data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub seed: u64,
    #[serde(default)]
    pub w0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noiseless: bool,
}

impl SimulateConfig {
    pub fn simulation(&self) -> Simulation {
        Simulation { seed: self.seed, w0: self.w0.clone(), noiseless: self.noiseless }
    }
}

impl Validate for SimulateConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.simulation().w0(&self.model.hyper()?).map(|_| ())
    }
}

/// Shared by `fit` and `analyze-k1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub data: DataSource,
    #[serde(default)]
    pub cavi: CaviConfig,
}

impl Validate for FitConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.model.hyper()?;
        self.cavi.validate()?;
        Ok(())
    }
}

fn default_newton_tol() -> f64 {
    1e-12
}

fn default_alpha_max() -> f64 {
    1e-3
}

/// Shared by `gcorr` and `stationary`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub data: DataSource,
    #[serde(default)]
    pub cavi: CaviConfig,
    /// Newton stops once ‖∇Ψ0‖∞ falls to this level.
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    /// Half-width of the probe along the flattest Hessian direction.
    #[serde(default = "default_alpha_max")]
    pub flat_alpha_max: f64,
}

impl Validate for StationaryConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.model.hyper()?;
        self.cavi.validate()?;
        if !(self.newton_tol > 0.0 && self.flat_alpha_max > 0.0) {
            return Err(CliError::Schema("newton_tol and flat_alpha_max must be positive".into()));
        }
        Ok(())
    }
}

fn default_trials() -> usize {
    1000
}

fn default_dim() -> usize {
    3
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Validate for VerifyConfig {
    fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 || self.dim == 0 {
            return Err(CliError::Schema("trials and dim must be at least 1".into()));
        }
        Ok(())
    }
}
