//! TOML run configuration.
//!
//! Rates are per year and times in years. Every section except `[model]`
//! has defaults; unknown keys are rejected.

use elmd::linalg::{Matrix, Vector};
use elmd::model::{JumpMeasure, MarketSpec, TimeGrid};
use elmd::sim::HestonParams;
use elmd::solver::{RateMode, SolvePolicy};
use elmd::termstruct::{BhFamily, HjmSurface, TermDeflator, DEFAULT_QUAD_TOL};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub deflator: DeflatorConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hjm: Option<HjmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bh: Option<BhConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ModelConfig {
    BlackScholes(BlackScholesModel),
    Heston(HestonModel),
    MertonDiscretized(MertonModel),
    BsPoisson(BsPoissonModel),
    Custom(CustomModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackScholesModel {
    pub s0: f64,
    pub drift: f64,
    pub vol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsPoissonModel {
    pub s0: f64,
    pub drift: f64,
    pub vol: f64,
    pub intensity: f64,
}

/// Lognormal jump sizes binned into `nodes` equal-probability marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MertonModel {
    pub s0: f64,
    pub drift: f64,
    pub vol: f64,
    pub intensity: f64,
    pub jump_mu: f64,
    pub jump_vol: f64,
    pub nodes: usize,
}

/// The short rate comes from a fixed-rate `[deflator]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonModel {
    pub s0: f64,
    pub drift: f64,
    pub kappa: f64,
    pub long_run: f64,
    pub xi: f64,
    pub v0: f64,
    #[serde(default)]
    pub corr: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    HestonParams::DEFAULT_FLOOR
}

/// Time-homogeneous `d`-asset market: `sigma` is `d×m`, `gamma` is `d×n`
/// with one column per mark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub initial: Vec<f64>,
    pub drift: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModeName {
    FixedRate,
    MinNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeflatorConfig {
    pub mode: RateModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    SolvePolicy::DEFAULT_MARGIN
}

impl Default for DeflatorConfig {
    fn default() -> Self {
        Self { mode: RateModeName::MinNorm, rate: None, margin: default_margin() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_paths() -> usize {
    10_000
}

fn default_horizon() -> f64 {
    1.0
}

fn default_steps() -> usize {
    100
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { paths: default_paths(), horizon: default_horizon(), steps: default_steps(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    /// Defaults to the horizon when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_k_sigma")]
    pub k_sigma: f64,
}

fn default_k_sigma() -> f64 {
    elmd::verify::DEFAULT_K_SIGMA
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self { checkpoints: Vec::new(), k_sigma: default_k_sigma() }
    }
}

/// Forward-rate surface; `sigma[k][l]` and `gamma[k][l]` are vectors for
/// evaluation time `times[k]` and maturity `maturities[l]`. Without
/// `alpha`, only the synthesized drift is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjmConfig {
    pub maturities: Vec<f64>,
    pub times: Vec<f64>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intensities: Vec<f64>,
    pub initial_forward: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forwards: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<Vec<f64>>>,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<f64>,
    #[serde(default = "default_hjm_tol")]
    pub tolerance: f64,
}

fn default_hjm_tol() -> f64 {
    1e-6
}

/// Density family on an `x` grid. Without `alpha_bar` the family is
/// synthesized (centred volatilities, `r = ρ(0)`); otherwise `rate` is
/// required and the given family is checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BhConfig {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<Vec<f64>>,
    pub sigma_bar: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma_bar: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intensities: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

fn default_quad_tol() -> f64 {
    DEFAULT_QUAD_TOL
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn field(name: &str, e: elmd::Error) -> CliError {
    CliError::Validation(format!("{name}: {e}"))
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("cannot serialize config: {e}")))
    }

    /// Checks every section that is present.
    pub fn validate(&self) -> Result<(), CliError> {
        self.policy()?;
        let grid = self.grid()?;
        match &self.model {
            ModelConfig::Heston(_) => {
                self.heston()?;
            }
            _ => {
                self.market(grid)?;
            }
        }
        let s = &self.simulation;
        if s.paths == 0 {
            return Err(CliError::Validation("simulation.paths must be at least 1".into()));
        }
        let v = &self.verification;
        if !(v.k_sigma.is_finite() && v.k_sigma > 0.0) {
            return Err(CliError::Validation(format!("verification.k_sigma must be positive, got {}", v.k_sigma)));
        }
        if let Some(t) = v.checkpoints.iter().find(|t| !(t.is_finite() && **t >= 0.0 && **t <= s.horizon)) {
            return Err(CliError::Validation(format!("verification.checkpoints: {t} is outside [0, horizon]")));
        }
        if self.hjm.is_some() {
            self.hjm_surface()?;
        }
        if let Some(b) = &self.bh {
            if b.alpha_bar.is_some() {
                self.bh_family()?;
            } else {
                check_quad_tol(b.quad_tol)?;
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<SolvePolicy, CliError> {
        let d = &self.deflator;
        let mode = match (d.mode, d.rate) {
            (RateModeName::FixedRate, Some(rate)) => RateMode::FixedRate { rate },
            (RateModeName::FixedRate, None) => {
                return Err(CliError::Validation("deflator.rate is required for mode fixed_rate".into()))
            }
            (RateModeName::MinNorm, None) => RateMode::MinNorm,
            (RateModeName::MinNorm, Some(_)) => {
                return Err(CliError::Validation("deflator.rate is not allowed for mode min_norm".into()))
            }
        };
        let p = SolvePolicy { mode, margin: d.margin };
        p.validate().map_err(|e| field("deflator", e))?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        let s = &self.simulation;
        TimeGrid::uniform(s.horizon, s.steps).map_err(|e| field("simulation", e))
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        if self.verification.checkpoints.is_empty() {
            vec![self.simulation.horizon]
        } else {
            self.verification.checkpoints.clone()
        }
    }

    /// The market for every preset except Heston.
    pub fn market(&self, grid: TimeGrid) -> Result<MarketSpec, CliError> {
        let m = |e| field("model", e);
        match &self.model {
            ModelConfig::BlackScholes(b) => MarketSpec::black_scholes(b.s0, b.drift, b.vol, grid).map_err(m),
            ModelConfig::BsPoisson(b) => MarketSpec::bs_poisson(b.s0, b.drift, b.vol, b.intensity, grid).map_err(m),
            ModelConfig::MertonDiscretized(b) => {
                let jumps = JumpMeasure::binned_lognormal(b.intensity, b.jump_mu, b.jump_vol, b.nodes).map_err(m)?;
                MarketSpec::single_asset_marks(b.s0, b.drift, b.vol, jumps, grid).map_err(m)
            }
            ModelConfig::Custom(c) => custom_market(c, grid),
            ModelConfig::Heston(_) => Err(CliError::Validation(
                "model: the heston preset has state-dependent coefficients; use its variance paths".into(),
            )),
        }
    }

    pub fn heston(&self) -> Result<HestonParams, CliError> {
        let ModelConfig::Heston(h) = &self.model else {
            return Err(CliError::Validation("model: not a heston preset".into()));
        };
        let rate = match self.policy()?.mode {
            RateMode::FixedRate { rate } => rate,
            RateMode::MinNorm => {
                return Err(CliError::Validation("deflator: the heston preset needs mode fixed_rate".into()))
            }
        };
        let p = HestonParams {
            s0: h.s0,
            drift: h.drift,
            rate,
            kappa: h.kappa,
            long_run: h.long_run,
            xi: h.xi,
            v0: h.v0,
            corr: h.corr,
            floor: h.floor,
        };
        p.validate().map_err(|e| field("model", e))?;
        Ok(p)
    }

    pub fn hjm_surface(&self) -> Result<(HjmSurface, TermDeflator), CliError> {
        let h = self.hjm.as_ref().ok_or_else(|| CliError::Validation("missing [hjm] section".into()))?;
        let (nk, nl) = (h.times.len(), h.maturities.len());
        let gamma = if h.gamma.is_empty() { vec![vec![vec![]; nl]; nk] } else { h.gamma.clone() };
        let alpha = h.alpha.clone().unwrap_or_else(|| vec![vec![0.0; nl]; nk]);
        let surface = HjmSurface::new(
            h.maturities.clone(),
            h.times.clone(),
            alpha,
            h.sigma.clone(),
            gamma,
            h.intensities.clone(),
            h.initial_forward.clone(),
            h.forwards.clone(),
        )
        .map_err(|e| field("hjm", e))?;
        if h.theta.len() != surface.factors() || h.rho.len() != surface.marks() {
            return Err(CliError::Validation(format!(
                "hjm: theta/rho need {} and {} entries",
                surface.factors(),
                surface.marks()
            )));
        }
        if !(h.tolerance.is_finite() && h.tolerance > 0.0) {
            return Err(CliError::Validation("hjm.tolerance must be positive".into()));
        }
        Ok((surface, TermDeflator::constant(h.theta.clone(), h.rho.clone(), nk)))
    }

    /// The configured family as given; requires `alpha_bar`.
    pub fn bh_family(&self) -> Result<BhFamily, CliError> {
        let b = self.bh.as_ref().ok_or_else(|| CliError::Validation("missing [bh] section".into()))?;
        let alpha = b
            .alpha_bar
            .clone()
            .ok_or_else(|| CliError::Validation("bh.alpha_bar is required to check a given family".into()))?;
        if b.rate.is_none() {
            return Err(CliError::Validation("bh.rate is required with bh.alpha_bar".into()));
        }
        BhFamily::new(
            b.x.clone(),
            b.density.clone(),
            alpha,
            b.sigma_bar.clone(),
            self.bh_gamma(),
            b.intensities.clone(),
            b.quad_tol,
        )
        .map_err(|e| field("bh", e))
    }

    pub(crate) fn bh_gamma(&self) -> Vec<Vec<f64>> {
        let b = self.bh.as_ref().expect("bh section");
        if b.gamma_bar.is_empty() {
            vec![vec![]; b.x.len()]
        } else {
            b.gamma_bar.clone()
        }
    }
}

fn check_quad_tol(t: f64) -> Result<(), CliError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("bh.quad_tol must be positive, got {t}")))
    }
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<Matrix, CliError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Validation(format!("model.{name} must be {nrows}×{ncols}")));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn custom_market(c: &CustomModel, grid: TimeGrid) -> Result<MarketSpec, CliError> {
    let d = c.initial.len();
    let m = c.sigma.first().map_or(0, Vec::len);
    let n = c.marks.len();
    if c.drift.len() != d {
        return Err(CliError::Validation(format!("model.drift must have {d} entries")));
    }
    let sigma = rows_to_matrix("sigma", &c.sigma, d, m)?;
    let gamma = if n == 0 && c.gamma.is_empty() {
        Matrix::zeros(d, 0)
    } else {
        rows_to_matrix("gamma", &c.gamma, d, n)?
    };
    let jumps = JumpMeasure::new(c.marks.clone(), c.intensities.clone()).map_err(|e| field("model", e))?;
    MarketSpec::constant(c.initial.clone(), Vector::from_vec(c.drift.clone()), sigma, gamma, jumps, grid)
        .map_err(|e| field("model", e))
}
