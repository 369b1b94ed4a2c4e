//! Path simulation of the market, the deflator `Z = D/B` and the numéraire
//! `Z̄ = 1/Z`.
//!
//! Coefficients are constant on each grid step, so every process is stepped
//! by its exact stochastic-exponential factor. Jumps enter through Poisson
//! counts per mark and step.
//!
//! Randomness: path `p` draws from `ChaCha8Rng::seed_from_u64(seed)` on
//! stream `p`. Per step it takes `m` standard normals (scaled by `√Δt`),
//! then one Poisson count per mark with positive rate. Paths are therefore
//! independent of each other and of the thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{Coefficients, JumpMeasure, MarketSpec, TimeGrid};
use crate::solver::{elmn_coefficients, DeflatorPoint, DeflatorSpec};

/// Which grid indices are kept in a [`PathBundle`].
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Recording {
    #[default]
    All,
    /// Sorted, deduplicated grid indices.
    Indices(Vec<usize>),
}

impl Recording {
    /// Keeps `0` plus the given indices.
    pub fn at(indices: &[usize]) -> Self {
        let mut v = indices.to_vec();
        v.push(0);
        v.sort_unstable();
        v.dedup();
        Self::Indices(v)
    }

    fn resolve(&self, len: usize) -> Result<Vec<usize>> {
        match self {
            Self::All => Ok((0..len).collect()),
            Self::Indices(v) => {
                if let Some(k) = v.iter().find(|&&k| k >= len) {
                    return Err(Error::invalid(format!("recorded index {k} is off the grid (len {len})")));
                }
                if v.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("recorded indices must be strictly increasing"));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub seed: u64,
    pub record: Recording,
    /// Also step `Z̄` (only used when a deflator is simulated).
    pub numeraire: bool,
}

impl SimConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, seed, record: Recording::All, numeraire: true }
    }

    pub fn recording(mut self, record: Recording) -> Self {
        self.record = record;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::invalid("number of paths must be at least 1"));
        }
        Ok(())
    }
}

/// Heston stochastic volatility: `dv = κ(ϑ - v)dt + ξ√v dW̃` with
/// `W̃ = ρ W¹ + √(1-ρ²) W²`, asset driven by `√v dW¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonParams {
    pub s0: f64,
    pub drift: f64,
    pub rate: f64,
    pub kappa: f64,
    pub long_run: f64,
    pub xi: f64,
    pub v0: f64,
    #[serde(default)]
    pub corr: f64,
    #[serde(default = "HestonParams::default_floor")]
    pub floor: f64,
}

impl HestonParams {
    pub const DEFAULT_FLOOR: f64 = 1e-8;

    fn default_floor() -> f64 {
        Self::DEFAULT_FLOOR
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.s0, self.drift, self.rate, self.kappa, self.long_run, self.xi, self.v0, self.corr, self.floor];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("heston parameters must be finite"));
        }
        if !(self.s0 > 0.0 && self.kappa > 0.0 && self.long_run > 0.0 && self.xi > 0.0 && self.v0 > 0.0 && self.floor > 0.0) {
            return Err(Error::invalid("heston s0, kappa, long_run, xi, v0 and floor must be positive"));
        }
        if self.corr.abs() > 1.0 {
            return Err(Error::invalid(format!("heston correlation {} outside [-1, 1]", self.corr)));
        }
        if 2.0 * self.kappa * self.long_run <= self.xi * self.xi {
            return Err(Error::invalid(format!(
                "heston parameters violate 2·kappa·long_run > xi² ({} <= {})",
                2.0 * self.kappa * self.long_run,
                self.xi * self.xi
            )));
        }
        Ok(())
    }

    /// Effective volatility `√max(v, floor)`.
    pub fn vol(&self, v: f64) -> f64 {
        v.max(self.floor).sqrt()
    }

    /// `θ = (a - r)/√v` on the floored variance.
    pub fn market_price_of_risk(&self, v: f64) -> f64 {
        (self.drift - self.rate) / self.vol(v)
    }

    /// One-asset, two-factor market with `σ_k = (√v_k, 0)` along a
    /// variance path.
    pub fn path_spec(&self, grid: &TimeGrid, variance: &[f64]) -> Result<MarketSpec> {
        if variance.len() != grid.len() {
            return Err(Error::invalid("variance path length does not match the grid"));
        }
        let schedule = variance
            .iter()
            .map(|&v| Coefficients {
                drift: Vector::from_element(1, self.drift),
                sigma: Matrix::from_row_slice(1, 2, &[self.vol(v), 0.0]),
                gamma: Matrix::zeros(1, 0),
            })
            .collect();
        MarketSpec::new(vec![self.s0], JumpMeasure::none(), grid.clone(), schedule)
    }

    /// Pathwise deflator `θ_k = ((a - r)/√v_k, 0)` at rate `r`.
    pub fn path_deflator(&self, variance: &[f64]) -> DeflatorSpec {
        DeflatorSpec {
            points: variance
                .iter()
                .map(|&v| DeflatorPoint::new(vec![self.market_price_of_risk(v), 0.0], vec![], self.rate))
                .collect(),
        }
    }
}

/// Full-truncation Euler variance path and the number of grid points where
/// the variance fell below the floor.
fn variance_path(h: &HestonParams, grid: &TimeGrid, noise: &Noise) -> (Vec<f64>, usize) {
    let rho_bar = (1.0 - h.corr * h.corr).sqrt();
    let mut v = Vec::with_capacity(grid.len());
    let mut cur = h.v0;
    v.push(cur);
    for k in 0..grid.steps() {
        let dw = noise.dw(k, 2);
        let dw_v = h.corr * dw[0] + rho_bar * dw[1];
        let pos = cur.max(0.0);
        cur = cur + h.kappa * (h.long_run - pos) * grid.dt(k) + h.xi * pos.sqrt() * dw_v;
        v.push(cur);
    }
    let clamps = v.iter().filter(|&&x| x < h.floor).count();
    (v, clamps)
}

/// Driving noise of one path: Brownian increments and jump counts per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    dw: Vec<f64>,
    counts: Vec<u32>,
    m: usize,
    n: usize,
}

impl Noise {
    pub fn draw(seed: u64, path: u64, grid: &TimeGrid, m: usize, intensities: &[f64]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        let n = intensities.len();
        let steps = grid.steps();
        let mut dw = Vec::with_capacity(steps * m);
        let mut counts = Vec::with_capacity(steps * n);
        for k in 0..steps {
            let sd = grid.dt(k).sqrt();
            for _ in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                dw.push(sd * z);
            }
            for &c in intensities {
                let lambda = c * grid.dt(k);
                let count = if lambda > 0.0 {
                    let p = Poisson::new(lambda).map_err(|e| Error::invalid(format!("poisson rate {lambda}: {e}")))?;
                    p.sample(&mut rng) as u32
                } else {
                    0
                };
                counts.push(count);
            }
        }
        Ok(Self { dw, counts, m, n })
    }

    pub fn dw(&self, k: usize, m: usize) -> &[f64] {
        debug_assert_eq!(m, self.m);
        &self.dw[k * self.m..(k + 1) * self.m]
    }

    pub fn counts(&self, k: usize) -> &[u32] {
        &self.counts[k * self.n..(k + 1) * self.n]
    }
}

/// Step-`k` log-drifts and jump factors, independent of the noise.
struct StepPlan {
    sigma: Matrix,
    /// `a^i - Σ_j c_j γ^i_j - ½‖σ^i‖²`
    asset_drift: Vec<f64>,
    /// `1 + γ^i_j`, row-major by asset
    asset_jump: Vec<f64>,
    defl: Option<DeflStep>,
}

struct DeflStep {
    theta: Vec<f64>,
    rate: f64,
    /// `-½‖θ‖² + Σ c_j ρ_j`
    d_drift: f64,
    /// `1 - ρ_j`
    d_jump: Vec<f64>,
    /// ELMN drift minus `½‖θ‖² + Σ c_j ρ_j/(1-ρ_j)`
    zbar_drift: f64,
    /// `1 + ρ_j/(1-ρ_j)`
    zbar_jump: Vec<f64>,
}

fn plan(spec: &MarketSpec, defl: Option<&DeflatorSpec>) -> Result<Vec<StepPlan>> {
    let c = spec.jumps().intensities();
    let (d, n) = (spec.assets(), spec.marks());
    if let Some(df) = defl {
        df.check_dims(spec.factors(), n, spec.grid().len())?;
    }
    (0..spec.grid().steps())
        .map(|k| {
            let co = spec.coefficients(k)?;
            let asset_drift = (0..d)
                .map(|i| {
                    let comp: f64 = (0..n).map(|j| c[j] * co.gamma[(i, j)]).sum();
                    co.drift[i] - comp - 0.5 * co.sigma.row(i).norm_squared()
                })
                .collect();
            let asset_jump = (0..d).flat_map(|i| (0..n).map(move |j| 1.0 + co.gamma[(i, j)])).collect();
            let defl = defl.map(|df| defl_step(&df.points[k], spec.jumps())).transpose()?;
            Ok(StepPlan { sigma: co.sigma.clone(), asset_drift, asset_jump, defl })
        })
        .collect()
}

fn defl_step(p: &DeflatorPoint, jumps: &JumpMeasure) -> Result<DeflStep> {
    let e = elmn_coefficients(p, jumps)?;
    let c = jumps.intensities();
    let half_sq = 0.5 * p.theta.iter().map(|t| t * t).sum::<f64>();
    let comp_d: f64 = p.rho.iter().zip(c).map(|(r, c)| c * r).sum();
    let comp_z: f64 = e.jump.iter().zip(c).map(|(g, c)| c * g).sum();
    Ok(DeflStep {
        theta: p.theta.clone(),
        rate: p.rate,
        d_drift: -half_sq + comp_d,
        d_jump: p.rho.iter().map(|r| 1.0 - r).collect(),
        zbar_drift: e.drift - half_sq - comp_z,
        zbar_jump: e.jump.iter().map(|g| 1.0 + g).collect(),
    })
}

fn jump_product(factors: &[f64], counts: &[u32]) -> f64 {
    factors.iter().zip(counts).map(|(f, &n)| if n == 0 { 1.0 } else { f.powi(n as i32) }).product()
}

/// Values of one path at the recorded grid indices (flattened, row-major by
/// recorded index).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathData {
    /// Cumulative Brownian motion, `m` per record.
    pub w: Vec<f64>,
    /// Cumulative jump counts, `n` per record.
    pub counts: Vec<u32>,
    /// Asset prices, `d` per record.
    pub assets: Vec<f64>,
    /// Density `D`.
    pub density: Vec<f64>,
    /// Deflator `Z = D/B`.
    pub deflator: Vec<f64>,
    /// Numéraire `Z̄`.
    pub numeraire: Vec<f64>,
    /// `∫θ dt`, `m` per record.
    pub theta_integral: Vec<f64>,
    /// `max_k |Z̄_k Z_k - 1|` over all grid points.
    pub inverse_defect: f64,
    /// Grid points where a state-dependent variance hit its floor.
    pub clamps: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Market(MarketSpec),
    Heston(HestonParams, TimeGrid),
}

/// Simulated paths plus the data needed to replay their noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    source: Source,
    cfg: SimConfig,
    grid: TimeGrid,
    recorded: Vec<usize>,
    dims: (usize, usize, usize),
    intensities: Vec<f64>,
    /// Savings account `B` at the recorded indices, when a deflator is simulated.
    savings: Option<Vec<f64>>,
    /// `∫ c_j (1 - ρ_j) dt` at the recorded indices, `n` per record.
    thinned_compensator: Option<Vec<f64>>,
    paths: Vec<PathData>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn recorded(&self) -> &[usize] {
        &self.recorded
    }

    /// Position of grid index `k` among the recorded indices.
    pub fn record_of(&self, k: usize) -> Option<usize> {
        self.recorded.binary_search(&k).ok()
    }

    pub fn assets(&self) -> usize {
        self.dims.0
    }

    pub fn factors(&self) -> usize {
        self.dims.1
    }

    pub fn marks(&self) -> usize {
        self.dims.2
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn paths(&self) -> &[PathData] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn has_deflator(&self) -> bool {
        self.savings.is_some()
    }

    pub fn has_numeraire(&self) -> bool {
        self.paths.first().is_some_and(|p| !p.numeraire.is_empty())
    }

    pub fn initial(&self) -> Vec<f64> {
        match &self.source {
            Source::Market(s) => s.initial().to_vec(),
            Source::Heston(h, _) => vec![h.s0],
        }
    }

    pub fn savings(&self) -> Option<&[f64]> {
        self.savings.as_deref()
    }

    pub fn thinned_compensator(&self, r: usize, j: usize) -> Option<f64> {
        self.thinned_compensator.as_ref().map(|c| c[r * self.dims.2 + j])
    }

    pub fn asset(&self, p: usize, r: usize, i: usize) -> f64 {
        self.paths[p].assets[r * self.dims.0 + i]
    }

    pub fn w(&self, p: usize, r: usize, f: usize) -> f64 {
        self.paths[p].w[r * self.dims.1 + f]
    }

    pub fn count(&self, p: usize, r: usize, j: usize) -> u32 {
        self.paths[p].counts[r * self.dims.2 + j]
    }

    pub fn theta_integral(&self, p: usize, r: usize, f: usize) -> f64 {
        self.paths[p].theta_integral[r * self.dims.1 + f]
    }

    /// Total floor hits over all paths.
    pub fn clamps(&self) -> usize {
        self.paths.iter().map(|p| p.clamps).sum()
    }

    /// `max |Z̄ Z - 1|` over all paths and grid points.
    pub fn max_inverse_defect(&self) -> f64 {
        self.paths.iter().map(|p| p.inverse_defect).fold(0.0, f64::max)
    }
}

struct PathRun<'a> {
    plan: &'a [StepPlan],
    initial: &'a [f64],
    grid: &'a TimeGrid,
    recorded: &'a [usize],
    m: usize,
    numeraire: bool,
}

impl PathRun<'_> {
    fn run(&self, noise: &Noise, clamps: usize) -> PathData {
        let d = self.initial.len();
        let n = noise.n;
        let with_defl = self.plan.first().is_some_and(|s| s.defl.is_some());
        let with_zbar = with_defl && self.numeraire;
        let rec = self.recorded.len();
        let mut out = PathData {
            w: Vec::with_capacity(rec * self.m),
            counts: Vec::with_capacity(rec * n),
            assets: Vec::with_capacity(rec * d),
            clamps,
            ..PathData::default()
        };
        let mut w = vec![0.0; self.m];
        let mut cnt = vec![0u32; n];
        let mut s = self.initial.to_vec();
        let mut theta_int = vec![0.0; self.m];
        let (mut dens, mut log_b, mut zbar) = (1.0f64, 0.0f64, 1.0f64);
        let mut next = 0;
        for k in 0..self.grid.len() {
            if next < rec && self.recorded[next] == k {
                out.w.extend_from_slice(&w);
                out.counts.extend_from_slice(&cnt);
                out.assets.extend_from_slice(&s);
                if with_defl {
                    out.density.push(dens);
                    out.deflator.push(dens / log_b.exp());
                    out.theta_integral.extend_from_slice(&theta_int);
                }
                if with_zbar {
                    out.numeraire.push(zbar);
                }
                next += 1;
            }
            if with_zbar {
                let z = dens / log_b.exp();
                out.inverse_defect = out.inverse_defect.max((zbar * z - 1.0).abs());
            }
            if k == self.grid.steps() {
                break;
            }
            let dt = self.grid.dt(k);
            let step = &self.plan[k];
            let dw = noise.dw(k, self.m);
            let dn = noise.counts(k);
            for f in 0..self.m {
                w[f] += dw[f];
            }
            for j in 0..n {
                cnt[j] += dn[j];
            }
            for (i, si) in s.iter_mut().enumerate() {
                let diff: f64 = (0..self.m).map(|f| step.sigma[(i, f)] * dw[f]).sum();
                let jumps = jump_product(&step.asset_jump[i * n..(i + 1) * n], dn);
                *si *= (diff + step.asset_drift[i] * dt).exp() * jumps;
            }
            if let Some(df) = &step.defl {
                let th_dw: f64 = df.theta.iter().zip(dw).map(|(t, x)| t * x).sum();
                dens *= (-th_dw + df.d_drift * dt).exp() * jump_product(&df.d_jump, dn);
                log_b += df.rate * dt;
                for (acc, th) in theta_int.iter_mut().zip(&df.theta) {
                    *acc += th * dt;
                }
                if with_zbar {
                    zbar *= (th_dw + df.zbar_drift * dt).exp() * jump_product(&df.zbar_jump, dn);
                }
            }
        }
        out
    }
}

fn savings_and_compensator(
    defl: &DeflatorSpec,
    grid: &TimeGrid,
    recorded: &[usize],
    intensities: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = intensities.len();
    let (mut log_b, mut comp) = (0.0f64, vec![0.0; n]);
    let (mut b_out, mut c_out) = (Vec::new(), Vec::new());
    let mut next = 0;
    for k in 0..grid.len() {
        if next < recorded.len() && recorded[next] == k {
            b_out.push(log_b.exp());
            c_out.extend_from_slice(&comp);
            next += 1;
        }
        if k < grid.steps() {
            let p = &defl.points[k];
            log_b += p.rate * grid.dt(k);
            for j in 0..n {
                comp[j] += intensities[j] * (1.0 - p.rho[j]) * grid.dt(k);
            }
        }
    }
    (b_out, c_out)
}

fn simulate(spec: &MarketSpec, defl: Option<&DeflatorSpec>, cfg: &SimConfig) -> Result<PathBundle> {
    cfg.validate()?;
    let grid = spec.grid();
    let recorded = cfg.record.resolve(grid.len())?;
    let steps = plan(spec, defl)?;
    let intensities = spec.jumps().intensities().to_vec();
    let run = PathRun {
        plan: &steps,
        initial: spec.initial(),
        grid,
        recorded: &recorded,
        m: spec.factors(),
        numeraire: cfg.numeraire,
    };
    let paths = (0..cfg.paths)
        .into_par_iter()
        .map(|p| Noise::draw(cfg.seed, p as u64, grid, spec.factors(), &intensities).map(|nz| run.run(&nz, 0)))
        .collect::<Result<Vec<_>>>()?;
    let (savings, thinned) = match defl {
        Some(df) => {
            let (b, c) = savings_and_compensator(df, grid, &recorded, &intensities);
            (Some(b), Some(c))
        }
        None => (None, None),
    };
    Ok(PathBundle {
        source: Source::Market(spec.clone()),
        cfg: cfg.clone(),
        grid: grid.clone(),
        recorded,
        dims: (spec.assets(), spec.factors(), spec.marks()),
        intensities,
        savings,
        thinned_compensator: thinned,
        paths,
    })
}

/// Market paths only.
pub fn simulate_market(spec: &MarketSpec, cfg: &SimConfig) -> Result<PathBundle> {
    simulate(spec, None, cfg)
}

/// Adds `D`, `B` and `Z` (and `Z̄` when the bundle's config asks for it)
/// driven by the same Brownian increments and jump events as the market.
pub fn simulate_deflator(defl: &DeflatorSpec, bundle: &PathBundle) -> Result<PathBundle> {
    match &bundle.source {
        Source::Market(spec) => simulate(spec, Some(defl), &bundle.cfg),
        Source::Heston(..) => Err(Error::invalid(
            "heston deflators are state dependent; use simulate_heston with a deflator",
        )),
    }
}

/// Like [`simulate_deflator`] but always steps `Z̄`.
pub fn simulate_elmn(defl: &DeflatorSpec, bundle: &PathBundle) -> Result<PathBundle> {
    let mut b = bundle.clone();
    b.cfg.numeraire = true;
    simulate_deflator(defl, &b)
}

/// Heston paths, optionally with the pathwise deflator
/// `θ_t = ((a - r)/√v_t, 0)` at rate `r`.
pub fn simulate_heston(h: &HestonParams, grid: &TimeGrid, cfg: &SimConfig, with_deflator: bool) -> Result<PathBundle> {
    h.validate()?;
    cfg.validate()?;
    let recorded = cfg.record.resolve(grid.len())?;
    let paths = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let noise = Noise::draw(cfg.seed, p as u64, grid, 2, &[])?;
            let (v, clamps) = variance_path(h, grid, &noise);
            let spec = h.path_spec(grid, &v)?;
            let defl = with_deflator.then(|| h.path_deflator(&v));
            let steps = plan(&spec, defl.as_ref())?;
            let run = PathRun { plan: &steps, initial: spec.initial(), grid, recorded: &recorded, m: 2, numeraire: cfg.numeraire };
            Ok(run.run(&noise, clamps))
        })
        .collect::<Result<Vec<_>>>()?;
    let savings = with_deflator.then(|| recorded.iter().map(|&k| (h.rate * grid.time(k)).exp()).collect());
    Ok(PathBundle {
        source: Source::Heston(*h, grid.clone()),
        cfg: cfg.clone(),
        grid: grid.clone(),
        recorded: recorded.clone(),
        dims: (1, 2, 0),
        intensities: Vec::new(),
        savings,
        thinned_compensator: with_deflator.then(Vec::new),
        paths,
    })
}

/// Variance paths on the same random streams as [`simulate_heston`], with
/// their floor-hit counts.
pub fn heston_variance_paths(h: &HestonParams, grid: &TimeGrid, paths: usize, seed: u64) -> Result<Vec<(Vec<f64>, usize)>> {
    h.validate()?;
    (0..paths)
        .into_par_iter()
        .map(|p| Noise::draw(seed, p as u64, grid, 2, &[]).map(|nz| variance_path(h, grid, &nz)))
        .collect()
}
