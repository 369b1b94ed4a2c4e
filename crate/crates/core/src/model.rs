//! Market-model data and the pointwise characteristics `(a, c, v, c_mod, K)`.
//!
//! Asset `i` follows `S^i = S^i_0 E(X^i)` with
//! `X^i = a^i·λ + σ^i·W + γ^i * (p - q)`, where the Poisson random measure
//! `p` lives on a finite mark set with intensities `c_j`. Coefficients are
//! piecewise constant on a [`TimeGrid`] (left endpoint rule).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{gram_of_rows, FiniteKernel, Matrix, PsdMatrix, Tolerances, Vector};

/// Strictly increasing times starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        match times.first() {
            None => return Err(Error::invalid("time grid is empty")),
            Some(&t0) if t0 != 0.0 => {
                return Err(Error::invalid(format!("time grid must start at 0, got {t0}")))
            }
            _ => {}
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("time grid has non-finite entries"));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "time grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    /// `steps` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) || steps == 0 {
            return Err(Error::invalid(format!(
                "uniform grid needs positive horizon and steps, got {horizon} / {steps}"
            )));
        }
        Self::new((0..=steps).map(|k| horizon * k as f64 / steps as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points (`N + 1`).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Length of step `k -> k + 1`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    /// Index of the grid point within `tol` of `t`.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

/// Finitely supported jump measure `F = Σ_j c_j δ_{x_j}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpMeasure {
    marks: Vec<f64>,
    intensities: Vec<f64>,
}

impl JumpMeasure {
    pub fn new(marks: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if marks.len() != intensities.len() {
            return Err(Error::invalid(format!(
                "{} marks but {} intensities",
                marks.len(),
                intensities.len()
            )));
        }
        if let Some(x) = marks.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("jump mark {x} is not finite")));
        }
        if let Some((j, c)) = intensities.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::invalid(format!("intensity of mark {j} must be positive, got {c}")));
        }
        for i in 0..marks.len() {
            for j in 0..i {
                if marks[i] == marks[j] {
                    return Err(Error::invalid(format!("jump marks {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { marks, intensities })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Lognormal jump factor `Y = exp(N(mu, vol²))` with total intensity
    /// `intensity`, binned into `nodes` equal-probability cells. Each cell
    /// is represented by its conditional mean jump `E[Y - 1 | cell]` and
    /// carries intensity `intensity / nodes`.
    pub fn binned_lognormal(intensity: f64, mu: f64, vol: f64, nodes: usize) -> Result<Self> {
        if nodes == 0 || !(intensity > 0.0) || !(vol > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!(
                "lognormal binning needs intensity > 0, vol > 0, nodes >= 1 (got {intensity}, {vol}, {nodes})"
            )));
        }
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let n = nodes as f64;
        let bound = |k: usize| -> f64 {
            match k {
                0 => f64::NEG_INFINITY,
                k if k == nodes => f64::INFINITY,
                k => std.inverse_cdf(k as f64 / n),
            }
        };
        let mean_factor = (mu + 0.5 * vol * vol).exp();
        let marks = (0..nodes)
            .map(|k| {
                let (lo, hi) = (bound(k), bound(k + 1));
                let mass = std.cdf(hi - vol) - std.cdf(lo - vol);
                mean_factor * mass * n - 1.0
            })
            .collect();
        Self::new(marks, vec![intensity / n; nodes])
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }
}

/// Coefficients on one grid interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// Drift `a ∈ R^d`.
    pub drift: Vector,
    /// Diffusion `σ ∈ R^{d×m}`; row `i` is `σ^i`.
    pub sigma: Matrix,
    /// Jump coefficients `γ ∈ R^{d×n}`; entry `(i, j)` is `γ^i(x_j)`.
    pub gamma: Matrix,
}

/// A `d`-asset jump-diffusion market on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    initial: Vec<f64>,
    jumps: JumpMeasure,
    grid: TimeGrid,
    factors: usize,
    schedule: Vec<Coefficients>,
}

impl MarketSpec {
    /// `schedule[k]` holds the coefficients on `[t_k, t_{k+1})`; the last
    /// entry is the value at the final grid point.
    pub fn new(initial: Vec<f64>, jumps: JumpMeasure, grid: TimeGrid, schedule: Vec<Coefficients>) -> Result<Self> {
        let d = initial.len();
        if d == 0 {
            return Err(Error::invalid("market needs at least one asset"));
        }
        if let Some((i, s)) = initial.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid(format!("initial price of asset {i} must be positive, got {s}")));
        }
        if schedule.len() != grid.len() {
            return Err(Error::invalid(format!(
                "coefficient schedule has {} entries for {} grid points",
                schedule.len(),
                grid.len()
            )));
        }
        let factors = schedule[0].sigma.ncols();
        let n = jumps.len();
        for (k, c) in schedule.iter().enumerate() {
            if c.drift.len() != d || c.sigma.shape() != (d, factors) || c.gamma.shape() != (d, n) {
                return Err(Error::invalid(format!(
                    "coefficients at grid index {k} have shapes a:{}, sigma:{:?}, gamma:{:?}; expected {d}, ({d},{factors}), ({d},{n})",
                    c.drift.len(),
                    c.sigma.shape(),
                    c.gamma.shape()
                )));
            }
            let finite = c.drift.iter().chain(c.sigma.iter()).chain(c.gamma.iter()).all(|x| x.is_finite());
            if !finite {
                return Err(Error::invalid(format!("coefficients at grid index {k} are not finite")));
            }
            if let Some(pos) = c.gamma.iter().position(|&g| g <= -1.0) {
                let (i, j) = (pos % d, pos / d);
                return Err(Error::invalid(format!(
                    "jump coefficient must exceed -1 (asset {i}, mark {j}, grid index {k}: {})",
                    c.gamma[(i, j)]
                )));
            }
        }
        Ok(Self { initial, jumps, grid, factors, schedule })
    }

    /// Time-homogeneous coefficients on every grid point.
    pub fn constant(
        initial: Vec<f64>,
        drift: Vector,
        sigma: Matrix,
        gamma: Matrix,
        jumps: JumpMeasure,
        grid: TimeGrid,
    ) -> Result<Self> {
        let c = Coefficients { drift, sigma, gamma };
        let schedule = vec![c; grid.len()];
        Self::new(initial, jumps, grid, schedule)
    }

    /// One asset with scalar drift and volatility and no jumps.
    pub fn black_scholes(s0: f64, drift: f64, vol: f64, grid: TimeGrid) -> Result<Self> {
        Self::constant(
            vec![s0],
            Vector::from_element(1, drift),
            Matrix::from_element(1, 1, vol),
            Matrix::zeros(1, 0),
            JumpMeasure::none(),
            grid,
        )
    }

    /// Black–Scholes plus a Poisson process of intensity `intensity`
    /// producing relative jumps of size one (`γ = 1` at mark `x = 1`).
    pub fn bs_poisson(s0: f64, drift: f64, vol: f64, intensity: f64, grid: TimeGrid) -> Result<Self> {
        Self::constant(
            vec![s0],
            Vector::from_element(1, drift),
            Matrix::from_element(1, 1, vol),
            Matrix::from_element(1, 1, 1.0),
            JumpMeasure::new(vec![1.0], vec![intensity])?,
            grid,
        )
    }

    /// One asset whose jumps equal the marks (`γ(x) = x`).
    pub fn single_asset_marks(s0: f64, drift: f64, vol: f64, jumps: JumpMeasure, grid: TimeGrid) -> Result<Self> {
        let gamma = Matrix::from_row_slice(1, jumps.len(), jumps.marks());
        Self::constant(
            vec![s0],
            Vector::from_element(1, drift),
            Matrix::from_element(1, 1, vol),
            gamma,
            jumps,
            grid,
        )
    }

    pub fn assets(&self) -> usize {
        self.initial.len()
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn marks(&self) -> usize {
        self.jumps.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn jumps(&self) -> &JumpMeasure {
        &self.jumps
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn coefficients(&self, k: usize) -> Result<&Coefficients> {
        self.schedule
            .get(k)
            .ok_or_else(|| Error::invalid(format!("grid index {k} out of range (len {})", self.grid.len())))
    }

    pub fn schedule(&self) -> &[Coefficients] {
        &self.schedule
    }

    /// A copy with the coefficients at grid index `k` replaced.
    pub fn with_coefficients(&self, k: usize, c: Coefficients) -> Result<Self> {
        self.coefficients(k)?;
        let mut schedule = self.schedule.clone();
        schedule[k] = c;
        Self::new(self.initial.clone(), self.jumps.clone(), self.grid.clone(), schedule)
    }

    /// A copy with a different jump measure over the same marks count.
    pub fn with_jumps(&self, jumps: JumpMeasure) -> Result<Self> {
        Self::new(self.initial.clone(), jumps, self.grid.clone(), self.schedule.clone())
    }

    /// A copy with the drift replaced on every grid point.
    pub fn with_drifts(&self, drifts: &[Vector]) -> Result<Self> {
        if drifts.len() != self.schedule.len() {
            return Err(Error::invalid("drift schedule length does not match the grid"));
        }
        let schedule = self
            .schedule
            .iter()
            .zip(drifts)
            .map(|(c, a)| Coefficients { drift: a.clone(), ..c.clone() })
            .collect();
        Self::new(self.initial.clone(), self.jumps.clone(), self.grid.clone(), schedule)
    }
}

/// Pointwise characteristics: drift `a`, continuous covariance `c = σσᵀ`,
/// jump second moments `v`, their sum `c_mod`, and the jump kernel `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedCharacteristics {
    pub drift: Vector,
    pub c: PsdMatrix,
    pub v: PsdMatrix,
    pub c_mod: PsdMatrix,
    pub kernel: FiniteKernel,
}

/// `Γ^{ij} = c_j γ^i(x_j)` at grid index `k`.
pub fn gamma_matrix(spec: &MarketSpec, k: usize) -> Result<Matrix> {
    let gamma = &spec.coefficients(k)?.gamma;
    let mut out = gamma.clone();
    for (j, &c) in spec.jumps().intensities().iter().enumerate() {
        out.column_mut(j).scale_mut(c);
    }
    Ok(out)
}

/// Builds `(a, c, v, c_mod, K)` at grid index `k`.
pub fn build_mod_char(spec: &MarketSpec, k: usize, tol: &Tolerances) -> Result<ModifiedCharacteristics> {
    let coeffs = spec.coefficients(k)?;
    let d = spec.assets();
    let c = gram_of_rows(&coeffs.sigma);

    let weighted = gamma_matrix(spec, k)?;
    let v = PsdMatrix::new(&weighted * coeffs.gamma.transpose(), tol)?;

    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (j, &w) in spec.jumps().intensities().iter().enumerate() {
        let p: Vector = coeffs.gamma.column(j).into_owned();
        if p.iter().any(|&x| x != 0.0) {
            points.push(p);
            weights.push(w);
        }
    }
    let kernel = FiniteKernel::new(d, points, weights)?;
    let c_mod = PsdMatrix::new(c.as_matrix() + v.as_matrix(), tol)?;
    Ok(ModifiedCharacteristics { drift: coeffs.drift.clone(), c, v, c_mod, kernel })
}
