//! Existence of deflators and construction of `(θ, ρ, r)`.
//!
//! At every grid point the drift condition reads `σθ + Γρ = a - r·1`, with
//! `Γ^{ij} = c_j γ^i(x_j)`. Solutions are not unique; a [`SolvePolicy`]
//! picks one: either the rate is pinned and `(θ, ρ)` is the minimal-norm
//! solution, or `(θ, ρ, r)` is minimal-norm jointly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Tolerances, Vector};
use crate::model::{build_mod_char, gamma_matrix, JumpMeasure, MarketSpec, ModifiedCharacteristics};

/// Label attached to a feasible verdict.
pub const NO_ARBITRAGE_LABEL: &str = "NUPBR, NAA1 and NA1 hold for the market extended by the savings account";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateMode {
    /// The short rate is given; `(θ, ρ)` is the minimal-norm solution.
    FixedRate { rate: f64 },
    /// `(θ, ρ, r)` is the minimal-norm solution of the augmented system.
    MinNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolvePolicy {
    pub mode: RateMode,
    /// Jump premia must satisfy `ρ_j <= 1 - margin`.
    pub margin: f64,
}

impl SolvePolicy {
    pub const DEFAULT_MARGIN: f64 = 1e-6;

    pub fn fixed_rate(rate: f64) -> Self {
        Self { mode: RateMode::FixedRate { rate }, margin: Self::DEFAULT_MARGIN }
    }

    pub fn min_norm() -> Self {
        Self { mode: RateMode::MinNorm, margin: Self::DEFAULT_MARGIN }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::invalid(format!("feasibility margin must be positive, got {}", self.margin)));
        }
        if let RateMode::FixedRate { rate } = self.mode {
            if !rate.is_finite() {
                return Err(Error::invalid("fixed rate must be finite"));
            }
        }
        Ok(())
    }
}

/// Deflator components at one grid point: market price of diffusion risk
/// `θ ∈ R^m`, jump risk premia `ρ ∈ R^n` (ψ at the marks) and short rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflatorPoint {
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub rate: f64,
}

impl DeflatorPoint {
    pub fn new(theta: Vec<f64>, rho: Vec<f64>, rate: f64) -> Self {
        Self { theta, rho, rate }
    }

    pub fn zero(m: usize, n: usize) -> Self {
        Self::new(vec![0.0; m], vec![0.0; n], 0.0)
    }

    pub fn theta_vec(&self) -> Vector {
        Vector::from_column_slice(&self.theta)
    }

    pub fn rho_vec(&self) -> Vector {
        Vector::from_column_slice(&self.rho)
    }

    /// Indices `j` with `ρ_j >= 1` (the deflator would not stay positive).
    pub fn nonpositive_jump_factors(&self) -> Vec<usize> {
        self.rho.iter().enumerate().filter(|(_, &r)| !(r < 1.0)).map(|(j, _)| j).collect()
    }

    fn ensure_positive_jump_factors(&self) -> Result<()> {
        let bad = self.nonpositive_jump_factors();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::domain(format!("jump risk premium must be < 1 at marks {bad:?}")))
        }
    }
}

/// Deflator components on every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflatorSpec {
    pub points: Vec<DeflatorPoint>,
}

impl DeflatorSpec {
    pub fn constant(point: DeflatorPoint, len: usize) -> Self {
        Self { points: vec![point; len] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> Result<&DeflatorPoint> {
        self.points
            .get(k)
            .ok_or_else(|| Error::invalid(format!("deflator has no entry for grid index {k}")))
    }

    pub fn check_dims(&self, m: usize, n: usize, len: usize) -> Result<()> {
        if self.points.len() != len {
            return Err(Error::invalid(format!(
                "deflator has {} grid entries, expected {len}",
                self.points.len()
            )));
        }
        for (k, p) in self.points.iter().enumerate() {
            if p.theta.len() != m || p.rho.len() != n {
                return Err(Error::invalid(format!(
                    "deflator entry {k} has theta/rho lengths {}/{}, expected {m}/{n}",
                    p.theta.len(),
                    p.rho.len()
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of the `c_mod x = a - r·1` existence test.
#[derive(Debug, Clone, PartialEq)]
pub struct Existence {
    pub feasible: bool,
    pub residual: f64,
    /// Minimal-norm `(x, r)` of the augmented system (a least-squares
    /// point when infeasible).
    pub x: Vector,
    pub rate: f64,
}

/// Solvability of `[c_mod | 1]·(x, r) = a`.
pub fn existence_check(mc: &ModifiedCharacteristics, tol: &Tolerances) -> Result<Existence> {
    let d = mc.drift.len();
    let mut m = Matrix::zeros(d, d + 1);
    m.view_mut((0, 0), (d, d)).copy_from(mc.c_mod.as_matrix());
    m.column_mut(d).fill(1.0);
    let f = linalg::solvable(&m, &mc.drift, tol)?;
    let w = linalg::pinv(&m, tol)? * &mc.drift;
    Ok(Existence {
        feasible: f.solvable,
        residual: f.residual,
        x: w.rows(0, d).into_owned(),
        rate: w[d],
    })
}

/// Solvability of `c_mod x = a - r·1` for a pinned rate.
pub fn existence_check_fixed_rate(mc: &ModifiedCharacteristics, rate: f64, tol: &Tolerances) -> Result<linalg::Feasibility> {
    let rhs = mc.drift.add_scalar(-rate);
    linalg::solvable(mc.c_mod.as_matrix(), &rhs, tol)
}

/// `[σ | Γ]` at grid index `k`.
fn risk_matrix(spec: &MarketSpec, k: usize) -> Result<Matrix> {
    let coeffs = spec.coefficients(k)?;
    let (d, m, n) = (spec.assets(), spec.factors(), spec.marks());
    let gamma = gamma_matrix(spec, k)?;
    let mut out = Matrix::zeros(d, m + n);
    out.view_mut((0, 0), (d, m)).copy_from(&coeffs.sigma);
    out.view_mut((0, m), (d, n)).copy_from(&gamma);
    Ok(out)
}

/// Solves the drift condition at grid index `k` under `policy`.
pub fn solve_mpr(spec: &MarketSpec, k: usize, policy: &SolvePolicy, tol: &Tolerances) -> Result<DeflatorPoint> {
    let point = solve_unchecked(spec, k, policy, tol)?;
    let violated = margin_violations(&point, policy.margin);
    if violated.is_empty() {
        Ok(point)
    } else {
        Err(Error::MarginViolated { marks: violated })
    }
}

fn solve_unchecked(spec: &MarketSpec, k: usize, policy: &SolvePolicy, tol: &Tolerances) -> Result<DeflatorPoint> {
    policy.validate()?;
    let (m, n) = (spec.factors(), spec.marks());
    let risk = risk_matrix(spec, k)?;
    let drift = &spec.coefficients(k)?.drift;
    match policy.mode {
        RateMode::FixedRate { rate } => {
            let sol = linalg::least_norm(&risk, &drift.add_scalar(-rate), tol)?;
            Ok(DeflatorPoint::new(sol.rows(0, m).iter().copied().collect(), sol.rows(m, n).iter().copied().collect(), rate))
        }
        RateMode::MinNorm => {
            let d = spec.assets();
            let mut aug = Matrix::zeros(d, m + n + 1);
            aug.view_mut((0, 0), (d, m + n)).copy_from(&risk);
            aug.column_mut(m + n).fill(1.0);
            let sol = linalg::least_norm(&aug, drift, tol)?;
            Ok(DeflatorPoint::new(
                sol.rows(0, m).iter().copied().collect(),
                sol.rows(m, n).iter().copied().collect(),
                sol[m + n],
            ))
        }
    }
}

fn margin_violations(point: &DeflatorPoint, margin: f64) -> Vec<usize> {
    point
        .rho
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 1.0 - margin)
        .map(|(j, _)| j)
        .collect()
}

/// `a - r·1 - σθ - Γρ` at grid index `k`.
pub fn drift_residual(spec: &MarketSpec, point: &DeflatorPoint, k: usize) -> Result<Vector> {
    let (m, n) = (spec.factors(), spec.marks());
    if point.theta.len() != m || point.rho.len() != n {
        return Err(Error::invalid(format!(
            "deflator point has theta/rho lengths {}/{}, market has {m} factors and {n} marks",
            point.theta.len(),
            point.rho.len()
        )));
    }
    let coeffs = spec.coefficients(k)?;
    let gamma = gamma_matrix(spec, k)?;
    Ok(coeffs.drift.add_scalar(-point.rate) - &coeffs.sigma * point.theta_vec() - gamma * point.rho_vec())
}

/// Coefficients of the numéraire `Z̄ = 1/Z`:
/// `Z̄ = E((r + ‖θ‖² + Σ_j c_j ρ_j²/(1-ρ_j))·λ + θ·W + ρ/(1-ρ) * (p - q))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElmnCoefficients {
    pub drift: f64,
    pub diffusion: Vec<f64>,
    pub jump: Vec<f64>,
}

pub fn elmn_coefficients(point: &DeflatorPoint, jumps: &JumpMeasure) -> Result<ElmnCoefficients> {
    point.ensure_positive_jump_factors()?;
    if point.rho.len() != jumps.len() {
        return Err(Error::invalid(format!(
            "deflator has {} jump premia, jump measure has {} marks",
            point.rho.len(),
            jumps.len()
        )));
    }
    let theta_sq: f64 = point.theta.iter().map(|t| t * t).sum();
    let jump_drift: f64 = point
        .rho
        .iter()
        .zip(jumps.intensities())
        .map(|(r, c)| c * r * r / (1.0 - r))
        .sum();
    Ok(ElmnCoefficients {
        drift: point.rate + theta_sq + jump_drift,
        diffusion: point.theta.clone(),
        jump: point.rho.iter().map(|r| r / (1.0 - r)).collect(),
    })
}

/// Market dynamics under the measure with density `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovTransform {
    pub spec: MarketSpec,
    /// Set when the deflator does not satisfy the drift condition at some
    /// grid point, in which case `spec` is not a drift-`r` market.
    pub drift_warning: bool,
    pub max_drift_residual: f64,
}

/// Replaces drifts by `r·1` and thins intensities to `(1 - ρ_j) c_j`.
/// The jump premia must be constant over the grid because intensities are.
pub fn girsanov_transform(spec: &MarketSpec, defl: &DeflatorSpec, tol: &Tolerances) -> Result<GirsanovTransform> {
    let len = spec.grid().len();
    defl.check_dims(spec.factors(), spec.marks(), len)?;
    for p in &defl.points {
        p.ensure_positive_jump_factors()?;
    }
    let rho0 = &defl.points[0].rho;
    if let Some(k) = defl.points.iter().position(|p| &p.rho != rho0) {
        return Err(Error::invalid(format!(
            "jump premia change at grid index {k}; thinned intensities must be time-homogeneous"
        )));
    }
    let thinned: Vec<f64> = spec
        .jumps()
        .intensities()
        .iter()
        .zip(rho0)
        .map(|(c, r)| (1.0 - r) * c)
        .collect();
    let jumps = JumpMeasure::new(spec.jumps().marks().to_vec(), thinned)?;

    let mut max_res = 0.0f64;
    let mut warn = false;
    let mut drifts = Vec::with_capacity(len);
    for k in 0..len {
        let p = &defl.points[k];
        let res = drift_residual(spec, p, k)?.norm();
        let a = &spec.coefficients(k)?.drift;
        warn |= res > tol.feasibility_threshold(a);
        max_res = max_res.max(res);
        drifts.push(Vector::from_element(spec.assets(), p.rate));
    }
    let spec = spec.with_drifts(&drifts)?.with_jumps(jumps)?;
    Ok(GirsanovTransform { spec, drift_warning: warn, max_drift_residual: max_res })
}

/// Per-grid-point row of a [`SolveReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub time: f64,
    pub feasible: bool,
    pub residual: f64,
    /// Solvability of `c_mod x = a - r·1` (joint in `(x, r)` for min-norm).
    pub c_mod_feasible: bool,
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub rate: f64,
    pub margin_violations: Vec<usize>,
}

/// Existence and construction results over the whole grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub policy: SolvePolicy,
    pub points: Vec<PointReport>,
    pub verdict: bool,
    pub label: Option<String>,
}

fn solve_residual(spec: &MarketSpec, k: usize, policy: &SolvePolicy, tol: &Tolerances) -> Result<f64> {
    let risk = risk_matrix(spec, k)?;
    let drift = &spec.coefficients(k)?.drift;
    let f = match policy.mode {
        RateMode::FixedRate { rate } => linalg::solvable(&risk, &drift.add_scalar(-rate), tol)?,
        RateMode::MinNorm => {
            let d = spec.assets();
            let mut aug = Matrix::zeros(d, risk.ncols() + 1);
            aug.view_mut((0, 0), (d, risk.ncols())).copy_from(&risk);
            aug.column_mut(risk.ncols()).fill(1.0);
            linalg::solvable(&aug, drift, tol)?
        }
    };
    Ok(f.residual)
}

/// Runs the existence test and the construction at every grid point.
pub fn analyze(spec: &MarketSpec, policy: &SolvePolicy, tol: &Tolerances) -> Result<SolveReport> {
    policy.validate()?;
    tol.validate()?;
    let mut points = Vec::with_capacity(spec.grid().len());
    for k in 0..spec.grid().len() {
        let mc = build_mod_char(spec, k, tol)?;
        let c_mod_feasible = match policy.mode {
            RateMode::FixedRate { rate } => existence_check_fixed_rate(&mc, rate, tol)?.solvable,
            RateMode::MinNorm => existence_check(&mc, tol)?.feasible,
        };
        let residual = solve_residual(spec, k, policy, tol)?;
        let row = match solve_unchecked(spec, k, policy, tol) {
            Ok(p) => PointReport {
                index: k,
                time: spec.grid().time(k),
                feasible: true,
                residual,
                c_mod_feasible,
                margin_violations: margin_violations(&p, policy.margin),
                theta: p.theta,
                rho: p.rho,
                rate: p.rate,
            },
            Err(Error::Infeasible { .. }) => PointReport {
                index: k,
                time: spec.grid().time(k),
                feasible: false,
                residual,
                c_mod_feasible,
                theta: Vec::new(),
                rho: Vec::new(),
                rate: match policy.mode {
                    RateMode::FixedRate { rate } => rate,
                    RateMode::MinNorm => f64::NAN,
                },
                margin_violations: Vec::new(),
            },
            Err(e) => return Err(e),
        };
        points.push(row);
    }
    let verdict = points.iter().all(|p| p.feasible && p.margin_violations.is_empty());
    Ok(SolveReport {
        policy: *policy,
        points,
        verdict,
        label: verdict.then(|| NO_ARBITRAGE_LABEL.to_string()),
    })
}

/// Solves on every grid point; fails at the first infeasible or
/// margin-violating point.
pub fn solve(spec: &MarketSpec, policy: &SolvePolicy, tol: &Tolerances) -> Result<DeflatorSpec> {
    let points = (0..spec.grid().len())
        .map(|k| solve_mpr(spec, k, policy, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(DeflatorSpec { points })
}
