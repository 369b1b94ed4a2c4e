//! Drift conditions for forward-rate (HJM) and density-based
//! (Brody–Hughston) term-structure models on discrete grids.
//!
//! All maturity and `x` integrals use the trapezoidal rule on the user's
//! grid, so closure tolerances are second order in the grid spacing. The
//! inputs are assumed to be smooth enough for that to be meaningful.

use crate::error::{Error, Result};

/// Cumulative trapezoidal integrals `∫_{x_0}^{x_l} f`.
pub fn cumulative_trapezoid(x: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for l in 0..x.len() {
        if l > 0 {
            acc += 0.5 * (x[l] - x[l - 1]) * (f[l] + f[l - 1]);
        }
        out.push(acc);
    }
    out
}

pub fn trapezoid(x: &[f64], f: &[f64]) -> f64 {
    cumulative_trapezoid(x, f).last().copied().unwrap_or(0.0)
}

fn check_increasing(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} has non-finite entries")));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

fn check_finite(name: &str, v: impl IntoIterator<Item = f64>) -> Result<()> {
    if v.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} has non-finite entries")))
    }
}

fn check_intensities(c: &[f64]) -> Result<()> {
    if c.iter().all(|c| c.is_finite() && *c > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid("jump intensities must be positive"))
    }
}

/// Forward-rate dynamics `f(T) = f_0(T) + α(T)·λ + σ(T)·W + γ(T) * (p - q)`
/// sampled at evaluation times `t_k` (which must be maturity nodes) and
/// maturities `T_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct HjmSurface {
    maturities: Vec<f64>,
    times: Vec<f64>,
    /// Maturity index of each evaluation time.
    start: Vec<usize>,
    alpha: Vec<Vec<f64>>,
    sigma: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<Vec<f64>>>,
    intensities: Vec<f64>,
    initial_forward: Vec<f64>,
    forwards: Option<Vec<Vec<f64>>>,
}

/// Deflator inputs per evaluation time: `θ_k ∈ R^m`, `ρ_k ∈ R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDeflator {
    pub theta: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
}

impl TermDeflator {
    pub fn constant(theta: Vec<f64>, rho: Vec<f64>, times: usize) -> Self {
        Self { theta: vec![theta; times], rho: vec![rho; times] }
    }
}

impl HjmSurface {
    /// `alpha[k][l]`, `sigma[k][l][f]`, `gamma[k][l][j]`; `forwards[k][l]`
    /// are observed curves `f_{t_k}(T_l)` (defaults to `f_0`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        maturities: Vec<f64>,
        times: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        sigma: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<Vec<f64>>>,
        intensities: Vec<f64>,
        initial_forward: Vec<f64>,
        forwards: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_increasing("maturity grid", &maturities)?;
        check_increasing("evaluation times", &times)?;
        check_intensities(&intensities)?;
        let tol = 1e-12 * (1.0 + maturities.last().unwrap().abs());
        let start = times
            .iter()
            .map(|&t| {
                maturities
                    .iter()
                    .position(|&s| (s - t).abs() <= tol)
                    .ok_or_else(|| Error::invalid(format!("evaluation time {t} is not a maturity node")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (nk, nl, n) = (times.len(), maturities.len(), intensities.len());
        let m = sigma.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let shape = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} does not match {nk} times × {nl} maturities")))
            }
        };
        shape("alpha", alpha.len() == nk && alpha.iter().all(|r| r.len() == nl))?;
        shape("sigma", sigma.len() == nk && sigma.iter().all(|r| r.len() == nl && r.iter().all(|v| v.len() == m)))?;
        shape("gamma", gamma.len() == nk && gamma.iter().all(|r| r.len() == nl && r.iter().all(|v| v.len() == n)))?;
        shape("initial forward curve", initial_forward.len() == nl)?;
        if let Some(f) = &forwards {
            shape("forward curves", f.len() == nk && f.iter().all(|r| r.len() == nl))?;
            check_finite("forward curves", f.iter().flatten().copied())?;
        }
        check_finite("alpha", alpha.iter().flatten().copied())?;
        check_finite("sigma", sigma.iter().flatten().flatten().copied())?;
        check_finite("gamma", gamma.iter().flatten().flatten().copied())?;
        check_finite("initial forward curve", initial_forward.iter().copied())?;
        Ok(Self { maturities, times, start, alpha, sigma, gamma, intensities, initial_forward, forwards })
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn factors(&self) -> usize {
        self.sigma[0][0].len()
    }

    pub fn marks(&self) -> usize {
        self.intensities.len()
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    /// A copy with a different drift surface.
    pub fn with_alpha(&self, alpha: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            self.maturities.clone(),
            self.times.clone(),
            alpha,
            self.sigma.clone(),
            self.gamma.clone(),
            self.intensities.clone(),
            self.initial_forward.clone(),
            self.forwards.clone(),
        )
    }

    fn check_deflator(&self, d: &TermDeflator) -> Result<()> {
        let nk = self.times.len();
        if d.theta.len() != nk || d.rho.len() != nk {
            return Err(Error::invalid(format!("deflator needs one entry per evaluation time ({nk})")));
        }
        if d.theta.iter().any(|t| t.len() != self.factors()) || d.rho.iter().any(|r| r.len() != self.marks()) {
            return Err(Error::invalid("deflator dimensions do not match the surface"));
        }
        check_finite("theta", d.theta.iter().flatten().copied())?;
        check_finite("rho", d.rho.iter().flatten().copied())?;
        Ok(())
    }

    /// `-∫_{t_k}^{T} v(s) ds` for `T` from `t_k` to the last maturity.
    fn neg_integral(&self, k: usize, v: impl Fn(usize) -> f64) -> Vec<f64> {
        let s = self.start[k];
        let f: Vec<f64> = (s..self.maturities.len()).map(v).collect();
        cumulative_trapezoid(&self.maturities[s..], &f).into_iter().map(|x| -x).collect()
    }

    /// `(Σ_f, Γ_j)` at time `t_k`, indexed from maturity `t_k`.
    fn integrated(&self, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let big_sigma = (0..self.factors()).map(|f| self.neg_integral(k, |l| self.sigma[k][l][f])).collect();
        let big_gamma = (0..self.marks()).map(|j| self.neg_integral(k, |l| self.gamma[k][l][j])).collect();
        (big_sigma, big_gamma)
    }

    fn maturity_offset(&self, k: usize, l: usize) -> Result<usize> {
        if k >= self.times.len() || l >= self.maturities.len() {
            return Err(Error::invalid(format!("index ({k}, {l}) is off the surface")));
        }
        l.checked_sub(self.start[k]).ok_or_else(|| {
            Error::invalid(format!("maturity {} precedes evaluation time {}", self.maturities[l], self.times[k]))
        })
    }

    /// `-A(T) - [½‖Σ(T)‖² - ⟨Σ(T), θ⟩ + Σ_j c_j((1-ρ_j)(e^{Γ_j(T)} - 1) - Γ_j(T))]`
    /// at `(t_k, T_l)`.
    pub fn drift_residual(&self, defl: &TermDeflator, k: usize, l: usize) -> Result<f64> {
        self.check_deflator(defl)?;
        let off = self.maturity_offset(k, l)?;
        let neg_a = -self.neg_integral(k, |q| self.alpha[k][q])[off];
        let (bs, bg) = self.integrated(k);
        let theta = &defl.theta[k];
        let quad: f64 = bs.iter().map(|s| 0.5 * s[off] * s[off]).sum();
        let cross: f64 = bs.iter().zip(theta).map(|(s, t)| s[off] * t).sum();
        let jumps: f64 = (0..self.marks())
            .map(|j| {
                let g = bg[j][off];
                self.intensities[j] * ((1.0 - defl.rho[k][j]) * g.exp_m1() - g)
            })
            .sum();
        Ok(neg_a - (quad - cross + jumps))
    }

    /// Largest `|drift_residual|` over all `(t_k, T_l)` with `T_l ≥ t_k`.
    pub fn max_drift_residual(&self, defl: &TermDeflator) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..self.times.len() {
            for l in self.start[k]..self.maturities.len() {
                worst = worst.max(self.drift_residual(defl, k, l)?.abs());
            }
        }
        Ok(worst)
    }

    /// Short rates `r(t_k) = f_{t_k}(t_k)`.
    pub fn short_rates(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|k| {
                let l = self.start[k];
                match &self.forwards {
                    Some(f) => f[k][l],
                    None => self.initial_forward[l],
                }
            })
            .collect()
    }

    /// Savings account `B_{t_k} = exp(∫_{t_0}^{t_k} r)` (trapezoidal).
    pub fn savings_account(&self) -> Vec<f64> {
        cumulative_trapezoid(&self.times, &self.short_rates()).into_iter().map(f64::exp).collect()
    }
}

/// Output of [`hjm_synthesize_alpha`].
#[derive(Debug, Clone, PartialEq)]
pub struct HjmSynthesis {
    /// `α[k][l]`; entries with `T_l < t_k` are zero.
    pub alpha: Vec<Vec<f64>>,
    pub short_rate: Vec<f64>,
    pub savings: Vec<f64>,
}

/// The drift `α(T) = -⟨σ(T), Σ(T) - θ⟩ - Σ_j c_j γ_j(T)((1-ρ_j)e^{Γ_j(T)} - 1)`
/// that makes the drift condition hold for the given deflator.
pub fn hjm_synthesize_alpha(h: &HjmSurface, defl: &TermDeflator) -> Result<HjmSynthesis> {
    h.check_deflator(defl)?;
    let nl = h.maturities.len();
    let alpha = (0..h.times.len())
        .map(|k| {
            let s = h.start[k];
            let (bs, bg) = h.integrated(k);
            (0..nl)
                .map(|l| {
                    if l < s {
                        return 0.0;
                    }
                    let off = l - s;
                    let diff: f64 = (0..h.factors())
                        .map(|f| h.sigma[k][l][f] * (bs[f][off] - defl.theta[k][f]))
                        .sum();
                    let jumps: f64 = (0..h.marks())
                        .map(|j| {
                            let g = h.gamma[k][l][j];
                            h.intensities[j] * g * ((1.0 - defl.rho[k][j]) * bg[j][off].exp() - 1.0)
                        })
                        .sum();
                    -diff - jumps
                })
                .collect()
        })
        .collect();
    Ok(HjmSynthesis { alpha, short_rate: h.short_rates(), savings: h.savings_account() })
}

/// Reduces maturity-indexed candidates `θ(T_l)` to a single `θ`, failing
/// when they disagree beyond `tol`: the market price of risk cannot depend
/// on the maturity.
pub fn collapse_theta(candidates: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
    let first = candidates.first().ok_or_else(|| Error::invalid("no theta candidates"))?;
    for (l, c) in candidates.iter().enumerate() {
        if c.len() != first.len() {
            return Err(Error::invalid(format!("theta candidate {l} has the wrong dimension")));
        }
        let gap = c.iter().zip(first).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > tol {
            return Err(Error::invalid(format!(
                "theta differs across maturities (gap {gap:e} at maturity index {l}); \
                 the market price of risk must not depend on the maturity"
            )));
        }
    }
    Ok(first.clone())
}

/// Default tolerance for trapezoidal normalization and constraint checks.
pub const DEFAULT_QUAD_TOL: f64 = 1e-6;

/// Density-based bond model: `P_t(T) = ∫_{T-t}^∞ ρ_t(u) du` with the
/// density's coefficients `ᾱ`, `σ̄`, `γ̄` on an `x` grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BhFamily {
    x: Vec<f64>,
    density: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_bar: Vec<Vec<f64>>,
    gamma_bar: Vec<Vec<f64>>,
    intensities: Vec<f64>,
    quad_tol: f64,
}

impl BhFamily {
    /// `sigma_bar[i][f]`, `gamma_bar[i][j]` at grid point `x_i`.
    pub fn new(
        x: Vec<f64>,
        density: Vec<f64>,
        alpha_bar: Vec<f64>,
        sigma_bar: Vec<Vec<f64>>,
        gamma_bar: Vec<Vec<f64>>,
        intensities: Vec<f64>,
        quad_tol: f64,
    ) -> Result<Self> {
        check_increasing("x grid", &x)?;
        if x[0] != 0.0 {
            return Err(Error::invalid(format!("x grid must start at 0, got {}", x[0])));
        }
        if !(quad_tol.is_finite() && quad_tol > 0.0) {
            return Err(Error::invalid("quad_tol must be positive"));
        }
        check_intensities(&intensities)?;
        let nx = x.len();
        let m = sigma_bar.first().map_or(0, Vec::len);
        let n = intensities.len();
        let ok = density.len() == nx
            && alpha_bar.len() == nx
            && sigma_bar.len() == nx
            && sigma_bar.iter().all(|s| s.len() == m)
            && gamma_bar.len() == nx
            && gamma_bar.iter().all(|g| g.len() == n);
        if !ok {
            return Err(Error::invalid(format!("family arrays must have {nx} rows with consistent widths")));
        }
        check_finite("alpha_bar", alpha_bar.iter().copied())?;
        check_finite("sigma_bar", sigma_bar.iter().flatten().copied())?;
        check_finite("gamma_bar", gamma_bar.iter().flatten().copied())?;
        if let Some((i, d)) = density.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::invalid(format!("density must be positive, got {d} at x index {i}")));
        }
        let mass = trapezoid(&x, &density);
        if (mass - 1.0).abs() > quad_tol {
            return Err(Error::invalid(format!("density integrates to {mass}, expected 1 within {quad_tol:e}")));
        }
        Ok(Self { x, density, alpha_bar, sigma_bar, gamma_bar, intensities, quad_tol })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn factors(&self) -> usize {
        self.sigma_bar.first().map_or(0, Vec::len)
    }

    pub fn marks(&self) -> usize {
        self.intensities.len()
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    fn weighted(&self, f: impl Fn(usize) -> f64) -> f64 {
        let g: Vec<f64> = (0..self.x.len()).map(|i| f(i) * self.density[i]).collect();
        trapezoid(&self.x, &g)
    }

    fn check_deflator(&self, theta: &[f64], rho: &[f64]) -> Result<()> {
        if theta.len() != self.factors() || rho.len() != self.marks() {
            return Err(Error::invalid("deflator dimensions do not match the family"));
        }
        check_finite("theta", theta.iter().copied())?;
        check_finite("rho", rho.iter().copied())
    }
}

/// Residuals of the density model's short-rate, drift and consistency
/// conditions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BhReport {
    /// `r - ρ(0)`
    pub short_rate: f64,
    /// `ᾱ(x) - r - ⟨σ̄(x), θ⟩ - Σ_j c_j γ̄_j(x) ρ_j` per grid point
    pub drift: Vec<f64>,
    /// `ρ(x_max) - ρ(0) + ∫ ρ ᾱ dx` (conservation of mass)
    pub cons1: f64,
    /// `∫ σ̄_f ρ dx` per factor
    pub cons2: Vec<f64>,
    /// `∫ γ̄_j ρ dx` per mark
    pub cons3: Vec<f64>,
    /// `ρ(0) - ∫ ρ ᾱ dx`
    pub rho_zero: f64,
    pub max_abs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn bh_check(b: &BhFamily, theta: &[f64], rho: &[f64], r: f64) -> Result<BhReport> {
    b.check_deflator(theta, rho)?;
    if !r.is_finite() {
        return Err(Error::invalid("short rate must be finite"));
    }
    let rho0 = b.density[0];
    let drift: Vec<f64> = (0..b.x.len())
        .map(|i| {
            let diff: f64 = b.sigma_bar[i].iter().zip(theta).map(|(s, t)| s * t).sum();
            let jump: f64 = (0..b.marks()).map(|j| b.intensities[j] * b.gamma_bar[i][j] * rho[j]).sum();
            b.alpha_bar[i] - r - diff - jump
        })
        .collect();
    let mass_flow = b.weighted(|i| b.alpha_bar[i]);
    let cons1 = b.density[b.x.len() - 1] - rho0 + mass_flow;
    let cons2: Vec<f64> = (0..b.factors()).map(|f| b.weighted(|i| b.sigma_bar[i][f])).collect();
    let cons3: Vec<f64> = (0..b.marks()).map(|j| b.weighted(|i| b.gamma_bar[i][j])).collect();
    let rho_zero = rho0 - mass_flow;
    let short_rate = r - rho0;
    let max_abs = std::iter::once(short_rate)
        .chain(drift.iter().copied())
        .chain([cons1, rho_zero])
        .chain(cons2.iter().copied())
        .chain(cons3.iter().copied())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BhReport {
        short_rate,
        drift,
        cons1,
        cons2,
        cons3,
        rho_zero,
        max_abs,
        tolerance: b.quad_tol,
        pass: max_abs <= b.quad_tol,
    })
}

/// Builds a consistent family from a density and raw volatility shapes:
/// `σ̄` and `γ̄` are shifted so their `ρ`-weighted integrals vanish,
/// `r = ρ(0)`, and `ᾱ` satisfies the drift condition.
#[allow(clippy::too_many_arguments)]
pub fn bh_synthesize(
    x: Vec<f64>,
    density: Vec<f64>,
    sigma_raw: Vec<Vec<f64>>,
    gamma_raw: Vec<Vec<f64>>,
    intensities: Vec<f64>,
    theta: &[f64],
    rho: &[f64],
    quad_tol: f64,
) -> Result<(BhFamily, f64)> {
    let nx = x.len();
    let placeholder = BhFamily::new(x, density, vec![0.0; nx], sigma_raw, gamma_raw, intensities, quad_tol)?;
    placeholder.check_deflator(theta, rho)?;
    let mass = trapezoid(&placeholder.x, &placeholder.density);
    let mut fam = placeholder.clone();
    for f in 0..fam.factors() {
        let shift = placeholder.weighted(|i| placeholder.sigma_bar[i][f]) / mass;
        fam.sigma_bar.iter_mut().for_each(|s| s[f] -= shift);
    }
    for j in 0..fam.marks() {
        let shift = placeholder.weighted(|i| placeholder.gamma_bar[i][j]) / mass;
        fam.gamma_bar.iter_mut().for_each(|g| g[j] -= shift);
    }
    let r = fam.density[0];
    fam.alpha_bar = (0..nx)
        .map(|i| {
            let diff: f64 = fam.sigma_bar[i].iter().zip(theta).map(|(s, t)| s * t).sum();
            let jump: f64 = (0..fam.marks()).map(|j| fam.intensities[j] * fam.gamma_bar[i][j] * rho[j]).sum();
            r + diff + jump
        })
        .collect();
    Ok((fam, r))
}
