//! Two-period finite probability space.
//!
//! Outcomes are pairs `(ω1, ω2)`; `F_1` is generated by `ω1`. A process is
//! given by its increments at times 1 and 2: predictable increments are
//! `F_0`- resp. `F_1`-measurable, adapted ones `F_1`- resp. `F_2`-measurable.
//! Conditional expectations are finite sums, which makes predictable
//! compensators exactly computable.

use super::{mpr_to_tilde, rate_to_tilde, stoch_exp, PureJumpPath};
use crate::error::{Error, Result};

pub const MAX_ATOMS: usize = 64;

/// Increments known one period in advance: `first` at time 1, `second[ω1]`
/// at time 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictable {
    pub first: f64,
    pub second: Vec<f64>,
}

impl Predictable {
    pub fn max_abs(&self) -> f64 {
        self.second.iter().fold(self.first.abs(), |m, v| m.max(v.abs()))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            first: f(self.first, other.first),
            second: self.second.iter().zip(&other.second).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

/// Increments revealed at their own time: `first[ω1]` at time 1,
/// `second[ω1][ω2]` at time 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub first: Vec<f64>,
    pub second: Vec<Vec<f64>>,
}

/// `S = S_0 E(A + M)` with `A` predictable and `M` a martingale.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeAsset {
    pub initial: f64,
    pub drift: Predictable,
    pub noise: Adapted,
}

/// Market with savings account `E(R)` and deflator `E(-Θ)/E(R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPeriodModel {
    p1: Vec<f64>,
    p2: Vec<Vec<f64>>,
    rate: Predictable,
    theta: Adapted,
    assets: Vec<TreeAsset>,
}

const MARTINGALE_TOL: f64 = 1e-12;

impl TwoPeriodModel {
    pub fn new(p1: Vec<f64>, p2: Vec<Vec<f64>>, rate: Predictable, theta: Adapted, assets: Vec<TreeAsset>) -> Result<Self> {
        let model = Self { p1, p2, rate, theta, assets };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n1 = self.p1.len();
        if n1 == 0 || self.p2.len() != n1 || self.p2.iter().any(|b| b.is_empty()) {
            return Err(Error::invalid("every node needs at least one branch"));
        }
        if self.atoms() > MAX_ATOMS {
            return Err(Error::invalid(format!("{} atoms exceed the limit of {MAX_ATOMS}", self.atoms())));
        }
        check_distribution(&self.p1)?;
        for b in &self.p2 {
            check_distribution(b)?;
        }
        self.check_predictable(&self.rate, "rate")?;
        self.check_adapted(&self.theta, "theta")?;
        self.check_martingale(&self.theta, "theta")?;
        if self.rate.max_abs().is_nan() || !self.rate_jumps().all(|r| r > -1.0) {
            return Err(Error::domain("rate increments must exceed -1"));
        }
        if !self.theta_jumps().all(|t| t < 1.0) {
            return Err(Error::domain("theta increments must be below 1"));
        }
        for (i, a) in self.assets.iter().enumerate() {
            let name = format!("asset {i}");
            if !(a.initial.is_finite() && a.initial > 0.0) {
                return Err(Error::invalid(format!("{name} needs a positive initial price")));
            }
            self.check_predictable(&a.drift, &name)?;
            self.check_adapted(&a.noise, &name)?;
            self.check_martingale(&a.noise, &name)?;
            for w1 in 0..n1 {
                let j1 = a.drift.first + a.noise.first[w1];
                let ok2 = a.noise.second[w1].iter().all(|m| a.drift.second[w1] + m > -1.0);
                if !(j1 > -1.0 && ok2) {
                    return Err(Error::domain(format!("{name} return must exceed -1")));
                }
            }
        }
        Ok(())
    }

    fn check_predictable(&self, p: &Predictable, name: &str) -> Result<()> {
        if p.second.len() != self.p1.len() {
            return Err(Error::invalid(format!("{name}: predictable increment needs one value per first-period node")));
        }
        if !p.max_abs().is_finite() {
            return Err(Error::invalid(format!("{name}: increments must be finite")));
        }
        Ok(())
    }

    fn check_adapted(&self, a: &Adapted, name: &str) -> Result<()> {
        let shape_ok = a.first.len() == self.p1.len()
            && a.second.len() == self.p1.len()
            && a.second.iter().zip(&self.p2).all(|(s, p)| s.len() == p.len());
        if !shape_ok {
            return Err(Error::invalid(format!("{name}: adapted increment does not match the tree")));
        }
        if !a.first.iter().chain(a.second.iter().flatten()).all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("{name}: increments must be finite")));
        }
        Ok(())
    }

    fn check_martingale(&self, a: &Adapted, name: &str) -> Result<()> {
        let mut worst = expect(&self.p1, &a.first).abs();
        for (p, s) in self.p2.iter().zip(&a.second) {
            worst = worst.max(expect(p, s).abs());
        }
        if worst > MARTINGALE_TOL {
            return Err(Error::invalid(format!("{name}: increments have conditional mean {worst:e}, expected 0")));
        }
        Ok(())
    }

    fn rate_jumps(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.rate.first).chain(self.rate.second.iter().copied())
    }

    fn theta_jumps(&self) -> impl Iterator<Item = f64> + '_ {
        self.theta.first.iter().chain(self.theta.second.iter().flatten()).copied()
    }

    pub fn atoms(&self) -> usize {
        self.p2.iter().map(Vec::len).sum()
    }

    pub fn assets(&self) -> &[TreeAsset] {
        &self.assets
    }

    pub fn rate(&self) -> &Predictable {
        &self.rate
    }

    pub fn theta(&self) -> &Adapted {
        &self.theta
    }

    fn asset(&self, i: usize) -> Result<&TreeAsset> {
        self.assets.get(i).ok_or_else(|| Error::invalid(format!("no asset {i}")))
    }

    /// `ΔR̃ = ΔR/(1 + ΔR)` per period.
    pub fn rate_tilde(&self) -> Predictable {
        let t = |r: f64| r / (1.0 + r);
        Predictable { first: t(self.rate.first), second: self.rate.second.iter().map(|&r| t(r)).collect() }
    }

    /// Increments of `[M^i, Θ]^p`: `E[ΔM^i ΔΘ | F_{t-1}]`.
    pub fn bracket_compensator(&self, i: usize) -> Result<Predictable> {
        let m = &self.asset(i)?.noise;
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
        Ok(Predictable {
            first: expect(&self.p1, &prod(&m.first, &self.theta.first)),
            second: (0..self.p1.len())
                .map(|w| expect(&self.p2[w], &prod(&m.second[w], &self.theta.second[w])))
                .collect(),
        })
    }

    /// `ΔA - ΔR - E[ΔM ΔΘ | F_{t-1}]`; zero iff `S^i Z` is a martingale.
    pub fn drift_residual(&self, i: usize) -> Result<Predictable> {
        let comp = self.bracket_compensator(i)?;
        let a = &self.asset(i)?.drift;
        Ok(a.zip_with(&self.rate, |a, r| a - r).zip_with(&comp, |x, c| x - c))
    }

    /// The drift condition in tilde variables,
    /// `ΔA - ΔR̃ - ΔA ΔR̃ - (1 - ΔR̃) E[ΔM ΔΘ | F_{t-1}]`,
    /// which equals `(1 - ΔR̃)` times [`Self::drift_residual`].
    pub fn tilde_drift_residual(&self, i: usize) -> Result<Predictable> {
        let comp = self.bracket_compensator(i)?;
        let rt = self.rate_tilde();
        let a = &self.asset(i)?.drift;
        let base = a.zip_with(&rt, |a, r| a - r - a * r);
        let scaled = comp.zip_with(&rt, |c, r| (1.0 - r) * c);
        Ok(base.zip_with(&scaled, |x, c| x - c))
    }

    /// `ΔA - ΔR̃ - ΔA ΔR̃ - E[ΔM ΔΘ | F_{t-1}]`, i.e. the tilde form with
    /// the compensator of `[M, Θ]` left unscaled. In discrete time
    /// `[M, [Θ, R̃]]^p = ΔR̃ E[ΔM ΔΘ]` does not vanish, so this differs from
    /// [`Self::tilde_drift_residual`] by `ΔR̃ E[ΔM ΔΘ]` and characterizes
    /// the martingale property only where that product is zero.
    pub fn naive_tilde_drift_residual(&self, i: usize) -> Result<Predictable> {
        let comp = self.bracket_compensator(i)?;
        let rt = self.rate_tilde();
        let a = &self.asset(i)?.drift;
        Ok(a.zip_with(&rt, |a, r| a - r - a * r).zip_with(&comp, |x, c| x - c))
    }

    /// Deflator values `(Z_1, Z_2)` at outcome `(w1, w2)`, computed as
    /// `E(-Θ̃ - R̃)`.
    pub fn deflator(&self, w1: usize, w2: usize) -> Result<(f64, f64)> {
        let r = PureJumpPath::new(vec![(1.0, self.rate.first), (2.0, self.rate.second[w1])])?;
        let th = PureJumpPath::new(vec![(1.0, self.theta.first[w1]), (2.0, self.theta.second[w1][w2])])?;
        let rt = rate_to_tilde(&r)?;
        let tt = mpr_to_tilde(&th, &rt)?;
        let z = stoch_exp(&tt.add(&rt).neg())?;
        Ok((z.value_at(1.0), z.value_at(2.0)))
    }

    fn price(&self, i: usize, w1: usize, w2: usize) -> Result<(f64, f64)> {
        let a = self.asset(i)?;
        let x = PureJumpPath::new(vec![
            (1.0, a.drift.first + a.noise.first[w1]),
            (2.0, a.drift.second[w1] + a.noise.second[w1][w2]),
        ])?;
        let e = stoch_exp(&x)?;
        Ok((a.initial * e.value_at(1.0), a.initial * e.value_at(2.0)))
    }

    /// Largest relative one-step defect `|E[S_t Z_t | F_{t-1}] / (S_{t-1} Z_{t-1}) - 1|`.
    pub fn martingale_defect(&self, i: usize) -> Result<f64> {
        let s0 = self.asset(i)?.initial;
        let mut first = Vec::with_capacity(self.p1.len());
        let mut worst = 0.0f64;
        for w1 in 0..self.p1.len() {
            let mut second = Vec::with_capacity(self.p2[w1].len());
            let mut sz1 = 0.0;
            for w2 in 0..self.p2[w1].len() {
                let (s1, s2) = self.price(i, w1, w2)?;
                let (z1, z2) = self.deflator(w1, w2)?;
                sz1 = s1 * z1;
                second.push(s2 * z2);
            }
            worst = worst.max((expect(&self.p2[w1], &second) / sz1 - 1.0).abs());
            first.push(sz1);
        }
        Ok(worst.max((expect(&self.p1, &first) / s0 - 1.0).abs()))
    }
}

fn expect(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(p, v)| p * v).sum()
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&q| !(q.is_finite() && q > 0.0)) {
        return Err(Error::invalid("branch probabilities must be positive"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("branch probabilities sum to {total}, expected 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone, Copy, PartialEq, Debug)]
    enum Class {
        General,
        ZeroRate,
        Orthogonal,
    }

    fn distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    fn centered(rng: &mut ChaCha8Rng, p: &[f64], scale: f64) -> Vec<f64> {
        let v: Vec<f64> = p.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = expect(p, &v);
        let v: Vec<f64> = v.into_iter().map(|x| x - m).collect();
        let amax = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
        v.into_iter().map(|x| x * scale / amax).collect()
    }

    /// Centered increments orthogonal (under `p`) to `other`.
    fn orthogonal(rng: &mut ChaCha8Rng, p: &[f64], other: &[f64], scale: f64) -> Vec<f64> {
        let v = centered(rng, p, 1.0);
        let nn = expect(p, &other.iter().map(|x| x * x).collect::<Vec<_>>());
        let k = if nn > 0.0 { expect(p, &v.iter().zip(other).map(|(a, b)| a * b).collect::<Vec<_>>()) / nn } else { 0.0 };
        let v: Vec<f64> = v.iter().zip(other).map(|(a, b)| a - k * b).collect();
        let amax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        // with two branches the orthogonal complement is trivial
        if amax < 1e-9 {
            return vec![0.0; v.len()];
        }
        v.into_iter().map(|x| x * scale / amax).collect()
    }

    /// Random tree whose asset drifts satisfy the exact drift condition.
    fn random_model(seed: u64, class: Class) -> TwoPeriodModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = rng.random_range(2..=4);
        let p1 = distribution(&mut rng, n1);
        let p2: Vec<Vec<f64>> = (0..n1).map(|_| { let n = rng.random_range(2..=4); distribution(&mut rng, n) }).collect();
        let theta = Adapted {
            first: centered(&mut rng, &p1, 0.8),
            second: p2.iter().map(|p| centered(&mut rng, p, 0.8)).collect(),
        };
        let rate = if class == Class::ZeroRate {
            Predictable { first: 0.0, second: vec![0.0; n1] }
        } else {
            Predictable { first: rng.random_range(-0.3..0.5), second: (0..n1).map(|_| rng.random_range(-0.3..0.5)).collect() }
        };
        let assets = (0..2)
            .map(|_| {
                let noise = if class == Class::Orthogonal {
                    Adapted {
                        first: orthogonal(&mut rng, &p1, &theta.first, 0.3),
                        second: p2.iter().zip(&theta.second).map(|(p, t)| orthogonal(&mut rng, p, t, 0.3)).collect(),
                    }
                } else {
                    Adapted {
                        first: centered(&mut rng, &p1, 0.3),
                        second: p2.iter().map(|p| centered(&mut rng, p, 0.3)).collect(),
                    }
                };
                TreeAsset { initial: rng.random_range(0.5..2.0), drift: Predictable { first: 0.0, second: vec![0.0; n1] }, noise }
            })
            .collect();
        let mut model = TwoPeriodModel::new(p1, p2, rate, theta, assets).unwrap();
        for i in 0..model.assets.len() {
            let comp = model.bracket_compensator(i).unwrap();
            model.assets[i].drift = model.rate.zip_with(&comp, |r, c| r + c);
        }
        model.validate().unwrap();
        model
    }

    fn perturb(model: &TwoPeriodModel, i: usize, node: Option<usize>, delta: f64) -> TwoPeriodModel {
        let mut m = model.clone();
        match node {
            None => m.assets[i].drift.first += delta,
            Some(w) => m.assets[i].drift.second[w] += delta,
        }
        m
    }

    #[test]
    fn validation() {
        let p = Predictable { first: 0.0, second: vec![0.0] };
        let th = Adapted { first: vec![0.0], second: vec![vec![0.0]] };
        assert!(TwoPeriodModel::new(vec![1.0], vec![vec![1.0]], p.clone(), th.clone(), vec![]).is_ok());
        let biased = Adapted { first: vec![0.1], second: vec![vec![0.0]] };
        assert!(TwoPeriodModel::new(vec![1.0], vec![vec![1.0]], p.clone(), biased, vec![]).is_err());
        assert!(TwoPeriodModel::new(vec![0.5], vec![vec![1.0]], p.clone(), th.clone(), vec![]).is_err());
        let big = vec![vec![1.0 / 9.0; 9]; 8];
        let p8 = Predictable { first: 0.0, second: vec![0.0; 8] };
        let th8 = Adapted { first: vec![0.0; 8], second: vec![vec![0.0; 9]; 8] };
        assert!(TwoPeriodModel::new(vec![0.125; 8], big, p8, th8, vec![]).is_err());
    }

    #[test]
    fn counterexample_to_unscaled_tilde_form() {
        // one coin flip per period, rate 1 at each step
        let p1 = vec![0.5, 0.5];
        let p2 = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let rate = Predictable { first: 1.0, second: vec![1.0, 1.0] };
        let theta = Adapted { first: vec![0.5, -0.5], second: vec![vec![0.5, -0.5], vec![0.5, -0.5]] };
        let noise = Adapted { first: vec![0.2, -0.2], second: vec![vec![0.2, -0.2], vec![0.2, -0.2]] };
        // E[ΔM ΔΘ] = 0.1, so the exact condition gives ΔA = 1.1
        let drift = Predictable { first: 1.1, second: vec![1.1, 1.1] };
        let model = TwoPeriodModel::new(p1, p2, rate, theta, vec![TreeAsset { initial: 1.0, drift, noise }]).unwrap();
        assert!(model.martingale_defect(0).unwrap() < 1e-15);
        assert!(model.drift_residual(0).unwrap().max_abs() < 1e-15);
        assert!(model.tilde_drift_residual(0).unwrap().max_abs() < 1e-15);
        // ΔR̃ E[ΔM ΔΘ] = 0.5 · 0.1
        let naive = model.naive_tilde_drift_residual(0).unwrap();
        assert!((naive.first + 0.05).abs() < 1e-15);

        // solving the unscaled form instead (ΔA = 1.2) breaks the martingale property
        let wrong = perturb(&model, 0, None, 0.1);
        let wrong = perturb(&wrong, 0, Some(0), 0.1);
        let wrong = perturb(&wrong, 0, Some(1), 0.1);
        assert!(wrong.naive_tilde_drift_residual(0).unwrap().max_abs() < 1e-15);
        assert!(wrong.martingale_defect(0).unwrap() > 0.04);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn drift_condition_iff_martingale(seed in any::<u64>(), node in 0usize..5, delta in prop_oneof![-0.2..-1e-3f64, 1e-3..0.2f64]) {
            let model = random_model(seed, Class::General);
            for i in 0..model.assets().len() {
                prop_assert!(model.drift_residual(i).unwrap().max_abs() <= 1e-15);
                prop_assert!(model.tilde_drift_residual(i).unwrap().max_abs() <= 1e-14);
                prop_assert!(model.martingale_defect(i).unwrap() <= 1e-12);
                // the unscaled tilde form misses by exactly ΔR̃ E[ΔM ΔΘ]
                let naive = model.naive_tilde_drift_residual(i).unwrap();
                let expected = model.rate_tilde().zip_with(&model.bracket_compensator(i).unwrap(), |r, c| -r * c);
                prop_assert!(naive.zip_with(&expected, |a, b| a - b).max_abs() <= 1e-14);
            }
            let n1 = model.rate().second.len();
            let node = if node == 0 { None } else { Some((node - 1) % n1) };
            let broken = perturb(&model, 0, node, delta);
            if broken.validate().is_ok() {
                prop_assert!(broken.drift_residual(0).unwrap().max_abs() > 1e-4);
                prop_assert!(broken.martingale_defect(0).unwrap() > 1e-6);
            }
        }

        #[test]
        fn unscaled_tilde_form_on_its_valid_class(seed in any::<u64>(), zero_rate in any::<bool>(), delta in prop_oneof![-0.2..-1e-3f64, 1e-3..0.2f64]) {
            let class = if zero_rate { Class::ZeroRate } else { Class::Orthogonal };
            let model = random_model(seed, class);
            for i in 0..model.assets().len() {
                prop_assert!(model.naive_tilde_drift_residual(i).unwrap().max_abs() <= 1e-14);
                prop_assert!(model.martingale_defect(i).unwrap() <= 1e-12);
            }
            let broken = perturb(&model, 1, None, delta);
            if broken.validate().is_ok() {
                prop_assert!(broken.naive_tilde_drift_residual(1).unwrap().max_abs() > 1e-4);
                prop_assert!(broken.martingale_defect(1).unwrap() > 1e-6);
            }
        }
    }
}
