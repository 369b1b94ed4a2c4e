//! Exact calculus for finite-variation pure-jump paths.
//!
//! Every map here acts jump by jump, so the identities between stochastic
//! exponentials hold up to floating-point rounding only. [`finite`] adds a
//! two-period finite probability space on which predictable compensators can
//! be computed by enumeration.

pub mod finite;

use crate::error::{Error, Result};

/// A path of the form `X_t = Σ_{s ≤ t} ΔX_s` starting at zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PureJumpPath {
    times: Vec<f64>,
    jumps: Vec<f64>,
}

impl PureJumpPath {
    /// Builds a path from `(time, jump)` pairs with strictly increasing
    /// positive times.
    pub fn new(events: Vec<(f64, f64)>) -> Result<Self> {
        let mut prev = 0.0;
        for (i, &(t, j)) in events.iter().enumerate() {
            if !(t.is_finite() && t > prev) {
                return Err(Error::invalid(format!(
                    "jump time {t} at position {i} must be finite, positive and increasing"
                )));
            }
            if !j.is_finite() {
                return Err(Error::invalid(format!("jump at time {t} is not finite")));
            }
            prev = t;
        }
        let (times, jumps) = events.into_iter().unzip();
        Ok(Self { times, jumps })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.jumps.iter().copied())
    }

    /// Jump at `t`, zero when `t` is not a jump time.
    pub fn jump_at(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => self.jumps[i],
            Err(_) => 0.0,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.events().take_while(|&(s, _)| s <= t).map(|(_, j)| j).sum()
    }

    pub fn neg(&self) -> Self {
        self.map_jumps(|j| -j)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map_jumps(|j| k * j)
    }

    fn map_jumps(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { times: self.times.clone(), jumps: self.jumps.iter().map(|&j| f(j)).collect() }
    }

    fn try_map_jumps(&self, f: impl Fn(f64, f64) -> Result<f64>) -> Result<Self> {
        let jumps = self.events().map(|(t, j)| f(t, j)).collect::<Result<_>>()?;
        Ok(Self { times: self.times.clone(), jumps })
    }

    /// `X + Y`, jump times merged.
    pub fn add(&self, other: &Self) -> Self {
        merge(self, other, |a, b| Some(a + b), true)
    }
}

/// Union (or intersection, with `union = false`) of two jump-time sets,
/// combining jumps with `f` (missing jumps read as zero).
fn merge(x: &PureJumpPath, y: &PureJumpPath, f: impl Fn(f64, f64) -> Option<f64>, union: bool) -> PureJumpPath {
    let (mut i, mut k) = (0, 0);
    let mut out = PureJumpPath::zero();
    let mut push = |t: f64, v: Option<f64>| {
        if let Some(v) = v {
            out.times.push(t);
            out.jumps.push(v);
        }
    };
    while i < x.len() || k < y.len() {
        let tx = x.times.get(i).copied().unwrap_or(f64::INFINITY);
        let ty = y.times.get(k).copied().unwrap_or(f64::INFINITY);
        if tx == ty {
            push(tx, f(x.jumps[i], y.jumps[k]));
            i += 1;
            k += 1;
        } else if tx < ty {
            if union {
                push(tx, f(x.jumps[i], 0.0));
            }
            i += 1;
        } else {
            if union {
                push(ty, f(0.0, y.jumps[k]));
            }
            k += 1;
        }
    }
    out
}

/// Piecewise-constant path of products of positive factors, equal to one
/// before the first factor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpPath {
    times: Vec<f64>,
    factors: Vec<f64>,
}

impl ExpPath {
    pub fn new(events: Vec<(f64, f64)>) -> Result<Self> {
        let p = PureJumpPath::new(events)?;
        if let Some((t, f)) = p.events().find(|&(_, f)| !(f > 0.0)) {
            return Err(Error::domain(format!("factor {f} at time {t} is not positive")));
        }
        Ok(Self { times: p.times, factors: p.jumps })
    }

    pub fn one() -> Self {
        Self::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.factors)
            .take_while(|(&s, _)| s <= t)
            .map(|(_, f)| f)
            .product()
    }

    pub fn terminal(&self) -> f64 {
        self.factors.iter().product()
    }

    /// Values just after each factor time.
    pub fn values(&self) -> Vec<f64> {
        self.factors
            .iter()
            .scan(1.0, |acc, f| {
                *acc *= f;
                Some(*acc)
            })
            .collect()
    }
}

fn check_above_minus_one(t: f64, j: f64) -> Result<()> {
    if j > -1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("jump {j} at time {t} must exceed -1")))
    }
}

fn check_below_one(t: f64, j: f64, what: &str) -> Result<()> {
    if j < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} jump {j} at time {t} must be below 1")))
    }
}

/// `E(X)`: factor `1 + ΔX` at every jump.
pub fn stoch_exp(x: &PureJumpPath) -> Result<ExpPath> {
    let factors = x
        .events()
        .map(|(t, j)| check_above_minus_one(t, j).map(|_| 1.0 + j))
        .collect::<Result<_>>()?;
    Ok(ExpPath { times: x.times.clone(), factors })
}

/// `[X, Y] = Σ ΔX ΔY`, supported on the common jump times.
pub fn quad_cov(x: &PureJumpPath, y: &PureJumpPath) -> PureJumpPath {
    merge(x, y, |a, b| Some(a * b), false)
}

/// `X + Y + [X, Y]`, so that `E(X) E(Y) = E(X + Y + [X, Y])`.
pub fn yor_sum(x: &PureJumpPath, y: &PureJumpPath) -> PureJumpPath {
    merge(x, y, |a, b| Some(a + b + a * b), true)
}

/// `R̃` with `ΔR̃ = ΔR/(1 + ΔR)`, so that `E(-R̃) = 1/E(R)`.
pub fn rate_to_tilde(r: &PureJumpPath) -> Result<PureJumpPath> {
    r.try_map_jumps(|t, j| {
        check_above_minus_one(t, j)?;
        Ok(j / (1.0 + j))
    })
}

/// Inverse of [`rate_to_tilde`]: `ΔR = ΔR̃/(1 - ΔR̃)`.
pub fn rate_from_tilde(r_tilde: &PureJumpPath) -> Result<PureJumpPath> {
    r_tilde.try_map_jumps(|t, j| {
        check_below_one(t, j, "tilde rate")?;
        Ok(j / (1.0 - j))
    })
}

/// `Θ̃ = Θ - [Θ, R̃]`, i.e. `ΔΘ̃ = (1 - ΔR̃) ΔΘ`, so that
/// `E(-Θ)/E(R) = E(-Θ̃ - R̃)`.
pub fn mpr_to_tilde(theta: &PureJumpPath, r_tilde: &PureJumpPath) -> Result<PureJumpPath> {
    for (t, j) in r_tilde.events() {
        check_below_one(t, j, "tilde rate")?;
    }
    theta.try_map_jumps(|t, j| {
        check_below_one(t, j, "market price of risk")?;
        let rt = r_tilde.jump_at(t);
        let out = (1.0 - rt) * j;
        // 1 - (ΔΘ̃ + ΔR̃) = (1 - ΔΘ)(1 - ΔR̃) > 0
        if !(out + rt < 1.0) {
            return Err(Error::domain(format!("combined tilde jump at time {t} reached 1")));
        }
        Ok(out)
    })
}

/// Inverse of [`mpr_to_tilde`] for the same `R̃`: `ΔΘ = ΔΘ̃/(1 - ΔR̃)`.
pub fn mpr_from_tilde(theta_tilde: &PureJumpPath, r_tilde: &PureJumpPath) -> Result<PureJumpPath> {
    for (t, j) in r_tilde.events() {
        check_below_one(t, j, "tilde rate")?;
    }
    theta_tilde.try_map_jumps(|t, j| {
        let rt = r_tilde.jump_at(t);
        if !(j + rt < 1.0) {
            return Err(Error::domain(format!("combined tilde jump {} at time {t} must be below 1", j + rt)));
        }
        Ok(j / (1.0 - rt))
    })
}

/// `Y` with `ΔY = -ΔX/(1 + ΔX)`, so that `E(X) E(Y) = 1`.
pub fn inv_stoch_exp(x: &PureJumpPath) -> Result<PureJumpPath> {
    x.try_map_jumps(|t, j| {
        check_above_minus_one(t, j)?;
        Ok(-j / (1.0 + j))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn path(ev: &[(f64, f64)]) -> PureJumpPath {
        PureJumpPath::new(ev.to_vec()).unwrap()
    }

    #[test]
    fn stoch_exp_examples() {
        let e = stoch_exp(&path(&[(1.0, 1.0)])).unwrap();
        assert_eq!(e.value_at(0.5), 1.0);
        assert_eq!(e.value_at(1.0), 2.0);
        assert_eq!(stoch_exp(&path(&[(1.0, 1.0), (2.0, -0.5)])).unwrap().terminal(), 1.0);
        assert_eq!(stoch_exp(&PureJumpPath::zero()).unwrap().value_at(10.0), 1.0);
        assert!(matches!(stoch_exp(&path(&[(1.0, -1.0)])), Err(Error::Domain(_))));
    }

    #[test]
    fn path_validation() {
        assert!(PureJumpPath::new(vec![(0.0, 1.0)]).is_err());
        assert!(PureJumpPath::new(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(PureJumpPath::new(vec![(1.0, f64::NAN)]).is_err());
        assert!(ExpPath::new(vec![(1.0, 0.0)]).is_err());
    }

    #[test]
    fn quad_cov_examples() {
        assert!(quad_cov(&path(&[(1.0, 1.0)]), &path(&[(2.0, 1.0)])).is_empty());
        assert_eq!(quad_cov(&path(&[(1.0, 2.0)]), &path(&[(1.0, 3.0)])).jumps(), &[6.0]);
        let x = path(&[(1.0, 2.0)]);
        assert_eq!(quad_cov(&x, &x).jumps(), &[4.0]);
    }

    #[test]
    fn yor_examples() {
        let x = path(&[(1.0, 0.3), (2.0, -0.2)]);
        assert_eq!(yor_sum(&x, &PureJumpPath::zero()), x);

        let one = path(&[(1.0, 1.0)]);
        let s = yor_sum(&one, &one);
        assert_eq!(s.jumps(), &[3.0]);
        assert_eq!(stoch_exp(&s).unwrap().terminal(), 4.0);

        let half = path(&[(1.0, 0.5)]);
        let s = yor_sum(&half, &half.neg());
        assert_eq!(s.jumps(), &[-0.25]);
        assert_eq!(stoch_exp(&s).unwrap().terminal(), 1.5 * 0.5);
    }

    #[test]
    fn rate_tilde_examples() {
        assert_eq!(rate_to_tilde(&path(&[(1.0, 1.0)])).unwrap().jumps(), &[0.5]);
        assert_eq!(rate_to_tilde(&PureJumpPath::zero()).unwrap(), PureJumpPath::zero());
        assert_eq!(rate_to_tilde(&path(&[(1.0, -0.5)])).unwrap().jumps(), &[-1.0]);
        assert!(rate_to_tilde(&path(&[(1.0, -1.0)])).is_err());

        assert_eq!(rate_from_tilde(&path(&[(1.0, 0.5)])).unwrap().jumps(), &[1.0]);
        assert_eq!(rate_from_tilde(&path(&[(1.0, -1.0)])).unwrap().jumps(), &[-0.5]);
        assert!(rate_from_tilde(&path(&[(1.0, 1.0)])).is_err());
    }

    #[test]
    fn mpr_tilde_examples() {
        let theta = path(&[(1.0, 0.5), (2.0, -0.3)]);
        assert_eq!(mpr_to_tilde(&theta, &PureJumpPath::zero()).unwrap(), theta);
        let rt = path(&[(1.0, 0.5)]);
        assert_eq!(mpr_to_tilde(&path(&[(1.0, 0.5)]), &rt).unwrap().jumps(), &[0.25]);
        assert_eq!(mpr_to_tilde(&PureJumpPath::zero(), &rt).unwrap(), PureJumpPath::zero());
        assert!(mpr_to_tilde(&path(&[(1.0, 1.0)]), &rt).is_err());

        assert_eq!(mpr_from_tilde(&path(&[(1.0, 0.25)]), &rt).unwrap().jumps(), &[0.5]);
        assert_eq!(mpr_from_tilde(&PureJumpPath::zero(), &rt).unwrap(), PureJumpPath::zero());
        assert!(mpr_from_tilde(&path(&[(1.0, 0.5)]), &rt).is_err());
    }

    #[test]
    fn inverse_examples() {
        let y = inv_stoch_exp(&path(&[(1.0, 1.0)])).unwrap();
        assert_eq!(y.jumps(), &[-0.5]);
        assert_eq!(inv_stoch_exp(&PureJumpPath::zero()).unwrap(), PureJumpPath::zero());
        let y = inv_stoch_exp(&path(&[(1.0, -0.5)])).unwrap();
        assert_eq!(y.jumps(), &[1.0]);
        assert_eq!(stoch_exp(&y).unwrap().terminal() * 0.5, 1.0);
    }

    #[test]
    fn add_and_value() {
        let x = path(&[(1.0, 1.0), (3.0, 2.0)]);
        let y = path(&[(2.0, 5.0), (3.0, -1.0)]);
        let s = x.add(&y);
        assert_eq!(s.times(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.jumps(), &[1.0, 5.0, 1.0]);
        assert_eq!(s.value_at(2.5), 6.0);
        assert_eq!(s.jump_at(2.5), 0.0);
    }

    /// Paths on a shared pool of candidate times so common jumps occur often.
    fn jump_path(lo: f64, hi: f64) -> impl Strategy<Value = PureJumpPath> {
        prop::collection::btree_map(1u32..80, lo..hi, 0..=50).prop_map(|m| {
            PureJumpPath::new(m.into_iter().map(|(k, j)| (k as f64 * 0.125, j)).collect()).unwrap()
        })
    }

    fn union_times(ps: &[&PureJumpPath]) -> Vec<f64> {
        let mut t: Vec<f64> = ps.iter().flat_map(|p| p.times().iter().copied()).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    proptest! {
        #[test]
        fn yor_identity(x in jump_path(-0.9, 5.0), y in jump_path(-0.9, 5.0)) {
            let (ex, ey) = (stoch_exp(&x).unwrap(), stoch_exp(&y).unwrap());
            let exy = stoch_exp(&yor_sum(&x, &y)).unwrap();
            for t in union_times(&[&x, &y]) {
                prop_assert!(rel(ex.value_at(t) * ey.value_at(t), exy.value_at(t)) <= 1e-12);
            }
        }

        #[test]
        fn inverse_identity(x in jump_path(-0.9, 5.0)) {
            let ex = stoch_exp(&x).unwrap();
            let ey = stoch_exp(&inv_stoch_exp(&x).unwrap()).unwrap();
            for t in x.times() {
                prop_assert!(rel(ex.value_at(*t) * ey.value_at(*t), 1.0) <= 1e-12);
            }
        }

        #[test]
        fn rate_bijection(r in jump_path(-0.9, 5.0)) {
            let rt = rate_to_tilde(&r).unwrap();
            let back = rate_from_tilde(&rt).unwrap();
            for (a, b) in back.jumps().iter().zip(r.jumps()) {
                prop_assert!(rel(*a, *b) <= 1e-12 || (a - b).abs() <= 1e-15);
            }
            let er = stoch_exp(&r).unwrap();
            let em = stoch_exp(&rt.neg()).unwrap();
            for t in r.times() {
                prop_assert!(rel(er.value_at(*t) * em.value_at(*t), 1.0) <= 1e-12);
            }
        }

        #[test]
        fn deflator_factorization(r in jump_path(-0.9, 5.0), theta in jump_path(-5.0, 0.9)) {
            let rt = rate_to_tilde(&r).unwrap();
            let tt = mpr_to_tilde(&theta, &rt).unwrap();
            for (t, j) in tt.events() {
                prop_assert!(j + rt.jump_at(t) < 1.0);
            }
            let lhs_num = stoch_exp(&theta.neg()).unwrap();
            let lhs_den = stoch_exp(&r).unwrap();
            let rhs = stoch_exp(&tt.add(&rt).neg()).unwrap();
            for t in union_times(&[&r, &theta]) {
                prop_assert!(rel(lhs_num.value_at(t) / lhs_den.value_at(t), rhs.value_at(t)) <= 1e-12);
            }
            let back = mpr_from_tilde(&tt, &rt).unwrap();
            for (a, b) in back.jumps().iter().zip(theta.jumps()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn value_helpers() {
        let e = ExpPath::new(vec![(1.0, 2.0), (2.0, 3.0)]).unwrap();
        assert_eq!(e.values(), vec![2.0, 6.0]);
        assert_relative_eq!(e.value_at(1.5), 2.0);
        assert_eq!(ExpPath::one().terminal(), 1.0);
    }
}
