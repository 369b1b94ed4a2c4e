//! Monte-Carlo checks on simulated bundles: deflated prices keep their
//! initial mean, and the density `D` changes the measure as intended.
//!
//! Sample statistics are accumulated sequentially in path order, so a report
//! depends only on the bundle, never on thread scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::PathBundle;

pub const DEFAULT_K_SIGMA: f64 = 4.0;

/// Attached verbatim to every report.
pub const LOCAL_MARTINGALE_CAVEAT: &str = "Deflators are only required to make S·Z a local martingale; \
for models where S·Z is a strict local martingale the mean test will correctly detect mean decay \
but this is not a bug.";

/// Relative slack absorbing summation rounding when the sample is
/// (nearly) constant and the standard error vanishes.
const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl SampleStats {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, n };
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let ss: f64 = values.map(|x| (x - mean) * (x - mean)).sum();
        let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        Self { mean, std_error: (var / n as f64).sqrt(), n }
    }

    /// `(mean - target)/SE`; zero when both numerator and SE vanish.
    pub fn z(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if diff.abs() <= rounding_floor(self.mean, target) {
            0.0
        } else {
            diff / self.std_error
        }
    }

    pub fn passes(&self, target: f64, k_sigma: f64) -> bool {
        (self.mean - target).abs() <= k_sigma * self.std_error + rounding_floor(self.mean, target)
    }
}

fn rounding_floor(mean: f64, target: f64) -> f64 {
    ROUNDING_FLOOR * (mean.abs() + target.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleEntry {
    pub asset: usize,
    pub time: f64,
    pub initial: f64,
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub k_sigma: f64,
    pub entries: Vec<MartingaleEntry>,
    pub verdict: bool,
    /// `max |Z̄ Z - 1|` when the numéraire was simulated.
    pub max_inverse_defect: Option<f64>,
    /// Grid points where a state-dependent variance hit its floor.
    pub variance_clamps: usize,
    pub caveat: String,
}

fn check_k(k_sigma: f64) -> Result<()> {
    if k_sigma.is_finite() && k_sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("k_sigma must be positive, got {k_sigma}")))
    }
}

/// Recorded positions of the checkpoint times.
fn checkpoint_records(bundle: &PathBundle, checkpoints: &[f64]) -> Result<Vec<(f64, usize)>> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("no checkpoints given"));
    }
    checkpoints
        .iter()
        .map(|&t| {
            let k = bundle
                .grid()
                .index_of(t, 1e-9 * (1.0 + t.abs()))
                .ok_or_else(|| Error::invalid(format!("checkpoint {t} is not a grid time")))?;
            let r = bundle
                .record_of(k)
                .ok_or_else(|| Error::invalid(format!("checkpoint {t} was not recorded")))?;
            Ok((bundle.grid().time(k), r))
        })
        .collect()
}

/// Tests `E[S^i_t Z_t] = S^i_0` at each checkpoint.
pub fn martingale_test(bundle: &PathBundle, checkpoints: &[f64], k_sigma: f64) -> Result<MartingaleReport> {
    check_k(k_sigma)?;
    if !bundle.has_deflator() {
        return Err(Error::invalid("bundle has no simulated deflator"));
    }
    let recs = checkpoint_records(bundle, checkpoints)?;
    let s0 = bundle.initial();
    let mut entries = Vec::new();
    for &(time, r) in &recs {
        for (i, &init) in s0.iter().enumerate() {
            let vals = (0..bundle.len()).map(move |p| bundle.asset(p, r, i) * bundle.paths()[p].deflator[r]);
            let st = SampleStats::of(vals);
            entries.push(MartingaleEntry {
                asset: i,
                time,
                initial: init,
                mean: st.mean,
                std_error: st.std_error,
                z: st.z(init),
                pass: st.passes(init, k_sigma),
            });
        }
    }
    Ok(MartingaleReport {
        paths: bundle.len(),
        k_sigma,
        verdict: entries.iter().all(|e| e.pass),
        entries,
        max_inverse_defect: bundle.has_numeraire().then(|| bundle.max_inverse_defect()),
        variance_clamps: bundle.clamps(),
        caveat: LOCAL_MARTINGALE_CAVEAT.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GirsanovCheck {
    /// `E[D_t] = 1`
    DensityMean,
    /// `E[D_t W'_t] = 0` with `W' = W + ∫θ dt`
    ShiftedBrownian,
    /// `E[D_t (N^j_t - c_j(1-ρ_j)t)] = 0`
    CompensatedCount,
    /// `E[D_t N^j_t] = c_j(1-ρ_j)t`
    ThinnedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovEntry {
    pub check: GirsanovCheck,
    /// Brownian factor or mark index, where applicable.
    pub component: Option<usize>,
    pub time: f64,
    pub target: f64,
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovReport {
    pub paths: usize,
    pub k_sigma: f64,
    pub entries: Vec<GirsanovEntry>,
    pub verdict: bool,
    pub caveat: String,
}

/// Checks that `D` is a density under which `W'` is a Brownian motion and
/// the jump counts have thinned intensities.
pub fn girsanov_test(bundle: &PathBundle, checkpoints: &[f64], k_sigma: f64) -> Result<GirsanovReport> {
    check_k(k_sigma)?;
    if !bundle.has_deflator() {
        return Err(Error::invalid("bundle has no simulated density"));
    }
    let recs = checkpoint_records(bundle, checkpoints)?;
    let np = bundle.len();
    let dens = |p: usize, r: usize| bundle.paths()[p].density[r];
    let mut entries = Vec::new();
    let mut push = |check, component, time, target, st: SampleStats| {
        entries.push(GirsanovEntry {
            check,
            component,
            time,
            target,
            mean: st.mean,
            std_error: st.std_error,
            z: st.z(target),
            pass: st.passes(target, k_sigma),
        });
    };
    for &(time, r) in &recs {
        push(GirsanovCheck::DensityMean, None, time, 1.0, SampleStats::of((0..np).map(|p| dens(p, r))));
        for f in 0..bundle.factors() {
            let st = SampleStats::of((0..np).map(|p| dens(p, r) * (bundle.w(p, r, f) + bundle.theta_integral(p, r, f))));
            push(GirsanovCheck::ShiftedBrownian, Some(f), time, 0.0, st);
        }
        for j in 0..bundle.marks() {
            let comp = bundle.thinned_compensator(r, j).expect("deflator bundles carry compensators");
            let st = SampleStats::of((0..np).map(|p| dens(p, r) * (bundle.count(p, r, j) as f64 - comp)));
            push(GirsanovCheck::CompensatedCount, Some(j), time, 0.0, st);
            let st = SampleStats::of((0..np).map(|p| dens(p, r) * bundle.count(p, r, j) as f64));
            push(GirsanovCheck::ThinnedCount, Some(j), time, comp, st);
        }
    }
    Ok(GirsanovReport {
        paths: np,
        k_sigma,
        verdict: entries.iter().all(|e| e.pass),
        entries,
        caveat: LOCAL_MARTINGALE_CAVEAT.to_string(),
    })
}
