use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elmd::linalg::Tolerances;
use elmd::model::{MarketSpec, TimeGrid};
use elmd::sim::{self, HestonParams, PathBundle, Recording, SimConfig};
use elmd::solver::{self, DeflatorSpec};
use elmd::termstruct::{self, BhReport};
use elmd::verify::{self, GirsanovReport, MartingaleReport};
use serde::Serialize;

use crate::config::{parse_config, ModelConfig, RunConfig};
use crate::output::{csv_table, float, path_dump, to_json};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "elmd", version, about = "Deflator existence, construction, simulation and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Existence test and construction at every grid point.
    Analyze(CommonArgs),
    /// Emit the deflator components (θ, ρ, r) per grid point.
    Solve(CommonArgs),
    /// Simulate market and deflator paths.
    Simulate(CommonArgs),
    /// Martingale and Girsanov Monte-Carlo checks.
    Verify(CommonArgs),
    /// Forward-rate drift condition: synthesized drift and residuals.
    Hjm(CommonArgs),
    /// Density-model drift and consistency residuals.
    Bh(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `simulation.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Overrides `simulation.paths`.
    #[arg(long)]
    pub paths: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Analyze,
    Solve,
    Simulate,
    Verify,
    Hjm,
    Bh,
}

impl Command {
    fn split(&self) -> (CommandKind, &CommonArgs) {
        match self {
            Self::Analyze(a) => (CommandKind::Analyze, a),
            Self::Solve(a) => (CommandKind::Solve, a),
            Self::Simulate(a) => (CommandKind::Simulate, a),
            Self::Verify(a) => (CommandKind::Verify, a),
            Self::Hjm(a) => (CommandKind::Hjm, a),
            Self::Bh(a) => (CommandKind::Bh, a),
        }
    }
}

/// Report text and whether every check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub pass: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(cli: &Cli) -> Result<i32, CliError> {
    let (kind, args) = cli.command.split();
    let path = args.config.display().to_string();
    let text = std::fs::read_to_string(&args.config).map_err(|source| CliError::Io { path: path.clone(), source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.simulation.paths = paths;
        cfg.validate()?;
    }
    let out = execute(kind, &cfg, args.format)?;
    match &args.out {
        Some(p) => std::fs::write(p, &out.text)
            .map_err(|source| CliError::Io { path: p.display().to_string(), source })?,
        None => print!("{}", out.text),
    }
    Ok(out.exit_code())
}

/// Runs one command on a validated configuration.
pub fn execute(kind: CommandKind, cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    match kind {
        CommandKind::Analyze => analyze(cfg, format),
        CommandKind::Solve => solve(cfg, format),
        CommandKind::Simulate => simulate(cfg, format),
        CommandKind::Verify => verify(cfg, format),
        CommandKind::Hjm => hjm(cfg, format),
        CommandKind::Bh => bh(cfg, format),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(";")
}

/// The market to analyze. Heston coefficients depend on the variance, so
/// the deterministic mean-variance path `E[v_t]` stands in for it.
fn analysis_market(cfg: &RunConfig) -> Result<MarketSpec, CliError> {
    let grid = cfg.grid()?;
    match &cfg.model {
        ModelConfig::Heston(_) => {
            let h = cfg.heston()?;
            let v: Vec<f64> = grid
                .times()
                .iter()
                .map(|&t| h.long_run + (h.v0 - h.long_run) * (-h.kappa * t).exp())
                .collect();
            Ok(h.path_spec(&grid, &v)?)
        }
        _ => cfg.market(grid),
    }
}

fn analyze(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    let spec = analysis_market(cfg)?;
    let report = solver::analyze(&spec, &cfg.policy()?, &Tolerances::default())?;
    let text = match format {
        Format::Json => to_json(&report)?,
        Format::Csv => csv_table(
            &["index", "time", "feasible", "residual", "c_mod_feasible", "rate", "theta", "rho", "margin_violations"],
            report.points.iter().map(|p| {
                vec![
                    p.index.to_string(),
                    float(p.time),
                    p.feasible.to_string(),
                    float(p.residual),
                    p.c_mod_feasible.to_string(),
                    float(p.rate),
                    join(&p.theta),
                    join(&p.rho),
                    p.margin_violations.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
                ]
            }),
        ),
    };
    Ok(Outcome { text, pass: report.verdict })
}

fn deflator_csv(defl: &DeflatorSpec, grid: &TimeGrid) -> String {
    csv_table(
        &["index", "time", "rate", "theta", "rho"],
        defl.points.iter().enumerate().map(|(k, p)| {
            vec![k.to_string(), float(grid.time(k)), float(p.rate), join(&p.theta), join(&p.rho)]
        }),
    )
}

fn solve(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    let spec = analysis_market(cfg)?;
    let defl = solver::solve(&spec, &cfg.policy()?, &Tolerances::default())?;
    let text = match format {
        Format::Json => to_json(&defl)?,
        Format::Csv => deflator_csv(&defl, spec.grid()),
    };
    Ok(Outcome { text, pass: true })
}

/// Simulated bundle with the deflator when one exists. When the market is
/// infeasible only prices are drawn and the solver error is returned too.
fn simulate_bundle(cfg: &RunConfig, record: Recording) -> Result<(PathBundle, Option<CliError>), CliError> {
    let grid = cfg.grid()?;
    let sc = SimConfig::new(cfg.simulation.paths, cfg.simulation.seed).recording(record);
    if let ModelConfig::Heston(_) = cfg.model {
        let h: HestonParams = cfg.heston()?;
        return Ok((sim::simulate_heston(&h, &grid, &sc, true)?, None));
    }
    let spec = cfg.market(grid)?;
    let market = sim::simulate_market(&spec, &sc)?;
    match solver::solve(&spec, &cfg.policy()?, &Tolerances::default()) {
        Ok(defl) => Ok((sim::simulate_deflator(&defl, &market)?, None)),
        Err(e @ (elmd::Error::Infeasible { .. } | elmd::Error::MarginViolated { .. })) => Ok((market, Some(e.into()))),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct PathJson {
    path: usize,
    time: Vec<f64>,
    assets: Vec<Vec<f64>>,
    density: Vec<f64>,
    deflator: Vec<f64>,
    numeraire: Vec<f64>,
}

fn simulate(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    let (bundle, failure) = simulate_bundle(cfg, Recording::All)?;
    if let Some(e) = &failure {
        eprintln!("warning: {e}; writing market paths only");
    }
    let text = match format {
        Format::Csv => path_dump(&bundle),
        Format::Json => {
            let times: Vec<f64> = bundle.recorded().iter().map(|&k| bundle.grid().time(k)).collect();
            let rows: Vec<PathJson> = bundle
                .paths()
                .iter()
                .enumerate()
                .map(|(p, d)| PathJson {
                    path: p,
                    time: times.clone(),
                    assets: (0..bundle.recorded().len())
                        .map(|r| (0..bundle.assets()).map(|i| bundle.asset(p, r, i)).collect())
                        .collect(),
                    density: d.density.clone(),
                    deflator: d.deflator.clone(),
                    numeraire: d.numeraire.clone(),
                })
                .collect();
            to_json(&rows)?
        }
    };
    Ok(Outcome { text, pass: failure.is_none() })
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub martingale: MartingaleReport,
    pub girsanov: GirsanovReport,
    pub verdict: bool,
}

fn verify(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    let grid = cfg.grid()?;
    let checkpoints = cfg.checkpoints();
    let tol = 1e-9 * (1.0 + grid.horizon());
    let idx = checkpoints
        .iter()
        .map(|&t| {
            grid.index_of(t, tol)
                .ok_or_else(|| CliError::Validation(format!("verification.checkpoints: {t} is not a grid time")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (bundle, failure) = simulate_bundle(cfg, Recording::at(&idx))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let k = cfg.verification.k_sigma;
    let martingale = verify::martingale_test(&bundle, &checkpoints, k)?;
    let girsanov = verify::girsanov_test(&bundle, &checkpoints, k)?;
    let verdict = martingale.verdict && girsanov.verdict;
    let report = VerifyReport { martingale, girsanov, verdict };
    let text = match format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let m = report.martingale.entries.iter().map(|e| {
                vec![
                    "martingale".into(),
                    "deflated_price".into(),
                    e.asset.to_string(),
                    float(e.time),
                    float(e.initial),
                    float(e.mean),
                    float(e.std_error),
                    float(e.z),
                    e.pass.to_string(),
                ]
            });
            let g = report.girsanov.entries.iter().map(|e| {
                let check = serde_json::to_value(e.check).ok().and_then(|v| v.as_str().map(String::from));
                vec![
                    "girsanov".into(),
                    check.unwrap_or_default(),
                    e.component.map(|c| c.to_string()).unwrap_or_default(),
                    float(e.time),
                    float(e.target),
                    float(e.mean),
                    float(e.std_error),
                    float(e.z),
                    e.pass.to_string(),
                ]
            });
            csv_table(
                &["test", "check", "component", "time", "target", "mean", "std_error", "z", "pass"],
                m.chain(g).collect::<Vec<_>>(),
            )
        }
    };
    Ok(Outcome { text, pass: verdict })
}

fn json_only(format: Format, what: &str) -> Result<(), CliError> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(CliError::Unsupported(format!("{what} reports are only available as json"))),
    }
}

#[derive(Debug, Serialize)]
pub struct HjmReport {
    pub alpha: Vec<Vec<f64>>,
    pub short_rate: Vec<f64>,
    pub savings: Vec<f64>,
    /// Largest residual after replacing the drift by the synthesized one.
    pub synthesized_max_residual: f64,
    /// Largest residual of the configured drift, when one is given.
    pub given_max_residual: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

fn hjm(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    json_only(format, "hjm")?;
    let (surface, defl) = cfg.hjm_surface()?;
    let section = cfg.hjm.as_ref().expect("validated hjm section");
    let syn = termstruct::hjm_synthesize_alpha(&surface, &defl)?;
    let synthesized = surface.with_alpha(syn.alpha.clone())?.max_drift_residual(&defl)?;
    let given = match section.alpha {
        Some(_) => Some(surface.max_drift_residual(&defl)?),
        None => None,
    };
    let tol = section.tolerance;
    let pass = synthesized <= tol && given.is_none_or(|g| g <= tol);
    let report = HjmReport {
        alpha: syn.alpha,
        short_rate: syn.short_rate,
        savings: syn.savings,
        synthesized_max_residual: synthesized,
        given_max_residual: given,
        tolerance: tol,
        pass,
    };
    Ok(Outcome { text: to_json(&report)?, pass })
}

#[derive(Debug, Serialize)]
pub struct BhOutput {
    pub synthesized: bool,
    pub rate: f64,
    pub alpha_bar: Vec<f64>,
    pub report: BhReport,
}

fn bh(cfg: &RunConfig, format: Format) -> Result<Outcome, CliError> {
    json_only(format, "bh")?;
    let b = cfg.bh.as_ref().ok_or_else(|| CliError::Validation("missing [bh] section".into()))?;
    let (family, rate, synthesized) = match (&b.alpha_bar, b.rate) {
        (Some(_), Some(r)) => (cfg.bh_family()?, r, false),
        (Some(_), None) => return Err(CliError::Validation("bh.rate is required with bh.alpha_bar".into())),
        (None, _) => {
            let (f, r) = termstruct::bh_synthesize(
                b.x.clone(),
                b.density.clone(),
                b.sigma_bar.clone(),
                cfg.bh_gamma(),
                b.intensities.clone(),
                &b.theta,
                &b.rho,
                b.quad_tol,
            )?;
            (f, r, true)
        }
    };
    let report = termstruct::bh_check(&family, &b.theta, &b.rho, rate)?;
    let pass = report.pass;
    let out = BhOutput { synthesized, rate, alpha_bar: family.alpha_bar().to_vec(), report };
    Ok(Outcome { text: to_json(&out)?, pass })
}
