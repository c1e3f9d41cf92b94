//! Command-line front end.
//!
//! Every subcommand reads an optional JSON [`ExperimentConfig`] and writes its
//! reports into the output directory. Exit codes:
//!
//! * `0` success
//! * `2` validation failure, with an error document on stderr
//! * `3` a search found a value above the no-gain bound

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    cascade_simulate, check_metzler_hurwitz, random_positive_block, steady_state_means,
    verify_no_gain_cascade, verify_prop9, CascadeSearch, CascadeTopology, LinearBlock, Stage,
};
use crate::error::{Error, Result};
use crate::io::{config_hash, write_csv, write_json, VERSION};
use crate::occupancy::periodic_orbit;
use crate::pmp::{verify_extremal_with, VerifyOptions};
use crate::signals::{ControlBounds, MeanTargets, PeriodicControl, PiecewiseSignal};
use crate::solver::{bangbang_oracle, derive_seed, monte_carlo_sweep, projected_ascent, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ALARM: i32 = 3;

/// Environment variable with the worker thread count for parallel sweeps.
pub const THREADS_ENV: &str = "OPC_THREADS";

const NORMALIZATION_NOTE: &str =
    "throughput_normalized = (1/T) * integral(u1 x1 dt) / mean(u1); throughput_raw omits the division";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeansConfig {
    pub mean0: f64,
    pub mean1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bounds: BoundsConfig,
    pub means: MeansConfig,
    pub period: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Control document for `simulate` and `pmp-check`; the constant control when absent.
    pub control: Option<PathBuf>,
    /// Cascade topology; `fig1a` with a seeded random 2-state block when absent.
    pub topology: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub samples_per_period: usize,
    /// Random controls evaluated by `optimize` besides the ascent restarts.
    pub mc_samples: usize,
    /// Phase grid of the bang-bang oracle in `optimize`; 0 disables it.
    pub bangbang_grid: usize,
    pub pmp_tolerance: f64,
    pub cascade: CascadeSearch,
    /// Random inputs tried by `cascade`.
    pub cascade_samples: usize,
    pub prop9_blocks: usize,
    pub prop9_max_dim: usize,
    /// Alarm threshold; each command has its own default.
    pub tolerance: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bounds: BoundsConfig { lower: 0.1, upper: 0.9 },
            means: MeansConfig { mean0: 0.3, mean1: 0.6 },
            period: 10.0,
            seed: 0,
            solver: SolverConfig::default(),
            control: None,
            topology: None,
            output_dir: PathBuf::from("out"),
            samples_per_period: 1000,
            mc_samples: 0,
            bangbang_grid: 0,
            pmp_tolerance: 1e-9,
            cascade: CascadeSearch::default(),
            cascade_samples: 100,
            prop9_blocks: 100,
            prop9_max_dim: 4,
            tolerance: None,
        }
    }
}

impl ExperimentConfig {
    pub fn bounds(&self) -> Result<ControlBounds> {
        ControlBounds::new(self.bounds.lower, self.bounds.upper)
    }

    pub fn means(&self) -> Result<MeanTargets> {
        MeanTargets::new(self.means.mean0, self.means.mean1, &self.bounds()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds()?;
        self.means()?;
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {}", self.period)));
        }
        self.solver.validate()?;
        if self.samples_per_period == 0 {
            return Err(Error::Config("samples_per_period must be at least 1".into()));
        }
        if !(self.pmp_tolerance.is_finite() && self.pmp_tolerance > 0.0) {
            return Err(Error::Config("pmp_tolerance must be positive".into()));
        }
        if !(1..=8).contains(&self.prop9_max_dim) {
            return Err(Error::Config("prop9_max_dim must be between 1 and 8".into()));
        }
        if let Some(t) = self.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("tolerance must be nonnegative, got {t}")));
            }
        }
        let c = &self.cascade;
        if c.n_pieces == 0 || c.ascent_resolution == 0 || c.options.min_pieces == 0 {
            return Err(Error::Config("cascade piece counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Loads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.control, &mut cfg.topology].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Hash of the effective configuration after command-line overrides.
    /// The output directory is left out since it does not affect results.
    pub fn hash(&self) -> String {
        let keyed = Self { output_dir: PathBuf::new(), ..self.clone() };
        config_hash(serde_json::to_string(&keyed).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Parser)]
#[command(name = "opc", version, about = "Optimal periodic control of a two-input occupancy model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed, overriding the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Alarm threshold, overriding the configuration.
    #[arg(long, global = true, value_name = "X")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Periodic orbit, throughput and trajectory of a control.
    Simulate,
    /// Projected-ascent search for a better periodic control.
    Optimize,
    /// Maximum-principle certificate for a control.
    PmpCheck,
    /// Cascade with a positive linear block: signals and no-gain search.
    Cascade,
    /// Mean-output identity of random positive linear blocks.
    Prop9,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Optimize => "optimize",
            Command::PmpCheck => "pmp-check",
            Command::Cascade => "cascade",
            Command::Prop9 => "prop9",
        }
    }

    fn default_tolerance(self) -> f64 {
        match self {
            Command::Cascade | Command::Prop9 => 1e-8,
            _ => 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    report: &'a T,
}

/// A command's outputs after a successful run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

struct Context {
    cfg: ExperimentConfig,
    meta: Meta,
    out: PathBuf,
    tolerance: f64,
}

impl Context {
    fn write_report<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_json(&path, &Envelope { meta: &self.meta, report })?;
        Ok(path)
    }

    fn write_table(&self, name: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_csv(&path, &self.meta.config_hash, columns, rows)?;
        Ok(path)
    }

    fn control(&self) -> Result<PeriodicControl> {
        match &self.cfg.control {
            Some(path) => {
                let ctrl = PeriodicControl::from_json(&fs::read_to_string(path)?)?;
                if ctrl.bounds() != self.cfg.bounds()? {
                    return Err(Error::Control("control bounds differ from the configured bounds".into()));
                }
                ctrl.check_means(&self.cfg.means()?, 1e-9)?;
                Ok(ctrl)
            }
            None => PeriodicControl::constant(self.cfg.period, self.cfg.bounds()?, self.cfg.means()?),
        }
    }
}

/// Builds the global worker pool from [`THREADS_ENV`] if set.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs one command with already-parsed arguments.
pub fn execute(command: Command, args: &CommonArgs) -> Result<Outcome> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.tolerance {
        cfg.tolerance = Some(t);
    }
    cfg.solver.seed = cfg.seed;
    cfg.validate()?;
    let meta = Meta {
        tool: "occupancy-opc",
        version: VERSION,
        command: command.name(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    let ctx = Context {
        out: cfg.output_dir.clone(),
        tolerance: cfg.tolerance.unwrap_or_else(|| command.default_tolerance()),
        cfg,
        meta,
    };
    match command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Optimize => cmd_optimize(&ctx),
        Command::PmpCheck => cmd_pmp_check(&ctx),
        Command::Cascade => cmd_cascade(&ctx),
        Command::Prop9 => cmd_prop9(&ctx),
    }
}

#[derive(Serialize)]
struct OrbitSummary {
    initial: f64,
    throughput_raw: f64,
    throughput_normalized: f64,
    normalization: &'static str,
    analytic_optimum: f64,
    periodicity_residual: f64,
    alpha: f64,
    min_state: f64,
    max_state: f64,
    n_pieces: usize,
    period: f64,
    trajectory_file: String,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_simulate(ctx: &Context) -> Result<Outcome> {
    let ctrl = ctx.control()?;
    let orbit = periodic_orbit(&ctrl);
    let traj = orbit.trajectory(ctx.cfg.samples_per_period);
    let csv = ctx.write_table(
        "trajectory.csv",
        &["t", "x1", "u0", "u1"],
        traj.iter().map(|p| vec![p.t, p.x1, p.u0, p.u1]),
    )?;
    let (min_state, max_state) = orbit.min_max();
    let summary = OrbitSummary {
        initial: orbit.initial,
        throughput_raw: orbit.throughput_raw,
        throughput_normalized: orbit.throughput_normalized,
        normalization: NORMALIZATION_NOTE,
        analytic_optimum: ctx.cfg.means()?.steady_occupancy(),
        periodicity_residual: orbit.periodicity_residual(),
        alpha: orbit.map.alpha,
        min_state,
        max_state,
        n_pieces: ctrl.n_pieces(),
        period: ctrl.period(),
        trajectory_file: file_name(&csv),
    };
    let json = ctx.write_report("orbit_summary.json", &summary)?;
    Ok(Outcome { exit_code: EXIT_OK, files: vec![csv, json], summary: serde_json::to_value(&summary)? })
}

#[derive(Serialize)]
struct OptimizeReport<'a> {
    #[serde(flatten)]
    ascent: &'a crate::solver::OptimizationReport,
    best_control: crate::signals::ControlDocument,
    sweep: Option<crate::solver::SweepReport>,
    bangbang: Option<crate::solver::BangBangResult>,
    /// Largest value found by any search minus the analytic optimum.
    max_gain: f64,
    tolerance: f64,
    alarm: bool,
    normalization: &'static str,
    trace_file: String,
}

fn cmd_optimize(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let (bounds, means) = (cfg.bounds()?, cfg.means()?);
    let ascent = projected_ascent(&cfg.solver, bounds, means, cfg.period)?;
    let sweep = (cfg.mc_samples > 0)
        .then(|| {
            monte_carlo_sweep(
                bounds,
                means,
                cfg.period,
                cfg.solver.n_pieces,
                cfg.mc_samples,
                derive_seed(cfg.seed, 0x5EED),
                ctx.tolerance,
            )
        })
        .transpose()?;
    let bangbang = (cfg.bangbang_grid > 0)
        .then(|| bangbang_oracle(bounds, means, cfg.period, cfg.bangbang_grid))
        .transpose()?;
    let optimum = ascent.analytic_optimum;
    let max_gain = [
        Some(ascent.gain_of_entrainment),
        sweep.as_ref().map(|s| s.max_normalized - optimum),
        bangbang.map(|b| b.max_normalized - optimum),
    ]
    .into_iter()
    .flatten()
    .fold(f64::NEG_INFINITY, f64::max);
    let alarm = max_gain > ctx.tolerance;

    let trace = ctx.write_table(
        "trace.csv",
        &["restart", "iteration", "objective", "step_norm", "accepted"],
        ascent.trace.iter().map(|e| {
            vec![e.restart as f64, e.iteration as f64, e.objective, e.step_norm, e.accepted as u8 as f64]
        }),
    )?;
    let report = OptimizeReport {
        ascent: &ascent,
        best_control: ascent.best_control.to_document(),
        sweep,
        bangbang,
        max_gain,
        tolerance: ctx.tolerance,
        alarm,
        normalization: NORMALIZATION_NOTE,
        trace_file: file_name(&trace),
    };
    let json = ctx.write_report("optimize_report.json", &report)?;
    Ok(Outcome {
        exit_code: if alarm { EXIT_ALARM } else { EXIT_OK },
        files: vec![trace, json],
        summary: serde_json::to_value(&report)?,
    })
}

#[derive(Serialize)]
struct PmpReport<'a> {
    #[serde(flatten)]
    certificate: &'a crate::pmp::Certificate,
    switching_file: String,
}

fn cmd_pmp_check(ctx: &Context) -> Result<Outcome> {
    let ctrl = ctx.control()?;
    let opts = VerifyOptions { tol: ctx.cfg.pmp_tolerance, ..VerifyOptions::default() };
    let cert = verify_extremal_with(&ctrl, &opts);
    let r = &cert.record;
    let csv = ctx.write_table(
        "switching.csv",
        &["t", "x1", "p1", "phi0", "phi1"],
        (0..r.times.len()).map(|i| vec![r.times[i], r.x1[i], r.p1[i], r.phi0[i], r.phi1[i]]),
    )?;
    let report = PmpReport { certificate: &cert, switching_file: file_name(&csv) };
    let json = ctx.write_report("certificate.json", &report)?;
    Ok(Outcome { exit_code: EXIT_OK, files: vec![csv, json], summary: serde_json::to_value(&report)? })
}

#[derive(Serialize)]
struct BlockSummary {
    stage: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    verdict: crate::cascade::BlockVerdict,
    dc_gain: f64,
    /// Mean-output identity on the simulated interstage input.
    prop9: crate::cascade::Prop9Residual,
}

#[derive(Serialize)]
struct CascadeReport {
    wiring: String,
    labels: Vec<String>,
    stage_means: Vec<f64>,
    closed_form_constant_means: Vec<f64>,
    pieces: usize,
    converged: bool,
    blocks: Vec<BlockSummary>,
    no_gain: crate::cascade::NoGainReport,
    alarm: bool,
    signals_file: String,
}

fn cmd_cascade(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let (bounds, means) = (cfg.bounds()?, cfg.means()?);
    let topo = match &cfg.topology {
        Some(p) => CascadeTopology::from_json(&fs::read_to_string(p)?)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            CascadeTopology::fig1a(random_positive_block(&mut rng, 2))?
        }
    };
    let ctrl = ctx.control()?;
    let signals = cascade_simulate(&topo, &ctrl, &cfg.cascade.options)?;
    let mut blocks = Vec::new();
    for (k, stage) in topo.stages().iter().enumerate() {
        if let Stage::Linear { block, input } = stage {
            let w = match input {
                crate::cascade::Source::Stage(j) => signals.cells[*j].clone(),
                crate::cascade::Source::External(ch) => signals
                    .grid
                    .windows(2)
                    .map(|g| {
                        let (u0, u1) = ctrl.sample(0.5 * (g[0] + g[1]));
                        [u0, u1][ch.index()]
                    })
                    .collect(),
            };
            let sig = PiecewiseSignal::new(ctrl.period(), signals.grid.clone(), w)?;
            blocks.push(block_summary(k, block, &sig)?);
        }
    }
    let no_gain = verify_no_gain_cascade(
        &topo,
        bounds,
        means,
        cfg.period,
        cfg.cascade_samples,
        cfg.seed,
        &CascadeSearch { tolerance: ctx.tolerance, ..cfg.cascade },
    )?;
    let alarm = no_gain.exceedances > 0;

    let mut columns: Vec<&str> = vec!["t"];
    columns.extend(signals.labels.iter().map(String::as_str));
    let rows = (0..signals.grid.len() - 1).map(|i| {
        let mut row = vec![signals.grid[i]];
        row.extend(signals.cells.iter().map(|c| c[i]));
        row
    });
    let csv = ctx.write_table("cascade_signals.csv", &columns, rows)?;
    let report = CascadeReport {
        wiring: topo.wiring().to_string(),
        labels: signals.labels.clone(),
        stage_means: signals.means.clone(),
        closed_form_constant_means: steady_state_means(&topo, means)?,
        pieces: signals.grid.len() - 1,
        converged: signals.converged,
        blocks,
        no_gain,
        alarm,
        signals_file: file_name(&csv),
    };
    let json = ctx.write_report("cascade_report.json", &report)?;
    Ok(Outcome {
        exit_code: if alarm { EXIT_ALARM } else { EXIT_OK },
        files: vec![csv, json],
        summary: serde_json::to_value(&report)?,
    })
}

fn block_summary(stage: usize, block: &LinearBlock, w: &PiecewiseSignal) -> Result<BlockSummary> {
    let prop9 = verify_prop9(block, w)?;
    Ok(BlockSummary {
        stage,
        a: block.rows(),
        b: block.b().iter().copied().collect(),
        c: block.c().iter().copied().collect(),
        verdict: check_metzler_hurwitz(block),
        dc_gain: prop9.dc_gain,
        prop9,
    })
}

#[derive(Serialize)]
struct Prop9Case {
    index: usize,
    dim: usize,
    period: f64,
    high: f64,
    low: f64,
    duty: f64,
    phase: f64,
    #[serde(flatten)]
    residual: crate::cascade::Prop9Residual,
}

#[derive(Serialize)]
struct Prop9Report {
    blocks: usize,
    max_relative_residual: f64,
    tolerance: f64,
    alarm: bool,
    cases: Vec<Prop9Case>,
}

fn cmd_prop9(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let cases: Vec<Prop9Case> = (0..cfg.prop9_blocks)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
            let dim = rng.gen_range(1..=cfg.prop9_max_dim);
            let block = random_positive_block(&mut rng, dim);
            let period = rng.gen_range(0.5..20.0);
            let low = rng.gen_range(0.0..1.0);
            let high = low + rng.gen_range(0.1..2.0);
            let duty = rng.gen_range(0.05..0.95);
            let phase = rng.gen_range(0.0..1.0);
            let w = PiecewiseSignal::square_wave(period, high, low, duty, phase)?;
            Ok(Prop9Case { index: i, dim, period, high, low, duty, phase, residual: verify_prop9(&block, &w)? })
        })
        .collect::<Result<_>>()?;
    let max_relative_residual = cases.iter().map(|c| c.residual.relative).fold(0.0, f64::max);
    let alarm = max_relative_residual > ctx.tolerance;
    let csv = ctx.write_table(
        "prop9.csv",
        &["index", "dim", "mean_input", "mean_output", "dc_gain", "relative_residual"],
        cases.iter().map(|c| {
            vec![
                c.index as f64,
                c.dim as f64,
                c.residual.mean_input,
                c.residual.mean_output,
                c.residual.dc_gain,
                c.residual.relative,
            ]
        }),
    )?;
    let report = Prop9Report { blocks: cases.len(), max_relative_residual, tolerance: ctx.tolerance, alarm, cases };
    let json = ctx.write_report("prop9_report.json", &report)?;
    Ok(Outcome {
        exit_code: if alarm { EXIT_ALARM } else { EXIT_OK },
        files: vec![csv, json],
        summary: serde_json::to_value(&report)?,
    })
}

#[derive(Serialize)]
struct ErrorDocument<'a> {
    error: &'a str,
    message: String,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match execute(cli.command, &cli.common) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            outcome.exit_code
        }
        Err(e) => {
            let doc = ErrorDocument { error: e.kind(), message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&doc).expect("error document serializes"));
            EXIT_VALIDATION
        }
    }
}
