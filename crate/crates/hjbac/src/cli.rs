//! Command-line front end: flag/config parsing, experiment orchestration,
//! and plot-ready CSV export.
//!
//! Three subcommands:
//! - `train`: runs the full schedule, writing `training_curve.csv`, the
//!   final `networks.hjbn` / `checkpoint.hjbb`, and a `manifest.txt`;
//! - `density`: loads a networks file and compares the distribution of the
//!   learned value against the exact one over uniform ball samples;
//! - `compare`: trains every cell of a `{scheme} x {td}` or horizon grid
//!   with a shared seed and tabulates the final errors.
//!
//! Settings resolve in three layers: problem defaults, then the optional
//! `--config` file (flat `key = value` lines, `#` comments and `[section]`
//! headers ignored), then flags. Every config key has a flag of the same
//! name. A manifest is written exactly once per run, even on abort.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, bad checkpoint),
//! 2 usage error, 3 numeric failure during training.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::losses::TdKind;
use crate::networks::{load_networks, save_networks, CheckpointError, MlpScratch};
use crate::rng::StreamKind;
use crate::rollout::Scheme;
use crate::trainer::{MetricsRecord, TrainConfig, TrainError, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Entry point shared by the binary and the tests; returns the exit code.
/// `args` must include the program name.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Density(a) => cmd_density(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
}

#[derive(Parser)]
#[command(
    name = "hjbac",
    version,
    about = "Actor-critic solver for static HJB equations on a ball"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train value/control networks on one benchmark problem.
    Train(TrainArgs),
    /// Histogram the learned vs exact value over uniform ball samples.
    Density(DensityArgs),
    /// Train every cell of a scheme/TD or horizon grid and tabulate errors.
    Compare(CompareArgs),
}

/// Flags mirroring the config-file keys; unset values fall back to the
/// config file and then to the problem defaults.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Benchmark problem: lqr | vdp | eikonal | nclqr.
    #[arg(long)]
    problem: Option<String>,
    /// State dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Stepping scheme: naive | adaptive.
    #[arg(long)]
    scheme: Option<String>,
    /// Temporal-difference variant: vr-lstd | lstd.
    #[arg(long)]
    td: Option<String>,
    /// Trajectory horizon.
    #[arg(long = "T")]
    t_horizon: Option<f64>,
    /// Number of nominal time intervals.
    #[arg(long = "N")]
    n_intervals: Option<usize>,
    /// Trajectories (and boundary points) per iteration.
    #[arg(long)]
    batch: Option<usize>,
    /// Boundary-penalty weight.
    #[arg(long)]
    eta: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden-layer width.
    #[arg(long)]
    width: Option<usize>,
    /// Hidden-layer count.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long = "iters-stage1")]
    iters_stage1: Option<u64>,
    #[arg(long = "iters-stage2")]
    iters_stage2: Option<u64>,
    #[arg(long = "iters-stage3")]
    iters_stage3: Option<u64>,
    /// Validation cadence in iterations.
    #[arg(long = "eval-every")]
    eval_every: Option<u64>,
    /// Differentiate the actor loss through state-dependent step sizes.
    #[arg(long = "grad-through-h", value_parser = ["on", "off"])]
    grad_through_h: Option<String>,
    /// Flat key = value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSVs, checkpoints, and the manifest.
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dump the first critic batch as a per-step CSV before training.
    #[arg(long = "debug-dump-traj")]
    debug_dump_traj: bool,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Networks file ("HJBN") holding the learned value network.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Uniform ball samples for the histogram.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid to sweep: all four scheme/TD cells, or a horizon sweep at
    /// fixed N.
    #[arg(long, default_value = "scheme-td", value_parser = ["scheme-td", "horizon"])]
    grid: String,
    /// Horizons for the horizon grid.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.4")]
    horizons: Vec<f64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numeric(String),
    Other(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Other(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Numeric { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Other(e.to_string())
    }
}

// --- configuration resolution ------------------------------------------

/// Parses a flat `key = value` file. Blank lines, `#`/`;` comments, and
/// `[section]` headers are skipped; later duplicates win.
fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

fn parse_scheme(value: &str) -> Result<Scheme, String> {
    match value {
        "naive" => Ok(Scheme::Naive),
        "adaptive" => Ok(Scheme::Adaptive),
        other => Err(format!("unknown scheme '{other}' (naive | adaptive)")),
    }
}

fn parse_td(value: &str) -> Result<TdKind, String> {
    match value {
        "vr-lstd" => Ok(TdKind::VrLstd),
        "lstd" => Ok(TdKind::Lstd),
        other => Err(format!("unknown TD variant '{other}' (vr-lstd | lstd)")),
    }
}

fn parse_on_off(value: &str) -> Result<bool, String> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

/// Applies one config-file key. The key set matches
/// [`TrainConfig::canonical_string`], so a saved config echo feeds back in
/// unchanged.
fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "problem" => cfg.problem = value.to_string(),
        "dim" => cfg.dim = parse_value(key, value)?,
        "scheme" => cfg.scheme = parse_scheme(value)?,
        "td" => cfg.td = parse_td(value)?,
        "T" => cfg.t_horizon = parse_value(key, value)?,
        "N" => cfg.n_intervals = parse_value(key, value)?,
        "batch" => cfg.batch = parse_value(key, value)?,
        "eta" => cfg.eta = parse_value(key, value)?,
        "width" => cfg.width = parse_value(key, value)?,
        "depth" => cfg.depth = parse_value(key, value)?,
        "iters-stage1" => cfg.stage_iters[0] = parse_value(key, value)?,
        "iters-stage2" => cfg.stage_iters[1] = parse_value(key, value)?,
        "iters-stage3" => cfg.stage_iters[2] = parse_value(key, value)?,
        "lr-stage1" => cfg.stage_lrs[0] = parse_value(key, value)?,
        "lr-stage2" => cfg.stage_lrs[1] = parse_value(key, value)?,
        "lr-stage3" => cfg.stage_lrs[2] = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "eval-every" => cfg.eval_every = parse_value(key, value)?,
        "grad-through-h" => cfg.grad_through_h = parse_on_off(value)?,
        "p" => cfg.params.p = parse_value(key, value)?,
        "q" => cfg.params.q = parse_value(key, value)?,
        "beta" => cfg.params.beta = parse_value(key, value)?,
        "gamma" => cfg.params.gamma = parse_value(key, value)?,
        "radius" => cfg.params.radius = parse_value(key, value)?,
        "a" => cfg.params.a = parse_value(key, value)?,
        "eps" => cfg.params.eps = parse_value(key, value)?,
        "a2" => cfg.params.a2 = parse_value(key, value)?,
        "a3" => cfg.params.a3 = parse_value(key, value)?,
        "u-max" => cfg.params.u_max = parse_value(key, value)?,
        other => return Err(format!("unknown config key '{other}'")),
    }
    Ok(())
}

/// Defaults <- config file <- flags. The problem and dimension must come
/// from one of the latter two so the dimension-dependent defaults are
/// computed for the run that actually happens.
fn resolve_config(c: &CommonArgs) -> Result<TrainConfig, CliError> {
    let pairs = match &c.config {
        Some(path) => parse_config_file(path)?,
        None => Vec::new(),
    };
    let from_file = |key: &str| {
        pairs
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
    };

    let problem = c
        .problem
        .clone()
        .or_else(|| from_file("problem"))
        .ok_or_else(|| CliError::Usage("missing --problem (flag or config file)".into()))?;
    let dim = match c.dim {
        Some(d) => d,
        None => {
            let s = from_file("dim")
                .ok_or_else(|| CliError::Usage("missing --dim (flag or config file)".into()))?;
            parse_value("dim", &s).map_err(CliError::Usage)?
        }
    };

    let mut cfg = TrainConfig::for_problem(&problem, dim);
    for (key, value) in &pairs {
        if key == "problem" || key == "dim" {
            continue;
        }
        apply_key(&mut cfg, key, value).map_err(CliError::Usage)?;
    }

    if let Some(v) = &c.scheme {
        cfg.scheme = parse_scheme(v).map_err(CliError::Usage)?;
    }
    if let Some(v) = &c.td {
        cfg.td = parse_td(v).map_err(CliError::Usage)?;
    }
    if let Some(v) = c.t_horizon {
        cfg.t_horizon = v;
    }
    if let Some(v) = c.n_intervals {
        cfg.n_intervals = v;
    }
    if let Some(v) = c.batch {
        cfg.batch = v;
    }
    if let Some(v) = c.eta {
        cfg.eta = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.width {
        cfg.width = v;
    }
    if let Some(v) = c.depth {
        cfg.depth = v;
    }
    if let Some(v) = c.iters_stage1 {
        cfg.stage_iters[0] = v;
    }
    if let Some(v) = c.iters_stage2 {
        cfg.stage_iters[1] = v;
    }
    if let Some(v) = c.iters_stage3 {
        cfg.stage_iters[2] = v;
    }
    if let Some(v) = c.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = &c.grad_through_h {
        cfg.grad_through_h = parse_on_off(v).map_err(CliError::Usage)?;
    }
    Ok(cfg)
}

// --- manifest -----------------------------------------------------------

#[derive(Default)]
struct Manifest {
    command: &'static str,
    seed: Option<u64>,
    config_echo: String,
    err_v: Option<f64>,
    err_u: Option<f64>,
    outputs: Vec<&'static str>,
    failure: Option<String>,
    wall_clock: f64,
}

fn write_manifest(path: &Path, m: &Manifest) -> io::Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "artifact = hjbac {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "command = {}", m.command)?;
    writeln!(
        f,
        "status = {}",
        if m.failure.is_none() { "ok" } else { "aborted" }
    )?;
    if let Some(reason) = &m.failure {
        writeln!(f, "failure = {}", reason.replace('\n', " "))?;
    }
    if let Some(seed) = m.seed {
        writeln!(f, "seed = {seed}")?;
    }
    writeln!(f, "wall_clock_seconds = {:.3}", m.wall_clock)?;
    if let Some(v) = m.err_v {
        writeln!(f, "final_err_v = {v}")?;
    }
    if let Some(u) = m.err_u {
        writeln!(f, "final_err_u = {u}")?;
    }
    writeln!(f, "outputs = {}", m.outputs.join(", "))?;
    if !m.config_echo.is_empty() {
        writeln!(f, "\n[config]")?;
        f.write_all(m.config_echo.as_bytes())?;
    }
    f.flush()
}

/// Creates the output directory, runs `body`, and writes the manifest
/// exactly once — also when `body` fails partway.
fn run_command(
    out_dir: &Path,
    command: &'static str,
    body: impl FnOnce(&mut Manifest) -> Result<(), CliError>,
) -> i32 {
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_FAILURE;
    }
    let started = Instant::now();
    let mut manifest = Manifest {
        command,
        ..Manifest::default()
    };
    let result = body(&mut manifest);
    manifest.wall_clock = started.elapsed().as_secs_f64();
    if let Err(e) = &result {
        manifest.failure = Some(e.message().to_string());
    }
    if let Err(e) = write_manifest(&out_dir.join("manifest.txt"), &manifest) {
        eprintln!("error: cannot write manifest: {e}");
        if result.is_ok() {
            return EXIT_FAILURE;
        }
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

// --- train --------------------------------------------------------------

fn cmd_train(a: &TrainArgs) -> i32 {
    let out = a.common.out_dir.clone();
    run_command(&out, "train", |m| {
        let cfg = resolve_config(&a.common)?;
        m.seed = Some(cfg.seed);
        m.config_echo = cfg.canonical_string();
        let total = cfg.total_iters();
        let mut trainer = Trainer::new(cfg)?;

        if a.debug_dump_traj {
            write_traj_dump(&out.join("traj_dump.csv"), &trainer)?;
            m.outputs.push("traj_dump.csv");
        }

        let ckpt_path = out.join("checkpoint.hjbb");
        let result = trainer.run(total, Some(&ckpt_path));

        write_training_curve(&out.join("training_curve.csv"), &trainer.history)?;
        m.outputs.push("training_curve.csv");
        if let Some((ev, eu)) = trainer.validate_now() {
            m.err_v = Some(ev);
            m.err_u = Some(eu);
        }

        match result {
            Ok(()) => {
                trainer.save_checkpoint(&ckpt_path)?;
                m.outputs.push("checkpoint.hjbb");
                let nets = &trainer.nets;
                let mut named: Vec<(&str, &crate::networks::ResidualMlp)> =
                    vec![("value", &nets.value)];
                if let Some(g) = &nets.grad {
                    named.push(("grad", g));
                }
                named.push(("control", &nets.control));
                save_networks(&out.join("networks.hjbn"), &named)?;
                m.outputs.push("networks.hjbn");
                Ok(())
            }
            Err(e) => {
                // `run` already wrote the rescue checkpoint on numeric failure.
                if ckpt_path.exists() {
                    m.outputs.push("checkpoint.hjbb");
                }
                Err(e.into())
            }
        }
    })
}

fn write_training_curve(path: &Path, rows: &[MetricsRecord]) -> io::Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(
        f,
        "iter,err_v,err_u,critic_loss,boundary_loss,actor_loss,truncation_rate"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.iter, r.err_v, r.err_u, r.critic_loss, r.boundary_loss, r.actor_loss,
            r.truncation_rate
        )?;
    }
    f.flush()
}

fn write_traj_dump(path: &Path, trainer: &Trainer) -> io::Result<()> {
    let trajs = trainer.debug_trajectories();
    let d = trainer.problem.dim();
    let du = trainer.problem.control_dim();
    let mut f = BufWriter::new(fs::File::create(path)?);
    write!(f, "traj,step,time,h,kind,exit,truncated")?;
    for i in 0..d {
        write!(f, ",x{i}")?;
    }
    for i in 0..du {
        write!(f, ",u{i}")?;
    }
    for i in 0..d {
        write!(f, ",xi{i}")?;
    }
    writeln!(f)?;
    for (k, traj) in trajs.iter().enumerate() {
        let flags = (traj.exit as u8, traj.truncated as u8);
        for n in 0..traj.n_steps() {
            write!(
                f,
                "{k},{n},{},{},{},{},{}",
                traj.times[n],
                traj.steps[n],
                traj.step_kinds[n].as_str(),
                flags.0,
                flags.1
            )?;
            for v in traj.state(n) {
                write!(f, ",{v}")?;
            }
            for v in traj.control(n) {
                write!(f, ",{v}")?;
            }
            for v in traj.noise(n) {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "{k},{},{},0,end,{},{}",
            traj.n_steps(),
            traj.terminal_time(),
            flags.0,
            flags.1
        )?;
        for v in traj.last_state() {
            write!(f, ",{v}")?;
        }
        for _ in 0..du + d {
            write!(f, ",0")?;
        }
        writeln!(f)?;
    }
    f.flush()
}

// --- density ------------------------------------------------------------

const DENSITY_BINS: usize = 100;

fn cmd_density(a: &DensityArgs) -> i32 {
    let out = a.common.out_dir.clone();
    run_command(&out, "density", |m| {
        let cfg = resolve_config(&a.common)?;
        m.seed = Some(cfg.seed);
        m.config_echo = cfg.canonical_string();
        let problem = cfg.build_problem()?;
        if a.samples == 0 {
            return Err(CliError::Usage("--samples must be positive".into()));
        }
        if a.samples < 1000 {
            log::warn!(
                "density estimate from only {} samples will be noisy",
                a.samples
            );
        }

        let nets = load_networks(&a.checkpoint)?;
        let value = nets
            .iter()
            .find(|(name, _)| name == "value")
            .map(|(_, net)| net)
            .ok_or_else(|| {
                CliError::Other(format!(
                    "{} holds no 'value' network",
                    a.checkpoint.display()
                ))
            })?;
        if value.in_dim() != problem.dim() {
            return Err(CliError::Usage(format!(
                "checkpoint expects dimension {}, run asked for {}",
                value.in_dim(),
                problem.dim()
            )));
        }

        let mut rng = crate::rng::RngStreams::new(cfg.seed).stream(StreamKind::Density, 0, 0);
        let domain = problem.domain();
        let mut scratch = MlpScratch::default();
        let mut out_buf = [0.0];
        let mut true_vals = Vec::with_capacity(a.samples);
        let mut learned_vals = Vec::with_capacity(a.samples);
        for _ in 0..a.samples {
            let x = domain.sample_interior(problem.dim(), &mut rng);
            let exact = problem.exact_value(&x).ok_or_else(|| {
                CliError::Other("problem has no exact value to compare against".into())
            })?;
            value.eval_into(&x, &mut out_buf, &mut scratch);
            true_vals.push(exact);
            learned_vals.push(out_buf[0]);
        }

        write_density(&out.join("density.csv"), &true_vals, &learned_vals)?;
        m.outputs.push("density.csv");
        Ok(())
    })
}

/// Shared-bin histogram over the combined range, each column normalized to
/// integrate to one.
fn write_density(path: &Path, true_vals: &[f64], learned_vals: &[f64]) -> Result<(), CliError> {
    let all = true_vals.iter().chain(learned_vals);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in all {
        if !v.is_finite() {
            return Err(CliError::Other(
                "non-finite value encountered while binning".into(),
            ));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut span = hi - lo;
    if span <= 0.0 {
        span = 1.0;
        lo -= 0.5;
    }
    let width = span / DENSITY_BINS as f64;

    let bin_of = |v: f64| (((v - lo) / width) as usize).min(DENSITY_BINS - 1);
    let histogram = |vals: &[f64]| {
        let mut counts = vec![0usize; DENSITY_BINS];
        for &v in vals {
            counts[bin_of(v)] += 1;
        }
        counts
    };
    let tc = histogram(true_vals);
    let lc = histogram(learned_vals);

    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "bin_center,true_density,learned_density")?;
    let tn = true_vals.len() as f64 * width;
    let ln = learned_vals.len() as f64 * width;
    for i in 0..DENSITY_BINS {
        let center = lo + (i as f64 + 0.5) * width;
        writeln!(f, "{center},{},{}", tc[i] as f64 / tn, lc[i] as f64 / ln)?;
    }
    f.flush()?;
    Ok(())
}

// --- compare ------------------------------------------------------------

fn cmd_compare(a: &CompareArgs) -> i32 {
    let out = a.common.out_dir.clone();
    run_command(&out, "compare", |m| {
        let base = resolve_config(&a.common)?;
        m.seed = Some(base.seed);
        m.config_echo = base.canonical_string();

        let mut f = BufWriter::new(fs::File::create(out.join("compare.csv"))?);
        let mut last_err = None;
        match a.grid.as_str() {
            "scheme-td" => {
                writeln!(f, "scheme,td,err_v,err_u")?;
                for scheme in [Scheme::Naive, Scheme::Adaptive] {
                    for td in [TdKind::Lstd, TdKind::VrLstd] {
                        let mut cfg = base.clone();
                        cfg.scheme = scheme;
                        cfg.td = td;
                        let (ev, eu) = run_cell(cfg)?;
                        writeln!(f, "{},{},{ev},{eu}", scheme.as_str(), td.as_str())?;
                        f.flush()?;
                        last_err = Some((ev, eu));
                    }
                }
            }
            "horizon" => {
                if a.horizons.is_empty() {
                    return Err(CliError::Usage("--horizons must be nonempty".into()));
                }
                writeln!(f, "T,N,err_v,err_u")?;
                for &t_horizon in &a.horizons {
                    if !(t_horizon > 0.0) {
                        return Err(CliError::Usage(format!(
                            "horizon {t_horizon} is not positive"
                        )));
                    }
                    let mut cfg = base.clone();
                    cfg.t_horizon = t_horizon;
                    let n = cfg.n_intervals;
                    let (ev, eu) = run_cell(cfg)?;
                    writeln!(f, "{t_horizon},{n},{ev},{eu}")?;
                    f.flush()?;
                    last_err = Some((ev, eu));
                }
            }
            other => return Err(CliError::Usage(format!("unknown grid '{other}'"))),
        }
        if let Some((ev, eu)) = last_err {
            m.err_v = Some(ev);
            m.err_u = Some(eu);
        }
        m.outputs.push("compare.csv");
        Ok(())
    })
}

/// Trains one grid cell to completion and returns its final errors.
fn run_cell(cfg: TrainConfig) -> Result<(f64, f64), CliError> {
    log::info!(
        "compare cell: scheme={} td={} T={} N={}",
        cfg.scheme.as_str(),
        cfg.td.as_str(),
        cfg.t_horizon,
        cfg.n_intervals
    );
    let total = cfg.total_iters();
    let mut trainer = Trainer::new(cfg)?;
    trainer.run(total, None)?;
    trainer
        .validate_now()
        .ok_or_else(|| CliError::Other("problem has no exact solution to compare against".into()))
}
