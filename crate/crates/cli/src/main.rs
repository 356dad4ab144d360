//! `codeval`: simulate, fit, report, oracle, experiment, linearize, replay.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::manifest::Manifest;

/// Exit statuses.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "codeval",
    about = "Bayesian validation of linear computer codes by mixture estimation",
    disable_version_flag = true
)]
pub struct Cli {
    /// Worker threads for replicate- and evaluation-level parallelism.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,

    /// Flat `key = value` file of long option names; flags given on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print name and version as JSON and exit.
    #[arg(long)]
    pub version: bool,

    #[command(subcommand)]
    pub command: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Draw a synthetic dataset from the pure or the discrepancy model.
    Simulate(SimulateArgs),
    /// Run the sampler and write draws plus a validation report.
    Fit(FitArgs),
    /// Build a validation report from saved draws.
    Report(ReportArgs),
    /// Exact marginal likelihood and posterior mean of α by enumeration.
    Oracle(OracleArgs),
    /// Run a replicated simulation study.
    Experiment(ExperimentArgs),
    /// Affine surrogate of a black-box code around its least-squares fit.
    Linearize(LinearizeArgs),
    /// Re-run a command from its manifest and compare every output.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    M0,
    M1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Auto,
    Dense,
    Markov,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = "codeval-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generating component.
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Number of observations on the grid i/n.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// True coefficients of the polynomial code, lowest degree first.
    #[arg(long, default_value = "4,1,2", value_delimiter = ',')]
    pub theta: Vec<f64>,
    /// True noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// True noise-to-discrepancy variance ratio (m1 only).
    #[arg(long, default_value_t = 0.1)]
    pub k: f64,
    /// True correlation length (m1 only).
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV with header x1,...,xd,y.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Map each input column affinely onto [0, 1] before fitting.
    #[arg(long)]
    pub rescale: bool,
    /// Degree of a single-input polynomial code (1, x, ..., x^d).
    #[arg(long, conflicts_with_all = ["degrees", "design"])]
    pub degree: Option<usize>,
    /// Per-input polynomial degrees for multi-input data, e.g. 2,1.
    #[arg(long, value_delimiter = ',', conflicts_with = "design")]
    pub degrees: Option<Vec<usize>>,
    /// Tabulated design CSV with header g1,...,gp, one row per observation.
    #[arg(long, value_name = "FILE")]
    pub design: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Beta(a0, a0) prior on the weight of the pure code.
    #[arg(long, default_value_t = 0.5)]
    pub a0: f64,
    /// Beta shapes on the variance ratio k.
    #[arg(long, default_value = "1,1", value_delimiter = ',', num_args = 2)]
    pub k_prior: Vec<f64>,
    /// Beta shapes on the correlation length.
    #[arg(long, default_value = "1,1", value_delimiter = ',', num_args = 2)]
    pub gamma_prior: Vec<f64>,
    /// Constant prior mean of the discrepancy.
    #[arg(long, default_value_t = 0.0)]
    pub mu_delta: f64,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    /// Total iterations including burn-in [default: 10000, 100000 for oracle --crosscheck].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep every thin-th post-burn-in state.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub thin: u64,
    /// Target acceptance rate of the adaptive random walks.
    #[arg(long, default_value_t = 0.44)]
    pub target_accept: f64,
    /// Iterations between scale updates during burn-in.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub adapt_window: u64,
    /// Linear-algebra route for discrepancy updates.
    #[arg(long, value_enum, default_value_t = BackendArg::Auto)]
    pub backend: BackendArg,
    /// Start from a prior draw instead of the least-squares fit.
    #[arg(long)]
    pub random_init: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Draws CSV written by `fit`.
    #[arg(long, value_name = "FILE")]
    pub draws: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub priors: PriorArgs,
    /// Gauss–Legendre nodes per axis for the (k, γ) integral.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub resolution: u64,
    /// Also run the sampler and fail when its posterior mean of α is more
    /// than the tolerance away from the exact value.
    #[arg(long)]
    pub crosscheck: bool,
    #[arg(long, default_value_t = 0.03)]
    pub tolerance: f64,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Named study: fig1, fig2, fig2-informative, fig3 or fig4.
    #[arg(long, required_unless_present = "scenario")]
    pub name: Option<String>,
    /// Scenario file of `key = value` lines (`base = fig2` picks the defaults).
    #[arg(long, value_name = "FILE", conflicts_with = "name")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Record wall-clock seconds per replicate; otherwise the column is 0 so
    /// reruns are byte-identical.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    /// Program speaking the line protocol: parameter vectors in on standard
    /// input, output vectors out on standard output, one per line.
    #[arg(long, value_name = "PROGRAM", required_unless_present = "table", conflicts_with = "table")]
    pub blackbox: Option<PathBuf>,
    /// Extra argument passed to the black-box program (repeatable).
    #[arg(long = "blackbox-arg", value_name = "ARG", allow_hyphen_values = true)]
    pub blackbox_args: Vec<String>,
    /// Design table CSV k1..kq,y1..yn on a full grid, interpolated multilinearly.
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Parameter box CSV: header, then one lower,upper row per parameter.
    /// Defaults to the table range when a table is given.
    #[arg(long = "box", value_name = "FILE", required_unless_present = "table")]
    pub bounds: Option<PathBuf>,
    /// Observations CSV x1,...,xd,y at the operating points.
    #[arg(long, value_name = "FILE")]
    pub observations: PathBuf,
    /// Zero-based parameters to keep free; the rest stay at the reference point.
    #[arg(long, value_delimiter = ',')]
    pub fit: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: u64,
    #[arg(long, default_value_t = 20_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_evals: u64,
    /// Finite-difference step as a fraction of each box width.
    #[arg(long, default_value_t = 1e-4)]
    pub rel_step: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// manifest.json of an earlier run.
    #[arg(value_name = "MANIFEST")]
    pub manifest: PathBuf,
    /// Where to write the rerun outputs [default: replay/ next to the manifest].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_NUMERICAL, message: msg.into() }
    }
}

impl From<codeval::Error> for Failure {
    fn from(e: codeval::Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

const GLOBAL_VALUE_FLAGS: [&str; 2] = ["--jobs", "--config"];

/// Splits `argv` (without the program name) into the subcommand name and
/// the arguments that follow it, dropping global flags.
fn subcommand_args(argv: &[String]) -> Option<(String, Vec<String>)> {
    let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
    let mut i = 0;
    while i < argv.len() {
        let a = &argv[i];
        if GLOBAL_VALUE_FLAGS.contains(&a.as_str()) {
            i += 2;
            continue;
        }
        if names.contains(a) {
            let rest = strip_globals(&argv[i + 1..]);
            return Some((a.clone(), rest));
        }
        i += 1;
    }
    None
}

fn strip_globals(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if GLOBAL_VALUE_FLAGS.contains(&a.as_str()) {
            i += 2;
            continue;
        }
        if GLOBAL_VALUE_FLAGS.iter().any(|f| a.starts_with(&format!("{f}="))) {
            i += 1;
            continue;
        }
        out.push(a.clone());
        i += 1;
    }
    out
}

fn config_path(argv: &[String]) -> Option<String> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    })
}

/// Appends `--key value` for every config entry not already given on the
/// command line.
fn merge_config(argv: &mut Vec<String>) -> Result<(), Failure> {
    let Some(path) = config_path(argv) else {
        return Ok(());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::usage(format!("cannot read config {path}: {e}")))?;
    let pairs = codeval::harness::parse_key_values(&text).map_err(|e| Failure::usage(format!("config {path}: {e}")))?;
    let sub = subcommand_args(argv).map(|(name, _)| name);
    let cmd = Cli::command();
    let sub_cmd = sub.as_deref().and_then(|s| cmd.find_subcommand(s));
    for (key, value) in pairs {
        let flag = key.replace('_', "-");
        let long = format!("--{flag}");
        if argv.iter().any(|a| *a == long || a.starts_with(&format!("{long}="))) {
            continue;
        }
        let arg = sub_cmd
            .and_then(|c| c.get_arguments().find(|a| a.get_long() == Some(flag.as_str())))
            .or_else(|| cmd.get_arguments().find(|a| a.get_long() == Some(flag.as_str()) && flag != "version"));
        let Some(arg) = arg else {
            return Err(Failure::usage(format!("config {path}: unknown option '{key}'")));
        };
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => argv.push(long),
                "false" | "0" | "no" => {}
                other => return Err(Failure::usage(format!("config {path}: '{key}' expects true or false, got '{other}'"))),
            }
        } else {
            argv.push(long);
            argv.push(value);
        }
    }
    Ok(())
}

fn version_json() -> String {
    serde_json::json!({ "name": "codeval", "version": env!("CARGO_PKG_VERSION") }).to_string()
}

/// Parses and runs one invocation. `argv` excludes the program name.
pub fn run(mut argv: Vec<String>) -> Result<(), Failure> {
    merge_config(&mut argv)?;
    let cli = match Cli::try_parse_from(std::iter::once("codeval".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Failure::usage(e.render().to_string()));
        }
    };
    if cli.version {
        println!("{}", version_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::usage(Cli::command().render_help().to_string()));
    };
    let (name, resolved) = subcommand_args(&argv).expect("a parsed subcommand is present in argv");
    let jobs = cli.jobs as usize;
    match command {
        Cmd::Replay(a) => replay(&a),
        other => {
            let record = commands::Invocation { name, args: strip_out(&resolved), jobs };
            commands::dispatch(other, &record)
        }
    }
}

/// Drops `--out DIR` so the manifest does not pin the output location.
fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--out" {
            i += 2;
            continue;
        }
        if !args[i].starts_with("--out=") {
            out.push(args[i].clone());
        }
        i += 1;
    }
    out
}

fn replay(a: &ReplayArgs) -> Result<(), Failure> {
    let m = Manifest::read(&a.manifest).map_err(Failure::usage)?;
    let here = std::env::current_dir()?;
    let out = match &a.out {
        Some(p) => here.join(p),
        None => here.join(a.manifest.parent().unwrap_or(std::path::Path::new("."))).join("replay"),
    };
    for input in &m.inputs {
        let path = m.cwd.join(&input.path);
        let digest = manifest::digest_file(&path).map_err(|e| Failure::data(format!("input {}: {e}", path.display())))?;
        if digest != input.sha256 {
            return Err(Failure::data(format!("input {} changed since the recorded run", path.display())));
        }
    }
    let mut argv = vec!["--jobs".to_string(), m.jobs.to_string(), m.command.clone()];
    argv.extend(m.args.iter().cloned());
    argv.push("--out".into());
    argv.push(out.display().to_string());
    std::env::set_current_dir(&m.cwd).map_err(|e| Failure::data(format!("cannot enter {}: {e}", m.cwd.display())))?;
    let result = run(argv);
    std::env::set_current_dir(&here)?;
    result?;
    let mut mismatched = Vec::new();
    let mut checked = 0;
    for o in &m.outputs {
        if m.nondeterministic.contains(&o.path) {
            continue;
        }
        checked += 1;
        match manifest::digest_file(&out.join(&o.path)) {
            Ok(d) if d == o.sha256 => {}
            _ => mismatched.push(o.path.clone()),
        }
    }
    if mismatched.is_empty() {
        println!("replay: {checked} output files identical ({})", out.display());
        Ok(())
    } else {
        Err(Failure::numerical(format!("replay: outputs differ: {}", mismatched.join(", "))))
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args_os().skip(1).map(|a: OsString| a.to_string_lossy().into_owned()).collect();
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message.trim_end());
            ExitCode::from(f.code)
        }
    }
}
