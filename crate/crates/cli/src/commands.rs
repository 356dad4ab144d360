use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use codeval::harness::{run_scenario, scenario_defaults, Scenario};
use codeval::linearize::{linearize, to_linear_code, BlackBox, CommandBlackBox, OlsOptions, ParamBox, TableBlackBox};
use codeval::model::{read_raw_csv, simulate_m0, simulate_m1, unit_grid, UnitScaler};
use codeval::oracle::oracle_report;
use codeval::report::ValidationReport;
use codeval::sampler::{run_chain, McmcConfig, PosteriorDraws};
use codeval::{BackendKind, Dataset, LinearCode, PriorConfig};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::manifest::{config_hash, digest_file, FileDigest, Manifest};
use crate::{
    BackendArg, Cmd, DataArgs, ExperimentArgs, Failure, FitArgs, LinearizeArgs, McmcArgs, ModelKind, OracleArgs,
    PriorArgs, ReportArgs, SimulateArgs,
};

/// What the manifest needs to know about the invocation.
pub struct Invocation {
    pub name: String,
    pub args: Vec<String>,
    pub jobs: usize,
}

/// Files and seeds a command touched, for its manifest.
#[derive(Default)]
struct Record {
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
    nondeterministic: Vec<String>,
}

pub fn dispatch(cmd: Cmd, inv: &Invocation) -> Result<(), Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inv.jobs)
        .build()
        .map_err(|e| Failure::numerical(format!("cannot start worker pool: {e}")))?;
    let (out, record) = pool.install(|| match cmd {
        Cmd::Simulate(a) => simulate(&a),
        Cmd::Fit(a) => fit(&a),
        Cmd::Report(a) => report(&a),
        Cmd::Oracle(a) => oracle(&a),
        Cmd::Experiment(a) => experiment(&a, inv.jobs),
        Cmd::Linearize(a) => linearize_cmd(&a),
        Cmd::Replay(_) => unreachable!("replay is handled before dispatch"),
    })?;
    write_manifest(&out, inv, record)
}

fn write_manifest(out: &Path, inv: &Invocation, rec: Record) -> Result<(), Failure> {
    let cwd = std::env::current_dir()?;
    let mut inputs = Vec::new();
    for p in rec.inputs {
        let sha256 = digest_file(&p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
        inputs.push(FileDigest { path: p.display().to_string(), sha256 });
    }
    let mut outputs = Vec::new();
    for name in rec.outputs {
        let sha256 = digest_file(&out.join(&name))?;
        outputs.push(FileDigest { path: name, sha256 });
    }
    let manifest = Manifest {
        tool: "codeval".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: inv.name.clone(),
        args: inv.args.clone(),
        jobs: inv.jobs,
        cwd,
        config_hash: config_hash(&inv.name, &inv.args),
        seeds: rec.seeds,
        inputs,
        outputs,
        nondeterministic: rec.nondeterministic,
    };
    manifest.write(out)?;
    Ok(())
}

fn out_dir(p: &Path) -> Result<PathBuf, Failure> {
    fs::create_dir_all(p).map_err(|e| Failure::data(format!("cannot create {}: {e}", p.display())))?;
    Ok(p.to_path_buf())
}

fn create(dir: &Path, name: &str, rec: &mut Record) -> Result<BufWriter<File>, Failure> {
    rec.outputs.push(name.to_string());
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, rec: &mut Record) -> Result<(), Failure> {
    rec.outputs.push(name.to_string());
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn open(path: &Path, rec: &mut Record) -> Result<File, Failure> {
    rec.inputs.push(path.to_path_buf());
    File::open(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn priors(a: &PriorArgs) -> Result<PriorConfig, Failure> {
    let p = PriorConfig {
        a0: a.a0,
        k_prior: (a.k_prior[0], a.k_prior[1]),
        gamma_prior: (a.gamma_prior[0], a.gamma_prior[1]),
        mu_delta: a.mu_delta,
    };
    p.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(p)
}

fn mcmc(a: &McmcArgs, default_iters: u64) -> Result<McmcConfig, Failure> {
    let cfg = McmcConfig {
        iters: a.iters.unwrap_or(default_iters) as usize,
        burn_in: a.burn_in as usize,
        seed: a.seed,
        thin: a.thin as usize,
        target_accept: a.target_accept,
        adapt_window: a.adapt_window as usize,
        backend: match a.backend {
            BackendArg::Auto => BackendKind::Auto,
            BackendArg::Dense => BackendKind::Dense,
            BackendArg::Markov => BackendKind::Markov,
        },
        random_init: a.random_init,
        ..Default::default()
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

/// Dataset, code and the input scaling that was applied, if any.
fn load(a: &DataArgs, rec: &mut Record) -> Result<(Dataset, LinearCode, Option<UnitScaler>), Failure> {
    let (raw_x, y) = read_raw_csv(open(&a.data, rec)?)?;
    let (x, scaler) = if a.rescale {
        let s = UnitScaler::fit(&raw_x)?;
        (s.transform(&raw_x), Some(s))
    } else {
        (raw_x, None)
    };
    let data = Dataset::new(x, y)?;
    let code = match (&a.degree, &a.degrees, &a.design) {
        (Some(d), _, _) => LinearCode::polynomial(*d),
        (_, Some(ds), _) => LinearCode::polynomial_multi(ds.clone()),
        (_, _, Some(path)) => LinearCode::read_design_csv(open(path, rec)?)?,
        _ => return Err(Failure::usage("choose a code basis with --degree, --degrees or --design")),
    };
    Ok((data, code, scaler))
}

#[derive(Serialize)]
struct Truth {
    model: &'static str,
    n: usize,
    seed: u64,
    theta: Vec<f64>,
    lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<Vec<f64>>,
}

fn simulate(a: &SimulateArgs) -> Result<(PathBuf, Record), Failure> {
    if a.theta.is_empty() {
        return Err(Failure::usage("--theta needs at least one coefficient"));
    }
    let mut rec = Record::default();
    let n = a.n as usize;
    let x = unit_grid(n);
    let code = LinearCode::polynomial(a.theta.len() - 1);
    let (y, truth) = match a.model {
        ModelKind::M0 => {
            let y = simulate_m0(&code, &a.theta, a.lambda, &x, a.seed)?;
            let t = Truth { model: "m0", n, seed: a.seed, theta: a.theta.clone(), lambda: a.lambda, k: None, gamma: None, delta: None };
            (y, t)
        }
        ModelKind::M1 => {
            let (y, delta) = simulate_m1(&code, &a.theta, a.lambda, a.k, a.gamma, &x, a.seed)?;
            let t = Truth {
                model: "m1",
                n,
                seed: a.seed,
                theta: a.theta.clone(),
                lambda: a.lambda,
                k: Some(a.k),
                gamma: Some(a.gamma),
                delta: Some(delta),
            };
            (y, t)
        }
    };
    let data = Dataset::new(x, DVector::from_vec(y))?;
    let dir = out_dir(&a.out.out)?;
    data.write_csv(create(&dir, "data.csv", &mut rec)?)?;
    write_json(&dir, "truth.json", &truth, &mut rec)?;
    rec.seeds.insert("simulate".into(), a.seed);
    println!("simulated {n} observations from {} into {}", truth.model, dir.display());
    Ok((dir, rec))
}

fn write_report(dir: &Path, report: &ValidationReport, rec: &mut Record) -> Result<(), Failure> {
    rec.outputs.push("report.json".into());
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    report.write_csv(create(dir, "report.csv", rec)?)?;
    Ok(())
}

fn print_summary(draws: &PosteriorDraws, report: &ValidationReport) {
    let a = &report.alpha_summary;
    println!("alpha   mean {:.4}  95% [{:.4}, {:.4}]", a.mean, a.q025, a.q975);
    for s in report.summaries.iter().filter(|s| !s.name.starts_with("delta_") && s.name != "alpha") {
        println!("{:<7} mean {:.4}  sd {:.4}", s.name, s.mean, s.sd);
    }
    println!("accept  k {:.3}  gamma {:.3}", draws.accept_k, draws.accept_gamma);
}

fn fit(a: &FitArgs) -> Result<(PathBuf, Record), Failure> {
    let mut rec = Record::default();
    let (data, code, scaler) = load(&a.data, &mut rec)?;
    let priors = priors(&a.priors)?;
    let cfg = mcmc(&a.mcmc, 10_000)?;
    let draws = run_chain(&data, &code, priors, &cfg)?;
    let report = ValidationReport::build(&draws, &data, &code)?;
    let dir = out_dir(&a.out.out)?;
    draws.write_csv(create(&dir, "draws.csv", &mut rec)?)?;
    write_report(&dir, &report, &mut rec)?;
    if let Some(s) = scaler {
        write_json(&dir, "scaler.json", &s, &mut rec)?;
    }
    rec.seeds.insert("mcmc".into(), cfg.seed);
    print_summary(&draws, &report);
    Ok((dir, rec))
}

fn report(a: &ReportArgs) -> Result<(PathBuf, Record), Failure> {
    let mut rec = Record::default();
    let draws = PosteriorDraws::read_csv(open(&a.draws, &mut rec)?)?;
    let (data, code, _) = load(&a.data, &mut rec)?;
    let report = ValidationReport::build(&draws, &data, &code)?;
    let dir = out_dir(&a.out.out)?;
    write_report(&dir, &report, &mut rec)?;
    print_summary(&draws, &report);
    Ok((dir, rec))
}

fn oracle(a: &OracleArgs) -> Result<(PathBuf, Record), Failure> {
    let mut rec = Record::default();
    let (data, code, _) = load(&a.data, &mut rec)?;
    let priors = priors(&a.priors)?;
    let mut result = oracle_report(&data, &code, &priors, a.resolution as usize)?;
    println!("log marginal {:.6}  E[alpha|y] {:.6}", result.log_marginal, result.alpha_mean);
    if a.crosscheck {
        let cfg = mcmc(&a.mcmc, 100_000)?;
        let draws = run_chain(&data, &code, priors, &cfg)?;
        let est = draws.mean(|s| s.alpha);
        result.alpha_mean_mcmc = Some(est);
        result.crosscheck_gap = Some((est - result.alpha_mean).abs());
        rec.seeds.insert("mcmc".into(), cfg.seed);
        println!("sampler E[alpha|y] {est:.6}  gap {:.6}", (est - result.alpha_mean).abs());
    }
    let dir = out_dir(&a.out.out)?;
    write_json(&dir, "oracle.json", &result, &mut rec)?;
    // a failed cross-check still leaves oracle.json behind, without a manifest
    if let Some(gap) = result.crosscheck_gap {
        if gap > a.tolerance {
            return Err(Failure::numerical(format!(
                "sampler and exact posterior means of alpha differ by {gap:.4} > {}",
                a.tolerance
            )));
        }
    }
    Ok((dir, rec))
}

fn experiment(a: &ExperimentArgs, jobs: usize) -> Result<(PathBuf, Record), Failure> {
    let mut rec = Record::default();
    let mut s: Scenario = match (&a.name, &a.scenario) {
        (Some(name), _) => scenario_defaults(name).map_err(|e| Failure::usage(e.to_string()))?,
        (None, Some(path)) => {
            rec.inputs.push(path.clone());
            let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            Scenario::from_key_values(&text).map_err(|e| Failure::usage(e.to_string()))?
        }
        (None, None) => return Err(Failure::usage("give --name or --scenario")),
    };
    if let Some(r) = a.replicates {
        s.replicates = r as usize;
    }
    if let Some(i) = a.iters {
        s.mcmc.iters = i as usize;
    }
    if let Some(b) = a.burn_in {
        s.mcmc.burn_in = b as usize;
    }
    s.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let mut table = run_scenario(&s, jobs)?;
    if !a.timing {
        table.rows.iter_mut().for_each(|r| r.seconds = 0.0);
    }
    let dir = out_dir(&a.out.out)?;
    table.write_replicates_csv(create(&dir, "replicates.csv", &mut rec)?)?;
    table.write_aggregate_csv(create(&dir, "aggregate.csv", &mut rec)?)?;
    write_json(&dir, "failures.json", &table.failures, &mut rec)?;
    write_json(&dir, "scenario.json", &s, &mut rec)?;
    if a.timing {
        rec.nondeterministic.push("replicates.csv".into());
    }
    rec.seeds.insert("scenario_hash".into(), s.hash());
    println!(
        "{}: {} replicates over {} cells, {} failed",
        s.name,
        table.rows.len() + table.failures.len(),
        table.cells().len(),
        table.failures.len()
    );
    for (n, g) in table.cells() {
        let med = table.cell_median(n, g, |r| r.alpha_mean);
        match g {
            Some(g) => println!("  n={n:<4} gamma*={g:<5} median alpha {med:.3}"),
            None => println!("  n={n:<4} median alpha {med:.3}"),
        }
    }
    Ok((dir, rec))
}

#[derive(Serialize)]
struct SurrogateFile<'a> {
    surrogate: &'a codeval::linearize::LinearSurrogate,
    ols: &'a codeval::linearize::OlsResult,
    fit_indices: &'a [usize],
}

fn linearize_cmd(a: &LinearizeArgs) -> Result<(PathBuf, Record), Failure> {
    let mut rec = Record::default();
    let (obs_x, obs_y) = read_raw_csv(open(&a.observations, &mut rec)?)?;
    let obs: Vec<f64> = obs_y.iter().copied().collect();
    let table = match &a.table {
        Some(p) => Some(TableBlackBox::read_csv(open(p, &mut rec)?)?),
        None => None,
    };
    let bx = match (&a.bounds, &table) {
        (Some(p), _) => ParamBox::read_csv(open(p, &mut rec)?)?,
        (None, Some(t)) => t.bounds(),
        (None, None) => return Err(Failure::usage("--box is required with --blackbox")),
    };
    let command = a.blackbox.as_ref().map(|p| {
        if p.is_file() {
            rec.inputs.push(p.clone());
        }
        CommandBlackBox::new(p.clone(), a.blackbox_args.clone(), bx.dim())
    });
    let bb: &dyn BlackBox = match (&command, &table) {
        (Some(c), _) => c,
        (None, Some(t)) => t,
        (None, None) => return Err(Failure::usage("give --blackbox or --table")),
    };
    if bb.dim() != bx.dim() {
        return Err(Failure::data(format!("black box has {} parameters, box has {}", bb.dim(), bx.dim())));
    }
    if !(a.rel_step > 0.0 && a.rel_step < 0.5) {
        return Err(Failure::usage(format!("--rel-step must lie in (0, 0.5), got {}", a.rel_step)));
    }
    let opts = OlsOptions { restarts: a.restarts as usize, max_evals: a.max_evals as usize, ..Default::default() };
    let steps: Vec<f64> = bx.lo.iter().zip(&bx.hi).map(|(l, h)| a.rel_step * (h - l)).collect();
    let (sur, ols) = linearize(bb, &bx, &obs, &opts, Some(&steps))?;
    let fit_indices: Vec<usize> = a.fit.clone().unwrap_or_else(|| (0..bx.dim()).collect());
    let (code, response) = to_linear_code(&sur, &fit_indices, &obs)?;
    let inside = obs_x.iter().all(|v| (0.0..=1.0).contains(v));
    let x: DMatrix<f64> = if inside { obs_x.clone() } else { UnitScaler::fit(&obs_x)?.transform(&obs_x) };
    let data = Dataset::new(x, DVector::from_vec(response))?;
    let dir = out_dir(&a.out.out)?;
    write_json(&dir, "surrogate.json", &SurrogateFile { surrogate: &sur, ols: &ols, fit_indices: &fit_indices }, &mut rec)?;
    data.write_csv(create(&dir, "linear_data.csv", &mut rec)?)?;
    code.write_design_csv(create(&dir, "design.csv", &mut rec)?)?;
    println!(
        "reference point {:?}  objective {:.6e}  {} evaluations{}",
        sur.k_hat,
        ols.objective,
        ols.evaluations,
        if ols.budget_exhausted { " (budget exhausted)" } else { "" }
    );
    Ok((dir, rec))
}
