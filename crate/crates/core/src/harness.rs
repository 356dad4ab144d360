//! Replicated simulation studies on the quadratic test code: data
//! generation over a grid of sample sizes and correlation lengths, one chain
//! per replicate, and per-replicate plus aggregate tables.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::BackendKind;
use crate::model::{simulate_m0, simulate_m1, unit_grid, Dataset, LinearCode, PriorConfig};
use crate::sampler::{run_chain, McmcConfig, PosteriorDraws};
use crate::stats::{quantile_sorted, median};

/// Named per-replicate column summarised in the aggregate table.
type Column = Box<dyn Fn(&ReplicateRow) -> f64>;

/// Minimum share of replicates that must succeed.
pub const MIN_SUCCESS_RATE: f64 = 0.9;

/// Which component generates the synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    M0,
    M1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub generator: Generator,
    /// Sample sizes; inputs are the grid `i/n`.
    pub sizes: Vec<usize>,
    /// True correlation lengths, crossed with `sizes`. Unused for M0 data.
    pub gamma_stars: Vec<f64>,
    /// Coefficients of the polynomial code, lowest degree first.
    pub theta_star: Vec<f64>,
    pub lambda_star: f64,
    pub k_star: f64,
    pub replicates: usize,
    pub priors: PriorConfig,
    /// When set, the γ prior is replaced per grid point by a Beta centered
    /// on the true value with this effective sample size.
    pub gamma_prior_ess: Option<f64>,
    pub mcmc: McmcConfig,
}

/// One cell of the scenario grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub gamma_star: Option<f64>,
}

/// Named configurations of the quadratic-code study.
pub fn scenario_defaults(name: &str) -> Result<Scenario> {
    let base = Scenario {
        name: name.to_string(),
        generator: Generator::M1,
        sizes: vec![50],
        gamma_stars: vec![0.3],
        theta_star: vec![4.0, 1.0, 2.0],
        lambda_star: 0.1,
        k_star: 0.1,
        replicates: 50,
        priors: PriorConfig { a0: 0.5, k_prior: (2.0, 18.0), gamma_prior: (1.0, 1.0), mu_delta: 0.0 },
        gamma_prior_ess: None,
        mcmc: McmcConfig { iters: 10_000, burn_in: 1_000, ..Default::default() },
    };
    let fig2_grid: Vec<f64> = [0.01, 0.05].into_iter().chain((1..=9).map(|i| i as f64 / 10.0)).collect();
    Ok(match name {
        "fig1" => Scenario {
            generator: Generator::M0,
            sizes: vec![30],
            gamma_stars: vec![],
            priors: PriorConfig { k_prior: (1.0, 1.0), ..base.priors },
            mcmc: McmcConfig { iters: 20_000, ..base.mcmc.clone() },
            ..base
        },
        "fig2" => Scenario { gamma_stars: fig2_grid, ..base },
        "fig2-informative" => Scenario { gamma_stars: fig2_grid, gamma_prior_ess: Some(10.0), ..base },
        "fig3" => Scenario { sizes: (6..=98).step_by(4).chain([100]).collect(), ..base },
        "fig4" => Scenario {
            sizes: vec![100],
            replicates: 1,
            mcmc: McmcConfig { iters: 20_000, ..base.mcmc.clone() },
            ..base
        },
        other => {
            return Err(Error::invalid(format!(
                "unknown scenario '{other}' (expected fig1, fig2, fig2-informative, fig3 or fig4)"
            )))
        }
    })
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.sizes.is_empty() || self.theta_star.is_empty() {
            return Err(Error::invalid("scenario needs sample sizes and true coefficients"));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n <= self.theta_star.len()) {
            return Err(Error::invalid(format!("sample size {n} must exceed {} coefficients", self.theta_star.len())));
        }
        if !(self.lambda_star >= 0.0) || !self.lambda_star.is_finite() {
            return Err(Error::invalid("lambda* must be finite and >= 0"));
        }
        if self.generator == Generator::M1 {
            if self.gamma_stars.is_empty() {
                return Err(Error::invalid("M1 scenarios need at least one gamma*"));
            }
            if !(self.k_star > 0.0 && self.k_star < 1.0) {
                return Err(Error::invalid("k* must lie in (0,1)"));
            }
            if self.gamma_stars.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
                return Err(Error::invalid("every gamma* must lie in (0,1)"));
            }
        }
        if let Some(e) = self.gamma_prior_ess {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::invalid("gamma prior effective sample size must be positive"));
            }
        }
        self.priors.validate()?;
        self.mcmc.validate()
    }

    /// Grid cells in a fixed order: sizes outer, correlation lengths inner.
    pub fn grid(&self) -> Vec<GridPoint> {
        let gammas: Vec<Option<f64>> = match self.generator {
            Generator::M0 => vec![None],
            Generator::M1 => self.gamma_stars.iter().map(|&g| Some(g)).collect(),
        };
        self.sizes
            .iter()
            .flat_map(|&n| gammas.iter().map(move |&gamma_star| GridPoint { n, gamma_star }))
            .collect()
    }

    /// 64-bit digest of the full configuration.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Seed for grid cell `cell`, replicate `rep`, purpose `0` (data) or `1`
    /// (chain). Injective in `(cell, rep, purpose)` for `rep < 2^24`.
    pub fn seed(&self, cell: usize, rep: usize, purpose: u64) -> u64 {
        debug_assert!(rep < 1 << 24 && purpose < 2);
        let key = (((cell as u64) << 24) | rep as u64) << 1 | purpose;
        self.hash().wrapping_add(key)
    }

    /// Priors used at one grid point.
    pub fn priors_at(&self, point: GridPoint) -> PriorConfig {
        match (self.gamma_prior_ess, point.gamma_star) {
            (Some(ess), Some(g)) => PriorConfig { gamma_prior: (ess * g, ess * (1.0 - g)), ..self.priors },
            _ => self.priors,
        }
    }

    /// Synthetic dataset for one replicate.
    pub fn dataset(&self, cell: usize, rep: usize) -> Result<Dataset> {
        let point = self.grid()[cell];
        let code = self.code();
        let x = unit_grid(point.n);
        let seed = self.seed(cell, rep, 0);
        let y = match point.gamma_star {
            None => simulate_m0(&code, &self.theta_star, self.lambda_star, &x, seed)?,
            Some(g) => simulate_m1(&code, &self.theta_star, self.lambda_star, self.k_star, g, &x, seed)?.0,
        };
        Dataset::new(x, nalgebra::DVector::from_vec(y))
    }

    /// Dataset and posterior draws of one replicate, exactly as a scenario
    /// run produces them.
    pub fn draws(&self, cell: usize, rep: usize) -> Result<(Dataset, PosteriorDraws)> {
        let point = *self.grid().get(cell).ok_or_else(|| Error::invalid(format!("no grid cell {cell}")))?;
        let data = self.dataset(cell, rep)?;
        let cfg = McmcConfig { seed: self.seed(cell, rep, 1), ..self.mcmc.clone() };
        let draws = run_chain(&data, &self.code(), self.priors_at(point), &cfg)?;
        Ok((data, draws))
    }

    pub fn code(&self) -> LinearCode {
        LinearCode::polynomial(self.theta_star.len() - 1)
    }

    /// Reads a scenario from `key = value` lines. A `base` key starts from a
    /// named default; every other key overrides one field.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        let base = pairs.iter().find(|(k, _)| k == "base").map(|(_, v)| v.as_str()).unwrap_or("fig1");
        let mut s = scenario_defaults(base)?;
        for (key, value) in &pairs {
            s.set(key, value)?;
        }
        s.validate()?;
        Ok(s)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "base" => {}
            "name" => self.name = v.to_string(),
            "generator" => {
                self.generator = match v {
                    "m0" | "M0" => Generator::M0,
                    "m1" | "M1" => Generator::M1,
                    _ => return Err(Error::Parse(format!("generator must be m0 or m1, got '{v}'"))),
                }
            }
            "n" | "sizes" => self.sizes = parse_list(key, v)?,
            "gamma_star" | "gamma_stars" => self.gamma_stars = parse_list(key, v)?,
            "theta_star" => self.theta_star = parse_list(key, v)?,
            "lambda_star" => self.lambda_star = parse_one(key, v)?,
            "k_star" => self.k_star = parse_one(key, v)?,
            "replicates" => self.replicates = parse_one(key, v)?,
            "a0" => self.priors.a0 = parse_one(key, v)?,
            "k_prior" => self.priors.k_prior = parse_pair(key, v)?,
            "gamma_prior" => self.priors.gamma_prior = parse_pair(key, v)?,
            "mu_delta" => self.priors.mu_delta = parse_one(key, v)?,
            "gamma_prior_ess" => {
                self.gamma_prior_ess = if v == "none" { None } else { Some(parse_one(key, v)?) }
            }
            _ => return apply_mcmc_key(&mut self.mcmc, key, v),
        }
        Ok(())
    }
}

/// Applies one sampler setting from a `key = value` source.
pub fn apply_mcmc_key(cfg: &mut McmcConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "iters" => cfg.iters = parse_one(key, v)?,
        "burn_in" => cfg.burn_in = parse_one(key, v)?,
        "seed" => cfg.seed = parse_one(key, v)?,
        "thin" => cfg.thin = parse_one(key, v)?,
        "target_accept" => cfg.target_accept = parse_one(key, v)?,
        "adapt_window" => cfg.adapt_window = parse_one(key, v)?,
        "initial_scale" => cfg.initial_scale = parse_one(key, v)?,
        "random_init" => cfg.random_init = parse_one(key, v)?,
        "backend" => cfg.backend = v.parse::<BackendKind>()?,
        _ => return Err(Error::Parse(format!("unknown key '{key}'"))),
    }
    Ok(())
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Parse(format!("bad value '{v}' for '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|t| !t.trim().is_empty()).map(|t| parse_one(key, t)).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Parse(format!("'{key}' needs two comma-separated numbers"))),
    }
}

/// Posterior means of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub scenario: String,
    pub gamma_star: Option<f64>,
    pub n: usize,
    pub replicate: usize,
    pub alpha_mean: f64,
    pub lambda_mean: f64,
    pub theta_mean: Vec<f64>,
    /// Posterior standard deviations of θ, used for coverage checks.
    pub theta_sd: Vec<f64>,
    pub k_mean: f64,
    pub gamma_mean: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub gamma_star: Option<f64>,
    pub n: usize,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub scenario: String,
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
}

/// Runs every replicate of every grid cell on `jobs` worker threads
/// (`0` picks the rayon default). Results do not depend on `jobs`.
pub fn run_scenario(s: &Scenario, jobs: usize) -> Result<ScenarioTable> {
    s.validate()?;
    let grid = s.grid();
    let tasks: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|c| (0..s.replicates).map(move |r| (c, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(usize, usize, Result<ReplicateRow>)> = pool.install(|| {
        tasks.par_iter().map(|&(c, r)| (c, r, run_replicate(s, &grid, c, r))).collect()
    });
    collect(&s.name, &grid, results)
}

/// Sorts replicate outcomes deterministically and applies the success rule.
fn collect(
    name: &str,
    grid: &[GridPoint],
    mut results: Vec<(usize, usize, Result<ReplicateRow>)>,
) -> Result<ScenarioTable> {
    results.sort_by_key(|(c, r, _)| (*c, *r));
    let total = results.len();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (c, r, res) in results {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(ReplicateFailure {
                gamma_star: grid[c].gamma_star,
                n: grid[c].n,
                replicate: r,
                error: e.to_string(),
            }),
        }
    }
    if (rows.len() as f64) < MIN_SUCCESS_RATE * total as f64 {
        return Err(Error::ScenarioFailed {
            succeeded: rows.len(),
            total,
            first: failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }
    Ok(ScenarioTable { scenario: name.to_string(), rows, failures })
}

fn run_replicate(s: &Scenario, grid: &[GridPoint], cell: usize, rep: usize) -> Result<ReplicateRow> {
    let start = Instant::now();
    let point = grid[cell];
    let (_, draws) = s.draws(cell, rep)?;
    let p = s.theta_star.len();
    Ok(ReplicateRow {
        scenario: s.name.clone(),
        gamma_star: point.gamma_star,
        n: point.n,
        replicate: rep,
        alpha_mean: draws.mean(|st| st.alpha),
        lambda_mean: draws.mean(|st| st.lambda),
        theta_mean: (0..p).map(|j| draws.mean(|st| st.theta[j])).collect(),
        theta_sd: (0..p).map(|j| draws.sd(|st| st.theta[j])).collect(),
        k_mean: draws.mean(|st| st.k),
        gamma_mean: draws.mean(|st| st.gamma),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn fmt_gamma(g: Option<f64>) -> String {
    g.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

const AGGREGATE_QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

impl ScenarioTable {
    /// Rows of one grid cell, in replicate order.
    pub fn cell(&self, n: usize, gamma_star: Option<f64>) -> Vec<&ReplicateRow> {
        self.rows.iter().filter(|r| r.n == n && r.gamma_star == gamma_star).collect()
    }

    /// Distinct grid cells present in the table, in table order.
    pub fn cells(&self) -> Vec<(usize, Option<f64>)> {
        let mut out: Vec<(usize, Option<f64>)> = Vec::new();
        for r in &self.rows {
            if !out.contains(&(r.n, r.gamma_star)) {
                out.push((r.n, r.gamma_star));
            }
        }
        out
    }

    /// Median over the replicates of one cell.
    pub fn cell_median<F: Fn(&ReplicateRow) -> f64>(&self, n: usize, gamma_star: Option<f64>, f: F) -> f64 {
        median(&self.cell(n, gamma_star).into_iter().map(f).collect::<Vec<_>>())
    }

    /// `scenario,gamma_star,n,replicate,alpha_mean,lambda_mean,theta1..,k_mean,gamma_mean,seconds`.
    pub fn write_replicates_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let p = self.rows.first().map_or(0, |r| r.theta_mean.len());
        let mut header: Vec<String> =
            ["scenario", "gamma_star", "n", "replicate", "alpha_mean", "lambda_mean"].map(String::from).to_vec();
        header.extend((1..=p).map(|j| format!("theta{j}")));
        header.extend(["k_mean", "gamma_mean", "seconds"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut f = vec![
                r.scenario.clone(),
                fmt_gamma(r.gamma_star),
                r.n.to_string(),
                r.replicate.to_string(),
                r.alpha_mean.to_string(),
                r.lambda_mean.to_string(),
            ];
            f.extend(r.theta_mean.iter().map(f64::to_string));
            f.extend([r.k_mean, r.gamma_mean, r.seconds].map(|v| v.to_string()));
            writeln!(w, "{}", f.join(","))?;
        }
        Ok(())
    }

    /// Per-cell quantiles (min, quartiles, max) of every posterior mean.
    /// Timing is left out so the file is reproducible byte for byte.
    pub fn write_aggregate_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scenario,gamma_star,n,quantity,count,failures,min,q25,median,q75,max")?;
        let p = self.rows.first().map_or(0, |r| r.theta_mean.len());
        let mut quantities: Vec<(String, Column)> = vec![
            ("alpha_mean".into(), Box::new(|r| r.alpha_mean)),
            ("lambda_mean".into(), Box::new(|r| r.lambda_mean)),
        ];
        for j in 0..p {
            quantities.push((format!("theta{}", j + 1), Box::new(move |r| r.theta_mean[j])));
        }
        quantities.push(("k_mean".into(), Box::new(|r| r.k_mean)));
        quantities.push(("gamma_mean".into(), Box::new(|r| r.gamma_mean)));
        for (n, g) in self.cells() {
            let rows = self.cell(n, g);
            let failed = self.failures.iter().filter(|f| f.n == n && f.gamma_star == g).count();
            for (name, f) in &quantities {
                let mut v: Vec<f64> = rows.iter().map(|r| f(r)).collect();
                v.sort_by(f64::total_cmp);
                let qs: Vec<String> =
                    AGGREGATE_QUANTILES.iter().map(|&q| quantile_sorted(&v, q).to_string()).collect();
                writeln!(w, "{},{},{n},{name},{},{failed},{}", self.scenario, fmt_gamma(g), v.len(), qs.join(","))?;
            }
        }
        Ok(())
    }
}
