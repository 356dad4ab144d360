//! Data containers, the linear code, component likelihoods of the pure and
//! discrepancy-corrected models, and forward simulators for both.
//!
//! Notation: `n` observations with `d` controllable inputs each; the code is
//! `f(x, θ) = g(x)·θ` with `p` basis functions.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{chol_psd, corr_matrix, default_jitter, sample_mvn};
use crate::rng::stream;
use crate::LN_2PI;

/// Field data: inputs scaled to the unit cube and the measured responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("dataset needs at least one observation"));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one input column"));
        }
        if x.nrows() != y.len() {
            return Err(Error::dims(format!("{} input rows but {} responses", x.nrows(), y.len())));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!(
                "inputs must lie in [0, 1] (use UnitScaler); found {v}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("responses must be finite"));
        }
        Ok(Dataset { x, y })
    }

    /// One-dimensional inputs.
    pub fn from_columns(x: &[f64], y: &[f64]) -> Result<Self> {
        Dataset::new(DMatrix::from_column_slice(x.len(), 1, x), DVector::from_column_slice(y))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Reads the `x1,...,xd,y` CSV layout.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (x, y) = read_raw_csv(reader)?;
        Dataset::new(x, y)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).chain(["y".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            row.push(self.y[i].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Reads `x1,...,xd,y` without checking the input range, for data that
/// still has to be rescaled.
pub fn read_raw_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "y" {
        return Err(Error::Parse(format!("expected header x1,...,xd,y; got '{header}'")));
    }
    for (j, c) in cols[..cols.len() - 1].iter().enumerate() {
        if *c != format!("x{}", j + 1) {
            return Err(Error::Parse(format!("column {} should be x{}, got '{c}'", j + 1, j + 1)));
        }
    }
    let d = cols.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_row(&line, lineno + 2)?;
        if vals.len() != d + 1 {
            return Err(Error::Parse(format!("line {}: expected {} fields", lineno + 2, d + 1)));
        }
        xs.extend_from_slice(&vals[..d]);
        ys.push(vals[d]);
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Parse("dataset file has no rows".into()));
    }
    Ok((DMatrix::from_row_slice(n, d, &xs), DVector::from_vec(ys)))
}

pub(crate) fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {lineno}: '{}': {e}", f.trim())))
        })
        .collect()
}

/// Per-column affine map of raw inputs onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl UnitScaler {
    pub fn fit(raw: &DMatrix<f64>) -> Result<Self> {
        let mut lo = Vec::with_capacity(raw.ncols());
        let mut hi = Vec::with_capacity(raw.ncols());
        for col in raw.column_iter() {
            let a = col.min();
            let b = col.max();
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::invalid("inputs must be finite"));
            }
            lo.push(a);
            hi.push(if b > a { b } else { a + 1.0 });
        }
        Ok(UnitScaler { lo, hi })
    }

    pub fn transform(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| {
            ((raw[(i, j)] - self.lo[j]) / (self.hi[j] - self.lo[j])).clamp(0.0, 1.0)
        })
    }

    pub fn inverse(&self, unit: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(unit.nrows(), unit.ncols(), |i, j| {
            self.lo[j] + unit[(i, j)] * (self.hi[j] - self.lo[j])
        })
    }
}

/// The basis `g` of a linear code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Intercept plus `x_j, x_j², ..., x_j^{deg_j}` for each input `j`.
    Polynomial { degrees: Vec<usize> },
    /// Explicit `n × p` design rows, one per observation.
    Tabulated { rows: Vec<Vec<f64>> },
}

/// Linear code `f(x, θ) = g(x)·θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCode {
    pub basis: Basis,
}

impl LinearCode {
    /// Single-input polynomial `(1, x, ..., x^degree)`.
    pub fn polynomial(degree: usize) -> Self {
        LinearCode { basis: Basis::Polynomial { degrees: vec![degree] } }
    }

    pub fn polynomial_multi(degrees: Vec<usize>) -> Self {
        LinearCode { basis: Basis::Polynomial { degrees } }
    }

    pub fn tabulated(design: &DMatrix<f64>) -> Result<Self> {
        if design.ncols() == 0 || design.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tabulated design must be finite with p >= 1"));
        }
        let rows = (0..design.nrows()).map(|i| design.row(i).iter().copied().collect()).collect();
        Ok(LinearCode { basis: Basis::Tabulated { rows } })
    }

    /// Reads a tabulated design with header `g1,...,gp`, one row per
    /// observation.
    pub fn read_design_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty design file".into()))??;
        let p = header.split(',').count();
        for (j, c) in header.split(',').map(str::trim).enumerate() {
            if c != format!("g{}", j + 1) {
                return Err(Error::Parse(format!("design column {} should be g{}, got '{c}'", j + 1, j + 1)));
            }
        }
        let mut vals = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line, lineno + 2)?;
            if row.len() != p {
                return Err(Error::Parse(format!("line {}: expected {p} fields", lineno + 2)));
            }
            vals.extend(row);
        }
        LinearCode::tabulated(&DMatrix::from_row_slice(vals.len() / p, p, &vals))
    }

    /// Writes a tabulated design in the layout read by [`LinearCode::read_design_csv`].
    pub fn write_design_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Basis::Tabulated { rows } = &self.basis else {
            return Err(Error::invalid("only tabulated designs can be exported"));
        };
        let header: Vec<String> = (1..=self.p()).map(|j| format!("g{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.iter().map(f64::to_string).collect::<Vec<_>>().join(","))?;
        }
        Ok(())
    }

    /// Number of basis functions (dimension of θ).
    pub fn p(&self) -> usize {
        match &self.basis {
            Basis::Polynomial { degrees } => 1 + degrees.iter().sum::<usize>(),
            Basis::Tabulated { rows } => rows.first().map_or(0, Vec::len),
        }
    }

    /// Basis row for input `x`; tabulated codes are looked up by observation.
    pub fn row(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        match &self.basis {
            Basis::Polynomial { degrees } => {
                if degrees.len() != x.len() {
                    return Err(Error::dims(format!(
                        "basis has {} inputs, row has {}",
                        degrees.len(),
                        x.len()
                    )));
                }
                let mut g = Vec::with_capacity(self.p());
                g.push(1.0);
                for (&deg, &xj) in degrees.iter().zip(x) {
                    let mut pow = 1.0;
                    for _ in 0..deg {
                        pow *= xj;
                        g.push(pow);
                    }
                }
                Ok(g)
            }
            Basis::Tabulated { rows } => rows
                .get(i)
                .cloned()
                .ok_or_else(|| Error::dims(format!("tabulated design has no row {i}"))),
        }
    }

    /// Stacked rows `G` (n × p) for a dataset.
    pub fn design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        if let Basis::Tabulated { rows } = &self.basis {
            if rows.len() != data.n() {
                return Err(Error::dims(format!(
                    "tabulated design has {} rows for {} observations",
                    rows.len(),
                    data.n()
                )));
            }
        }
        let p = self.p();
        let mut g = DMatrix::zeros(data.n(), p);
        for i in 0..data.n() {
            let row = self.row(i, &data.x_row(i))?;
            for (j, v) in row.into_iter().enumerate() {
                g[(i, j)] = v;
            }
        }
        Ok(g)
    }

    /// Design matrix after checking it has full column rank.
    pub fn checked_design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let g = self.design(data)?;
        check_rank(&g)?;
        Ok(g)
    }
}

/// Errors with the columns that add nothing to the span of the earlier ones.
pub fn check_rank(g: &DMatrix<f64>) -> Result<()> {
    let p = g.ncols();
    let tol = 1e-10 * g.amax().max(1.0) * (g.nrows().max(p) as f64);
    let mut kept: Vec<usize> = Vec::new();
    let mut offending = Vec::new();
    for j in 0..p {
        let mut cols = kept.clone();
        cols.push(j);
        let sub = g.select_columns(&cols);
        if sub.rank(tol) == cols.len() {
            kept.push(j);
        } else {
            offending.push(j);
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { rank: kept.len(), p, columns: offending })
    }
}

/// One point of the mixture parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub theta: Vec<f64>,
    /// Noise standard deviation λ.
    pub lambda: f64,
    /// Weight of the pure-code component.
    pub alpha: f64,
    /// Variance ratio: discrepancy variance is λ²/k.
    pub k: f64,
    /// Correlation length of the discrepancy.
    pub gamma: f64,
    pub delta: Vec<f64>,
    /// true when the observation is allocated to the discrepancy component.
    pub zeta: Vec<bool>,
}

impl MixtureState {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::invalid(format!("k must be in (0,1), got {}", self.k)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        if self.delta.iter().chain(&self.theta).any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta and delta must be finite"));
        }
        if self.delta.len() != self.zeta.len() {
            return Err(Error::dims("delta and zeta lengths differ"));
        }
        Ok(())
    }

    /// Number of observations allocated to the discrepancy component.
    pub fn m(&self) -> usize {
        self.zeta.iter().filter(|&&z| z).count()
    }
}

/// Prior hyperparameters. `(θ, λ)` always carry the Jeffreys prior `1/λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Beta(a0, a0) on α.
    pub a0: f64,
    /// Beta shapes on k.
    pub k_prior: (f64, f64),
    /// Beta shapes on γ.
    pub gamma_prior: (f64, f64),
    /// Constant prior mean of the discrepancy.
    pub mu_delta: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { a0: 0.5, k_prior: (1.0, 1.0), gamma_prior: (1.0, 1.0), mu_delta: 0.0 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let shapes = [self.a0, self.k_prior.0, self.k_prior.1, self.gamma_prior.0, self.gamma_prior.1];
        if shapes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("prior shapes must be > 0: {shapes:?}")));
        }
        if !self.mu_delta.is_finite() {
            return Err(Error::invalid("mu_delta must be finite"));
        }
        Ok(())
    }
}

fn check_gauss_args(y: f64, mean: f64, lambda: f64) -> Result<()> {
    if !y.is_finite() || !mean.is_finite() || !lambda.is_finite() {
        return Err(Error::invalid("non-finite likelihood argument"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn gauss_log_density(y: f64, mean: f64, lambda: f64) -> f64 {
    let z = (y - mean) / lambda;
    -0.5 * LN_2PI - lambda.ln() - 0.5 * z * z
}

fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("basis row of length {} vs theta of length {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// `log N(y_i | g_i·θ, λ²)`.
pub fn log_lik_m0(y_i: f64, g_i: &[f64], theta: &[f64], lambda: f64) -> Result<f64> {
    let mean = dot(g_i, theta)?;
    check_gauss_args(y_i, mean, lambda)?;
    Ok(gauss_log_density(y_i, mean, lambda))
}

/// `log N(y_i | g_i·θ + δ_i, λ²)`.
pub fn log_lik_m1(y_i: f64, g_i: &[f64], delta_i: f64, theta: &[f64], lambda: f64) -> Result<f64> {
    let mean = dot(g_i, theta)? + delta_i;
    check_gauss_args(y_i, mean, lambda)?;
    Ok(gauss_log_density(y_i, mean, lambda))
}

/// `log(exp(a) + exp(b))` with `-inf` handled.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

#[inline]
pub(crate) fn ln_weight(w: f64) -> f64 {
    if w <= 0.0 {
        f64::NEG_INFINITY
    } else {
        w.ln()
    }
}

/// Mixture log-likelihood `Σ_i log[α f0_i + (1-α) f1_i]`.
pub fn log_mixture_lik(data: &Dataset, code: &LinearCode, state: &MixtureState) -> Result<f64> {
    state.validate()?;
    if state.theta.len() != code.p() || state.delta.len() != data.n() {
        return Err(Error::dims(format!(
            "state has theta {} / delta {}, expected {} / {}",
            state.theta.len(),
            state.delta.len(),
            code.p(),
            data.n()
        )));
    }
    let (la, lb) = (ln_weight(state.alpha), ln_weight(1.0 - state.alpha));
    let mut total = 0.0;
    for i in 0..data.n() {
        let g = code.row(i, &data.x_row(i))?;
        let y = data.y()[i];
        let l0 = log_lik_m0(y, &g, &state.theta, state.lambda)?;
        let l1 = log_lik_m1(y, &g, state.delta[i], &state.theta, state.lambda)?;
        total += log_add_exp(la + l0, lb + l1);
    }
    Ok(total)
}

fn code_curve(code: &LinearCode, x: &DMatrix<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != code.p() {
        return Err(Error::dims(format!("theta has {} entries, code has p = {}", theta.len(), code.p())));
    }
    (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            dot(&code.row(i, &row)?, theta)
        })
        .collect()
}

/// Draws `y_i = g(x_i)·θ* + ε_i`, `ε_i ~ N(0, λ*²)`.
pub fn simulate_m0(
    code: &LinearCode,
    theta_star: &[f64],
    lambda_star: f64,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(lambda_star >= 0.0) || !lambda_star.is_finite() {
        return Err(Error::invalid(format!("lambda* must be >= 0, got {lambda_star}")));
    }
    let mut rng = stream(seed);
    let curve = code_curve(code, x, theta_star)?;
    Ok(curve
        .into_iter()
        .map(|c| c + lambda_star * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Draws `δ* ~ GP(0, (λ*²/k*) Corr_{γ*})` and `y_i = g(x_i)·θ* + δ*_i + ε_i`.
/// Returns `(y, δ*)`.
pub fn simulate_m1(
    code: &LinearCode,
    theta_star: &[f64],
    lambda_star: f64,
    k_star: f64,
    gamma_star: f64,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(lambda_star >= 0.0) || !lambda_star.is_finite() {
        return Err(Error::invalid(format!("lambda* must be >= 0, got {lambda_star}")));
    }
    if !(k_star > 0.0 && k_star < 1.0) || !(gamma_star > 0.0 && gamma_star < 1.0) {
        return Err(Error::invalid(format!("k* = {k_star}, gamma* = {gamma_star} must lie in (0,1)")));
    }
    let mut rng = stream(seed);
    let curve = code_curve(code, x, theta_star)?;
    let n = x.nrows();
    let sigma2 = lambda_star * lambda_star / k_star;
    let delta: Vec<f64> = if sigma2 > 0.0 {
        let cov = corr_matrix(x, gamma_star)?.matrix * sigma2;
        let chol = chol_psd(&cov, default_jitter(&cov))?;
        sample_mvn(&DVector::zeros(n), &chol, &mut rng).iter().copied().collect()
    } else {
        vec![0.0; n]
    };
    let y = curve
        .iter()
        .zip(&delta)
        .map(|(c, d)| c + d + lambda_star * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok((y, delta))
}

/// The regular grid `x_i = i / n`, `i = 1..n`.
pub fn unit_grid(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| (i + 1) as f64 / n as f64)
}
