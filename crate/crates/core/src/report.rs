//! Post-processing of posterior draws: bias probabilities, parameter
//! summaries and the pure versus bias-corrected predictions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{chol_psd, corr_matrix, default_jitter, exp_corr};
use crate::model::{Dataset, LinearCode, MixtureState};
use crate::sampler::{allocation_prob, PosteriorDraws};
use crate::stats::{mean, quantile_sorted, sd};

/// Mean, spread and central quantiles of one scalar quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl Summary {
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (lo, hi) = (s[0], s[s.len() - 1]);
        Summary {
            name: name.into(),
            mean: mean(values).clamp(lo, hi),
            sd: if lo == hi { 0.0 } else { sd(values) },
            q025: quantile_sorted(&s, 0.025),
            q50: quantile_sorted(&s, 0.5),
            q975: quantile_sorted(&s, 0.975),
        }
    }
}

/// Posterior mean with a central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn from_values(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        // the sandwich lo <= mean <= hi can fail by rounding on constant columns
        let m = mean(values).clamp(s[0], s[s.len() - 1]);
        Interval { mean: m, lo: quantile_sorted(&s, 0.025), hi: quantile_sorted(&s, 0.975) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Rao–Blackwellized probability that each observation carries a bias.
    pub bias_prob: Vec<f64>,
    pub alpha_summary: Summary,
    /// θ components, λ, α, k, γ, then the discrepancy at every site.
    pub summaries: Vec<Summary>,
    pub pred_pure: Vec<Interval>,
    pub pred_corrected: Vec<Interval>,
}

impl ValidationReport {
    pub fn build(draws: &PosteriorDraws, data: &Dataset, code: &LinearCode) -> Result<Self> {
        let bias_prob = rao_blackwell_bias_prob(draws, data, code)?;
        let summaries = posterior_summaries(draws)?;
        let alpha_summary = summaries
            .iter()
            .find(|s| s.name == "alpha")
            .cloned()
            .expect("summaries always include alpha");
        let (pred_pure, pred_corrected) = predict(draws, data, code)?;
        Ok(ValidationReport {
            x: (0..data.n()).map(|i| data.x_row(i)).collect(),
            y: data.y().iter().copied().collect(),
            bias_prob,
            alpha_summary,
            summaries,
            pred_pure,
            pred_corrected,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per observation, plot-ready.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.x.first().map_or(0, Vec::len);
        let mut header = vec!["i".to_string()];
        header.extend((1..=d).map(|j| format!("x{j}")));
        header.extend(
            [
                "y",
                "bias_prob",
                "pred_pure_mean",
                "pred_pure_lo",
                "pred_pure_hi",
                "pred_corr_mean",
                "pred_corr_lo",
                "pred_corr_hi",
            ]
            .map(String::from),
        );
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.y.len() {
            let (pp, pc) = (self.pred_pure[i], self.pred_corrected[i]);
            let mut row = vec![(i + 1).to_string()];
            row.extend(self.x[i].iter().map(f64::to_string));
            row.extend(
                [self.y[i], self.bias_prob[i], pp.mean, pp.lo, pp.hi, pc.mean, pc.lo, pc.hi].map(|v| v.to_string()),
            );
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn non_empty(draws: &PosteriorDraws) -> Result<()> {
    if draws.is_empty() {
        Err(Error::invalid("no posterior draws"))
    } else {
        Ok(())
    }
}

fn code_means(g: &DMatrix<f64>, s: &MixtureState) -> DVector<f64> {
    g * DVector::from_column_slice(&s.theta)
}

/// Average over saved states of the exact conditional `P(ζ_i = 1 | state)`.
///
/// Every quantity is taken from the same saved state.
pub fn rao_blackwell_bias_prob(draws: &PosteriorDraws, data: &Dataset, code: &LinearCode) -> Result<Vec<f64>> {
    non_empty(draws)?;
    let g = code.design(data)?;
    let y = data.y();
    let mut acc = vec![0.0; data.n()];
    for s in &draws.states {
        if s.delta.len() != data.n() || s.theta.len() != g.ncols() {
            return Err(Error::dims("draws do not match the dataset"));
        }
        let mu = code_means(&g, s);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += allocation_prob(y[i], mu[i], s.delta[i], s.lambda, s.alpha);
        }
    }
    let t = draws.len() as f64;
    Ok(acc.into_iter().map(|a| (a / t).clamp(0.0, 1.0)).collect())
}

/// Fraction of saved states with `ζ_i = 1`.
pub fn raw_bias_freq(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    non_empty(draws)?;
    let n = draws.states[0].zeta.len();
    let mut acc = vec![0.0; n];
    for s in &draws.states {
        for (a, &z) in acc.iter_mut().zip(&s.zeta) {
            *a += f64::from(u8::from(z));
        }
    }
    Ok(acc.into_iter().map(|a| a / draws.len() as f64).collect())
}

/// Summaries for θ, λ, α, k, γ and the discrepancy at each site.
pub fn posterior_summaries(draws: &PosteriorDraws) -> Result<Vec<Summary>> {
    non_empty(draws)?;
    let first = &draws.states[0];
    let mut out: Vec<Summary> = (0..first.theta.len())
        .map(|j| Summary::from_values(format!("theta_{}", j + 1), &draws.column(|s| s.theta[j])))
        .collect();
    out.push(Summary::from_values("lambda", &draws.column(|s| s.lambda)));
    out.push(Summary::from_values("alpha", &draws.column(|s| s.alpha)));
    out.push(Summary::from_values("k", &draws.column(|s| s.k)));
    out.push(Summary::from_values("gamma", &draws.column(|s| s.gamma)));
    out.extend(
        (0..first.delta.len()).map(|i| Summary::from_values(format!("delta_{}", i + 1), &draws.column(|s| s.delta[i]))),
    );
    Ok(out)
}

/// Pure-code predictions `g(x_i)θ` and bias-corrected predictions
/// `g(x_i)θ + δ_i 1{ζ_i}` at the observed inputs.
pub fn predict(draws: &PosteriorDraws, data: &Dataset, code: &LinearCode) -> Result<(Vec<Interval>, Vec<Interval>)> {
    non_empty(draws)?;
    let g = code.design(data)?;
    let n = data.n();
    let mut pure = vec![Vec::with_capacity(draws.len()); n];
    let mut corr = vec![Vec::with_capacity(draws.len()); n];
    for s in &draws.states {
        if s.delta.len() != n || s.theta.len() != g.ncols() {
            return Err(Error::dims("draws do not match the dataset"));
        }
        let mu = code_means(&g, s);
        for i in 0..n {
            pure[i].push(mu[i]);
            corr[i].push(if s.zeta[i] { mu[i] + s.delta[i] } else { mu[i] });
        }
    }
    Ok((
        pure.iter().map(|v| Interval::from_values(v)).collect(),
        corr.iter().map(|v| Interval::from_values(v)).collect(),
    ))
}

/// Predictions at new inputs. The corrected prediction adds the kriging
/// mean of the discrepancy given its value at the observed sites; whether a
/// new site is biased is unknown, so no allocation is applied.
///
/// Costs one factorization per state; thin the chain first when it is long.
pub fn predict_at(
    draws: &PosteriorDraws,
    data: &Dataset,
    code: &LinearCode,
    x_new: &DMatrix<f64>,
) -> Result<(Vec<Interval>, Vec<Interval>)> {
    non_empty(draws)?;
    if x_new.ncols() != data.d() {
        return Err(Error::dims(format!("new inputs have {} columns, data has {}", x_new.ncols(), data.d())));
    }
    let grid = Dataset::new(x_new.clone(), DVector::zeros(x_new.nrows()))?;
    let g_new = code.design(&grid)?;
    let n_new = x_new.nrows();
    let obs: Vec<Vec<f64>> = (0..data.n()).map(|i| data.x_row(i)).collect();
    let mut pure = vec![Vec::with_capacity(draws.len()); n_new];
    let mut corr = vec![Vec::with_capacity(draws.len()); n_new];
    for s in &draws.states {
        let c = corr_matrix(data.x(), s.gamma)?;
        let chol = chol_psd(&c.matrix, default_jitter(&c.matrix))?;
        let w = chol.solve(&DVector::from_column_slice(&s.delta));
        let mu = code_means(&g_new, s);
        for j in 0..n_new {
            let xj = grid.x_row(j);
            let mut krig = 0.0;
            for (i, xi) in obs.iter().enumerate() {
                krig += exp_corr(xi, &xj, s.gamma)? * w[i];
            }
            pure[j].push(mu[j]);
            corr[j].push(mu[j] + krig);
        }
    }
    Ok((
        pure.iter().map(|v| Interval::from_values(v)).collect(),
        corr.iter().map(|v| Interval::from_values(v)).collect(),
    ))
}
