//! Exact small-sample marginal likelihood and posterior mean of α by
//! enumerating every allocation subset.
//!
//! For a fixed subset `A` of discrepancy-allocated observations the
//! discrepancy integrates out to `y ~ N(Gθ, λ² V_A)` with
//! `V_A = I + Corr_A / k` on `A × A` and the identity elsewhere. Under the
//! `1/λ` prior, θ and then λ integrate in closed form:
//!
//! ```text
//! m_A(k, γ) = (2π)^{-(n-p)/2} |V_A|^{-1/2} |GᵀWG|^{-1/2} · ½Γ((n-p)/2) · (S/2)^{-(n-p)/2}
//! ```
//!
//! with `W = V_A⁻¹` and `S` the generalized-least-squares residual quadratic.
//! The α integral contributes `B(n-l+a0, l+a0) / B(a0, a0)`, and (k, γ) are
//! integrated numerically against their Beta priors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{inv_beta_reg, ln_beta};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gp::{chol_psd, corr_matrix};
use crate::model::{check_rank, Dataset, LinearCode, PriorConfig};
use crate::quadrature::gauss_legendre_unit;
use crate::stats::log_sum_exp;
use crate::LN_2PI;

/// Largest sample size the enumeration accepts.
pub const ORACLE_CAP: usize = 12;

/// Default nodes per axis of the (k, γ) rule.
pub const DEFAULT_RESOLUTION: usize = 32;

/// Largest tolerated change of the log marginal when the rule is doubled,
/// i.e. a 0.5% relative change of the marginal itself.
pub fn refinement_tolerance() -> f64 {
    1.005f64.ln()
}

/// All `2ⁿ` subsets, ordered by their bitmask.
pub fn enumerate_allocations(n: usize) -> Result<Vec<Vec<usize>>> {
    if n > ORACLE_CAP {
        return Err(Error::TooManyObservations { n, cap: ORACLE_CAP });
    }
    Ok((0u32..(1 << n))
        .map(|bits| (0..n).filter(|i| bits >> i & 1 == 1).collect())
        .collect())
}

/// `ln B(n-l+a0, l+a0) - ln B(a0, a0)`.
pub fn allocation_log_weight(n: usize, l: usize, a0: f64) -> f64 {
    ln_beta((n - l) as f64 + a0, l as f64 + a0) - ln_beta(a0, a0)
}

/// Tensor rule over (k, γ) after mapping each axis through the inverse CDF
/// of its Beta prior, so weights integrate the prior density to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub resolution: usize,
    pub k_nodes: Vec<f64>,
    pub gamma_nodes: Vec<f64>,
    /// Shared per-axis weights on the probability scale.
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(priors: &PriorConfig, resolution: usize) -> Result<Self> {
        priors.validate()?;
        if resolution == 0 {
            return Err(Error::invalid("quadrature resolution must be positive"));
        }
        let (u, w) = gauss_legendre_unit(resolution);
        let map = |(a, b): (f64, f64)| -> Vec<f64> {
            u.iter().map(|&t| inv_beta_reg(a, b, t).clamp(1e-300, 1.0 - 1e-16)).collect()
        };
        Ok(QuadratureGrid {
            resolution,
            k_nodes: map(priors.k_prior),
            gamma_nodes: map(priors.gamma_prior),
            weights: w,
        })
    }

    pub fn refined(&self, priors: &PriorConfig) -> Result<Self> {
        QuadratureGrid::new(priors, 2 * self.resolution)
    }
}

fn oracle_design(data: &Dataset, code: &LinearCode, priors: &PriorConfig) -> Result<DMatrix<f64>> {
    priors.validate()?;
    if priors.mu_delta != 0.0 {
        return Err(Error::invalid("the enumeration oracle supports a zero discrepancy mean only"));
    }
    let n = data.n();
    if n > ORACLE_CAP {
        return Err(Error::TooManyObservations { n, cap: ORACLE_CAP });
    }
    let g = code.design(data)?;
    let p = g.ncols();
    match check_rank(&g) {
        Ok(()) if n > p => Ok(g),
        Ok(()) => Err(Error::DivergentIntegral { n, p, rank: p }),
        Err(Error::RankDeficient { rank, .. }) => Err(Error::DivergentIntegral { n, p, rank }),
        Err(e) => Err(e),
    }
}

/// Closed-form log marginal of one subset, evaluated cheaply over many k.
struct SubsetTerm {
    n: usize,
    p: usize,
    /// Gram pieces from the unallocated rows.
    gram_b: DMatrix<f64>,
    cross_b: DVector<f64>,
    g_b: DMatrix<f64>,
    y_b: DVector<f64>,
    g_a: DMatrix<f64>,
    y_a: DVector<f64>,
    x_a: DMatrix<f64>,
}

/// Allocated block rotated into the eigenbasis of `Corr_A`.
struct Rotated {
    eig: Vec<f64>,
    /// `Eᵀ G_A`.
    h: DMatrix<f64>,
    /// `Eᵀ y_A`.
    z: DVector<f64>,
}

impl SubsetTerm {
    fn new(data: &Dataset, g: &DMatrix<f64>, subset: &[usize]) -> Self {
        let n = data.n();
        let rest: Vec<usize> = (0..n).filter(|i| !subset.contains(i)).collect();
        let g_b = g.select_rows(&rest);
        let y_b = DVector::from_iterator(rest.len(), rest.iter().map(|&i| data.y()[i]));
        SubsetTerm {
            n,
            p: g.ncols(),
            gram_b: g_b.transpose() * &g_b,
            cross_b: g_b.transpose() * &y_b,
            g_b,
            y_b,
            g_a: g.select_rows(subset),
            y_a: DVector::from_iterator(subset.len(), subset.iter().map(|&i| data.y()[i])),
            x_a: data.x().select_rows(subset),
        }
    }

    fn rotate(&self, gamma: f64) -> Result<Rotated> {
        let c = corr_matrix(&self.x_a, gamma)?.matrix;
        let eig = c.symmetric_eigen();
        let e = &eig.eigenvectors;
        Ok(Rotated {
            eig: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            h: e.transpose() * &self.g_a,
            z: e.transpose() * &self.y_a,
        })
    }

    fn log_marginal(&self, rot: Option<&Rotated>, k: f64) -> Result<f64> {
        let mut gram = self.gram_b.clone();
        let mut cross = self.cross_b.clone();
        let mut logdet_v = 0.0;
        let mut d = Vec::new();
        if let Some(r) = rot {
            for (i, &e) in r.eig.iter().enumerate() {
                // W in the eigenbasis is diag(k / (k + e))
                let di = k / (k + e);
                logdet_v -= di.ln();
                let hi = r.h.row(i);
                gram += hi.transpose() * hi * di;
                cross += hi.transpose() * (di * r.z[i]);
                d.push(di);
            }
        }
        let chol = chol_psd(&gram, 0.0)?;
        let beta = chol.solve(&cross);
        // weighted residual sum of squares, accumulated from residuals to
        // avoid cancellation when the fit is nearly exact
        let mut s = (&self.y_b - &self.g_b * &beta).norm_squared();
        if let Some(r) = rot {
            let res = &r.z - &r.h * &beta;
            s += res.iter().zip(&d).map(|(v, w)| w * v * v).sum::<f64>();
        }
        if !(s > 0.0) {
            return Err(Error::Numerical(format!("residual quadratic {s:e} is not positive")));
        }
        let dof = (self.n - self.p) as f64;
        Ok(-0.5 * dof * LN_2PI - 0.5 * logdet_v - 0.5 * chol.log_det() + (0.5f64).ln() + ln_gamma(0.5 * dof)
            - 0.5 * dof * (0.5 * s).ln())
    }

    /// `ln ∫∫ m_A(k, γ) π(k) π(γ) dk dγ` on the grid.
    fn log_integral(&self, grid: &QuadratureGrid) -> Result<f64> {
        if self.x_a.nrows() == 0 {
            return self.log_marginal(None, 0.5);
        }
        let lw: Vec<f64> = grid.weights.iter().map(|w| w.ln()).collect();
        let mut terms = Vec::with_capacity(grid.resolution * grid.resolution);
        for (j, &gamma) in grid.gamma_nodes.iter().enumerate() {
            let rot = self.rotate(gamma)?;
            for (i, &k) in grid.k_nodes.iter().enumerate() {
                terms.push(lw[i] + lw[j] + self.log_marginal(Some(&rot), k)?);
            }
        }
        Ok(log_sum_exp(&terms))
    }
}

/// `ln m_A(k, γ)`: y's density integrated over δ, θ and λ for fixed
/// allocation subset and (k, γ).
pub fn allocation_log_marginal(
    data: &Dataset,
    code: &LinearCode,
    subset: &[usize],
    k: f64,
    gamma: f64,
    priors: &PriorConfig,
) -> Result<f64> {
    if !(k > 0.0 && k < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("k = {k}, gamma = {gamma} must lie in (0,1)")));
    }
    let g = oracle_design(data, code, priors)?;
    if subset.iter().any(|&i| i >= data.n()) {
        return Err(Error::invalid("subset index out of range"));
    }
    let term = SubsetTerm::new(data, &g, subset);
    if subset.is_empty() {
        return term.log_marginal(None, k);
    }
    let rot = term.rotate(gamma)?;
    term.log_marginal(Some(&rot), k)
}

/// Per-subset posterior log mass (unnormalized) and sizes.
fn subset_log_masses(
    data: &Dataset,
    code: &LinearCode,
    priors: &PriorConfig,
    grid: &QuadratureGrid,
) -> Result<Vec<(usize, f64)>> {
    let g = oracle_design(data, code, priors)?;
    let n = data.n();
    let subsets = enumerate_allocations(n)?;
    subsets
        .par_iter()
        .map(|a| {
            let term = SubsetTerm::new(data, &g, a);
            let li = term.log_integral(grid)?;
            Ok((a.len(), allocation_log_weight(n, a.len(), priors.a0) + li))
        })
        .collect()
}

/// Log marginal likelihood of the mixture model.
pub fn marginal_likelihood(
    data: &Dataset,
    code: &LinearCode,
    priors: &PriorConfig,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let masses = subset_log_masses(data, code, priors, grid)?;
    let lm = log_sum_exp(&masses.iter().map(|m| m.1).collect::<Vec<_>>());
    if !lm.is_finite() {
        return Err(Error::Numerical(format!("log marginal is {lm}")));
    }
    Ok(lm)
}

/// `E[α | y] = Σ_A w_A (n - l + a0) / (n + 2 a0)`.
pub fn posterior_alpha_mean_exact(
    data: &Dataset,
    code: &LinearCode,
    priors: &PriorConfig,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let masses = subset_log_masses(data, code, priors, grid)?;
    Ok(summarize(data.n(), priors.a0, &masses).1)
}

/// `(log marginal, E[α|y], posterior mass by subset size)`.
fn summarize(n: usize, a0: f64, masses: &[(usize, f64)]) -> (f64, f64, Vec<f64>) {
    let lm = log_sum_exp(&masses.iter().map(|m| m.1).collect::<Vec<_>>());
    let mut by_size = vec![Vec::new(); n + 1];
    for &(l, v) in masses {
        by_size[l].push(v - lm);
    }
    let size_mass: Vec<f64> = by_size.iter().map(|v| log_sum_exp(v).exp()).collect();
    let alpha = size_mass
        .iter()
        .enumerate()
        .map(|(l, w)| w * ((n - l) as f64 + a0) / (n as f64 + 2.0 * a0))
        .sum();
    (lm, alpha, size_mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub p: usize,
    pub resolution: usize,
    pub log_marginal: f64,
    /// Same quantity with the rule doubled.
    pub log_marginal_refined: f64,
    pub alpha_mean: f64,
    pub alpha_mean_refined: f64,
    /// Posterior mass of subsets of each size `0..=n`.
    pub size_mass: Vec<f64>,
    /// Optional MCMC estimate of `E[α|y]` and its distance to the exact value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_mean_mcmc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crosscheck_gap: Option<f64>,
}

/// Evaluates the oracle at `resolution` and at twice that, failing when the
/// two disagree beyond [`refinement_tolerance`].
pub fn oracle_report(data: &Dataset, code: &LinearCode, priors: &PriorConfig, resolution: usize) -> Result<OracleReport> {
    let coarse = QuadratureGrid::new(priors, resolution)?;
    let fine = coarse.refined(priors)?;
    let (lm, alpha, size_mass) = summarize(data.n(), priors.a0, &subset_log_masses(data, code, priors, &coarse)?);
    let (lm2, alpha2, _) = summarize(data.n(), priors.a0, &subset_log_masses(data, code, priors, &fine)?);
    if !lm.is_finite() || !lm2.is_finite() {
        return Err(Error::Numerical("log marginal is not finite".into()));
    }
    let gap = (lm - lm2).abs();
    if gap > refinement_tolerance() {
        return Err(Error::QuadratureNonConvergence { coarse: resolution, fine: 2 * resolution, gap });
    }
    Ok(OracleReport {
        n: data.n(),
        p: code.p(),
        resolution,
        log_marginal: lm,
        log_marginal_refined: lm2,
        alpha_mean: alpha,
        alpha_mean_refined: alpha2,
        size_mass,
        alpha_mean_mcmc: None,
        crosscheck_gap: None,
    })
}
