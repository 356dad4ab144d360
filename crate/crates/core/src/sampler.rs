//! Metropolis-within-Gibbs sampler for the mixture posterior.
//!
//! One iteration runs, in order: allocations ζ, the kriging draw of δ, the
//! conjugate θ, λ² and α updates, logit random-walk Metropolis steps for k and
//! γ, and a final redraw of the discrepancy at unallocated sites.
//!
//! The λ, k and γ updates condition on the discrepancy at allocated sites only
//! (the values elsewhere are integrated out under the prior); the closing
//! redraw restores a full joint state, so every stored state is a draw from
//! the joint posterior.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::gp::{chol_psd, BackendKind, DiscrepancyBackend};
use crate::model::{check_rank, gauss_log_density, ln_weight, parse_row, Dataset, LinearCode, MixtureState, PriorConfig};
use crate::rng::{stream, Stream};

/// Exponent of the Robbins–Monro step size.
pub const ADAPT_DECAY: f64 = 0.6;

/// Floor on the initial noise scale.
pub const LAMBDA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Iterations between scale updates during burn-in.
    pub adapt_window: usize,
    pub thin: usize,
    pub backend: BackendKind,
    /// Draw the starting point from the priors instead of the OLS fit.
    pub random_init: bool,
    /// Starting random-walk scale on the logit axis for k and γ.
    pub initial_scale: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iters: 10_000,
            burn_in: 1_000,
            seed: 0,
            target_accept: 0.44,
            adapt_window: 50,
            thin: 1,
            backend: BackendKind::Auto,
            random_init: false,
            initial_scale: 1.0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::invalid("iters must be positive"));
        }
        if self.burn_in >= self.iters {
            return Err(Error::invalid(format!(
                "burn-in {} must be below iters {}",
                self.burn_in, self.iters
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target acceptance must lie in (0, 1)"));
        }
        if self.adapt_window == 0 || self.thin == 0 {
            return Err(Error::invalid("adapt window and thin must be positive"));
        }
        if !(self.initial_scale > 0.0) || !self.initial_scale.is_finite() {
            return Err(Error::invalid("initial scale must be positive"));
        }
        Ok(())
    }
}

/// Post-burn-in states with sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// Iteration number (1-based) of each stored state.
    pub iter: Vec<usize>,
    pub states: Vec<MixtureState>,
    /// Post-burn-in acceptance rates.
    pub accept_k: f64,
    pub accept_gamma: f64,
    /// Allocation count at every iteration, burn-in included.
    pub m_trace: Vec<usize>,
    /// Frozen proposal scales.
    pub scale_k: f64,
    pub scale_gamma: f64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn column<F: Fn(&MixtureState) -> f64>(&self, f: F) -> Vec<f64> {
        self.states.iter().map(f).collect()
    }

    pub fn mean<F: Fn(&MixtureState) -> f64>(&self, f: F) -> f64 {
        crate::stats::mean(&self.column(f))
    }

    pub fn sd<F: Fn(&MixtureState) -> f64>(&self, f: F) -> f64 {
        crate::stats::sd(&self.column(f))
    }

    /// Writes `iter,theta_1..,lambda,alpha,k,gamma,m,delta_1..,zeta_1..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.states.first() else {
            return Err(Error::invalid("no draws to export"));
        };
        let (p, n) = (first.theta.len(), first.delta.len());
        let mut header = vec!["iter".to_string()];
        header.extend((1..=p).map(|j| format!("theta_{j}")));
        header.extend(["lambda", "alpha", "k", "gamma", "m"].map(String::from));
        header.extend((1..=n).map(|i| format!("delta_{i}")));
        header.extend((1..=n).map(|i| format!("zeta_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.iter.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(s.theta.iter().map(f64::to_string));
            row.extend([s.lambda, s.alpha, s.k, s.gamma].map(|v| v.to_string()));
            row.push(s.m().to_string());
            row.extend(s.delta.iter().map(f64::to_string));
            row.extend(s.zeta.iter().map(|&z| if z { "1" } else { "0" }.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the export format back. Diagnostics other than the stored
    /// states are not part of the file and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty draws file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let p = cols.iter().filter(|c| c.starts_with("theta_")).count();
        let n = cols.iter().filter(|c| c.starts_with("delta_")).count();
        let has_zeta = cols.iter().any(|c| c.starts_with("zeta_"));
        let width = 1 + p + 5 + n + if has_zeta { n } else { 0 };
        if p == 0 || cols.len() != width || cols[0] != "iter" {
            return Err(Error::Parse(format!("unrecognized draws header '{header}'")));
        }
        let mut iter = Vec::new();
        let mut states = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_row(&line, lineno + 2)?;
            if v.len() != width {
                return Err(Error::Parse(format!("line {}: expected {width} fields", lineno + 2)));
            }
            let delta = v[p + 6..p + 6 + n].to_vec();
            let zeta = if has_zeta {
                v[p + 6 + n..].iter().map(|&z| z == 1.0).collect()
            } else {
                // without allocations every nonzero discrepancy counts as active
                delta.iter().map(|d| *d != 0.0).collect()
            };
            iter.push(v[0] as usize);
            states.push(MixtureState {
                theta: v[1..=p].to_vec(),
                lambda: v[p + 1],
                alpha: v[p + 2],
                k: v[p + 3],
                gamma: v[p + 4],
                delta,
                zeta,
            });
        }
        Ok(PosteriorDraws {
            iter,
            states,
            accept_k: f64::NAN,
            accept_gamma: f64::NAN,
            m_trace: Vec::new(),
            scale_k: f64::NAN,
            scale_gamma: f64::NAN,
        })
    }
}

/// Robbins–Monro update of a random-walk scale on the log axis.
pub fn adapt_scale(current_scale: f64, accept_rate: f64, target: f64, iteration: usize) -> f64 {
    let step = (accept_rate - target) / (iteration.max(1) as f64).powf(ADAPT_DECAY);
    current_scale * step.exp()
}

/// `P(ζ_i = 1)` given the pure-code mean, discrepancy, noise and weight.
pub fn allocation_prob(y: f64, code_mean: f64, delta: f64, lambda: f64, alpha: f64) -> f64 {
    let l0 = ln_weight(alpha) + gauss_log_density(y, code_mean, lambda);
    let l1 = ln_weight(1.0 - alpha) + gauss_log_density(y, code_mean + delta, lambda);
    if l1 == f64::NEG_INFINITY {
        return 0.0;
    }
    if l0 == f64::NEG_INFINITY {
        return 1.0;
    }
    1.0 / (1.0 + (l0 - l1).exp())
}

/// Shape of the inverse-gamma conditional of λ² given θ and the
/// discrepancy at the `m` allocated sites.
pub fn lambda_shape(n: usize, m: usize) -> f64 {
    (n + m) as f64 / 2.0
}

/// `α | ζ ~ Beta(n - m + a0, m + a0)`.
pub fn sample_alpha<R: Rng + ?Sized>(n: usize, m: usize, a0: f64, rng: &mut R) -> Result<f64> {
    if m > n {
        return Err(Error::invalid(format!("m = {m} exceeds n = {n}")));
    }
    let beta = Beta::new((n - m) as f64 + a0, m as f64 + a0)
        .map_err(|e| Error::invalid(format!("alpha conditional: {e}")))?;
    Ok(beta.sample(rng))
}

fn logit(v: f64) -> f64 {
    (v / (1.0 - v)).ln()
}

fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn ln_beta_pdf(v: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * v.ln() + (b - 1.0) * (1.0 - v).ln() - ln_beta(a, b)
}

/// Precomputed design quantities and the discrepancy backend for one
/// dataset; the step methods read and update a `MixtureState`.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    y: DVector<f64>,
    g: DMatrix<f64>,
    /// `(GᵀG)⁻¹Gᵀ`.
    proj: DMatrix<f64>,
    /// Lower Cholesky factor of `GᵀG`.
    gram_l: DMatrix<f64>,
    backend: DiscrepancyBackend,
    priors: PriorConfig,
}

impl MixtureSampler {
    pub fn new(data: &Dataset, code: &LinearCode, priors: PriorConfig, backend: BackendKind) -> Result<Self> {
        priors.validate()?;
        let g = code.design(data)?;
        check_rank(&g)?;
        let gram = g.transpose() * &g;
        let chol = chol_psd(&gram, 0.0)?;
        let gram_l = chol.l.clone();
        let proj = chol.solve_matrix(&g.transpose());
        Ok(MixtureSampler {
            y: data.y().clone(),
            g,
            proj,
            gram_l,
            backend: DiscrepancyBackend::new(data.x(), backend)?,
            priors,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.g.ncols()
    }

    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Swaps in new responses at the same inputs, keeping all design and
    /// backend factorizations.
    pub fn set_response(&mut self, y: DVector<f64>) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(Error::dims(format!("{} responses for {} inputs", y.len(), self.y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("responses must be finite"));
        }
        self.y = y;
        Ok(())
    }

    fn code_mean(&self, theta: &[f64]) -> DVector<f64> {
        &self.g * DVector::from_column_slice(theta)
    }

    /// OLS coefficients of `y - ζ⊙δ`.
    fn ols(&self, target: &DVector<f64>) -> DVector<f64> {
        &self.proj * target
    }

    /// Deterministic start: OLS θ, residual sd λ, prior means elsewhere,
    /// no discrepancy and no allocations.
    pub fn initial_state(&self) -> MixtureState {
        let theta = self.ols(&self.y);
        let resid = &self.y - &self.g * &theta;
        let dof = (self.n().saturating_sub(self.p())).max(1) as f64;
        let lambda = (resid.norm_squared() / dof).sqrt().max(LAMBDA_FLOOR);
        let pr = &self.priors;
        MixtureState {
            theta: theta.iter().copied().collect(),
            lambda,
            alpha: 0.5,
            k: pr.k_prior.0 / (pr.k_prior.0 + pr.k_prior.1),
            gamma: pr.gamma_prior.0 / (pr.gamma_prior.0 + pr.gamma_prior.1),
            delta: vec![pr.mu_delta; self.n()],
            zeta: vec![false; self.n()],
        }
    }

    /// Start drawn from the proper priors around the OLS fit.
    pub fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MixtureState> {
        let mut s = self.initial_state();
        let pr = self.priors;
        let draw = |a: f64, b: f64, rng: &mut R| -> Result<f64> {
            let v: f64 = Beta::new(a, b).map_err(|e| Error::invalid(e.to_string()))?.sample(rng);
            Ok(v.clamp(1e-6, 1.0 - 1e-6))
        };
        s.alpha = draw(pr.a0, pr.a0, rng)?;
        s.k = draw(pr.k_prior.0, pr.k_prior.1, rng)?;
        s.gamma = draw(pr.gamma_prior.0, pr.gamma_prior.1, rng)?;
        s.lambda *= (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        for v in s.theta.iter_mut() {
            *v += s.lambda * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(s)
    }

    /// Allocation probabilities `P(ζ_i = 1 | state)`.
    pub fn allocation_probs(&self, state: &MixtureState) -> Vec<f64> {
        let mean = self.code_mean(&state.theta);
        (0..self.n())
            .map(|i| allocation_prob(self.y[i], mean[i], state.delta[i], state.lambda, state.alpha))
            .collect()
    }

    /// Step a.1: independent Bernoulli allocations. Returns `(ζ, m)`.
    pub fn sample_zeta<R: Rng + ?Sized>(&self, state: &MixtureState, rng: &mut R) -> (Vec<bool>, usize) {
        let zeta: Vec<bool> = self
            .allocation_probs(state)
            .into_iter()
            .map(|p| rng.random::<f64>() < p)
            .collect();
        let m = zeta.iter().filter(|&&z| z).count();
        (zeta, m)
    }

    /// Step a.2: kriging draw of δ at every site given the allocated
    /// residuals; a prior draw when nothing is allocated.
    pub fn sample_delta<R: Rng + ?Sized>(&self, state: &MixtureState, rng: &mut R) -> Result<Vec<f64>> {
        let mu = self.priors.mu_delta;
        let mean = self.code_mean(&state.theta);
        let r: Vec<f64> = (0..self.n())
            .map(|i| if state.zeta[i] { self.y[i] - mean[i] - mu } else { 0.0 })
            .collect();
        let u = self
            .backend
            .sample_conditional(state.gamma, state.k, state.lambda, &state.zeta, &r, rng)?;
        Ok(u.into_iter().map(|v| v + mu).collect())
    }

    /// Conditional mean of θ: OLS on `y - ζ⊙δ`.
    pub fn theta_mean(&self, state: &MixtureState) -> DVector<f64> {
        let target = DVector::from_fn(self.n(), |i, _| {
            if state.zeta[i] {
                self.y[i] - state.delta[i]
            } else {
                self.y[i]
            }
        });
        self.ols(&target)
    }

    /// Step b: `θ ~ N(θ̂, λ²(GᵀG)⁻¹)`.
    pub fn sample_theta<R: Rng + ?Sized>(&self, state: &MixtureState, rng: &mut R) -> Vec<f64> {
        let mean = self.theta_mean(state);
        let z = DVector::from_fn(self.p(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = self
            .gram_l
            .tr_solve_lower_triangular(&z)
            .expect("gram factor has a nonzero diagonal");
        (mean + noise * state.lambda).iter().copied().collect()
    }

    /// `uᵀ Corr_A⁻¹ u` and `ln|Corr_A|` for the centered allocated discrepancy.
    fn allocated_quad(&self, state: &MixtureState, gamma: f64) -> Result<(f64, f64)> {
        let mu = self.priors.mu_delta;
        let u: Vec<f64> = state.delta.iter().map(|d| d - mu).collect();
        self.backend.quad_logdet(gamma, &state.zeta, &u)
    }

    /// Shape and rate of the inverse-gamma conditional of λ².
    pub fn lambda_conditional(&self, state: &MixtureState) -> Result<(f64, f64)> {
        let mean = self.code_mean(&state.theta);
        let rss: f64 = (0..self.n())
            .map(|i| {
                let r = self.y[i] - mean[i] - if state.zeta[i] { state.delta[i] } else { 0.0 };
                r * r
            })
            .sum();
        let (quad, _) = self.allocated_quad(state, state.gamma)?;
        let rate = 0.5 * (rss + state.k * quad);
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Numerical(format!("inverse-gamma rate {rate:e} is not positive")));
        }
        Ok((lambda_shape(self.n(), state.m()), rate))
    }

    /// Step c: `λ² ~ InvGamma(shape, rate)`; returns λ.
    pub fn sample_lambda<R: Rng + ?Sized>(&self, state: &MixtureState, rng: &mut R) -> Result<f64> {
        let (shape, rate) = self.lambda_conditional(state)?;
        let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
        let g: f64 = gamma.sample(rng);
        let lambda = (rate / g).sqrt();
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Numerical(format!("lambda draw {lambda:e} out of support")));
        }
        Ok(lambda)
    }

    /// Log target of k on the logit axis, up to a constant.
    fn ln_target_k(&self, state: &MixtureState, k: f64, quad: f64) -> f64 {
        let m = state.m() as f64;
        let lam2 = state.lambda * state.lambda;
        let (a, b) = self.priors.k_prior;
        0.5 * m * k.ln() - k * quad / (2.0 * lam2) + ln_beta_pdf(k, a, b) + k.ln() + (1.0 - k).ln()
    }

    /// Log target of γ on the logit axis, up to a constant.
    fn ln_target_gamma(&self, state: &MixtureState, gamma: f64) -> Result<f64> {
        let (quad, logdet) = self.allocated_quad(state, gamma)?;
        let lam2 = state.lambda * state.lambda;
        let (a, b) = self.priors.gamma_prior;
        Ok(-0.5 * logdet - state.k * quad / (2.0 * lam2)
            + ln_beta_pdf(gamma, a, b)
            + gamma.ln()
            + (1.0 - gamma).ln())
    }

    /// Log Metropolis ratio for moving k to `k_new` (symmetric on logit axis).
    pub fn log_accept_ratio_k(&self, state: &MixtureState, k_new: f64) -> Result<f64> {
        let (quad, _) = self.allocated_quad(state, state.gamma)?;
        Ok(self.ln_target_k(state, k_new, quad) - self.ln_target_k(state, state.k, quad))
    }

    pub fn log_accept_ratio_gamma(&self, state: &MixtureState, gamma_new: f64) -> Result<f64> {
        Ok(self.ln_target_gamma(state, gamma_new)? - self.ln_target_gamma(state, state.gamma)?)
    }

    /// Step e: logit random walk on k. Returns `(k, accepted)`.
    pub fn mh_step_k<R: Rng + ?Sized>(&self, state: &MixtureState, scale: f64, rng: &mut R) -> Result<(f64, bool)> {
        let proposal = expit(logit(state.k) + scale * rng.sample::<f64, _>(StandardNormal));
        if !(proposal > 0.0 && proposal < 1.0) {
            return Ok((state.k, false));
        }
        let (quad, _) = self.allocated_quad(state, state.gamma)?;
        let ratio = self.ln_target_k(state, proposal, quad) - self.ln_target_k(state, state.k, quad);
        Ok(if accept(ratio, rng) { (proposal, true) } else { (state.k, false) })
    }

    /// Step f: logit random walk on γ.
    pub fn mh_step_gamma<R: Rng + ?Sized>(
        &self,
        state: &MixtureState,
        scale: f64,
        rng: &mut R,
    ) -> Result<(f64, bool)> {
        let proposal = expit(logit(state.gamma) + scale * rng.sample::<f64, _>(StandardNormal));
        if !(proposal > 0.0 && proposal < 1.0) {
            return Ok((state.gamma, false));
        }
        let ratio = self.log_accept_ratio_gamma(state, proposal)?;
        Ok(if accept(ratio, rng) { (proposal, true) } else { (state.gamma, false) })
    }

    /// Redraws δ at unallocated sites from the prior given the allocated ones.
    pub fn refresh_unallocated<R: Rng + ?Sized>(&self, state: &MixtureState, rng: &mut R) -> Result<Vec<f64>> {
        let mu = self.priors.mu_delta;
        let u: Vec<f64> = state.delta.iter().map(|d| d - mu).collect();
        let out = self
            .backend
            .sample_complement(state.gamma, state.k, state.lambda, &state.zeta, &u, rng)?;
        Ok(out.into_iter().map(|v| v + mu).collect())
    }

    /// One full sweep. Returns the acceptance flags of the k and γ moves.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        state: &mut MixtureState,
        scales: (f64, f64),
        rng: &mut R,
    ) -> Result<(bool, bool)> {
        let (zeta, _) = self.sample_zeta(state, rng);
        state.zeta = zeta;
        state.delta = self.sample_delta(state, rng)?;
        state.theta = self.sample_theta(state, rng);
        state.lambda = self.sample_lambda(state, rng)?;
        state.alpha = sample_alpha(self.n(), state.m(), self.priors.a0, rng)?;
        let (k, acc_k) = self.mh_step_k(state, scales.0, rng)?;
        state.k = k;
        let (gamma, acc_g) = self.mh_step_gamma(state, scales.1, rng)?;
        state.gamma = gamma;
        state.delta = self.refresh_unallocated(state, rng)?;
        Ok((acc_k, acc_g))
    }

    /// Runs the chain from the configured start.
    pub fn run(&self, config: &McmcConfig) -> Result<PosteriorDraws> {
        config.validate()?;
        let mut rng = stream(config.seed);
        let start = if config.random_init {
            self.random_state(&mut rng)?
        } else {
            self.initial_state()
        };
        self.run_from(start, config, &mut rng)
    }

    pub fn run_from(&self, mut state: MixtureState, config: &McmcConfig, rng: &mut Stream) -> Result<PosteriorDraws> {
        config.validate()?;
        let mut scales = (config.initial_scale, config.initial_scale);
        let mut window = (0usize, 0usize);
        let mut kept = (0usize, 0usize);
        let saved = (config.iters - config.burn_in).div_ceil(config.thin);
        let mut draws = PosteriorDraws {
            iter: Vec::with_capacity(saved),
            states: Vec::with_capacity(saved),
            accept_k: 0.0,
            accept_gamma: 0.0,
            m_trace: Vec::with_capacity(config.iters),
            scale_k: 0.0,
            scale_gamma: 0.0,
        };
        for t in 1..=config.iters {
            let (acc_k, acc_g) = self
                .sweep(&mut state, scales, rng)
                .map_err(|e| Error::Iteration { iter: t, source: Box::new(e) })?;
            draws.m_trace.push(state.m());
            if t <= config.burn_in {
                window.0 += acc_k as usize;
                window.1 += acc_g as usize;
                if t % config.adapt_window == 0 {
                    let w = config.adapt_window as f64;
                    let round = t / config.adapt_window;
                    scales.0 = adapt_scale(scales.0, window.0 as f64 / w, config.target_accept, round);
                    scales.1 = adapt_scale(scales.1, window.1 as f64 / w, config.target_accept, round);
                    window = (0, 0);
                }
            } else {
                kept.0 += acc_k as usize;
                kept.1 += acc_g as usize;
                if (t - config.burn_in - 1).is_multiple_of(config.thin) {
                    draws.iter.push(t);
                    draws.states.push(state.clone());
                }
            }
        }
        let post = (config.iters - config.burn_in) as f64;
        draws.accept_k = kept.0 as f64 / post;
        draws.accept_gamma = kept.1 as f64 / post;
        draws.scale_k = scales.0;
        draws.scale_gamma = scales.1;
        Ok(draws)
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// Builds the sampler and runs one chain.
pub fn run_chain(data: &Dataset, code: &LinearCode, priors: PriorConfig, config: &McmcConfig) -> Result<PosteriorDraws> {
    MixtureSampler::new(data, code, priors, config.backend)?.run(config)
}
