use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{chol_psd, corr_matrix, default_jitter, gp_conditional, sample_mvn, GpBlocks, MarkovChainGp};
use crate::error::Result;

/// Which linear-algebra route the sampler uses for discrepancy updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Markov route for one-dimensional distinct inputs, dense otherwise.
    #[default]
    Auto,
    Dense,
    Markov,
}

impl std::str::FromStr for BackendKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(BackendKind::Auto),
            "dense" => Ok(BackendKind::Dense),
            "markov" => Ok(BackendKind::Markov),
            other => Err(crate::Error::invalid(format!("unknown backend '{other}'"))),
        }
    }
}

/// Discrepancy computations needed by the sampler. All vectors are indexed by
/// observation and centered on the prior mean; `mask` flags the allocated
/// sites (ζ = 1).
#[derive(Debug, Clone)]
pub enum DiscrepancyBackend {
    Dense { x: DMatrix<f64> },
    Markov(MarkovChainGp),
}

impl DiscrepancyBackend {
    pub fn new(x: &DMatrix<f64>, kind: BackendKind) -> Result<Self> {
        match kind {
            BackendKind::Dense => Ok(DiscrepancyBackend::Dense { x: x.clone() }),
            BackendKind::Markov => {
                if x.ncols() != 1 {
                    return Err(crate::Error::invalid("markov backend needs one input dimension"));
                }
                Ok(DiscrepancyBackend::Markov(MarkovChainGp::new(x.as_slice())?))
            }
            BackendKind::Auto => {
                if x.ncols() == 1 {
                    if let Ok(gp) = MarkovChainGp::new(x.as_slice()) {
                        return Ok(DiscrepancyBackend::Markov(gp));
                    }
                }
                Ok(DiscrepancyBackend::Dense { x: x.clone() })
            }
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            DiscrepancyBackend::Dense { .. } => BackendKind::Dense,
            DiscrepancyBackend::Markov(_) => BackendKind::Markov,
        }
    }

    /// `(uᵀ Corr_A⁻¹ u, ln |Corr_A|)`.
    pub fn quad_logdet(&self, gamma: f64, mask: &[bool], u: &[f64]) -> Result<(f64, f64)> {
        match self {
            DiscrepancyBackend::Markov(gp) => Ok(gp.quad_logdet(gamma, mask, u)),
            DiscrepancyBackend::Dense { x } => {
                let idx = indices(mask);
                if idx.is_empty() {
                    return Ok((0.0, 0.0));
                }
                let c = corr_matrix(x, gamma)?.select(&idx);
                let chol = chol_psd(&c, default_jitter(&c))?;
                let v = DVector::from_iterator(idx.len(), idx.iter().map(|&i| u[i]));
                Ok((chol.quad_form(&v), chol.log_det()))
            }
        }
    }

    /// Kriging draw of the centered discrepancy at all sites given centered
    /// residuals `r` on the allocated sites.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        gamma: f64,
        k: f64,
        lambda: f64,
        mask: &[bool],
        r: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match self {
            DiscrepancyBackend::Markov(gp) => gp.sample_conditional(gamma, k, lambda, mask, r, rng),
            DiscrepancyBackend::Dense { x } => {
                let idx = indices(mask);
                let corr = corr_matrix(x, gamma)?;
                let lambda2 = lambda * lambda;
                let blocks = GpBlocks::build(&corr, lambda2 / k, lambda2, &idx);
                let y_m: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
                let (mu, sigma) = gp_conditional(0.0, &blocks, &y_m, &vec![0.0; idx.len()])?;
                let chol = chol_psd(&sigma, default_jitter(&sigma))?;
                Ok(sample_mvn(&mu, &chol, rng).iter().copied().collect())
            }
        }
    }

    /// Redraws the centered discrepancy off `mask` from the prior given the
    /// values on `mask`.
    pub fn sample_complement<R: Rng + ?Sized>(
        &self,
        gamma: f64,
        k: f64,
        lambda: f64,
        mask: &[bool],
        u: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match self {
            DiscrepancyBackend::Markov(gp) => gp.sample_complement(gamma, k, lambda, mask, u, rng),
            DiscrepancyBackend::Dense { x } => {
                let idx = indices(mask);
                let rest: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
                if rest.is_empty() {
                    return Ok(u.to_vec());
                }
                let corr = corr_matrix(x, gamma)?;
                let sigma2 = lambda * lambda / k;
                let blocks = GpBlocks::build(&corr, sigma2, 0.0, &idx);
                let y_m: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
                let (mu, sigma) = gp_conditional(0.0, &blocks, &y_m, &vec![0.0; idx.len()])?;
                let mu_b = DVector::from_iterator(rest.len(), rest.iter().map(|&i| mu[i]));
                let sigma_b = DMatrix::from_fn(rest.len(), rest.len(), |a, b| sigma[(rest[a], rest[b])]);
                let chol = chol_psd(&sigma_b, default_jitter(&sigma_b))?;
                let draw = sample_mvn(&mu_b, &chol, rng);
                let mut out = u.to_vec();
                for (c, &i) in rest.iter().enumerate() {
                    out[i] = draw[c];
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}
