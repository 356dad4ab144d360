//! Discrepancy Gaussian process: exponential correlation, jittered Cholesky,
//! multivariate normal draws and the kriging conditional.
//!
//! The correlation between two input rows is `exp(-|x - x'|_1 / gamma)`,
//! which is the product of one-dimensional exponential kernels sharing a
//! single length scale.

mod backend;
mod markov;

pub use backend::{BackendKind, DiscrepancyBackend};
pub use markov::MarkovChainGp;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Number of ×10 escalations attempted after the base jitter.
pub const JITTER_ESCALATIONS: usize = 6;

/// Relative base jitter, scaled by the mean of the diagonal.
pub const RELATIVE_BASE_JITTER: f64 = 1e-10;

pub fn exp_corr(xi: &[f64], xj: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("correlation length must be > 0, got {gamma}")));
    }
    if xi.len() != xj.len() {
        return Err(Error::dims(format!("input rows of length {} and {}", xi.len(), xj.len())));
    }
    Ok(corr_unchecked(xi, xj, gamma))
}

#[inline]
fn l1_distance(xi: &[f64], xj: &[f64]) -> f64 {
    xi.iter().zip(xj).map(|(a, b)| (a - b).abs()).sum()
}

#[inline]
fn corr_unchecked(xi: &[f64], xj: &[f64], gamma: f64) -> f64 {
    (-l1_distance(xi, xj) / gamma).exp()
}

/// Correlation matrix of a set of inputs at a given length scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub matrix: DMatrix<f64>,
    pub gamma: f64,
}

impl CorrMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Principal submatrix on `idx`.
    pub fn select(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.matrix[(idx[a], idx[b])])
    }
}

/// Pairwise correlation of the rows of `x` (n × d).
pub fn corr_matrix(x: &DMatrix<f64>, gamma: f64) -> Result<CorrMatrix> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("correlation length must be > 0, got {gamma}")));
    }
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut m = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = corr_unchecked(&rows[i], &rows[j], gamma);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(CorrMatrix { matrix: m, gamma })
}

/// Lower Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: DMatrix<f64>,
    pub jitter_used: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let w = self.solve_lower(b);
        self.l
            .tr_solve_lower_triangular(&w)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal");
        self.l
            .tr_solve_lower_triangular(&w)
            .expect("cholesky factor has a nonzero diagonal")
    }

    /// Solves `L w = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `bᵀ (L Lᵀ)⁻¹ b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.solve_lower(b).norm_squared()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}

/// Default absolute base jitter for `m`: `1e-10 · mean(diag)`.
pub fn default_jitter(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    RELATIVE_BASE_JITTER * m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n
}

/// Cholesky factorization with diagonal jitter escalation.
///
/// Tries the bare matrix first, then `base_jitter · 10^j` for
/// `j = 0..=JITTER_ESCALATIONS`.
pub fn chol_psd(m: &DMatrix<f64>, base_jitter: f64) -> Result<CholFactor> {
    if !m.is_square() {
        return Err(Error::dims(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if m.nrows() == 0 {
        return Ok(CholFactor { l: DMatrix::zeros(0, 0), jitter_used: 0.0 });
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(CholFactor { l: c.l(), jitter_used: 0.0 });
    }
    let mut jitter = base_jitter;
    for _ in 0..=JITTER_ESCALATIONS {
        if jitter > 0.0 {
            let mut shifted = m.clone();
            for i in 0..m.nrows() {
                shifted[(i, i)] += jitter;
            }
            if let Some(c) = shifted.cholesky() {
                return Ok(CholFactor { l: c.l(), jitter_used: jitter });
            }
        }
        jitter *= 10.0;
    }
    Err(Error::SingularMatrix { jitter: jitter / 10.0 })
}

/// Blocks of the joint covariance of the discrepancy at all sites and the
/// allocated observations.
#[derive(Debug, Clone)]
pub struct GpBlocks {
    /// Σ_{δ,δ}: n × n.
    pub dd: DMatrix<f64>,
    /// Σ_{δ,y_m}: n × m.
    pub dm: DMatrix<f64>,
    /// Σ_{y_m,y_m}: m × m, noise variance included.
    pub mm: DMatrix<f64>,
}

impl GpBlocks {
    /// Blocks for `δ ~ GP(μ, sigma2 · Corr)` observed on `alloc` with
    /// independent noise of variance `noise_var`.
    pub fn build(corr: &CorrMatrix, sigma2: f64, noise_var: f64, alloc: &[usize]) -> Self {
        let n = corr.dim();
        let dd = &corr.matrix * sigma2;
        let dm = DMatrix::from_fn(n, alloc.len(), |i, l| sigma2 * corr.matrix[(i, alloc[l])]);
        let mut mm = DMatrix::from_fn(alloc.len(), alloc.len(), |a, b| {
            sigma2 * corr.matrix[(alloc[a], alloc[b])]
        });
        for a in 0..alloc.len() {
            mm[(a, a)] += noise_var;
        }
        GpBlocks { dd, dm, mm }
    }
}

/// Kriging conditional of the discrepancy at every site given the
/// allocated observations `y_m` whose code mean is `code_mean_m`.
///
/// Returns `(mu_hat, sigma_hat)`. Solves through the Cholesky factor of
/// `Σ_{y_m,y_m}`.
pub fn gp_conditional(
    mu_delta: f64,
    blocks: &GpBlocks,
    y_m: &[f64],
    code_mean_m: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = blocks.dd.nrows();
    let m = blocks.mm.nrows();
    if y_m.len() != m || code_mean_m.len() != m || blocks.dm.shape() != (n, m) {
        return Err(Error::dims(format!(
            "conditioning on {} values with {} code means against {m} blocks",
            y_m.len(),
            code_mean_m.len()
        )));
    }
    let prior_mean = DVector::from_element(n, mu_delta);
    if m == 0 {
        return Ok((prior_mean, blocks.dd.clone()));
    }
    let chol = chol_psd(&blocks.mm, default_jitter(&blocks.mm))?;
    let innov = DVector::from_iterator(
        m,
        y_m.iter().zip(code_mean_m).map(|(y, c)| y - (c + mu_delta)),
    );
    let alpha = chol.solve(&innov);
    let mu_hat = prior_mean + &blocks.dm * alpha;
    // Σ_dm Σ_mm⁻¹ Σ_md = Wᵀ W with W = L⁻¹ Σ_md
    let w = chol
        .l
        .solve_lower_triangular(&blocks.dm.transpose())
        .expect("cholesky factor has a nonzero diagonal");
    let mut sigma_hat = &blocks.dd - w.transpose() * &w;
    symmetrize(&mut sigma_hat);
    Ok((mu_hat, sigma_hat))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `mu + L z` with `z` iid standard normal drawn from `rng`.
pub fn sample_mvn<R: Rng + ?Sized>(mu: &DVector<f64>, chol: &CholFactor, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mu + &chol.l * z
}

/// Log density of `N(mean, cov)` at `v` via a jittered Cholesky factor.
pub fn mvn_log_density(v: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = chol_psd(cov, default_jitter(cov))?;
    let r = v - mean;
    let n = v.len() as f64;
    Ok(-0.5 * (n * crate::LN_2PI + chol.log_det() + chol.quad_form(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| (i + 1) as f64 / n as f64)
    }

    #[test]
    fn exp_corr_basics() {
        assert_eq!(exp_corr(&[0.3], &[0.3], 0.2).unwrap(), 1.0);
        assert_relative_eq!(exp_corr(&[0.1], &[0.4], 0.3).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(exp_corr(&[0.1], &[0.4], 0.0).is_err());
        assert!(exp_corr(&[0.1], &[0.4], -1.0).is_err());
        let mut last = 1.0;
        for step in 1..50 {
            let c = exp_corr(&[0.0, 0.0], &[step as f64 / 100.0, step as f64 / 200.0], 0.3).unwrap();
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn corr_matrix_edge_cases() {
        let one = corr_matrix(&DMatrix::from_element(1, 1, 0.5), 0.3).unwrap();
        assert_eq!(one.matrix, DMatrix::from_element(1, 1, 1.0));
        let dup = corr_matrix(&DMatrix::from_element(2, 1, 0.5), 0.3).unwrap();
        assert_eq!(dup.matrix, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn corr_matrix_on_distinct_grid_is_positive_definite() {
        let c = corr_matrix(&grid(10), 0.3).unwrap();
        let eig = c.matrix.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v > 0.0));
        assert_eq!(c.matrix.transpose(), c.matrix);
    }

    #[test]
    fn chol_identity_needs_no_jitter() {
        let f = chol_psd(&DMatrix::identity(4, 4), 1e-10).unwrap();
        assert_eq!(f.jitter_used, 0.0);
        assert_eq!(f.l, DMatrix::identity(4, 4));
    }

    #[test]
    fn chol_rank_deficient_uses_jitter() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let f = chol_psd(&m, default_jitter(&m)).unwrap();
        assert!(f.jitter_used > 0.0);
        let target = &m + DMatrix::identity(2, 2) * f.jitter_used;
        assert!((f.reconstruct() - target).amax() < 1e-12);
    }

    #[test]
    fn chol_of_gram_matrix_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = DMatrix::from_fn(8, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = a.transpose() * a;
        let f = chol_psd(&m, default_jitter(&m)).unwrap();
        assert!((f.reconstruct() - &m).norm() / m.norm() < 1e-10);
    }

    #[test]
    fn chol_fails_on_negative_definite() {
        let m = -DMatrix::<f64>::identity(3, 3);
        assert!(matches!(chol_psd(&m, 1e-10), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn conditional_without_data_is_prior() {
        let c = corr_matrix(&grid(5), 0.3).unwrap();
        let b = GpBlocks::build(&c, 2.0, 0.01, &[]);
        let (mu, s) = gp_conditional(0.7, &b, &[], &[]).unwrap();
        assert!(mu.iter().all(|&v| v == 0.7));
        assert_eq!(s, &c.matrix * 2.0);
    }

    #[test]
    fn conditional_scalar_closed_form() {
        let c = corr_matrix(&DMatrix::from_element(1, 1, 0.2), 0.3).unwrap();
        let (sigma2, lambda2, y, g) = (0.5, 0.04, 1.3, 0.9);
        let b = GpBlocks::build(&c, sigma2, lambda2, &[0]);
        let (mu, s) = gp_conditional(0.0, &b, &[y], &[g]).unwrap();
        assert_relative_eq!(mu[0], sigma2 / (lambda2 + sigma2) * (y - g), epsilon = 1e-14);
        assert_relative_eq!(s[(0, 0)], sigma2 - sigma2 * sigma2 / (lambda2 + sigma2), epsilon = 1e-14);
    }

    #[test]
    fn conditional_interpolates_residuals_as_noise_vanishes() {
        let x = grid(6);
        let c = corr_matrix(&x, 0.4).unwrap();
        let alloc = [0, 2, 3, 5];
        let lambda = 1e-8;
        let b = GpBlocks::build(&c, 0.3, lambda * lambda, &alloc);
        let y = [1.0, -0.5, 0.25, 2.0];
        let code = [0.5, 0.1, 0.0, 1.5];
        let (mu, _) = gp_conditional(0.0, &b, &y, &code).unwrap();
        for (l, &i) in alloc.iter().enumerate() {
            assert!((mu[i] - (y[l] - code[l])).abs() < 1e-4);
        }
    }

    #[test]
    fn conditional_covariance_is_psd_and_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.random::<f64>());
        let c = corr_matrix(&x, 0.25).unwrap();
        let b = GpBlocks::build(&c, 1.5, 0.02, &[1, 4, 7, 8]);
        let (_, s) = gp_conditional(0.0, &b, &[0.1, 0.2, -0.3, 0.0], &[0.0; 4]).unwrap();
        let eig = s.clone().symmetric_eigen();
        let trace: f64 = s.diagonal().sum();
        assert!(eig.eigenvalues.min() >= -1e-8 * trace);
        for i in 0..10 {
            assert!(s[(i, i)] <= b.dd[(i, i)] + 1e-10);
        }
    }

    #[test]
    fn duplicated_conditioning_equals_halved_noise() {
        let x = DMatrix::from_column_slice(5, 1, &[0.1, 0.3, 0.5, 0.7, 0.3]);
        let c = corr_matrix(&x, 0.3).unwrap();
        let (sigma2, noise) = (0.8, 0.05);
        let twice = GpBlocks::build(&c, sigma2, noise, &[1, 4]);
        let (mu2, s2) = gp_conditional(0.0, &twice, &[0.4, 0.4], &[0.1, 0.1]).unwrap();
        let once = GpBlocks::build(&c, sigma2, noise / 2.0, &[1]);
        let (mu1, s1) = gp_conditional(0.0, &once, &[0.4], &[0.1]).unwrap();
        assert!((mu2 - mu1).amax() < 1e-8);
        assert!((s2 - s1).amax() < 1e-8);
    }

    #[test]
    fn corr_matrix_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(7, 2, |_, _| rng.random::<f64>());
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let xp = DMatrix::from_fn(7, 2, |i, j| x[(perm[i], j)]);
        let c = corr_matrix(&x, 0.4).unwrap();
        let cp = corr_matrix(&xp, 0.4).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(cp.matrix[(i, j)], c.matrix[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn mvn_degenerate_and_deterministic() {
        let mu = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let zero = CholFactor { l: DMatrix::zeros(3, 3), jitter_used: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_mvn(&mu, &zero, &mut rng), mu);
        let id = chol_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        let a = sample_mvn(&mu, &id, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_mvn(&mu, &id, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn mvn_moments() {
        let id = chol_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        let mu = DVector::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 100_000;
        let mut sum = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        for _ in 0..draws {
            let d = sample_mvn(&mu, &id, &mut rng);
            sum += &d;
            sq += d.component_mul(&d);
        }
        for i in 0..3 {
            let mean = sum[i] / draws as f64;
            let var = sq[i] / draws as f64 - mean * mean;
            assert!(mean.abs() < 0.02);
            assert!((var - 1.0).abs() < 0.03);
        }
    }
}
