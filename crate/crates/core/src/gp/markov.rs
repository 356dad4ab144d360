//! Exact linear-time discrepancy computations for one-dimensional inputs.
//!
//! On a line the exponential kernel is an Ornstein–Uhlenbeck process, so
//! every correlation matrix restricted to sorted sites has a tridiagonal
//! inverse. Quadratic forms, log determinants and Gaussian conditionals
//! then cost O(n) instead of O(n³).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MarkovChainGp {
    /// Original indices in increasing input order.
    order: Vec<usize>,
    /// Gaps between consecutive sorted inputs.
    gaps: Vec<f64>,
}

/// Tridiagonal terms of the unit-variance precision for one gap.
#[derive(Debug, Clone, Copy)]
struct GapTerms {
    /// ρ / (1 - ρ²)
    cross: f64,
    /// ρ² / (1 - ρ²)
    carry: f64,
}

impl GapTerms {
    fn new(gap: f64, gamma: f64) -> Self {
        let t = gap / gamma;
        GapTerms {
            cross: 0.5 / t.sinh(),
            carry: 1.0 / (2.0 * t).exp_m1(),
        }
    }
}

impl MarkovChainGp {
    /// Requires finite, pairwise distinct inputs.
    pub fn new(x: &[f64]) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("inputs must be finite"));
        }
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let gaps: Vec<f64> = order.windows(2).map(|w| x[w[1]] - x[w[0]]).collect();
        if gaps.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::invalid("one-dimensional fast path needs distinct inputs"));
        }
        Ok(MarkovChainGp { order, gaps })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `(uᵀ C_A⁻¹ u, ln |C_A|)` over the sites flagged in `mask`.
    pub fn quad_logdet(&self, gamma: f64, mask: &[bool], u: &[f64]) -> (f64, f64) {
        let mut quad = 0.0;
        let mut logdet = 0.0;
        let mut prev: Option<f64> = None;
        let mut dist = 0.0;
        for (s, &i) in self.order.iter().enumerate() {
            if s > 0 {
                dist += self.gaps[s - 1];
            }
            if !mask[i] {
                continue;
            }
            match prev {
                None => quad += u[i] * u[i],
                Some(up) => {
                    let t = dist / gamma;
                    let rho = (-t).exp();
                    let one_minus = -(-2.0 * t).exp_m1();
                    let r = u[i] - rho * up;
                    quad += r * r / one_minus;
                    logdet += one_minus.ln();
                }
            }
            prev = Some(u[i]);
            dist = 0.0;
        }
        (quad, logdet)
    }

    /// Tridiagonal unit-variance precision in sorted order: `(diag, off)`.
    /// Each gap adds `ρ²/(1-ρ²)` to both of its endpoints, so interior sites
    /// carry `1/(1-ρ²_left) + ρ²_right/(1-ρ²_right)`.
    fn precision_bands(&self, gamma: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut diag = vec![1.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        for (j, &g) in self.gaps.iter().enumerate() {
            let t = GapTerms::new(g, gamma);
            diag[j] += t.carry;
            diag[j + 1] += t.carry;
            off[j] = -t.cross;
        }
        (diag, off)
    }

    /// Dense correlation precision in original index order.
    pub fn precision_matrix(&self, gamma: f64) -> DMatrix<f64> {
        let n = self.len();
        let (diag, off) = self.precision_bands(gamma);
        let mut q = DMatrix::zeros(n, n);
        for s in 0..n {
            let i = self.order[s];
            q[(i, i)] = diag[s];
            if s + 1 < n {
                let j = self.order[s + 1];
                q[(i, j)] = off[s];
                q[(j, i)] = off[s];
            }
        }
        q
    }

    /// Draws the centered discrepancy `u = δ - μ` from its conditional given
    /// allocated centered residuals `r` on `mask`, with prior covariance
    /// `(λ²/k) Corr` and noise variance `λ²`.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        gamma: f64,
        k: f64,
        lambda: f64,
        mask: &[bool],
        r: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n = self.len();
        let (mut diag, mut off) = self.precision_bands(gamma);
        let mut rhs = vec![0.0; n];
        for (s, &i) in self.order.iter().enumerate() {
            diag[s] *= k;
            if mask[i] {
                diag[s] += 1.0;
                rhs[s] = r[i];
            }
        }
        for o in off.iter_mut() {
            *o *= k;
        }
        let sorted = solve_and_sample(&diag, &off, &rhs, lambda, rng)?;
        let mut out = vec![0.0; n];
        for (s, &i) in self.order.iter().enumerate() {
            out[i] = sorted[s];
        }
        Ok(out)
    }

    /// Redraws the centered discrepancy off `mask` given its values on `mask`
    /// under the prior `(λ²/k) Corr`. Entries on `mask` are returned unchanged.
    pub fn sample_complement<R: Rng + ?Sized>(
        &self,
        gamma: f64,
        k: f64,
        lambda: f64,
        mask: &[bool],
        u: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n = self.len();
        let (diag, off) = self.precision_bands(gamma);
        let mut slots = Vec::new();
        let mut d = Vec::new();
        let mut o = Vec::new();
        let mut rhs = Vec::new();
        for s in 0..n {
            let i = self.order[s];
            if mask[i] {
                continue;
            }
            if let Some(&last) = slots.last() {
                o.push(if last + 1 == s { k * off[s - 1] } else { 0.0 });
            }
            let mut b = 0.0;
            if s > 0 && mask[self.order[s - 1]] {
                b -= k * off[s - 1] * u[self.order[s - 1]];
            }
            if s + 1 < n && mask[self.order[s + 1]] {
                b -= k * off[s] * u[self.order[s + 1]];
            }
            slots.push(s);
            d.push(k * diag[s]);
            rhs.push(b);
        }
        let drawn = solve_and_sample(&d, &o, &rhs, lambda, rng)?;
        let mut out = u.to_vec();
        for (c, &s) in slots.iter().enumerate() {
            out[self.order[s]] = drawn[c];
        }
        Ok(out)
    }
}

/// For a symmetric tridiagonal `P` (diagonal `diag`, off-diagonal `off`),
/// returns `P⁻¹ rhs + scale · L⁻ᵀ z` where `P = L Lᵀ` and `z` is standard
/// normal, i.e. a draw from `N(P⁻¹ rhs, scale² P⁻¹)`.
fn solve_and_sample<R: Rng + ?Sized>(
    diag: &[f64],
    off: &[f64],
    rhs: &[f64],
    scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut l = vec![0.0; n];
    let mut c = vec![0.0; n.saturating_sub(1)];
    let mut w = vec![0.0; n];
    for j in 0..n {
        let mut piv = diag[j];
        let mut acc = rhs[j];
        if j > 0 {
            c[j - 1] = off[j - 1] / l[j - 1];
            piv -= c[j - 1] * c[j - 1];
            acc -= c[j - 1] * w[j - 1];
        }
        if !(piv > 0.0) || !piv.is_finite() {
            return Err(Error::Numerical(format!("tridiagonal pivot {piv:e} at {j}")));
        }
        l[j] = piv.sqrt();
        w[j] = acc / l[j];
    }
    for wj in w.iter_mut() {
        *wj += scale * rng.sample::<f64, _>(StandardNormal);
    }
    let mut x = vec![0.0; n];
    for j in (0..n).rev() {
        let mut t = w[j];
        if j + 1 < n {
            t -= c[j] * x[j + 1];
        }
        x[j] = t / l[j];
    }
    Ok(x)
}
