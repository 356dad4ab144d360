//! Affine surrogates of black-box codes: a least-squares reference point,
//! a finite-difference Jacobian around it, and the regression form consumed
//! by the mixture model.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_rank, parse_row, LinearCode};

/// A deterministic map from a parameter vector to predicted outputs at the
/// observed operating points.
pub trait BlackBox: Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;

    fn eval(&self, k: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates a batch; results come back in input order.
    fn eval_many(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.par_iter().map(|p| self.eval(p)).collect()
    }
}

/// Black box backed by a Rust closure.
pub struct FnBlackBox<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> FnBlackBox<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnBlackBox { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> BlackBox for FnBlackBox<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, k: &[f64]) -> Result<Vec<f64>> {
        if k.len() != self.dim {
            return Err(Error::dims(format!("expected {} parameters, got {}", self.dim, k.len())));
        }
        Ok((self.f)(k))
    }
}

/// External program speaking a line protocol: one whitespace-separated
/// parameter vector per input line, one output vector per output line.
/// A batch is sent to a single process invocation.
#[derive(Debug, Clone)]
pub struct CommandBlackBox {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub dim: usize,
}

impl CommandBlackBox {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, dim: usize) -> Self {
        CommandBlackBox { program: program.into(), args, dim }
    }
}

fn format_vector(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

impl BlackBox for CommandBlackBox {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, k: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_many(&[k.to_vec()])?.remove(0))
    }

    fn eval_many(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(p) = points.iter().find(|p| p.len() != self.dim) {
            return Err(Error::dims(format!("expected {} parameters, got {}", self.dim, p.len())));
        }
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BlackBox(format!("cannot start {}: {e}", self.program.display())))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let input: String = points.iter().map(|p| format_vector(p) + "\n").collect();
        // feed input on a separate thread so a chatty child cannot deadlock us
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("stdout is piped")
            .read_to_string(&mut out)
            .map_err(|e| Error::BlackBox(format!("reading output: {e}")))?;
        let status = child.wait()?;
        writer
            .join()
            .map_err(|_| Error::BlackBox("input writer panicked".into()))?
            .map_err(|e| Error::BlackBox(format!("writing input: {e}")))?;
        if !status.success() {
            return Err(Error::BlackBox(format!("{} exited with {status}", self.program.display())));
        }
        let rows: Vec<Vec<f64>> = out
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::BlackBox(format!("output line {}: bad value '{t}'", i + 1))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        if rows.len() != points.len() {
            return Err(Error::BlackBox(format!("sent {} vectors, received {}", points.len(), rows.len())));
        }
        Ok(rows)
    }
}

/// Precomputed evaluations on a full tensor grid, interpolated
/// multilinearly. The CSV header is `k1,…,kq,y1,…,yn`; rows may come in any
/// order but must cover every grid node exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct TableBlackBox {
    axes: Vec<Vec<f64>>,
    /// Outputs at each node, in row-major order over `axes`.
    values: Vec<Vec<f64>>,
}

impl TableBlackBox {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty design table".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let q = cols.iter().take_while(|c| c.starts_with('k')).count();
        let n_out = cols.len() - q;
        if q == 0 || n_out == 0 || !cols[q..].iter().all(|c| c.starts_with('y')) {
            return Err(Error::Parse(format!("design table header must be k1..kq,y1..yn, got '{header}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_row(&line, i + 2)?;
            if v.len() != cols.len() {
                return Err(Error::Parse(format!("line {}: expected {} fields", i + 2, cols.len())));
            }
            rows.push(v);
        }
        let axes: Vec<Vec<f64>> = (0..q)
            .map(|j| {
                let mut a: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                a.sort_by(f64::total_cmp);
                a.dedup();
                a
            })
            .collect();
        if axes.iter().any(|a| a.len() < 2) {
            return Err(Error::Parse("each parameter needs at least two grid values".into()));
        }
        let size: usize = axes.iter().map(Vec::len).product();
        if size != rows.len() {
            return Err(Error::Parse(format!("{} rows do not form a full {size}-node grid", rows.len())));
        }
        let mut slots: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            let mut idx = 0;
            for (j, a) in axes.iter().enumerate() {
                let pos = a.binary_search_by(|v| v.total_cmp(&r[j])).expect("value is on its axis");
                idx = idx * a.len() + pos;
            }
            if slots.insert(idx, r[q..].to_vec()).is_some() {
                return Err(Error::Parse("design table repeats a grid node".into()));
            }
        }
        Ok(TableBlackBox { axes, values: slots.into_values().collect() })
    }

    /// Parameter range covered by the table.
    pub fn bounds(&self) -> ParamBox {
        ParamBox {
            lo: self.axes.iter().map(|a| a[0]).collect(),
            hi: self.axes.iter().map(|a| a[a.len() - 1]).collect(),
        }
    }
}

impl BlackBox for TableBlackBox {
    fn dim(&self) -> usize {
        self.axes.len()
    }

    fn eval(&self, k: &[f64]) -> Result<Vec<f64>> {
        if k.len() != self.axes.len() {
            return Err(Error::dims(format!("expected {} parameters, got {}", self.axes.len(), k.len())));
        }
        // lower node and fractional position along each axis
        let mut cell = Vec::with_capacity(k.len());
        for (a, &v) in self.axes.iter().zip(k) {
            if !(v >= a[0] && v <= a[a.len() - 1]) {
                return Err(Error::BlackBox(format!("{v} lies outside the table range [{}, {}]", a[0], a[a.len() - 1])));
            }
            let i = a.partition_point(|&t| t <= v).clamp(1, a.len() - 1) - 1;
            cell.push((i, (v - a[i]) / (a[i + 1] - a[i])));
        }
        let mut out = vec![0.0; self.values[0].len()];
        for corner in 0..1usize << k.len() {
            let mut w = 1.0;
            let mut idx = 0;
            for (j, (&(i, t), a)) in cell.iter().zip(&self.axes).enumerate() {
                let up = corner >> j & 1 == 1;
                w *= if up { t } else { 1.0 - t };
                idx = idx * a.len() + i + usize::from(up);
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[idx]) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// Wraps a black box with a hard evaluation budget.
pub struct Budgeted<B> {
    inner: B,
    limit: usize,
    used: AtomicUsize,
}

impl<B: BlackBox> Budgeted<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Budgeted { inner, limit, used: AtomicUsize::new(0) }
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst).min(self.limit)
    }
}

impl<B: BlackBox> BlackBox for Budgeted<B> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, k: &[f64]) -> Result<Vec<f64>> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(Error::BlackBox(format!("evaluation budget of {} exhausted", self.limit)));
        }
        self.inner.eval(k)
    }

    fn eval_many(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if self.used.fetch_add(points.len(), Ordering::SeqCst) + points.len() > self.limit {
            return Err(Error::BlackBox(format!("evaluation budget of {} exhausted", self.limit)));
        }
        self.inner.eval_many(points)
    }
}

/// Componentwise bounds `lo < hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = ParamBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::dims("box bounds must be nonempty and of equal length"));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("box needs finite bounds with lower < upper"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clip(&self, k: &[f64]) -> Vec<f64> {
        k.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect()
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        k.len() == self.dim() && k.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }

    fn point_at(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (a, b))| a + t.clamp(0.0, 1.0) * (b - a))
            .collect()
    }

    /// Reads `lower,upper` rows, one per parameter, after a header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_row(&line, i + 1)?.as_slice() {
                [a, b] => {
                    lo.push(*a);
                    hi.push(*b);
                }
                _ => return Err(Error::Parse(format!("line {}: expected lower,upper", i + 1))),
            }
        }
        ParamBox::new(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsOptions {
    pub restarts: usize,
    pub max_evals: usize,
    /// Convergence threshold on the spread of objective values in a simplex.
    pub ftol: f64,
    /// Convergence threshold on the simplex size in unit coordinates.
    pub xtol: f64,
}

impl Default for OlsOptions {
    fn default() -> Self {
        OlsOptions { restarts: 5, max_evals: 20_000, ftol: 1e-16, xtol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    pub k_hat: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    /// The budget ran out before every restart converged.
    pub budget_exhausted: bool,
    /// Best objective after each restart.
    pub trace: Vec<f64>,
}

/// `argmin_K Σ_s (h_s − m_s(K))²` over the box by Nelder–Mead from a
/// space-filling set of starts. The search runs on unit coordinates and
/// evaluates the black box at the clipped point.
pub fn ols_reference<B: BlackBox + ?Sized>(
    bb: &B,
    bx: &ParamBox,
    observations: &[f64],
    opts: &OlsOptions,
) -> Result<OlsResult> {
    bx.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("no observations to fit"));
    }
    if bb.dim() != bx.dim() {
        return Err(Error::dims(format!("black box has {} parameters, box has {}", bb.dim(), bx.dim())));
    }
    if opts.restarts == 0 || opts.max_evals == 0 {
        return Err(Error::invalid("restarts and evaluation budget must be positive"));
    }
    let mut evals = 0usize;
    let mut objective = |u: &[f64]| -> Result<Option<f64>> {
        if evals >= opts.max_evals {
            return Ok(None);
        }
        evals += 1;
        let out = bb.eval(&bx.point_at(u))?;
        if out.len() != observations.len() {
            return Err(Error::dims(format!("black box returned {} outputs for {} observations", out.len(), observations.len())));
        }
        let sse: f64 = out.iter().zip(observations).map(|(m, h)| (h - m) * (h - m)).sum();
        Ok(Some(if sse.is_finite() { sse } else { f64::INFINITY }))
    };
    let q = bx.dim();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut trace = Vec::with_capacity(opts.restarts);
    let mut exhausted = false;
    for start in space_filling_starts(q, opts.restarts) {
        if exhausted {
            break;
        }
        // re-seed the simplex at the incumbent until it stops improving
        let mut x0 = start;
        let mut last = f64::INFINITY;
        for _ in 0..4 {
            let (x, f, out_of_budget) = nelder_mead(&mut objective, &x0, opts)?;
            exhausted |= out_of_budget;
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((x.clone(), f));
            }
            if exhausted || !(f < last - opts.ftol) {
                break;
            }
            last = f;
            x0 = x;
        }
        trace.push(best.as_ref().map_or(f64::INFINITY, |b| b.1));
    }
    let (u, f) = best.ok_or_else(|| Error::BlackBox("evaluation budget exhausted before any evaluation".into()))?;
    Ok(OlsResult {
        k_hat: bx.clip(&bx.point_at(&u)),
        objective: f,
        evaluations: evals,
        budget_exhausted: exhausted,
        trace,
    })
}

/// Box center followed by Halton points in the unit cube.
fn space_filling_starts(q: usize, count: usize) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    let mut out = vec![vec![0.5; q]];
    for i in 1..count as u64 {
        out.push(
            (0..q)
                .map(|j| {
                    let base = PRIMES[j % PRIMES.len()] + 2 * (j / PRIMES.len()) as u64 * 59;
                    radical_inverse(i, base)
                })
                .collect(),
        );
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

type Objective<'a> = dyn FnMut(&[f64]) -> Result<Option<f64>> + 'a;

/// Nelder–Mead on the unit cube (points are clipped). Returns the best point,
/// its value and whether the evaluation budget stopped the search.
fn nelder_mead(f: &mut Objective<'_>, x0: &[f64], opts: &OlsOptions) -> Result<(Vec<f64>, f64, bool)> {
    let q = x0.len();
    let clip = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|t| t.clamp(0.0, 1.0)).collect() };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(q + 1);
    macro_rules! eval_or_stop {
        ($x:expr) => {
            match f(&$x)? {
                Some(v) => v,
                None => {
                    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
                    return match simplex.into_iter().next() {
                        Some((x, v)) => Ok((x, v, true)),
                        None => Ok((x0.to_vec(), f64::INFINITY, true)),
                    };
                }
            }
        };
    }
    let start = x0.to_vec();
    let v0 = eval_or_stop!(start);
    simplex.push((start, v0));
    for j in 0..q {
        let mut x = x0.to_vec();
        x[j] = if x[j] + 0.1 <= 1.0 { x[j] + 0.1 } else { x[j] - 0.1 };
        let v = eval_or_stop!(x);
        simplex.push((x, v));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fb, fw) = (simplex[0].1, simplex[q].1);
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (fw - fb).abs() <= opts.ftol * (1.0 + fb.abs()) && size <= opts.xtol || size <= 1e-14 {
            let (x, v) = simplex.swap_remove(0);
            return Ok((x, v, false));
        }
        let centroid: Vec<f64> =
            (0..q).map(|j| simplex[..q].iter().map(|(x, _)| x[j]).sum::<f64>() / q as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            clip(centroid.iter().zip(&simplex[q].0).map(|(c, w)| c + t * (c - w)).collect())
        };
        let xr = along(1.0);
        let fr = eval_or_stop!(xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval_or_stop!(xe);
            simplex[q] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[q - 1].1 {
            simplex[q] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fw {
                let x = along(0.5);
                let v = eval_or_stop!(x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval_or_stop!(x);
                (x, v)
            };
            if fc < fw.min(fr) {
                simplex[q] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for i in 1..=q {
                    let x: Vec<f64> = simplex[i].0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let v = eval_or_stop!(x);
                    simplex[i] = (x, v);
                }
            }
        }
    }
}

/// Default step per coordinate, `1e-4 · (b − a)`.
pub fn default_steps(bx: &ParamBox) -> Vec<f64> {
    bx.lo.iter().zip(&bx.hi).map(|(a, b)| 1e-4 * (b - a)).collect()
}

/// Difference stencil for one coordinate: offsets and weights applied to
/// the outputs, divided by the step.
fn stencil(k: f64, h: f64, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let (up, down) = (hi - k, k - lo);
    if up >= h && down >= h {
        (vec![h, -h], vec![0.5, -0.5], h)
    } else if up >= 2.0 * h {
        (vec![0.0, h, 2.0 * h], vec![-1.5, 2.0, -0.5], h)
    } else if down >= 2.0 * h {
        (vec![0.0, -h, -2.0 * h], vec![1.5, -2.0, 0.5], h)
    } else if up >= down {
        let h = up / 2.0;
        (vec![0.0, h, 2.0 * h], vec![-1.5, 2.0, -0.5], h)
    } else {
        let h = down / 2.0;
        (vec![0.0, -h, -2.0 * h], vec![1.5, -2.0, 0.5], h)
    }
}

/// Jacobian of the black box at `k_hat`, one column per parameter. Central
/// differences inside the box; near a face the three-point one-sided rule
/// keeps second-order accuracy, with the step shrunk when the box is narrow.
pub fn finite_diff_jacobian<B: BlackBox + ?Sized>(
    bb: &B,
    bx: &ParamBox,
    k_hat: &[f64],
    steps: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    bx.validate()?;
    if !bx.contains(k_hat) {
        return Err(Error::invalid("reference point lies outside the box"));
    }
    let h = steps.map_or_else(|| default_steps(bx), <[f64]>::to_vec);
    if h.len() != k_hat.len() || h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("steps must be positive, one per parameter"));
    }
    let stencils: Vec<_> = (0..k_hat.len()).map(|j| stencil(k_hat[j], h[j], bx.lo[j], bx.hi[j])).collect();
    let mut points = Vec::new();
    for (j, (offsets, _, _)) in stencils.iter().enumerate() {
        for &o in offsets {
            let mut p = k_hat.to_vec();
            p[j] += o;
            points.push(p);
        }
    }
    let outs = bb.eval_many(&points)?;
    let n_out = outs[0].len();
    if outs.iter().any(|o| o.len() != n_out) {
        return Err(Error::BlackBox("black box output length varies between calls".into()));
    }
    let mut jac = DMatrix::zeros(n_out, k_hat.len());
    let mut at = 0;
    for (j, (offsets, weights, step)) in stencils.iter().enumerate() {
        for s in 0..n_out {
            let mut acc = 0.0;
            for (t, w) in weights.iter().enumerate() {
                acc += w * outs[at + t][s];
            }
            jac[(s, j)] = acc / step;
        }
        at += offsets.len();
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("jacobian has non-finite entries".into()));
    }
    Ok(jac)
}

/// `f(K) ≈ f0 + J (K − K̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub k_hat: Vec<f64>,
    pub f0: Vec<f64>,
    /// Jacobian rows, one per output.
    pub jacobian: Vec<Vec<f64>>,
    pub bounds: ParamBox,
}

impl LinearSurrogate {
    pub fn jacobian_matrix(&self) -> DMatrix<f64> {
        let q = self.k_hat.len();
        DMatrix::from_fn(self.jacobian.len(), q, |i, j| self.jacobian[i][j])
    }
}

/// Reference point, outputs there and Jacobian, in one pass.
pub fn linearize<B: BlackBox + ?Sized>(
    bb: &B,
    bx: &ParamBox,
    observations: &[f64],
    opts: &OlsOptions,
    steps: Option<&[f64]>,
) -> Result<(LinearSurrogate, OlsResult)> {
    let ols = ols_reference(bb, bx, observations, opts)?;
    let f0 = bb.eval(&ols.k_hat)?;
    let jac = finite_diff_jacobian(bb, bx, &ols.k_hat, steps)?;
    let surrogate = LinearSurrogate {
        k_hat: ols.k_hat.clone(),
        f0,
        jacobian: (0..jac.nrows()).map(|i| jac.row(i).iter().copied().collect()).collect(),
        bounds: bx.clone(),
    };
    Ok((surrogate, ols))
}

/// Regression form for the mixture model with the parameters outside
/// `fit_indices` frozen at the reference point: design columns are the
/// selected Jacobian columns and the response is
/// `h − f0 + J_fit K̂_fit`, so that `response ≈ J_fit K_fit`.
pub fn to_linear_code(
    surrogate: &LinearSurrogate,
    fit_indices: &[usize],
    observations: &[f64],
) -> Result<(LinearCode, Vec<f64>)> {
    if fit_indices.is_empty() {
        return Err(Error::invalid("select at least one parameter to fit"));
    }
    let q = surrogate.k_hat.len();
    if let Some(&j) = fit_indices.iter().find(|&&j| j >= q) {
        return Err(Error::invalid(format!("parameter index {j} out of range for {q} parameters")));
    }
    if observations.len() != surrogate.f0.len() {
        return Err(Error::dims(format!(
            "{} observations for a surrogate with {} outputs",
            observations.len(),
            surrogate.f0.len()
        )));
    }
    let jac = surrogate.jacobian_matrix();
    let design = jac.select_columns(fit_indices);
    check_rank(&design)?;
    let response = (0..observations.len())
        .map(|s| {
            let frozen: f64 = fit_indices.iter().map(|&j| jac[(s, j)] * surrogate.k_hat[j]).sum();
            observations[s] - surrogate.f0[s] + frozen
        })
        .collect();
    Ok((LinearCode::tabulated(&design)?, response))
}
