//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! A failing criterion is reported, not raised, so the run always completes.
//! Select a subset with `CODEVAL_ACCEPTANCE=1,5,8`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use codeval::gp::{corr_matrix, mvn_log_density, BackendKind};
use codeval::harness::{run_scenario, scenario_defaults, ScenarioTable};
use codeval::linearize::{finite_diff_jacobian, ols_reference, BlackBox, FnBlackBox, OlsOptions, ParamBox};
use codeval::model::{simulate_m0, simulate_m1, unit_grid};
use codeval::oracle::{marginal_likelihood, oracle_report, QuadratureGrid, DEFAULT_RESOLUTION};
use codeval::report::{predict, rao_blackwell_bias_prob};
use codeval::rng::{derive, stream};
use codeval::sampler::{run_chain, sample_alpha, McmcConfig, MixtureSampler};
use codeval::stats::{ks_two_sample, median, rmse};
use codeval::{Dataset, Error, LinearCode, MixtureState, PriorConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::distribution::Continuous;

const THETA_STAR: [f64; 3] = [4.0, 1.0, 2.0];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Shared between the fig2 reproduction and the jobs-invariance check.
#[derive(Default)]
struct Cache {
    fig2_serial: Option<ScenarioTable>,
}

impl Cache {
    fn fig2(&mut self) -> &ScenarioTable {
        self.fig2_serial.get_or_insert_with(|| {
            run_scenario(&scenario_defaults("fig2").unwrap(), 1).expect("fig2 scenario runs")
        })
    }
}

fn within_3sd(mean: &[f64], sd: &[f64]) -> bool {
    mean.iter().zip(sd).zip(THETA_STAR).all(|((m, s), t)| (m - t).abs() <= 3.0 * s)
}

fn c1_fig1(_: &mut Cache) -> Outcome {
    let table = run_scenario(&scenario_defaults("fig1").unwrap(), 1).expect("fig1 scenario runs");
    let r = table.rows.len();
    let high = table.rows.iter().filter(|r| r.alpha_mean > 0.8).count();
    let covered = table.rows.iter().filter(|r| within_3sd(&r.theta_mean, &r.theta_sd)).count();
    let alphas: Vec<f64> = table.rows.iter().map(|r| r.alpha_mean).collect();
    let lam = median(&table.rows.iter().map(|r| r.lambda_mean).collect::<Vec<_>>());
    let pass = high >= 45 && covered >= 45 && (0.08..=0.12).contains(&lam);
    Outcome::new(
        pass,
        format!(
            "alpha mean > 0.8 in {high}/{r} (need 45), median alpha mean {:.3}; theta within 3 sd in {covered}/{r}; median lambda {lam:.4} (need [0.08, 0.12])",
            median(&alphas)
        ),
    )
}

fn c2_fig2(cache: &mut Cache) -> Outcome {
    let table = cache.fig2();
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, g) in table.cells() {
        let gs = g.expect("fig2 cells carry a correlation length");
        let cell = table.cell(n, g);
        let a = table.cell_median(n, g, |r| r.alpha_mean);
        let lam = table.cell_median(n, g, |r| r.lambda_mean);
        // median standardized error of each θ component within the cell
        let z_med: Vec<f64> = (0..3)
            .map(|j| median(&cell.iter().map(|r| (r.theta_mean[j] - THETA_STAR[j]).abs() / r.theta_sd[j]).collect::<Vec<_>>()))
            .collect();
        let theta_ok = z_med.iter().all(|z| *z <= 3.0);
        let per_rep = cell.iter().filter(|r| within_3sd(&r.theta_mean, &r.theta_sd)).count();
        pass &= theta_ok;
        if gs >= 0.1 - 1e-12 {
            pass &= a < 0.2;
        }
        if (gs - 0.01).abs() < 1e-12 {
            pass &= lam > 0.12;
        }
        let zmax = z_med.iter().copied().fold(0.0, f64::max);
        parts.push(format!("g*={gs}: alpha {a:.3} lambda {lam:.3} theta|z|med {zmax:.2} ({per_rep}/{})", cell.len()));
    }
    Outcome::new(pass, format!("median alpha < 0.2 for g* >= 0.1, median lambda > 0.12 at g* = 0.01, median theta |z| <= 3; {}", parts.join("; ")))
}

fn c3_fig3(_: &mut Cache) -> Outcome {
    let table = run_scenario(&scenario_defaults("fig3").unwrap(), 1).expect("fig3 scenario runs");
    let cells = table.cells();
    let meds: Vec<(usize, f64)> = cells.iter().map(|&(n, g)| (n, table.cell_median(n, g, |r| r.alpha_mean))).collect();
    let big_ok = meds.iter().filter(|(n, _)| *n >= 30).all(|(_, m)| *m < 0.1);
    let inversions = meds.windows(2).filter(|w| w[1].1 > w[0].1).count();
    let listing: Vec<String> = meds.iter().map(|(n, m)| format!("{n}:{m:.3}")).collect();
    Outcome::new(
        big_ok && inversions <= 1,
        format!("medians < 0.1 for n >= 30: {big_ok}; inversions {inversions} (allow 1); {}", listing.join(" ")),
    )
}

fn c4_fig4(_: &mut Cache) -> Outcome {
    let s = scenario_defaults("fig4").unwrap();
    let (data, draws) = s.draws(0, 0).expect("fig4 replicate runs");
    let (pure, corrected) = predict(&draws, &data, &s.code()).unwrap();
    let y: Vec<f64> = data.y().iter().copied().collect();
    let rp = rmse(&pure.iter().map(|i| i.mean).collect::<Vec<_>>(), &y);
    let rc = rmse(&corrected.iter().map(|i| i.mean).collect::<Vec<_>>(), &y);
    Outcome::new(
        rc <= 0.75 * rp,
        format!("RMSE corrected {rc:.4} vs pure {rp:.4}, ratio {:.3} (need <= 0.75); alpha mean {:.3}", rc / rp, draws.mean(|s| s.alpha)),
    )
}

fn c5_oracle(_: &mut Cache) -> Outcome {
    let code = LinearCode::polynomial(2);
    let priors = scenario_defaults("fig2").unwrap().priors;
    let x = unit_grid(8);
    let mut worst_gap: f64 = 0.0;
    let mut worst_refine: f64 = 0.0;
    let mut gaps = Vec::new();
    for i in 0..10u64 {
        let seed = 500 + i;
        let y = if i < 5 {
            simulate_m0(&code, &THETA_STAR, 0.1, &x, seed).unwrap()
        } else {
            simulate_m1(&code, &THETA_STAR, 0.1, 0.1, 0.3, &x, seed).unwrap().0
        };
        let data = Dataset::new(x.clone(), DVector::from_vec(y)).unwrap();
        let exact = match oracle_report(&data, &code, &priors, DEFAULT_RESOLUTION) {
            Ok(r) => r,
            Err(e) => return Outcome::new(false, format!("dataset {i}: oracle failed: {e}")),
        };
        let cfg = McmcConfig { iters: 100_000, burn_in: 5_000, seed: i, ..Default::default() };
        let draws = run_chain(&data, &code, priors, &cfg).unwrap();
        let gap = (draws.mean(|s| s.alpha) - exact.alpha_mean).abs();
        let refine = (exact.log_marginal_refined - exact.log_marginal).exp() - 1.0;
        worst_gap = worst_gap.max(gap);
        worst_refine = worst_refine.max(refine.abs());
        gaps.push(format!("{gap:.4}"));
    }
    Outcome::new(
        worst_gap <= 0.03 && worst_refine < 0.005,
        format!(
            "max |E_mcmc - E_exact| {worst_gap:.4} (need <= 0.03); max grid-doubling change {:.3}% (need < 0.5%); gaps {}",
            100.0 * worst_refine,
            gaps.join(" ")
        ),
    )
}

fn c6_propriety(_: &mut Cache) -> Outcome {
    let code = LinearCode::polynomial(2);
    let priors = PriorConfig::default();
    let grid = QuadratureGrid::new(&priors, DEFAULT_RESOLUTION).unwrap();
    let mut rng = stream(606);
    let mut finite = 0;
    let mut failures = Vec::new();
    for t in 0..100 {
        let n = rng.random_range(4..=10);
        let mut xs: Vec<f64> = Vec::new();
        while xs.len() < n {
            let v: f64 = rng.random();
            if xs.iter().all(|u| (u - v).abs() > 1e-6) {
                xs.push(v);
            }
        }
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let shift: f64 = rng.random_range(-5.0..5.0);
        let ys: Vec<f64> = xs.iter().map(|x| shift + x * x + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let data = Dataset::from_columns(&xs, &ys).unwrap();
        match marginal_likelihood(&data, &code, &priors, &grid) {
            Ok(lm) if lm.is_finite() => finite += 1,
            Ok(lm) => failures.push(format!("#{t}: {lm}")),
            Err(e) => failures.push(format!("#{t}: {e}")),
        }
    }
    let degenerate = Dataset::from_columns(&[0.2, 0.2, 0.7, 0.7, 0.7], &[1.0, 1.1, 2.0, 2.2, 1.9]).unwrap();
    let divergent = marginal_likelihood(&degenerate, &code, &priors, &grid);
    let flagged = matches!(divergent, Err(Error::DivergentIntegral { .. }));
    Outcome::new(
        finite == 100 && flagged,
        format!(
            "{finite}/100 fuzzed log marginals finite{}; rank-deficient design: {}",
            if failures.is_empty() { String::new() } else { format!(" ({})", failures.join(", ")) },
            match divergent {
                Err(e) => e.to_string(),
                Ok(v) => format!("unexpectedly finite {v}"),
            }
        ),
    )
}

// ---- criterion 7: conditional correctness from the public step API ----

const DRAWS: usize = 100_000;

fn toy(n: usize, seed: u64) -> (Dataset, LinearCode) {
    let code = LinearCode::polynomial(2);
    let x = unit_grid(n);
    let (y, _) = simulate_m1(&code, &THETA_STAR, 0.1, 0.1, 0.3, &x, seed).unwrap();
    (Dataset::new(x, DVector::from_vec(y)).unwrap(), code)
}

fn frozen(n: usize) -> MixtureState {
    MixtureState {
        theta: vec![4.05, 0.9, 2.1],
        lambda: 0.12,
        alpha: 0.4,
        k: 0.2,
        gamma: 0.3,
        delta: (0..n).map(|i| 0.15 * ((i as f64) * 0.7).sin()).collect(),
        zeta: (0..n).map(|i| i % 3 != 0).collect(),
    }
}

/// Largest |sample mean − expected| in units of the Monte-Carlo standard
/// error, and the same for the sample variance (normal-theory SE).
fn z_scores(samples: &[Vec<f64>], mean: &[f64], var: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mut zm: f64 = 0.0;
    let mut zv: f64 = 0.0;
    for j in 0..mean.len() {
        let m = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let v = samples.iter().map(|s| (s[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        zm = zm.max((m - mean[j]).abs() / (var[j] / n).sqrt());
        zv = zv.max((v - var[j]).abs() / (var[j] * (2.0 / (n - 1.0)).sqrt()));
    }
    (zm, zv)
}

fn dense_log_target(data: &Dataset, st: &MixtureState, pr: &PriorConfig, k: f64, gamma: f64) -> f64 {
    let idx: Vec<usize> = (0..data.n()).filter(|&i| st.zeta[i]).collect();
    let c = corr_matrix(data.x(), gamma).unwrap().select(&idx);
    let v = DVector::from_iterator(idx.len(), idx.iter().map(|&i| st.delta[i]));
    let gp = mvn_log_density(&v, &DVector::zeros(idx.len()), &(c * (st.lambda * st.lambda / k))).unwrap();
    let kp = statrs::distribution::Beta::new(pr.k_prior.0, pr.k_prior.1).unwrap().ln_pdf(k);
    let gpri = statrs::distribution::Beta::new(pr.gamma_prior.0, pr.gamma_prior.1).unwrap().ln_pdf(gamma);
    gp + kp + gpri + k.ln() + (1.0 - k).ln() + gamma.ln() + (1.0 - gamma).ln()
}

/// Alternates a data draw from the model with one sweep over ζ, δ, α, k, γ
/// (θ and λ fixed); the parameter marginals must stay at their priors.
fn geweke_p_values(seed: u64) -> Vec<f64> {
    let pr = PriorConfig { a0: 1.5, k_prior: (2.0, 3.0), gamma_prior: (2.0, 2.0), mu_delta: 0.0 };
    let code = LinearCode::polynomial(1);
    let x = DMatrix::from_column_slice(5, 1, &[0.1, 0.3, 0.45, 0.7, 0.9]);
    let theta = vec![1.0, -0.5];
    let lambda = 0.2;
    let mut rng = stream(seed);
    let data0 = Dataset::new(x, DVector::zeros(5)).unwrap();
    let mut s = MixtureSampler::new(&data0, &code, pr, BackendKind::Dense).unwrap();
    let code_mean = s.design() * DVector::from_column_slice(&theta);
    let mut st = MixtureState {
        theta,
        lambda,
        alpha: Beta::new(pr.a0, pr.a0).unwrap().sample(&mut rng),
        k: Beta::new(pr.k_prior.0, pr.k_prior.1).unwrap().sample(&mut rng),
        gamma: Beta::new(pr.gamma_prior.0, pr.gamma_prior.1).unwrap().sample(&mut rng),
        delta: vec![0.0; 5],
        zeta: vec![false; 5],
    };
    st.zeta = (0..5).map(|_| rng.random::<f64>() >= st.alpha).collect();
    st.delta = s.refresh_unallocated(&MixtureState { zeta: vec![false; 5], ..st.clone() }, &mut rng).unwrap();
    let mut out: [Vec<f64>; 3] = Default::default();
    for t in 0..200_000 {
        let y = DVector::from_fn(5, |i, _| {
            code_mean[i] + if st.zeta[i] { st.delta[i] } else { 0.0 } + lambda * rng.sample::<f64, _>(StandardNormal)
        });
        s.set_response(y).unwrap();
        st.zeta = s.sample_zeta(&st, &mut rng).0;
        st.delta = s.sample_delta(&st, &mut rng).unwrap();
        st.alpha = sample_alpha(5, st.m(), pr.a0, &mut rng).unwrap();
        st.k = s.mh_step_k(&st, 1.2, &mut rng).unwrap().0;
        st.gamma = s.mh_step_gamma(&st, 1.2, &mut rng).unwrap().0;
        st.delta = s.refresh_unallocated(&st, &mut rng).unwrap();
        if t % 50 == 0 {
            out[0].push(st.alpha);
            out[1].push(st.k);
            out[2].push(st.gamma);
        }
    }
    let shapes = [(pr.a0, pr.a0), pr.k_prior, pr.gamma_prior];
    let mut prior_rng = stream(seed + 7);
    out.iter()
        .zip(shapes)
        .map(|(chain, (a, b))| {
            let prior: Vec<f64> = (0..chain.len()).map(|_| Beta::new(a, b).unwrap().sample(&mut prior_rng)).collect();
            ks_two_sample(chain, &prior).1
        })
        .collect()
}

fn c7_conditionals(_: &mut Cache) -> Outcome {
    let n = 9;
    let (data, code) = toy(n, 15);
    let pr = PriorConfig { k_prior: (2.0, 18.0), gamma_prior: (3.0, 5.0), ..Default::default() };
    let st = frozen(n);
    let y = data.y();
    let mut rng = stream(71);
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();

    let s = MixtureSampler::new(&data, &code, pr, BackendKind::Dense).unwrap();
    let g = s.design().clone();
    let gram_inv = (g.transpose() * &g).try_inverse().unwrap();
    let target = DVector::from_fn(n, |i, _| y[i] - if st.zeta[i] { st.delta[i] } else { 0.0 });

    // θ: N((GᵀG)⁻¹Gᵀ(y − ζ⊙δ), λ²(GᵀG)⁻¹)
    let mu = &gram_inv * g.transpose() * &target;
    let theta: Vec<Vec<f64>> = (0..DRAWS).map(|_| s.sample_theta(&st, &mut rng)).collect();
    let var: Vec<f64> = (0..3).map(|j| gram_inv[(j, j)] * st.lambda * st.lambda).collect();
    let (zm, zv) = z_scores(&theta, mu.as_slice(), &var);
    worst = worst.max(zm).max(zv);
    notes.push(format!("theta z {zm:.2}/{zv:.2}"));

    // λ²: inverse gamma with shape (n+m)/2 and scale half the residual plus
    // allocated-discrepancy quadratic forms
    let idx: Vec<usize> = (0..n).filter(|&i| st.zeta[i]).collect();
    let m = idx.len();
    let resid = &target - &g * DVector::from_column_slice(&st.theta);
    let c_a = corr_matrix(data.x(), st.gamma).unwrap().select(&idx);
    let d_a = DVector::from_iterator(m, idx.iter().map(|&i| st.delta[i]));
    let quad = (d_a.transpose() * c_a.clone().try_inverse().unwrap() * &d_a)[0];
    let shape = (n + m) as f64 / 2.0;
    let scale = 0.5 * (resid.norm_squared() + st.k * quad);
    let lam2: Vec<Vec<f64>> = (0..DRAWS).map(|_| vec![s.sample_lambda(&st, &mut rng).unwrap().powi(2)]).collect();
    let lm = scale / (shape - 1.0);
    let (zm, _) = z_scores(&lam2, &[lm], &[lm * lm / (shape - 2.0)]);
    worst = worst.max(zm);
    notes.push(format!("lambda z {zm:.2}"));

    // α: Beta(n − m + a0, m + a0)
    let (a, b) = ((n - m) as f64 + pr.a0, m as f64 + pr.a0);
    let alpha: Vec<Vec<f64>> = (0..DRAWS).map(|_| vec![sample_alpha(n, m, pr.a0, &mut rng).unwrap()]).collect();
    let (zm, zv) = z_scores(&alpha, &[a / (a + b)], &[a * b / ((a + b).powi(2) * (a + b + 1.0))]);
    worst = worst.max(zm).max(zv);
    notes.push(format!("alpha z {zm:.2}/{zv:.2}"));

    // δ at every site: Gaussian-process kriging from the allocated residuals
    let sigma2 = st.lambda * st.lambda / st.k;
    let c_full = corr_matrix(data.x(), st.gamma).unwrap().matrix * sigma2;
    let c_xa = DMatrix::from_fn(n, m, |i, j| c_full[(i, idx[j])]);
    let r_a = DVector::from_iterator(m, idx.iter().map(|&i| resid[i] + st.delta[i]));
    let k_aa = c_xa.select_rows(&idx) + DMatrix::identity(m, m) * (st.lambda * st.lambda);
    let k_inv = k_aa.try_inverse().unwrap();
    let d_mean = &c_xa * &k_inv * r_a;
    let d_cov = &c_full - &c_xa * &k_inv * c_xa.transpose();
    let d_var: Vec<f64> = (0..n).map(|i| d_cov[(i, i)]).collect();
    for kind in [BackendKind::Dense, BackendKind::Markov] {
        let sk = MixtureSampler::new(&data, &code, pr, kind).unwrap();
        let draws: Vec<Vec<f64>> = (0..DRAWS).map(|_| sk.sample_delta(&st, &mut rng).unwrap()).collect();
        let (zm, zv) = z_scores(&draws, d_mean.as_slice(), &d_var);
        worst = worst.max(zm).max(zv);
        notes.push(format!("delta[{kind:?}] z {zm:.2}/{zv:.2}"));
    }
    let moments_ok = worst <= 3.0;

    // MH ratios against dense densities in the original parameterization
    let mut ratio_err: f64 = 0.0;
    for kind in [BackendKind::Dense, BackendKind::Markov] {
        let sk = MixtureSampler::new(&data, &code, pr, kind).unwrap();
        for k_new in [0.05, 0.2, 0.61] {
            let oracle = dense_log_target(&data, &st, &pr, k_new, st.gamma) - dense_log_target(&data, &st, &pr, st.k, st.gamma);
            ratio_err = ratio_err.max((sk.log_accept_ratio_k(&st, k_new).unwrap() - oracle).abs());
        }
        for g_new in [0.02, 0.3, 0.85] {
            let oracle = dense_log_target(&data, &st, &pr, st.k, g_new) - dense_log_target(&data, &st, &pr, st.k, st.gamma);
            ratio_err = ratio_err.max((sk.log_accept_ratio_gamma(&st, g_new).unwrap() - oracle).abs());
        }
    }
    notes.push(format!("max MH log-ratio error {ratio_err:.1e}"));

    let p_values: Vec<f64> = [101, 202, 303].iter().flat_map(|&seed| geweke_p_values(seed)).collect();
    let p_min = p_values.iter().copied().fold(1.0, f64::min);
    notes.push(format!("Geweke min KS p {p_min:.3} over 3 seeds x (alpha, k, gamma)"));

    Outcome::new(moments_ok && ratio_err <= 1e-10 && p_min > 0.01, format!("max z {worst:.2} (need <= 3); {}", notes.join("; ")))
}

fn c8_linearization(_: &mut Cache) -> Outcome {
    // affine: central differences are exact up to rounding
    let affine = FnBlackBox::new(3, |k: &[f64]| {
        vec![1.0 + 2.0 * k[0] - k[1] + 0.5 * k[2], -3.0 + k[0] + 4.0 * k[1], 0.25 * k[0] + k[1] - 2.0 * k[2]]
    });
    let bx3 = ParamBox::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let j = finite_diff_jacobian(&affine, &bx3, &[0.1, -0.2, 0.3], None).unwrap();
    let exact = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 1.0, 4.0, 0.0, 0.25, 1.0, -2.0]);
    let affine_err = (j - exact).amax();

    // smooth: relative error and second-order convergence in the step
    let smooth = FnBlackBox::new(2, |k: &[f64]| {
        vec![k[0].sin() * k[1].exp(), k[0] * k[0] * k[1], (1.0 + k[0] + k[1] * k[1]).ln()]
    });
    let jac = |k: &[f64]| {
        let den = 1.0 + k[0] + k[1] * k[1];
        DMatrix::from_row_slice(
            3,
            2,
            &[
                k[0].cos() * k[1].exp(),
                k[0].sin() * k[1].exp(),
                2.0 * k[0] * k[1],
                k[0] * k[0],
                1.0 / den,
                2.0 * k[1] / den,
            ],
        )
    };
    let bx2 = ParamBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let k0 = [0.3, 0.6];
    let truth = jac(&k0);
    let rel = |steps: Option<&[f64]>| (finite_diff_jacobian(&smooth, &bx2, &k0, steps).unwrap() - &truth).amax() / truth.amax();
    let rel_default = rel(None);
    let coarse = rel(Some(&[2e-2, 2e-2]));
    let fine = rel(Some(&[1e-2, 1e-2]));
    let order = (coarse / fine).log2();

    // OLS recovers a zero-residual analytic minimizer
    let bb = FnBlackBox::new(2, |k: &[f64]| vec![k[0], k[1], k[0] * k[1], (k[0] - k[1]).exp()]);
    let k_star = [0.37, -0.42];
    let obs = bb.eval(&k_star).unwrap();
    let bxo = ParamBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let ols = ols_reference(&bb, &bxo, &obs, &OlsOptions::default()).unwrap();
    let ols_err = ols.k_hat.iter().zip(k_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    Outcome::new(
        affine_err <= 1e-10 && rel_default < 1e-4 && (1.8..=2.2).contains(&order) && ols_err <= 1e-4,
        format!(
            "affine Jacobian error {affine_err:.1e} (need <= 1e-10); smooth relative error {rel_default:.1e} (need < 1e-4); observed order {order:.2} (need 2); OLS argmin error {ols_err:.1e} (need <= 1e-4)"
        ),
    )
}

fn c9_bias_probabilities(_: &mut Cache) -> Outcome {
    let s = scenario_defaults("fig2").unwrap();
    let code = s.code();
    let n = 50;
    let x = unit_grid(n);
    let mut diffs = Vec::new();
    for seed in 0..10u64 {
        // fixed allocations drawn once from the mixture with weight one half
        let mut zrng = derive(9000 + seed, 1);
        let biased: Vec<bool> = (0..n).map(|_| zrng.random::<f64>() < 0.5).collect();
        let (y_full, delta) = simulate_m1(&code, &s.theta_star, s.lambda_star, s.k_star, 0.3, &x, 9000 + seed).unwrap();
        let y: Vec<f64> = (0..n).map(|i| if biased[i] { y_full[i] } else { y_full[i] - delta[i] }).collect();
        let data = Dataset::new(x.clone(), DVector::from_vec(y)).unwrap();
        let cfg = McmcConfig { seed, ..s.mcmc.clone() };
        let draws = run_chain(&data, &code, s.priors, &cfg).unwrap();
        let p = rao_blackwell_bias_prob(&draws, &data, &code).unwrap();
        let avg = |flag: bool| {
            let v: Vec<f64> = (0..n).filter(|&i| biased[i] == flag).map(|i| p[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        diffs.push(avg(true) - avg(false));
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let listing: Vec<String> = diffs.iter().map(|d| format!("{d:.3}")).collect();
    Outcome::new(mean >= 0.15, format!("mean probability gap biased - unbiased {mean:.3} (need >= 0.15); per seed {}", listing.join(" ")))
}

fn codeval_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_codeval"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn replay_all(dir: &Path) -> Result<usize, String> {
    fs::write(dir.join("study.kv"), "base = fig2\nsizes = 12\ngamma_stars = 0.1,0.5\nreplicates = 2\niters = 400\nburn_in = 50\n")
        .map_err(|e| e.to_string())?;
    fs::write(dir.join("box.csv"), "lower,upper\n0,2\n0,1\n").map_err(|e| e.to_string())?;
    fs::write(dir.join("obs.csv"), "x1,y\n0.1,3.2\n0.5,0.4\n0.9,1.6\n").map_err(|e| e.to_string())?;
    let runs: Vec<Vec<&str>> = vec![
        vec!["simulate", "--model", "m1", "--n", "10", "--seed", "4", "--out", "sim"],
        vec!["fit", "--data", "sim/data.csv", "--degree", "2", "--iters", "1500", "--burn-in", "200", "--out", "fit"],
        vec!["report", "--draws", "fit/draws.csv", "--data", "sim/data.csv", "--degree", "2", "--out", "rep"],
        vec!["oracle", "--data", "sim/data.csv", "--degree", "2", "--resolution", "16", "--out", "orc"],
        vec!["--jobs", "2", "experiment", "--scenario", "study.kv", "--out", "exp"],
        vec![
            "linearize", "--blackbox", "awk", "--blackbox-arg",
            "{ printf \"%.17g %.17g %.17g\\n\", 1+2*$1+$2, $1-$2, 3*$2+0.5*$1 }",
            "--box", "box.csv", "--observations", "obs.csv", "--out", "lin",
        ],
    ];
    for r in &runs {
        codeval_cli(dir, r)?;
    }
    for out in ["sim", "fit", "rep", "orc", "exp", "lin"] {
        codeval_cli(dir, &["replay", &format!("{out}/manifest.json"), "--out", &format!("replay-{out}")])?;
    }
    Ok(runs.len())
}

fn c10_determinism(cache: &mut Cache) -> Outcome {
    let mut serial = Vec::new();
    cache.fig2().write_aggregate_csv(&mut serial).unwrap();
    let parallel = run_scenario(&scenario_defaults("fig2").unwrap(), 8).expect("fig2 runs on 8 workers");
    let mut par = Vec::new();
    parallel.write_aggregate_csv(&mut par).unwrap();
    let same = serial == par;
    let dir = tempfile::tempdir().unwrap();
    let replay = replay_all(dir.path());
    Outcome::new(
        same && replay.is_ok(),
        format!(
            "fig2 aggregate CSV serial vs --jobs 8: {}; manifest replay: {}",
            if same { "identical" } else { "DIFFERENT" },
            match replay {
                Ok(k) => format!("{k} commands reproduced byte-for-byte"),
                Err(e) => e,
            }
        ),
    )
}

type Criterion = fn(&mut Cache) -> Outcome;

fn main() {
    let criteria: [(usize, &str, Criterion); 10] = [
        (1, "pure-code study, n=30", c1_fig1),
        (2, "correlation-length sweep, n=50", c2_fig2),
        (3, "sample-size sweep", c3_fig3),
        (4, "bias-corrected prediction, n=100", c4_fig4),
        (5, "sampler vs exact enumeration", c5_oracle),
        (6, "propriety witness", c6_propriety),
        (7, "conditional correctness", c7_conditionals),
        (8, "linearization", c8_linearization),
        (9, "bias probabilities on known subsets", c9_bias_probabilities),
        (10, "determinism", c10_determinism),
    ];
    let selected: Option<Vec<usize>> = std::env::var("CODEVAL_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut cache = Cache::default();
    let mut passed = 0;
    let mut run = 0;
    for (id, name, f) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut cache)))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                Outcome::new(false, format!("aborted: {}", msg.unwrap_or_default()))
            });
        run += 1;
        passed += outcome.pass as usize;
        println!(
            "criterion {id:>2} {}: {name} [{:.0} s] {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("acceptance: {passed}/{run} criteria passed");
}
