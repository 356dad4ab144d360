use codeval::linearize::*;
use codeval::model::{unit_grid, Dataset, PriorConfig};
use codeval::report::posterior_summaries;
use codeval::sampler::{run_chain, McmcConfig};
use nalgebra::DVector;

fn awk_box() -> CommandBlackBox {
    CommandBlackBox::new(
        "awk",
        vec!["{ printf \"%.17g %.17g %.17g\\n\", 2*$1 + $2, $1 - 3*$2 + 1, 0.5*$1 }".into()],
        2,
    )
}

#[test]
fn subprocess_black_box_round_trips_a_batch() {
    let bb = awk_box();
    let out = bb.eval_many(&[vec![1.0, 2.0], vec![-0.5, 0.25], vec![0.0, 0.0]]).unwrap();
    assert_eq!(out, vec![vec![4.0, -4.0, 0.5], vec![-0.75, -0.25, -0.25], vec![0.0, 1.0, 0.0]]);
    let bx = ParamBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let jac = finite_diff_jacobian(&bb, &bx, &[0.2, -0.3], None).unwrap();
    let exact = nalgebra::DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 1.0, -3.0, 0.5, 0.0]);
    assert!((jac - exact).amax() < 1e-10);
}

#[test]
fn failing_subprocess_is_reported() {
    let bb = CommandBlackBox::new("sh", vec!["-c".into(), "exit 3".into()], 1);
    assert!(bb.eval(&[0.0]).is_err());
    let missing = CommandBlackBox::new("/nonexistent/model", vec![], 1);
    assert!(missing.eval(&[0.0]).is_err());
}

/// An exactly affine code fitted to data it generated leaves nothing for the
/// discrepancy to explain.
#[test]
fn affine_surrogate_feeds_a_clean_mixture_fit() {
    let n = 16;
    let bb = FnBlackBox::new(2, move |k: &[f64]| {
        (0..n).map(|s| {
            let q = (s + 1) as f64 / n as f64;
            3.0 + k[0] * q + k[1] * q * q
        })
        .collect()
    });
    let truth = [1.5, -0.8];
    // tiny deterministic perturbation keeps the noise scale away from zero
    let h: Vec<f64> = bb.eval(&truth).unwrap().iter().enumerate().map(|(i, v)| v + 1e-3 * ((i * 7 % 5) as f64 - 2.0)).collect();
    let bx = ParamBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
    let (sur, _) = linearize(&bb, &bx, &h, &OlsOptions::default(), None).unwrap();
    let (code, response) = to_linear_code(&sur, &[0, 1], &h).unwrap();
    // the constant output offset cancels in the response
    let data = Dataset::new(unit_grid(n), DVector::from_vec(response)).unwrap();
    let cfg = McmcConfig { iters: 6000, burn_in: 1000, seed: 4, ..Default::default() };
    let draws = run_chain(&data, &code, PriorConfig::default(), &cfg).unwrap();
    for s in posterior_summaries(&draws).unwrap().iter().filter(|s| s.name.starts_with("delta_")) {
        assert!(s.mean.abs() < 3.0 * s.sd, "{s:?}");
    }
    let theta = [draws.mean(|s| s.theta[0]), draws.mean(|s| s.theta[1])];
    assert!((theta[0] - truth[0]).abs() < 0.05 && (theta[1] - truth[1]).abs() < 0.05, "{theta:?}");
}
