use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn codeval(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codeval")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn simulate(dir: &Path, model: &str, n: &str, out: &str) {
    let o = codeval(dir, &["simulate", "--model", model, "--n", n, "--seed", "11", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn version_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = codeval(dir.path(), &["--version"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "codeval");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "m0", "8", "sim");
    assert_eq!(code(&codeval(dir.path(), &["fit", "--data", "sim/data.csv", "--degree", "2", "--iters", "0"])), 1);
    assert_eq!(code(&codeval(dir.path(), &["fit", "--data", "sim/data.csv"])), 1);
    assert_eq!(code(&codeval(dir.path(), &["frobnicate"])), 1);
    fs::write(dir.path().join("bad.cfg"), "no_such_option = 3\n").unwrap();
    let o = codeval(dir.path(), &["--config", "bad.cfg", "fit", "--data", "sim/data.csv", "--degree", "2"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_option"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&codeval(dir.path(), &["fit", "--data", "missing.csv", "--degree", "1"])), 2);
    simulate(dir.path(), "m0", "20", "sim");
    let o = codeval(dir.path(), &["oracle", "--data", "sim/data.csv", "--degree", "2"]);
    assert_eq!(code(&o), 2);
    fs::write(dir.path().join("out_of_range.csv"), "x1,y\n0.5,1\n1.5,2\n2.5,3\n").unwrap();
    assert_eq!(code(&codeval(dir.path(), &["fit", "--data", "out_of_range.csv", "--degree", "1"])), 2);
}

#[test]
fn fit_is_reproducible_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "m1", "12", "sim");
    let fit = ["fit", "--data", "sim/data.csv", "--degree", "2", "--iters", "800", "--burn-in", "100", "--seed", "3"];
    let mut a: Vec<&str> = fit.to_vec();
    a.extend(["--out", "a"]);
    let mut b: Vec<&str> = fit.to_vec();
    b.extend(["--out", "b"]);
    assert_eq!(code(&codeval(d, &a)), 0);
    assert_eq!(code(&codeval(d, &b)), 0);
    for f in ["draws.csv", "report.json", "report.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["mcmc"], 3);
    assert_eq!(m["inputs"][0]["path"], "sim/data.csv");

    let o = codeval(d, &["replay", "a/manifest.json", "--out", "again"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // a tampered recorded digest is a replay mismatch
    let text = fs::read_to_string(d.join("a/manifest.json")).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"][0]["sha256"] = "00".into();
    fs::write(d.join("a/manifest.json"), m.to_string()).unwrap();
    assert_eq!(code(&codeval(d, &["replay", "a/manifest.json", "--out", "again2"])), 3);
}

#[test]
fn config_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "m0", "10", "sim");
    fs::write(d.join("run.cfg"), "degree = 2\niters = 400\nburn_in = 50\nseed = 1\nrandom_init = true\n").unwrap();
    let o = codeval(d, &["--config", "run.cfg", "fit", "--data", "sim/data.csv", "--seed", "7", "--out", "f"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("f/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["mcmc"], 7);
    let args: Vec<String> = serde_json::from_value(m["args"].clone()).unwrap();
    assert!(args.contains(&"--random-init".to_string()));
    assert!(!args.contains(&"--config".to_string()));
}

#[test]
fn report_rebuilds_from_saved_draws() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "m1", "10", "sim");
    let fit = ["fit", "--data", "sim/data.csv", "--degree", "2", "--iters", "500", "--burn-in", "50", "--out", "f"];
    assert_eq!(code(&codeval(d, &fit)), 0);
    let o = codeval(d, &["report", "--draws", "f/draws.csv", "--data", "sim/data.csv", "--degree", "2", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(d.join("f/report.csv")).unwrap(), fs::read(d.join("r/report.csv")).unwrap());
}

#[test]
fn oracle_crosscheck_agrees_with_the_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "m1", "7", "sim");
    let o = codeval(
        d,
        &["oracle", "--data", "sim/data.csv", "--degree", "1", "--resolution", "16", "--crosscheck", "--iters", "40000", "--burn-in", "2000", "--out", "o"],
    );
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(d.join("o/oracle.json")).unwrap()).unwrap();
    assert!(r["crosscheck_gap"].as_f64().unwrap() <= 0.03);
    // an impossible tolerance turns the same comparison into a failure
    let o = codeval(
        d,
        &["oracle", "--data", "sim/data.csv", "--degree", "1", "--resolution", "16", "--crosscheck", "--iters", "300", "--burn-in", "50", "--tolerance", "0", "--out", "o2"],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn experiment_tables_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.kv"), "base = fig2\nsizes = 10\ngamma_stars = 0.1,0.5\nreplicates = 3\niters = 300\nburn_in = 50\n").unwrap();
    assert_eq!(code(&codeval(d, &["experiment", "--scenario", "s.kv", "--out", "serial"])), 0);
    assert_eq!(code(&codeval(d, &["--jobs", "3", "experiment", "--scenario", "s.kv", "--out", "par"])), 0);
    for f in ["replicates.csv", "aggregate.csv", "failures.json"] {
        assert_eq!(fs::read(d.join("serial").join(f)).unwrap(), fs::read(d.join("par").join(f)).unwrap(), "{f}");
    }
    let o = codeval(d, &["experiment", "--scenario", "s.kv", "--timing", "--out", "timed"]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("timed/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["nondeterministic"][0], "replicates.csv");
    assert_eq!(code(&codeval(d, &["replay", "timed/manifest.json"])), 0);
    assert_eq!(code(&codeval(d, &["experiment", "--name", "fig9"])), 1);
}

#[test]
fn linearize_writes_a_fittable_regression() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut table = String::from("k1,k2,y1,y2,y3\n");
    for a in 0..3 {
        for b in 0..2 {
            let (a, b) = (a as f64, b as f64);
            table.push_str(&format!("{a},{b},{},{},{}\n", 1.0 + 2.0 * a + b, a - b, 3.0 * b + 0.5 * a));
        }
    }
    fs::write(d.join("table.csv"), table).unwrap();
    fs::write(d.join("obs.csv"), "x1,y\n10,3.2\n20,0.4\n30,1.6\n").unwrap();
    let o = codeval(d, &["linearize", "--table", "table.csv", "--observations", "obs.csv", "--out", "lin"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let design = fs::read_to_string(d.join("lin/design.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        design.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let exact = [[2.0, 1.0], [1.0, -1.0], [0.5, 3.0]];
    for (r, e) in rows.iter().zip(exact) {
        assert!((r[0] - e[0]).abs() < 1e-8 && (r[1] - e[1]).abs() < 1e-8, "{r:?}");
    }
    // inputs outside the unit interval were mapped onto it
    let data = fs::read_to_string(d.join("lin/linear_data.csv")).unwrap();
    assert!(data.lines().nth(1).unwrap().starts_with("0,"));
    let s: serde_json::Value = serde_json::from_slice(&fs::read(d.join("lin/surrogate.json")).unwrap()).unwrap();
    let k = s["surrogate"]["k_hat"].as_array().unwrap();
    assert!((k[0].as_f64().unwrap() - 0.875_728_155_3).abs() < 1e-6);
    assert!((k[1].as_f64().unwrap() - 0.400_970_873_8).abs() < 1e-6);
}
