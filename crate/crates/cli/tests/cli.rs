use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_periodmc");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("PERIODMC_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulate(dir: &Path, genes: &str) {
    let out = run(dir, &["simulate", "--genes", genes, "--grid", "0:10:12", "--grid", "3:12:10", "--out", "sim"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

const SHORT: [&str; 4] = ["--iterations", "60", "--burn-in", "20"];

fn fit(dir: &Path, extra: &[&str], out_dir: &str) -> Output {
    let mut args = vec!["fit", "--matrix", "sim/matrix.tsv", "--out", out_dir];
    args.extend(SHORT);
    args.extend(extra);
    run(dir, &args)
}

#[test]
fn preprocess_without_steps_reproduces_canonical_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "6");
    let out = run(tmp.path(), &["preprocess", "--input", "sim/matrix.tsv", "--out", "pre"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(tmp.path().join("pre/matrix.tsv")).unwrap(),
        fs::read(tmp.path().join("sim/matrix.tsv")).unwrap()
    );
    assert_eq!(fs::read_to_string(tmp.path().join("pre/removed.tsv")).unwrap().lines().count(), 1);
}

#[test]
fn duplicate_observation_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("dup.tsv"),
        "gene\texperiment\ttime\tvalue\ng1\te1\t0\t1.0\ng1\te1\t0\t2.0\ng1\te1\t5\t0.5\n",
    )
    .unwrap();
    let out = run(tmp.path(), &["preprocess", "--input", "dup.tsv", "--out", "pre"]);
    assert_eq!(code(&out), 1);
    assert!(!tmp.path().join("pre/matrix.tsv").exists());
}

#[test]
fn several_inputs_need_averaging() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "4");
    let two = ["preprocess", "--input", "sim/matrix.tsv", "--input", "sim/matrix.tsv"];
    let out = run(tmp.path(), &[&two[..], &["--out", "a"]].concat());
    assert_eq!(code(&out), 1);
    let out = run(tmp.path(), &[&two[..], &["--average-replicates", "--out", "b"]].concat());
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(tmp.path().join("b/matrix.tsv")).unwrap(),
        fs::read(tmp.path().join("sim/matrix.tsv")).unwrap()
    );
}

#[test]
fn fit_outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "8");
    assert_eq!(code(&fit(tmp.path(), &["--seed", "9"], "one")), 0);
    let out = run(
        tmp.path(),
        &[&["--threads", "3"][..], &["fit", "--matrix", "sim/matrix.tsv", "--seed", "9", "--out", "three"], &SHORT].concat(),
    );
    assert_eq!(code(&out), 0);
    for file in ["states.tsv", "mode.tsv", "log_posterior.tsv", "acceptance.tsv", "residual_acf.tsv", "config.txt"] {
        assert_eq!(
            fs::read(tmp.path().join("one").join(file)).unwrap(),
            fs::read(tmp.path().join("three").join(file)).unwrap(),
            "{file} differs"
        );
    }
    assert!(tmp.path().join("one/manifest.tsv").exists());
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "4");
    fs::write(tmp.path().join("run.conf"), "iterations = 40\nburn_in = 10\nseed = 3\n").unwrap();
    let out = run(
        tmp.path(),
        &["--config", "run.conf", "fit", "--matrix", "sim/matrix.tsv", "--seed", "4", "--out", "f"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lp = fs::read_to_string(tmp.path().join("f/log_posterior.tsv")).unwrap();
    assert_eq!(lp.lines().count(), 41);
    let cfg = fs::read_to_string(tmp.path().join("f/config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l.replace(' ', "") == "seed=4"), "{cfg}");
}

#[test]
fn control_requires_a_real_fit() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "4");
    let out = run(tmp.path(), &["control", "--matrix", "sim/matrix.tsv", "--real", "missing", "--out", "c"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("periodmc fit"));
}

#[test]
fn pipeline_produces_report_and_rejects_foreign_control() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "6");
    assert_eq!(code(&fit(tmp.path(), &[], "real")), 0);
    assert_eq!(code(&fit(tmp.path(), &["--model", "m0"], "null")), 0);
    let out = run(
        tmp.path(),
        &[&["control", "--matrix", "sim/matrix.tsv", "--real", "real", "--out", "ctl"][..], &SHORT].concat(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("ctl/variance_reduction.tsv").exists());
    let report = ["report", "--matrix", "sim/matrix.tsv", "--real", "real", "--null", "null", "--fpr", "0.2"];
    let out = run(tmp.path(), &[&report[..], &["--control", "ctl", "--out", "rep"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tsv = fs::read_to_string(tmp.path().join("rep/report.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 7);
    for file in ["intersection.tsv", "heatmap.tsv", "order.tsv", "thresholds.tsv", "manifest.tsv"] {
        assert!(tmp.path().join("rep").join(file).exists(), "{file}");
    }

    // A control fitted on a different gene universe must be refused.
    fs::create_dir(tmp.path().join("other")).unwrap();
    let out = run(tmp.path(), &["simulate", "--genes", "5", "--grid", "0:10:12", "--grid", "3:12:10", "--out", "other"]);
    assert_eq!(code(&out), 0);
    let out = run(
        tmp.path(),
        &[&["fit", "--matrix", "other/matrix.tsv", "--out", "ofit"][..], &SHORT].concat(),
    );
    assert_eq!(code(&out), 0);
    let out = run(
        tmp.path(),
        &[&["control", "--matrix", "other/matrix.tsv", "--real", "ofit", "--out", "octl"][..], &SHORT].concat(),
    );
    assert_eq!(code(&out), 0);
    let out = run(tmp.path(), &[&report[..], &["--control", "octl", "--out", "bad"]].concat());
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(tmp.path(), &["fit", "--bogus"])), 1);
    assert_eq!(code(&run(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&run(tmp.path(), &["fit", "--matrix", "absent.tsv", "--out", "x"])), 2);
}
