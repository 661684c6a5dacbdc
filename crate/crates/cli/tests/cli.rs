//! End-to-end checks of the command-line exit codes.

use std::fs;
use std::process::Command;

fn ltfair() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ltfair"))
}

const TINY: &str = r#"env = "lending"
[train]
algorithm = "sellf"
notion = "eo"
beta1 = 1.0
beta2 = 0.1
total_steps = 512
n_steps = 256
ppo_epochs = 1
pool_size = 100
seed = 3
"#;

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    fs::write(&cfg, format!("out_dir = {:?}\n{TINY}", out)).unwrap();
    let st = ltfair().arg("train").arg(&cfg).status().unwrap();
    assert!(st.success());
    for f in [
        "policy.ckpt",
        "value.ckpt",
        "predictor.ckpt",
        "manifest.toml",
        "metrics.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = ltfair()
        .args(["evaluate", "--seeds", "2", "--horizon", "200"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn invalid_config_exits_2_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, TINY.replace("beta1 = 1.0", "beta1 = -1.0")).unwrap();
    let o = ltfair().arg("train").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta1"));
}

#[test]
fn missing_table_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let text = format!(
        "env_path = {:?}\nout_dir = {:?}\n{TINY}",
        dir.path().join("nowhere"),
        dir.path().join("o")
    );
    fs::write(&cfg, text).unwrap();
    assert_eq!(
        ltfair().arg("train").arg(&cfg).status().unwrap().code(),
        Some(3)
    );
}

#[test]
fn verify_passes() {
    let o = ltfair()
        .args(["verify", "--instances", "20"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}

#[test]
fn empty_results_table_is_a_selection_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    fs::write(&path, "# ltfair-sweep v1\nrun_id,algorithm,beta1,beta2,seed,selection_disparity,true_disparity,reward,run_dir\n")
        .unwrap();
    assert_eq!(
        ltfair().arg("select").arg(&path).status().unwrap().code(),
        Some(2)
    );
}
