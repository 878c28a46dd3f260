use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bondsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bondsim"))
        .args(args)
        .output()
        .expect("spawn bondsim")
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SHORT: &str = r#"
name = "short"
duration_s = 5
warmup_s = 1
drain_s = 1

[[services]]
kind = "voip"
src = "server"
dst = "client1"

[[services]]
kind = "data"
src = "server"
dst = "client1"
total_bytes = 2000000
"#;

#[test]
fn validates_every_shipped_scenario() {
    let mut n = 0;
    for entry in fs::read_dir(scenarios_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let out = bondsim(&["validate", "--scenario", p.to_str().unwrap()]);
            assert!(
                out.status.success(),
                "{}: {}",
                p.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.toml", "name = \"x\"\nbogus = 3\n");
    let out = bondsim(&["validate", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn semantic_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.toml",
        "[[failures]]\ntarget = \"r1-r3\"\naction = \"CUT\"\nat_s = 3\n",
    );
    let out = bondsim(&["validate", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("r1-r3"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(bondsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bondsim(&["run", "--mode", "triple"]).status.code(), Some(1));
    assert_eq!(bondsim(&["validate"]).status.code(), Some(1));
    assert_eq!(bondsim(&["--help"]).status.code(), Some(0));
    assert_eq!(bondsim(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_file_exits_one() {
    let out = bondsim(&["validate", "--scenario", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "short.toml", SHORT);
    let out_dir = dir.path().join("out");
    let out = bondsim(&[
        "run",
        "--scenario",
        p.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        "single",
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("short_single_link.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "# seed: 9"));
    assert!(csv.contains("# qos"));
    assert!(csv.contains("scenario,mode,service,delay_ms,jitter_ms,throughput_mbps,loss_pct"));
    assert!(out_dir.join("short_single_link_summary.txt").exists());
}

#[test]
fn run_is_reproducible_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "short.toml", SHORT);
    let mut csvs = Vec::new();
    for k in 0..2 {
        let o = dir.path().join(format!("o{k}"));
        let out = bondsim(&["run", "--scenario", p.to_str().unwrap(), "--out", o.to_str().unwrap()]);
        assert!(out.status.success());
        csvs.push(fs::read(o.join("short_bonded.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn compare_writes_both_modes_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "short.toml", SHORT);
    let o = dir.path().join("o");
    let out = bondsim(&["compare", "--scenario", p.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["short_bonded.csv", "short_single_link.csv", "short_compare.csv"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("# jitter"), "{stdout}");
}

#[test]
fn batch_writes_cell_and_trial_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "fo.toml",
        "name = \"fo\"\nservices = []\n[failover]\nlinks = 1\ncut_window_s = [2, 3]\nobserve_after_cut_s = 2\n",
    );
    let o = dir.path().join("o");
    let out = bondsim(&[
        "batch",
        "--scenario",
        p.to_str().unwrap(),
        "--trials",
        "1",
        "--out",
        o.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = fs::read_to_string(o.join("fo_bonded_failover1.csv")).unwrap();
    let rows = cells.lines().filter(|l| l.starts_with("net")).count();
    assert_eq!(rows, 16);
    assert!(cells.lines().any(|l| l.starts_with("mean,")));
    assert!(o.join("fo_bonded_failover1_trials.csv").exists());
}
