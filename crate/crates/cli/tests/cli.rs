use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use concealed_agg::basestation::parse_report_line;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_concealed-agg"));
    c.env_remove("CONCEALED_AGG_SEED");
    c
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out").arg(dir).arg("--no-timestamp").output().unwrap()
}

fn report_fields(dir: &Path) -> Vec<std::collections::BTreeMap<&'static str, String>> {
    fs::read_to_string(dir.join("report.txt"))
        .unwrap()
        .lines()
        .map(|l| parse_report_line(l).unwrap())
        .collect()
}

#[test]
fn honest_scenario_passes_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("honest.scn");
    let out = run_in(dir.path(), &["run", scn.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = report_fields(dir.path());
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r["integrity"] == "passed" && r["n_participants"] == "40"));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("round,messages,bytes,seed_regens,probes"));
    assert!(csv.lines().last().unwrap().starts_with("total,400,"));
}

#[test]
fn forging_scenario_lists_outliers() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("forge.scn");
    let out = run_in(dir.path(), &["run", scn.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rows = report_fields(dir.path());
    assert_eq!(rows[0]["integrity"], "passed");
    for r in &rows[1..] {
        assert_eq!(r["integrity"], "attested");
        assert_eq!(r["outliers"], "6,9");
    }
}

#[test]
fn identical_invocations_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let scn = scenarios().join("forge.scn");
    for d in [&a, &b] {
        assert!(run_in(d.path(), &["run", scn.to_str().unwrap(), "--audit-prob", "0.3"]).status.success());
    }
    for f in ["report.txt", "metrics.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn timestamp_is_a_leading_comment() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("honest.scn");
    let out = bin()
        .args(["run", scn.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.starts_with("# generated "));
    assert_eq!(report.lines().count(), 6);
}

#[test]
fn flags_override_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenarios().join("honest.scn");
    let topo = scenarios().join("path.topo");
    let out = run_in(
        dir.path(),
        &[
            "run",
            scn.to_str().unwrap(),
            "--topology",
            topo.to_str().unwrap(),
            "--rounds",
            "2",
            "--function",
            "mean",
            "--force-attest",
        ],
    );
    assert!(out.status.success());
    let rows = report_fields(dir.path());
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r["function"], "mean");
        assert_eq!(r["n_participants"], "6");
        // Forced attestation on a path probes only the first node.
        assert_eq!(r["probes"], "1");
        let v: f64 = r["value"].parse().unwrap();
        assert!((0.0..=1000.0).contains(&v));
    }
}

#[test]
fn seed_env_overrides_flag() {
    let scn = scenarios().join("honest.scn");
    let go = |flag: &str, env: Option<&str>| {
        let dir = tempfile::tempdir().unwrap();
        let mut c = bin();
        c.args(["run", scn.to_str().unwrap(), "--seed", flag, "--no-timestamp", "--out"]).arg(dir.path());
        if let Some(e) = env {
            c.env("CONCEALED_AGG_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
        fs::read_to_string(dir.path().join("report.txt")).unwrap()
    };
    assert_eq!(go("1", Some("2")), go("2", None));
    assert_ne!(go("1", None), go("2", None));
}

#[test]
fn malformed_scenario_exits_2_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.scn");
    fs::write(&scn, "generator path 4\nrounds 2\ncompromise 3 levitate\n").unwrap();
    let out = run_in(dir.path(), &["run", scn.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.scn:3:"), "{err}");
    assert!(!dir.path().join("report.txt").exists());

    fs::write(&scn, "generator path 4\ncompromise 12 noncommit\n").unwrap();
    let out = run_in(dir.path(), &["run", scn.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.scn:2:"));

    let topo = dir.path().join("bad.topo");
    fs::write(&topo, "nodes 3\nedge 0 1\nedge 1 x\n").unwrap();
    let out = run_in(dir.path(), &["run", scn.to_str().unwrap(), "--topology", topo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.topo:3:"));
}

#[test]
fn scaling_rows() {
    let out = bin().args(["scaling", "--sizes", "16", "--trials", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,trials,mean_probes,max_probes,mean_depth,mean_messages");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("16,1,"));
}

#[test]
fn scaling_rejects_zero() {
    for args in [["--sizes", "0", "--trials", "3"], ["--sizes", "8", "--trials", "0"]] {
        let out = bin().arg("scaling").args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2));
    }
}

#[test]
fn selftest_passes_and_catches_injected_fault() {
    let ok = bin().args(["selftest", "--trials", "100"]).output().unwrap();
    assert!(ok.status.success());
    let again = bin().args(["selftest", "--trials", "100"]).output().unwrap();
    assert_eq!(ok.stdout, again.stdout);

    let bad = bin()
        .args(["selftest", "--trials", "100", "--inject-fault", "seed-arithmetic"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("diffusion-homomorphism"));
}
