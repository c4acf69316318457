use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pmpcert(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmpcert"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const DISCOUNTED_LQ: &str = "\
[problem]
name = discounted-lq
x0 = 1
[dynamics]
phi1 = u1
[objective]
f = (x1^2 + u1^2)/2
omega = exp_decay 1
[space]
nu = exp_decay 1
[controls]
u1 = (-inf, inf)
[candidate]
x1 = exp(-k*t)
u1 = -k*exp(-k*t)
[params]
k = (sqrt(5) - 1)/2
";

#[test]
fn regulator_verifies_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmpcert(&["verify", "--example", "regulator", "--mode", "strong"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "certificate.csv");
    assert!(csv.starts_with("problem,name,premise,verdict,residual,tolerance\n"));
    assert!(csv.contains("regulator,transversality_decay,pass,pass,"));
    let report = read(dir.path(), "report.txt");
    assert!(report.contains("tool       = pmpcert "));
    assert!(report.contains("tolerances = "));
    assert!(report.contains("match     = yes"));
    assert!(dir.path().join("adjoint_regulator.csv").exists());
    assert!(dir.path().join("state_regulator.csv").exists());
}

#[test]
fn halkin_pathology_matches_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmpcert(&["verify", "--example", "halkin-no-discount"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let report = read(dir.path(), "report.txt");
    assert!(report.contains("status    = assumptions-violated"));
    assert!(report.lines().any(|l| l.starts_with("B2 ") && l.contains("fail")), "{report}");
    let csv = read(dir.path(), "certificate.csv");
    assert!(csv.contains("transversality_decay,pass,fail"));
}

#[test]
fn log_decay_branches() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmpcert(&["verify", "--example", "log-decay", "--rho", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(read(dir.path(), "report.txt").contains("convergence = divergent"));
    let o = pmpcert(&["verify", "--example", "log-decay", "--rho", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let report = read(dir.path(), "report.txt");
    assert!(report.contains("status    = certified"));
    assert!(report.contains("mode       = weak"));
}

#[test]
fn needle_writes_family_and_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmpcert(&["needle", "--interval", "0", "1", "--m", "2", "--N", "64"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let family = read(dir.path(), "family.csv");
    assert!(family.starts_with("i,lo,hi\n"));
    // 2 families with one interval in each of 64 subintervals.
    assert_eq!(family.lines().count(), 1 + 2 * 64);
    let est = read(dir.path(), "estimates.csv");
    assert_eq!(est.lines().count(), 1 + 6);
    assert!(est.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn reports_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["verify", "--example", "log-investment", "--tmax", "30", "--grid-cells", "600"];
    assert_eq!(pmpcert(&args, a.path()).status.code(), Some(0));
    assert_eq!(pmpcert(&args, b.path()).status.code(), Some(0));
    for f in ["report.txt", "certificate.csv", "adjoint_log-investment.csv", "state_log-investment.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn problem_file_runs_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("lq.txt");
    fs::write(&file, DISCOUNTED_LQ).unwrap();
    let f = file.to_str().unwrap();
    for cmd in ["verify", "audit", "solve"] {
        let out = dir.path().join(cmd);
        let o = pmpcert(&[cmd, "--problem", f, "--gamma", "0.5", "--tmax", "30", "--grid-cells", "300"], &out);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("report.txt").exists());
    }
    let report = read(&dir.path().join("verify"), "report.txt");
    assert!(report.contains("status    = certified"), "{report}");
    let solve = read(&dir.path().join("solve"), "report.txt");
    assert!(solve.contains("route deviation"));
    assert!(dir.path().join("solve/adjoint_backward_discounted-lq.csv").exists());
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmpcert(&["verify", "--example", "no-such-example"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown example"));

    let file = dir.path().join("lq.txt");
    fs::write(&file, DISCOUNTED_LQ).unwrap();
    let o = pmpcert(&["verify", "--problem", file.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--gamma"));

    let o = pmpcert(&["verify", "--example", "weibull-nash", "--param", "alpha=0.1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn audit_of_weibull_nash_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmpcert(&["audit", "--example", "weibull-nash"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = read(dir.path(), "audit.csv");
    assert!(csv.contains("weibull-nash-player1,A2,pass"));
    assert!(dir.path().join("majorant_weibull-nash-player2.csv").exists());
}
