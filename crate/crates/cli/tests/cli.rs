use std::path::Path;
use std::process::{Command, Output};

use consensus_lp::{parse_problem, solve_reference, OracleStatus, SolveReport, SolveStatus};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_consensus-lp"));
    cmd.env_remove("CONSENSUS_LP_THREADS");
    cmd
}

fn exec(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn gen(dir: &Path, name: &str, n: usize, p: usize, q: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = exec(bin().args(["gen", "--n", &n.to_string(), "--p", &p.to_string(), "--q", &q.to_string()])
        .args(["--seed", &seed.to_string(), "--out"])
        .arg(&path));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_writes_a_feasible_instance_and_reports_the_construction_point() {
    let dir = TempDir::new().unwrap();
    let out = exec(bin().args(["gen", "--n", "6", "--p", "4", "--q", "2", "--seed", "7", "--out"]).arg(dir.path().join("p.json")));
    assert_eq!(code(&out), 0);
    assert!(out.stderr.is_empty());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("x0 = [") && stdout.contains("margin = ["));

    let spec = parse_problem(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!((spec.n, spec.p(), spec.q()), (6, 4, 2));
    assert_eq!(solve_reference(&spec).unwrap().status, OracleStatus::Optimal);
}

#[test]
fn gen_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.json", 6, 4, 2, 7);
    let b = gen(dir.path(), "b.json", 6, 4, 2, 7);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn gen_rejects_more_equalities_than_variables() {
    let dir = TempDir::new().unwrap();
    let out = exec(bin().args(["gen", "--q", "10", "--n", "3", "--out"]).arg(dir.path().join("x.json")));
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn solve_then_check_on_the_seed_seven_instance() {
    let dir = TempDir::new().unwrap();
    let problem = gen(dir.path(), "p.json", 6, 4, 2, 7);
    let (report, trace) = (dir.path().join("r.json"), dir.path().join("t.csv"));
    // Ascent multiplier steps throughout; the default descent steps stall.
    let out = exec(bin().arg("solve").arg("--problem").arg(&problem).args(["--N", "2", "--M", "2", "--ascent-phase-iters", "1000000"])
        .arg("--out").arg(&report).arg("--trace").arg(&trace));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
    let r = SolveReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    let rows = std::fs::read_to_string(&trace).unwrap().lines().count();
    assert_eq!(rows, r.iterations + 1);

    let out = exec(bin().arg("check").arg("--problem").arg(&problem).arg("--report").arg(&report));
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("f* = ") && stdout.contains("within") && stdout.contains("kkt residual"));
}

#[test]
fn max_iters_run_exits_two_and_fails_the_check() {
    let dir = TempDir::new().unwrap();
    let problem = gen(dir.path(), "p.json", 6, 4, 2, 7);
    let report = dir.path().join("r.json");
    let out = exec(bin().arg("solve").arg("--problem").arg(&problem).args(["--N", "2", "--max-iters", "5", "--out"]).arg(&report));
    assert_eq!(code(&out), 2);
    let out = exec(bin().arg("check").arg("--problem").arg(&problem).arg("--report").arg(&report));
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8(out.stdout).unwrap().contains("exceeded"));
}

#[test]
fn rate_check_lands_in_the_report() {
    let dir = TempDir::new().unwrap();
    let problem = gen(dir.path(), "p.json", 5, 3, 1, 3);
    let out = exec(bin().arg("solve").arg("--problem").arg(&problem)
        .args(["--N", "2", "--penalty-mode", "consensus-only", "--rate-check", "--max-iters", "300"]));
    assert!(matches!(code(&out), 0 | 2));
    let r = SolveReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let check = r.rate_check.expect("certificate requested");
    assert!(check.constant.is_finite());
    assert_eq!(check.holds, check.violations.is_empty());
}

#[test]
fn rate_check_is_refused_in_full_penalty_mode() {
    let dir = TempDir::new().unwrap();
    let problem = gen(dir.path(), "p.json", 4, 2, 1, 1);
    let out = exec(bin().arg("solve").arg("--problem").arg(&problem).arg("--rate-check"));
    assert_eq!(code(&out), 1);
}

#[test]
fn thread_override_gives_the_same_report() {
    let dir = TempDir::new().unwrap();
    let problem = gen(dir.path(), "p.json", 8, 6, 2, 11);
    let mut reports = Vec::new();
    for threads in ["1", "2", "0"] {
        let out = exec(bin().env("CONSENSUS_LP_THREADS", threads).arg("solve").arg("--problem").arg(&problem)
            .args(["--N", "4", "--M", "2", "--max-iters", "200"]));
        assert_eq!(code(&out), 2);
        let mut r = SolveReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
        r.trace.iter_mut().for_each(|t| t.wall_time_us = 0);
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);

    let out = exec(bin().env("CONSENSUS_LP_THREADS", "many").arg("solve").arg("--problem").arg(&problem));
    assert_eq!(code(&out), 1);
}

#[test]
fn infeasible_row_and_inner_failure_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    let spec = consensus_lp::ProblemSpec::new(
        vec![1.0],
        consensus_lp::AffineSystem::new(vec![vec![1.0]], vec![1.0]),
        consensus_lp::AffineSystem::empty(),
        vec![0.0],
        vec![1.0],
    )
    .unwrap();
    std::fs::write(&bad, spec.to_json()).unwrap();
    let out = exec(bin().arg("solve").arg("--problem").arg(&bad).args(["--max-iters", "50"]));
    assert_eq!(code(&out), 3);

    let problem = gen(dir.path(), "p.json", 8, 6, 4, 2);
    let out = exec(bin().arg("solve").arg("--problem").arg(&problem).args(["--N", "2", "--subqp-max-sweeps", "1"]));
    assert_eq!(code(&out), 4);
}

#[test]
fn missing_problem_and_oracle_cap_exit_one() {
    let dir = TempDir::new().unwrap();
    let out = exec(bin().args(["solve", "--problem"]).arg(dir.path().join("missing.json")));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8(out.stderr).unwrap().contains("missing.json"));

    let big = gen(dir.path(), "big.json", 200, 10, 0, 1);
    let report = dir.path().join("r.json");
    let out = exec(bin().arg("solve").arg("--problem").arg(&big).args(["--max-iters", "2", "--out"]).arg(&report));
    assert_eq!(code(&out), 2);
    let out = exec(bin().arg("check").arg("--problem").arg(&big).arg("--report").arg(&report));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8(out.stderr).unwrap().contains("over oracle cap"));
}

#[test]
fn help_lists_defaults_and_bad_flags_exit_one() {
    let out = exec(bin().args(["solve", "--help"]));
    assert_eq!(code(&out), 0);
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--rho", "--alpha-w", "--sigma0", "--tau0", "--gamma0", "--dual-bound", "--tol-residual", "--tol-merit", "--max-iters", "--subqp-tol", "--subqp-max-sweeps", "--ascent-phase-iters", "--prox-schedule", "--penalty-mode"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert!(help.contains("[default: 50000]") && help.contains("[default: 0.000001]"));
    assert_eq!(code(&exec(bin().args(["solve", "--bogus"]))), 1);
}
