use std::fs;
use std::path::{Path, PathBuf};

use gridmpc::cli::{run, sha256_hex, RunManifest};
use gridmpc::scenario::fixture;
use serde_json::Value;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("gridmpc").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the bundled 30-bus case and the first `instants` of its profile.
fn inputs(dir: &Path, instants: usize) -> (PathBuf, PathBuf) {
    let case = dir.join("case30.m");
    fs::write(&case, fixture::CASE30).unwrap();
    let prof = dir.join("profiles.csv");
    let text: String = fixture::PROFILES30
        .lines()
        .enumerate()
        .filter(|(k, l)| *k == 0 || l.split(',').next().unwrap().parse::<usize>().unwrap() < instants)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    fs::write(&prof, text).unwrap();
    (case, prof)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn uncontrolled_run_writes_every_artifact() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 96);
    let out = d.path().join("none");
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", s(&case), "--profiles", s(&prof), "--out", s(&out)]), 0);
    let volts = fs::read_to_string(out.join("voltages.csv")).unwrap();
    let mut rows = volts.lines();
    assert_eq!(rows.next(), Some("t,bus,V,theta"));
    assert_eq!(rows.count(), 30 * 96);
    assert!(out.join("controls.csv").exists());
    let sum = summary(&out);
    assert!(sum["min_voltage"].as_f64().unwrap() < 0.95, "{sum}");
    assert!(sum["admm"].is_null());

    let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.inputs.len(), 2);
    assert_eq!(m.inputs[0].sha256, sha256_hex(fixture::CASE30.as_bytes()));
    m.verify_inputs().unwrap();
    assert_eq!(m.config["mode"], "none");
}

#[test]
fn distributed_run_meets_the_stopping_rule_every_instant() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 6);
    let out = d.path().join("d3");
    let code = cli(&[
        "simulate", "--mode", "d3mpc", "--rho", "100", "--tol", "3.5e-5", "--case", s(&case), "--profiles", s(&prof),
        "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let sum = summary(&out);
    let admm = &sum["admm"];
    assert_eq!(admm["solves"].as_u64(), Some(5), "{sum}");
    assert_eq!(admm["converged"].as_u64(), Some(5));
    assert!(admm["max_final_residual"].as_f64().unwrap() <= 3.5e-5);
    assert!(out.join("estimates.csv").exists());
}

#[test]
fn comparing_a_run_with_itself_gives_zero() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 8);
    let out = d.path().join("cmpc");
    assert_eq!(cli(&["simulate", "--mode", "cmpc", "--case", s(&case), "--profiles", s(&prof), "--out", s(&out)]), 0);
    assert_eq!(cli(&["compare", s(&out), s(&out)]), 0);
    let dev = fs::read_to_string(out.join("deviations.csv")).unwrap();
    assert_eq!(dev.lines().count(), 1 + 30 * 8);
    assert!(dev.lines().skip(1).all(|l| l.ends_with(",0")), "{dev}");
}

#[test]
fn mismatched_runs_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 4);
    let sub = d.path().join("x");
    fs::create_dir(&sub).unwrap();
    let (_, short) = inputs(&sub, 3);
    let a = d.path().join("a");
    let b = d.path().join("b");
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", s(&case), "--profiles", s(&prof), "--out", s(&a)]), 0);
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", s(&case), "--profiles", s(&short), "--out", s(&b)]), 0);
    assert_eq!(cli(&["compare", s(&a), s(&b)]), 1);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 2);
    let out = d.path().join("o");
    assert_eq!(cli(&["simulate", "--mode", "cmpcX", "--case", s(&case), "--profiles", s(&prof), "--out", s(&out)]), 1);
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", "/nonexistent.m", "--profiles", s(&prof), "--out", s(&out)]), 1);
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", s(&case), "--profiles", s(&prof), "--eps=-1", "--out", s(&out)]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    let bad = d.path().join("bad.csv");
    fs::write(&bad, "t,bus,Pg\n0,1,0\n").unwrap();
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", s(&case), "--profiles", s(&bad), "--out", s(&out)]), 1);
    // an unwritable output location is a runtime failure
    let blocker = d.path().join("file");
    fs::write(&blocker, "").unwrap();
    let nested = blocker.join("out");
    assert_eq!(cli(&["simulate", "--mode", "none", "--case", s(&case), "--profiles", s(&prof), "--out", s(&nested)]), 2);
}

#[test]
fn replay_detects_changed_inputs() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 3);
    let out = d.path().join("r");
    assert_eq!(cli(&["simulate", "--mode", "vvc", "--case", s(&case), "--profiles", s(&prof), "--out", s(&out)]), 0);
    let again = d.path().join("r2");
    let manifest = out.join("manifest.json");
    assert_eq!(cli(&["replay", s(&manifest), "--out", s(&again)]), 0);
    assert_eq!(fs::read(out.join("voltages.csv")).unwrap(), fs::read(again.join("voltages.csv")).unwrap());
    fs::write(&prof, fs::read_to_string(&prof).unwrap() + "\n").unwrap();
    assert_eq!(cli(&["replay", s(&manifest), "--out", s(&again)]), 1);
}

#[test]
fn estimate_and_trace_commands() {
    let d = tempfile::tempdir().unwrap();
    let (case, prof) = inputs(d.path(), 4);
    let est = d.path().join("est");
    assert_eq!(cli(&["estimate", "--case", s(&case), "--profiles", s(&prof), "--out", s(&est)]), 0);
    let text = fs::read_to_string(est.join("estimates.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,from,to,G,B,G_true,B_true,observed,reused"));
    assert_eq!(text.lines().count(), 1 + 41 * 4);

    let tr = d.path().join("trace");
    assert_eq!(cli(&["admm-trace", "--case", s(&case), "--profiles", s(&prof), "--t", "1", "--out", s(&tr)]), 0);
    let trace = fs::read_to_string(tr.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("round,primal,dual"));
    let last: f64 = trace.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last <= 3.5e-5);
    assert!(tr.join("messages.csv").exists());
    assert_eq!(cli(&["admm-trace", "--case", s(&case), "--profiles", s(&prof), "--t", "3", "--out", s(&tr)]), 1);
}

#[test]
fn generated_profiles_match_the_bundled_fixtures() {
    let d = tempfile::tempdir().unwrap();
    for (name, case, preset, bundled) in [
        ("30", fixture::CASE30, "ieee30", fixture::PROFILES30),
        ("57", fixture::CASE57, "ieee57", fixture::PROFILES57),
    ] {
        let c = d.path().join(format!("case{name}.m"));
        fs::write(&c, case).unwrap();
        let out = d.path().join(format!("p{name}.csv"));
        assert_eq!(cli(&["gen-profiles", "--case", s(&c), "--preset", preset, "--out", s(&out)]), 0);
        assert_eq!(fs::read_to_string(&out).unwrap(), bundled, "preset {preset}");
    }
}
