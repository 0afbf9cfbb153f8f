//! Command-line front end. Every run writes CSV/JSON artifacts plus a
//! `manifest.json` that is enough to replay it bit for bit.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::estimation::{partials_for_network, AdmittanceEstimate};
use crate::mpc_central::{solve_cmpc, CostMode, MpcInput};
use crate::mpc_dist::{default_tol_inf, solve_distributed, AdmmError, AdmmReport, MessageKind};
use crate::netmodel::{build_admittance, build_network, parse_case_auto, BuildOptions, CaseData};
use crate::powerflow::{compute_injections, line_flow, solve_power_flow, PowerFlowOptions};
use crate::scenario::{
    fmt_num, load_profiles, predict, run_closed_loop, synthesize_profiles, ControlMode, FixtureSpec, ProfileSeries,
    Scenario, ScenarioError, SimulationConfig, SimulationLog,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gridmpc", version, about = "Grid voltage control workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one controller in closed loop over a profile set.
    Simulate(SimulateArgs),
    /// Track line admittance estimates over an uncontrolled run.
    Estimate(EstimateArgs),
    /// Per-(t, bus) voltage differences between two simulate runs.
    Compare(CompareArgs),
    /// Residuals and messages of one distributed solve.
    AdmmTrace(TraceArgs),
    /// Write a synthetic day profile for a bundled grid.
    GenProfiles(GenArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// MATPOWER case file (or its JSON form).
    #[arg(long)]
    pub case: PathBuf,
    /// Profile CSV with columns t,bus,Pg,Qg,Pd,Qd.
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of line-flow measurement noise (p.u.).
    #[arg(long, default_value_t = 0.0)]
    pub noise_pq: f64,
    /// Keep case shunts in the plant.
    #[arg(long)]
    pub keep_shunts: bool,
    /// Snapshots stacked per line estimate.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: ControlMode,
    #[command(flatten)]
    pub input: InputArgs,
    /// Relative prediction error bound.
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// ADMM penalty.
    #[arg(long)]
    pub rho: Option<f64>,
    /// ADMM stopping threshold on ||x - Ez||_inf (3.5e-5 up to 30 buses, 1e-4 beyond).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = CostMode::Squared)]
    pub norm_mode: CostMode,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    /// Directory for deviations.csv (defaults to the first run).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Instant whose controller problem is solved.
    #[arg(long, default_value_t = 0)]
    pub t: usize,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Ieee30,
    Ieee57,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::PlantDiverged { .. } => CliError::Runtime(e.to_string()),
            e => CliError::Invalid(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, with `--out` as given.
    pub args: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub version: String,
}

impl RunManifest {
    /// Re-hashes every input and reports the first that changed.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for d in &self.inputs {
            let bytes = read_bytes(Path::new(&d.path))?;
            if sha256_hex(&bytes) != d.sha256 {
                return Err(CliError::Invalid(format!("input {} changed since the run (digest mismatch)", d.path)));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors go to stderr as one line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, &raw) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; `raw` is the argument list recorded in manifests.
/// Returns the text printed on success.
pub fn execute(cli: Cli, raw: &[String]) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(&a, raw),
        Command::Estimate(a) => estimate(&a, raw),
        Command::Compare(a) => compare(&a),
        Command::AdmmTrace(a) => admm_trace(&a, raw),
        Command::GenProfiles(a) => gen_profiles(&a),
        Command::Replay(a) => replay(&a),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<(String, InputDigest), CliError> {
    let bytes = read_bytes(path)?;
    let digest = InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) };
    let text = String::from_utf8(bytes).map_err(|_| CliError::Invalid(format!("{} is not UTF-8 text", path.display())))?;
    Ok((text, digest))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn json_text(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

struct Inputs {
    scenario: Scenario,
    digests: Vec<InputDigest>,
}

fn load_inputs(a: &InputArgs) -> Result<Inputs, CliError> {
    let (case_text, d1) = read_text(&a.case)?;
    let (prof_text, d2) = read_text(&a.profiles)?;
    let case = parse_case_auto(&case_text).map_err(|e| CliError::Invalid(format!("{}: {e}", a.case.display())))?;
    let profiles = load_profiles(&prof_text).map_err(|e| CliError::Invalid(format!("{}: {e}", a.profiles.display())))?;
    Ok(Inputs { scenario: Scenario { case, profiles }, digests: vec![d1, d2] })
}

fn base_config(mode: ControlMode, eps: f64, a: &InputArgs, case: &CaseData) -> Result<SimulationConfig, CliError> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(CliError::Invalid(format!("--eps must be a finite number >= 0, got {eps}")));
    }
    if !(a.noise_pq >= 0.0 && a.noise_pq.is_finite()) {
        return Err(CliError::Invalid(format!("--noise-pq must be a finite number >= 0, got {}", a.noise_pq)));
    }
    let mut cfg = SimulationConfig::new(mode, eps, a.seed);
    cfg.noise.sigma_pq = a.noise_pq;
    cfg.keep_shunts = a.keep_shunts;
    if let Some(w) = a.window {
        cfg.estimator.window = w;
    }
    cfg.admm.tol_inf = default_tol_inf(case.buses.len());
    cfg.case_ref = a.case.display().to_string();
    cfg.profile_ref = a.profiles.display().to_string();
    Ok(cfg)
}

fn voltages_csv(log: &SimulationLog) -> String {
    let mut s = String::from("t,bus,V,theta\n");
    for r in &log.records {
        for (i, id) in log.case_ids.iter().enumerate() {
            let _ = writeln!(s, "{},{id},{},{}", r.t, fmt_num(r.state.v[i]), fmt_num(r.state.theta[i]));
        }
    }
    s
}

fn controls_csv(log: &SimulationLog) -> String {
    let mut s = String::from("t,bus,u\n");
    for r in &log.records {
        for (i, id) in log.case_ids.iter().enumerate() {
            let _ = writeln!(s, "{},{id},{}", r.t, fmt_num(r.applied_u[i]));
        }
    }
    s
}

/// Logged estimates beside the plant's values; `None` if nothing was logged.
fn estimates_csv(log: &SimulationLog, plant: &crate::netmodel::NetworkModel) -> Option<String> {
    if log.records.iter().all(|r| r.estimates.is_none()) {
        return None;
    }
    let mut s = String::from("t,from,to,G,B,G_true,B_true,observed,reused\n");
    for r in &log.records {
        let Some(est) = &r.estimates else { continue };
        for e in &est.lines {
            let (gt, bt) = plant.line_between(e.from, e.to).map(|l| l.y_entry()).unwrap_or((f64::NAN, f64::NAN));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                log.case_ids[e.from.0],
                log.case_ids[e.to.0],
                fmt_num(e.g),
                fmt_num(e.b),
                fmt_num(gt),
                fmt_num(bt),
                e.observed,
                e.reused
            );
        }
    }
    Some(s)
}

/// Largest `|Y_est - Y| / |Y|` over logged estimates of lines whose true
/// flow exceeds `min_flow` at that instant.
pub fn max_estimate_error(log: &SimulationLog, plant: &crate::netmodel::NetworkModel, min_flow: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for r in &log.records {
        let Some(est) = &r.estimates else { continue };
        for e in &est.lines {
            let Some(l) = plant.line_between(e.from, e.to) else { continue };
            let (g, b) = l.y_entry();
            let s = &r.state;
            let (p, q) = line_flow(s.v[l.from.0], s.theta[l.from.0], s.v[l.to.0], s.theta[l.to.0], g, b);
            if p.hypot(q) > min_flow {
                worst = worst.max((e.g - g).hypot(e.b - b) / g.hypot(b));
            }
        }
    }
    worst
}

fn admm_summary(reports: &[&AdmmReport]) -> serde_json::Value {
    if reports.is_empty() {
        return serde_json::Value::Null;
    }
    let iters: Vec<usize> = reports.iter().map(|r| r.iterations).collect();
    json!({
        "solves": reports.len(),
        "converged": reports.iter().filter(|r| r.converged).count(),
        "iterations_min": iters.iter().min(),
        "iterations_max": iters.iter().max(),
        "iterations_mean": iters.iter().sum::<usize>() as f64 / iters.len() as f64,
        "max_final_residual": reports.iter().map(|r| r.final_residual()).fold(0.0, f64::max),
        "messages_sent": reports.iter().map(|r| r.messages_sent.iter().sum::<usize>()).sum::<usize>(),
    })
}

/// Summary of a closed-loop run.
pub fn summarize(log: &SimulationLog) -> serde_json::Value {
    let mut min = (f64::INFINITY, 0, 0);
    let mut max = (f64::NEG_INFINITY, 0, 0);
    for r in &log.records {
        for (i, v) in r.state.v.iter().enumerate() {
            if *v < min.0 {
                min = (*v, r.t, log.case_ids[i]);
            }
            if *v > max.0 {
                max = (*v, r.t, log.case_ids[i]);
            }
        }
    }
    let reports: Vec<&AdmmReport> = log.records.iter().filter_map(|r| r.admm.as_ref()).collect();
    json!({
        "mode": log.mode,
        "instants": log.records.len(),
        "buses": log.case_ids.len(),
        "min_voltage": min.0,
        "min_voltage_at": { "t": min.1, "bus": min.2 },
        "max_voltage": max.0,
        "max_voltage_at": { "t": max.1, "bus": max.2 },
        "violations": log.violation_count(),
        "instants_with_violations": log.records.iter().filter(|r| !r.violations.is_empty()).count(),
        "controller_failures": log.failure_count(),
        "max_abs_u": log.max_abs_u(),
        "admm": admm_summary(&reports),
    })
}

fn write_manifest(out: &Path, command: &str, raw: &[String], config: serde_json::Value, inputs: Vec<InputDigest>, seed: u64, outputs: &[&str]) -> Result<(), CliError> {
    let m = RunManifest {
        command: command.into(),
        args: raw.to_vec(),
        config,
        inputs,
        seed,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_file(&out.join("manifest.json"), &json_text(&m))
}

fn simulate(a: &SimulateArgs, raw: &[String]) -> Result<String, CliError> {
    let inputs = load_inputs(&a.input)?;
    let sc = &inputs.scenario;
    let mut cfg = base_config(a.mode, a.eps, &a.input, &sc.case)?;
    cfg.mpc.cost = a.norm_mode;
    if let Some(rho) = a.rho {
        cfg.admm.rho = rho;
    }
    if let Some(tol) = a.tol {
        cfg.admm.tol_inf = tol;
    }
    cfg.admm.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let log = run_closed_loop(sc, &cfg)?;
    let plant = build_network(&sc.case, BuildOptions { keep_shunts: cfg.keep_shunts }).map_err(|e| CliError::Invalid(e.to_string()))?;

    prepare_out(&a.out)?;
    let mut outputs = vec!["voltages.csv", "controls.csv", "summary.json"];
    write_file(&a.out.join("voltages.csv"), &voltages_csv(&log))?;
    write_file(&a.out.join("controls.csv"), &controls_csv(&log))?;
    let summary = summarize(&log);
    write_file(&a.out.join("summary.json"), &json_text(&summary))?;
    if let Some(est) = estimates_csv(&log, &plant) {
        write_file(&a.out.join("estimates.csv"), &est)?;
        outputs.push("estimates.csv");
    }
    outputs.push("manifest.json");
    write_manifest(&a.out, "simulate", raw, serde_json::to_value(&cfg).expect("config serializes"), inputs.digests, a.input.seed, &outputs)?;
    Ok(format!(
        "{}: {} instants, V in [{:.4}, {:.4}], {} violations, {} controller failures -> {}",
        a.mode,
        log.records.len(),
        log.min_voltage(),
        log.max_voltage(),
        log.violation_count(),
        log.failure_count(),
        a.out.display()
    ))
}

fn estimate(a: &EstimateArgs, raw: &[String]) -> Result<String, CliError> {
    let inputs = load_inputs(&a.input)?;
    let sc = &inputs.scenario;
    let mut cfg = base_config(ControlMode::None, 0.0, &a.input, &sc.case)?;
    cfg.log_estimates = true;
    let log = run_closed_loop(sc, &cfg)?;
    let plant = build_network(&sc.case, BuildOptions { keep_shunts: cfg.keep_shunts }).map_err(|e| CliError::Invalid(e.to_string()))?;
    prepare_out(&a.out)?;
    write_file(&a.out.join("estimates.csv"), &estimates_csv(&log, &plant).unwrap_or_default())?;
    let err = max_estimate_error(&log, &plant, 0.0);
    let unobserved: usize =
        log.records.iter().filter_map(|r| r.estimates.as_ref()).map(|e| e.lines.iter().filter(|l| !l.observed).count()).sum();
    let summary = json!({
        "instants": log.records.len(),
        "lines": plant.lines().len(),
        "window": cfg.estimator.window,
        "noise_pq": cfg.noise.sigma_pq,
        "max_relative_error": err,
        "unobserved_line_instants": unobserved,
    });
    write_file(&a.out.join("summary.json"), &json_text(&summary))?;
    write_manifest(
        &a.out,
        "estimate",
        raw,
        serde_json::to_value(&cfg).expect("config serializes"),
        inputs.digests,
        a.input.seed,
        &["estimates.csv", "summary.json", "manifest.json"],
    )?;
    Ok(format!("max relative admittance error over lines with flow: {err:.3e} -> {}", a.out.display()))
}

type VoltageRows = Vec<(usize, usize, f64)>;

fn read_voltages(dir: &Path) -> Result<VoltageRows, CliError> {
    let path = dir.join("voltages.csv");
    let (text, _) = read_text(&path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Invalid(format!("{}: missing column '{name}'", path.display())))
    };
    let (ct, cb, cv) = (col("t")?, col("bus")?, col("V")?);
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let bad = || CliError::Invalid(format!("{}: malformed line {}", path.display(), k + 2));
        let rec = rec.map_err(|_| bad())?;
        let t = rec.get(ct).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let b = rec.get(cb).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v = rec.get(cv).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        rows.push((t, b, v));
    }
    Ok(rows)
}

fn compare(a: &CompareArgs) -> Result<String, CliError> {
    let ra = read_voltages(&a.run_a)?;
    let rb = read_voltages(&a.run_b)?;
    let same_grid = ra.len() == rb.len() && ra.iter().zip(&rb).all(|(x, y)| x.0 == y.0 && x.1 == y.1);
    if !same_grid {
        return Err(ScenarioError::GridMismatch(format!(
            "{} has {} (t, bus) rows, {} has {} or a different order",
            a.run_a.display(),
            ra.len(),
            a.run_b.display(),
            rb.len()
        ))
        .into());
    }
    let mut s = String::from("t,bus,dV\n");
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (x, y) in ra.iter().zip(&rb) {
        let d = x.2 - y.2;
        lo = lo.min(d);
        hi = hi.max(d);
        let _ = writeln!(s, "{},{},{}", x.0, x.1, fmt_num(d));
    }
    let out = a.out.clone().unwrap_or_else(|| a.run_a.clone());
    prepare_out(&out)?;
    write_file(&out.join("deviations.csv"), &s)?;
    Ok(format!("max |dV| = {}, range [{}, {}]", fmt_num(lo.abs().max(hi)), fmt_num(lo), fmt_num(hi)))
}

fn admm_trace(a: &TraceArgs, raw: &[String]) -> Result<String, CliError> {
    let inputs = load_inputs(&a.input)?;
    let sc = &inputs.scenario;
    let mut cfg = base_config(ControlMode::D3mpc, a.eps, &a.input, &sc.case)?;
    if let Some(rho) = a.rho {
        cfg.admm.rho = rho;
    }
    if let Some(tol) = a.tol {
        cfg.admm.tol_inf = tol;
    }
    cfg.admm.log_messages = true;
    cfg.admm.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let steps = sc.profiles.len();
    if a.t + 1 >= steps {
        return Err(CliError::Invalid(format!("--t must be below {} so a next instant exists", steps - 1)));
    }
    let plant = build_network(&sc.case, BuildOptions { keep_shunts: cfg.keep_shunts }).map_err(|e| CliError::Invalid(e.to_string()))?;
    let model = plant.without_shunts();
    let map = sc.profiles.mapping(&plant)?;
    let inj = ProfileSeries::injections(&sc.profiles.instants[a.t], &map);
    let runtime = |e: &dyn std::fmt::Display| CliError::Runtime(e.to_string());
    let state = solve_power_flow(&plant, &inj, None, PowerFlowOptions::default()).map_err(|e| runtime(&e))?;
    let forecast = predict(&sc.profiles.instants[a.t + 1], &cfg.prediction, a.t + 1);
    let predicted = ProfileSeries::injections(&forecast, &map);
    let current = compute_injections(&state, &build_admittance(&model)).map_err(|e| runtime(&e))?;
    let parts = partials_for_network(&model, &state, &AdmittanceEstimate::exact(&model)).map_err(|e| runtime(&e))?;
    let inp = MpcInput::new(&state, &current, &predicted, parts, &cfg.mpc);
    let central = solve_cmpc(&inp).map_err(|e| runtime(&e))?;
    let (sol, report) = match solve_distributed(&inp, &model, &cfg.admm) {
        Ok(x) => x,
        Err(AdmmError::NotConverged { last, .. }) => *last,
        Err(e) => return Err(runtime(&e)),
    };

    prepare_out(&a.out)?;
    let ids: Vec<usize> = plant.bus_ids().map(|b| plant.case_id(b)).collect();
    let mut trace = String::from("round,primal,dual\n");
    for (k, (p, d)) in report.residuals.iter().zip(&report.dual_residuals).enumerate() {
        let _ = writeln!(trace, "{},{},{}", k + 1, fmt_num(*p), fmt_num(*d));
    }
    write_file(&a.out.join("trace.csv"), &trace)?;
    let mut msgs = String::from("round,kind,sender,receiver\n");
    for m in &report.log {
        let kind = match m.kind {
            MessageKind::Replica => "replica",
            MessageKind::Consensus => "consensus",
            MessageKind::Multiplier => "multiplier",
        };
        let _ = writeln!(msgs, "{},{kind},{},{}", m.round, ids[m.sender.0], ids[m.receiver.0]);
    }
    write_file(&a.out.join("messages.csv"), &msgs)?;
    let dv = sol.dv.iter().zip(&central.dv).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let gap = (sol.objective - central.objective).abs() / central.objective.abs().max(f64::MIN_POSITIVE);
    let summary = json!({
        "t": a.t,
        "rho": cfg.admm.rho,
        "tol": cfg.admm.tol_inf,
        "iterations": report.iterations,
        "converged": report.converged,
        "final_residual": report.final_residual(),
        "objective": sol.objective,
        "central_objective": central.objective,
        "objective_relative_gap": gap,
        "max_dv_deviation": dv,
    });
    write_file(&a.out.join("summary.json"), &json_text(&summary))?;
    write_manifest(
        &a.out,
        "admm-trace",
        raw,
        serde_json::to_value(&cfg).expect("config serializes"),
        inputs.digests,
        a.input.seed,
        &["trace.csv", "messages.csv", "summary.json", "manifest.json"],
    )?;
    Ok(format!(
        "{} rounds ({}), residual {:.3e}, |dV - central| <= {dv:.3e} -> {}",
        report.iterations,
        if report.converged { "converged" } else { "not converged" },
        report.final_residual(),
        a.out.display()
    ))
}

fn gen_profiles(a: &GenArgs) -> Result<String, CliError> {
    let (text, _) = read_text(&a.case)?;
    let case = parse_case_auto(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", a.case.display())))?;
    let spec = match a.preset {
        Preset::Ieee30 => FixtureSpec::ieee30(),
        Preset::Ieee57 => FixtureSpec::ieee57(),
    };
    let series = synthesize_profiles(&case, &spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_out(dir)?;
    }
    write_file(&a.out, &series.to_csv())?;
    Ok(format!("{} instants x {} buses -> {}", series.len(), series.bus_count(), a.out.display()))
}

fn replay(a: &ReplayArgs) -> Result<String, CliError> {
    let (text, _) = read_text(&a.manifest)?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: not a run manifest: {e}", a.manifest.display())))?;
    m.verify_inputs()?;
    let mut args = vec!["gridmpc".to_string()];
    let mut it = m.args.iter();
    while let Some(x) = it.next() {
        if x == "--out" {
            it.next();
        } else if !x.starts_with("--out=") {
            args.push(x.clone());
        }
    }
    args.push("--out".into());
    args.push(a.out.display().to_string());
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::Invalid(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_) | Command::Compare(_) | Command::GenProfiles(_)) {
        return Err(CliError::Invalid(format!("manifests of '{}' cannot be replayed", m.command)));
    }
    let msg = execute(cli, &args[1..])?;
    let (new_text, _) = read_text(&a.out.join("manifest.json"))?;
    let new: RunManifest = serde_json::from_str(&new_text).map_err(|e| CliError::Runtime(e.to_string()))?;
    if new.config != m.config {
        return Err(CliError::Runtime("replayed configuration differs from the manifest".into()));
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_sha256() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn unknown_mode_is_a_usage_error() {
        let code = run(["gridmpc", "simulate", "--mode", "cmpcX", "--case", "a", "--profiles", "b", "--out", "c"]);
        assert_eq!(code, EXIT_INVALID);
        assert_eq!(run(["gridmpc", "--version"]), EXIT_OK);
    }

    #[test]
    fn error_classes() {
        assert_eq!(CliError::from(ScenarioError::PlantDiverged { t: 1, msg: "x".into() }).exit_code(), EXIT_RUNTIME);
        assert_eq!(CliError::from(ScenarioError::Schema("x".into())).exit_code(), EXIT_INVALID);
    }
}
