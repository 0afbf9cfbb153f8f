//! Closed-loop simulation: the plant follows generation/demand profiles,
//! a controller picks the next reactive compensation each instant, and
//! everything is logged per instant.

pub mod fixture;
mod profiles;
mod vvc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{partials_for_network, AdmittanceEstimate, EstimatorConfig, LineEstimator};
use crate::mpc_central::{solve_cmpc, MpcError, MpcInput, MpcSettings, MpcSolution};
use crate::mpc_dist::{solve_distributed, AdmmConfig, AdmmError, AdmmReport};
use crate::netmodel::{build_network, parse_case_auto, BuildOptions, CaseData, NetError, NetworkModel};
use crate::powerflow::{
    compute_injections, measure, solve_power_flow, InjectionVector, MeasurementSnapshot, NoiseConfig, OperatingState,
    PowerFlowOptions,
};

pub use fixture::{synthesize_profiles, FixtureSpec};
pub use profiles::{fmt_num, load_profiles, predict, InstantProfile, PredictionModel, ProfileSeries};
pub use vvc::{droop_equilibrium, vvc_control, DroopEquilibrium, VvcCurve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("profile schema error: {0}")]
    Schema(String),
    #[error("ragged profile series: {0}")]
    RaggedSeries(String),
    #[error("profiles do not match the case: {0}")]
    ProfileMismatch(String),
    #[error("malformed volt-var curve: {0}")]
    MalformedCurve(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("plant power flow failed at t={t}: {msg}")]
    PlantDiverged { t: usize, msg: String },
    #[error("logs cover different (t, bus) grids: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    None,
    Cmpc,
    D3mpc,
    Vvc,
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Cmpc => "cmpc",
            Self::D3mpc => "d3mpc",
            Self::Vvc => "vvc",
        })
    }
}

/// A case and the profiles that drive it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub case: CaseData,
    pub profiles: ProfileSeries,
}

impl Scenario {
    pub fn from_texts(case: &str, profiles: &str) -> Result<Self, ScenarioError> {
        Ok(Self { case: parse_case_auto(case)?, profiles: load_profiles(profiles)? })
    }

    /// Bundled IEEE 30-bus grid with its stressed day profile.
    pub fn ieee30() -> Self {
        Self::from_texts(fixture::CASE30, fixture::PROFILES30).expect("bundled 30-bus fixture parses")
    }

    /// Bundled IEEE 57-bus grid with its stressed day profile.
    pub fn ieee57() -> Self {
        Self::from_texts(fixture::CASE57, fixture::PROFILES57).expect("bundled 57-bus fixture parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub mode: ControlMode,
    pub admm: AdmmConfig,
    pub mpc: MpcSettings,
    pub vvc: VvcCurve,
    pub noise: NoiseConfig,
    pub estimator: EstimatorConfig,
    pub prediction: PredictionModel,
    /// Seed of the measurement noise.
    pub seed: u64,
    /// Keep case shunts in the plant; controllers always use the
    /// shunt-free model.
    pub keep_shunts: bool,
    /// Run the line estimator (and log its output) in every mode, not just
    /// d3mpc.
    pub log_estimates: bool,
    pub case_ref: String,
    pub profile_ref: String,
}

impl SimulationConfig {
    pub fn new(mode: ControlMode, eps: f64, seed: u64) -> Self {
        Self {
            mode,
            admm: AdmmConfig::default(),
            mpc: MpcSettings::default(),
            vvc: VvcCurve::default(),
            noise: NoiseConfig::default(),
            estimator: EstimatorConfig::default(),
            prediction: PredictionModel { eps, seed },
            seed,
            keep_shunts: false,
            log_estimates: false,
            case_ref: String::new(),
            profile_ref: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let lim = &self.mpc.limits;
        if !lim.is_ordered() {
            return Err(ScenarioError::InvalidConfig("bus limits must satisfy min <= max".into()));
        }
        if !(lim.v_min <= self.mpc.v_ref && self.mpc.v_ref <= lim.v_max) {
            return Err(ScenarioError::InvalidConfig(format!(
                "v_ref {} lies outside [{}, {}]",
                self.mpc.v_ref, lim.v_min, lim.v_max
            )));
        }
        self.prediction.validate()?;
        let n = &self.noise;
        if [n.sigma_v, n.sigma_theta, n.sigma_pq].iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(ScenarioError::InvalidConfig("noise deviations must be finite and >= 0".into()));
        }
        if self.estimator.window == 0 {
            return Err(ScenarioError::InvalidConfig("estimation window must be at least 1".into()));
        }
        match self.mode {
            ControlMode::D3mpc => self.admm.validate().map_err(|e| ScenarioError::InvalidConfig(e.to_string())),
            ControlMode::Vvc => self.vvc.validate(),
            _ => Ok(()),
        }
    }
}

/// Everything that happened at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantRecord {
    pub t: usize,
    /// True plant state.
    pub state: OperatingState,
    /// Compensation in force during this instant (index = bus).
    pub applied_u: Vec<f64>,
    /// Compensation chosen for the next instant.
    pub next_u: Vec<f64>,
    pub mpc: Option<MpcSolution>,
    pub estimates: Option<AdmittanceEstimate>,
    pub admm: Option<AdmmReport>,
    /// Why the controller kept the previous compensation.
    pub failure: Option<String>,
    /// Buses whose voltage is outside the band.
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub mode: ControlMode,
    /// Case bus number of each network bus.
    pub case_ids: Vec<usize>,
    pub records: Vec<InstantRecord>,
}

impl SimulationLog {
    pub fn min_voltage(&self) -> f64 {
        self.records.iter().map(|r| r.state.min_voltage()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_voltage(&self) -> f64 {
        self.records.iter().map(|r| r.state.max_voltage()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn violation_count(&self) -> usize {
        self.records.iter().map(|r| r.violations.len()).sum()
    }

    pub fn failure_count(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn max_abs_u(&self) -> f64 {
        self.records.iter().flat_map(|r| r.applied_u.iter().chain(&r.next_u)).fold(0.0, |m, u| m.max(u.abs()))
    }

    /// `V_self - V_other` per instant and bus.
    pub fn deviation(&self, other: &SimulationLog) -> Result<Vec<Vec<f64>>, ScenarioError> {
        if self.case_ids != other.case_ids || self.records.len() != other.records.len() {
            return Err(ScenarioError::GridMismatch(format!(
                "{} buses x {} instants vs {} buses x {} instants",
                self.case_ids.len(),
                self.records.len(),
                other.case_ids.len(),
                other.records.len()
            )));
        }
        Ok(self
            .records
            .iter()
            .zip(&other.records)
            .map(|(a, b)| a.state.v.iter().zip(&b.state.v).map(|(x, y)| x - y).collect())
            .collect())
    }
}

/// Injections seen through line-flow measurements: each bus sums the
/// flows leaving it.
pub fn injections_from_flows(snap: &MeasurementSnapshot, n: usize) -> InjectionVector {
    let mut inj = InjectionVector::zeros(n);
    for f in &snap.flows {
        inj.p[f.from.0] += f.p_ft;
        inj.q[f.from.0] += f.q_ft;
        inj.p[f.to.0] += f.p_tf;
        inj.q[f.to.0] += f.q_tf;
    }
    inj
}

enum Outcome {
    Solved(MpcSolution, Option<AdmmReport>),
    Failed(String, Option<AdmmReport>),
}

/// Runs the closed loop over every instant of the profiles.
///
/// At each instant the plant is solved with the actual injections plus the
/// compensation chosen at the previous instant, measured, and handed to the
/// controller together with a forecast of the next instant. The last
/// instant has nothing to forecast, so its controller does not run. A
/// controller failure keeps the previous compensation and is flagged.
/// Volt-var devices have no forecast step: they settle onto their droop
/// curve within each instant, so `applied_u` is the settled response.
pub fn run_closed_loop(sc: &Scenario, cfg: &SimulationConfig) -> Result<SimulationLog, ScenarioError> {
    cfg.validate()?;
    let plant = build_network(&sc.case, BuildOptions { keep_shunts: cfg.keep_shunts })?;
    let model = plant.without_shunts();
    let map = sc.profiles.mapping(&plant)?;
    let n = plant.bus_count();
    let steps = sc.profiles.len();
    let lim = cfg.mpc.limits;
    let mut estimator = LineEstimator::new(&model, cfg.estimator);
    let mut u = vec![0.0; n];
    let mut warm: Option<OperatingState> = None;
    let mut records = Vec::with_capacity(steps);

    for t in 0..steps {
        let mut inj = ProfileSeries::injections(&sc.profiles.instants[t], &map);
        let mut droop_failure = None;
        let state = if cfg.mode == ControlMode::Vvc {
            let eq = droop_equilibrium(&plant, &inj, &cfg.vvc, lim.u_min, lim.u_max, &u, warm.as_ref())
                .map_err(|e| ScenarioError::PlantDiverged { t, msg: e.to_string() })?;
            if !eq.converged() {
                droop_failure = Some(format!("droop did not settle (change {:.3e})", eq.residual));
            }
            u = eq.u;
            eq.state
        } else {
            for i in 1..n {
                inj.q[i] += u[i];
            }
            // a large swing in compensation can defeat the warm start
            solve_power_flow(&plant, &inj, warm.as_ref(), PowerFlowOptions::default())
                .or_else(|_| solve_power_flow(&plant, &inj, None, PowerFlowOptions::default()))
                .map_err(|e| ScenarioError::PlantDiverged { t, msg: e.to_string() })?
        };
        warm = Some(state.clone());
        let snap = measure(&state, &plant, cfg.noise, cfg.seed, t);

        let mut estimates = None;
        let mut est_failure = None;
        if cfg.mode == ControlMode::D3mpc || cfg.log_estimates {
            match estimator.update(&model, &snap) {
                Ok(e) => estimates = Some(e),
                Err(e) if cfg.mode == ControlMode::D3mpc => est_failure = Some(format!("estimation: {e}")),
                Err(_) => {}
            }
        }

        let mut next_u = u.clone();
        let mut mpc = None;
        let mut admm = None;
        let mut failure = droop_failure;
        if t + 1 < steps {
            let forecast = predict(&sc.profiles.instants[t + 1], &cfg.prediction, t + 1);
            let predicted = ProfileSeries::injections(&forecast, &map);
            let outcome = match cfg.mode {
                // droop devices act inside the plant solve
                ControlMode::None | ControlMode::Vvc => None,
                ControlMode::Cmpc => {
                    let truth = AdmittanceEstimate::exact(&model);
                    let current = compute_injections(&state, &crate::netmodel::build_admittance(&model))
                        .map_err(|e| ScenarioError::PlantDiverged { t, msg: e.to_string() })?;
                    Some(central_step(&model, &state, &current, &predicted, &truth, &cfg.mpc))
                }
                ControlMode::D3mpc => Some(match (&estimates, est_failure.take()) {
                    (Some(est), _) => {
                        let seen = snap.state();
                        let current = injections_from_flows(&snap, n);
                        distributed_step(&model, &seen, &current, &predicted, est, cfg)
                    }
                    (None, msg) => Outcome::Failed(msg.unwrap_or_default(), None),
                }),
            };
            match outcome {
                Some(Outcome::Solved(sol, report)) => {
                    for i in 1..n {
                        next_u[i] = sol.u[i].clamp(lim.u_min, lim.u_max);
                    }
                    mpc = Some(sol);
                    admm = report;
                }
                Some(Outcome::Failed(msg, report)) => {
                    failure = Some(msg);
                    admm = report;
                }
                None => {}
            }
        }

        let violations = (0..n).filter(|&i| state.v[i] < lim.v_min || state.v[i] > lim.v_max).collect();
        records.push(InstantRecord {
            t,
            state,
            applied_u: u.clone(),
            next_u: next_u.clone(),
            mpc,
            estimates,
            admm,
            failure,
            violations,
        });
        u = next_u;
    }
    Ok(SimulationLog { mode: cfg.mode, case_ids: plant.bus_ids().map(|b| plant.case_id(b)).collect(), records })
}

fn central_step(
    net: &NetworkModel,
    state: &OperatingState,
    current: &InjectionVector,
    predicted: &InjectionVector,
    params: &AdmittanceEstimate,
    settings: &MpcSettings,
) -> Outcome {
    let partials = match partials_for_network(net, state, params) {
        Ok(p) => p,
        Err(e) => return Outcome::Failed(format!("partials: {e}"), None),
    };
    let inp = MpcInput::new(state, current, predicted, partials, settings);
    match solve_cmpc(&inp) {
        Ok(sol) => Outcome::Solved(sol, None),
        Err(MpcError::Infeasible) => Outcome::Failed("controller problem infeasible".into(), None),
        Err(e) => Outcome::Failed(e.to_string(), None),
    }
}

fn distributed_step(
    net: &NetworkModel,
    seen: &OperatingState,
    current: &InjectionVector,
    predicted: &InjectionVector,
    est: &AdmittanceEstimate,
    cfg: &SimulationConfig,
) -> Outcome {
    let partials = match partials_for_network(net, seen, est) {
        Ok(p) => p,
        Err(e) => return Outcome::Failed(format!("partials: {e}"), None),
    };
    let inp = MpcInput::new(seen, current, predicted, partials, &cfg.mpc);
    match solve_distributed(&inp, net, &cfg.admm) {
        Ok((sol, report)) => Outcome::Solved(sol, Some(report)),
        Err(AdmmError::NotConverged { iterations, residual, last }) => {
            let (_, report) = *last;
            Outcome::Failed(format!("ADMM stopped after {iterations} rounds at residual {residual:.3e}"), Some(report))
        }
        Err(e) => Outcome::Failed(e.to_string(), None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Scenario {
        let case = "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;\n2 1 20 5 0 0 1 1 0 100 1 1.1 0.9;\n3 1 10 4 0 0 1 1 0 100 1 1.1 0.9;\n];\nmpc.gen = [\n1 0 0 100 -100 1 100 1 100 0;\n];\nmpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;\n2 3 0.01 0.1 0 0 0 0 0 0 1 -360 360;\n];\n";
        let mut csv = String::from("t,bus,Pg,Qg,Pd,Qd\n");
        for t in 0..6 {
            let s = 1.0 + 0.1 * t as f64;
            csv += &format!("{t},1,0,0,0,0\n{t},2,0,0,{},{}\n{t},3,0,0,{},{}\n", 0.2 * s, 0.05 * s, 0.1 * s, 0.04 * s);
        }
        Scenario::from_texts(case, &csv).unwrap()
    }

    #[test]
    fn every_mode_runs_and_saturates() {
        let sc = tiny();
        for mode in [ControlMode::None, ControlMode::Cmpc, ControlMode::D3mpc, ControlMode::Vvc] {
            let cfg = SimulationConfig::new(mode, 0.05, 4);
            let log = run_closed_loop(&sc, &cfg).unwrap();
            assert_eq!(log.records.len(), 6);
            assert!(log.max_abs_u() <= 0.05 + 1e-12, "{mode}");
            assert_eq!(log.failure_count(), 0, "{mode}");
            if mode == ControlMode::None {
                assert_eq!(log.max_abs_u(), 0.0);
            }
            assert_eq!(log, run_closed_loop(&sc, &cfg).unwrap());
        }
    }

    #[test]
    fn compensation_applies_one_instant_later() {
        let log = run_closed_loop(&tiny(), &SimulationConfig::new(ControlMode::Cmpc, 0.0, 1)).unwrap();
        assert!(log.records[0].applied_u.iter().all(|u| *u == 0.0));
        for w in log.records.windows(2) {
            assert_eq!(w[0].next_u, w[1].applied_u);
        }
        let last = log.records.last().unwrap();
        assert!(last.mpc.is_none() && last.next_u == last.applied_u);
    }

    #[test]
    fn config_checks() {
        let mut cfg = SimulationConfig::new(ControlMode::Cmpc, 0.05, 0);
        cfg.mpc.v_ref = 1.2;
        assert!(matches!(run_closed_loop(&tiny(), &cfg), Err(ScenarioError::InvalidConfig(_))));
        let mut cfg = SimulationConfig::new(ControlMode::Vvc, 0.05, 0);
        cfg.vvc.v3 = 0.9;
        assert!(matches!(run_closed_loop(&tiny(), &cfg), Err(ScenarioError::MalformedCurve(_))));
        let mut cfg = SimulationConfig::new(ControlMode::D3mpc, 0.05, 0);
        cfg.admm.rho = 0.0;
        assert!(matches!(run_closed_loop(&tiny(), &cfg), Err(ScenarioError::InvalidConfig(_))));
    }

    #[test]
    fn overload_reports_diverged_plant() {
        let mut sc = tiny();
        for inst in &mut sc.profiles.instants {
            inst.pd[2] = 50.0;
        }
        let err = run_closed_loop(&sc, &SimulationConfig::new(ControlMode::None, 0.0, 0)).unwrap_err();
        assert!(matches!(err, ScenarioError::PlantDiverged { t: 0, .. }));
    }

    #[test]
    fn deviation_needs_same_grid() {
        let sc = tiny();
        let a = run_closed_loop(&sc, &SimulationConfig::new(ControlMode::None, 0.0, 0)).unwrap();
        let d = a.deviation(&a).unwrap();
        assert!(d.iter().flatten().all(|x| *x == 0.0));
        let mut b = a.clone();
        b.records.pop();
        assert!(matches!(a.deviation(&b), Err(ScenarioError::GridMismatch(_))));
    }
}
