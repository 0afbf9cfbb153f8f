//! Synthetic day-long profiles for the bundled test grids.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::profiles::{InstantProfile, ProfileSeries};
use super::ScenarioError;
use crate::netmodel::{build_network, BuildOptions, CaseData};
use crate::powerflow::{solve_power_flow_pv, PowerFlowOptions};

pub const CASE30: &str = include_str!("../../data/case30.m");
pub const CASE57: &str = include_str!("../../data/case57.m");
pub const PROFILES30: &str = include_str!("../../data/profiles30.csv");
pub const PROFILES57: &str = include_str!("../../data/profiles57.csv");

/// Recipe for a synthetic profile set.
///
/// Demand follows one shape at every bus (a shoulder around noon and an
/// evening peak). Renewables follow a solar bell and supply
/// `renewable_share` of demand at the solar peak. Conventional units track
/// demand; the slack covers the rest. Conventional units inject
/// `q_support` times the reactive power that would hold their bus at
/// `gen_voltage`, so the grid sags when `q_support < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub instants: usize,
    /// Demand multiplier (relative to the case loads) at the lowest point.
    pub load_valley: f64,
    /// Demand multiplier at the evening peak.
    pub load_peak: f64,
    pub renewable_share: f64,
    /// Fraction of demand met by the conventional non-slack units.
    pub conventional_share: f64,
    pub q_support: f64,
    pub gen_voltage: f64,
    /// Case bus numbers.
    pub renewable_buses: Vec<usize>,
    pub conventional_buses: Vec<usize>,
}

impl FixtureSpec {
    /// The IEEE 30-bus recipe: renewables at the five non-slack generator
    /// buses, which also host the conventional units.
    pub fn ieee30() -> Self {
        let gens = vec![2, 13, 22, 23, 27];
        Self {
            instants: 96,
            load_valley: 0.55,
            load_peak: 0.9,
            renewable_share: 0.5,
            conventional_share: 0.3,
            q_support: 0.9,
            gen_voltage: 1.0,
            renewable_buses: gens.clone(),
            conventional_buses: gens,
        }
    }

    /// The IEEE 57-bus recipe: conventional units at the original generator
    /// buses and renewables at buses 13 through 57. Demand is lighter than
    /// on the 30-bus grid because the model drops line charging and taps,
    /// which this case leans on heavily.
    pub fn ieee57() -> Self {
        Self {
            instants: 96,
            load_valley: 0.25,
            load_peak: 0.45,
            renewable_share: 0.5,
            conventional_share: 0.3,
            q_support: 0.9,
            gen_voltage: 1.0,
            renewable_buses: (13..=57).collect(),
            conventional_buses: vec![2, 3, 6, 8, 9, 12],
        }
    }
}

/// Demand multiplier at hour `h`, scaled to `[0, 1]` over a day.
fn load_shape(h: f64) -> f64 {
    let raw = |h: f64| 0.35 * (-((h - 12.0) / 4.0).powi(2)).exp() + (-((h - 19.0) / 3.0).powi(2)).exp();
    let (lo, hi) = (0..96).map(|k| raw(k as f64 / 4.0)).fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    (raw(h) - lo) / (hi - lo)
}

/// Solar availability at hour `h`, peaking at 1 at noon.
fn solar_shape(h: f64) -> f64 {
    if (6.0..=18.0).contains(&h) {
        (PI * (h - 6.0) / 12.0).sin().powf(1.5)
    } else {
        0.0
    }
}

pub fn synthesize_profiles(case: &CaseData, spec: &FixtureSpec) -> Result<ProfileSeries, ScenarioError> {
    let net = build_network(case, BuildOptions::default())?;
    let mut buses: Vec<usize> = case.bus_ids().collect();
    buses.sort_unstable();
    let pos = |id: usize| {
        buses.binary_search(&id).map_err(|_| ScenarioError::InvalidConfig(format!("fixture bus {id} is not in the case")))
    };
    let base = case.base_mva;
    let mut pd0 = vec![0.0; buses.len()];
    let mut qd0 = vec![0.0; buses.len()];
    for b in &case.buses {
        let j = pos(b.id)?;
        pd0[j] = b.pd / base;
        qd0[j] = b.qd / base;
    }
    let total_pd: f64 = pd0.iter().sum();

    // conventional output is split by the units' case dispatch
    let mut conv_w = vec![0.0; buses.len()];
    for g in case.gens.iter().filter(|g| g.in_service) {
        if spec.conventional_buses.contains(&g.bus) {
            conv_w[pos(g.bus)?] += g.pg.max(0.0);
        }
    }
    let conv_sum: f64 = conv_w.iter().sum();
    if !spec.conventional_buses.is_empty() && conv_sum <= 0.0 {
        return Err(ScenarioError::InvalidConfig("conventional buses carry no dispatch in the case".into()));
    }
    let ren: Vec<usize> = spec.renewable_buses.iter().map(|&b| pos(b)).collect::<Result<_, _>>()?;
    let conv: Vec<usize> = spec.conventional_buses.iter().map(|&b| pos(b)).collect::<Result<_, _>>()?;
    let mut ren_w = vec![0.0; buses.len()];
    if spec.renewable_buses.iter().all(|b| spec.conventional_buses.contains(b)) {
        for &j in &ren {
            ren_w[j] = conv_w[j] / conv_sum;
        }
    } else {
        for &j in &ren {
            ren_w[j] = 1.0 / ren.len() as f64;
        }
    }

    let noon_load = spec.load_valley + (spec.load_peak - spec.load_valley) * load_shape(12.0);
    let map: Vec<usize> = net.bus_ids().map(|b| pos(net.case_id(b))).collect::<Result<_, _>>()?;
    let mut instants = Vec::with_capacity(spec.instants);
    for t in 0..spec.instants {
        let h = t as f64 * 24.0 / spec.instants as f64;
        let scale = spec.load_valley + (spec.load_peak - spec.load_valley) * load_shape(h);
        let demand = scale * total_pd;
        let renewable = spec.renewable_share * noon_load * total_pd * solar_shape(h);
        let mut inst = InstantProfile::zeros(buses.len());
        for j in 0..buses.len() {
            inst.pd[j] = scale * pd0[j];
            inst.qd[j] = scale * qd0[j];
            inst.pg[j] = renewable * ren_w[j];
            if conv_sum > 0.0 {
                inst.pg[j] += spec.conventional_share * demand * conv_w[j] / conv_sum;
            }
        }

        let inj = ProfileSeries::injections(&inst, &map);
        let pv: Vec<(usize, f64)> = net
            .bus_ids()
            .filter(|b| !b.is_slack() && conv.contains(&map[b.0]))
            .map(|b| (b.0, spec.gen_voltage))
            .collect();
        let (_, held) = solve_power_flow_pv(&net, &inj, &pv, PowerFlowOptions::default())
            .map_err(|e| ScenarioError::InvalidConfig(format!("fixture power flow at t={t}: {e}")))?;
        for &(b, _) in &pv {
            let j = map[b];
            inst.qg[j] = spec.q_support * (held.q[b] + inst.qd[j]);
        }
        instants.push(inst);
    }
    Ok(ProfileSeries { buses, instants, step_minutes: 24.0 * 60.0 / spec.instants as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_span_the_day() {
        assert!((load_shape(19.0) - 1.0).abs() < 1e-2);
        let night = load_shape(3.0);
        assert!(night < 0.05);
        assert_eq!(solar_shape(2.0), 0.0);
        assert!((solar_shape(12.0) - 1.0).abs() < 1e-12);
    }
}
