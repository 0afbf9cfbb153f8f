use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::netmodel::NetworkModel;
use crate::powerflow::InjectionVector;

/// Generation and demand of every bus at one instant (p.u.), in the bus
/// order of the owning [`ProfileSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantProfile {
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
}

impl InstantProfile {
    pub fn zeros(n: usize) -> Self {
        Self { pg: vec![0.0; n], qg: vec![0.0; n], pd: vec![0.0; n], qd: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.pg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pg.is_empty()
    }
}

/// Per-bus generation/demand trajectories keyed by case bus number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSeries {
    /// Case bus numbers in ascending order.
    pub buses: Vec<usize>,
    pub instants: Vec<InstantProfile>,
    /// Spacing between instants; metadata only.
    pub step_minutes: f64,
}

impl ProfileSeries {
    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Positions of the network's buses in this series.
    pub fn mapping(&self, net: &NetworkModel) -> Result<Vec<usize>, ScenarioError> {
        if self.buses.len() != net.bus_count() {
            return Err(ScenarioError::ProfileMismatch(format!(
                "profiles cover {} buses, the case has {}",
                self.buses.len(),
                net.bus_count()
            )));
        }
        net.bus_ids()
            .map(|b| {
                let id = net.case_id(b);
                self.buses
                    .binary_search(&id)
                    .map_err(|_| ScenarioError::ProfileMismatch(format!("case bus {id} has no profile")))
            })
            .collect()
    }

    /// Net injections `Pg - Pd`, `Qg - Qd` in network bus order.
    pub fn injections(inst: &InstantProfile, map: &[usize]) -> InjectionVector {
        InjectionVector {
            p: map.iter().map(|&j| inst.pg[j] - inst.pd[j]).collect(),
            q: map.iter().map(|&j| inst.qg[j] - inst.qd[j]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,bus,Pg,Qg,Pd,Qd\n");
        for (t, inst) in self.instants.iter().enumerate() {
            for (j, bus) in self.buses.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{t},{bus},{},{},{},{}",
                    fmt_num(inst.pg[j]),
                    fmt_num(inst.qg[j]),
                    fmt_num(inst.pd[j]),
                    fmt_num(inst.qd[j])
                );
            }
        }
        out
    }
}

/// 12 significant digits, trailing zeros trimmed.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let s = format!("{:.11e}", x);
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let mant = mant.trim_end_matches('0').trim_end_matches('.');
    if (-5..12).contains(&exp) {
        let digits = (11 - exp).max(0) as usize;
        let s = format!("{:.*}", digits, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{mant}e{exp}")
    }
}

const COLUMNS: [&str; 6] = ["t", "bus", "Pg", "Qg", "Pd", "Qd"];

/// Parses the `t,bus,Pg,Qg,Pd,Qd` profile format. Columns may come in any
/// order; every instant must list the same buses and instants must run
/// from 0 without gaps.
pub fn load_profiles(text: &str) -> Result<ProfileSeries, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| ScenarioError::Schema(e.to_string()))?.clone();
    let mut cols = [0usize; 6];
    for (c, name) in COLUMNS.iter().enumerate() {
        cols[c] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| ScenarioError::Schema(format!("missing column '{name}'")))?;
    }

    let mut rows: Vec<(usize, usize, [f64; 4])> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| ScenarioError::Schema(format!("line {line}: {e}")))?;
        let field = |c: usize| rec.get(cols[c]).unwrap_or("");
        let int = |c: usize| {
            field(c)
                .parse::<usize>()
                .map_err(|_| ScenarioError::Schema(format!("line {line}: '{}' is not a valid {}", field(c), COLUMNS[c])))
        };
        let num = |c: usize| match field(c).parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(ScenarioError::Schema(format!("line {line}: '{}' is not a valid {}", field(c), COLUMNS[c]))),
        };
        let vals = [num(2)?, num(3)?, num(4)?, num(5)?];
        if vals[2] < 0.0 || vals[3] < 0.0 {
            return Err(ScenarioError::Schema(format!("line {line}: demands must be non-negative")));
        }
        rows.push((int(0)?, int(1)?, vals));
    }
    if rows.is_empty() {
        return Err(ScenarioError::Schema("no data rows".into()));
    }

    let buses: Vec<usize> = rows.iter().map(|r| r.1).collect::<BTreeSet<_>>().into_iter().collect();
    let steps = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let mut seen = vec![vec![false; buses.len()]; steps];
    let mut instants = vec![InstantProfile::zeros(buses.len()); steps];
    for (t, bus, v) in rows {
        let j = buses.binary_search(&bus).expect("bus collected above");
        if std::mem::replace(&mut seen[t][j], true) {
            return Err(ScenarioError::RaggedSeries(format!("bus {bus} listed twice at t={t}")));
        }
        let inst = &mut instants[t];
        inst.pg[j] = v[0];
        inst.qg[j] = v[1];
        inst.pd[j] = v[2];
        inst.qd[j] = v[3];
    }
    for (t, row) in seen.iter().enumerate() {
        if let Some(j) = row.iter().position(|s| !s) {
            return Err(ScenarioError::RaggedSeries(format!("bus {} has no entry at t={t}", buses[j])));
        }
    }
    Ok(ProfileSeries { buses, instants, step_minutes: 15.0 })
}

/// Bounded relative prediction error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionModel {
    pub eps: f64,
    pub seed: u64,
}

impl Default for PredictionModel {
    fn default() -> Self {
        Self { eps: 0.05, seed: 0 }
    }
}

impl PredictionModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.eps >= 0.0 && self.eps.is_finite() {
            Ok(())
        } else {
            Err(ScenarioError::InvalidConfig(format!("prediction error bound must be >= 0, got {}", self.eps)))
        }
    }
}

/// Forecast of `actual` for instant `t`: every component scaled by its own
/// `1 + d`, `d ~ U(-eps, eps)`. Draws go bus by bus as Pg, Qg, Pd, Qd and
/// use the upper half of the stream space, so a seed shared with the
/// measurement noise yields unrelated draws.
pub fn predict(actual: &InstantProfile, model: &PredictionModel, t: usize) -> InstantProfile {
    if model.eps == 0.0 {
        return actual.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(t as u64 | 1 << 63);
    let mut out = actual.clone();
    for j in 0..actual.len() {
        for comp in [&mut out.pg, &mut out.qg, &mut out.pd, &mut out.qd] {
            let d: f64 = rng.gen_range(-model.eps..=model.eps);
            comp[j] *= 1.0 + d;
        }
    }
    out
}
