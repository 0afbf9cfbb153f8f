//! Consensus ADMM over bus agents that talk only to their neighbors.
//!
//! Agent `i` keeps replicas `x_i` of `(dV, dth)` for itself and each
//! non-slack neighbor, its private compensation `u_i`, the consensus value
//! `z_i` of its own increments and a multiplier `lambda_i` shaped like `x_i`.
//! Rounds are synchronous: local solves, replica exchange, consensus
//! averages, consensus exchange, multiplier updates, multiplier exchange.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc_central::{BusLimits, CostMode, MpcError, MpcInput, MpcSolution};
use crate::netmodel::{BusId, NetworkModel};
use crate::qpsolve::{solve_qp, QpError, QpProblem, QpSettings, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("invalid ADMM configuration: {0}")]
    InvalidConfig(String),
    #[error("the slack bus hosts no agent")]
    SlackBus,
    #[error("local constraint set of bus {0} is empty")]
    LocalInfeasible(BusId),
    #[error("local solve at bus {bus} failed: {err}")]
    Solver { bus: BusId, err: QpError },
    #[error("bus {bus} is missing the replica held by {holder}")]
    MissingReplica { bus: BusId, holder: BusId },
    #[error("ADMM stopped after {iterations} rounds with residual {residual:.3e}")]
    NotConverged { iterations: usize, residual: f64, last: Box<(MpcSolution, AdmmReport)> },
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// `E_i`: maps the consensus vector of the non-slack buses to agent `i`'s
/// replica slots (self first, then neighbors ascending).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorMatrix {
    pub bus: BusId,
    pub slots: Vec<BusId>,
    /// Total bus count including the slack.
    pub n: usize,
}

impl SelectorMatrix {
    /// Replica slot of bus `k`, if `i` holds one.
    pub fn slot(&self, k: BusId) -> Option<usize> {
        self.slots.iter().position(|&s| s == k)
    }

    /// `E_i(k)`: the `2|slots| x 2` column block of bus `k`.
    pub fn block(&self, k: BusId) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(2 * self.slots.len(), 2);
        if let Some(s) = self.slot(k) {
            e[(2 * s, 0)] = 1.0;
            e[(2 * s + 1, 1)] = 1.0;
        }
        e
    }

    /// Dense `E_i` over columns for buses `1..n`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(2 * self.slots.len(), 2 * (self.n - 1));
        for (s, k) in self.slots.iter().enumerate() {
            let c = 2 * (k.0 - 1);
            e[(2 * s, c)] = 1.0;
            e[(2 * s + 1, c + 1)] = 1.0;
        }
        e
    }
}

pub fn build_selector(i: BusId, neighbors: &BTreeSet<BusId>, n: usize) -> Result<SelectorMatrix, AdmmError> {
    if i.is_slack() {
        return Err(AdmmError::SlackBus);
    }
    let mut slots = vec![i];
    slots.extend(neighbors.iter().copied().filter(|k| !k.is_slack() && *k != i));
    Ok(SelectorMatrix { bus: i, slots, n })
}

/// Agent `i`'s share of the constraint set: two linearized balance rows over
/// `(x_i, u_i)` and boxes on every replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalConstraints {
    /// Coefficients of the P row over `x_i`.
    pub p_row: Vec<f64>,
    /// Coefficients of the Q row over `x_i`; `u_i` enters with `-1`.
    pub q_row: Vec<f64>,
    pub dp: f64,
    pub dq: f64,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: f64,
    pub u_hi: f64,
    /// `V_i^t - Vref`.
    pub v_err: f64,
    pub weight: f64,
    pub cost: CostMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub bus: BusId,
    pub selector: SelectorMatrix,
    pub x: Vec<f64>,
    pub u: f64,
    pub z: [f64; 2],
    pub lambda: Vec<f64>,
    /// Per-component penalty multipliers on `rho`, shaped like `x`.
    pub penalty: Vec<f64>,
    pub local: LocalConstraints,
}

impl AgentState {
    pub fn replica_len(&self) -> usize {
        2 * self.selector.slots.len()
    }
}

/// One agent per non-slack bus, with `C_i` taken from `inp`.
pub fn build_agents(inp: &MpcInput, net: &NetworkModel) -> Result<Vec<AgentState>, AdmmError> {
    inp.validate()?;
    let n = inp.bus_count();
    if net.bus_count() != n {
        return Err(MpcError::InconsistentDimensions { what: "network", expected: n, got: net.bus_count() }.into());
    }
    (1..n)
        .map(|i| {
            let bus = BusId(i);
            let nbrs: BTreeSet<BusId> = net.neighbors(bus).expect("bus in range").iter().copied().collect();
            let selector = build_selector(bus, &nbrs, n)?;
            let block = inp.partials_of(bus)?;
            let len = 2 * selector.slots.len();
            let mut p_row = vec![0.0; len];
            let mut q_row = vec![0.0; len];
            let mut x_lo = vec![0.0; len];
            let mut x_hi = vec![0.0; len];
            for (s, &k) in selector.slots.iter().enumerate() {
                let d = if k == bus {
                    block.own
                } else {
                    *block.neighbor(k).ok_or(MpcError::MissingPartials(k))?
                };
                p_row[2 * s] = d[0];
                p_row[2 * s + 1] = d[1];
                q_row[2 * s] = d[2];
                q_row[2 * s + 1] = d[3];
                let lim: &BusLimits = &inp.limits[k.0];
                x_lo[2 * s] = lim.v_min - inp.v[k.0];
                x_hi[2 * s] = lim.v_max - inp.v[k.0];
                x_lo[2 * s + 1] = lim.dtheta_min;
                x_hi[2 * s + 1] = lim.dtheta_max;
            }
            let local = LocalConstraints {
                p_row,
                q_row,
                dp: inp.delta_p(i),
                dq: inp.delta_q(i),
                x_lo,
                x_hi,
                u_lo: inp.limits[i].u_min,
                u_hi: inp.limits[i].u_max,
                v_err: inp.v[i] - inp.v_ref,
                weight: inp.weights[i],
                cost: inp.cost,
            };
            Ok(AgentState { bus, selector, x: vec![0.0; len], u: 0.0, z: [0.0; 2], lambda: vec![0.0; len], penalty: vec![1.0; len], local })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    /// Stop once `||x - Ez||_inf` falls to this value...
    pub tol_inf: f64,
    /// ...and the consensus moved by at most this much (`||z+ - z||_inf`)
    /// in the last round. Agreement alone arrives well before optimality;
    /// `f64::INFINITY` disables the check.
    pub tol_dual: f64,
    pub max_iter: usize,
    /// Over-relaxation factor in (0, 2); 1 is plain ADMM.
    pub relaxation: f64,
    /// How `rho` is spread over the replica components.
    pub scaling: PenaltyScaling,
    /// Record every message (large for long runs); counts are always kept.
    pub log_messages: bool,
}

/// Default bound on the per-round consensus movement. The iteration
/// contracts slowly, so the remaining distance to the optimum is a few
/// hundred times the last step.
pub const DEFAULT_TOL_DUAL: f64 = 1e-8;

/// Stopping threshold on `||x - Ez||_inf` used for a grid of `n` buses:
/// 3.5e-5 up to 30 buses, 1e-4 beyond.
pub fn default_tol_inf(n: usize) -> f64 {
    if n <= 30 {
        3.5e-5
    } else {
        1e-4
    }
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self::with_tol(100.0, 3.5e-5)
    }
}

impl AdmmConfig {
    pub fn with_tol(rho: f64, tol_inf: f64) -> Self {
        Self { rho, tol_inf, tol_dual: DEFAULT_TOL_DUAL, max_iter: 20_000, relaxation: 1.6, scaling: PenaltyScaling::default(), log_messages: false }
    }

    pub fn validate(&self) -> Result<(), AdmmError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(AdmmError::InvalidConfig(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol_inf > 0.0) {
            return Err(AdmmError::InvalidConfig(format!("tol_inf must be positive, got {}", self.tol_inf)));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(AdmmError::InvalidConfig(format!("relaxation must lie in (0, 2), got {}", self.relaxation)));
        }
        if let PenaltyScaling::Stiffness { v, theta } = self.scaling {
            if !(v > 0.0 && theta > 0.0 && v.is_finite() && theta.is_finite()) {
                return Err(AdmmError::InvalidConfig(format!("penalty scales must be positive, got {v}, {theta}")));
            }
        }
        if !(self.tol_dual > 0.0) {
            return Err(AdmmError::InvalidConfig(format!("tol_dual must be positive, got {}", self.tol_dual)));
        }
        Ok(())
    }
}

/// Per-component penalty `rho_(k,c) = rho * w_(k,c)` on the replicas of bus `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyScaling {
    /// `w = 1` everywhere.
    Uniform,
    /// `w_(k,V) = v |dQ_k/dV_k| / mean_j |dQ_j/dV_j|` and likewise for the
    /// angle with `dP/dtheta`. Stiff buses get a stiffer penalty, which keeps
    /// the consensus step in balance with the balance rows it must satisfy;
    /// the network means are agreed once at setup.
    Stiffness { v: f64, theta: f64 },
}

impl Default for PenaltyScaling {
    fn default() -> Self {
        PenaltyScaling::Stiffness { v: 0.09, theta: 0.009 }
    }
}

/// Sets every agent's `penalty` from `scaling`.
pub fn apply_penalty_scaling(agents: &mut [AgentState], inp: &MpcInput, scaling: PenaltyScaling) -> Result<(), AdmmError> {
    let (sv, st) = match scaling {
        PenaltyScaling::Uniform => {
            for a in agents.iter_mut() {
                a.penalty.iter_mut().for_each(|w| *w = 1.0);
            }
            return Ok(());
        }
        PenaltyScaling::Stiffness { v, theta } => (v, theta),
    };
    let n = inp.bus_count();
    let mut stiff = vec![[0.0; 2]; n];
    for (k, s) in stiff.iter_mut().enumerate().skip(1) {
        let d = inp.partials_of(BusId(k))?.own;
        *s = [d[2].abs(), d[1].abs()];
    }
    let mean = |c: usize| stiff[1..].iter().map(|s| s[c]).sum::<f64>() / (n - 1).max(1) as f64;
    let (mv, mt) = (mean(0), mean(1));
    if !(mv > 0.0 && mt > 0.0) {
        return Err(AdmmError::InvalidConfig("penalty scaling needs nonzero self partials".into()));
    }
    for a in agents.iter_mut() {
        for (s, k) in a.selector.slots.iter().enumerate() {
            // an isolated bus keeps the network mean
            let w = |x: f64, m: f64| if x > 0.0 { x / m } else { 1.0 };
            a.penalty[2 * s] = sv * w(stiff[k.0][0], mv);
            a.penalty[2 * s + 1] = st * w(stiff[k.0][1], mt);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Replica,
    Consensus,
    Multiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub sender: BusId,
    pub receiver: BusId,
    pub round: usize,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmReport {
    pub iterations: usize,
    /// `||x - Ez||_inf` after each round.
    pub residuals: Vec<f64>,
    /// `||z+ - z||_inf` after each round.
    pub dual_residuals: Vec<f64>,
    /// Messages sent per bus (index = bus; the slack sends none).
    pub messages_sent: Vec<usize>,
    pub converged: bool,
    /// Populated only with `AdmmConfig::log_messages`.
    pub log: Vec<Message>,
}

impl AdmmReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// `sum_k E_i(k) z_k`: the consensus values agent `i` sees, in slot order.
pub fn consensus_view(a: &AgentState, z: &[[f64; 2]]) -> Vec<f64> {
    a.selector.slots.iter().flat_map(|k| z[k.0]).collect()
}

/// Local QP over `[x_i; u_i]` (plus `|.|` splits in exact mode).
pub fn local_problem(a: &AgentState, view: &[f64], rho: f64) -> QpProblem {
    let c = &a.local;
    let nx = a.replica_len();
    let nv = nx + 1 + if c.cost == CostMode::Exact { 4 } else { 0 };
    let ju = nx;
    let mut p = QpProblem::new(nv);
    for j in 0..nx {
        let rho = rho * a.penalty[j];
        p.h[(j, j)] = rho;
        p.f[j] = a.lambda[j] - rho * view[j];
        p.constant += 0.5 * rho * view[j] * view[j] - a.lambda[j] * view[j];
        p.lo[j] = c.x_lo[j];
        p.hi[j] = c.x_hi[j];
    }
    p.lo[ju] = c.u_lo;
    p.hi[ju] = c.u_hi;
    let n_eq = if c.cost == CostMode::Exact { 4 } else { 2 };
    p.a_eq = DMatrix::zeros(n_eq, nv);
    p.b_eq = DVector::zeros(n_eq);
    for j in 0..nx {
        p.a_eq[(0, j)] = c.p_row[j];
        p.a_eq[(1, j)] = c.q_row[j];
    }
    p.a_eq[(1, ju)] = -1.0;
    p.b_eq[0] = c.dp;
    p.b_eq[1] = c.dq;
    match c.cost {
        CostMode::Squared => {
            p.h[(0, 0)] += 2.0;
            p.f[0] += 2.0 * c.v_err;
            p.h[(ju, ju)] = 2.0 * c.weight * c.weight;
            p.constant += c.v_err * c.v_err;
        }
        CostMode::Exact => {
            let (ep, en, up, un) = (nx + 1, nx + 2, nx + 3, nx + 4);
            for j in [ep, en, up, un] {
                p.lo[j] = 0.0;
            }
            p.a_eq[(2, 0)] = 1.0;
            p.a_eq[(2, ep)] = -1.0;
            p.a_eq[(2, en)] = 1.0;
            p.b_eq[2] = -c.v_err;
            p.a_eq[(3, ju)] = 1.0;
            p.a_eq[(3, up)] = -1.0;
            p.a_eq[(3, un)] = 1.0;
            p.f[ep] = 1.0;
            p.f[en] = 1.0;
            p.f[up] = c.weight.abs();
            p.f[un] = c.weight.abs();
        }
    }
    p
}

/// Step 1: minimizes the augmented Lagrangian of agent `i` over `C_i`.
pub fn local_update(a: &AgentState, view: &[f64], rho: f64) -> Result<(Vec<f64>, f64), AdmmError> {
    let p = local_problem(a, view, rho);
    let sol = solve_qp(&p, &QpSettings::default()).map_err(|err| match err {
        QpError::Infeasible { .. } => AdmmError::LocalInfeasible(a.bus),
        err => AdmmError::Solver { bus: a.bus, err },
    })?;
    let nx = a.replica_len();
    Ok((sol.y.as_slice()[..nx].to_vec(), sol.y[nx]))
}

/// Step 3: `z_i = mean over holders of (replica + multiplier / rho)`.
/// `incoming` holds one `(replica, multiplier)` pair per holder.
pub fn z_update(incoming: &[([f64; 2], [f64; 2])], rho: f64) -> [f64; 2] {
    let mut acc = [0.0; 2];
    for (x, l) in incoming {
        acc[0] += x[0] + l[0] / rho;
        acc[1] += x[1] + l[1] / rho;
    }
    let cnt = incoming.len() as f64;
    [acc[0] / cnt, acc[1] / cnt]
}

/// Step 5: `lambda_i + rho (x_i - sum_k E_i(k) z_k)`.
pub fn dual_update(a: &AgentState, view: &[f64], rho: f64) -> Vec<f64> {
    a.lambda.iter().zip(&a.x).zip(view).zip(&a.penalty).map(|(((l, x), v), w)| l + rho * w * (x - v)).collect()
}

fn slot_pair(v: &[f64], s: usize) -> [f64; 2] {
    [v[2 * s], v[2 * s + 1]]
}

/// Agents in `agents` must be in bus order, one per non-slack bus.
pub fn run_admm(
    agents: &mut [AgentState],
    inp: &MpcInput,
    cfg: &AdmmConfig,
) -> Result<(MpcSolution, AdmmReport), AdmmError> {
    cfg.validate()?;
    let n = inp.bus_count();
    for (idx, a) in agents.iter().enumerate() {
        if a.bus.0 != idx + 1 {
            return Err(AdmmError::InvalidConfig(format!("agent {} out of order", a.bus)));
        }
    }
    // holders[i]: agents keeping a replica of z_i, ascending, with their slot
    let mut holders: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (idx, a) in agents.iter().enumerate() {
        for (s, k) in a.selector.slots.iter().enumerate() {
            holders[k.0].push((idx, s));
        }
    }
    for a in agents.iter() {
        for k in &a.selector.slots[1..] {
            if !holders[a.bus.0].iter().any(|&(h, _)| agents[h].bus == *k) {
                return Err(AdmmError::MissingReplica { bus: a.bus, holder: *k });
            }
        }
    }

    let rho = cfg.rho;
    let mut z = vec![[0.0; 2]; n];
    for a in agents.iter() {
        z[a.bus.0] = a.z;
    }
    let mut report = AdmmReport { iterations: 0, residuals: Vec::new(), dual_residuals: Vec::new(), messages_sent: vec![0; n], converged: false, log: Vec::new() };

    for round in 1..=cfg.max_iter {
        // 1. local solves (parallel, collected in agent order)
        let updates: Vec<Result<(Vec<f64>, f64), AdmmError>> =
            agents.par_iter().map(|a| local_update(a, &consensus_view(a, &z), rho)).collect();
        let alpha = cfg.relaxation;
        let mut relaxed: Vec<Vec<f64>> = Vec::with_capacity(agents.len());
        for (a, up) in agents.iter_mut().zip(updates) {
            match up {
                Ok((x, u)) => {
                    let view = consensus_view(a, &z);
                    relaxed.push(x.iter().zip(&view).map(|(x, v)| alpha * x + (1.0 - alpha) * v).collect());
                    a.x = x;
                    a.u = u;
                }
                Err(AdmmError::Solver { err: QpError::MaxIterations(_), .. }) => {
                    let residual = report.final_residual();
                    let last = Box::new((assemble(agents, inp, &z), report));
                    return Err(AdmmError::NotConverged { iterations: round - 1, residual, last });
                }
                Err(e) => return Err(e),
            }
        }
        // 2-6: replica exchange, consensus, consensus exchange, multipliers
        exchange(agents, &mut report, round, MessageKind::Replica, cfg.log_messages);
        let new_z: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                if i == 0 {
                    return [0.0; 2];
                }
                let incoming: Vec<_> = holders[i]
                    .iter()
                    .map(|&(h, s)| {
                        let (l, w) = (slot_pair(&agents[h].lambda, s), slot_pair(&agents[h].penalty, s));
                        (slot_pair(&relaxed[h], s), [l[0] / w[0], l[1] / w[1]])
                    })
                    .collect();
                z_update(&incoming, rho)
            })
            .collect();
        let dual = z.iter().zip(&new_z).map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs())).fold(0.0, f64::max);
        exchange(agents, &mut report, round, MessageKind::Consensus, cfg.log_messages);
        let mut residual: f64 = 0.0;
        for (a, xr) in agents.iter_mut().zip(&relaxed) {
            let view = consensus_view(a, &new_z);
            for (x, v) in a.x.iter().zip(&view) {
                residual = residual.max((x - v).abs());
            }
            a.lambda = a.lambda.iter().zip(xr).zip(&view).zip(&a.penalty).map(|(((l, x), v), w)| l + rho * w * (x - v)).collect();
        }
        exchange(agents, &mut report, round, MessageKind::Multiplier, cfg.log_messages);
        z = new_z;
        for a in agents.iter_mut() {
            a.z = z[a.bus.0];
        }

        report.iterations = round;
        report.residuals.push(residual);
        report.dual_residuals.push(dual);
        if residual <= cfg.tol_inf && dual <= cfg.tol_dual {
            report.converged = true;
            return Ok((assemble(agents, inp, &z), report));
        }
    }
    let residual = report.final_residual();
    let iterations = report.iterations;
    Err(AdmmError::NotConverged { iterations, residual, last: Box::new((assemble(agents, inp, &z), report)) })
}

// Each agent sends one message per non-slack neighbor.
fn exchange(agents: &[AgentState], report: &mut AdmmReport, round: usize, kind: MessageKind, log: bool) {
    for a in agents {
        for &k in &a.selector.slots[1..] {
            report.messages_sent[a.bus.0] += 1;
            if log {
                report.log.push(Message { sender: a.bus, receiver: k, round, kind });
            }
        }
    }
}

fn assemble(agents: &[AgentState], inp: &MpcInput, z: &[[f64; 2]]) -> MpcSolution {
    let n = inp.bus_count();
    let mut dv = vec![0.0; n];
    let mut dtheta = vec![0.0; n];
    let mut u = vec![0.0; n];
    for a in agents {
        dv[a.bus.0] = z[a.bus.0][0];
        dtheta[a.bus.0] = z[a.bus.0][1];
        u[a.bus.0] = a.u;
    }
    let objective = inp.objective_of(&dv, &u);
    MpcSolution { dv, dtheta, u, objective, status: QpStatus::Optimal, residuals: Default::default(), iterations: 0 }
}

/// Builds agents for `inp`, scales their penalties and runs ADMM from zero
/// multipliers.
pub fn solve_distributed(inp: &MpcInput, net: &NetworkModel, cfg: &AdmmConfig) -> Result<(MpcSolution, AdmmReport), AdmmError> {
    cfg.validate()?;
    let mut agents = build_agents(inp, net)?;
    apply_penalty_scaling(&mut agents, inp, cfg.scaling)?;
    run_admm(&mut agents, inp, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> BTreeSet<BusId> {
        ids.iter().map(|&i| BusId(i)).collect()
    }

    #[test]
    fn selector_for_four_bus_chain() {
        // slack 0 - 1 - 2 - 3 with 0 also tied to 1
        let e2 = build_selector(BusId(2), &set(&[1, 3]), 4).unwrap();
        let i = DMatrix::<f64>::identity(2, 2);
        let z = DMatrix::<f64>::zeros(2, 2);
        let mut expect = DMatrix::zeros(6, 6);
        // rows: self (2), neighbor 1, neighbor 3; columns: buses 1, 2, 3
        expect.view_mut((0, 2), (2, 2)).copy_from(&i);
        expect.view_mut((2, 0), (2, 2)).copy_from(&i);
        expect.view_mut((4, 4), (2, 2)).copy_from(&i);
        assert_eq!(e2.to_dense(), expect);
        let e1 = build_selector(BusId(1), &set(&[0, 2]), 4).unwrap();
        let mut expect = DMatrix::zeros(4, 6);
        expect.view_mut((0, 0), (2, 2)).copy_from(&i);
        expect.view_mut((2, 2), (2, 2)).copy_from(&i);
        assert_eq!(e1.to_dense(), expect);
        assert_eq!(e1.block(BusId(3)).view((0, 0), (2, 2)), z.view((0, 0), (2, 2)));
    }

    #[test]
    fn selector_edge_cases() {
        let e = build_selector(BusId(1), &set(&[0]), 2).unwrap();
        assert_eq!(e.to_dense(), DMatrix::identity(2, 2));
        assert_eq!(build_selector(BusId(0), &set(&[1]), 2), Err(AdmmError::SlackBus));
    }

    #[test]
    fn z_update_examples() {
        let r = 100.0;
        let z = z_update(&[([0.4, -0.1], [0.0; 2]); 3], r);
        assert!((z[0] - 0.4).abs() < 1e-15 && (z[1] + 0.1).abs() < 1e-15);
        let z = z_update(&[([0.1, 0.0], [0.0; 2]), ([0.3, 0.0], [0.0; 2])], r);
        assert!((z[0] - 0.2).abs() < 1e-15);
        let z = z_update(&[([0.1, 0.0], [r * 0.1, 0.0]), ([0.3, 0.0], [-r * 0.1, 0.0])], r);
        assert!((z[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_nonpositive_rho() {
        let cfg = AdmmConfig { rho: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(AdmmError::InvalidConfig(_))));
        let cfg = AdmmConfig { rho: -1.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(AdmmError::InvalidConfig(_))));
    }
}
