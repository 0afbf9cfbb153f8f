//! One-step-ahead centralized MPC over `(dV, dth, u)` of the non-slack buses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::PartialBlock;
use crate::netmodel::BusId;
use crate::powerflow::{InjectionVector, OperatingState};
use crate::qpsolve::{solve_qp, KktResiduals, QpError, QpProblem, QpSettings, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("no partial block for bus {0}")]
    MissingPartials(BusId),
    #[error("{what} has length {got}, expected {expected}")]
    InconsistentDimensions { what: &'static str, expected: usize, got: usize },
    #[error("limits of bus {0} are not ordered")]
    InvalidBounds(BusId),
    #[error("MPC problem is infeasible for the predicted disturbance")]
    Infeasible,
    #[error(transparent)]
    Solver(QpError),
}

/// Box limits of one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub dtheta_min: f64,
    pub dtheta_max: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for BusLimits {
    fn default() -> Self {
        Self { v_min: 0.95, v_max: 1.05, dtheta_min: -0.1, dtheta_max: 0.1, u_min: -0.05, u_max: 0.05 }
    }
}

impl BusLimits {
    pub fn is_ordered(&self) -> bool {
        self.v_min <= self.v_max && self.dtheta_min <= self.dtheta_max && self.u_min <= self.u_max
    }
}

/// How each scalar term of the cost is penalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// `(V + dV - Vref)^2 + (w u)^2`
    #[default]
    Squared,
    /// `|V + dV - Vref| + |w u|`, via nonnegative split variables.
    Exact,
}

/// Controller parameters shared by all buses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcSettings {
    pub v_ref: f64,
    pub weight: f64,
    pub limits: BusLimits,
    pub cost: CostMode,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self { v_ref: 1.0, weight: 1.0, limits: BusLimits::default(), cost: CostMode::Squared }
    }
}

/// Everything one control instant needs. Vectors are indexed by bus; entries
/// for the slack bus (index 0) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcInput {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_in: Vec<f64>,
    pub q_in: Vec<f64>,
    pub p_pred: Vec<f64>,
    pub q_pred: Vec<f64>,
    /// One block per bus, in bus order (the slack block may be absent).
    pub partials: Vec<PartialBlock>,
    pub v_ref: f64,
    pub weights: Vec<f64>,
    pub limits: Vec<BusLimits>,
    pub cost: CostMode,
}

impl MpcInput {
    pub fn new(
        state: &OperatingState,
        current: &InjectionVector,
        predicted: &InjectionVector,
        partials: Vec<PartialBlock>,
        settings: &MpcSettings,
    ) -> Self {
        let n = state.len();
        Self {
            v: state.v.clone(),
            theta: state.theta.clone(),
            p_in: current.p.clone(),
            q_in: current.q.clone(),
            p_pred: predicted.p.clone(),
            q_pred: predicted.q.clone(),
            partials,
            v_ref: settings.v_ref,
            weights: vec![settings.weight; n],
            limits: vec![settings.limits; n],
            cost: settings.cost,
        }
    }

    pub fn bus_count(&self) -> usize {
        self.v.len()
    }

    /// Number of non-slack buses.
    pub fn n_ctrl(&self) -> usize {
        self.v.len().saturating_sub(1)
    }

    pub fn delta_p(&self, i: usize) -> f64 {
        self.p_pred[i] - self.p_in[i]
    }

    pub fn delta_q(&self, i: usize) -> f64 {
        self.q_pred[i] - self.q_in[i]
    }

    pub fn partials_of(&self, bus: BusId) -> Result<&PartialBlock, MpcError> {
        self.partials.iter().find(|b| b.bus == bus).ok_or(MpcError::MissingPartials(bus))
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let n = self.bus_count();
        let checks: [(&'static str, usize); 7] = [
            ("theta", self.theta.len()),
            ("p_in", self.p_in.len()),
            ("q_in", self.q_in.len()),
            ("p_pred", self.p_pred.len()),
            ("q_pred", self.q_pred.len()),
            ("weights", self.weights.len()),
            ("limits", self.limits.len()),
        ];
        for (what, got) in checks {
            if got != n {
                return Err(MpcError::InconsistentDimensions { what, expected: n, got });
            }
        }
        for i in 1..n {
            if !self.limits[i].is_ordered() {
                return Err(MpcError::InvalidBounds(BusId(i)));
            }
            let block = self.partials_of(BusId(i))?;
            if let Some(&(k, _)) = block.neighbors.iter().find(|(k, _)| k.0 >= n) {
                return Err(MpcError::InconsistentDimensions { what: "partial block neighbor", expected: n, got: k.0 + 1 });
            }
        }
        Ok(())
    }

    /// `sum_i (V_i + dV_i - Vref)^2 + (w_i u_i)^2` (or absolute values).
    pub fn objective_of(&self, dv: &[f64], u: &[f64]) -> f64 {
        (1..self.bus_count())
            .map(|i| {
                let e = self.v[i] + dv[i] - self.v_ref;
                let c = self.weights[i] * u[i];
                match self.cost {
                    CostMode::Squared => e * e + c * c,
                    CostMode::Exact => e.abs() + c.abs(),
                }
            })
            .sum()
    }
}

/// Optimal increments and compensation, indexed by bus (slack entries 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub dv: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub u: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
}

/// Column of `dV_i`, `dth_i`, `u_i` for non-slack bus `i` when there are `m`
/// non-slack buses.
pub fn var_index(m: usize, i: usize) -> (usize, usize, usize) {
    (i - 1, m + i - 1, 2 * m + i - 1)
}

/// Builds the QP with decision vector `[dV; dth; u]` (plus split variables
/// in exact mode), `2N` equality rows and the box limits.
pub fn build_cmpc(inp: &MpcInput) -> Result<QpProblem, MpcError> {
    inp.validate()?;
    let m = inp.n_ctrl();
    let base = 3 * m;
    let extra = if inp.cost == CostMode::Exact { 4 * m } else { 0 };
    let nv = base + extra;
    let n_eq = 2 * m + if inp.cost == CostMode::Exact { 2 * m } else { 0 };
    let mut p = QpProblem::new(nv);
    p.a_eq = DMatrix::zeros(n_eq, nv);
    p.b_eq = DVector::zeros(n_eq);
    p.names = vec![String::new(); nv];

    for i in 1..=m {
        let (jv, jt, ju) = var_index(m, i);
        let lim = &inp.limits[i];
        p.lo[jv] = lim.v_min - inp.v[i];
        p.hi[jv] = lim.v_max - inp.v[i];
        p.lo[jt] = lim.dtheta_min;
        p.hi[jt] = lim.dtheta_max;
        p.lo[ju] = lim.u_min;
        p.hi[ju] = lim.u_max;
        p.names[jv] = format!("dV[{i}]");
        p.names[jt] = format!("dth[{i}]");
        p.names[ju] = format!("u[{i}]");

        let block = inp.partials_of(BusId(i))?;
        let (rp, rq) = (i - 1, m + i - 1);
        p.a_eq[(rp, jv)] += block.own[0];
        p.a_eq[(rp, jt)] += block.own[1];
        p.a_eq[(rq, jv)] += block.own[2];
        p.a_eq[(rq, jt)] += block.own[3];
        for &(k, d) in &block.neighbors {
            if k.is_slack() {
                continue;
            }
            let (kv, kt, _) = var_index(m, k.0);
            p.a_eq[(rp, kv)] += d[0];
            p.a_eq[(rp, kt)] += d[1];
            p.a_eq[(rq, kv)] += d[2];
            p.a_eq[(rq, kt)] += d[3];
        }
        p.a_eq[(rq, ju)] = -1.0;
        p.b_eq[rp] = inp.delta_p(i);
        p.b_eq[rq] = inp.delta_q(i);

        let e0 = inp.v[i] - inp.v_ref;
        let w = inp.weights[i];
        match inp.cost {
            CostMode::Squared => {
                p.h[(jv, jv)] = 2.0;
                p.f[jv] = 2.0 * e0;
                p.h[(ju, ju)] = 2.0 * w * w;
                p.constant += e0 * e0;
            }
            CostMode::Exact => {
                // dV - e+ + e- = -e0 and u - u+ + u- = 0, all splits >= 0
                let (ep, en, up, un) = (base + 4 * (i - 1), base + 4 * (i - 1) + 1, base + 4 * (i - 1) + 2, base + 4 * (i - 1) + 3);
                for (j, name) in [(ep, "e+"), (en, "e-"), (up, "u+"), (un, "u-")] {
                    p.lo[j] = 0.0;
                    p.names[j] = format!("{name}[{i}]");
                }
                let (r1, r2) = (2 * m + 2 * (i - 1), 2 * m + 2 * (i - 1) + 1);
                p.a_eq[(r1, jv)] = 1.0;
                p.a_eq[(r1, ep)] = -1.0;
                p.a_eq[(r1, en)] = 1.0;
                p.b_eq[r1] = -e0;
                p.a_eq[(r2, ju)] = 1.0;
                p.a_eq[(r2, up)] = -1.0;
                p.a_eq[(r2, un)] = 1.0;
                p.f[ep] = 1.0;
                p.f[en] = 1.0;
                p.f[up] = w.abs();
                p.f[un] = w.abs();
            }
        }
    }
    Ok(p)
}

pub fn solve_cmpc(inp: &MpcInput) -> Result<MpcSolution, MpcError> {
    solve_cmpc_with(inp, &QpSettings::default())
}

pub fn solve_cmpc_with(inp: &MpcInput, settings: &QpSettings) -> Result<MpcSolution, MpcError> {
    let p = build_cmpc(inp)?;
    let sol = solve_qp(&p, settings).map_err(|e| match e {
        QpError::Infeasible { .. } => MpcError::Infeasible,
        other => MpcError::Solver(other),
    })?;
    let n = inp.bus_count();
    let m = inp.n_ctrl();
    let mut dv = vec![0.0; n];
    let mut dtheta = vec![0.0; n];
    let mut u = vec![0.0; n];
    for i in 1..=m {
        let (jv, jt, ju) = var_index(m, i);
        dv[i] = sol.y[jv];
        dtheta[i] = sol.y[jt];
        u[i] = sol.y[ju];
    }
    let objective = inp.objective_of(&dv, &u);
    Ok(MpcSolution { dv, dtheta, u, objective, status: sol.status, residuals: sol.residuals, iterations: sol.iterations })
}

/// Largest violation of the linearized balance rows at a solution.
pub fn equality_residual(inp: &MpcInput, sol: &MpcSolution) -> Result<f64, MpcError> {
    let mut worst: f64 = 0.0;
    for i in 1..inp.bus_count() {
        let b = inp.partials_of(BusId(i))?;
        let mut rp = b.own[0] * sol.dv[i] + b.own[1] * sol.dtheta[i] - inp.delta_p(i);
        let mut rq = b.own[2] * sol.dv[i] + b.own[3] * sol.dtheta[i] - inp.delta_q(i) - sol.u[i];
        for &(k, d) in &b.neighbors {
            rp += d[0] * sol.dv[k.0] + d[1] * sol.dtheta[k.0];
            rq += d[2] * sol.dv[k.0] + d[3] * sol.dtheta[k.0];
        }
        worst = worst.max(rp.abs()).max(rq.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Slack + one bus joined by a lossless line with B = -10, flat state.
    fn two_bus(dq: f64) -> MpcInput {
        let block = PartialBlock { bus: BusId(1), own: [0.0, 10.0, 10.0, 0.0], neighbors: vec![(BusId(0), [0.0, -10.0, -10.0, 0.0])] };
        MpcInput {
            v: vec![1.0, 1.0],
            theta: vec![0.0, 0.0],
            p_in: vec![0.0, 0.0],
            q_in: vec![0.0, 0.0],
            p_pred: vec![0.0, 0.0],
            q_pred: vec![0.0, dq],
            partials: vec![block],
            v_ref: 1.0,
            weights: vec![1.0, 1.0],
            limits: vec![BusLimits::default(); 2],
            cost: CostMode::Squared,
        }
    }

    #[test]
    fn structural_counts() {
        let mut inp = two_bus(0.0);
        inp.v = vec![1.0; 4];
        inp.theta = vec![0.0; 4];
        for v in [&mut inp.p_in, &mut inp.q_in, &mut inp.p_pred, &mut inp.q_pred, &mut inp.weights] {
            *v = vec![0.0; 4];
        }
        inp.limits = vec![BusLimits::default(); 4];
        inp.partials = (1..4).map(|i| PartialBlock { bus: BusId(i), own: [1.0, 2.0, 3.0, 4.0], neighbors: vec![] }).collect();
        let p = build_cmpc(&inp).unwrap();
        assert_eq!(p.num_vars(), 9);
        assert_eq!(p.num_eq(), 6);
    }

    #[test]
    fn steady_case_does_nothing() {
        let s = solve_cmpc(&two_bus(0.0)).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.dv[1].abs() < 1e-12 && s.dtheta[1].abs() < 1e-12 && s.u[1].abs() < 1e-12);
        assert!(s.objective.abs() < 1e-12);
    }

    #[test]
    fn missing_block_and_bad_dimensions() {
        let mut inp = two_bus(0.0);
        inp.partials.clear();
        assert_eq!(build_cmpc(&inp), Err(MpcError::MissingPartials(BusId(1))));
        let mut inp = two_bus(0.0);
        inp.weights.pop();
        assert!(matches!(build_cmpc(&inp), Err(MpcError::InconsistentDimensions { what: "weights", .. })));
    }

    #[test]
    fn squared_two_bus_closed_form() {
        // Q row: 10 dV - u = dq, P row forces dth = 0. Minimizing
        // dV^2 + u^2 along u = 10 dV - dq gives dV = 10 dq / 101.
        let dq = -0.02;
        let s = solve_cmpc(&two_bus(dq)).unwrap();
        let dv = 10.0 * dq / 101.0;
        assert!((s.dv[1] - dv).abs() < 1e-12);
        assert!((s.u[1] - (10.0 * dv - dq)).abs() < 1e-12);
    }

    #[test]
    fn exact_mode_two_bus() {
        // |dV| + |u| with u = 10 dV - dq: one unit of dV balances ten units
        // of Q, so the disturbance is absorbed entirely by dV = dq / 10.
        let dq = -0.02;
        let mut inp = two_bus(dq);
        inp.cost = CostMode::Exact;
        let s = solve_cmpc(&inp).unwrap();
        assert!((s.dv[1] - dq / 10.0).abs() < 1e-12, "{s:?}");
        assert!(s.u[1].abs() < 1e-12);
        assert!((s.objective - 0.002).abs() < 1e-12);
    }

    #[test]
    fn impossible_disturbance_is_infeasible() {
        // dV <= 0.05 and u <= 0.05 cap the Q row at 10*0.05 + 0.05
        let s = solve_cmpc(&two_bus(-0.6));
        assert_eq!(s, Err(MpcError::Infeasible));
    }
}
