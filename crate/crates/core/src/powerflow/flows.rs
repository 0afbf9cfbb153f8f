use serde::{Deserialize, Serialize};

use super::OperatingState;
use crate::netmodel::{BusId, NetworkModel};

/// Sending-end flows in both directions of one line (p.u.).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFlow {
    pub from: BusId,
    pub to: BusId,
    pub p_ft: f64,
    pub q_ft: f64,
    pub p_tf: f64,
    pub q_tf: f64,
}

impl LineFlow {
    /// Flows as seen from `bus`: `(P_ik, Q_ik, P_ki, Q_ki)`.
    pub fn oriented(&self, bus: BusId) -> (f64, f64, f64, f64) {
        if bus == self.from {
            (self.p_ft, self.q_ft, self.p_tf, self.q_tf)
        } else {
            (self.p_tf, self.q_tf, self.p_ft, self.q_ft)
        }
    }
}

/// One entry per line, aligned with `NetworkModel::lines()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFlowSet {
    pub flows: Vec<LineFlow>,
}

/// `(P_ik, Q_ik)` for admittance-matrix entries `G_ik + jB_ik` (i.e. minus
/// the series admittance).
pub fn line_flow(vi: f64, ti: f64, vk: f64, tk: f64, g_ik: f64, b_ik: f64) -> (f64, f64) {
    let (s, c) = (ti - tk).sin_cos();
    let vv = vi * vk;
    let p = (vv * c - vi * vi) * g_ik + vv * s * b_ik;
    let q = vv * s * g_ik + (vi * vi - vv * c) * b_ik;
    (p, q)
}

pub fn compute_line_flows(state: &OperatingState, net: &NetworkModel) -> LineFlowSet {
    let flows = net
        .lines()
        .iter()
        .map(|l| {
            let (i, k) = (l.from.0, l.to.0);
            let (g, b) = l.y_entry();
            let (p_ft, q_ft) = line_flow(state.v[i], state.theta[i], state.v[k], state.theta[k], g, b);
            let (p_tf, q_tf) = line_flow(state.v[k], state.theta[k], state.v[i], state.theta[i], g, b);
            LineFlow { from: l.from, to: l.to, p_ft, q_ft, p_tf, q_tf }
        })
        .collect();
    LineFlowSet { flows }
}
