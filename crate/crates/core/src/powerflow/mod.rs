//! Quasi-steady AC plant: injections, Newton-Raphson power flow, line flows
//! and noisy measurement snapshots.

mod flows;
mod measure;
mod newton;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::AdmittanceMatrix;

pub use flows::{compute_line_flows, line_flow, LineFlow, LineFlowSet};
pub use measure::{measure, LineMeasurement, LocalMeasurement, MeasurementSnapshot, NeighborMeasurement, NoiseConfig};
pub use newton::{solve_power_flow, solve_power_flow_pv, solve_power_flow_with, PowerFlowOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("power-flow Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

/// Bus voltage magnitudes (p.u.) and angles (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl OperatingState {
    pub fn flat(n: usize) -> Self {
        Self { v: vec![1.0; n], theta: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn min_voltage(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_voltage(&self) -> f64 {
        self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Net bus injections `P_in = P_G - P_D`, `Q_in = Q_G - Q_D` (p.u.).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionVector {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionVector {
    pub fn zeros(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Evaluates the bus power-flow equations at `state`.
pub fn compute_injections(state: &OperatingState, y: &AdmittanceMatrix) -> Result<InjectionVector, PowerFlowError> {
    let n = y.dim();
    if state.v.len() != n || state.theta.len() != n {
        return Err(PowerFlowError::DimensionMismatch { expected: n, got: state.v.len().min(state.theta.len()) });
    }
    let mut out = InjectionVector::zeros(n);
    let m = y.matrix();
    for i in 0..n {
        let (mut p, mut q) = (0.0, 0.0);
        for k in 0..n {
            let yik = m[(i, k)];
            if yik.re == 0.0 && yik.im == 0.0 {
                continue;
            }
            let (s, c) = (state.theta[i] - state.theta[k]).sin_cos();
            let vv = state.v[i] * state.v[k];
            p += vv * (yik.re * c + yik.im * s);
            q += vv * (yik.re * s - yik.im * c);
        }
        out.p[i] = p;
        out.q[i] = q;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, BusId, Line, NetworkModel};

    #[test]
    fn flat_state_has_zero_injections() {
        let net = NetworkModel::from_lines(
            3,
            [
                Line { from: BusId(0), to: BusId(1), g: 2.0, b: -8.0 },
                Line { from: BusId(1), to: BusId(2), g: 1.0, b: -3.0 },
            ],
        )
        .unwrap();
        let inj = compute_injections(&OperatingState::flat(3), &build_admittance(&net)).unwrap();
        assert!(inj.p.iter().chain(&inj.q).all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn two_bus_reference_values() {
        // Hand-expanded bus equations for a single lossless line y = -j10:
        // P_1 = 10 V_1 V_0 sin(th_1 - th_0), Q_1 = 10 V_1^2 - 10 V_1 V_0 cos(th_1 - th_0).
        let net = NetworkModel::from_lines(2, [Line { from: BusId(0), to: BusId(1), g: 0.0, b: -10.0 }]).unwrap();
        let st = OperatingState { v: vec![1.0, 0.98], theta: vec![0.0, -0.05] };
        let inj = compute_injections(&st, &build_admittance(&net)).unwrap();
        // Frozen from the closed form above evaluated with mpmath at 30 digits.
        let p1 = -0.489_795_858_852_647_6_f64;
        let q1 = -0.183_752_551_870_669_2_f64;
        assert!((inj.p[1] - p1).abs() < 1e-13, "{}", inj.p[1]);
        assert!((inj.q[1] - q1).abs() < 1e-13, "{}", inj.q[1]);
        assert!((inj.p[0] + inj.p[1]).abs() < 1e-14);
    }

    #[test]
    fn lossless_network_balances() {
        let net = NetworkModel::from_lines(
            3,
            [
                Line { from: BusId(0), to: BusId(1), g: 0.0, b: -8.0 },
                Line { from: BusId(1), to: BusId(2), g: 0.0, b: -3.0 },
                Line { from: BusId(0), to: BusId(2), g: 0.0, b: -4.0 },
            ],
        )
        .unwrap();
        let st = OperatingState { v: vec![1.0, 0.97, 1.01], theta: vec![0.0, -0.04, 0.02] };
        let inj = compute_injections(&st, &build_admittance(&net)).unwrap();
        assert!(inj.p.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let net = NetworkModel::from_lines(2, [Line { from: BusId(0), to: BusId(1), g: 0.0, b: -10.0 }]).unwrap();
        let err = compute_injections(&OperatingState::flat(3), &build_admittance(&net)).unwrap_err();
        assert!(matches!(err, PowerFlowError::DimensionMismatch { expected: 2, .. }));
    }
}
