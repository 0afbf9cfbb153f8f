use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::netmodel::NetworkModel;
use crate::powerflow::{solve_power_flow, InjectionVector, OperatingState, PowerFlowError, PowerFlowOptions};

/// Droop volt-var curve: full injection below `v1`, a deadband on
/// `[v2, v3]`, full absorption above `v4`, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VvcCurve {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub u_max: f64,
}

impl Default for VvcCurve {
    fn default() -> Self {
        Self { v1: 0.95, v2: 0.98, v3: 1.02, v4: 1.05, u_max: 0.05 }
    }
}

impl VvcCurve {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let pts = [self.v1, self.v2, self.v3, self.v4, self.u_max];
        if pts.iter().any(|x| !x.is_finite()) || !(self.v1 < self.v2 && self.v2 <= self.v3 && self.v3 < self.v4) {
            return Err(ScenarioError::MalformedCurve(format!(
                "breakpoints must satisfy v1 < v2 <= v3 < v4, got {}, {}, {}, {}",
                self.v1, self.v2, self.v3, self.v4
            )));
        }
        if self.u_max < 0.0 {
            return Err(ScenarioError::MalformedCurve(format!("u_max must be >= 0, got {}", self.u_max)));
        }
        Ok(())
    }
}

/// Droop response to the local voltage, clamped to `[u_min, u_max]`.
pub fn vvc_control(v: f64, curve: &VvcCurve, u_min: f64, u_max: f64) -> Result<f64, ScenarioError> {
    curve.validate()?;
    if !(v > 0.0) {
        return Err(ScenarioError::InvalidConfig(format!("voltage must be positive, got {v}")));
    }
    let c = curve;
    let u = if v <= c.v1 {
        c.u_max
    } else if v < c.v2 {
        c.u_max * (c.v2 - v) / (c.v2 - c.v1)
    } else if v <= c.v3 {
        0.0
    } else if v < c.v4 {
        -c.u_max * (v - c.v3) / (c.v4 - c.v3)
    } else {
        -c.u_max
    };
    Ok(u.clamp(u_min, u_max))
}

/// Steady state of droop devices at every non-slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct DroopEquilibrium {
    pub state: OperatingState,
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Largest compensation change in the final sweep.
    pub residual: f64,
}

impl DroopEquilibrium {
    pub fn converged(&self) -> bool {
        self.residual <= DROOP_TOL
    }
}

const DROOP_TOL: f64 = 1e-10;
const DROOP_MAX_ITER: usize = 5000;
const MAX_STEP: f64 = 0.2;

/// Finds `u = droop(V(u))` with all devices responding to the plant voltage.
///
/// Droop devices settle in seconds, far below the control interval, so the
/// plant sits at this fixed point. It is reached by damped substitution
/// starting from `u0`; the step halves whenever an update grows and
/// recovers slowly while updates shrink.
pub fn droop_equilibrium(
    net: &NetworkModel,
    base: &InjectionVector,
    curve: &VvcCurve,
    u_min: f64,
    u_max: f64,
    u0: &[f64],
    warm: Option<&OperatingState>,
) -> Result<DroopEquilibrium, ScenarioError> {
    curve.validate()?;
    let n = net.bus_count();
    let mut u = u0.to_vec();
    u[0] = 0.0;
    let mut state = warm.cloned();
    let mut step = MAX_STEP;
    let mut last = f64::INFINITY;
    let solve = |u: &[f64], warm: Option<&OperatingState>| -> Result<OperatingState, PowerFlowError> {
        let mut inj = base.clone();
        for i in 1..n {
            inj.q[i] += u[i];
        }
        // the plant must resolve voltages well below the settling tolerance
        let opts = PowerFlowOptions { tol: 1e-11, ..Default::default() };
        solve_power_flow(net, &inj, warm, opts).or_else(|_| solve_power_flow(net, &inj, None, opts))
    };
    for k in 1..=DROOP_MAX_ITER {
        let s = solve(&u, state.as_ref()).map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
        let mut change: f64 = 0.0;
        let mut next = u.clone();
        for i in 1..n {
            let target = vvc_control(s.v[i], curve, u_min, u_max)?;
            change = change.max((target - u[i]).abs());
            next[i] = u[i] + step * (target - u[i]);
        }
        if change <= DROOP_TOL {
            return Ok(DroopEquilibrium { state: s, u, iterations: k, residual: change });
        }
        if change > last {
            step *= 0.5;
        } else {
            step = (step * 1.05).min(MAX_STEP);
        }
        last = change;
        u = next;
        state = Some(s);
        if k == DROOP_MAX_ITER {
            let s = solve(&u, state.as_ref()).map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
            return Ok(DroopEquilibrium { state: s, u, iterations: k, residual: change });
        }
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{BusId, Line};

    fn u(v: f64) -> f64 {
        vvc_control(v, &VvcCurve::default(), -0.05, 0.05).unwrap()
    }

    #[test]
    fn default_curve_points() {
        assert_eq!(u(1.0), 0.0);
        assert_eq!(u(0.95), 0.05);
        assert!((u(0.965) - 0.025).abs() < 1e-12);
        assert!((u(1.035) + 0.025).abs() < 1e-12);
        assert_eq!(u(0.9), 0.05);
        assert_eq!(u(1.1), -0.05);
        assert_eq!(vvc_control(0.9, &VvcCurve::default(), -0.01, 0.01).unwrap(), 0.01);
    }

    #[test]
    fn bad_curves_and_voltages() {
        let bad = VvcCurve { v2: 0.94, ..Default::default() };
        assert!(matches!(vvc_control(1.0, &bad, -0.05, 0.05), Err(ScenarioError::MalformedCurve(_))));
        assert!(vvc_control(0.0, &VvcCurve::default(), -0.05, 0.05).is_err());
    }

    #[test]
    fn two_bus_equilibrium_matches_scalar_root() {
        let net = NetworkModel::from_lines(2, [Line { from: BusId(0), to: BusId(1), g: 0.0, b: -10.0 }]).unwrap();
        let mut base = InjectionVector::zeros(2);
        base.q[1] = -0.4;
        let eq = droop_equilibrium(&net, &base, &VvcCurve::default(), -0.05, 0.05, &[0.0, 0.0], None).unwrap();
        assert!(eq.converged());
        let (v, u) = (eq.state.v[1], eq.u[1]);
        assert!((u - vvc_control(v, &VvcCurve::default(), -0.05, 0.05).unwrap()).abs() < 1e-9);
        // lossless radial bus with P = 0: Q = 10 V^2 - 10 V
        assert!((10.0 * v * v - 10.0 * v - (u - 0.4)).abs() < 1e-8);
        assert!(u > 0.0 && u < 0.05);
    }
}
