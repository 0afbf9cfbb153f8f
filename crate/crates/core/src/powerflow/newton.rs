use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{compute_injections, InjectionVector, OperatingState, PowerFlowError};
use crate::netmodel::{build_admittance, AdmittanceMatrix, NetworkModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    /// Max absolute bus mismatch (p.u.).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 30 }
    }
}

/// Solves the bus equations with every non-slack bus treated as PQ.
///
/// `injections` must cover all buses; the slack entry is ignored.
pub fn solve_power_flow(
    net: &NetworkModel,
    injections: &InjectionVector,
    warm_start: Option<&OperatingState>,
    opts: PowerFlowOptions,
) -> Result<OperatingState, PowerFlowError> {
    solve_power_flow_with(&build_admittance(net), injections, warm_start, opts)
}

/// Same as [`solve_power_flow`] with a prebuilt admittance matrix.
pub fn solve_power_flow_with(
    y: &AdmittanceMatrix,
    injections: &InjectionVector,
    warm_start: Option<&OperatingState>,
    opts: PowerFlowOptions,
) -> Result<OperatingState, PowerFlowError> {
    let n = y.dim();
    if injections.p.len() != n || injections.q.len() != n {
        return Err(PowerFlowError::DimensionMismatch { expected: n, got: injections.p.len() });
    }
    let mut st = match warm_start {
        Some(w) if w.len() == n => w.clone(),
        Some(w) => return Err(PowerFlowError::DimensionMismatch { expected: n, got: w.len() }),
        None => OperatingState::flat(n),
    };
    st.v[0] = 1.0;
    st.theta[0] = 0.0;
    if n == 1 {
        return Ok(st);
    }
    let m = n - 1;

    let mut mismatch = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let calc = compute_injections(&st, y)?;
        let mut f = DVector::zeros(2 * m);
        for i in 1..n {
            f[i - 1] = injections.p[i] - calc.p[i];
            f[m + i - 1] = injections.q[i] - calc.q[i];
        }
        mismatch = f.amax();
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= opts.tol {
            return Ok(st);
        }
        if iter == opts.max_iter {
            break;
        }
        let jac = jacobian(&st, y, &calc);
        let lu = jac.lu();
        let dx = lu.solve(&f).ok_or(PowerFlowError::SingularJacobian { iteration: iter })?;
        for i in 1..n {
            st.theta[i] += dx[i - 1];
            st.v[i] += dx[m + i - 1];
        }
        if st.v.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            break;
        }
    }
    Err(PowerFlowError::NonConvergence { iterations: opts.max_iter, mismatch })
}

/// Power flow with voltage-controlled buses: each `(bus, V)` in `pv` holds
/// its magnitude and its reactive injection becomes an output. The Q entries
/// of `injections` at those buses are ignored; the returned vector carries
/// the injections that realize the solution.
pub fn solve_power_flow_pv(
    net: &NetworkModel,
    injections: &InjectionVector,
    pv: &[(usize, f64)],
    opts: PowerFlowOptions,
) -> Result<(OperatingState, InjectionVector), PowerFlowError> {
    let y = build_admittance(net);
    let n = y.dim();
    if injections.p.len() != n || injections.q.len() != n {
        return Err(PowerFlowError::DimensionMismatch { expected: n, got: injections.p.len() });
    }
    let mut st = OperatingState::flat(n);
    let mut is_pv = vec![false; n];
    for &(b, v) in pv {
        if b == 0 || b >= n {
            return Err(PowerFlowError::DimensionMismatch { expected: n, got: b + 1 });
        }
        is_pv[b] = true;
        st.v[b] = v;
    }
    let m = n - 1;
    // kept rows/cols of the full Jacobian: all angles, PQ magnitudes
    let keep: Vec<usize> = (0..m).chain((0..m).filter(|&r| !is_pv[r + 1]).map(|r| m + r)).collect();
    let mut mismatch = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let calc = compute_injections(&st, &y)?;
        let f = DVector::from_iterator(
            keep.len(),
            keep.iter().map(|&r| if r < m { injections.p[r + 1] - calc.p[r + 1] } else { injections.q[r - m + 1] - calc.q[r - m + 1] }),
        );
        mismatch = f.amax();
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= opts.tol {
            return Ok((st, calc));
        }
        if iter == opts.max_iter || n == 1 {
            break;
        }
        let full = jacobian(&st, &y, &calc);
        let jac = DMatrix::from_fn(keep.len(), keep.len(), |a, b| full[(keep[a], keep[b])]);
        let dx = jac.lu().solve(&f).ok_or(PowerFlowError::SingularJacobian { iteration: iter })?;
        for (a, &c) in keep.iter().enumerate() {
            if c < m {
                st.theta[c + 1] += dx[a];
            } else {
                st.v[c - m + 1] += dx[a];
            }
        }
        if st.v.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            break;
        }
    }
    Err(PowerFlowError::NonConvergence { iterations: opts.max_iter, mismatch })
}

// Rows: [P_1..P_m, Q_1..Q_m]; columns: [theta_1..theta_m, V_1..V_m].
fn jacobian(st: &OperatingState, y: &AdmittanceMatrix, calc: &InjectionVector) -> DMatrix<f64> {
    let n = y.dim();
    let m = n - 1;
    let ym = y.matrix();
    let mut j = DMatrix::zeros(2 * m, 2 * m);
    for i in 1..n {
        let (vi, ti) = (st.v[i], st.theta[i]);
        let (gii, bii) = (ym[(i, i)].re, ym[(i, i)].im);
        let (pi, qi) = (calc.p[i], calc.q[i]);
        let r = i - 1;
        j[(r, r)] = -qi - bii * vi * vi;
        j[(r, m + r)] = pi / vi + gii * vi;
        j[(m + r, r)] = pi - gii * vi * vi;
        j[(m + r, m + r)] = qi / vi - bii * vi;
        for k in 1..n {
            if k == i {
                continue;
            }
            let yik = ym[(i, k)];
            if yik.re == 0.0 && yik.im == 0.0 {
                continue;
            }
            let (s, c) = (ti - st.theta[k]).sin_cos();
            let vk = st.v[k];
            let a = yik.re * s - yik.im * c;
            let b = yik.re * c + yik.im * s;
            let col = k - 1;
            j[(r, col)] = vi * vk * a;
            j[(r, m + col)] = vi * b;
            j[(m + r, col)] = -vi * vk * b;
            j[(m + r, m + col)] = vi * a;
        }
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{BusId, Line};

    fn two_bus() -> NetworkModel {
        NetworkModel::from_lines(2, [Line { from: BusId(0), to: BusId(1), g: 0.0, b: -10.0 }]).unwrap()
    }

    #[test]
    fn zero_injections_give_flat_state() {
        let st = solve_power_flow(&two_bus(), &InjectionVector::zeros(2), None, PowerFlowOptions::default()).unwrap();
        assert_eq!(st, OperatingState::flat(2));
    }

    // Independent oracle: with Q_1 = 0 the closed form gives V_1 = cos(th_1)
    // and P_1 = 10 V_1 sin(th_1); bisect th_1 on that scalar equation.
    fn bisect_two_bus(p1: f64) -> (f64, f64) {
        let f = |t: f64| 10.0 * t.cos() * t.sin() - p1;
        let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        (t.cos(), t)
    }

    #[test]
    fn two_bus_matches_bisection() {
        let mut inj = InjectionVector::zeros(2);
        inj.p[1] = -0.5;
        let st = solve_power_flow(&two_bus(), &inj, None, PowerFlowOptions::default()).unwrap();
        let (v, t) = bisect_two_bus(-0.5);
        assert!((st.v[1] - v).abs() < 1e-9, "{} vs {v}", st.v[1]);
        assert!((st.theta[1] - t).abs() < 1e-9);
    }

    #[test]
    fn beyond_loadability_fails() {
        // 10 V^2 - 10 V + 4 = 0 has no real root.
        let mut inj = InjectionVector::zeros(2);
        inj.q[1] = -4.0;
        let err = solve_power_flow(&two_bus(), &inj, None, PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(err, PowerFlowError::NonConvergence { .. }), "{err:?}");
    }

    #[test]
    fn voltage_controlled_bus_holds_magnitude() {
        // Lossless 2-bus: holding V_1 = 1 with P_1 = -0.5 needs
        // Q_1 = 10 - 10 cos(th) where 10 sin(th) = -0.5.
        let mut inj = InjectionVector::zeros(2);
        inj.p[1] = -0.5;
        let (st, out) = solve_power_flow_pv(&two_bus(), &inj, &[(1, 1.0)], PowerFlowOptions::default()).unwrap();
        let th = (-0.05f64).asin();
        assert_eq!(st.v[1], 1.0);
        assert!((st.theta[1] - th).abs() < 1e-9);
        assert!((out.q[1] - (10.0 - 10.0 * th.cos())).abs() < 1e-9);
        // feeding that Q back as a PQ bus reproduces the state
        let back = solve_power_flow(&two_bus(), &out, None, PowerFlowOptions::default()).unwrap();
        assert!((back.v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solution_reproduces_injections() {
        let net = NetworkModel::from_lines(
            4,
            [
                Line { from: BusId(0), to: BusId(1), g: 4.0, b: -12.0 },
                Line { from: BusId(1), to: BusId(2), g: 2.0, b: -6.0 },
                Line { from: BusId(2), to: BusId(3), g: 1.0, b: -5.0 },
                Line { from: BusId(0), to: BusId(3), g: 3.0, b: -9.0 },
            ],
        )
        .unwrap();
        let inj = InjectionVector { p: vec![0.0, -0.3, 0.2, -0.4], q: vec![0.0, -0.1, 0.05, -0.2] };
        let y = build_admittance(&net);
        let st = solve_power_flow_with(&y, &inj, None, PowerFlowOptions::default()).unwrap();
        let back = compute_injections(&st, &y).unwrap();
        for i in 1..4 {
            assert!((back.p[i] - inj.p[i]).abs() <= 1e-8);
            assert!((back.q[i] - inj.q[i]).abs() <= 1e-8);
        }
    }
}
