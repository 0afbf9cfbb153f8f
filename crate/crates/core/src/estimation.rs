//! Line-parameter estimation from flow measurements and the linearization
//! blocks built from those estimates.
//!
//! Parameters are the off-diagonal admittance-matrix entries
//! `(G_ik, B_ik) = -(g_ik, b_ik)` of each line. With zero shunts, the
//! diagonal entries follow as `G_ii = -sum_k G_ik`, `B_ii = -sum_k B_ik`, so
//! the per-line pairs are all a bus needs for its linearized equations.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BusId, NetworkModel};
use crate::powerflow::{LineMeasurement, MeasurementSnapshot, OperatingState};

pub const DEFAULT_COND_THRESHOLD: f64 = 1e12;
/// Regressors below this size come from a line whose endpoints sit at the
/// same voltage phasor, so the fit would be round-off.
pub const DEFAULT_MIN_EXCITATION: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("no measurement rows supplied")]
    NoData,
    #[error("uninformative measurements: cond(A'A) = {cond:.3e}")]
    SingularInformation { cond: f64 },
    #[error("no estimate for line {bus}-{neighbor}")]
    MissingEstimate { bus: BusId, neighbor: BusId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Number of most recent snapshots stacked into one regression.
    pub window: usize,
    pub cond_threshold: f64,
    /// Smallest acceptable largest singular value of the stacked regressors.
    pub min_excitation: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { window: 1, cond_threshold: DEFAULT_COND_THRESHOLD, min_excitation: DEFAULT_MIN_EXCITATION }
    }
}

/// Result of one least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub g: f64,
    pub b: f64,
    /// Condition number of `A'A`.
    pub cond: f64,
    /// Largest singular value of `A`.
    pub excitation: f64,
}

/// Regressor rows `A` (two columns: `G`, `B`) and targets `b` for one snapshot.
pub fn regression_rows(m: &LineMeasurement) -> ([[f64; 2]; 4], [f64; 4]) {
    let (s, c) = (m.ti - m.tk).sin_cos();
    let vv = m.vi * m.vk;
    // sin(th_k - th_i) = -s, cos is even
    let a = [
        [vv * c - m.vi * m.vi, vv * s],
        [vv * s, m.vi * m.vi - vv * c],
        [vv * c - m.vk * m.vk, -vv * s],
        [-vv * s, m.vk * m.vk - vv * c],
    ];
    (a, [m.p_ik, m.q_ik, m.p_ki, m.q_ki])
}

/// Least-squares `(G_ik, B_ik)` from stacked snapshots of one line.
pub fn estimate_line(rows: &[LineMeasurement], cond_threshold: f64) -> Result<LineFit, EstimationError> {
    if rows.is_empty() {
        return Err(EstimationError::NoData);
    }
    let mut a = DMatrix::zeros(4 * rows.len(), 2);
    let mut rhs = DVector::zeros(4 * rows.len());
    for (s, m) in rows.iter().enumerate() {
        let (ar, br) = regression_rows(m);
        for r in 0..4 {
            a[(4 * s + r, 0)] = ar[r][0];
            a[(4 * s + r, 1)] = ar[r][1];
            rhs[4 * s + r] = br[r];
        }
    }
    let qr = a.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(cond < cond_threshold) {
        return Err(EstimationError::SingularInformation { cond });
    }
    let qtb = qr.q().transpose() * rhs;
    let theta = r
        .solve_upper_triangular(&qtb)
        .ok_or(EstimationError::SingularInformation { cond })?;
    Ok(LineFit { g: theta[0], b: theta[1], cond, excitation: smax })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineEstimate {
    pub from: BusId,
    pub to: BusId,
    pub g: f64,
    pub b: f64,
    pub cond: f64,
    /// Agent that computed the fit and shared it with the other endpoint.
    pub owner: BusId,
    /// True when this instant was uninformative and the previous fit was kept.
    pub reused: bool,
    /// False while the line has never been informative. Such a line has
    /// carried no measurable flow, so it is modeled as open (`g = b = 0`).
    pub observed: bool,
}

/// Estimates for every line at one instant, aligned with `NetworkModel::lines()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceEstimate {
    pub lines: Vec<LineEstimate>,
    pub window: usize,
}

impl AdmittanceEstimate {
    /// Estimates from the true line parameters.
    pub fn exact(net: &NetworkModel) -> Self {
        let lines = net
            .lines()
            .iter()
            .map(|l| {
                let (g, b) = l.y_entry();
                LineEstimate {
                    from: l.from,
                    to: l.to,
                    g,
                    b,
                    cond: 1.0,
                    owner: line_owner(l.from, l.to),
                    reused: false,
                    observed: true,
                }
            })
            .collect();
        Self { lines, window: 0 }
    }

    /// `(G_ik, B_ik)` for every line at `bus`, keyed by neighbor.
    pub fn for_bus(&self, net: &NetworkModel, bus: BusId) -> BTreeMap<BusId, (f64, f64)> {
        net.neighbors(bus)
            .map(|ns| {
                ns.iter()
                    .filter_map(|&k| net.line_position(bus, k).map(|p| (k, (self.lines[p].g, self.lines[p].b))))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// The endpoint that runs the regression: the lower index, unless that is
/// the agent-less slack bus.
pub fn line_owner(a: BusId, b: BusId) -> BusId {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo.is_slack() {
        hi
    } else {
        lo
    }
}

/// Per-line sliding windows of measurements and the last usable fits.
#[derive(Debug, Clone)]
pub struct LineEstimator {
    cfg: EstimatorConfig,
    windows: Vec<VecDeque<LineMeasurement>>,
    last: Vec<Option<LineFit>>,
}

impl LineEstimator {
    pub fn new(net: &NetworkModel, cfg: EstimatorConfig) -> Self {
        let n = net.lines().len();
        Self { cfg: EstimatorConfig { window: cfg.window.max(1), ..cfg }, windows: vec![VecDeque::new(); n], last: vec![None; n] }
    }

    pub fn config(&self) -> EstimatorConfig {
        self.cfg
    }

    /// Adds one snapshot and refits every line. An uninformative line keeps
    /// its previous fit, or stays open if it never had one.
    pub fn update(&mut self, net: &NetworkModel, snap: &MeasurementSnapshot) -> Result<AdmittanceEstimate, EstimationError> {
        let mut lines = Vec::with_capacity(net.lines().len());
        for (pos, l) in net.lines().iter().enumerate() {
            let w = &mut self.windows[pos];
            w.push_back(snap.line_row(pos));
            while w.len() > self.cfg.window {
                w.pop_front();
            }
            let rows: Vec<LineMeasurement> = w.iter().copied().collect();
            let fresh = match estimate_line(&rows, self.cfg.cond_threshold) {
                Ok(fit) if fit.excitation >= self.cfg.min_excitation => Some(fit),
                Ok(_) | Err(EstimationError::SingularInformation { .. }) => None,
                Err(e) => return Err(e),
            };
            let (fit, reused, observed) = match (fresh, self.last[pos]) {
                (Some(fit), _) => {
                    self.last[pos] = Some(fit);
                    (fit, false, true)
                }
                (None, Some(prev)) => (prev, true, true),
                (None, None) => (LineFit { g: 0.0, b: 0.0, cond: f64::INFINITY, excitation: 0.0 }, false, false),
            };
            lines.push(LineEstimate {
                from: l.from,
                to: l.to,
                g: fit.g,
                b: fit.b,
                cond: fit.cond,
                owner: line_owner(l.from, l.to),
                reused,
                observed,
            });
        }
        Ok(AdmittanceEstimate { lines, window: self.cfg.window })
    }
}

/// Voltages bus `i` knows: its own and its neighbors'.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalVoltages {
    pub bus: BusId,
    pub v: f64,
    pub theta: f64,
    pub neighbors: Vec<(BusId, f64, f64)>,
}

impl LocalVoltages {
    pub fn from_state(net: &NetworkModel, state: &OperatingState, bus: BusId) -> Self {
        let neighbors = net
            .neighbors(bus)
            .expect("bus belongs to the network")
            .iter()
            .map(|&k| (k, state.v[k.0], state.theta[k.0]))
            .collect();
        Self { bus, v: state.v[bus.0], theta: state.theta[bus.0], neighbors }
    }
}

/// Linearization coefficients of bus `i`'s injection equations.
///
/// Every 4-vector is ordered `(dgP/dV, dgP/dth, dgQ/dV, dgQ/dth)`; `own`
/// is with respect to bus `i`'s variables, `neighbors[k]` with respect to
/// neighbor `k`'s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialBlock {
    pub bus: BusId,
    pub own: [f64; 4],
    pub neighbors: Vec<(BusId, [f64; 4])>,
}

impl PartialBlock {
    pub fn neighbor(&self, k: BusId) -> Option<&[f64; 4]> {
        self.neighbors.iter().find(|(b, _)| *b == k).map(|(_, p)| p)
    }
}

/// Partial derivatives of the zero-shunt injection equations at bus `i`.
pub fn assemble_partials(
    local: &LocalVoltages,
    params: &BTreeMap<BusId, (f64, f64)>,
) -> Result<PartialBlock, EstimationError> {
    let (vi, ti) = (local.v, local.theta);
    let mut own = [0.0; 4];
    let mut neighbors = Vec::with_capacity(local.neighbors.len());
    for &(k, vk, tk) in &local.neighbors {
        let &(g, b) = params
            .get(&k)
            .ok_or(EstimationError::MissingEstimate { bus: local.bus, neighbor: k })?;
        let (s, c) = (ti - tk).sin_cos();
        let vv = vi * vk;
        own[0] += (vk * c - 2.0 * vi) * g + vk * s * b;
        own[1] += -vv * s * g + vv * c * b;
        own[2] += vk * s * g + (2.0 * vi - vk * c) * b;
        own[3] += vv * c * g + vv * s * b;
        neighbors.push((
            k,
            [
                vi * c * g + vi * s * b,
                vv * s * g - vv * c * b,
                vi * s * g - vi * c * b,
                -vv * c * g - vv * s * b,
            ],
        ));
    }
    Ok(PartialBlock { bus: local.bus, own, neighbors })
}

/// Partial blocks for every bus of `net` from one set of line parameters.
pub fn partials_for_network(
    net: &NetworkModel,
    state: &OperatingState,
    params: &AdmittanceEstimate,
) -> Result<Vec<PartialBlock>, EstimationError> {
    net.bus_ids()
        .map(|bus| assemble_partials(&LocalVoltages::from_state(net, state, bus), &params.for_bus(net, bus)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::line_flow;

    fn forward(vi: f64, ti: f64, vk: f64, tk: f64, g: f64, b: f64) -> LineMeasurement {
        let (p_ik, q_ik) = line_flow(vi, ti, vk, tk, g, b);
        let (p_ki, q_ki) = line_flow(vk, tk, vi, ti, g, b);
        LineMeasurement { vi, ti, vk, tk, p_ik, q_ik, p_ki, q_ki }
    }

    #[test]
    fn single_snapshot_recovers_parameters() {
        let m = forward(1.02, 0.05, 0.98, 0.0, 1.0, -5.0);
        let fit = estimate_line(&[m], DEFAULT_COND_THRESHOLD).unwrap();
        assert!((fit.g - 1.0).abs() <= 1e-10, "{}", fit.g);
        assert!((fit.b + 5.0).abs() <= 1e-10, "{}", fit.b);
        assert!(fit.cond.is_finite() && fit.cond >= 1.0);
    }

    #[test]
    fn zero_flow_is_uninformative() {
        let m = forward(1.0, 0.0, 1.0, 0.0, 1.0, -5.0);
        assert!(matches!(
            estimate_line(&[m], DEFAULT_COND_THRESHOLD),
            Err(EstimationError::SingularInformation { .. })
        ));
        assert_eq!(estimate_line(&[], DEFAULT_COND_THRESHOLD), Err(EstimationError::NoData));
    }

    #[test]
    fn noisy_window_stays_close() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1e-3).unwrap();
        let clean = forward(1.02, 0.05, 0.98, 0.0, 1.0, -5.0);
        let rows: Vec<_> = (0..50)
            .map(|_| LineMeasurement {
                p_ik: clean.p_ik + noise.sample(&mut rng),
                q_ik: clean.q_ik + noise.sample(&mut rng),
                p_ki: clean.p_ki + noise.sample(&mut rng),
                q_ki: clean.q_ki + noise.sample(&mut rng),
                ..clean
            })
            .collect();
        // Predicted standard error sqrt(diag(sigma^2 (A'A)^-1)) is 1.56e-3
        // for both G and B here, so 5e-3 is a 3.2 sigma bound.
        let fit = estimate_line(&rows, DEFAULT_COND_THRESHOLD).unwrap();
        assert!((fit.g - 1.0).abs() <= 5e-3, "{}", fit.g);
        assert!((fit.b + 5.0).abs() <= 5e-3, "{}", fit.b);
    }

    #[test]
    fn owner_skips_slack() {
        assert_eq!(line_owner(BusId(0), BusId(4)), BusId(4));
        assert_eq!(line_owner(BusId(7), BusId(3)), BusId(3));
    }

    #[test]
    fn flat_state_blocks() {
        let local = LocalVoltages { bus: BusId(1), v: 1.0, theta: 0.0, neighbors: vec![(BusId(0), 1.0, 0.0), (BusId(2), 1.0, 0.0)] };
        let params: BTreeMap<_, _> = [(BusId(0), (-2.0, 8.0)), (BusId(2), (-1.0, 3.0))].into();
        let blk = assemble_partials(&local, &params).unwrap();
        let (sg, sb) = (-3.0, 11.0);
        assert_eq!(blk.own, [-sg, sb, sb, sg]);
        // derivative of V_i V_k sin(th_i - th_k) G_ik w.r.t. th_k at zero angle is -G_ik
        assert_eq!(blk.neighbor(BusId(2)).unwrap(), &[-1.0, -3.0, -3.0, 1.0]);
        let missing = assemble_partials(&local, &[(BusId(0), (-2.0, 8.0))].into());
        assert!(matches!(missing, Err(EstimationError::MissingEstimate { neighbor: BusId(2), .. })));
    }

    #[test]
    fn single_neighbor_reference_values() {
        // G = 0, B = -10, V_i = V_k = 1, th_i - th_k = 0.1; values from mpmath at 30 digits.
        let local = LocalVoltages { bus: BusId(1), v: 1.0, theta: 0.1, neighbors: vec![(BusId(0), 1.0, 0.0)] };
        let blk = assemble_partials(&local, &[(BusId(0), (0.0, -10.0))].into()).unwrap();
        let own = [-0.998_334_166_468_281_5, -9.950_041_652_780_258, -10.049_958_347_219_742, -0.998_334_166_468_281_5];
        let nb = [-0.998_334_166_468_281_5, 9.950_041_652_780_258, 9.950_041_652_780_258, 0.998_334_166_468_281_5];
        for j in 0..4 {
            assert!((blk.own[j] - own[j]).abs() < 1e-13, "own[{j}] = {}", blk.own[j]);
            assert!((blk.neighbors[0].1[j] - nb[j]).abs() < 1e-13, "nb[{j}] = {}", blk.neighbors[0].1[j]);
        }
    }

    #[test]
    fn estimator_tracks_observed_lines() {
        use crate::netmodel::Line;
        use crate::powerflow::{measure, NoiseConfig};
        let net = NetworkModel::from_lines(
            3,
            [
                Line { from: BusId(0), to: BusId(1), g: 4.0, b: -12.0 },
                Line { from: BusId(1), to: BusId(2), g: 2.0, b: -6.0 },
            ],
        )
        .unwrap();
        let mut est = LineEstimator::new(&net, EstimatorConfig::default());
        // bus 2 draws nothing, so line 1-2 carries no flow
        let idle = OperatingState { v: vec![1.0, 0.97, 0.97], theta: vec![0.0, -0.03, -0.03] };
        let e = est.update(&net, &measure(&idle, &net, NoiseConfig::default(), 0, 0)).unwrap();
        assert!(e.lines[0].observed && !e.lines[0].reused);
        assert!((e.lines[0].g + 4.0).abs() < 1e-9 && (e.lines[0].b - 12.0).abs() < 1e-9);
        assert!(!e.lines[1].observed && e.lines[1].g == 0.0 && e.lines[1].b == 0.0);
        assert_eq!(e.for_bus(&net, BusId(2))[&BusId(1)], (0.0, 0.0));

        let busy = OperatingState { v: vec![1.0, 0.97, 0.95], theta: vec![0.0, -0.03, -0.05] };
        let e = est.update(&net, &measure(&busy, &net, NoiseConfig::default(), 0, 1)).unwrap();
        assert!(e.lines[1].observed);
        assert!((e.lines[1].g + 2.0).abs() < 1e-9 && (e.lines[1].b - 6.0).abs() < 1e-9);

        let e = est.update(&net, &measure(&idle, &net, NoiseConfig::default(), 0, 2)).unwrap();
        assert!(e.lines[1].observed && e.lines[1].reused);
        assert!((e.lines[1].g + 2.0).abs() < 1e-9);
    }
}
