use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{compute_line_flows, LineFlow, OperatingState};
use crate::netmodel::{BusId, NetworkModel};

/// Standard deviations of the additive Gaussian measurement noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_v: f64,
    pub sigma_theta: f64,
    pub sigma_pq: f64,
}

impl NoiseConfig {
    pub fn is_noiseless(&self) -> bool {
        self.sigma_v == 0.0 && self.sigma_theta == 0.0 && self.sigma_pq == 0.0
    }
}

/// One instant of SCADA/PMU-style observations.
///
/// Each physical quantity is measured once: bus `k`'s voltage in bus `i`'s
/// neighbor view is the value bus `k` measured and shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSnapshot {
    pub t: usize,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Aligned with `NetworkModel::lines()`.
    pub flows: Vec<LineFlow>,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborMeasurement {
    pub bus: BusId,
    pub v: f64,
    pub theta: f64,
    pub p_ik: f64,
    pub q_ik: f64,
    pub p_ki: f64,
    pub q_ki: f64,
}

/// What bus `i` holds after exchanging data with its neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMeasurement {
    pub bus: BusId,
    pub v: f64,
    pub theta: f64,
    pub neighbors: Vec<NeighborMeasurement>,
}

/// `{V_i, V_k, th_i, th_k, P_ik, Q_ik, P_ki, Q_ki}` for one line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineMeasurement {
    pub vi: f64,
    pub ti: f64,
    pub vk: f64,
    pub tk: f64,
    pub p_ik: f64,
    pub q_ik: f64,
    pub p_ki: f64,
    pub q_ki: f64,
}

impl MeasurementSnapshot {
    pub fn state(&self) -> OperatingState {
        OperatingState { v: self.v.clone(), theta: self.theta.clone() }
    }

    pub fn local_view(&self, net: &NetworkModel, bus: BusId) -> LocalMeasurement {
        let neighbors = net
            .neighbors(bus)
            .expect("bus belongs to the network")
            .iter()
            .map(|&k| {
                let pos = net.line_position(bus, k).expect("adjacent buses share a line");
                let (p_ik, q_ik, p_ki, q_ki) = self.flows[pos].oriented(bus);
                NeighborMeasurement { bus: k, v: self.v[k.0], theta: self.theta[k.0], p_ik, q_ik, p_ki, q_ki }
            })
            .collect();
        LocalMeasurement { bus, v: self.v[bus.0], theta: self.theta[bus.0], neighbors }
    }

    /// Row for line `pos` oriented from its `from` endpoint.
    pub fn line_row(&self, pos: usize) -> LineMeasurement {
        let f = &self.flows[pos];
        let (i, k) = (f.from.0, f.to.0);
        LineMeasurement {
            vi: self.v[i],
            ti: self.theta[i],
            vk: self.v[k],
            tk: self.theta[k],
            p_ik: f.p_ft,
            q_ik: f.q_ft,
            p_ki: f.p_tf,
            q_ki: f.q_tf,
        }
    }
}

/// Samples a snapshot of `state`. Draw order is fixed (bus magnitudes,
/// bus angles, then four flows per line) so a seed always maps to the same
/// noise realization whatever the sigmas. Each instant `t` draws from its
/// own stream of the seeded generator.
pub fn measure(
    state: &OperatingState,
    net: &NetworkModel,
    noise: NoiseConfig,
    seed: u64,
    t: usize,
) -> MeasurementSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let mut draw = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    };
    let v: Vec<f64> = state.v.iter().map(|x| x + draw(noise.sigma_v)).collect();
    let theta: Vec<f64> = state.theta.iter().map(|x| x + draw(noise.sigma_theta)).collect();
    let flows = compute_line_flows(state, net)
        .flows
        .into_iter()
        .map(|f| LineFlow {
            p_ft: f.p_ft + draw(noise.sigma_pq),
            q_ft: f.q_ft + draw(noise.sigma_pq),
            p_tf: f.p_tf + draw(noise.sigma_pq),
            q_tf: f.q_tf + draw(noise.sigma_pq),
            ..f
        })
        .collect();
    MeasurementSnapshot { t, v, theta, flows, noise }
}
