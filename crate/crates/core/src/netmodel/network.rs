use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::case::{CaseData, BUS_TYPE_REF};
use super::NetError;

/// Contiguous 0-based bus index. Index 0 is always the slack bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BusId(pub usize);

impl BusId {
    pub const SLACK: BusId = BusId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_slack(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for BusId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An undirected line with its series admittance `g + jb` (p.u.).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub g: f64,
    pub b: f64,
}

impl Line {
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.g, self.b)
    }

    /// Off-diagonal admittance-matrix entry `Y_ik = -y_ik`, as `(G_ik, B_ik)`.
    pub fn y_entry(&self) -> (f64, f64) {
        (-self.g, -self.b)
    }

    pub fn other(&self, bus: BusId) -> BusId {
        if self.from == bus {
            self.to
        } else {
            self.from
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusInfo {
    /// Bus number in the source case.
    pub case_id: usize,
    /// Shunt admittance to ground (p.u.). Zero unless shunts were kept.
    pub shunt: (f64, f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Keep bus shunts from the case in the model (plant use only).
    pub keep_shunts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    buses: Vec<BusInfo>,
    lines: Vec<Line>,
    adjacency: Vec<Vec<BusId>>,
    /// (min, max) endpoint pair to index into `lines`.
    line_index: BTreeMap<(usize, usize), usize>,
}

impl NetworkModel {
    /// Builds a network directly from lines between `n` buses with bus 0 as slack.
    pub fn from_lines(n: usize, lines: impl IntoIterator<Item = Line>) -> Result<Self, NetError> {
        let buses = (0..n).map(|i| BusInfo { case_id: i, shunt: (0.0, 0.0) }).collect();
        Self::assemble(buses, lines.into_iter().collect())
    }

    fn assemble(buses: Vec<BusInfo>, raw: Vec<Line>) -> Result<Self, NetError> {
        let n = buses.len();
        if n == 0 {
            return Err(NetError::DisconnectedGraph { unreachable: 0 });
        }
        let mut merged: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
        for l in raw {
            let (a, b) = (l.from.0, l.to.0);
            if a == b {
                return Err(NetError::SelfLoop(a));
            }
            if a >= n || b >= n {
                return Err(NetError::UnknownBus(a.max(b)));
            }
            *merged.entry((a.min(b), a.max(b))).or_default() += l.admittance();
        }
        let mut lines = Vec::with_capacity(merged.len());
        let mut line_index = BTreeMap::new();
        let mut adjacency = vec![Vec::new(); n];
        for ((a, b), y) in merged {
            if y.norm() == 0.0 {
                return Err(NetError::ZeroImpedanceBranch { from: a, to: b });
            }
            line_index.insert((a, b), lines.len());
            lines.push(Line { from: BusId(a), to: BusId(b), g: y.re, b: y.im });
            adjacency[a].push(BusId(b));
            adjacency[b].push(BusId(a));
        }
        for adj in &mut adjacency {
            adj.sort();
        }

        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for k in &adjacency[i] {
                if !seen[k.0] {
                    seen[k.0] = true;
                    queue.push_back(k.0);
                }
            }
        }
        let unreachable = seen.iter().filter(|s| !**s).count();
        if unreachable > 0 {
            return Err(NetError::DisconnectedGraph { unreachable });
        }
        Ok(Self { buses, lines, adjacency, line_index })
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[BusInfo] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_ids(&self) -> impl Iterator<Item = BusId> {
        (0..self.buses.len()).map(BusId)
    }

    pub fn case_id(&self, bus: BusId) -> usize {
        self.buses[bus.0].case_id
    }

    /// Reverse of [`case_id`](Self::case_id).
    pub fn bus_by_case_id(&self, case_id: usize) -> Option<BusId> {
        self.buses.iter().position(|b| b.case_id == case_id).map(BusId)
    }

    pub fn check_bus(&self, bus: BusId) -> Result<(), NetError> {
        if bus.0 < self.buses.len() {
            Ok(())
        } else {
            Err(NetError::UnknownBus(bus.0))
        }
    }

    /// Neighbor set `N_i`, ascending.
    pub fn neighbors(&self, bus: BusId) -> Result<&[BusId], NetError> {
        self.check_bus(bus)?;
        Ok(&self.adjacency[bus.0])
    }

    pub fn neighbor_set(&self, bus: BusId) -> Result<BTreeSet<BusId>, NetError> {
        Ok(self.neighbors(bus)?.iter().copied().collect())
    }

    pub fn are_adjacent(&self, a: BusId, b: BusId) -> bool {
        self.line_between(a, b).is_some()
    }

    pub fn line_between(&self, a: BusId, b: BusId) -> Option<&Line> {
        self.line_index.get(&(a.0.min(b.0), a.0.max(b.0))).map(|&i| &self.lines[i])
    }

    pub fn line_position(&self, a: BusId, b: BusId) -> Option<usize> {
        self.line_index.get(&(a.0.min(b.0), a.0.max(b.0))).copied()
    }

    pub fn has_shunts(&self) -> bool {
        self.buses.iter().any(|b| b.shunt != (0.0, 0.0))
    }

    /// Copy of this network with every shunt forced to zero.
    pub fn without_shunts(&self) -> Self {
        let mut net = self.clone();
        for b in &mut net.buses {
            b.shunt = (0.0, 0.0);
        }
        net
    }
}

/// Converts parsed case tables into a network model.
///
/// The reference bus moves to index 0 and the remaining buses keep their
/// file order. Branch charging and taps are dropped; parallel branches are
/// merged by adding admittances.
pub fn build_network(case: &CaseData, opts: BuildOptions) -> Result<NetworkModel, NetError> {
    case.validate()?;
    let slack_pos = case
        .buses
        .iter()
        .position(|b| b.bus_type == BUS_TYPE_REF)
        .ok_or(NetError::NoSlackBus)?;
    let mut order = vec![slack_pos];
    order.extend((0..case.buses.len()).filter(|&p| p != slack_pos));

    let mut by_case_id = BTreeMap::new();
    let mut buses = Vec::with_capacity(order.len());
    for (idx, &pos) in order.iter().enumerate() {
        let rec = &case.buses[pos];
        if by_case_id.insert(rec.id, idx).is_some() {
            return Err(NetError::DuplicateBus(rec.id));
        }
        let shunt = if opts.keep_shunts {
            (rec.gs / case.base_mva, rec.bs / case.base_mva)
        } else {
            (0.0, 0.0)
        };
        buses.push(BusInfo { case_id: rec.id, shunt });
    }

    let mut lines = Vec::new();
    for br in case.branches.iter().filter(|b| b.in_service) {
        let z = Complex64::new(br.r, br.x);
        if z.norm() == 0.0 {
            return Err(NetError::ZeroImpedanceBranch { from: br.from, to: br.to });
        }
        let y = z.inv();
        lines.push(Line { from: BusId(by_case_id[&br.from]), to: BusId(by_case_id[&br.to]), g: y.re, b: y.im });
    }
    NetworkModel::assemble(buses, lines)
}

/// Free-function form of [`NetworkModel::neighbors`].
pub fn neighbors(net: &NetworkModel, bus: BusId) -> Result<BTreeSet<BusId>, NetError> {
    net.neighbor_set(bus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::case::{BranchRecord, BusRecord};

    fn bus(id: usize, t: u8) -> BusRecord {
        BusRecord {
            id,
            bus_type: t,
            pd: 0.0,
            qd: 0.0,
            gs: 0.0,
            bs: 0.0,
            vm: 1.0,
            va: 0.0,
            base_kv: 0.0,
            vmax: 1.05,
            vmin: 0.95,
        }
    }

    fn branch(from: usize, to: usize, r: f64, x: f64) -> BranchRecord {
        BranchRecord { from, to, r, x, b: 0.3, ratio: 0.97, angle: 0.0, in_service: true }
    }

    fn case(branches: Vec<BranchRecord>) -> CaseData {
        CaseData { base_mva: 100.0, buses: vec![bus(1, 3), bus(2, 1)], branches, gens: vec![] }
    }

    #[test]
    fn reactance_only_branch() {
        let net = build_network(&case(vec![branch(1, 2, 0.0, 0.1)]), BuildOptions::default()).unwrap();
        let l = net.lines()[0];
        assert!(l.g.abs() < 1e-12);
        assert!((l.b + 10.0).abs() < 1e-12);
    }

    #[test]
    fn resistive_branch_reciprocal() {
        let net = build_network(&case(vec![branch(1, 2, 0.02, 0.06)]), BuildOptions::default()).unwrap();
        let l = net.lines()[0];
        assert!((l.g - 5.0).abs() < 1e-12);
        assert!((l.b + 15.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_branches_merge() {
        let net = build_network(
            &case(vec![branch(1, 2, 0.0, 0.1), branch(2, 1, 0.0, 0.1)]),
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(net.lines().len(), 1);
        assert!((net.lines()[0].b + 20.0).abs() < 1e-12);
    }

    #[test]
    fn zero_impedance_and_disconnected() {
        assert!(matches!(
            build_network(&case(vec![branch(1, 2, 0.0, 0.0)]), BuildOptions::default()),
            Err(NetError::ZeroImpedanceBranch { .. })
        ));
        assert!(matches!(
            build_network(&case(vec![]), BuildOptions::default()),
            Err(NetError::DisconnectedGraph { unreachable: 1 })
        ));
    }

    #[test]
    fn slack_reindexed_to_zero() {
        let c = CaseData {
            base_mva: 100.0,
            buses: vec![bus(7, 1), bus(3, 3), bus(5, 1)],
            branches: vec![branch(7, 3, 0.0, 0.1), branch(3, 5, 0.0, 0.2)],
            gens: vec![],
        };
        let net = build_network(&c, BuildOptions::default()).unwrap();
        assert_eq!(net.case_id(BusId(0)), 3);
        assert_eq!(net.case_id(BusId(1)), 7);
        assert_eq!(net.bus_by_case_id(5), Some(BusId(2)));
        assert_eq!(net.neighbors(BusId(0)).unwrap(), &[BusId(1), BusId(2)]);
    }

    #[test]
    fn shunts_only_when_kept() {
        let mut c = case(vec![branch(1, 2, 0.0, 0.1)]);
        c.buses[1].bs = 19.0;
        assert!(!build_network(&c, BuildOptions::default()).unwrap().has_shunts());
        let kept = build_network(&c, BuildOptions { keep_shunts: true }).unwrap();
        assert_eq!(kept.buses()[1].shunt, (0.0, 0.19));
        assert!(!kept.without_shunts().has_shunts());
    }

    #[test]
    fn chain_neighbors() {
        let net = NetworkModel::from_lines(
            4,
            (0..3).map(|i| Line { from: BusId(i), to: BusId(i + 1), g: 0.0, b: -10.0 }),
        )
        .unwrap();
        assert_eq!(neighbors(&net, BusId(2)).unwrap(), [BusId(1), BusId(3)].into());
        assert_eq!(neighbors(&net, BusId(3)).unwrap(), [BusId(2)].into());
        assert!(matches!(neighbors(&net, BusId(9)), Err(NetError::UnknownBus(9))));
    }
}
