//! Grid graph, case-file ingestion and the bus admittance matrix.

mod admittance;
mod case;
mod network;

use thiserror::Error;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use case::{parse_matpower_case, BranchRecord, BusRecord, CaseData, GenRecord, BUS_TYPE_REF};
pub use network::{build_network, neighbors, BuildOptions, BusId, BusInfo, Line, NetworkModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("syntax error on line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("case is missing the '{0}' table")]
    MissingTable(&'static str),
    #[error("{table} row {row} references unknown bus {bus}")]
    DanglingReference { table: &'static str, row: usize, bus: usize },
    #[error("bus {0} appears more than once")]
    DuplicateBus(usize),
    #[error("case has no reference (type 3) bus")]
    NoSlackBus,
    #[error("branch {from}-{to} has zero impedance")]
    ZeroImpedanceBranch { from: usize, to: usize },
    #[error("line joins bus {0} to itself")]
    SelfLoop(usize),
    #[error("network is disconnected: {unreachable} buses unreachable from the slack")]
    DisconnectedGraph { unreachable: usize },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("invalid case JSON: {0}")]
    Json(String),
}

/// Reads a case from either MATPOWER text or its canonical JSON form.
pub fn parse_case_auto(text: &str) -> Result<CaseData, NetError> {
    if text.trim_start().starts_with('{') {
        CaseData::from_json(text)
    } else {
        parse_matpower_case(text)
    }
}
