//! Voltage-regulation workbench for transmission grids.
//!
//! The crate simulates a quasi-steady AC grid ("plant"), estimates line
//! admittances online from line-flow measurements, and regulates bus
//! voltages with a one-step-ahead model-predictive controller solved either
//! centrally or by bus agents running consensus ADMM with their neighbors.
//! A droop volt-var controller serves as the decentralized baseline.

// Buses index several parallel vectors at once, and `!(x >= 0.0)` is the
// intended NaN-rejecting form.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod estimation;
pub mod mpc_central;
pub mod mpc_dist;
pub mod netmodel;
pub mod powerflow;
pub mod qpsolve;
pub mod scenario;

pub use netmodel::{BusId, NetworkModel};
pub use powerflow::OperatingState;
