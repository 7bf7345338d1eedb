//! Toolkit for building, transforming, simulating, and timing-analyzing
//! self-timed dual-rail circuits with early propagation and reduced
//! completion detection, instantiated on a Tsetlin-machine inference
//! datapath (clause evaluation, population counts, magnitude comparison).

pub mod datapath;
pub mod dualrail;
pub mod gen;
pub mod netlist;
pub mod sim;
pub mod timing;
pub mod tm;
pub mod vcd;

pub use netlist::{GateId, GateKind, LogicValue, NetId, Netlist, NetlistBuilder};
