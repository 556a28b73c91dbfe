//! Sizing and sequencing of a black-start source for an islanded
//! wind-to-hydrogen microgrid.

pub mod cli;
pub mod devices;
pub mod netmodel;
pub mod powerflow;
pub mod scenario;
pub mod sequencer;
pub mod sim;
pub mod sizing;
