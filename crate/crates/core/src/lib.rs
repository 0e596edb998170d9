//! Simulation and mechanized verification of asynchronous quantum
//! distributed systems running a marker-flooding global-operation protocol.
//!
//! Layers, bottom up:
//!
//! * [`qcore`]: density matrices and Kraus-form operations over labeled registers.
//! * [`sysmodel`]: processors, FIFO channels, register ownership.
//! * [`exec`]: events, steps, executions and replay.
//! * [`causality`]: happened-before, equicausality and checked reorderings.
//! * [`qgo`]: decomposable global operations and the marker protocol.
//! * [`specmachine`]: the atomic specification transition system.
//! * [`verifier`]: the reordering pipeline producing a [`verifier::Certificate`].
//! * [`harness`]: base algorithms, scheduler, configuration and trace files.

pub mod causality;
pub mod error;
pub mod exec;
pub mod harness;
pub mod qcore;
pub mod qgo;
pub mod specmachine;
pub mod sysmodel;
pub mod verifier;

#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
