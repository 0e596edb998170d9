//! Scenarios: base algorithms, global operations, configuration, the
//! scheduler and trace files.

pub mod algorithms;
pub mod config;
pub mod globals;
pub mod scheduler;
pub mod trace;

use std::sync::Arc;

use crate::error::Result;
use crate::exec::Protocol;
use crate::sysmodel::{ClassicalState, SystemState};

pub use config::ScenarioConfig;
pub use scheduler::run_simulation;
pub use trace::TraceFile;

/// The protocol and initial state a configuration describes.
pub fn scenario(cfg: &ScenarioConfig) -> Result<(Arc<Protocol>, SystemState)> {
    let procs = cfg.procs();
    let mut regs = algorithms::RegisterCounter::default();
    let setup = algorithms::setup(&cfg.base.name, &procs, &cfg.base.params, cfg.seed, &mut regs)?;
    let mut blocks = setup.blocks;
    blocks.extend(cfg.initial_blocks(&mut regs)?);
    let (rho, owners) = config::assemble(&blocks, cfg.effective_dim_cap())?;
    let mut state = SystemState::new(procs, rho, &owners)?;
    for (p, vars) in setup.vars {
        state.set_classical(&p, ClassicalState::new(vars))?;
    }
    Ok((Protocol::new(setup.algorithm, globals::builtin_library()), state))
}
