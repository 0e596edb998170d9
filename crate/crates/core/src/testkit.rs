//! Shared fixtures for unit tests.

use std::sync::Arc;

use serde_json::json;

use crate::exec::{Builder, Protocol};
use crate::harness::config::{EprPair, QubitSpec, QubitState, ScenarioConfig};
use crate::harness::scenario;
use crate::qcore::RegisterId;
use crate::sysmodel::{ProcessorId, SystemState};

pub fn p(i: usize) -> ProcessorId {
    ProcessorId::indexed(i)
}

pub fn r(i: u64) -> RegisterId {
    RegisterId(i)
}

/// The chaos algorithm on `n` processors with no registers of its own.
pub fn chaos_config(n: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(n, "chaos");
    cfg.base.params = json!({ "qubits": 0 });
    cfg
}

/// `n` processors, an EPR pair on registers 0 (at `p0`) and 1 (at `p1`).
pub fn epr(n: usize) -> (Arc<Protocol>, SystemState) {
    let mut cfg = chaos_config(n);
    cfg.initial.epr.push(EprPair {
        a: "p0".into(),
        b: "p1".into(),
    });
    scenario(&cfg).unwrap()
}

/// `n` processors, each owning one `|+⟩` qubit with the processor's index.
pub fn plus_qubits(n: usize) -> (Arc<Protocol>, SystemState) {
    let mut cfg = chaos_config(n);
    for i in 0..n {
        cfg.initial.qubits.push(QubitSpec {
            owner: format!("p{i}"),
            state: QubitState::Plus,
        });
    }
    scenario(&cfg).unwrap()
}

pub fn builder((protocol, state): (Arc<Protocol>, SystemState)) -> Builder {
    Builder::new(protocol, state)
}

/// A simulated chaos run over a random 3-qubit state.
pub fn chaos_run(seed: u64, procs: usize, max_events: usize) -> crate::exec::Execution {
    let mut cfg = ScenarioConfig::new(procs, "chaos");
    cfg.seed = seed;
    cfg.max_events = max_events;
    crate::harness::run_simulation(&cfg).unwrap()
}

/// The first `n` events of `x`.
pub fn prefix(x: &crate::exec::Execution, n: usize) -> crate::exec::Execution {
    x.with_events(x.events[..n.min(x.len())].to_vec())
}

pub fn chan(a: usize, b: usize) -> crate::sysmodel::ChannelId {
    crate::sysmodel::ChannelId::new(&p(a), &p(b))
}

fn seeded() -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(11)
}

/// Runs the invocation block at `leader`.
pub fn invoke(b: &mut Builder, leader: usize, gid: &str) -> crate::Result<Vec<crate::exec::Event>> {
    let protocol = b.execution().protocol.clone();
    let s = b.state().clone();
    let (events, next) = crate::qgo::qgo_invoke(&protocol, &s, &p(leader), gid, b.ids(), &mut seeded())?;
    b.extend(events.clone(), next);
    Ok(events)
}

/// Receives the head of `from → to` and runs the block it opens.
pub fn receive(b: &mut Builder, from: usize, to: usize) -> Vec<crate::exec::Event> {
    let protocol = b.execution().protocol.clone();
    let s = b.state().clone();
    let (events, next) = crate::qgo::qgo_receive(&protocol, &s, &chan(from, to), b.ids(), &mut seeded()).unwrap();
    b.extend(events.clone(), next);
    events
}
