//! The atomic specification: a global operation hits every processor and
//! every in-flight message in a single event.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, BaseDelta, Event, EventKind, Execution, OpRef, Protocol, TransitionPredicate, ValidationReport};
use crate::qcore::{self, Outcome, RegisterId, RegisterMap};
use crate::qgo::ResponseRecord;
use crate::sysmodel::{ExtState, MsgId, MsgTag, Owner, ProcessorId, SystemState};


/// The specification register of one processor.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecExt {
    #[default]
    Idle,
    Pending(String),
    Done(String, ResponseRecord),
}

impl SpecExt {
    pub fn on_invoke(&self, proc: &ProcessorId, gid: &str) -> Result<SpecExt> {
        match self {
            SpecExt::Idle => Ok(SpecExt::Pending(gid.to_string())),
            _ => Err(Error::SpecViolation(format!("{proc} is not idle at invocation"))),
        }
    }

    pub fn on_respond(&self, proc: &ProcessorId, record: &ResponseRecord) -> Result<SpecExt> {
        match self {
            SpecExt::Done(_, r) if r == record => Ok(SpecExt::Idle),
            SpecExt::Done(..) => Err(Error::SpecViolation(format!("{proc} responds with a wrong record"))),
            _ => Err(Error::SpecViolation(format!("{proc} has no completed operation"))),
        }
    }
}

/// Outcomes of one atomic execution, per processor and per in-flight message.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicOutcomes {
    pub procs: BTreeMap<ProcessorId, Outcome>,
    #[serde(with = "pairs")]
    pub msgs: BTreeMap<MsgId, Outcome>,
}

/// Integer-keyed maps as `[key, value]` lists, so they survive buffering
/// inside tagged enums.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

fn spec_ext<'a>(state: &'a SystemState, p: &ProcessorId) -> Result<&'a SpecExt> {
    match state.ext(p)? {
        ExtState::Spec(s) => Ok(s),
        ExtState::Qgo(_) => Err(Error::SpecViolation(format!("{p} is not running the specification"))),
    }
}

fn check_atomic_guard(pre: &SystemState, leader: &ProcessorId, gid: &str) -> Result<()> {
    if spec_ext(pre, leader)? != &SpecExt::Pending(gid.to_string()) {
        return Err(Error::SpecViolation(format!("{leader} has no pending invocation of {gid}")));
    }
    for p in pre.procs() {
        if p != leader && spec_ext(pre, p)? != &SpecExt::Idle {
            return Err(Error::SpecViolation(format!("{p} is busy during the atomic execution")));
        }
    }
    for q in pre.channels().values() {
        if q.iter().any(|m| m.tag.is_marker()) {
            return Err(Error::SpecViolation("markers do not exist in the specification".into()));
        }
    }
    Ok(())
}

/// The atomic transition with the outcomes fixed by the event.
pub(crate) fn atomic_step(
    protocol: &Protocol,
    pre: &SystemState,
    leader: &ProcessorId,
    gid: &str,
    outcomes: &AtomicOutcomes,
) -> Result<SystemState> {
    check_atomic_guard(pre, leader, gid)?;
    let g = protocol.globals.get(gid)?;
    let procs: Vec<&ProcessorId> = outcomes.procs.keys().collect();
    if procs != pre.procs().iter().collect::<Vec<_>>() {
        return Err(Error::SpecViolation("outcomes must cover every processor".into()));
    }
    let in_flight: Vec<MsgId> = pre.channels().values().flatten().map(|m| m.id).collect();
    let mut sorted = in_flight.clone();
    sorted.sort();
    if outcomes.msgs.keys().copied().collect::<Vec<_>>() != sorted {
        return Err(Error::SpecViolation("outcomes must cover every in-flight message".into()));
    }

    let mut next = pre.clone();
    for p in pre.procs() {
        let owner = Owner::Processor(p.clone());
        let targets: Vec<RegisterId> = pre.owned_by(p).iter().map(|r| r.id).collect();
        let dims = pre.target_dims(&owner, &targets)?;
        let classical = pre.classical(p)?;
        let op = g.processor_op(p, classical, &dims)?;
        let r = &outcomes.procs[p];
        next = next.apply_quantum(&owner, &op, &targets, &[], r)?;
        next.set_classical(p, g.processor_component(p).update(classical, r)?)?;
    }
    let mut records: BTreeMap<ProcessorId, BTreeMap<_, Vec<Outcome>>> = pre
        .procs()
        .iter()
        .map(|p| (p.clone(), pre.incoming(p).into_iter().map(|c| (c, Vec::new())).collect()))
        .collect();
    for (chan, queue) in pre.channels() {
        for m in queue {
            let owner = Owner::Message(m.id);
            let dims = pre.target_dims(&owner, &m.regs)?;
            let op = g.message_op(&m.content, &dims)?;
            let r = &outcomes.msgs[&m.id];
            next = next.apply_quantum(&owner, &op, &m.regs, &[], r)?;
            let content = g.message_component(&m.content).update(&m.content, r)?;
            next.set_in_flight(m.id, content, MsgTag::Empty)?;
            records.get_mut(&chan.dst).unwrap().get_mut(chan).unwrap().push(r.clone());
        }
    }
    for (p, channels) in records {
        let record = ResponseRecord {
            proc: p.clone(),
            gid: gid.to_string(),
            self_outcome: outcomes.procs[&p].clone(),
            channels,
        };
        next.set_ext(&p, ExtState::Spec(SpecExt::Done(gid.to_string(), record)))?;
    }
    Ok(next)
}

/// Samples an atomic execution: every processor, then every in-flight
/// message in channel order.
pub fn atomic_execute<R: Rng + ?Sized>(
    protocol: &Protocol,
    pre: &SystemState,
    leader: &ProcessorId,
    gid: &str,
    id: exec::EventId,
    rng: &mut R,
) -> Result<(Event, SystemState)> {
    check_atomic_guard(pre, leader, gid)?;
    let g = protocol.globals.get(gid)?;
    let mut outcomes = AtomicOutcomes::default();
    let mut rho = pre.quantum().clone();
    for p in pre.procs() {
        let targets: Vec<RegisterId> = pre.owned_by(p).iter().map(|r| r.id).collect();
        let dims = pre.target_dims(&Owner::Processor(p.clone()), &targets)?;
        let op = g.processor_op(p, pre.classical(p)?, &dims)?;
        let map = RegisterMap::in_place(rho.space(), &targets)?;
        let (r, post) = qcore::sample_outcome(&rho, &op, &map, rng)?;
        rho = post;
        outcomes.procs.insert(p.clone(), r);
    }
    for m in pre.channels().values().flatten() {
        let dims = pre.target_dims(&Owner::Message(m.id), &m.regs)?;
        let op = g.message_op(&m.content, &dims)?;
        let map = RegisterMap::in_place(rho.space(), &m.regs)?;
        let (r, post) = qcore::sample_outcome(&rho, &op, &map, rng)?;
        rho = post;
        outcomes.msgs.insert(m.id, r);
    }
    let event = Event::new(
        id,
        EventKind::Atomic {
            leader: leader.clone(),
            gid: gid.to_string(),
            outcomes,
        },
    );
    let next = exec::step(protocol, pre, &event)?;
    Ok((event, next))
}

/// One specification step; the verdict is the error, if any.
pub fn spec_step(protocol: &Protocol, pre: &SystemState, event: &Event) -> Result<SystemState> {
    let post = exec::step(protocol, pre, event)?;
    AtomicSpec
        .check(protocol, pre, event, &post)
        .map_err(Error::SpecViolation)?;
    Ok(post)
}

/// The specification's transition predicate: base steps, invocations while
/// no operation is underway anywhere, atomic executions and responses.
#[derive(Clone, Copy, Debug, Default)]
pub struct AtomicSpec;

impl TransitionPredicate for AtomicSpec {
    fn check(
        &self,
        protocol: &Protocol,
        pre: &SystemState,
        event: &Event,
        post: &SystemState,
    ) -> std::result::Result<(), String> {
        for p in pre.procs() {
            if !matches!(pre.ext(p), Ok(ExtState::Spec(_))) {
                return Err(format!("{p} is not running the specification"));
            }
        }
        match &event.kind {
            EventKind::Invoke { .. } => {
                if pre.ext_map().values().all(ExtState::is_idle) {
                    Ok(())
                } else {
                    Err(format!("{event} overlaps another global operation"))
                }
            }
            EventKind::Atomic { .. } | EventKind::Respond { .. } => Ok(()),
            EventKind::Apply {
                op: OpRef::Base(_), ..
            }
            | EventKind::Send { .. }
            | EventKind::Receive { .. } => BaseDelta.check(protocol, pre, event, post),
            _ => Err(format!("{event} does not exist in the specification")),
        }
    }
}

pub fn validate_spec_execution(x: &Execution) -> ValidationReport {
    exec::validate(&AtomicSpec, x)
}
