//! Decomposable global operations and the marker protocol that applies
//! them to a running base algorithm.
//!
//! The protocol register of each processor is a [`QgoExt`]. Its fields
//! encode which event the processor owes next (its *obligation*): once a
//! procedure block starts, the processor must finish it before doing
//! anything else. [`Augmented`] is the transition predicate that enforces
//! this, and the `qgo_*` drivers produce whole blocks with sampled outcomes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Event, EventKind, IdAllocator, OpRef, Protocol, TransitionPredicate};
use crate::qcore::{self, Outcome, QuantumOperation, RegisterId, RegisterMap};
use crate::sysmodel::{
    message_class, ChannelId, ClassicalState, ExtState, MessageInstance, MsgId, MsgTag, Owner,
    ProcessorId, SystemState, Value,
};


/// What started the current block: an invocation (`chan` is `None`) or the
/// first marker seen on `chan`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub gid: String,
    pub chan: Option<ChannelId>,
}

/// The protocol register of one processor.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QgoExt {
    pub op: Option<String>,
    pub trigger: Option<Trigger>,
    pub self_outcome: Option<Outcome>,
    pub records: BTreeMap<ChannelId, Vec<Outcome>>,
    pub waitset: BTreeSet<ChannelId>,
    pub to_broadcast: BTreeSet<ProcessorId>,
    pub recording: Option<MsgId>,
    pub respond_pending: bool,
}

/// A processor's answer to one global operation: its own outcome and the
/// outcomes of the messages recorded on each incoming channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub proc: ProcessorId,
    pub gid: String,
    pub self_outcome: Outcome,
    pub channels: BTreeMap<ChannelId, Vec<Outcome>>,
}

impl QgoExt {
    pub fn is_idle(&self) -> bool {
        self.op.is_none() && self.trigger.is_none()
    }

    pub fn on_invoke(&self, proc: &ProcessorId, gid: &str) -> Result<QgoExt> {
        if !self.is_idle() {
            return Err(Error::AlreadyActive(proc.0.clone()));
        }
        Ok(QgoExt {
            trigger: Some(Trigger {
                gid: gid.to_string(),
                chan: None,
            }),
            ..QgoExt::default()
        })
    }

    /// The record this processor would respond with now.
    pub fn response(&self, proc: &ProcessorId) -> Option<ResponseRecord> {
        Some(ResponseRecord {
            proc: proc.clone(),
            gid: self.op.clone()?,
            self_outcome: self.self_outcome.clone()?,
            channels: self.records.clone(),
        })
    }

    pub fn on_respond(&self, proc: &ProcessorId, record: &ResponseRecord) -> Result<QgoExt> {
        if !self.respond_pending {
            return Err(Error::InvalidStep(format!("{proc} has nothing to respond")));
        }
        if self.response(proc).as_ref() != Some(record) {
            return Err(Error::InvalidStep(format!("{proc} responds with a wrong record")));
        }
        Ok(QgoExt::default())
    }

    pub fn on_marker_sent(&self, gid: &str, dest: &ProcessorId) -> Result<QgoExt> {
        if self.op.as_deref() != Some(gid) || !self.to_broadcast.contains(dest) {
            return Err(Error::InvalidStep(format!("unexpected marker for {gid} to {dest}")));
        }
        let mut next = self.clone();
        next.to_broadcast.remove(dest);
        next.refresh_pending();
        Ok(next)
    }

    pub fn on_receive(&self, chan: &ChannelId, msg: &MessageInstance) -> Result<QgoExt> {
        let mut next = self.clone();
        match &msg.tag {
            MsgTag::Marker(gid) => {
                if self.is_idle() {
                    next.trigger = Some(Trigger {
                        gid: gid.clone(),
                        chan: Some(chan.clone()),
                    });
                } else if self.op.as_deref() == Some(gid.as_str()) && self.waitset.contains(chan) {
                    next.waitset.remove(chan);
                    next.refresh_pending();
                } else {
                    return Err(Error::InvalidStep(format!(
                        "marker for {gid} on {chan} does not fit the protocol state"
                    )));
                }
            }
            _ => {
                if self.op.is_some() && self.waitset.contains(chan) {
                    next.recording = Some(msg.id);
                }
            }
        }
        Ok(next)
    }

    fn refresh_pending(&mut self) {
        self.respond_pending = self.op.is_some() && self.waitset.is_empty() && self.to_broadcast.is_empty();
    }
}

/// Processor part of a decomposable global operation.
pub trait ProcessorComponent: Send + Sync + fmt::Debug {
    fn operation(&self, state: &ClassicalState, dims: &[usize]) -> Result<QuantumOperation>;

    fn update(&self, state: &ClassicalState, _r: &Outcome) -> Result<ClassicalState> {
        Ok(state.clone())
    }
}

/// Message part of a decomposable global operation.
pub trait MessageComponent: Send + Sync + fmt::Debug {
    fn operation(&self, content: &Value, dims: &[usize]) -> Result<QuantumOperation>;

    fn update(&self, content: &Value, _r: &Outcome) -> Result<Value> {
        Ok(content.clone())
    }
}

/// A global operation given by one component per processor and one per
/// message class. Components must preserve register dimensions.
#[derive(Clone, Debug)]
pub struct DecomposableGlobalOp {
    pub gid: String,
    pub default_processor: Arc<dyn ProcessorComponent>,
    pub per_processor: BTreeMap<ProcessorId, Arc<dyn ProcessorComponent>>,
    pub default_message: Arc<dyn MessageComponent>,
    pub per_message: BTreeMap<String, Arc<dyn MessageComponent>>,
}

impl DecomposableGlobalOp {
    pub fn uniform(
        gid: impl Into<String>,
        processor: Arc<dyn ProcessorComponent>,
        message: Arc<dyn MessageComponent>,
    ) -> Self {
        DecomposableGlobalOp {
            gid: gid.into(),
            default_processor: processor,
            per_processor: BTreeMap::new(),
            default_message: message,
            per_message: BTreeMap::new(),
        }
    }

    pub fn processor_component(&self, proc: &ProcessorId) -> &dyn ProcessorComponent {
        self.per_processor.get(proc).unwrap_or(&self.default_processor).as_ref()
    }

    pub fn message_component(&self, content: &Value) -> &dyn MessageComponent {
        self.per_message
            .get(message_class(content))
            .unwrap_or(&self.default_message)
            .as_ref()
    }

    pub fn processor_op(&self, proc: &ProcessorId, state: &ClassicalState, dims: &[usize]) -> Result<QuantumOperation> {
        checked(self.processor_component(proc).operation(state, dims)?, dims)
    }

    pub fn message_op(&self, content: &Value, dims: &[usize]) -> Result<QuantumOperation> {
        checked(self.message_component(content).operation(content, dims)?, dims)
    }
}

fn checked(op: QuantumOperation, dims: &[usize]) -> Result<QuantumOperation> {
    if op.in_dims() != dims || !op.is_dimension_preserving() {
        return Err(Error::ShapeError(format!(
            "global-operation component must act on dims {dims:?} in place"
        )));
    }
    let report = qcore::validate_operation(&op);
    if !report.is_valid() {
        return Err(Error::ShapeError(format!(
            "global-operation component is not trace preserving (deviation {:e})",
            report.max_deviation
        )));
    }
    Ok(op)
}

#[derive(Clone, Debug, Default)]
pub struct GlobalLibrary {
    ops: BTreeMap<String, Arc<DecomposableGlobalOp>>,
}

impl GlobalLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, op: DecomposableGlobalOp) {
        self.ops.insert(op.gid.clone(), Arc::new(op));
    }

    pub fn with(mut self, op: DecomposableGlobalOp) -> Self {
        self.insert(op);
        self
    }

    pub fn get(&self, gid: &str) -> Result<&Arc<DecomposableGlobalOp>> {
        self.ops.get(gid).ok_or_else(|| Error::UnknownGlobalOp(gid.to_string()))
    }

    pub fn gids(&self) -> impl Iterator<Item = &str> {
        self.ops.keys().map(String::as_str)
    }
}

fn qgo_ext<'a>(state: &'a SystemState, proc: &ProcessorId) -> Result<&'a QgoExt> {
    match state.ext(proc)? {
        ExtState::Qgo(q) => Ok(q),
        ExtState::Spec(_) => Err(Error::InvalidStep(format!(
            "{proc} runs the specification, not the marker protocol"
        ))),
    }
}

/// `G.π` on every register `proc` owns, started by the pending trigger.
pub(crate) fn apply_processor_component(
    protocol: &Protocol,
    pre: &SystemState,
    proc: &ProcessorId,
    gid: &str,
    targets: &[RegisterId],
    r: &Outcome,
) -> Result<SystemState> {
    let ext = qgo_ext(pre, proc)?;
    let trigger = match &ext.trigger {
        Some(t) if t.gid == gid => t.clone(),
        _ => {
            return Err(Error::InvalidStep(format!(
                "{proc} applies {gid} without a matching trigger"
            )))
        }
    };
    let owned: Vec<RegisterId> = pre.owned_by(proc).iter().map(|r| r.id).collect();
    if owned != targets {
        return Err(Error::InvalidStep(format!(
            "{gid} at {proc} must act on all owned registers {owned:?}"
        )));
    }
    let g = protocol.globals.get(gid)?;
    let owner = Owner::Processor(proc.clone());
    let dims = pre.target_dims(&owner, targets)?;
    let classical = pre.classical(proc)?;
    let op = g.processor_op(proc, classical, &dims)?;
    let mut next = pre.apply_quantum(&owner, &op, targets, &[], r)?;
    next.set_classical(proc, g.processor_component(proc).update(classical, r)?)?;

    let incoming = pre.incoming(proc);
    let mut waitset: BTreeSet<ChannelId> = incoming.iter().cloned().collect();
    if let Some(c) = &trigger.chan {
        waitset.remove(c);
    }
    let mut ext = QgoExt {
        op: Some(gid.to_string()),
        trigger: None,
        self_outcome: Some(r.clone()),
        records: incoming.into_iter().map(|c| (c, Vec::new())).collect(),
        waitset,
        to_broadcast: pre.procs().iter().cloned().collect(),
        recording: None,
        respond_pending: false,
    };
    ext.refresh_pending();
    next.set_ext(proc, ExtState::Qgo(ext))?;
    Ok(next)
}

enum MsgLocation {
    InFlight,
    Inbox(usize),
}

/// `G.μ` on a message addressed to `proc`, either still in flight or just
/// delivered to `proc`'s inbox. The outcome is left in the message's tag.
pub(crate) fn apply_message_component(
    protocol: &Protocol,
    pre: &SystemState,
    proc: &ProcessorId,
    gid: &str,
    msg: MsgId,
    targets: &[RegisterId],
    r: &Outcome,
) -> Result<SystemState> {
    let g = protocol.globals.get(gid)?;
    let (loc, content, regs, tag) = if let Some((chan, _, m)) = pre.in_flight(msg) {
        if &chan.dst != proc {
            return Err(Error::InvalidStep(format!("{msg} is not addressed to {proc}")));
        }
        (MsgLocation::InFlight, &m.content, &m.regs, &m.tag)
    } else {
        let inbox = &pre.classical(proc)?.inbox;
        let i = inbox
            .iter()
            .position(|d| d.msg == msg)
            .ok_or_else(|| Error::InvalidStep(format!("{msg} is neither in flight nor at {proc}")))?;
        let d = &inbox[i];
        (MsgLocation::Inbox(i), &d.content, &d.regs, &d.tag)
    };
    if *tag != MsgTag::Empty {
        return Err(Error::InvalidStep(format!("{msg} already carries a tag")));
    }
    if regs != targets {
        return Err(Error::InvalidStep(format!("{gid} on {msg} must act on {regs:?}")));
    }
    let owner = match loc {
        MsgLocation::InFlight => Owner::Message(msg),
        MsgLocation::Inbox(_) => Owner::Processor(proc.clone()),
    };
    let dims = pre.target_dims(&owner, targets)?;
    let op = g.message_op(content, &dims)?;
    let mut next = pre.apply_quantum(&owner, &op, targets, &[], r)?;
    let content = g.message_component(content).update(content, r)?;
    let tag = MsgTag::Outcome(r.clone());
    match loc {
        MsgLocation::InFlight => next.set_in_flight(msg, content, tag)?,
        MsgLocation::Inbox(i) => {
            let mut c = next.classical(proc)?.clone();
            c.inbox[i].content = content;
            c.inbox[i].tag = tag;
            next.set_classical(proc, c)?;
        }
    }
    Ok(next)
}

/// Moves the outcome held by a delivered message into the response record.
pub(crate) fn record(pre: &SystemState, proc: &ProcessorId, msg: MsgId) -> Result<SystemState> {
    let ext = qgo_ext(pre, proc)?;
    if ext.recording != Some(msg) {
        return Err(Error::InvalidStep(format!("{proc} is not recording {msg}")));
    }
    let mut classical = pre.classical(proc)?.clone();
    let d = classical
        .inbox
        .iter_mut()
        .find(|d| d.msg == msg)
        .ok_or_else(|| Error::InvalidStep(format!("{msg} is not in the inbox of {proc}")))?;
    let MsgTag::Outcome(r) = std::mem::take(&mut d.tag) else {
        return Err(Error::InvalidStep(format!("{msg} carries no outcome to record")));
    };
    let mut ext = ext.clone();
    ext.records
        .get_mut(&d.chan)
        .ok_or_else(|| Error::InvalidStep(format!("no record is open for {}", d.chan)))?
        .push(r);
    ext.recording = None;
    let mut next = pre.clone();
    next.set_classical(proc, classical)?;
    next.set_ext(proc, ExtState::Qgo(ext))?;
    Ok(next)
}

/// The event a processor owes before it may do anything else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Obligation {
    ApplyGlobal { gid: String },
    SendMarker { gid: String, dest: ProcessorId },
    ApplyMsg { gid: String, msg: MsgId },
    Record { msg: MsgId },
    Respond(ResponseRecord),
}

pub fn obligation(state: &SystemState, proc: &ProcessorId) -> Result<Option<Obligation>> {
    let ExtState::Qgo(ext) = state.ext(proc)? else {
        return Ok(None);
    };
    if let Some(t) = &ext.trigger {
        return Ok(Some(Obligation::ApplyGlobal { gid: t.gid.clone() }));
    }
    let Some(gid) = &ext.op else {
        return Ok(None);
    };
    if let Some(dest) = ext.to_broadcast.iter().next() {
        return Ok(Some(Obligation::SendMarker {
            gid: gid.clone(),
            dest: dest.clone(),
        }));
    }
    if let Some(msg) = ext.recording {
        let delivered = state.classical(proc)?.inbox.iter().find(|d| d.msg == msg);
        return Ok(Some(match delivered {
            Some(d) if matches!(d.tag, MsgTag::Outcome(_)) => Obligation::Record { msg },
            _ => Obligation::ApplyMsg { gid: gid.clone(), msg },
        }));
    }
    if ext.respond_pending {
        return Ok(ext.response(proc).map(Obligation::Respond));
    }
    Ok(None)
}

/// The augmented algorithm's transition predicate: base steps while no
/// block is open, otherwise exactly the owed event.
#[derive(Clone, Copy, Debug, Default)]
pub struct Augmented;

impl TransitionPredicate for Augmented {
    fn check(
        &self,
        protocol: &Protocol,
        pre: &SystemState,
        event: &Event,
        _post: &SystemState,
    ) -> std::result::Result<(), String> {
        let proc = event.proc();
        let owed = obligation(pre, proc).map_err(|e| e.to_string())?;
        let ok = match (&owed, &event.kind) {
            (Some(Obligation::ApplyGlobal { gid }), EventKind::Apply { op: OpRef::Global(g), .. }) => g == gid,
            (Some(Obligation::SendMarker { gid, .. }), EventKind::Send { msg, .. }) => {
                msg.tag == MsgTag::Marker(gid.clone())
            }
            (
                Some(Obligation::ApplyMsg { gid, msg }),
                EventKind::Apply {
                    op: OpRef::GlobalMsg { gid: g, msg: m },
                    ..
                },
            ) => g == gid && m == msg,
            (Some(Obligation::Record { msg }), EventKind::Apply { op: OpRef::Record { msg: m }, .. }) => m == msg,
            (Some(Obligation::Respond(_)), EventKind::Respond { .. }) => true,
            (Some(_), _) => false,
            (None, EventKind::Apply { op: OpRef::Base(_), .. }) => {
                return exec::base_apply_allowed(protocol, pre, event)
            }
            (None, EventKind::Send { msg, .. }) => msg.tag == MsgTag::Empty,
            (None, EventKind::Receive { .. }) | (None, EventKind::Invoke { .. }) => true,
            (None, _) => false,
        };
        if ok {
            Ok(())
        } else {
            match owed {
                Some(o) => Err(format!("{proc} owes {o:?} but performed {event}")),
                None => Err(format!("{event} is not allowed for {proc}")),
            }
        }
    }
}

/// Builds the owed event, sampling outcomes where the obligation needs one.
pub fn obligation_event<R: Rng + ?Sized>(
    protocol: &Protocol,
    state: &SystemState,
    proc: &ProcessorId,
    owed: Obligation,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<Event> {
    let kind = match owed {
        Obligation::ApplyGlobal { gid } => {
            let g = protocol.globals.get(&gid)?;
            let targets: Vec<RegisterId> = state.owned_by(proc).iter().map(|r| r.id).collect();
            let dims = state.target_dims(&Owner::Processor(proc.clone()), &targets)?;
            let op = g.processor_op(proc, state.classical(proc)?, &dims)?;
            let map = RegisterMap::in_place(state.quantum().space(), &targets)?;
            let (outcome, _) = qcore::sample_outcome(state.quantum(), &op, &map, rng)?;
            EventKind::Apply {
                proc: proc.clone(),
                op: OpRef::Global(gid),
                targets,
                fresh: vec![],
                outcome,
            }
        }
        Obligation::SendMarker { gid, dest } => EventKind::Send {
            sender: proc.clone(),
            dest,
            msg: MessageInstance::marker(ids.msg(), &gid),
        },
        Obligation::ApplyMsg { gid, msg } => {
            let g = protocol.globals.get(&gid)?;
            let d = state
                .classical(proc)?
                .inbox
                .iter()
                .find(|d| d.msg == msg)
                .ok_or_else(|| Error::InvalidStep(format!("{msg} is not at {proc}")))?;
            let dims = state.target_dims(&Owner::Processor(proc.clone()), &d.regs)?;
            let op = g.message_op(&d.content, &dims)?;
            let map = RegisterMap::in_place(state.quantum().space(), &d.regs)?;
            let (outcome, _) = qcore::sample_outcome(state.quantum(), &op, &map, rng)?;
            EventKind::Apply {
                proc: proc.clone(),
                op: OpRef::GlobalMsg { gid, msg },
                targets: d.regs.clone(),
                fresh: vec![],
                outcome,
            }
        }
        Obligation::Record { msg } => EventKind::Apply {
            proc: proc.clone(),
            op: OpRef::Record { msg },
            targets: vec![],
            fresh: vec![],
            outcome: Outcome::bottom(),
        },
        Obligation::Respond(record) => EventKind::Respond {
            proc: proc.clone(),
            record,
        },
    };
    Ok(Event::new(ids.event(), kind))
}

/// Emits owed events at `proc` until none remain.
pub fn run_block<R: Rng + ?Sized>(
    protocol: &Protocol,
    state: &SystemState,
    proc: &ProcessorId,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<(Vec<Event>, SystemState)> {
    let mut events = Vec::new();
    let mut s = state.clone();
    while let Some(owed) = obligation(&s, proc)? {
        let e = obligation_event(protocol, &s, proc, owed, ids, rng)?;
        s = exec::step(protocol, &s, &e)?;
        events.push(e);
    }
    Ok((events, s))
}

/// The invocation block: `Invoke`, `G.π`, then the marker broadcast.
pub fn qgo_invoke<R: Rng + ?Sized>(
    protocol: &Protocol,
    state: &SystemState,
    proc: &ProcessorId,
    gid: &str,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<(Vec<Event>, SystemState)> {
    if let Some((p, _)) = state.ext_map().iter().find(|(_, e)| !e.is_idle()) {
        return Err(Error::ConcurrentInvocation(format!("{p} is still busy")));
    }
    protocol.globals.get(gid)?;
    let invoke = Event::new(
        ids.event(),
        EventKind::Invoke {
            proc: proc.clone(),
            gid: gid.to_string(),
        },
    );
    let s = exec::step(protocol, state, &invoke)?;
    let (mut rest, s) = qgo_process_new_global_op(protocol, &s, proc, ids, rng)?;
    rest.insert(0, invoke);
    Ok((rest, s))
}

/// `G.π` and the marker broadcast for a processor whose trigger is set.
pub fn qgo_process_new_global_op<R: Rng + ?Sized>(
    protocol: &Protocol,
    state: &SystemState,
    proc: &ProcessorId,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<(Vec<Event>, SystemState)> {
    let ext = qgo_ext(state, proc)?;
    if ext.op.is_some() {
        return Err(Error::AlreadyActive(proc.0.clone()));
    }
    if ext.trigger.is_none() {
        return Err(Error::InvalidStep(format!("{proc} has no global operation to start")));
    }
    run_block(protocol, state, proc, ids, rng)
}

/// Receives the head of `chan` at its destination and runs whatever block
/// the reception opens.
pub fn qgo_receive<R: Rng + ?Sized>(
    protocol: &Protocol,
    state: &SystemState,
    chan: &ChannelId,
    ids: &mut IdAllocator,
    rng: &mut R,
) -> Result<(Vec<Event>, SystemState)> {
    let head = state
        .channel(chan)?
        .front()
        .ok_or_else(|| Error::EmptyChannel(chan.to_string()))?;
    let marker = match &head.tag {
        MsgTag::Marker(g) => {
            protocol.globals.get(g)?;
            Some(g.clone())
        }
        _ => None,
    };
    let recv = Event::new(
        ids.event(),
        EventKind::Receive {
            receiver: chan.dst.clone(),
            sender: chan.src.clone(),
            msg: head.id,
            marker,
        },
    );
    let s = exec::step(protocol, state, &recv)?;
    let (mut rest, s) = run_block(protocol, &s, &chan.dst, ids, rng)?;
    rest.insert(0, recv);
    Ok((rest, s))
}
