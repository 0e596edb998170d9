//! Events, steps and executions.
//!
//! Every event carries whatever randomness it consumed (the measurement
//! outcome), so an execution replays deterministically from its initial
//! state. Positions in an event sequence are 0-based throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{Outcome, RegisterId};
use crate::qgo::{self, GlobalLibrary, ResponseRecord};
use crate::specmachine::{self, AtomicOutcomes};
use crate::sysmodel::{
    Algorithm, ChannelId, ExtState, LocalCall, MessageInstance, MsgId, MsgTag, Owner, ProcessorId,
    SystemState,
};


#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// What an application event applies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpRef {
    /// A base-algorithm operation, resolved by name.
    Base(String),
    /// The processor component of a global operation, on every register the
    /// processor owns.
    Global(String),
    /// The message component of a global operation, on one message.
    GlobalMsg { gid: String, msg: MsgId },
    /// Moves a message's recorded outcome into the receiver's response.
    Record { msg: MsgId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Invoke {
        proc: ProcessorId,
        gid: String,
    },
    Respond {
        proc: ProcessorId,
        record: ResponseRecord,
    },
    Apply {
        proc: ProcessorId,
        op: OpRef,
        #[serde(default)]
        targets: Vec<RegisterId>,
        #[serde(default)]
        fresh: Vec<RegisterId>,
        outcome: Outcome,
    },
    Send {
        sender: ProcessorId,
        dest: ProcessorId,
        msg: MessageInstance,
    },
    Receive {
        receiver: ProcessorId,
        sender: ProcessorId,
        msg: MsgId,
        /// The marker's global operation if the message is a marker.
        #[serde(default)]
        marker: Option<String>,
    },
    /// Specification only: a global operation applied everywhere at once.
    Atomic {
        leader: ProcessorId,
        gid: String,
        outcomes: AtomicOutcomes,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(id: EventId, kind: EventKind) -> Self {
        Event { id, kind }
    }

    /// The processor performing the event (the leader for atomic events).
    pub fn proc(&self) -> &ProcessorId {
        match &self.kind {
            EventKind::Invoke { proc, .. }
            | EventKind::Respond { proc, .. }
            | EventKind::Apply { proc, .. } => proc,
            EventKind::Send { sender, .. } => sender,
            EventKind::Receive { receiver, .. } => receiver,
            EventKind::Atomic { leader, .. } => leader,
        }
    }

    /// Invocations, responses and base-algorithm steps: the events a history
    /// keeps.
    pub fn in_filter(&self) -> bool {
        match &self.kind {
            EventKind::Invoke { .. } | EventKind::Respond { .. } => true,
            EventKind::Apply { op, .. } => matches!(op, OpRef::Base(_)),
            EventKind::Send { msg, .. } => !msg.tag.is_marker(),
            EventKind::Receive { marker, .. } => marker.is_none(),
            EventKind::Atomic { .. } => false,
        }
    }

    pub fn is_marker_traffic(&self) -> bool {
        match &self.kind {
            EventKind::Send { msg, .. } => msg.tag.is_marker(),
            EventKind::Receive { marker, .. } => marker.is_some(),
            _ => false,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.id)?;
        match &self.kind {
            EventKind::Invoke { proc, gid } => write!(f, "invoke {proc} {gid}"),
            EventKind::Respond { proc, record } => {
                write!(f, "respond {proc} {} self={}", record.gid, record.self_outcome)?;
                for (c, rs) in &record.channels {
                    let labels: Vec<&str> = rs.iter().map(Outcome::as_str).collect();
                    write!(f, " {c}=[{}]", labels.join(", "))?;
                }
                Ok(())
            }
            EventKind::Apply {
                proc,
                op,
                targets,
                fresh,
                outcome,
            } => {
                let what = match op {
                    OpRef::Base(n) => n.clone(),
                    OpRef::Global(g) => format!("{g}.proc"),
                    OpRef::GlobalMsg { gid, msg } => format!("{gid}.msg({msg})"),
                    OpRef::Record { msg } => format!("record({msg})"),
                };
                let ts: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
                write!(f, "apply {proc} {what} [{}]", ts.join(","))?;
                if !fresh.is_empty() {
                    let fs: Vec<String> = fresh.iter().map(|t| t.to_string()).collect();
                    write!(f, " +[{}]", fs.join(","))?;
                }
                write!(f, " -> {outcome}")
            }
            EventKind::Send { sender, dest, msg } => {
                write!(f, "send {sender}->{dest} {}", msg.id)?;
                match &msg.tag {
                    MsgTag::Marker(g) => write!(f, " marker({g})"),
                    _ => write!(f, " {}", msg.content),
                }
            }
            EventKind::Receive {
                receiver,
                sender,
                msg,
                marker,
            } => {
                write!(f, "receive {sender}->{receiver} {msg}")?;
                if let Some(g) = marker {
                    write!(f, " marker({g})")?;
                }
                Ok(())
            }
            EventKind::Atomic { leader, gid, outcomes } => {
                write!(f, "atomic {gid} by {leader}:")?;
                for (p, r) in &outcomes.procs {
                    write!(f, " {p}={r}")?;
                }
                for (m, r) in &outcomes.msgs {
                    write!(f, " {m}={r}")?;
                }
                Ok(())
            }
        }
    }
}

/// The algorithm and global-operation library an execution runs under.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub algorithm: Arc<dyn Algorithm>,
    pub globals: GlobalLibrary,
}

impl Protocol {
    pub fn new(algorithm: Arc<dyn Algorithm>, globals: GlobalLibrary) -> Arc<Self> {
        Arc::new(Protocol { algorithm, globals })
    }
}

/// An initial state with a totally ordered event sequence. A fragment is
/// the same structure viewed as a piece of a larger execution.
#[derive(Clone, Debug)]
pub struct Execution {
    pub protocol: Arc<Protocol>,
    pub initial: SystemState,
    pub events: Vec<Event>,
}

pub type Fragment = Execution;

impl PartialEq for Execution {
    fn eq(&self, other: &Self) -> bool {
        self.initial == other.initial && self.events == other.events
    }
}

impl Execution {
    pub fn new(protocol: Arc<Protocol>, initial: SystemState, events: Vec<Event>) -> Self {
        Execution {
            protocol,
            initial,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn with_events(&self, events: Vec<Event>) -> Execution {
        Execution {
            protocol: self.protocol.clone(),
            initial: self.initial.clone(),
            events,
        }
    }

    pub fn position(&self, id: EventId) -> Option<usize> {
        self.events.iter().position(|e| e.id == id)
    }
}

/// The state after `event` occurs in `pre`.
pub fn step(protocol: &Protocol, pre: &SystemState, event: &Event) -> Result<SystemState> {
    match &event.kind {
        EventKind::Invoke { proc, gid } => {
            protocol.globals.get(gid)?;
            let ext = match pre.ext(proc)? {
                ExtState::Qgo(q) => ExtState::Qgo(q.on_invoke(proc, gid)?),
                ExtState::Spec(s) => ExtState::Spec(s.on_invoke(proc, gid)?),
            };
            let mut next = pre.clone();
            next.set_ext(proc, ext)?;
            Ok(next)
        }
        EventKind::Respond { proc, record } => {
            if &record.proc != proc {
                return Err(Error::InvalidStep(format!(
                    "{proc} responds with a record for {}",
                    record.proc
                )));
            }
            let ext = match pre.ext(proc)? {
                ExtState::Qgo(q) => ExtState::Qgo(q.on_respond(proc, record)?),
                ExtState::Spec(s) => ExtState::Spec(s.on_respond(proc, record)?),
            };
            let mut next = pre.clone();
            next.set_ext(proc, ext)?;
            Ok(next)
        }
        EventKind::Apply {
            proc,
            op,
            targets,
            fresh,
            outcome,
        } => match op {
            OpRef::Base(name) => {
                let call = LocalCall {
                    name: name.clone(),
                    targets: targets.clone(),
                    fresh: fresh.clone(),
                };
                pre.apply_local(protocol.algorithm.as_ref(), proc, &call, outcome)
            }
            OpRef::Global(gid) => {
                qgo::apply_processor_component(protocol, pre, proc, gid, targets, outcome)
            }
            OpRef::GlobalMsg { gid, msg } => {
                qgo::apply_message_component(protocol, pre, proc, gid, *msg, targets, outcome)
            }
            OpRef::Record { msg } => qgo::record(pre, proc, *msg),
        },
        EventKind::Send { sender, dest, msg } => {
            let mut next = match &msg.tag {
                MsgTag::Empty => {
                    let mut s = pre.clone();
                    let mut state = s.classical(sender)?.clone();
                    let head = state.outbox.pop_front().ok_or_else(|| {
                        Error::InvalidStep(format!("{sender} has nothing to send"))
                    })?;
                    if &head.dest != dest || head.content != msg.content || head.regs != msg.regs {
                        return Err(Error::InvalidStep(format!(
                            "{sender} sends {} but its outbox head differs",
                            msg.id
                        )));
                    }
                    s.set_classical(sender, state)?;
                    s
                }
                MsgTag::Marker(gid) => {
                    if !msg.regs.is_empty() {
                        return Err(Error::InvalidStep("markers carry no registers".into()));
                    }
                    let mut s = pre.clone();
                    let ext = match pre.ext(sender)? {
                        ExtState::Qgo(q) => ExtState::Qgo(q.on_marker_sent(gid, dest)?),
                        ExtState::Spec(_) => {
                            return Err(Error::SpecViolation("markers do not exist in the specification".into()))
                        }
                    };
                    s.set_ext(sender, ext)?;
                    s
                }
                MsgTag::Outcome(_) => {
                    return Err(Error::InvalidStep("a fresh message cannot carry an outcome".into()))
                }
            };
            next = next.send(sender, msg.clone(), dest)?;
            Ok(next)
        }
        EventKind::Receive {
            receiver,
            sender,
            msg,
            marker,
        } => {
            let chan = ChannelId::new(sender, receiver);
            let head = pre
                .channel(&chan)?
                .front()
                .ok_or_else(|| Error::EmptyChannel(chan.to_string()))?;
            if head.id != *msg {
                return Err(Error::InvalidStep(format!(
                    "{receiver} receives {msg} but the head of {chan} is {}",
                    head.id
                )));
            }
            let tag_marker = match &head.tag {
                MsgTag::Marker(g) => Some(g.clone()),
                _ => None,
            };
            if &tag_marker != marker {
                return Err(Error::InvalidStep(format!("marker flag of {msg} is wrong")));
            }
            let (mut next, delivered) = pre.receive(receiver, &chan)?;
            let ext = match pre.ext(receiver)? {
                ExtState::Qgo(q) => ExtState::Qgo(q.on_receive(&chan, &delivered)?),
                ExtState::Spec(s) => {
                    if delivered.tag.is_marker() {
                        return Err(Error::SpecViolation(
                            "markers do not exist in the specification".into(),
                        ));
                    }
                    ExtState::Spec(s.clone())
                }
            };
            next.set_ext(receiver, ext)?;
            Ok(next)
        }
        EventKind::Atomic {
            leader,
            gid,
            outcomes,
        } => specmachine::atomic_step(protocol, pre, leader, gid, outcomes),
    }
}

/// `Ψ⁰, …, Ψⁿ` for an execution of `n` events.
pub fn replay(x: &Execution) -> Result<Vec<SystemState>> {
    let mut states = Vec::with_capacity(x.events.len() + 1);
    states.push(x.initial.clone());
    for (i, e) in x.events.iter().enumerate() {
        let next = step(&x.protocol, states.last().unwrap(), e).map_err(|err| Error::replay(i, err))?;
        states.push(next);
    }
    Ok(states)
}

pub fn final_state(x: &Execution) -> Result<SystemState> {
    let mut s = x.initial.clone();
    for (i, e) in x.events.iter().enumerate() {
        s = step(&x.protocol, &s, e).map_err(|err| Error::replay(i, err))?;
    }
    Ok(s)
}

/// A transition predicate over steps. Implementations consult only the
/// classical components local to the acting processor.
pub trait TransitionPredicate {
    fn check(
        &self,
        protocol: &Protocol,
        pre: &SystemState,
        event: &Event,
        post: &SystemState,
    ) -> std::result::Result<(), String>;
}

/// The base algorithm alone: its own operations, sends of the outbox head
/// and receptions of ordinary messages.
#[derive(Clone, Copy, Debug, Default)]
pub struct BaseDelta;

impl TransitionPredicate for BaseDelta {
    fn check(
        &self,
        protocol: &Protocol,
        pre: &SystemState,
        event: &Event,
        _post: &SystemState,
    ) -> std::result::Result<(), String> {
        match &event.kind {
            EventKind::Apply {
                op: OpRef::Base(_), ..
            } => base_apply_allowed(protocol, pre, event),
            EventKind::Send { msg, .. } if msg.tag == MsgTag::Empty => Ok(()),
            EventKind::Receive { marker: None, .. } => Ok(()),
            _ => Err(format!("{event} is not a base-algorithm event")),
        }
    }
}

/// Whether a base application event is among the operations the algorithm
/// enables at its processor.
pub fn base_apply_allowed(
    protocol: &Protocol,
    pre: &SystemState,
    event: &Event,
) -> std::result::Result<(), String> {
    let EventKind::Apply {
        proc,
        op: OpRef::Base(name),
        targets,
        fresh,
        ..
    } = &event.kind
    else {
        return Err(format!("{event} is not a base application"));
    };
    let state = pre.classical(proc).map_err(|e| e.to_string())?;
    let call = LocalCall {
        name: name.clone(),
        targets: targets.clone(),
        fresh: fresh.clone(),
    };
    let enabled = protocol.algorithm.enabled(proc, state, &pre.owned_by(proc));
    if enabled.iter().any(|p| p.matches(&call)) {
        Ok(())
    } else {
        Err(format!("{name} is not enabled at {proc}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub failure: Option<StepFailure>,
}

impl ValidationReport {
    fn ok() -> Self {
        ValidationReport {
            valid: true,
            failure: None,
        }
    }

    fn fail(index: usize, reason: impl Into<String>) -> Self {
        ValidationReport {
            valid: false,
            failure: Some(StepFailure {
                index,
                reason: reason.into(),
            }),
        }
    }
}

/// Checks that `x` replays and that every step is allowed by `delta`.
pub fn validate(delta: &dyn TransitionPredicate, x: &Execution) -> ValidationReport {
    let mut state = x.initial.clone();
    for (i, e) in x.events.iter().enumerate() {
        let next = match step(&x.protocol, &state, e) {
            Ok(s) => s,
            Err(err) => return ValidationReport::fail(i, err.to_string()),
        };
        if let Err(reason) = delta.check(&x.protocol, &state, e, &next) {
            return ValidationReport::fail(i, reason);
        }
        state = next;
    }
    ValidationReport::ok()
}

/// Events `i..=j` (0-based, inclusive) starting from the state before `i`.
pub fn slice(x: &Execution, i: usize, j: usize) -> Result<Fragment> {
    if i > j || j >= x.events.len() {
        return Err(Error::IndexOutOfRange(format!(
            "slice {i}..={j} of {} events",
            x.events.len()
        )));
    }
    fragment(x, i, j + 1)
}

/// Events in the half-open range `start..end`; may be empty.
pub(crate) fn fragment(x: &Execution, start: usize, end: usize) -> Result<Fragment> {
    if start > end || end > x.events.len() {
        return Err(Error::IndexOutOfRange(format!(
            "range {start}..{end} of {} events",
            x.events.len()
        )));
    }
    let mut s = x.initial.clone();
    for (i, e) in x.events[..start].iter().enumerate() {
        s = step(&x.protocol, &s, e).map_err(|err| Error::replay(i, err))?;
    }
    Ok(Execution::new(x.protocol.clone(), s, x.events[start..end].to_vec()))
}

/// `a :: b`, defined when `a` ends exactly where `b` starts.
pub fn concat(a: &Fragment, b: &Fragment) -> Result<Fragment> {
    let end = final_state(a)?;
    if end != b.initial {
        return Err(Error::ConcatMismatch);
    }
    let mut events = a.events.clone();
    events.extend(b.events.iter().cloned());
    Ok(Execution::new(a.protocol.clone(), a.initial.clone(), events))
}

/// Hands out event, message and register ids that have not been used yet.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdAllocator {
    next_event: u64,
    next_msg: u64,
    next_reg: u64,
}

impl IdAllocator {
    pub fn new(next_event: u64, next_msg: u64, next_reg: u64) -> Self {
        IdAllocator {
            next_event,
            next_msg,
            next_reg,
        }
    }

    /// Ids past everything used by `state` and `events`.
    pub fn after(state: &SystemState, events: &[Event]) -> Self {
        let mut a = IdAllocator::default();
        for id in state.used_msgs() {
            a.next_msg = a.next_msg.max(id.0 + 1);
        }
        for id in state.quantum().space().ids() {
            a.next_reg = a.next_reg.max(id.0 + 1);
        }
        for e in events {
            a.next_event = a.next_event.max(e.id.0 + 1);
            match &e.kind {
                EventKind::Send { msg, .. } => a.next_msg = a.next_msg.max(msg.id.0 + 1),
                EventKind::Apply { fresh, targets, .. } => {
                    for r in fresh.iter().chain(targets) {
                        a.next_reg = a.next_reg.max(r.0 + 1);
                    }
                }
                _ => {}
            }
        }
        a
    }

    pub fn event(&mut self) -> EventId {
        let id = EventId(self.next_event);
        self.next_event += 1;
        id
    }

    pub fn msg(&mut self) -> MsgId {
        let id = MsgId(self.next_msg);
        self.next_msg += 1;
        id
    }

    pub fn reg(&mut self) -> RegisterId {
        let id = RegisterId(self.next_reg);
        self.next_reg += 1;
        id
    }
}

/// Groups events by acting processor, in order.
pub fn per_processor(events: &[Event]) -> BTreeMap<ProcessorId, Vec<EventId>> {
    let mut out: BTreeMap<ProcessorId, Vec<EventId>> = BTreeMap::new();
    for e in events {
        out.entry(e.proc().clone()).or_default().push(e.id);
    }
    out
}

/// Builds an execution step by step, checking each event as it goes.
/// Outcomes are given by the caller; ids are allocated automatically.
#[derive(Clone, Debug)]
pub struct Builder {
    x: Execution,
    state: SystemState,
    ids: IdAllocator,
}

impl Builder {
    pub fn new(protocol: Arc<Protocol>, initial: SystemState) -> Self {
        Builder {
            ids: IdAllocator::after(&initial, &[]),
            state: initial.clone(),
            x: Execution::new(protocol, initial, Vec::new()),
        }
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn ids(&mut self) -> &mut IdAllocator {
        &mut self.ids
    }

    pub fn execution(&self) -> &Execution {
        &self.x
    }

    pub fn build(self) -> Execution {
        self.x
    }

    /// Steps an arbitrary event kind.
    pub fn push(&mut self, kind: EventKind) -> Result<EventId> {
        let e = Event::new(self.ids.event(), kind);
        self.state = step(&self.x.protocol, &self.state, &e)?;
        self.x.events.push(e);
        Ok(self.x.events.last().unwrap().id)
    }

    /// Appends events produced elsewhere, together with the state they reach.
    pub fn extend(&mut self, events: Vec<Event>, state: SystemState) {
        self.x.events.extend(events);
        self.state = state;
    }

    /// A base operation; fresh output registers are allocated when the
    /// operation changes dimensions.
    pub fn apply(&mut self, proc: &ProcessorId, name: &str, targets: &[RegisterId], outcome: &str) -> Result<EventId> {
        let mut call = LocalCall {
            name: name.to_string(),
            targets: targets.to_vec(),
            fresh: vec![],
        };
        let dims = self.state.target_dims(&Owner::Processor(proc.clone()), targets)?;
        let op = self
            .x
            .protocol
            .algorithm
            .operation(proc, self.state.classical(proc)?, &call, &dims)?;
        if !op.is_dimension_preserving() {
            call.fresh = op.out_dims().iter().map(|_| self.ids.reg()).collect();
        }
        self.push(EventKind::Apply {
            proc: proc.clone(),
            op: OpRef::Base(call.name),
            targets: call.targets,
            fresh: call.fresh,
            outcome: Outcome::new(outcome),
        })
    }

    /// Ships the head of `proc`'s outbox.
    pub fn send(&mut self, proc: &ProcessorId) -> Result<(EventId, MsgId)> {
        let head = self
            .state
            .classical(proc)?
            .outbox
            .front()
            .cloned()
            .ok_or_else(|| Error::InvalidStep(format!("{proc} has nothing to send")))?;
        let msg = MessageInstance::new(self.ids.msg(), head.content, head.regs);
        let id = msg.id;
        let e = self.push(EventKind::Send {
            sender: proc.clone(),
            dest: head.dest,
            msg,
        })?;
        Ok((e, id))
    }

    /// Receives the head of the channel `from → to`.
    pub fn receive(&mut self, from: &ProcessorId, to: &ProcessorId) -> Result<EventId> {
        let chan = ChannelId::new(from, to);
        let head = self
            .state
            .channel(&chan)?
            .front()
            .ok_or_else(|| Error::EmptyChannel(chan.to_string()))?;
        let marker = match &head.tag {
            MsgTag::Marker(g) => Some(g.clone()),
            _ => None,
        };
        let msg = head.id;
        self.push(EventKind::Receive {
            receiver: to.clone(),
            sender: from.clone(),
            msg,
            marker,
        })
    }
}
