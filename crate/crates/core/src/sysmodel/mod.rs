//! Processors, FIFO channels and register ownership.
//!
//! A [`SystemState`] is an immutable value. Sending and receiving move
//! ownership of registers between a processor and a message; the density
//! matrix itself is never touched by either.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{
    self, DensityMatrix, Outcome, QuantumOperation, Register, RegisterId, RegisterMap,
    ZERO_PROBABILITY,
};
use crate::qgo::QgoExt;
use crate::specmachine::SpecExt;

#[cfg(test)]
mod tests;

/// Structured classical datum. Maps are ordered, so serialization is
/// deterministic.
pub type Value = serde_json::Value;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessorId(pub String);

impl ProcessorId {
    pub fn new(name: impl Into<String>) -> Self {
        ProcessorId(name.into())
    }

    /// The conventional name `p{i}`.
    pub fn indexed(i: usize) -> Self {
        ProcessorId(format!("p{i}"))
    }
}

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Serialized as the string `"src->dst"`, so it can key JSON maps.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId {
    pub src: ProcessorId,
    pub dst: ProcessorId,
}

impl ChannelId {
    pub fn new(src: &ProcessorId, dst: &ProcessorId) -> Self {
        ChannelId {
            src: src.clone(),
            dst: dst.clone(),
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

impl std::str::FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| Error::Config(format!("bad channel name {s:?}")))?;
        Ok(ChannelId::new(&ProcessorId::new(a), &ProcessorId::new(b)))
    }
}

impl Serialize for ChannelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MsgId(pub u64);

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// The per-message control slot: empty, a marker naming a global operation,
/// or the outcome of that operation on the message awaiting recording.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgTag {
    #[default]
    Empty,
    Marker(String),
    Outcome(Outcome),
}

impl MsgTag {
    pub fn is_marker(&self) -> bool {
        matches!(self, MsgTag::Marker(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageInstance {
    pub id: MsgId,
    pub content: Value,
    pub regs: Vec<RegisterId>,
    #[serde(default)]
    pub tag: MsgTag,
}

impl MessageInstance {
    pub fn new(id: MsgId, content: Value, regs: Vec<RegisterId>) -> Self {
        MessageInstance {
            id,
            content,
            regs,
            tag: MsgTag::Empty,
        }
    }

    pub fn marker(id: MsgId, gid: &str) -> Self {
        MessageInstance {
            id,
            content: Value::Null,
            regs: Vec::new(),
            tag: MsgTag::Marker(gid.to_string()),
        }
    }

    /// Message class used to pick a per-message global-operation component.
    pub fn class(&self) -> &str {
        message_class(&self.content)
    }
}

pub fn message_class(content: &Value) -> &str {
    content
        .get("class")
        .and_then(Value::as_str)
        .unwrap_or(DEFAULT_CLASS)
}

pub const DEFAULT_CLASS: &str = "default";

/// A received message as recorded in the receiver's classical state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivered {
    pub chan: ChannelId,
    pub msg: MsgId,
    pub content: Value,
    pub regs: Vec<RegisterId>,
    #[serde(default)]
    pub tag: MsgTag,
}

/// A message an algorithm has decided to send; the next base send event of
/// the processor ships the head of the outbox.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outgoing {
    pub dest: ProcessorId,
    pub content: Value,
    pub regs: Vec<RegisterId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub vars: Value,
    #[serde(default)]
    pub inbox: Vec<Delivered>,
    #[serde(default)]
    pub outbox: VecDeque<Outgoing>,
}

impl Default for ClassicalState {
    fn default() -> Self {
        ClassicalState::new(Value::Null)
    }
}

impl ClassicalState {
    pub fn new(vars: Value) -> Self {
        ClassicalState {
            vars,
            inbox: Vec::new(),
            outbox: VecDeque::new(),
        }
    }

    /// Canonical JSON text; equal states give equal text.
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("classical state serializes")
    }

    pub fn decode(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Processor(ProcessorId),
    Message(MsgId),
}

/// Protocol bookkeeping attached to each processor. Augmented executions use
/// the marker-protocol register, specification executions the atomic one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtState {
    Qgo(QgoExt),
    Spec(SpecExt),
}

impl Default for ExtState {
    fn default() -> Self {
        ExtState::Qgo(QgoExt::default())
    }
}

impl ExtState {
    pub fn is_idle(&self) -> bool {
        match self {
            ExtState::Qgo(q) => q.is_idle(),
            ExtState::Spec(s) => matches!(s, SpecExt::Idle),
        }
    }
}

/// A named local operation chosen by an algorithm, with the registers it
/// reads and the fresh registers it creates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalCall {
    pub name: String,
    pub targets: Vec<RegisterId>,
    pub fresh: Vec<RegisterId>,
}

/// An operation an algorithm offers to run next; fresh register ids are
/// assigned by whoever schedules it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub name: String,
    pub targets: Vec<RegisterId>,
    pub fresh_dims: Vec<usize>,
}

impl Proposal {
    pub fn new(name: impl Into<String>, targets: Vec<RegisterId>) -> Self {
        Proposal {
            name: name.into(),
            targets,
            fresh_dims: Vec::new(),
        }
    }

    pub fn matches(&self, call: &LocalCall) -> bool {
        self.name == call.name
            && self.targets == call.targets
            && self.fresh_dims.len() == call.fresh.len()
    }
}

/// A base distributed algorithm. Every method reads only the classical
/// state of the processor it is asked about.
pub trait Algorithm: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Local operations the processor may run now. Sends of the outbox head
    /// and receptions are always permitted and are not listed.
    fn enabled(&self, proc: &ProcessorId, state: &ClassicalState, owned: &[Register]) -> Vec<Proposal>;

    /// The quantum part of `call`, given the dimensions of its targets.
    fn operation(
        &self,
        proc: &ProcessorId,
        state: &ClassicalState,
        call: &LocalCall,
        in_dims: &[usize],
    ) -> Result<QuantumOperation>;

    /// The classical part of `call` after outcome `r`.
    fn update(
        &self,
        proc: &ProcessorId,
        state: &ClassicalState,
        call: &LocalCall,
        r: &Outcome,
    ) -> Result<ClassicalState>;
}

/// The full system state: classical parts, protocol registers, channels,
/// register ownership and the global density matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    procs: Vec<ProcessorId>,
    classical: BTreeMap<ProcessorId, ClassicalState>,
    ext: BTreeMap<ProcessorId, ExtState>,
    channels: BTreeMap<ChannelId, VecDeque<MessageInstance>>,
    ownership: BTreeMap<RegisterId, Owner>,
    #[serde(default)]
    used_msgs: BTreeSet<MsgId>,
    #[serde(with = "crate::harness::trace::density_serde")]
    quantum: Arc<DensityMatrix>,
}

impl SystemState {
    /// A state with empty channels, null classical parts and idle protocol
    /// registers. Every register of `quantum` must be assigned to one of
    /// `procs` in `owners`.
    pub fn new(
        procs: Vec<ProcessorId>,
        quantum: DensityMatrix,
        owners: &BTreeMap<RegisterId, ProcessorId>,
    ) -> Result<Self> {
        let mut procs = procs;
        procs.sort();
        procs.dedup();
        if procs.is_empty() {
            return Err(Error::Config("a system needs at least one processor".into()));
        }
        let mut channels = BTreeMap::new();
        for a in &procs {
            for b in &procs {
                channels.insert(ChannelId::new(a, b), VecDeque::new());
            }
        }
        let mut ownership = BTreeMap::new();
        for id in quantum.space().ids() {
            let p = owners.get(&id).ok_or_else(|| {
                Error::OwnershipViolation(format!("register {id} has no owner"))
            })?;
            if !procs.contains(p) {
                return Err(Error::UnknownProcessor(p.0.clone()));
            }
            ownership.insert(id, Owner::Processor(p.clone()));
        }
        if owners.len() != ownership.len() {
            return Err(Error::OwnershipViolation(
                "owner map names registers outside the quantum state".into(),
            ));
        }
        let classical = procs.iter().map(|p| (p.clone(), ClassicalState::default())).collect();
        let ext = procs.iter().map(|p| (p.clone(), ExtState::default())).collect();
        Ok(SystemState {
            procs,
            classical,
            ext,
            channels,
            ownership,
            used_msgs: BTreeSet::new(),
            quantum: Arc::new(quantum),
        })
    }

    pub fn procs(&self) -> &[ProcessorId] {
        &self.procs
    }

    pub fn quantum(&self) -> &DensityMatrix {
        &self.quantum
    }

    pub fn classical(&self, p: &ProcessorId) -> Result<&ClassicalState> {
        self.classical.get(p).ok_or_else(|| Error::UnknownProcessor(p.0.clone()))
    }

    pub fn classical_map(&self) -> &BTreeMap<ProcessorId, ClassicalState> {
        &self.classical
    }

    pub fn set_classical(&mut self, p: &ProcessorId, state: ClassicalState) -> Result<()> {
        let slot = self
            .classical
            .get_mut(p)
            .ok_or_else(|| Error::UnknownProcessor(p.0.clone()))?;
        *slot = state;
        Ok(())
    }

    pub fn ext(&self, p: &ProcessorId) -> Result<&ExtState> {
        self.ext.get(p).ok_or_else(|| Error::UnknownProcessor(p.0.clone()))
    }

    pub fn ext_map(&self) -> &BTreeMap<ProcessorId, ExtState> {
        &self.ext
    }

    pub fn set_ext(&mut self, p: &ProcessorId, ext: ExtState) -> Result<()> {
        let slot = self.ext.get_mut(p).ok_or_else(|| Error::UnknownProcessor(p.0.clone()))?;
        *slot = ext;
        Ok(())
    }

    /// Replaces every protocol register, e.g. to start a specification run
    /// from an augmented run's initial state.
    pub fn with_all_ext(&self, ext: ExtState) -> SystemState {
        let mut s = self.clone();
        for v in s.ext.values_mut() {
            *v = ext.clone();
        }
        s
    }

    pub fn channel(&self, c: &ChannelId) -> Result<&VecDeque<MessageInstance>> {
        self.channels
            .get(c)
            .ok_or_else(|| Error::UnknownProcessor(c.to_string()))
    }

    pub fn channels(&self) -> &BTreeMap<ChannelId, VecDeque<MessageInstance>> {
        &self.channels
    }

    pub fn incoming(&self, p: &ProcessorId) -> Vec<ChannelId> {
        self.procs.iter().map(|s| ChannelId::new(s, p)).collect()
    }

    pub fn ownership(&self) -> &BTreeMap<RegisterId, Owner> {
        &self.ownership
    }

    pub fn owner(&self, r: RegisterId) -> Option<&Owner> {
        self.ownership.get(&r)
    }

    /// Registers owned by `p`, sorted by id.
    pub fn owned_by(&self, p: &ProcessorId) -> Vec<Register> {
        self.ownership
            .iter()
            .filter(|(_, o)| matches!(o, Owner::Processor(q) if q == p))
            .map(|(id, _)| self.quantum.space().get(*id).expect("owned registers are live"))
            .collect()
    }

    pub fn msg_used(&self, id: MsgId) -> bool {
        self.used_msgs.contains(&id)
    }

    pub fn used_msgs(&self) -> &BTreeSet<MsgId> {
        &self.used_msgs
    }

    /// Finds an in-flight message by id.
    pub fn in_flight(&self, id: MsgId) -> Option<(&ChannelId, usize, &MessageInstance)> {
        self.channels.iter().find_map(|(c, q)| {
            q.iter().position(|m| m.id == id).map(|i| (c, i, &q[i]))
        })
    }

    /// Appends `msg` to channel `sender → dest` and hands its registers to
    /// the message. The density matrix is shared, not copied.
    pub fn send(&self, sender: &ProcessorId, msg: MessageInstance, dest: &ProcessorId) -> Result<SystemState> {
        let chan = ChannelId::new(sender, dest);
        if !self.channels.contains_key(&chan) {
            return Err(Error::UnknownProcessor(format!("{sender} or {dest}")));
        }
        if self.used_msgs.contains(&msg.id) {
            return Err(Error::DuplicateMessage(msg.id.0));
        }
        let mut seen = BTreeSet::new();
        for r in &msg.regs {
            if !seen.insert(*r) {
                return Err(Error::OwnershipViolation(format!("register {r} listed twice")));
            }
            match self.ownership.get(r) {
                Some(Owner::Processor(p)) if p == sender => {}
                other => {
                    return Err(Error::OwnershipViolation(format!(
                        "{sender} sends register {r} owned by {other:?}"
                    )))
                }
            }
        }
        let mut next = self.clone();
        for r in &msg.regs {
            next.ownership.insert(*r, Owner::Message(msg.id));
        }
        next.used_msgs.insert(msg.id);
        next.channels.get_mut(&chan).unwrap().push_back(msg);
        Ok(next)
    }

    /// Pops the head of `chan`, hands its registers to `receiver` and, for
    /// non-marker messages, appends the delivery to the receiver's inbox.
    pub fn receive(&self, receiver: &ProcessorId, chan: &ChannelId) -> Result<(SystemState, MessageInstance)> {
        if &chan.dst != receiver {
            return Err(Error::NotRecipient {
                receiver: receiver.0.clone(),
                channel: chan.to_string(),
            });
        }
        let mut next = self.clone();
        let queue = next
            .channels
            .get_mut(chan)
            .ok_or_else(|| Error::UnknownProcessor(chan.to_string()))?;
        let msg = queue.pop_front().ok_or_else(|| Error::EmptyChannel(chan.to_string()))?;
        for r in &msg.regs {
            next.ownership.insert(*r, Owner::Processor(receiver.clone()));
        }
        if !msg.tag.is_marker() {
            let state = next.classical.get_mut(receiver).unwrap();
            state.inbox.push(Delivered {
                chan: chan.clone(),
                msg: msg.id,
                content: msg.content.clone(),
                regs: msg.regs.clone(),
                tag: msg.tag.clone(),
            });
        }
        Ok((next, msg))
    }

    /// Runs the operation `alg` designates for `call` at `proc` with outcome
    /// `r`: quantum part on the target registers, classical part on `proc`.
    pub fn apply_local(
        &self,
        alg: &dyn Algorithm,
        proc: &ProcessorId,
        call: &LocalCall,
        r: &Outcome,
    ) -> Result<SystemState> {
        let owner = Owner::Processor(proc.clone());
        let dims = self.target_dims(&owner, &call.targets)?;
        let pre = self.classical(proc)?;
        let op = alg.operation(proc, pre, call, &dims)?;
        let mut next = self.apply_quantum(&owner, &op, &call.targets, &call.fresh, r)?;
        let post = alg.update(proc, pre, call, r)?;
        next.set_classical(proc, post)?;
        Ok(next)
    }

    /// Dimensions of `targets`, all of which must be owned by `owner`.
    pub fn target_dims(&self, owner: &Owner, targets: &[RegisterId]) -> Result<Vec<usize>> {
        targets
            .iter()
            .map(|r| match self.ownership.get(r) {
                Some(o) if o == owner => self.quantum.space().dim_of(*r),
                other => Err(Error::LocalityViolation(format!(
                    "register {r} is owned by {other:?}, not {owner:?}"
                ))),
            })
            .collect()
    }

    /// How `op` acting on `targets` sits inside the global register space.
    pub fn operation_map(
        &self,
        owner: &Owner,
        op: &QuantumOperation,
        targets: &[RegisterId],
        fresh: &[RegisterId],
    ) -> Result<RegisterMap> {
        self.target_dims(owner, targets)?;
        if fresh.is_empty() && op.is_dimension_preserving() {
            return RegisterMap::in_place(self.quantum.space(), targets);
        }
        if fresh.len() != op.out_dims().len() {
            return Err(Error::ShapeError(format!(
                "operation has {} outputs but {} fresh registers were supplied",
                op.out_dims().len(),
                fresh.len()
            )));
        }
        for f in fresh {
            if self.quantum.space().contains(*f) {
                return Err(Error::IdCollision(*f));
            }
        }
        let outputs = fresh
            .iter()
            .zip(op.out_dims())
            .map(|(id, &dim)| Register { id: *id, dim })
            .collect();
        Ok(RegisterMap::new(targets.to_vec(), outputs))
    }

    /// Applies outcome `r` of `op` to `targets`, which must belong to
    /// `owner`. Output registers go to `owner`; discarded ones disappear.
    ///
    /// When `fresh` is empty and the operation preserves dimensions it acts
    /// in place; otherwise its outputs are the `fresh` registers.
    pub fn apply_quantum(
        &self,
        owner: &Owner,
        op: &QuantumOperation,
        targets: &[RegisterId],
        fresh: &[RegisterId],
        r: &Outcome,
    ) -> Result<SystemState> {
        let map = self.operation_map(owner, op, targets, fresh)?;
        let post = qcore::apply_outcome(&self.quantum, op, &map, r)?;
        if post.trace() <= ZERO_PROBABILITY {
            return Err(Error::ZeroProbabilityHistory(post.trace()));
        }
        let mut next = self.clone();
        if !map.is_in_place() {
            for t in targets {
                next.ownership.remove(t);
            }
            for out in &map.outputs {
                next.ownership.insert(out.id, owner.clone());
            }
        }
        next.quantum = Arc::new(post);
        Ok(next)
    }

    /// Replaces the content and tag of an in-flight message.
    pub(crate) fn set_in_flight(&mut self, id: MsgId, content: Value, tag: MsgTag) -> Result<()> {
        for q in self.channels.values_mut() {
            if let Some(m) = q.iter_mut().find(|m| m.id == id) {
                m.content = content;
                m.tag = tag;
                return Ok(());
            }
        }
        Err(Error::InvalidStep(format!("message {id} is not in flight")))
    }

    /// Checks that ownership partitions the live registers and that every
    /// in-flight message owns exactly its registers.
    pub fn check_invariants(&self) -> Result<()> {
        let live: BTreeSet<RegisterId> = self.quantum.space().ids().collect();
        let owned: BTreeSet<RegisterId> = self.ownership.keys().copied().collect();
        if live != owned {
            return Err(Error::OwnershipViolation(format!(
                "live registers {live:?} differ from owned registers {owned:?}"
            )));
        }
        let mut carried = BTreeMap::new();
        for q in self.channels.values() {
            for m in q {
                for r in &m.regs {
                    carried.insert(*r, m.id);
                }
            }
        }
        for (r, o) in &self.ownership {
            match (o, carried.get(r)) {
                (Owner::Message(m), Some(c)) if m == c => {}
                (Owner::Processor(_), None) => {}
                _ => {
                    return Err(Error::OwnershipViolation(format!(
                        "register {r} owner {o:?} disagrees with channel contents"
                    )))
                }
            }
        }
        Ok(())
    }

    /// The state with every protocol register and message tag cleared, for
    /// comparing runs that differ only in protocol bookkeeping.
    pub fn without_protocol(&self) -> SystemState {
        let mut s = self.clone();
        for v in s.ext.values_mut() {
            *v = ExtState::default();
        }
        for q in s.channels.values_mut() {
            for m in q.iter_mut() {
                if !m.tag.is_marker() {
                    m.tag = MsgTag::Empty;
                }
            }
        }
        for c in s.classical.values_mut() {
            for d in c.inbox.iter_mut() {
                d.tag = MsgTag::Empty;
            }
        }
        s.used_msgs.clear();
        s
    }
}

/// Structural equality of everything classical plus entry-wise equality of
/// the canonical density matrices within `tol`.
pub fn states_equal(a: &SystemState, b: &SystemState, tol: f64) -> bool {
    a.procs == b.procs
        && a.classical == b.classical
        && a.ext == b.ext
        && a.channels == b.channels
        && a.ownership == b.ownership
        && (Arc::ptr_eq(&a.quantum, &b.quantum) || a.quantum.approx_eq(&b.quantum, tol))
}
