//! Happened-before over event identities, equicausality, and reorderings
//! that are checked against replay.
//!
//! `≺` is the transitive closure of two edge kinds: consecutive events with
//! the same label, and the send and reception of one message. Relations are
//! keyed by [`EventId`], so they can be compared across reorderings.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{self, Event, EventId, EventKind, Execution, Fragment, OpRef};
use crate::qcore::EPS_ALGEBRA;
use crate::sysmodel::{states_equal, MsgId, ProcessorId, SystemState};


/// The component an event happens on.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Processor(ProcessorId),
    Message(MsgId),
}

/// Labels of every event in order. A message component applied before the
/// message's reception happens on the message itself. When the reception is
/// not among `events` the processor label is used.
pub fn labels(events: &[Event]) -> Vec<Label> {
    let mut received: HashMap<MsgId, usize> = HashMap::new();
    for (k, e) in events.iter().enumerate() {
        if let EventKind::Receive { msg, .. } = &e.kind {
            received.insert(*msg, k);
        }
    }
    events
        .iter()
        .enumerate()
        .map(|(k, e)| label_at(e, k, &received))
        .collect()
}

fn label_at(e: &Event, k: usize, received: &HashMap<MsgId, usize>) -> Label {
    if let EventKind::Apply {
        op: OpRef::GlobalMsg { msg, .. },
        ..
    } = &e.kind
    {
        if received.get(msg).is_some_and(|&r| r > k) {
            return Label::Message(*msg);
        }
    }
    Label::Processor(e.proc().clone())
}

fn sent_msg(e: &Event) -> Option<MsgId> {
    match &e.kind {
        EventKind::Send { msg, .. } => Some(msg.id),
        _ => None,
    }
}

fn received_msg(e: &Event) -> Option<MsgId> {
    match &e.kind {
        EventKind::Receive { msg, .. } => Some(*msg),
        _ => None,
    }
}

/// A fixed-width bitset row.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// `≺` for one execution.
#[derive(Clone, Debug)]
pub struct CausalRelation {
    ids: Vec<EventId>,
    pos: HashMap<EventId, usize>,
    reach: Vec<Bits>,
}

impl CausalRelation {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[EventId] {
        &self.ids
    }

    pub fn precedes(&self, a: EventId, b: EventId) -> bool {
        match (self.pos.get(&a), self.pos.get(&b)) {
            (Some(&i), Some(&j)) => self.reach[i].get(j),
            _ => false,
        }
    }

    /// Every pair `(a, b)` with `a ≺ b`.
    pub fn pairs(&self) -> BTreeSet<(EventId, EventId)> {
        let mut out = BTreeSet::new();
        for (i, a) in self.ids.iter().enumerate() {
            for (j, b) in self.ids.iter().enumerate() {
                if self.reach[i].get(j) {
                    out.insert((*a, *b));
                }
            }
        }
        out
    }

    /// Whether every causal pair also respects the execution order.
    pub fn respects_order(&self) -> bool {
        (0..self.len()).all(|i| (0..=i).all(|j| !self.reach[i].get(j)))
    }
}

/// The primitive edges, as position pairs.
pub fn primitive_edges(events: &[Event]) -> Vec<(usize, usize)> {
    let ls = labels(events);
    let mut edges = Vec::new();
    let mut last: HashMap<&Label, usize> = HashMap::new();
    for (k, l) in ls.iter().enumerate() {
        if let Some(&p) = last.get(l) {
            edges.push((p, k));
        }
        last.insert(l, k);
    }
    let sends: HashMap<MsgId, usize> = events
        .iter()
        .enumerate()
        .filter_map(|(k, e)| sent_msg(e).map(|m| (m, k)))
        .collect();
    for (k, e) in events.iter().enumerate() {
        if let Some(m) = received_msg(e) {
            if let Some(&s) = sends.get(&m) {
                edges.push((s, k));
            }
        }
    }
    edges
}

pub fn compute_causality(x: &Execution) -> CausalRelation {
    causality_of(&x.events)
}

pub fn causality_of(events: &[Event]) -> CausalRelation {
    let n = events.len();
    let mut reach = vec![Bits::new(n); n];
    for (a, b) in primitive_edges(events) {
        reach[a].set(b);
    }
    for k in 0..n {
        let row_k = reach[k].clone();
        for row in reach.iter_mut() {
            if row.get(k) {
                row.union_with(&row_k);
            }
        }
    }
    CausalRelation {
        ids: events.iter().map(|e| e.id).collect(),
        pos: events.iter().enumerate().map(|(k, e)| (e.id, k)).collect(),
        reach,
    }
}

fn same_event_set(a: &[Event], b: &[Event]) -> bool {
    let sa: BTreeSet<EventId> = a.iter().map(|e| e.id).collect();
    let sb: BTreeSet<EventId> = b.iter().map(|e| e.id).collect();
    sa.len() == a.len() && sa == sb && a.len() == b.len()
}

/// Whether `x` and `y` share initial state, events and `≺`.
pub fn equicausal(x: &Execution, y: &Execution) -> Result<bool> {
    if x.initial != y.initial {
        return Err(Error::NotComparable("initial states differ".into()));
    }
    if !same_event_set(&x.events, &y.events) {
        return Err(Error::NotComparable("event sets differ".into()));
    }
    let by_id: HashMap<EventId, &Event> = x.events.iter().map(|e| (e.id, e)).collect();
    if y.events.iter().any(|e| by_id.get(&e.id) != Some(&e)) {
        return Err(Error::NotComparable("events with equal ids differ".into()));
    }
    let cx = compute_causality(x);
    let cy = compute_causality(y);
    for a in &cx.ids {
        for b in &cx.ids {
            if cx.precedes(*a, *b) != cy.precedes(*a, *b) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Past and future lightcones of `d`.
pub fn lightcones(x: &Execution, d: &[EventId]) -> (BTreeSet<EventId>, BTreeSet<EventId>) {
    let c = compute_causality(x);
    let mut past = BTreeSet::new();
    let mut future = BTreeSet::new();
    for e in &c.ids {
        for t in d {
            if c.precedes(*e, *t) {
                past.insert(*e);
            }
            if c.precedes(*t, *e) {
                future.insert(*e);
            }
        }
    }
    (past, future)
}

/// Final states of two equicausal executions agree within `1e-9`.
pub fn check_equiv_theorem(x: &Execution, y: &Execution) -> Result<bool> {
    if !equicausal(x, y)? {
        return Err(Error::NotComparable("executions are not equicausal".into()));
    }
    Ok(states_equal(&exec::final_state(x)?, &exec::final_state(y)?, 1e-9))
}

fn ensure_unchanged(x: &Execution, y: &Execution, tol: f64, what: &str) -> Result<()> {
    match equicausal(x, y) {
        Ok(true) => {}
        Ok(false) => return Err(Error::LemmaViolation(format!("{what} changed the causal order"))),
        Err(e) => return Err(Error::LemmaViolation(format!("{what}: {e}"))),
    }
    let fx = exec::final_state(x)?;
    let fy = exec::final_state(y).map_err(|e| Error::LemmaViolation(format!("{what}: {e}")))?;
    if !states_equal(&fx, &fy, tol) {
        return Err(Error::LemmaViolation(format!("{what} changed the final state")));
    }
    Ok(())
}

/// Exchanges the events at `i` and `i + 1`, which must not be causally
/// ordered. The result is checked to be equicausal with the same final
/// state.
pub fn swap_adjacent(x: &Execution, i: usize) -> Result<Execution> {
    if i + 1 >= x.events.len() {
        return Err(Error::IndexOutOfRange(format!("swap at {i} of {} events", x.events.len())));
    }
    let (a, b) = (x.events[i].id, x.events[i + 1].id);
    if compute_causality(x).precedes(a, b) {
        return Err(Error::CausalDependency {
            earlier: a.0,
            later: b.0,
        });
    }
    let mut events = x.events.clone();
    events.swap(i, i + 1);
    let y = x.with_events(events);
    ensure_unchanged(x, &y, EPS_ALGEBRA, "swap")?;
    Ok(y)
}

/// Moves the event at `i` to just after position `j`.
pub fn move_to_end(x: &Execution, i: usize, j: usize) -> Result<Execution> {
    if i > j || j >= x.events.len() {
        return Err(Error::IndexOutOfRange(format!(
            "move {i} after {j} of {} events",
            x.events.len()
        )));
    }
    if i == j {
        return Ok(x.clone());
    }
    let c = compute_causality(x);
    let e = x.events[i].id;
    if let Some(later) = x.events[i + 1..=j].iter().find(|f| c.precedes(e, f.id)) {
        return Err(Error::CausalDependency {
            earlier: e.0,
            later: later.id.0,
        });
    }
    let mut r = Reorderer::new(x)?;
    for k in i..j {
        r.swap(k)?;
    }
    let y = r.into_execution();
    ensure_unchanged(x, &y, 1e-9, "move-to-end")?;
    Ok(y)
}

/// Replaces events `i..=j` of `x` by `y0`.
pub fn substitute(x: &Execution, i: usize, j: usize, y0: &Fragment) -> Result<Execution> {
    let part = exec::slice(x, i, j)?;
    match equicausal(&part, y0) {
        Ok(true) => {}
        Ok(false) => return Err(Error::SubstitutionMismatch("fragments are not equicausal".into())),
        Err(e) => return Err(Error::SubstitutionMismatch(e.to_string())),
    }
    let end = exec::final_state(y0).map_err(|e| Error::SubstitutionMismatch(e.to_string()))?;
    if !states_equal(&exec::final_state(&part)?, &end, 1e-9) {
        return Err(Error::SubstitutionMismatch("fragments end in different states".into()));
    }
    let mut events = x.events[..i].to_vec();
    events.extend(y0.events.iter().cloned());
    events.extend(x.events[j + 1..].iter().cloned());
    let y = x.with_events(events);
    ensure_unchanged(x, &y, 1e-9, "substitution")?;
    Ok(y)
}

/// Whether two adjacent events are causally ordered: same component, or the
/// send and reception of one message.
pub fn adjacent_related(events: &[Event], i: usize) -> bool {
    let received: HashMap<MsgId, usize> = events
        .iter()
        .enumerate()
        .filter_map(|(k, e)| received_msg(e).map(|m| (m, k)))
        .collect();
    let (a, b) = (&events[i], &events[i + 1]);
    label_at(a, i, &received) == label_at(b, i + 1, &received)
        || matches!((sent_msg(a), received_msg(b)), (Some(s), Some(r)) if s == r)
}

/// An execution under repeated adjacent swaps, with every intermediate state
/// cached. Each swap is checked on the two-event window it touches: the
/// state after both events must be unchanged.
#[derive(Clone, Debug)]
pub struct Reorderer {
    x: Execution,
    states: Vec<SystemState>,
}

impl Reorderer {
    pub fn new(x: &Execution) -> Result<Self> {
        Ok(Reorderer {
            states: exec::replay(x)?,
            x: x.clone(),
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.x.events
    }

    pub fn execution(&self) -> &Execution {
        &self.x
    }

    pub fn into_execution(self) -> Execution {
        self.x
    }

    pub fn position(&self, id: EventId) -> Option<usize> {
        self.x.position(id)
    }

    /// A causality-respecting swap of positions `i` and `i + 1`.
    pub fn swap(&mut self, i: usize) -> Result<()> {
        if i + 1 >= self.x.events.len() {
            return Err(Error::IndexOutOfRange(format!("swap at {i}")));
        }
        if adjacent_related(&self.x.events, i) {
            return Err(Error::CausalDependency {
                earlier: self.x.events[i].id.0,
                later: self.x.events[i + 1].id.0,
            });
        }
        self.window_swap(i, EPS_ALGEBRA)
            .map_err(|e| Error::LemmaViolation(format!("swap at {i}: {e}")))
    }

    /// Swaps positions `i` and `i + 1` whatever their causal relation,
    /// provided the state after the pair is unchanged within `tol`.
    pub fn window_swap(&mut self, i: usize, tol: f64) -> Result<()> {
        let p = &self.x.protocol;
        let (a, b) = (&self.x.events[i], &self.x.events[i + 1]);
        let mid = exec::step(p, &self.states[i], b)?;
        let end = exec::step(p, &mid, a)?;
        if !states_equal(&end, &self.states[i + 2], tol) {
            return Err(Error::InvalidStep("state after the pair changed".into()));
        }
        self.x.events.swap(i, i + 1);
        self.states[i + 1] = mid;
        Ok(())
    }
}

/// Applies `steps` random causality-respecting adjacent swaps, each checked
/// on its two-event window.
pub fn random_reordering<R: Rng + ?Sized>(x: &Execution, steps: usize, rng: &mut R) -> Result<Execution> {
    let mut r = Reorderer::new(x)?;
    for _ in 0..steps {
        let free: Vec<usize> = (0..r.events().len().saturating_sub(1))
            .filter(|&i| !adjacent_related(r.events(), i))
            .collect();
        if free.is_empty() {
            break;
        }
        r.swap(free[rng.gen_range(0..free.len())])?;
    }
    Ok(r.into_execution())
}
