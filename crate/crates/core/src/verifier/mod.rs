//! The reordering pipeline that turns an execution of the augmented
//! algorithm into an equicausal execution `Ỹ`, a message-normalized
//! execution `Z̃`, and a specification execution `Ŷ`, checking each claim on
//! the way.
//!
//! Positions are 0-based. A *main fragment* runs from an `Invoke` to the
//! last `Respond` of that invocation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::causality::{self, Reorderer};
use crate::error::{Error, Result};
use crate::exec::{self, Event, EventId, EventKind, Execution, OpRef};
use crate::qcore::EPS_ALGEBRA;
use crate::qgo::Augmented;
use crate::specmachine::{self, AtomicOutcomes, SpecExt};
use crate::sysmodel::{states_equal, ExtState, MsgId, ProcessorId};


const EPS_CHAIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainFragment {
    pub start: usize,
    /// Position of the last response, inclusive.
    pub end: usize,
    pub gid: String,
    pub leader: ProcessorId,
}

/// Finds the main fragments, rejecting pending or overlapping invocations.
pub fn decompose(x: &Execution) -> Result<Vec<MainFragment>> {
    let n = x.initial.procs().len();
    let mut out = Vec::new();
    let mut open: Option<(usize, String, ProcessorId, usize)> = None;
    for (k, e) in x.events.iter().enumerate() {
        match &e.kind {
            EventKind::Invoke { proc, gid } => {
                if open.is_some() {
                    return Err(Error::HypothesisViolation(format!(
                        "invocation at {k} overlaps an unfinished one"
                    )));
                }
                open = Some((k, gid.clone(), proc.clone(), 0));
            }
            EventKind::Respond { record, .. } => match &mut open {
                Some((start, gid, leader, count)) if *gid == record.gid => {
                    *count += 1;
                    if *count == n {
                        out.push(MainFragment {
                            start: *start,
                            end: k,
                            gid: gid.clone(),
                            leader: leader.clone(),
                        });
                        open = None;
                    }
                }
                _ => {
                    return Err(Error::HypothesisViolation(format!(
                        "response at {k} matches no open invocation"
                    )))
                }
            },
            EventKind::Atomic { .. } => {
                return Err(Error::HypothesisViolation("atomic events only exist in the specification".into()))
            }
            _ => {}
        }
    }
    if let Some((start, gid, ..)) = open {
        return Err(Error::HypothesisViolation(format!(
            "invocation of {gid} at {start} is still pending"
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Pre,
    Op,
    Post,
}

#[derive(Clone, Debug)]
pub struct Tripartition {
    pub fragment: MainFragment,
    pub part: HashMap<EventId, Part>,
    /// Per processor, the trigger, `G.π` and marker sends, in order.
    pub blocks: BTreeMap<ProcessorId, Vec<EventId>>,
}

impl Tripartition {
    pub fn count(&self, p: Part) -> usize {
        self.part.values().filter(|&&q| q == p).count()
    }
}

fn is_marker_receive(e: &Event, gid: &str) -> bool {
    matches!(&e.kind, EventKind::Receive { marker: Some(g), .. } if g == gid)
}

fn is_marker_send(e: &Event, gid: &str) -> bool {
    matches!(&e.kind, EventKind::Send { msg, .. } if msg.tag == crate::sysmodel::MsgTag::Marker(gid.to_string()))
}

/// Splits a main fragment into pre, op and post events around each
/// processor's fused block.
pub fn tripartition(x: &Execution, f: &MainFragment) -> Result<Tripartition> {
    let procs = x.initial.procs().to_vec();
    let mut local: BTreeMap<ProcessorId, Vec<usize>> = BTreeMap::new();
    for k in f.start..=f.end {
        local.entry(x.events[k].proc().clone()).or_default().push(k);
    }
    let mut part = HashMap::new();
    let mut blocks = BTreeMap::new();
    for p in &procs {
        let seq = local.get(p).cloned().unwrap_or_default();
        let at = seq
            .iter()
            .position(|&k| matches!(&x.events[k].kind, EventKind::Apply { op: OpRef::Global(g), .. } if *g == f.gid))
            .ok_or_else(|| Error::ProtocolIncomplete(format!("{p} never applied {}", f.gid)))?;
        if at == 0 {
            return Err(Error::ProtocolIncomplete(format!("{p} applied {} without a trigger", f.gid)));
        }
        let trigger = &x.events[seq[at - 1]];
        let ok_trigger = if p == &f.leader {
            matches!(&trigger.kind, EventKind::Invoke { gid, .. } if *gid == f.gid)
        } else {
            is_marker_receive(trigger, &f.gid)
        };
        if !ok_trigger {
            return Err(Error::ProtocolIncomplete(format!("{p}'s block for {} has no trigger", f.gid)));
        }
        let last = at + procs.len();
        if last >= seq.len() || !seq[at + 1..=last].iter().all(|&k| is_marker_send(&x.events[k], &f.gid)) {
            return Err(Error::ProtocolIncomplete(format!("{p} did not broadcast markers for {}", f.gid)));
        }
        let block: Vec<usize> = seq[at - 1..=last].to_vec();
        for (i, &k) in seq.iter().enumerate() {
            let q = if i < at - 1 {
                Part::Pre
            } else if i <= last {
                Part::Op
            } else {
                Part::Post
            };
            part.insert(x.events[k].id, q);
        }
        blocks.insert(p.clone(), block.iter().map(|&k| x.events[k].id).collect());
    }
    Ok(Tripartition {
        fragment: f.clone(),
        part,
        blocks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Justification {
    /// Causally unrelated adjacent events exchanged.
    InversionSwap,
    /// A message operation moved across its own reception; justified by
    /// comparing states, not by causality.
    ReceptionSwap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub stage: String,
    pub position: usize,
    pub first: EventId,
    pub second: EventId,
    pub justification: Justification,
}

fn log_swap(log: &mut Vec<SwapRecord>, r: &Reorderer, stage: &str, i: usize, j: Justification) {
    log.push(SwapRecord {
        stage: stage.to_string(),
        position: i,
        first: r.events()[i].id,
        second: r.events()[i + 1].id,
        justification: j,
    });
}

fn claim_err(step: &str, e: Error) -> Error {
    match e {
        Error::ClaimViolation { .. } => e,
        other => Error::claim(step, other),
    }
}

/// Removes every adjacent (post, pre), (post, op) and (op, pre) pair inside
/// the fragment by swapping the first one found, left to right.
pub fn eliminate_inversions(r: &mut Reorderer, t: &Tripartition, log: &mut Vec<SwapRecord>) -> Result<()> {
    const STEP: &str = "eliminate_inversions";
    let (start, end) = (t.fragment.start, t.fragment.end);
    let rank = |r: &Reorderer, k: usize| t.part[&r.events()[k].id];
    let n = end - start + 1;
    let bound = n * n;
    let mut swaps = 0;
    let mut k = start;
    while k < end {
        if rank(r, k) > rank(r, k + 1) {
            if swaps == bound {
                return Err(Error::claim(STEP, format!("more than {bound} swaps")));
            }
            log_swap(log, r, "claim1", k, Justification::InversionSwap);
            r.swap(k).map_err(|e| claim_err(STEP, e))?;
            swaps += 1;
            k = k.saturating_sub(1).max(start);
        } else {
            k += 1;
        }
    }
    Ok(())
}

/// Moves each recorded message operation in front of its reception and then
/// back to just after the op events, in order of position.
pub fn reorder_message_ops(r: &mut Reorderer, t: &Tripartition, log: &mut Vec<SwapRecord>) -> Result<Vec<MsgId>> {
    const STEP: &str = "reorder_message_ops";
    let (start, end) = (t.fragment.start, t.fragment.end);
    let op_end = start + t.count(Part::Pre) + t.count(Part::Op);
    let gid = &t.fragment.gid;
    let msgs: Vec<MsgId> = r.events()[op_end..=end]
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Apply {
                op: OpRef::GlobalMsg { gid: g, msg },
                ..
            } if g == gid => Some(*msg),
            _ => None,
        })
        .collect();
    for (j, msg) in msgs.iter().enumerate() {
        let find = |r: &Reorderer, pred: &dyn Fn(&Event) -> bool| {
            r.events()
                .iter()
                .position(pred)
                .ok_or_else(|| Error::claim(STEP, format!("lost an event of {msg}")))
        };
        let is_op = |e: &Event| matches!(&e.kind, EventKind::Apply { op: OpRef::GlobalMsg { msg: m, .. }, .. } if m == msg);
        let is_recv = |e: &Event| matches!(&e.kind, EventKind::Receive { msg: m, .. } if m == msg);
        let mut p = find(r, &is_op)?;
        let recv = find(r, &is_recv)?;
        if recv >= p || recv < op_end {
            return Err(Error::claim(STEP, format!("reception of {msg} is not a post event before its operation")));
        }
        while p > recv + 1 {
            log_swap(log, r, "claim2", p - 1, Justification::InversionSwap);
            r.swap(p - 1).map_err(|e| claim_err(STEP, e))?;
            p -= 1;
        }
        log_swap(log, r, "claim2", recv, Justification::ReceptionSwap);
        r.window_swap(recv, EPS_ALGEBRA)
            .map_err(|e| Error::claim(STEP, format!("reception swap of {msg}: {e}")))?;
        p = recv;
        let target = op_end + j;
        while p > target {
            log_swap(log, r, "claim2", p - 1, Justification::InversionSwap);
            r.swap(p - 1).map_err(|e| claim_err(STEP, e))?;
            p -= 1;
        }
    }
    Ok(msgs)
}

/// The events that pass the history filter, in order.
pub fn history(x: &Execution) -> Vec<Event> {
    x.events.iter().filter(|e| e.in_filter()).cloned().collect()
}

/// Whether two filtered events are the same action.
pub fn corresponds(a: &Event, b: &Event) -> bool {
    a.in_filter() && b.in_filter() && a.kind == b.kind
}

pub fn histories_correspond(h: &[Event], g: &[Event]) -> bool {
    h.len() == g.len() && h.iter().zip(g).all(|(a, b)| corresponds(a, b))
}

/// Replaces each op block and its following message operations by one
/// `Invoke` and one atomic event, dropping the protocol's own traffic.
pub fn build_spec_execution(z: &Execution, parts: &[(Tripartition, usize)]) -> Result<Execution> {
    const STEP: &str = "build_spec_execution";
    let mut next_id = z.events.iter().map(|e| e.id.0).max().map_or(0, |m| m + 1);
    let mut events = Vec::new();
    let mut k = 0;
    let mut blocks = parts.iter().peekable();
    while k < z.events.len() {
        if let Some((t, n_msgs)) = blocks.peek() {
            let op_start = t.fragment.start + t.count(Part::Pre);
            if k == op_start {
                let op_end = op_start + t.count(Part::Op);
                let mut invoke = None;
                let mut outcomes = AtomicOutcomes::default();
                for e in &z.events[op_start..op_end + n_msgs] {
                    match &e.kind {
                        EventKind::Invoke { .. } => invoke = Some(e.clone()),
                        EventKind::Apply {
                            proc,
                            op: OpRef::Global(_),
                            outcome,
                            ..
                        } => {
                            outcomes.procs.insert(proc.clone(), outcome.clone());
                        }
                        EventKind::Apply {
                            op: OpRef::GlobalMsg { msg, .. },
                            outcome,
                            ..
                        } => {
                            outcomes.msgs.insert(*msg, outcome.clone());
                        }
                        _ => {}
                    }
                }
                let invoke = invoke.ok_or_else(|| Error::claim(STEP, "op block has no invocation"))?;
                events.push(invoke);
                events.push(Event::new(
                    EventId(next_id),
                    EventKind::Atomic {
                        leader: t.fragment.leader.clone(),
                        gid: t.fragment.gid.clone(),
                        outcomes,
                    },
                ));
                next_id += 1;
                k = op_end + n_msgs;
                blocks.next();
                continue;
            }
        }
        let e = &z.events[k];
        if e.in_filter() {
            events.push(e.clone());
        }
        k += 1;
    }
    let initial = z.initial.with_all_ext(ExtState::Spec(SpecExt::Idle));
    Ok(Execution::new(z.protocol.clone(), initial, events))
}

/// Outcome of every check the pipeline performs; `None` when not reached.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub x_valid: Option<bool>,
    pub equicausal_x_y: Option<bool>,
    pub finals_x_y: Option<bool>,
    pub history_z_y: Option<bool>,
    pub finals_z_y: Option<bool>,
    pub spec_valid: Option<bool>,
    pub history_yhat_z: Option<bool>,
    pub history_count_identity: Option<bool>,
    pub finals_yhat_z: Option<bool>,
}

impl Verdicts {
    pub fn all_true(&self) -> bool {
        [
            self.x_valid,
            self.equicausal_x_y,
            self.finals_x_y,
            self.history_z_y,
            self.finals_z_y,
            self.spec_valid,
            self.history_yhat_z,
            self.history_count_identity,
            self.finals_yhat_z,
        ]
        .iter()
        .all(|v| *v == Some(true))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub step: String,
    pub detail: String,
}

/// Everything `verify` produced for one execution.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub x: Execution,
    pub y: Option<Execution>,
    pub z: Option<Execution>,
    pub y_hat: Option<Execution>,
    pub fragments: Vec<MainFragment>,
    pub swaps: Vec<SwapRecord>,
    pub verdicts: Verdicts,
    pub accepted: bool,
    pub failure: Option<Failure>,
}

/// Serializable form of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub accepted: bool,
    pub failure: Option<Failure>,
    pub verdicts: Verdicts,
    pub fragments: Vec<MainFragment>,
    pub swaps: Vec<SwapRecord>,
    pub y: Option<Vec<Event>>,
    pub z: Option<Vec<Event>>,
    pub y_hat: Option<Vec<Event>>,
}

impl Certificate {
    pub fn report(&self) -> CertificateReport {
        CertificateReport {
            accepted: self.accepted,
            failure: self.failure.clone(),
            verdicts: self.verdicts.clone(),
            fragments: self.fragments.clone(),
            swaps: self.swaps.clone(),
            y: self.y.as_ref().map(|x| x.events.clone()),
            z: self.z.as_ref().map(|x| x.events.clone()),
            y_hat: self.y_hat.as_ref().map(|x| x.events.clone()),
        }
    }

    /// Recomputes every verdict from scratch: fresh replays and causality.
    pub fn recheck(&self) -> Result<bool> {
        let (Some(y), Some(z), Some(y_hat)) = (&self.y, &self.z, &self.y_hat) else {
            return Ok(false);
        };
        let v = check_all(&self.x, y, z, y_hat)?;
        Ok(v.all_true())
    }
}

fn check_all(x: &Execution, y: &Execution, z: &Execution, y_hat: &Execution) -> Result<Verdicts> {
    let fx = exec::final_state(x)?;
    let fy = exec::final_state(y)?;
    let fz = exec::final_state(z)?;
    let spec_valid = specmachine::validate_spec_execution(y_hat).valid;
    let h_z = history(z);
    let h_hat = history(y_hat);
    let finals_yhat_z = if spec_valid {
        let fh = exec::final_state(y_hat)?;
        states_equal(&fh.without_protocol(), &fz.without_protocol(), EPS_CHAIN)
    } else {
        false
    };
    Ok(Verdicts {
        x_valid: Some(exec::validate(&Augmented, x).valid),
        equicausal_x_y: Some(causality::equicausal(x, y)?),
        finals_x_y: Some(states_equal(&fx, &fy, EPS_CHAIN)),
        history_z_y: Some(h_z == history(y)),
        finals_z_y: Some(states_equal(&fz, &fy, EPS_CHAIN)),
        spec_valid: Some(spec_valid),
        history_yhat_z: Some(histories_correspond(&h_z, &h_hat)),
        history_count_identity: Some(h_hat.len() == h_z.len()),
        finals_yhat_z: Some(finals_yhat_z),
    })
}

/// Runs the full pipeline. Failures are recorded in the certificate.
pub fn verify(x: &Execution) -> Certificate {
    let mut cert = Certificate {
        x: x.clone(),
        y: None,
        z: None,
        y_hat: None,
        fragments: Vec::new(),
        swaps: Vec::new(),
        verdicts: Verdicts::default(),
        accepted: false,
        failure: None,
    };
    if let Err(e) = run_pipeline(&mut cert) {
        let step = match &e {
            Error::ClaimViolation { step, .. } => step.clone(),
            Error::HypothesisViolation(_) => "hypothesis".into(),
            Error::ProtocolIncomplete(_) => "tripartition".into(),
            _ => "pipeline".into(),
        };
        cert.failure = Some(Failure {
            step,
            detail: e.to_string(),
        });
    }
    cert
}

fn run_pipeline(cert: &mut Certificate) -> Result<()> {
    let x = cert.x.clone();
    let report = exec::validate(&Augmented, &x);
    cert.verdicts.x_valid = Some(report.valid);
    if let Some(f) = report.failure {
        return Err(Error::HypothesisViolation(format!(
            "execution is not valid for the augmented algorithm at event {}: {}",
            f.index, f.reason
        )));
    }
    if let Some(p) = x.initial.ext_map().iter().find(|(_, e)| !e.is_idle()) {
        return Err(Error::HypothesisViolation(format!("{} starts with an operation underway", p.0)));
    }
    let fragments = decompose(&x)?;
    cert.fragments = fragments.clone();

    let mut parts = Vec::new();
    for f in &fragments {
        parts.push(tripartition(&x, f)?);
    }

    let mut r = Reorderer::new(&x)?;
    for t in &parts {
        eliminate_inversions(&mut r, t, &mut cert.swaps)?;
    }
    let y = r.execution().clone();
    cert.y = Some(y.clone());
    let equi = causality::equicausal(&x, &y)?;
    cert.verdicts.equicausal_x_y = Some(equi);
    let fx = exec::final_state(&x)?;
    let fy = exec::final_state(&y)?;
    let finals = states_equal(&fx, &fy, EPS_CHAIN);
    cert.verdicts.finals_x_y = Some(finals);
    if !equi || !finals {
        return Err(Error::claim("eliminate_inversions", "Ỹ is not equicausal with X̃ or ends elsewhere"));
    }

    let mut counted = Vec::new();
    for t in parts {
        let msgs = reorder_message_ops(&mut r, &t, &mut cert.swaps)?;
        counted.push((t, msgs.len()));
    }
    let z = r.into_execution();
    cert.z = Some(z.clone());
    let fz = exec::final_state(&z)?;
    let h_z = history(&z);
    cert.verdicts.history_z_y = Some(h_z == history(&y));
    cert.verdicts.finals_z_y = Some(states_equal(&fz, &fy, EPS_CHAIN));
    if cert.verdicts.history_z_y != Some(true) || cert.verdicts.finals_z_y != Some(true) {
        return Err(Error::claim("reorder_message_ops", "Z̃ differs from Ỹ in history or final state"));
    }

    let y_hat = build_spec_execution(&z, &counted)?;
    cert.y_hat = Some(y_hat.clone());
    let spec = specmachine::validate_spec_execution(&y_hat);
    cert.verdicts.spec_valid = Some(spec.valid);
    if let Some(f) = spec.failure {
        return Err(Error::claim(
            "build_spec_execution",
            format!("Ŷ is invalid at event {}: {}", f.index, f.reason),
        ));
    }
    let h_hat = history(&y_hat);
    cert.verdicts.history_count_identity = Some(h_hat.len() == h_z.len());
    cert.verdicts.history_yhat_z = Some(histories_correspond(&h_z, &h_hat));
    let fh = exec::final_state(&y_hat)?;
    cert.verdicts.finals_yhat_z = Some(states_equal(&fh.without_protocol(), &fz.without_protocol(), EPS_CHAIN));
    if !cert.verdicts.all_true() {
        return Err(Error::claim("build_spec_execution", "H(Ŷ) does not correspond to H(Z̃)"));
    }
    cert.accepted = true;
    Ok(())
}
