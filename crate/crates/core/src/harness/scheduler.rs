//! The seeded adversarial scheduler.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{self, Event, EventKind, Execution, IdAllocator, OpRef, TransitionPredicate};
use crate::qcore;
use crate::qgo::{self, Augmented};
use crate::sysmodel::{ChannelId, LocalCall, MessageInstance, Owner, ProcessorId, Proposal, SystemState};

use super::config::{Invocation, PolicyKind, ScenarioConfig};
use super::{scenario, trace::TraceFile};

#[derive(Clone, Debug, PartialEq)]
enum Choice {
    Invoke(usize),
    Apply(ProcessorId, Proposal),
    Send(ProcessorId),
    Receive(ChannelId),
}

impl Choice {
    fn proc(&self, invocations: &[Invocation]) -> ProcessorId {
        match self {
            Choice::Invoke(i) => ProcessorId::new(&invocations[*i].leader),
            Choice::Apply(p, _) | Choice::Send(p) => p.clone(),
            Choice::Receive(c) => c.dst.clone(),
        }
    }
}

struct Rngs {
    schedule: ChaCha8Rng,
    base: ChaCha8Rng,
    global: ChaCha8Rng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Rngs {
            schedule: stream(1),
            base: stream(2),
            global: stream(3),
        }
    }
}

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    x: Execution,
    state: SystemState,
    ids: IdAllocator,
    rngs: Rngs,
    budget: usize,
    next_invocation: usize,
    deferred: BTreeMap<ChannelId, u32>,
    turn: usize,
    cap: usize,
}

/// Runs the augmented algorithm of `cfg` to quiescence.
pub fn run_simulation(cfg: &ScenarioConfig) -> Result<Execution> {
    cfg.check()?;
    let (protocol, initial) = scenario(cfg)?;
    let x = Execution::new(protocol, initial.clone(), Vec::new());
    if cfg.scheduler.policy == PolicyKind::ReplayFromTrace {
        return replay_from_trace(cfg, x);
    }
    for inv in &cfg.invocations {
        x.protocol.globals.get(&inv.gid)?;
    }
    let mut run = Run {
        cfg,
        ids: IdAllocator::after(&initial, &[]),
        state: initial,
        x,
        rngs: Rngs::new(cfg.seed),
        budget: cfg.max_events,
        next_invocation: 0,
        deferred: BTreeMap::new(),
        turn: 0,
        cap: cfg.effective_dim_cap(),
    };
    while let Some(choice) = run.pick()? {
        run.execute(choice)?;
    }
    Ok(run.x)
}

fn replay_from_trace(cfg: &ScenarioConfig, x: Execution) -> Result<Execution> {
    let path = cfg.scheduler.trace.as_ref().expect("checked by config");
    let source = TraceFile::load(path)?;
    let y = x.with_events(source.execution.events);
    let report = exec::validate(&Augmented, &y);
    match report.failure {
        None => Ok(y),
        Some(f) => Err(Error::InvalidStep(format!("replayed event {} is not allowed: {}", f.index, f.reason))),
    }
}

impl Run<'_> {
    fn all_idle(&self) -> bool {
        self.state.ext_map().values().all(|e| e.is_idle())
    }

    fn candidates(&self) -> Result<Vec<Choice>> {
        let mut out = Vec::new();
        if let Some(inv) = self.cfg.invocations.get(self.next_invocation) {
            if self.x.events.len() >= inv.at && self.all_idle() {
                out.push(Choice::Invoke(self.next_invocation));
            }
        }
        if self.budget > 0 {
            for p in self.state.procs() {
                let classical = self.state.classical(p)?;
                for prop in self.x.protocol.algorithm.enabled(p, classical, &self.state.owned_by(p)) {
                    out.push(Choice::Apply(p.clone(), prop));
                }
                if !classical.outbox.is_empty() {
                    out.push(Choice::Send(p.clone()));
                }
            }
        }
        for (c, q) in self.state.channels() {
            if !q.is_empty() {
                out.push(Choice::Receive(c.clone()));
            }
        }
        Ok(out)
    }

    fn pick(&mut self) -> Result<Option<Choice>> {
        let mut cands = self.candidates()?;
        if cands.is_empty() {
            if self.next_invocation < self.cfg.invocations.len() {
                if !self.all_idle() {
                    return Err(Error::InvalidStep("global operation cannot complete".into()));
                }
                return Ok(Some(Choice::Invoke(self.next_invocation)));
            }
            return Ok(None);
        }
        let receives: Vec<ChannelId> = cands
            .iter()
            .filter_map(|c| match c {
                Choice::Receive(ch) => Some(ch.clone()),
                _ => None,
            })
            .collect();
        self.deferred.retain(|c, _| receives.contains(c));

        let forced = self.cfg.scheduler.fairness.and_then(|bound| {
            receives
                .iter()
                .filter(|c| self.deferred.get(*c).copied().unwrap_or(0) >= bound)
                .max_by_key(|c| self.deferred.get(*c).copied().unwrap_or(0))
                .cloned()
        });
        let choice = match forced {
            Some(c) => Choice::Receive(c),
            None => self.by_policy(&mut cands),
        };
        for c in &receives {
            if choice == Choice::Receive(c.clone()) {
                self.deferred.remove(c);
            } else {
                *self.deferred.entry(c.clone()).or_insert(0) += 1;
            }
        }
        Ok(Some(choice))
    }

    fn by_policy(&mut self, cands: &mut Vec<Choice>) -> Choice {
        let rng = &mut self.rngs.schedule;
        match self.cfg.scheduler.policy {
            PolicyKind::UniformRandom | PolicyKind::ReplayFromTrace => {
                let k = rng.gen_range(0..cands.len());
                cands.swap_remove(k)
            }
            PolicyKind::ChannelDelayBiased => {
                let w = |c: &Choice| if matches!(c, Choice::Receive(_)) { 0.25 } else { 1.0 };
                let total: f64 = cands.iter().map(w).sum();
                let mut u = rng.gen::<f64>() * total;
                let mut k = cands.len() - 1;
                for (i, c) in cands.iter().enumerate() {
                    u -= w(c);
                    if u < 0.0 {
                        k = i;
                        break;
                    }
                }
                cands.swap_remove(k)
            }
            PolicyKind::RoundRobin => {
                let procs = self.state.procs();
                let n = procs.len();
                let invs = &self.cfg.invocations;
                for step in 0..n {
                    let p = &procs[(self.turn + step) % n];
                    if let Some(k) = cands.iter().position(|c| &c.proc(invs) == p) {
                        self.turn = (self.turn + step + 1) % n;
                        return cands.swap_remove(k);
                    }
                }
                cands.swap_remove(0)
            }
        }
    }

    fn push(&mut self, events: Vec<Event>, state: SystemState) -> Result<()> {
        let dim = state.quantum().dim();
        if dim > self.cap {
            return Err(Error::CapacityError { dim, cap: self.cap });
        }
        self.x.events.extend(events);
        self.state = state;
        Ok(())
    }

    fn execute(&mut self, choice: Choice) -> Result<()> {
        let protocol = self.x.protocol.clone();
        match choice {
            Choice::Invoke(i) => {
                let inv = &self.cfg.invocations[i];
                let leader = ProcessorId::new(&inv.leader);
                let (events, s) = qgo::qgo_invoke(&protocol, &self.state, &leader, &inv.gid, &mut self.ids, &mut self.rngs.global)?;
                self.next_invocation += 1;
                self.push(events, s)
            }
            Choice::Receive(chan) => {
                let (events, s) = qgo::qgo_receive(&protocol, &self.state, &chan, &mut self.ids, &mut self.rngs.global)?;
                self.push(events, s)
            }
            Choice::Send(p) => {
                let head = self.state.classical(&p)?.outbox.front().cloned().expect("candidate has an outbox");
                let event = Event::new(
                    self.ids.event(),
                    EventKind::Send {
                        sender: p,
                        dest: head.dest,
                        msg: MessageInstance::new(self.ids.msg(), head.content, head.regs),
                    },
                );
                self.budget -= 1;
                let s = self.checked_step(&event)?;
                self.push(vec![event], s)
            }
            Choice::Apply(p, prop) => {
                let fresh: Vec<_> = prop.fresh_dims.iter().map(|_| self.ids.reg()).collect();
                let call = LocalCall {
                    name: prop.name,
                    targets: prop.targets,
                    fresh,
                };
                let owner = Owner::Processor(p.clone());
                let dims = self.state.target_dims(&owner, &call.targets)?;
                let op = protocol.algorithm.operation(&p, self.state.classical(&p)?, &call, &dims)?;
                let map = self.state.operation_map(&owner, &op, &call.targets, &call.fresh)?;
                let (outcome, _) = qcore::sample_outcome(self.state.quantum(), &op, &map, &mut self.rngs.base)?;
                let event = Event::new(
                    self.ids.event(),
                    EventKind::Apply {
                        proc: p,
                        op: OpRef::Base(call.name),
                        targets: call.targets,
                        fresh: call.fresh,
                        outcome,
                    },
                );
                self.budget -= 1;
                let s = self.checked_step(&event)?;
                self.push(vec![event], s)
            }
        }
    }

    fn checked_step(&self, event: &Event) -> Result<SystemState> {
        let post = exec::step(&self.x.protocol, &self.state, event)?;
        Augmented
            .check(&self.x.protocol, &self.state, event, &post)
            .map_err(Error::InvalidStep)?;
        Ok(post)
    }
}
