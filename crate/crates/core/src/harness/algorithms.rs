//! Built-in base algorithms and the initial states they need.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;

use crate::error::{Error, Result};
use crate::qcore::{gates, CMatrix, DensityMatrix, Outcome, QuantumOperation, Register, RegisterId, RegisterSpace, C64};
use crate::sysmodel::{Algorithm, ClassicalState, LocalCall, Outgoing, ProcessorId, Proposal, Value};

/// A product factor of the initial quantum state and the owner of each of
/// its registers, in register order.
#[derive(Clone, Debug)]
pub struct Block {
    pub state: DensityMatrix,
    pub owners: Vec<ProcessorId>,
}

/// What a scenario starts from.
#[derive(Clone, Debug)]
pub struct Setup {
    pub algorithm: Arc<dyn Algorithm>,
    pub blocks: Vec<Block>,
    pub vars: BTreeMap<ProcessorId, Value>,
}

/// Hands out register ids for initial states.
#[derive(Debug, Default)]
pub struct RegisterCounter(pub u64);

impl RegisterCounter {
    pub fn next(&mut self) -> RegisterId {
        self.0 += 1;
        RegisterId(self.0 - 1)
    }
}

pub const ALGORITHMS: [&str; 4] = ["empty", "token-ring", "teleport", "chaos"];

fn param_u64(params: &Value, key: &str, default: u64) -> Result<u64> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::Config(format!("parameter {key} must be a non-negative integer"))),
    }
}

fn param_bool(params: &Value, key: &str, default: bool) -> Result<bool> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_bool()
            .ok_or_else(|| Error::Config(format!("parameter {key} must be a boolean"))),
    }
}

fn index_of(proc: &ProcessorId) -> usize {
    proc.0.trim_start_matches('p').parse().unwrap_or(0)
}

fn var_u64(state: &ClassicalState, key: &str) -> u64 {
    state.vars.get(key).and_then(Value::as_u64).unwrap_or(0)
}

fn var_reg(state: &ClassicalState, key: &str) -> Option<RegisterId> {
    state.vars.get(key).and_then(Value::as_u64).map(RegisterId)
}

fn class_of(content: &Value) -> &str {
    content.get("class").and_then(Value::as_str).unwrap_or("")
}

fn set(state: &mut ClassicalState, key: &str, v: Value) {
    if !state.vars.is_object() {
        state.vars = json!({});
    }
    state.vars[key] = v;
}

fn qubit_state(id: RegisterId, amps: &[C64]) -> Result<DensityMatrix> {
    DensityMatrix::from_pure(RegisterSpace::new(vec![Register { id, dim: 2 }])?, amps)
}

/// Builds a built-in algorithm for processors `p0 … p{n-1}`.
pub fn setup(name: &str, procs: &[ProcessorId], params: &Value, seed: u64, regs: &mut RegisterCounter) -> Result<Setup> {
    let n = procs.len();
    let mut vars: BTreeMap<ProcessorId, Value> = procs.iter().map(|p| (p.clone(), Value::Null)).collect();
    let mut blocks = Vec::new();
    let algorithm: Arc<dyn Algorithm> = match name {
        "empty" => Arc::new(Empty),
        "token-ring" => {
            let alg = TokenRing {
                procs: procs.to_vec(),
                max_passes: param_u64(params, "max_passes", 2 * n as u64)?,
                pings: param_u64(params, "pings", 1)?,
                quantum_token: param_bool(params, "quantum_token", false)?,
                rotate: param_bool(params, "rotate", false)?,
            };
            let token = if alg.quantum_token {
                let id = regs.next();
                let one = C64::new(1.0, 0.0);
                blocks.push(Block {
                    state: qubit_state(id, &[one, C64::new(0.0, 0.0)])?,
                    owners: vec![procs[0].clone()],
                });
                json!(id.0)
            } else {
                Value::Null
            };
            for (i, p) in procs.iter().enumerate() {
                vars.insert(
                    p.clone(),
                    json!({
                        "index": i, "has_token": i == 0, "hops": 0,
                        "token_reg": if i == 0 { token.clone() } else { Value::Null },
                        "pings_sent": 0, "pings_seen": 0,
                    }),
                );
            }
            Arc::new(alg)
        }
        "teleport" => {
            if n < 2 {
                return Err(Error::Config("teleport needs at least two processors".into()));
            }
            let data = regs.next();
            let u = gates::seeded_unitary(2, param_u64(params, "data_seed", seed)?);
            blocks.push(Block {
                state: qubit_state(data, &[u[(0, 0)], u[(1, 0)]])?,
                owners: vec![procs[0].clone()],
            });
            for (i, p) in procs.iter().enumerate() {
                vars.insert(
                    p.clone(),
                    json!({
                        "index": i, "stage": "idle",
                        "data": if i == 0 { json!(data.0) } else { Value::Null },
                        "epr_a": null,
                    }),
                );
            }
            Arc::new(Teleport { procs: procs.to_vec() })
        }
        "chaos" => {
            let q = param_u64(params, "qubits", 3)? as usize;
            if q > 6 {
                return Err(Error::Config("chaos supports at most 6 qubits".into()));
            }
            if q > 0 {
                let ids: Vec<RegisterId> = (0..q).map(|_| regs.next()).collect();
                let space = RegisterSpace::new(ids.iter().map(|&id| Register { id, dim: 2 }).collect())?;
                blocks.push(Block {
                    state: DensityMatrix::random(space, seed ^ 0x5eed, 1.0),
                    owners: (0..q).map(|k| procs[k % n].clone()).collect(),
                });
            }
            for (i, p) in procs.iter().enumerate() {
                vars.insert(p.clone(), json!({ "index": i, "k": 0 }));
            }
            Arc::new(Chaos {
                procs: procs.to_vec(),
                seed,
                quantum_sends: param_bool(params, "quantum_sends", true)?,
            })
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(Setup {
        algorithm,
        blocks,
        vars,
    })
}

/// No operations at all.
#[derive(Debug)]
pub struct Empty;

impl Algorithm for Empty {
    fn name(&self) -> &str {
        "empty"
    }

    fn enabled(&self, _: &ProcessorId, _: &ClassicalState, _: &[Register]) -> Vec<Proposal> {
        Vec::new()
    }

    fn operation(&self, _: &ProcessorId, _: &ClassicalState, call: &LocalCall, _: &[usize]) -> Result<QuantumOperation> {
        Err(Error::UnknownOperation(call.name.clone()))
    }

    fn update(&self, _: &ProcessorId, _: &ClassicalState, call: &LocalCall, _: &Outcome) -> Result<ClassicalState> {
        Err(Error::UnknownOperation(call.name.clone()))
    }
}

/// A token circulating around the ring, optionally carrying a qubit, plus
/// a few classical pings.
#[derive(Debug)]
pub struct TokenRing {
    procs: Vec<ProcessorId>,
    max_passes: u64,
    pings: u64,
    quantum_token: bool,
    rotate: bool,
}

impl Algorithm for TokenRing {
    fn name(&self) -> &str {
        "token-ring"
    }

    fn enabled(&self, _: &ProcessorId, state: &ClassicalState, _: &[Register]) -> Vec<Proposal> {
        let mut out = Vec::new();
        let has_token = state.vars.get("has_token").and_then(Value::as_bool).unwrap_or(false);
        if has_token && var_u64(state, "hops") < self.max_passes {
            out.push(Proposal::new("pass", var_reg(state, "token_reg").into_iter().collect()));
        }
        if state.inbox.iter().any(|d| class_of(&d.content) == "token") {
            out.push(Proposal::new("take", vec![]));
        }
        if var_u64(state, "pings_sent") < self.pings {
            out.push(Proposal::new("ping", vec![]));
        }
        if state.inbox.iter().any(|d| class_of(&d.content) == "ping") {
            out.push(Proposal::new("drain", vec![]));
        }
        out
    }

    fn operation(&self, proc: &ProcessorId, state: &ClassicalState, call: &LocalCall, dims: &[usize]) -> Result<QuantumOperation> {
        match call.name.as_str() {
            "pass" if self.rotate && !dims.is_empty() => {
                let seed = (index_of(proc) as u64) << 32 | var_u64(state, "hops");
                QuantumOperation::unitary(dims.to_vec(), gates::seeded_unitary(2, seed))
            }
            "pass" | "take" | "ping" | "drain" => Ok(QuantumOperation::identity(dims.to_vec())),
            other => Err(Error::UnknownOperation(other.to_string())),
        }
    }

    fn update(&self, proc: &ProcessorId, state: &ClassicalState, call: &LocalCall, _: &Outcome) -> Result<ClassicalState> {
        let mut s = state.clone();
        let i = index_of(proc);
        let n = self.procs.len();
        match call.name.as_str() {
            "pass" => {
                let token = s.vars["token_reg"].clone();
                s.outbox.push_back(Outgoing {
                    dest: self.procs[(i + 1) % n].clone(),
                    content: json!({ "class": "token", "hops": var_u64(state, "hops") + 1, "reg": token }),
                    regs: var_reg(state, "token_reg").into_iter().collect(),
                });
                set(&mut s, "has_token", json!(false));
                set(&mut s, "token_reg", Value::Null);
            }
            "take" => {
                let k = s
                    .inbox
                    .iter()
                    .position(|d| class_of(&d.content) == "token")
                    .ok_or_else(|| Error::InvalidStep("no token to take".into()))?;
                let d = s.inbox.remove(k);
                set(&mut s, "has_token", json!(true));
                set(&mut s, "hops", d.content["hops"].clone());
                set(&mut s, "token_reg", d.content["reg"].clone());
            }
            "ping" => {
                let sent = var_u64(state, "pings_sent") + 1;
                s.outbox.push_back(Outgoing {
                    dest: self.procs[(i + sent as usize) % n].clone(),
                    content: json!({ "class": "ping", "from": i, "n": sent }),
                    regs: vec![],
                });
                set(&mut s, "pings_sent", json!(sent));
            }
            "drain" => {
                let k = s
                    .inbox
                    .iter()
                    .position(|d| class_of(&d.content) == "ping")
                    .ok_or_else(|| Error::InvalidStep("no ping to drain".into()))?;
                s.inbox.remove(k);
                set(&mut s, "pings_seen", json!(var_u64(state, "pings_seen") + 1));
            }
            other => return Err(Error::UnknownOperation(other.to_string())),
        }
        Ok(s)
    }
}

/// Teleports a data qubit from `p0` along the chain to the last processor.
/// Each hop ships half of a fresh EPR pair, measures the data and the other
/// half in the Bell basis, and sends the two correction bits.
#[derive(Debug)]
pub struct Teleport {
    procs: Vec<ProcessorId>,
}

fn epr_column() -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    CMatrix::from_column_slice(4, 1, &[C64::new(s, 0.0), z, z, C64::new(s, 0.0)])
}

/// `Z^{m_z} X^{m_x}` for the bits `"m_z m_x"` of a Bell outcome.
pub fn teleport_correction(bits: &str) -> CMatrix {
    let b: Vec<char> = bits.chars().collect();
    let mut u = gates::identity(2);
    if b.get(1) == Some(&'1') {
        u = gates::pauli_x() * u;
    }
    if b.first() == Some(&'1') {
        u = gates::pauli_z() * u;
    }
    u
}

impl Teleport {
    fn stage<'a>(&self, state: &'a ClassicalState) -> &'a str {
        state.vars.get("stage").and_then(Value::as_str).unwrap_or("idle")
    }

    fn next(&self, proc: &ProcessorId) -> Option<&ProcessorId> {
        self.procs.get(index_of(proc) + 1)
    }

    fn pending_fix(state: &ClassicalState) -> Option<(RegisterId, String)> {
        let half = state.inbox.iter().find(|d| class_of(&d.content) == "epr-half")?;
        let fix = state.inbox.iter().find(|d| class_of(&d.content) == "fix")?;
        Some((*half.regs.first()?, fix.content.get("bits")?.as_str()?.to_string()))
    }
}

impl Algorithm for Teleport {
    fn name(&self) -> &str {
        "teleport"
    }

    fn enabled(&self, proc: &ProcessorId, state: &ClassicalState, _: &[Register]) -> Vec<Proposal> {
        let mut out = Vec::new();
        let data = var_reg(state, "data");
        match self.stage(state) {
            "idle" if data.is_some() && self.next(proc).is_some() => out.push(Proposal {
                name: "make-epr".into(),
                targets: vec![],
                fresh_dims: vec![2, 2],
            }),
            "bell" => {
                if let (Some(d), Some(a)) = (data, var_reg(state, "epr_a")) {
                    out.push(Proposal::new("bell", vec![d, a]));
                }
            }
            _ => {}
        }
        if let Some((b, _)) = Self::pending_fix(state) {
            out.push(Proposal::new("fix", vec![b]));
        }
        out
    }

    fn operation(&self, _: &ProcessorId, state: &ClassicalState, call: &LocalCall, dims: &[usize]) -> Result<QuantumOperation> {
        match call.name.as_str() {
            "make-epr" => QuantumOperation::new(vec![], vec![2, 2], vec![(Outcome::bottom(), vec![epr_column()])]),
            "bell" => QuantumOperation::new(
                dims.to_vec(),
                vec![],
                gates::bell_bras()
                    .into_iter()
                    .map(|(l, row)| (Outcome::new(l), vec![row]))
                    .collect(),
            ),
            "fix" => {
                let (_, bits) = Self::pending_fix(state).ok_or_else(|| Error::InvalidStep("nothing to fix".into()))?;
                QuantumOperation::unitary(dims.to_vec(), teleport_correction(&bits))
            }
            other => Err(Error::UnknownOperation(other.to_string())),
        }
    }

    fn update(&self, proc: &ProcessorId, state: &ClassicalState, call: &LocalCall, r: &Outcome) -> Result<ClassicalState> {
        let mut s = state.clone();
        let next = self.next(proc).cloned();
        match call.name.as_str() {
            "make-epr" => {
                let [a, b] = call.fresh[..] else {
                    return Err(Error::ShapeError("make-epr needs two fresh registers".into()));
                };
                let dest = next.ok_or_else(|| Error::InvalidStep("last processor cannot forward".into()))?;
                s.outbox.push_back(Outgoing {
                    dest,
                    content: json!({ "class": "epr-half" }),
                    regs: vec![b],
                });
                set(&mut s, "epr_a", json!(a.0));
                set(&mut s, "stage", json!("bell"));
            }
            "bell" => {
                let dest = next.ok_or_else(|| Error::InvalidStep("last processor cannot forward".into()))?;
                s.outbox.push_back(Outgoing {
                    dest,
                    content: json!({ "class": "fix", "bits": r.as_str() }),
                    regs: vec![],
                });
                set(&mut s, "data", Value::Null);
                set(&mut s, "epr_a", Value::Null);
                set(&mut s, "stage", json!("done"));
            }
            "fix" => {
                let (b, _) = Self::pending_fix(state).ok_or_else(|| Error::InvalidStep("nothing to fix".into()))?;
                s.inbox.retain(|d| !matches!(class_of(&d.content), "epr-half" | "fix"));
                set(&mut s, "data", json!(b.0));
                set(&mut s, "stage", json!("idle"));
            }
            other => return Err(Error::UnknownOperation(other.to_string())),
        }
        Ok(s)
    }
}

/// Random local gates, measurements and messages, for stress-testing the
/// causality machinery. All choices are offered; the scheduler picks.
#[derive(Debug)]
pub struct Chaos {
    procs: Vec<ProcessorId>,
    seed: u64,
    quantum_sends: bool,
}

impl Chaos {
    fn gate_seed(&self, proc: &ProcessorId, k: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((index_of(proc) as u64) << 40)
            .wrapping_add(k)
    }
}

impl Algorithm for Chaos {
    fn name(&self) -> &str {
        "chaos"
    }

    fn enabled(&self, _: &ProcessorId, state: &ClassicalState, owned: &[Register]) -> Vec<Proposal> {
        let mut out = Vec::new();
        let queued: Vec<RegisterId> = state.outbox.iter().flat_map(|o| o.regs.iter().copied()).collect();
        for r in owned {
            out.push(Proposal::new("rot", vec![r.id]));
            out.push(Proposal::new("meas", vec![r.id]));
        }
        if let [a, b, ..] = owned {
            out.push(Proposal::new("ent", vec![a.id, b.id]));
        }
        for dest in &self.procs {
            out.push(Proposal::new(format!("send:{dest}"), vec![]));
            if self.quantum_sends {
                if let Some(r) = owned.iter().find(|r| !queued.contains(&r.id)) {
                    out.push(Proposal::new(format!("send:{dest}"), vec![r.id]));
                }
            }
        }
        if !state.inbox.is_empty() {
            out.push(Proposal::new("take", vec![]));
        }
        out
    }

    fn operation(&self, proc: &ProcessorId, state: &ClassicalState, call: &LocalCall, dims: &[usize]) -> Result<QuantumOperation> {
        let name = call.name.as_str();
        match name {
            "rot" => QuantumOperation::unitary(dims.to_vec(), gates::seeded_unitary(2, self.gate_seed(proc, var_u64(state, "k")))),
            "meas" => Ok(QuantumOperation::std_measurement(dims.to_vec())),
            "ent" => QuantumOperation::unitary(dims.to_vec(), gates::cnot()),
            "take" => Ok(QuantumOperation::identity(dims.to_vec())),
            _ if name.starts_with("send:") => Ok(QuantumOperation::identity(dims.to_vec())),
            other => Err(Error::UnknownOperation(other.to_string())),
        }
    }

    fn update(&self, _: &ProcessorId, state: &ClassicalState, call: &LocalCall, r: &Outcome) -> Result<ClassicalState> {
        let mut s = state.clone();
        let k = var_u64(state, "k") + 1;
        set(&mut s, "k", json!(k));
        match call.name.as_str() {
            "meas" => set(&mut s, "last", json!(r.as_str())),
            "take" => {
                if s.inbox.is_empty() {
                    return Err(Error::InvalidStep("nothing to take".into()));
                }
                let d = s.inbox.remove(0);
                set(&mut s, "got", d.content);
            }
            name => {
                if let Some(dest) = name.strip_prefix("send:") {
                    s.outbox.push_back(Outgoing {
                        dest: ProcessorId::new(dest),
                        content: json!({ "class": "chaos", "k": k }),
                        regs: call.targets.clone(),
                    });
                }
            }
        }
        Ok(s)
    }
}
