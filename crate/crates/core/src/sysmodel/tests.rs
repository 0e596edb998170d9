use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::qcore::{gates, CMatrix, RegisterSpace, C64};

/// Measures or rotates one register and writes the outcome into `vars.last`.
#[derive(Debug)]
struct Probe;

impl Algorithm for Probe {
    fn name(&self) -> &str {
        "probe"
    }

    fn enabled(&self, _: &ProcessorId, _: &ClassicalState, owned: &[Register]) -> Vec<Proposal> {
        owned.iter().map(|r| Proposal::new("measure", vec![r.id])).collect()
    }

    fn operation(
        &self,
        _: &ProcessorId,
        _: &ClassicalState,
        call: &LocalCall,
        in_dims: &[usize],
    ) -> Result<QuantumOperation> {
        match call.name.as_str() {
            "measure" => Ok(QuantumOperation::std_measurement(in_dims.to_vec())),
            "noop" => Ok(QuantumOperation::identity(in_dims.to_vec())),
            name if name.starts_with("rot:") => {
                let seed: u64 = name[4..].parse().unwrap();
                QuantumOperation::unitary(in_dims.to_vec(), gates::seeded_unitary(2, seed))
            }
            other => Err(Error::UnknownOperation(other.into())),
        }
    }

    fn update(
        &self,
        _: &ProcessorId,
        state: &ClassicalState,
        _: &LocalCall,
        r: &Outcome,
    ) -> Result<ClassicalState> {
        let mut next = state.clone();
        next.vars = json!({ "last": r.as_str() });
        Ok(next)
    }
}

fn p(i: usize) -> ProcessorId {
    ProcessorId::indexed(i)
}

fn epr_system() -> SystemState {
    let rho = DensityMatrix::epr(RegisterId(0), RegisterId(1)).unwrap();
    let owners = BTreeMap::from([(RegisterId(0), p(0)), (RegisterId(1), p(1))]);
    SystemState::new(vec![p(0), p(1)], rho, &owners).unwrap()
}

fn call(name: &str, targets: &[u64]) -> LocalCall {
    LocalCall {
        name: name.into(),
        targets: targets.iter().map(|&t| RegisterId(t)).collect(),
        fresh: vec![],
    }
}

#[test]
fn channel_set_includes_self_channels() {
    let s = epr_system();
    assert_eq!(s.channels().len(), 4);
    assert!(s.channel(&ChannelId::new(&p(0), &p(0))).is_ok());
}

#[test]
fn classical_send_leaves_quantum_state_alone() {
    let s = epr_system();
    let chan = ChannelId::new(&p(0), &p(1));
    let t = s.send(&p(0), MessageInstance::new(MsgId(1), json!("hi"), vec![]), &p(1)).unwrap();
    assert_eq!(t.channel(&chan).unwrap().len(), s.channel(&chan).unwrap().len() + 1);
    assert_eq!(t.quantum().entries(), s.quantum().entries());
    assert_eq!(t.ownership(), s.ownership());
}

#[test]
fn sending_and_receiving_an_epr_half_only_relabels() {
    let s = epr_system();
    let t = s
        .send(&p(0), MessageInstance::new(MsgId(1), json!(null), vec![RegisterId(0)]), &p(1))
        .unwrap();
    assert_eq!(t.owner(RegisterId(0)), Some(&Owner::Message(MsgId(1))));
    assert_eq!(t.quantum().entries(), s.quantum().entries());
    t.check_invariants().unwrap();
    let (u, m) = t.receive(&p(1), &ChannelId::new(&p(0), &p(1))).unwrap();
    assert_eq!(m.id, MsgId(1));
    assert_eq!(u.owner(RegisterId(0)), Some(&Owner::Processor(p(1))));
    assert_eq!(u.quantum().entries(), s.quantum().entries());
    assert_eq!(u.classical(&p(1)).unwrap().inbox.len(), 1);
    u.check_invariants().unwrap();
}

#[test]
fn classical_receive_keeps_ownership() {
    let s = epr_system();
    let t = s.send(&p(0), MessageInstance::new(MsgId(4), json!(1), vec![]), &p(1)).unwrap();
    let (u, _) = t.receive(&p(1), &ChannelId::new(&p(0), &p(1))).unwrap();
    assert_eq!(u.ownership(), s.ownership());
}

#[test]
fn channels_deliver_in_fifo_order() {
    let mut s = epr_system();
    let sent: Vec<MsgId> = (10..15).map(MsgId).collect();
    for id in &sent {
        s = s.send(&p(1), MessageInstance::new(*id, json!(id.0), vec![]), &p(0)).unwrap();
    }
    let chan = ChannelId::new(&p(1), &p(0));
    let mut got = Vec::new();
    while !s.channel(&chan).unwrap().is_empty() {
        let (next, m) = s.receive(&p(0), &chan).unwrap();
        got.push(m.id);
        s = next;
    }
    assert_eq!(got, sent);
}

#[test]
fn send_and_receive_errors() {
    let s = epr_system();
    let foreign = MessageInstance::new(MsgId(1), json!(null), vec![RegisterId(1)]);
    assert!(matches!(s.send(&p(0), foreign, &p(1)), Err(Error::OwnershipViolation(_))));
    let t = s.send(&p(0), MessageInstance::new(MsgId(1), json!(null), vec![]), &p(1)).unwrap();
    assert_eq!(
        t.send(&p(0), MessageInstance::new(MsgId(1), json!(null), vec![]), &p(1)),
        Err(Error::DuplicateMessage(1))
    );
    assert!(matches!(s.receive(&p(1), &ChannelId::new(&p(0), &p(1))), Err(Error::EmptyChannel(_))));
    assert!(matches!(t.receive(&p(0), &ChannelId::new(&p(0), &p(1))), Err(Error::NotRecipient { .. })));
}

#[test]
fn identity_operation_updates_only_classical_part() {
    let s = epr_system();
    let t = s.apply_local(&Probe, &p(0), &call("noop", &[0]), &Outcome::bottom()).unwrap();
    assert_eq!(t.quantum().entries(), s.quantum().entries());
    assert_eq!(t.classical(&p(0)).unwrap().vars, json!({"last": "⊥"}));
}

#[test]
fn measuring_an_epr_half_collapses_the_pair() {
    let s = epr_system();
    let t = s.apply_local(&Probe, &p(0), &call("measure", &[0]), &Outcome::new("1")).unwrap();
    let mut expect = CMatrix::zeros(4, 4);
    expect[(3, 3)] = C64::new(0.5, 0.0);
    let canon = qcore::canonical_form(t.quantum());
    assert!(canon.entries().iter().zip(expect.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
    assert_eq!(t.classical(&p(0)).unwrap().vars["last"], "1");
}

#[test]
fn locality_is_enforced() {
    let s = epr_system();
    assert!(matches!(
        s.apply_local(&Probe, &p(0), &call("measure", &[1]), &Outcome::new("0")),
        Err(Error::LocalityViolation(_))
    ));
}

#[test]
fn disjoint_processors_commute() {
    let s = epr_system();
    let a = call("rot:3", &[0]);
    let b = call("measure", &[1]);
    let ab = s
        .apply_local(&Probe, &p(0), &a, &Outcome::bottom())
        .and_then(|x| x.apply_local(&Probe, &p(1), &b, &Outcome::new("0")))
        .unwrap();
    let ba = s
        .apply_local(&Probe, &p(1), &b, &Outcome::new("0"))
        .and_then(|x| x.apply_local(&Probe, &p(0), &a, &Outcome::bottom()))
        .unwrap();
    assert!(states_equal(&ab, &ba, 1e-12));
}

#[test]
fn states_equal_detects_classical_difference() {
    let s = epr_system();
    assert!(states_equal(&s, &s, 0.0));
    let mut t = s.clone();
    t.set_classical(&p(1), ClassicalState::new(json!({"bit": 1}))).unwrap();
    assert!(!states_equal(&s, &t, 1.0));
}

#[test]
fn classical_state_encoding_round_trips() {
    let mut c = ClassicalState::new(json!({"b": [1, 2], "a": {"z": true}}));
    c.outbox.push_back(Outgoing {
        dest: p(2),
        content: json!("x"),
        regs: vec![RegisterId(3)],
    });
    assert_eq!(ClassicalState::decode(&c.encode()).unwrap(), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn send_then_receive_is_quantum_neutral(seed in any::<u64>(), carry in proptest::bool::ANY) {
        let space = RegisterSpace::new(vec![Register::qubit(0), Register::qubit(1)]).unwrap();
        let rho = DensityMatrix::random(space, seed, 1.0);
        let owners = BTreeMap::from([(RegisterId(0), p(0)), (RegisterId(1), p(1))]);
        let s = SystemState::new(vec![p(0), p(1)], rho, &owners).unwrap();
        let regs = if carry { vec![RegisterId(0)] } else { vec![] };
        let t = s.send(&p(0), MessageInstance::new(MsgId(0), json!(seed), regs), &p(1)).unwrap();
        let (u, _) = t.receive(&p(1), &ChannelId::new(&p(0), &p(1))).unwrap();
        prop_assert_eq!(u.quantum().entries(), s.quantum().entries());
        u.check_invariants().unwrap();
    }

    #[test]
    fn local_operations_on_different_processors_commute(seed in any::<u64>(), ra in 0u64..100, rb in 0u64..100, outcome in 0u8..2) {
        let space = RegisterSpace::new(vec![Register::qubit(0), Register::qubit(1), Register::qubit(2)]).unwrap();
        let rho = DensityMatrix::random(space, seed, 1.0);
        let owners = BTreeMap::from([(RegisterId(0), p(0)), (RegisterId(1), p(1)), (RegisterId(2), p(1))]);
        let s = SystemState::new(vec![p(0), p(1)], rho, &owners).unwrap();
        let a = call(&format!("rot:{ra}"), &[0]);
        let b1 = call(&format!("rot:{rb}"), &[2]);
        let b2 = call("measure", &[1]);
        let r = Outcome::new(outcome.to_string());
        let run = |first_a: bool| {
            let mut x = s.clone();
            if first_a {
                x = x.apply_local(&Probe, &p(0), &a, &Outcome::bottom()).unwrap();
            }
            x = x.apply_local(&Probe, &p(1), &b1, &Outcome::bottom()).unwrap();
            x = x.apply_local(&Probe, &p(1), &b2, &r).unwrap();
            if !first_a {
                x = x.apply_local(&Probe, &p(0), &a, &Outcome::bottom()).unwrap();
            }
            x
        };
        prop_assert!(states_equal(&run(true), &run(false), 1e-12));
    }
}
