//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use qgo_core::causality::{equicausal, move_to_end, random_reordering, substitute, swap_adjacent};
use qgo_core::exec::{self, Event, EventId, EventKind, Execution, OpRef};
use qgo_core::harness::config::Invocation;
use qgo_core::harness::globals::{PauliPad, GLOBAL_ENCRYPT, RECORD_ONLY, SNAPSHOT_MEASURE};
use qgo_core::harness::{run_simulation, ScenarioConfig, TraceFile};
use qgo_core::qcore::{
    apply_outcome, canonical_form, gates, partial_trace, CMatrix, DensityMatrix, Outcome, QuantumOperation, Register,
    RegisterId, RegisterMap, RegisterSpace, C64,
};
use qgo_core::qgo::Augmented;
use qgo_core::sysmodel::{states_equal, ChannelId};
use qgo_core::verifier::{history, histories_correspond, verify};
use qgo_core::Error;

type Verdict = std::result::Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Verdict {
    let (a, b) = (RegisterId(0), RegisterId(1));
    let rho = DensityMatrix::epr(a, b).unwrap();
    let meas = QuantumOperation::std_measurement(vec![2]);
    let map = RegisterMap::in_place(rho.space(), &[a]).unwrap();
    for (label, index) in [("0", 0), ("1", 3)] {
        let post = apply_outcome(&rho, &meas, &map, &Outcome::new(label)).unwrap();
        check((post.trace() - 0.5).abs() <= 1e-12, || format!("trace after {label} is {}", post.trace()))?;
        let mut expected = CMatrix::zeros(4, 4);
        expected[(index, index)] = c(0.5);
        let d = max_diff(post.entries(), &expected);
        check(d <= 1e-12, || format!("post-state after {label} off by {d:e}"))?;
    }
    let reduced = partial_trace(&rho, &[b]).unwrap();
    let d = max_diff(reduced.entries(), &(CMatrix::identity(2, 2) * c(0.5)));
    check(d <= 1e-12, || format!("reduced state off by {d:e}"))?;
    Ok("both outcomes at probability 0.5, reduced state I/2".into())
}

// ---------------------------------------------------------------- 2

/// A random operation on `dims`: a unitary, a standard measurement, or a
/// channel built from a random isometry, with one of its outcomes.
fn random_op(dims: &[usize], rng: &mut ChaCha8Rng) -> (QuantumOperation, Outcome) {
    let d: usize = dims.iter().product();
    match rng.gen_range(0..3) {
        0 => (
            QuantumOperation::unitary(dims.to_vec(), gates::seeded_unitary(d, rng.gen())).unwrap(),
            Outcome::bottom(),
        ),
        1 => {
            let op = QuantumOperation::std_measurement(dims.to_vec());
            let k = rng.gen_range(0..d);
            let r = op.outcomes().nth(k).unwrap().clone();
            (op, r)
        }
        _ => {
            // columns 0..d of a (2d)-dimensional unitary form an isometry V;
            // its two d×d blocks are Kraus operators of one two-outcome instrument
            let u = gates::seeded_unitary(2 * d, rng.gen());
            let v = u.columns(0, d).into_owned();
            let k0 = v.rows(0, d).into_owned();
            let k1 = v.rows(d, d).into_owned();
            let op = QuantumOperation::new(
                dims.to_vec(),
                dims.to_vec(),
                vec![(Outcome::new("a"), vec![k0]), (Outcome::new("b"), vec![k1])],
            )
            .unwrap();
            let r = Outcome::new(if rng.gen() { "a" } else { "b" });
            (op, r)
        }
    }
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let mut regs = Vec::new();
        let mut total = 1;
        loop {
            let d = [2, 2, 3, 4][rng.gen_range(0..4)];
            if total * d > 16 {
                break;
            }
            total *= d;
            regs.push(Register::new(regs.len() as u64, d));
        }
        if regs.len() < 2 {
            regs = vec![Register::new(0, 2), Register::new(1, 2)];
        }
        let space = RegisterSpace::new(regs.clone()).unwrap();
        let rho = DensityMatrix::random(space.clone(), rng.gen(), 1.0);
        let split = rng.gen_range(1..regs.len());
        let mut ids: Vec<RegisterId> = regs.iter().map(|r| r.id).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.gen_range(0..=i));
        }
        let (left, right) = ids.split_at(split);
        let dims = |s: &[RegisterId]| s.iter().map(|id| space.dim_of(*id).unwrap()).collect::<Vec<_>>();
        let (op_a, r_a) = random_op(&dims(left), &mut rng);
        let (op_b, r_b) = random_op(&dims(right), &mut rng);
        let map_a = RegisterMap::in_place(&space, left).unwrap();
        let map_b = RegisterMap::in_place(&space, right).unwrap();
        let ab = apply_outcome(&apply_outcome(&rho, &op_a, &map_a, &r_a).unwrap(), &op_b, &map_b, &r_b).unwrap();
        let ba = apply_outcome(&apply_outcome(&rho, &op_b, &map_b, &r_b).unwrap(), &op_a, &map_a, &r_a).unwrap();
        let d = ab.max_abs_diff(&ba).ok_or_else(|| format!("trial {trial}: register orders differ"))?;
        worst = worst.max(d);
        check(d <= 1e-12, || format!("trial {trial}: orders differ by {d:e}"))?;
    }
    Ok(format!("500 pairs, largest difference {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn chaos(seed: u64, procs: usize, qubits: usize, max_events: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(procs, "chaos");
    cfg.base.params = json!({ "qubits": qubits });
    cfg.seed = seed;
    cfg.max_events = max_events;
    cfg
}

fn prefix(x: &Execution, n: usize) -> Execution {
    x.with_events(x.events[..n.min(x.len())].to_vec())
}

fn sent(e: &Event) -> Option<u64> {
    match &e.kind {
        EventKind::Send { msg, .. } => Some(msg.id.0),
        _ => None,
    }
}

fn received(e: &Event) -> Option<u64> {
    match &e.kind {
        EventKind::Receive { msg, .. } => Some(msg.0),
        _ => None,
    }
}

/// Happened-before by definition: successive events of one processor and
/// send-before-receive, closed transitively.
fn oracle_relation(events: &[Event]) -> BTreeSet<(EventId, EventId)> {
    let n = events.len();
    let mut r = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if events[i].proc() == events[j].proc() {
                r[i][j] = true;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if sent(&events[i]).is_some() && sent(&events[i]) == received(&events[j]) {
                r[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if r[i][j] {
                out.insert((events[i].id, events[j].id));
            }
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_3() -> Verdict {
    let (mut generations, mut shared, mut others) = (0, 0, 0);
    for seed in 0..60u64 {
        let procs = 2 + (seed % 2) as usize;
        let qubits = 2 + (seed % 3) as usize;
        let x = prefix(&run_simulation(&chaos(seed, procs, qubits, 6)).unwrap(), 6);
        check(x.initial.quantum().dim() <= 16, || "dimension above 16".into())?;
        generations += 1;
        let base = oracle_relation(&x.events);
        let fx = exec::final_state(&x).unwrap();
        for perm in permutations(x.len()) {
            let events: Vec<Event> = perm.iter().map(|&k| x.events[k].clone()).collect();
            let pos: BTreeMap<EventId, usize> = events.iter().enumerate().map(|(k, e)| (e.id, k)).collect();
            let rel = oracle_relation(&events);
            let respects = base.iter().all(|(a, b)| pos[a] < pos[b]);
            let y = x.with_events(events);
            if rel == base && respects {
                shared += 1;
                let fy = exec::final_state(&y).map_err(|e| format!("seed {seed}: equicausal order fails: {e}"))?;
                check(equicausal(&x, &y) == Ok(true), || format!("seed {seed}: not recognized"))?;
                check(states_equal(&fx, &fy, 1e-9), || format!("seed {seed}: final states differ"))?;
            } else {
                others += 1;
                let ill = exec::final_state(&y).is_err() || !exec::validate(&Augmented, &y).valid;
                let flagged = equicausal(&x, &y) == Ok(false);
                check(ill || flagged, || format!("seed {seed}: order {perm:?} neither ill-formed nor flagged"))?;
            }
        }
    }
    Ok(format!(
        "{generations} executions, {shared} equicausal orders agree, {others} others rejected"
    ))
}

// ---------------------------------------------------------------- 4 and 5

fn random_executions() -> Vec<Execution> {
    (0..200u64)
        .map(|seed| {
            let procs = 2 + (seed % 3) as usize;
            let mut cfg = chaos(seed, procs, 3, 26);
            cfg.scheduler.fairness = Some(4);
            if seed % 4 == 0 {
                cfg.invocations.push(Invocation {
                    at: 6,
                    gid: SNAPSHOT_MEASURE.into(),
                    leader: "p1".into(),
                });
            }
            prefix(&run_simulation(&cfg).unwrap(), 40)
        })
        .collect()
}

fn criterion_4(xs: &[Execution]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (k, x) in xs.iter().enumerate() {
        let fx = exec::final_state(x).unwrap();
        for _ in 0..20 {
            let steps = rng.gen_range(1..=3 * x.len());
            let y = random_reordering(x, steps, &mut rng).map_err(|e| format!("execution {k}: {e}"))?;
            check(equicausal(x, &y) == Ok(true), || format!("execution {k}: reordering broke ≺"))?;
            let fy = exec::final_state(&y).map_err(|e| format!("execution {k}: {e}"))?;
            check(states_equal(&fx, &fy, 1e-9), || format!("execution {k}: final states differ"))?;
        }
    }
    Ok(format!("{} executions × 20 reorderings", xs.len()))
}

fn expect_err(r: qgo_core::Result<Execution>, ok: fn(&Error) -> bool, what: &str) -> std::result::Result<(), String> {
    match r {
        Err(e) if ok(&e) => Ok(()),
        Err(e) => Err(format!("{what}: unexpected error {e}")),
        Ok(_) => Err(format!("{what}: precondition violation accepted")),
    }
}

fn criterion_5(xs: &[Execution]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut good, mut bad) = (0, 0);
    let dependency = |e: &Error| matches!(e, Error::CausalDependency { .. });
    let range = |e: &Error| matches!(e, Error::IndexOutOfRange(_));
    let mismatch = |e: &Error| matches!(e, Error::SubstitutionMismatch(_));
    for (k, x) in xs.iter().enumerate() {
        let rel = oracle_relation(&x.events);
        let n = x.len();
        for i in 0..n.saturating_sub(1) {
            let r = swap_adjacent(x, i);
            if rel.contains(&(x.events[i].id, x.events[i + 1].id)) {
                expect_err(r, dependency, &format!("execution {k}: swap {i}"))?;
                bad += 1;
            } else {
                r.map_err(|e| format!("execution {k}: swap {i}: {e}"))?;
                good += 1;
            }
        }
        expect_err(swap_adjacent(x, n), range, "swap past the end")?;
        expect_err(move_to_end(x, 2, 1), range, "move backwards")?;
        bad += 2;

        for _ in 0..5 {
            let i = rng.gen_range(0..n);
            let blocker = (i + 1..n).find(|&j| rel.contains(&(x.events[i].id, x.events[j].id)));
            let free_end = blocker.map_or(n - 1, |b| b - 1);
            move_to_end(x, i, free_end).map_err(|e| format!("execution {k}: move {i} to {free_end}: {e}"))?;
            good += 1;
            if let Some(b) = blocker {
                expect_err(move_to_end(x, i, b), dependency, &format!("execution {k}: move {i} past {b}"))?;
                bad += 1;
            }

            let a = rng.gen_range(0..n);
            let b = rng.gen_range(a..n);
            let part = exec::slice(x, a, b).unwrap();
            let y0 = random_reordering(&part, 2 * (b - a + 1), &mut rng).unwrap();
            substitute(x, a, b, &y0).map_err(|e| format!("execution {k}: substitute {a}..={b}: {e}"))?;
            good += 1;
            if b + 1 < n {
                let other = exec::slice(x, a + 1, b + 1).unwrap();
                expect_err(substitute(x, a, b, &other), mismatch, "substitute a shifted window")?;
                bad += 1;
            }
            // a window in which some related adjacent pair is inverted
            if let Some(j) = (a..b).find(|&j| rel.contains(&(x.events[j].id, x.events[j + 1].id))) {
                let mut events = part.events.clone();
                events.swap(j - a, j - a + 1);
                expect_err(substitute(x, a, b, &part.with_events(events)), mismatch, "substitute reordered window")?;
                bad += 1;
            }
        }
    }
    Ok(format!("{good} lawful calls succeeded, {bad} violations raised their declared errors"))
}

// ---------------------------------------------------------------- 6 and 9

fn end_to_end_config(seed: u64) -> ScenarioConfig {
    let gids = [SNAPSHOT_MEASURE, GLOBAL_ENCRYPT, RECORD_ONLY];
    let gid = gids[(seed / 2 % 3) as usize];
    let invocations = 1 + (seed / 6 % 3) as usize;
    let procs = 2 + (seed % 2) as usize + (seed / 18 % 2) as usize;
    let mut cfg = if seed % 2 == 0 {
        let mut cfg = ScenarioConfig::new(procs, "token-ring");
        cfg.base.params = json!({ "quantum_token": true });
        cfg.initial.epr.push(qgo_core::harness::config::EprPair {
            a: "p0".into(),
            b: format!("p{}", procs - 1),
        });
        cfg
    } else {
        ScenarioConfig::new(procs, "teleport")
    };
    cfg.seed = seed;
    cfg.max_events = 36;
    cfg.scheduler.fairness = Some(5);
    cfg.invocations = (0..invocations)
        .map(|k| Invocation {
            at: 2 + 9 * k,
            gid: gid.into(),
            leader: format!("p{}", (seed as usize + k) % procs),
        })
        .collect();
    cfg
}

fn criterion_6() -> Verdict {
    let mut accepted = 0;
    let mut kinds = BTreeSet::new();
    for seed in 0..200u64 {
        let cfg = end_to_end_config(seed);
        let x = run_simulation(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let cert = verify(&x);
        let v = &cert.verdicts;
        check(cert.accepted && v.all_true(), || format!("seed {seed}: {:?}", cert.failure))?;
        check(cert.fragments.len() == cfg.invocations.len(), || format!("seed {seed}: fragment count"))?;
        let (y, z, y_hat) = (cert.y.as_ref().unwrap(), cert.z.as_ref().unwrap(), cert.y_hat.as_ref().unwrap());
        check(equicausal(&x, y) == Ok(true), || format!("seed {seed}: X̃ and Ỹ not equicausal"))?;
        let (fx, fy, fz) = (
            exec::final_state(&x).unwrap(),
            exec::final_state(y).unwrap(),
            exec::final_state(z).unwrap(),
        );
        check(states_equal(&fx, &fy, 1e-9) && states_equal(&fz, &fy, 1e-9), || format!("seed {seed}: finals"))?;
        check(history(z) == history(y), || format!("seed {seed}: H(Z̃) ≠ H(Ỹ)"))?;
        check(qgo_core::specmachine::validate_spec_execution(y_hat).valid, || format!("seed {seed}: Ŷ invalid"))?;
        check(histories_correspond(&history(y_hat), &history(z)), || format!("seed {seed}: H(Ŷ) ≄ H(Z̃)"))?;
        check(cert.recheck().unwrap(), || format!("seed {seed}: recheck"))?;
        kinds.insert((cfg.base.name.clone(), cfg.invocations[0].gid.clone(), cfg.invocations.len()));
        accepted += 1;
    }
    check(kinds.len() == 18, || format!("only {} scenario kinds covered", kinds.len()))?;
    Ok(format!("{accepted}/200 accepted over {} base × operation × count combinations", kinds.len()))
}

fn criterion_9() -> Verdict {
    let mut traces = 0;
    for seed in 0..60u64 {
        for cfg in [end_to_end_config(seed), chaos(seed, 3, 3, 20)] {
            let a = TraceFile::new(cfg.clone(), run_simulation(&cfg).unwrap());
            let b = TraceFile::new(cfg.clone(), run_simulation(&cfg).unwrap());
            let (ta, tb) = (a.to_text().unwrap(), b.to_text().unwrap());
            check(ta == tb, || format!("seed {seed}: traces differ between runs"))?;

            let mut with_cert = a.clone();
            with_cert.certificate = Some(verify(&a.execution).report());
            for t in [&a, &with_cert] {
                let text = t.to_text().unwrap();
                let back = TraceFile::parse(&text).map_err(|e| format!("seed {seed}: {e}"))?;
                check(&back == t, || format!("seed {seed}: parsed trace differs"))?;
                check(back.to_text().unwrap() == text, || format!("seed {seed}: bytes differ after round trip"))?;
                traces += 1;
            }
        }
    }
    Ok(format!("{traces} traces byte-identical across runs and round trips"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let mut snapshots = 0;
    for seed in 0..60u64 {
        let procs = 3 + (seed % 2) as usize;
        let mut cfg = ScenarioConfig::new(procs, "token-ring");
        cfg.base.params = json!({ "pings": 2 });
        cfg.seed = seed;
        cfg.max_events = 30;
        cfg.invocations = (0..1 + (seed % 3) as usize)
            .map(|k| Invocation {
                at: 3 + 8 * k,
                gid: RECORD_ONLY.into(),
                leader: format!("p{}", (k + seed as usize) % procs),
            })
            .collect();
        let x = run_simulation(&cfg).unwrap();
        check(x.initial.quantum().dim() == 1, || "base is not classical".into())?;
        let cert = verify(&x);
        check(cert.accepted, || format!("seed {seed}: {:?}", cert.failure))?;
        let y_hat = cert.y_hat.unwrap();
        let states = exec::replay(&y_hat).unwrap();
        let atomics: Vec<usize> = (0..y_hat.len())
            .filter(|&k| matches!(y_hat.events[k].kind, EventKind::Atomic { .. }))
            .collect();
        for (f, &k) in cert.fragments.iter().zip(&atomics) {
            let cut = &states[k + 1];
            for e in &x.events[f.start..=f.end] {
                let EventKind::Respond { proc, record } = &e.kind else { continue };
                let local: Value = serde_json::from_str(record.self_outcome.as_str()).unwrap();
                let expected = serde_json::to_value(cut.classical(proc).unwrap()).unwrap();
                check(local == expected, || format!("seed {seed}: {proc} recorded {local}, cut has {expected}"))?;
                for q in cut.procs() {
                    let chan = ChannelId::new(q, proc);
                    let recorded: Vec<Value> = record
                        .channels
                        .get(&chan)
                        .map(|v| v.iter().map(|o| serde_json::from_str(o.as_str()).unwrap()).collect())
                        .unwrap_or_default();
                    let in_flight: Vec<Value> = cut.channel(&chan).unwrap().iter().map(|m| m.content.clone()).collect();
                    check(recorded == in_flight, || format!("seed {seed}: channel {chan} recorded {recorded:?}, cut has {in_flight:?}"))?;
                }
                snapshots += 1;
            }
        }
    }
    Ok(format!("{snapshots} local snapshots equal the cut after the atomic event"))
}

// ---------------------------------------------------------------- 8

fn encrypt_config(seed: u64, gid: &str) -> ScenarioConfig {
    let procs = 3 + (seed % 2) as usize;
    let mut cfg = ScenarioConfig::new(procs, "token-ring");
    cfg.base.params = json!({ "quantum_token": true, "rotate": false });
    cfg.initial.epr.push(qgo_core::harness::config::EprPair {
        a: "p1".into(),
        b: "p2".into(),
    });
    cfg.seed = seed;
    cfg.max_events = 30;
    cfg.invocations = (0..1 + (seed % 2) as usize)
        .map(|k| Invocation {
            at: 2 + 10 * k,
            gid: gid.into(),
            leader: format!("p{}", k % procs),
        })
        .collect();
    cfg
}

fn decrypt(rho: &DensityMatrix, x: &Execution) -> DensityMatrix {
    let mut rho = rho.clone();
    for e in x.events.iter().rev() {
        let EventKind::Apply {
            op: OpRef::Global(_) | OpRef::GlobalMsg { .. },
            targets,
            outcome,
            ..
        } = &e.kind
        else {
            continue;
        };
        if targets.is_empty() {
            continue;
        }
        let key = PauliPad::key(outcome).unwrap();
        let dims: Vec<usize> = targets.iter().map(|r| rho.space().dim_of(*r).unwrap()).collect();
        let mut w = CMatrix::from_element(1, 1, c(1.0));
        for (&d, &(a, b)) in dims.iter().zip(&key) {
            w = w.kronecker(&gates::weyl(d, a, b));
        }
        let undo = QuantumOperation::unitary(dims, w.adjoint()).unwrap();
        let map = RegisterMap::in_place(rho.space(), targets).unwrap();
        rho = apply_outcome(&rho, &undo, &map, &Outcome::bottom()).unwrap();
    }
    rho
}

fn criterion_8() -> Verdict {
    let (mut keys, mut scrambled) = (0, 0);
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let enc = run_simulation(&encrypt_config(seed, GLOBAL_ENCRYPT)).unwrap();
        let plain = run_simulation(&encrypt_config(seed, RECORD_ONLY)).unwrap();
        check(enc.len() == plain.len(), || format!("seed {seed}: schedules diverge"))?;
        for (a, b) in enc.events.iter().zip(&plain.events) {
            let base = |e: &Event| !matches!(&e.kind, EventKind::Apply { op: OpRef::Global(_) | OpRef::GlobalMsg { .. } | OpRef::Record { .. }, .. } | EventKind::Invoke { .. } | EventKind::Respond { .. } | EventKind::Send { .. } | EventKind::Receive { .. });
            if base(a) {
                check(a == b, || format!("seed {seed}: base events diverge"))?;
            }
        }
        keys += enc
            .events
            .iter()
            .filter(|e| matches!(&e.kind, EventKind::Apply { op: OpRef::Global(_) | OpRef::GlobalMsg { .. }, targets, .. } if !targets.is_empty()))
            .count();
        let fe = exec::final_state(&enc).unwrap();
        let fp = exec::final_state(&plain).unwrap();
        let restored = decrypt(fe.quantum(), &enc);
        let restored = restored.scaled(1.0 / restored.trace());
        let target = fp.quantum().scaled(1.0 / fp.quantum().trace());
        let a = canonical_form(&restored);
        let b = canonical_form(&target);
        let d = a.max_abs_diff(&b).ok_or_else(|| format!("seed {seed}: register sets differ"))?;
        worst = worst.max(d);
        check(d <= 1e-9, || format!("seed {seed}: decrypted state off by {d:e}"))?;
        let raw = canonical_form(&fe.quantum().scaled(1.0 / fe.quantum().trace()));
        if raw.max_abs_diff(&b).is_some_and(|d| d > 1e-6) {
            scrambled += 1;
        }
    }
    check(scrambled > 0, || "encryption never changed the state".into())?;
    Ok(format!(
        "50 runs, {keys} keys inverted, {scrambled} states scrambled before decryption, largest difference {worst:.1e}"
    ))
}

// ----------------------------------------------------------------

fn main() {
    let mut all = true;
    type Run<'a> = Box<dyn FnMut() -> Verdict + 'a>;
    let started = Instant::now();
    let shared = random_executions();
    println!("generated {} shared executions in {:.2?}", shared.len(), started.elapsed());
    let criteria: Vec<(u32, &str, Duration, Run)> = vec![
        (1, "EPR measurement example", Duration::from_secs(1), Box::new(criterion_1)),
        (2, "commutation on disjoint registers", Duration::from_secs(10), Box::new(criterion_2)),
        (3, "equicausal orders, exhaustive", Duration::from_secs(120), Box::new(criterion_3)),
        (4, "equicausal orders, randomized", Duration::from_secs(300), Box::new(|| criterion_4(&shared))),
        (5, "reordering lemmas", Duration::from_secs(120), Box::new(|| criterion_5(&shared))),
        (6, "end-to-end verification", Duration::from_secs(600), Box::new(criterion_6)),
        (7, "classical snapshot degeneration", Duration::from_secs(60), Box::new(criterion_7)),
        (8, "global-encrypt round trip", Duration::from_secs(60), Box::new(criterion_8)),
        (9, "determinism and trace I/O", Duration::from_secs(60), Box::new(criterion_9)),
    ];
    for (n, name, limit, mut run) in criteria {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(&mut run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = t.elapsed();
        let result = match result {
            Ok(detail) if took > limit => Err(format!("{detail}, but took {took:.2?} (limit {limit:?})")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{took:.2?}]"),
            Err(why) => {
                all = false;
                println!("FAIL criterion {n} ({name}): {why} [{took:.2?}]");
            }
        }
    }
    if !all {
        std::process::exit(1);
    }
}
