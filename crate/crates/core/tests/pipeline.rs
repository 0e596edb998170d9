use qgo_core::exec::{self, EventKind};
use qgo_core::harness::config::{EprPair, Invocation};
use qgo_core::harness::globals::{GLOBAL_ENCRYPT, RECORD_ONLY, SNAPSHOT_MEASURE};
use qgo_core::harness::{run_simulation, ScenarioConfig};
use qgo_core::qgo::Augmented;
use qgo_core::verifier::verify;

fn invocation(at: usize, gid: &str, leader: &str) -> Invocation {
    Invocation {
        at,
        gid: gid.into(),
        leader: leader.into(),
    }
}

#[test]
fn one_processor_without_work_has_no_events() {
    let x = run_simulation(&ScenarioConfig::new(1, "empty")).unwrap();
    assert!(x.events.is_empty());
    assert!(verify(&x).accepted);
}

#[test]
fn shared_epr_snapshot_is_accepted() {
    let mut cfg = ScenarioConfig::new(2, "empty");
    cfg.initial.epr.push(EprPair {
        a: "p0".into(),
        b: "p1".into(),
    });
    cfg.invocations.push(invocation(0, SNAPSHOT_MEASURE, "p0"));
    for seed in 0..20 {
        cfg.seed = seed;
        let x = run_simulation(&cfg).unwrap();
        let cert = verify(&x);
        assert!(cert.accepted, "{:?}", cert.failure);
        // both halves measured, and equal
        let bits: Vec<String> = x
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Apply { outcome, targets, .. } if !targets.is_empty() => {
                    let v: serde_json::Value = serde_json::from_str(outcome.as_str()).ok()?;
                    Some(v["bits"].as_str()?.to_string())
                }
                _ => None,
            })
            .collect();
        assert_eq!(bits.len(), 2);
        assert_eq!(bits[0], bits[1]);
    }
}

#[test]
fn token_ring_with_two_invocations_over_200_schedules() {
    let mut cfg = ScenarioConfig::new(3, "token-ring");
    cfg.max_events = 24;
    cfg.invocations = vec![invocation(2, SNAPSHOT_MEASURE, "p0"), invocation(10, RECORD_ONLY, "p2")];
    for seed in 0..200 {
        cfg.seed = seed;
        let x = run_simulation(&cfg).unwrap();
        assert!(exec::validate(&Augmented, &x).valid);
        let cert = verify(&x);
        assert!(cert.accepted, "seed {seed}: {:?}", cert.failure);
        assert_eq!(cert.fragments.len(), 2);
    }
}

#[test]
fn teleport_under_encryption_is_accepted() {
    let mut cfg = ScenarioConfig::new(3, "teleport");
    cfg.invocations = vec![invocation(3, GLOBAL_ENCRYPT, "p2")];
    for seed in 0..30 {
        cfg.seed = seed;
        let cert = verify(&run_simulation(&cfg).unwrap());
        assert!(cert.accepted, "seed {seed}: {:?}", cert.failure);
        assert!(cert.recheck().unwrap());
    }
}

#[test]
fn every_invocation_completes_under_a_fairness_bound() {
    let mut cfg = ScenarioConfig::new(4, "chaos");
    cfg.scheduler.fairness = Some(2);
    cfg.invocations = (0..3).map(|k| invocation(4 * k, RECORD_ONLY, &format!("p{k}"))).collect();
    for seed in 0..20 {
        cfg.seed = seed;
        let x = run_simulation(&cfg).unwrap();
        let responses = x.events.iter().filter(|e| matches!(e.kind, EventKind::Respond { .. })).count();
        assert_eq!(responses, 12);
    }
}
