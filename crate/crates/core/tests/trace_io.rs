use qgo_core::harness::config::Invocation;
use qgo_core::harness::globals::SNAPSHOT_MEASURE;
use qgo_core::harness::{run_simulation, ScenarioConfig, TraceFile};
use qgo_core::verifier::verify;
use qgo_core::Error;

fn config(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(3, "chaos");
    cfg.seed = seed;
    cfg.invocations.push(Invocation {
        at: 5,
        gid: SNAPSHOT_MEASURE.into(),
        leader: "p0".into(),
    });
    cfg
}

#[test]
fn saved_traces_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let cfg = config(seed);
        let x = run_simulation(&cfg).unwrap();
        let mut trace = TraceFile::new(cfg, x);
        trace.certificate = Some(verify(&trace.execution).report());
        let path = dir.path().join(format!("{seed}.jsonl"));
        trace.save(&path).unwrap();
        let back = TraceFile::load(&path).unwrap();
        assert_eq!(back, trace);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), back.to_text().unwrap());
    }
}

#[test]
fn loaded_traces_verify_like_the_original() {
    let cfg = config(3);
    let x = run_simulation(&cfg).unwrap();
    let text = TraceFile::new(cfg, x.clone()).to_text().unwrap();
    let back = TraceFile::parse(&text).unwrap();
    assert_eq!(verify(&back.execution).report(), verify(&x).report());
}

#[test]
fn complex_entries_keep_every_bit() {
    let cfg = config(8);
    let x = run_simulation(&cfg).unwrap();
    let back = TraceFile::parse(&TraceFile::new(cfg, x.clone()).to_text().unwrap()).unwrap();
    let (a, b) = (x.initial.quantum().entries(), back.execution.initial.quantum().entries());
    assert!(a.iter().zip(b.iter()).all(|(u, v)| u.re.to_bits() == v.re.to_bits() && u.im.to_bits() == v.im.to_bits()));
}

#[test]
fn damaged_lines_are_reported() {
    let cfg = config(1);
    let text = TraceFile::new(cfg.clone(), run_simulation(&cfg).unwrap()).to_text().unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = r#"{"record":"event"}"#;
    match TraceFile::parse(&lines.join("\n")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("{other:?}"),
    }
    let header = text.lines().next().unwrap().replace("\"version\":1", "\"version\":9");
    let bumped = std::iter::once(header.as_str()).chain(text.lines().skip(1)).collect::<Vec<_>>().join("\n");
    assert!(matches!(TraceFile::parse(&bumped), Err(Error::Parse { line: 1, .. })));
}
