use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use qgo_core::causality::primitive_edges;
use qgo_core::exec::EventKind;
use qgo_core::harness::{run_simulation, ScenarioConfig, TraceFile};
use qgo_core::verifier::{verify, Certificate};
use qgo_core::Error;

#[derive(Parser)]
#[command(name = "qgo", version, about = "Simulate and verify global operations on asynchronous quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one execution and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a trace. Exits 2 when the certificate is rejected.
    Verify {
        #[arg(long)]
        trace: PathBuf,
        /// Where to write the trace with its certificate appended.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate and verify a range of seeds in parallel.
    Batch {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (exclusive) or `a..=b`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Print the events of a trace and its causality edges.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected a..b or a..=b, got {s:?}");
    let (a, b, inclusive) = match s.split_once("..=") {
        Some((a, b)) => (a, b, true),
        None => {
            let (a, b) = s.split_once("..").ok_or_else(bad)?;
            (a, b, false)
        }
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(format!("empty seed range {s:?}"));
    }
    Ok(a..end)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, &out),
        Command::Verify { trace, out } => verify_trace(&trace, out.as_deref()),
        Command::Batch { config, seeds, jobs } => batch(&config, seeds, jobs),
        Command::Inspect { trace } => inspect(&trace),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(config: &Path, seed: Option<u64>, out: &Path) -> Result<ExitCode, Error> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let x = run_simulation(&cfg)?;
    println!("{} events, seed {}", x.len(), cfg.seed);
    TraceFile::new(cfg, x).save(out)?;
    Ok(ExitCode::SUCCESS)
}

fn rejection(cert: &Certificate) -> String {
    match &cert.failure {
        Some(f) => format!("{}: {}", f.step, f.detail),
        None => "not all verdicts hold".into(),
    }
}

fn verify_trace(path: &Path, out: Option<&Path>) -> Result<ExitCode, Error> {
    let mut trace = TraceFile::load(path)?;
    let cert = verify(&trace.execution);
    if let Some(out) = out {
        trace.certificate = Some(cert.report());
        trace.save(out)?;
    }
    if cert.accepted {
        println!(
            "accepted: {} events, {} global operations, {} swaps",
            cert.x.len(),
            cert.fragments.len(),
            cert.swaps.len()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("rejected at {}", rejection(&cert));
        Ok(ExitCode::from(2))
    }
}

struct Row {
    seed: u64,
    events: usize,
    fragments: usize,
    swaps: usize,
    outcome: Result<Option<String>, Error>,
}

fn batch(config: &Path, seeds: Range<u64>, jobs: usize) -> Result<ExitCode, Error> {
    let cfg = ScenarioConfig::load(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows: Vec<Row> = pool.install(|| {
        seeds
            .into_par_iter()
            .map(|seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                match run_simulation(&c) {
                    Ok(x) => {
                        let cert = verify(&x);
                        Row {
                            seed,
                            events: x.len(),
                            fragments: cert.fragments.len(),
                            swaps: cert.swaps.len(),
                            outcome: Ok((!cert.accepted).then(|| rejection(&cert))),
                        }
                    }
                    Err(e) => Row {
                        seed,
                        events: 0,
                        fragments: 0,
                        swaps: 0,
                        outcome: Err(e),
                    },
                }
            })
            .collect()
    });

    println!("{:>8}  {:>6}  {:>4}  {:>6}  result", "seed", "events", "ops", "swaps");
    let (mut accepted, mut rejected, mut failed) = (0, 0, 0);
    for r in &rows {
        let result = match &r.outcome {
            Ok(None) => {
                accepted += 1;
                "accepted".to_string()
            }
            Ok(Some(why)) => {
                rejected += 1;
                format!("rejected ({why})")
            }
            Err(e) => {
                failed += 1;
                format!("error ({e})")
            }
        };
        println!("{:>8}  {:>6}  {:>4}  {:>6}  {result}", r.seed, r.events, r.fragments, r.swaps);
    }
    println!("accepted {accepted}/{}", rows.len());
    Ok(if failed > 0 {
        ExitCode::from(1)
    } else if rejected > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn inspect(path: &Path) -> Result<ExitCode, Error> {
    let trace = TraceFile::load(path)?;
    let x = &trace.execution;
    println!(
        "{} processors, base {}, seed {}, {} events",
        trace.config.processors,
        trace.config.base.name,
        trace.config.seed,
        x.len()
    );
    for (k, e) in x.events.iter().enumerate() {
        println!("{k:>5}  {e}");
    }
    println!("edges:");
    let mut edges = primitive_edges(&x.events);
    edges.sort_unstable();
    for (a, b) in edges {
        let kind = match (&x.events[a].kind, &x.events[b].kind) {
            (EventKind::Send { msg, .. }, EventKind::Receive { msg: m, .. }) if msg.id == *m => "message",
            _ => "local",
        };
        println!("{:>5} -> {:<5} {kind}", a, b);
    }
    if let Some(report) = &trace.certificate {
        let verdict = if report.accepted { "accepted" } else { "rejected" };
        println!("certificate: {verdict}, {} swaps", report.swaps.len());
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..200").unwrap(), 0..200);
        assert_eq!(parse_seeds("3..=5").unwrap(), 3..6);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x..2").is_err());
        assert!(parse_seeds("7").is_err());
    }
}
