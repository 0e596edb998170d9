//! JSON Lines trace files.
//!
//! One record per line, each an object whose first field `record` names
//! its kind. Records appear in this order:
//!
//! 1. `header`: `version`, then `config` (the scenario configuration).
//! 2. `initial`: `state`, the initial system state.
//! 3. `event`: `event`, one line per event in execution order.
//! 4. `certificate` (optional): `report`, a verification report.
//!
//! Density matrices are written as a register list plus row-major
//! `"re,im"` entries; classical maps are written with sorted keys.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Event, Execution};
use crate::sysmodel::SystemState;
use crate::verifier::CertificateReport;

use super::config::ScenarioConfig;

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Header,
    Initial,
    Event,
    Certificate,
}

/// One line. A flat struct rather than a tagged enum: tagged enums buffer
/// their content, which loses integer map keys.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    record: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<SystemState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event: Option<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<CertificateReport>,
}

impl Record {
    fn new(record: Kind) -> Self {
        Record {
            record,
            version: None,
            config: None,
            state: None,
            event: None,
            report: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceFile {
    pub config: ScenarioConfig,
    pub execution: Execution,
    pub certificate: Option<CertificateReport>,
}

impl PartialEq for TraceFile {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.execution == other.execution && self.certificate == other.certificate
    }
}

fn line(out: &mut String, r: &Record) -> Result<()> {
    let text = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out, "{text}").expect("writing to a string");
    Ok(())
}

impl TraceFile {
    pub fn new(config: ScenarioConfig, execution: Execution) -> Self {
        TraceFile {
            config,
            execution,
            certificate: None,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        line(
            &mut out,
            &Record {
                version: Some(TRACE_VERSION),
                config: Some(self.config.clone()),
                ..Record::new(Kind::Header)
            },
        )?;
        line(
            &mut out,
            &Record {
                state: Some(self.execution.initial.clone()),
                ..Record::new(Kind::Initial)
            },
        )?;
        for e in &self.execution.events {
            line(
                &mut out,
                &Record {
                    event: Some(e.clone()),
                    ..Record::new(Kind::Event)
                },
            )?;
        }
        if let Some(report) = &self.certificate {
            line(
                &mut out,
                &Record {
                    report: Some(report.clone()),
                    ..Record::new(Kind::Certificate)
                },
            )?;
        }
        Ok(out)
    }

    /// Parses a trace; the protocol is rebuilt from the configuration.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = None;
        let mut initial = None;
        let mut events = Vec::new();
        let mut certificate = None;
        for (k, raw) in text.lines().enumerate() {
            let n = k + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: n, message };
            let record: Record = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            let missing = |field: &str| err(format!("{:?} record without {field}", record.record));
            match record.record {
                Kind::Header => {
                    if n != 1 || config.is_some() {
                        return Err(err("the header must be the first line".into()));
                    }
                    let version = record.version.ok_or_else(|| missing("version"))?;
                    if version != TRACE_VERSION {
                        return Err(err(format!("unsupported trace version {version}")));
                    }
                    config = Some(record.config.ok_or_else(|| missing("config"))?);
                }
                Kind::Initial => {
                    if config.is_none() || initial.is_some() {
                        return Err(err("the initial state must follow the header".into()));
                    }
                    initial = Some(record.state.ok_or_else(|| missing("state"))?);
                }
                Kind::Event => {
                    if initial.is_none() || certificate.is_some() {
                        return Err(err("event outside the event section".into()));
                    }
                    events.push(record.event.ok_or_else(|| missing("event"))?);
                }
                Kind::Certificate => {
                    if initial.is_none() || certificate.is_some() {
                        return Err(err("misplaced certificate".into()));
                    }
                    certificate = Some(record.report.ok_or_else(|| missing("report"))?);
                }
            }
        }
        let config = config.ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let initial = initial.ok_or_else(|| Error::Parse {
            line: 2,
            message: "missing initial state".into(),
        })?;
        let (protocol, _) = super::scenario(&config)?;
        Ok(TraceFile {
            config,
            execution: Execution::new(protocol, initial, events),
            certificate,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Density matrices as a register list plus row-major `"re,im"` strings
/// with 17 significant digits, which round-trip every `f64` exactly.
pub mod density_serde {
    use std::sync::Arc;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::qcore::{CMatrix, DensityMatrix, Register, RegisterSpace, C64};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        registers: Vec<Register>,
        entries: Vec<String>,
    }

    pub fn format_complex(z: C64) -> String {
        format!("{:.16e},{:.16e}", z.re, z.im)
    }

    pub fn parse_complex(s: &str) -> Option<C64> {
        let (re, im) = s.split_once(',')?;
        Some(C64::new(re.trim().parse().ok()?, im.trim().parse().ok()?))
    }

    pub fn serialize<S: Serializer>(rho: &Arc<DensityMatrix>, s: S) -> Result<S::Ok, S::Error> {
        let m = rho.entries();
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(format_complex(m[(i, j)]));
            }
        }
        Repr {
            registers: rho.space().registers().to_vec(),
            entries,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Arc<DensityMatrix>, D::Error> {
        let repr = Repr::deserialize(d)?;
        let space = RegisterSpace::new(repr.registers).map_err(D::Error::custom)?;
        let n = space.total_dim();
        if repr.entries.len() != n * n {
            return Err(D::Error::custom(format!(
                "expected {} matrix entries, found {}",
                n * n,
                repr.entries.len()
            )));
        }
        let mut values = Vec::with_capacity(n * n);
        for e in &repr.entries {
            values.push(parse_complex(e).ok_or_else(|| D::Error::custom(format!("bad complex number {e:?}")))?);
        }
        let m = CMatrix::from_row_slice(n, n, &values);
        DensityMatrix::from_entries(space, m).map(Arc::new).map_err(D::Error::custom)
    }
}
