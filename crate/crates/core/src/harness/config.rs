//! Scenario configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{self, DensityMatrix, Register, RegisterSpace, C64};
use crate::sysmodel::{ProcessorId, Value};

use super::algorithms::{Block, RegisterCounter};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    UniformRandom,
    ChannelDelayBiased,
    RoundRobin,
    ReplayFromTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerPolicy {
    #[serde(default)]
    pub policy: PolicyKind,
    /// Maximum number of picks an enabled receive may be passed over.
    #[serde(default)]
    pub fairness: Option<u32>,
    /// Trace whose events `replay-from-trace` re-executes.
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EprPair {
    pub a: String,
    pub b: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QubitState {
    #[default]
    Zero,
    One,
    Plus,
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSpec {
    pub owner: String,
    #[serde(default)]
    pub state: QubitState,
}

/// Extra quantum registers on top of what the base algorithm creates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default)]
    pub epr: Vec<EprPair>,
    #[serde(default)]
    pub qubits: Vec<QubitSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Invocation {
    /// Earliest event count at which the invocation may fire.
    pub at: usize,
    pub gid: String,
    pub leader: String,
}

fn default_max_events() -> usize {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub processors: usize,
    pub base: BaseConfig,
    #[serde(default)]
    pub seed: u64,
    /// Budget of base applications and sends.
    #[serde(default = "default_max_events")]
    pub max_events: usize,
    #[serde(default)]
    pub dim_cap: Option<usize>,
    #[serde(default)]
    pub scheduler: SchedulerPolicy,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub invocations: Vec<Invocation>,
}

impl ScenarioConfig {
    pub fn new(processors: usize, base: &str) -> Self {
        ScenarioConfig {
            processors,
            base: BaseConfig {
                name: base.to_string(),
                params: Value::Null,
            },
            seed: 0,
            max_events: default_max_events(),
            dim_cap: None,
            scheduler: SchedulerPolicy::default(),
            initial: InitialState::default(),
            invocations: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            match line {
                Some(line) => Error::Parse {
                    line,
                    message: e.message().to_string(),
                },
                None => Error::Config(e.message().to_string()),
            }
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn procs(&self) -> Vec<ProcessorId> {
        (0..self.processors).map(ProcessorId::indexed).collect()
    }

    /// The cap in force: the environment override, else the configured
    /// value, else the default.
    pub fn effective_dim_cap(&self) -> usize {
        if std::env::var_os("QGO_DIM_CAP").is_some() {
            qcore::dim_cap()
        } else {
            self.dim_cap.unwrap_or(qcore::DEFAULT_DIM_CAP)
        }
    }

    fn proc(&self, name: &str) -> Result<ProcessorId> {
        let p = ProcessorId::new(name);
        if self.procs().contains(&p) {
            Ok(p)
        } else {
            Err(Error::UnknownProcessor(name.to_string()))
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.processors == 0 {
            return Err(Error::Config("at least one processor is required".into()));
        }
        for inv in &self.invocations {
            self.proc(&inv.leader)?;
        }
        for w in self.invocations.windows(2) {
            if w[1].at < w[0].at {
                return Err(Error::Config("invocations must be listed in schedule order".into()));
            }
        }
        for e in &self.initial.epr {
            self.proc(&e.a)?;
            self.proc(&e.b)?;
        }
        for q in &self.initial.qubits {
            self.proc(&q.owner)?;
        }
        if self.scheduler.policy == PolicyKind::ReplayFromTrace && self.scheduler.trace.is_none() {
            return Err(Error::Config("replay-from-trace needs scheduler.trace".into()));
        }
        Ok(())
    }

    /// Product blocks for the configured extra registers.
    pub(crate) fn initial_blocks(&self, regs: &mut RegisterCounter) -> Result<Vec<Block>> {
        let mut blocks = Vec::new();
        for e in &self.initial.epr {
            let (a, b) = (regs.next(), regs.next());
            blocks.push(Block {
                state: DensityMatrix::epr(a, b)?,
                owners: vec![self.proc(&e.a)?, self.proc(&e.b)?],
            });
        }
        for (k, q) in self.initial.qubits.iter().enumerate() {
            let id = regs.next();
            let space = RegisterSpace::new(vec![Register { id, dim: 2 }])?;
            let (zero, one) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
            let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            let state = match q.state {
                QubitState::Zero => DensityMatrix::from_pure(space, &[one, zero])?,
                QubitState::One => DensityMatrix::from_pure(space, &[zero, one])?,
                QubitState::Plus => DensityMatrix::from_pure(space, &[s, s])?,
                QubitState::Random => DensityMatrix::random(space, self.seed.wrapping_add(k as u64), 1.0),
            };
            blocks.push(Block {
                state,
                owners: vec![self.proc(&q.owner)?],
            });
        }
        Ok(blocks)
    }
}

/// Tensor product of the blocks and the owner of every register.
pub(crate) fn assemble(blocks: &[Block], cap: usize) -> Result<(DensityMatrix, BTreeMap<qcore::RegisterId, ProcessorId>)> {
    let mut rho = DensityMatrix::scalar_one();
    let mut owners = BTreeMap::new();
    for b in blocks {
        let dim = rho.dim() * b.state.dim();
        if dim > cap {
            return Err(Error::CapacityError { dim, cap });
        }
        rho = qcore::tensor_product(&rho, &b.state)?;
        for (r, p) in b.state.space().ids().zip(&b.owners) {
            owners.insert(r, p.clone());
        }
    }
    Ok((rho, owners))
}
