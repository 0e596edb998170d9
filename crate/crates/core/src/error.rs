use thiserror::Error;

use crate::qcore::RegisterId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the simulator and verifier can report.
///
/// Variants are grouped by the layer that raises them; the verifier wraps
/// lower-level failures in [`Error::ClaimViolation`] when a proof step that
/// should be impossible to fail does fail.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // qcore
    #[error("register {0} appears in both operands")]
    IdCollision(RegisterId),
    #[error("register {0} is not part of the register space")]
    UnknownRegister(RegisterId),
    #[error("outcome {0:?} is not in the operation's outcome set")]
    BadOutcome(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("history has zero probability (trace {0:e})")]
    ZeroProbabilityHistory(f64),
    #[error("total dimension {dim} exceeds the cap of {cap}")]
    CapacityError { dim: usize, cap: usize },

    // sysmodel
    #[error("ownership violation: {0}")]
    OwnershipViolation(String),
    #[error("message id {0} was already used")]
    DuplicateMessage(u64),
    #[error("channel {0} is empty")]
    EmptyChannel(String),
    #[error("{receiver} is not the destination of channel {channel}")]
    NotRecipient { receiver: String, channel: String },
    #[error("locality violation: {0}")]
    LocalityViolation(String),
    #[error("unknown processor {0}")]
    UnknownProcessor(String),
    #[error("unknown operation {0}")]
    UnknownOperation(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),

    // exec
    #[error("replay failed at event {index}: {source}")]
    ReplayError { index: usize, source: Box<Error> },
    #[error("fragment boundary states differ")]
    ConcatMismatch,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    // causality
    #[error("executions are not comparable: {0}")]
    NotComparable(String),
    #[error("event {earlier} causally precedes event {later}")]
    CausalDependency { earlier: u64, later: u64 },
    #[error("lemma violation: {0}")]
    LemmaViolation(String),
    #[error("substitution precondition failed: {0}")]
    SubstitutionMismatch(String),

    // qgo / specmachine
    #[error("a global operation is already pending: {0}")]
    ConcurrentInvocation(String),
    #[error("processor {0} already has an active global operation")]
    AlreadyActive(String),
    #[error("unknown global operation {0}")]
    UnknownGlobalOp(String),
    #[error("specification violation: {0}")]
    SpecViolation(String),

    // verifier
    #[error("theorem hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("protocol incomplete: {0}")]
    ProtocolIncomplete(String),
    #[error("claim violation in {step}: {detail}")]
    ClaimViolation { step: String, detail: String },

    // harness
    #[error("unknown scenario component {0}")]
    UnknownScenario(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn replay(index: usize, source: Error) -> Self {
        Error::ReplayError {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn claim(step: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Error::ClaimViolation {
            step: step.into(),
            detail: detail.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
