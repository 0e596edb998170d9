//! Built-in global operations.

use std::sync::Arc;

use serde_json::json;

use crate::error::{Error, Result};
use crate::qcore::{gates, CMatrix, Outcome, QuantumOperation, C64};
use crate::qgo::{DecomposableGlobalOp, GlobalLibrary, MessageComponent, ProcessorComponent};
use crate::sysmodel::{ClassicalState, Value};

pub const SNAPSHOT_MEASURE: &str = "snapshot-measure";
pub const GLOBAL_ENCRYPT: &str = "global-encrypt";
pub const RECORD_ONLY: &str = "record-only";

fn label(v: Value) -> Outcome {
    Outcome::new(v.to_string())
}

fn classical_json(state: &ClassicalState) -> Value {
    serde_json::to_value(state).expect("classical state serializes")
}

/// Standard-basis measurement of everything, reporting the digits together
/// with the classical part.
#[derive(Debug)]
pub struct SnapshotMeasure;

impl ProcessorComponent for SnapshotMeasure {
    fn operation(&self, state: &ClassicalState, dims: &[usize]) -> Result<QuantumOperation> {
        let s = classical_json(state);
        Ok(QuantumOperation::std_measurement_labeled(dims.to_vec(), |bits| {
            label(json!({ "bits": bits, "state": s }))
        }))
    }
}

impl MessageComponent for SnapshotMeasure {
    fn operation(&self, content: &Value, dims: &[usize]) -> Result<QuantumOperation> {
        Ok(QuantumOperation::std_measurement_labeled(dims.to_vec(), |bits| {
            label(json!({ "bits": bits, "content": content }))
        }))
    }
}

/// Independent uniformly random Weyl operator `X^a Z^b` on every register.
/// The outcome is the key, a list of `[a, b]` in register order.
#[derive(Debug)]
pub struct PauliPad;

impl PauliPad {
    fn op(dims: &[usize]) -> Result<QuantumOperation> {
        let keys: usize = dims.iter().map(|d| d * d).product();
        let total: usize = dims.iter().product();
        if keys > 4096 {
            return Err(Error::CapacityError { dim: keys, cap: 4096 });
        }
        let norm = 1.0 / (total as f64);
        let mut branches = Vec::with_capacity(keys);
        for k in 0..keys {
            let mut rest = k;
            let mut key = Vec::with_capacity(dims.len());
            for &d in dims.iter().rev() {
                let code = rest % (d * d);
                rest /= d * d;
                key.push((code / d, code % d));
            }
            key.reverse();
            let mut w = CMatrix::from_element(1, 1, C64::new(norm, 0.0));
            for (&d, &(a, b)) in dims.iter().zip(&key) {
                w = w.kronecker(&gates::weyl(d, a, b));
            }
            let list: Vec<[usize; 2]> = key.iter().map(|&(a, b)| [a, b]).collect();
            branches.push((label(json!(list)), vec![w]));
        }
        QuantumOperation::new(dims.to_vec(), dims.to_vec(), branches)
    }

    /// Parses a key label back into `(a, b)` pairs.
    pub fn key(outcome: &Outcome) -> Result<Vec<(usize, usize)>> {
        let pairs: Vec<[usize; 2]> = serde_json::from_str(outcome.as_str())
            .map_err(|e| Error::Config(format!("not an encryption key {outcome}: {e}")))?;
        Ok(pairs.into_iter().map(|[a, b]| (a, b)).collect())
    }
}

impl ProcessorComponent for PauliPad {
    fn operation(&self, _: &ClassicalState, dims: &[usize]) -> Result<QuantumOperation> {
        Self::op(dims)
    }
}

impl MessageComponent for PauliPad {
    fn operation(&self, _: &Value, dims: &[usize]) -> Result<QuantumOperation> {
        Self::op(dims)
    }
}

/// Identity on the quantum part; the outcome is the classical part.
#[derive(Debug)]
pub struct RecordOnly;

impl ProcessorComponent for RecordOnly {
    fn operation(&self, state: &ClassicalState, dims: &[usize]) -> Result<QuantumOperation> {
        Ok(QuantumOperation::identity_labeled(dims.to_vec(), label(classical_json(state))))
    }
}

impl MessageComponent for RecordOnly {
    fn operation(&self, content: &Value, dims: &[usize]) -> Result<QuantumOperation> {
        Ok(QuantumOperation::identity_labeled(dims.to_vec(), label(content.clone())))
    }
}

pub fn snapshot_measure() -> DecomposableGlobalOp {
    DecomposableGlobalOp::uniform(SNAPSHOT_MEASURE, Arc::new(SnapshotMeasure), Arc::new(SnapshotMeasure))
}

pub fn global_encrypt() -> DecomposableGlobalOp {
    DecomposableGlobalOp::uniform(GLOBAL_ENCRYPT, Arc::new(PauliPad), Arc::new(PauliPad))
}

pub fn record_only() -> DecomposableGlobalOp {
    DecomposableGlobalOp::uniform(RECORD_ONLY, Arc::new(RecordOnly), Arc::new(RecordOnly))
}

pub fn builtin_library() -> GlobalLibrary {
    GlobalLibrary::new()
        .with(snapshot_measure())
        .with(global_encrypt())
        .with(record_only())
}
