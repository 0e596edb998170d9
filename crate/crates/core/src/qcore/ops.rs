use rand::Rng;

use super::{
    CMatrix, DensityMatrix, Outcome, QuantumOperation, Register, RegisterId, RegisterMap,
    RegisterSpace, C64, EPS_VALIDATE, ZERO_PROBABILITY,
};
use crate::error::{Error, Result};

/// Kronecker product; the result lists `a`'s registers followed by `b`'s.
pub fn tensor_product(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix> {
    for r in b.space.registers() {
        if a.space.contains(r.id) {
            return Err(Error::IdCollision(r.id));
        }
    }
    let mut regs = a.space.registers().to_vec();
    regs.extend_from_slice(b.space.registers());
    let space = RegisterSpace::new(regs)?;
    Ok(DensityMatrix {
        space,
        entries: a.entries.kronecker(&b.entries),
    })
}

/// Traces out `discard`; the remaining registers keep their relative order.
pub fn partial_trace(rho: &DensityMatrix, discard: &[RegisterId]) -> Result<DensityMatrix> {
    for id in discard {
        if !rho.space.contains(*id) {
            return Err(Error::UnknownRegister(*id));
        }
    }
    if discard.is_empty() {
        return Ok(rho.clone());
    }
    let keep: Vec<RegisterId> = rho.space.ids().filter(|id| !discard.contains(id)).collect();
    let mut order = keep.clone();
    order.extend(rho.space.ids().filter(|id| discard.contains(id)));
    let p = rho.permuted(&order)?;
    let keep_regs: Vec<Register> = keep.iter().map(|id| rho.space.get(*id).unwrap()).collect();
    let keep_space = RegisterSpace::new(keep_regs)?;
    let k = keep_space.total_dim();
    let r = p.dim() / k;
    let entries = CMatrix::from_fn(k, k, |i, j| {
        (0..r).map(|t| p.entries[(i * r + t, j * r + t)]).sum()
    });
    Ok(DensityMatrix {
        space: keep_space,
        entries,
    })
}

fn check_map(rho: &DensityMatrix, op: &QuantumOperation, map: &RegisterMap) -> Result<()> {
    if map.inputs.len() != op.in_dims().len() {
        return Err(Error::ShapeError(format!(
            "operation takes {} registers, map supplies {}",
            op.in_dims().len(),
            map.inputs.len()
        )));
    }
    for (id, &d) in map.inputs.iter().zip(op.in_dims()) {
        let actual = rho.space.dim_of(*id)?;
        if actual != d {
            return Err(Error::ShapeError(format!(
                "register {id} has dimension {actual}, operation expects {d}"
            )));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in &map.inputs {
        if !seen.insert(*id) {
            return Err(Error::ShapeError(format!("register {id} mapped twice")));
        }
    }
    if map.outputs.len() != op.out_dims().len()
        || map.outputs.iter().zip(op.out_dims()).any(|(r, &d)| r.dim != d)
    {
        return Err(Error::ShapeError("output registers do not match operation".into()));
    }
    if !map.is_in_place() {
        for out in &map.outputs {
            if rho.space.contains(out.id) && !map.inputs.contains(&out.id) {
                return Err(Error::IdCollision(out.id));
            }
        }
    }
    Ok(())
}

/// `(Λ^r ⊗ id)(ρ)` with the operation embedded on `map.inputs`.
///
/// In-place operations keep the original register order. Otherwise the
/// untouched registers keep their order and the outputs are appended.
/// The result is not renormalized: its trace is the probability of `r`
/// times the trace of `ρ`.
pub fn apply_outcome(
    rho: &DensityMatrix,
    op: &QuantumOperation,
    map: &RegisterMap,
    r: &Outcome,
) -> Result<DensityMatrix> {
    let kraus = op.kraus(r).ok_or_else(|| Error::BadOutcome(r.0.clone()))?;
    check_map(rho, op, map)?;

    let rest: Vec<RegisterId> = rho.space.ids().filter(|id| !map.inputs.contains(id)).collect();
    let mut order = map.inputs.clone();
    order.extend(&rest);
    let p = rho.permuted(&order)?;

    let a: usize = op.in_dims().iter().product();
    let a_out: usize = op.out_dims().iter().product();
    let b = p.dim() / a;
    let d_in = a * b;
    let d_out = a_out * b;

    let mut result = CMatrix::zeros(d_out, d_out);
    let mut left = CMatrix::zeros(d_out, d_in);
    for k in kraus {
        // left = (K ⊗ I_b) ρ
        left.fill(C64::new(0.0, 0.0));
        for ao in 0..a_out {
            for ai in 0..a {
                let kv = k[(ao, ai)];
                if kv == C64::new(0.0, 0.0) {
                    continue;
                }
                for bb in 0..b {
                    let row_out = ao * b + bb;
                    let row_in = ai * b + bb;
                    for j in 0..d_in {
                        left[(row_out, j)] += kv * p.entries[(row_in, j)];
                    }
                }
            }
        }
        // result += left (K ⊗ I_b)†
        for co in 0..a_out {
            for ci in 0..a {
                let kv = k[(co, ci)].conj();
                if kv == C64::new(0.0, 0.0) {
                    continue;
                }
                for bb in 0..b {
                    let col_out = co * b + bb;
                    let col_in = ci * b + bb;
                    for i in 0..d_out {
                        result[(i, col_out)] += left[(i, col_in)] * kv;
                    }
                }
            }
        }
    }

    let mut regs = map.outputs.clone();
    regs.extend(rest.iter().map(|id| rho.space.get(*id).unwrap()));
    let out = DensityMatrix {
        space: RegisterSpace::new(regs)?,
        entries: result,
    };
    if map.is_in_place() {
        let original: Vec<RegisterId> = rho.space.ids().collect();
        out.permuted(&original)
    } else {
        let mut final_order = rest;
        final_order.extend(map.outputs.iter().map(|r| r.id));
        out.permuted(&final_order)
    }
}

/// `tr Λ^r(ρ)` for every outcome, in the operation's outcome order.
pub fn outcome_probabilities(
    rho: &DensityMatrix,
    op: &QuantumOperation,
    map: &RegisterMap,
) -> Result<Vec<(Outcome, f64)>> {
    check_map(rho, op, map)?;
    let rest: Vec<RegisterId> = rho.space.ids().filter(|id| !map.inputs.contains(id)).collect();
    let reduced = partial_trace(rho, &rest)?.permuted(&map.inputs)?;
    let mut out = Vec::with_capacity(op.branches().len());
    for (r, kraus) in op.branches() {
        let mut p = 0.0;
        for k in kraus {
            let e = k.adjoint() * k;
            p += (e * &reduced.entries).trace().re;
        }
        out.push((r.clone(), p));
    }
    Ok(out)
}

/// Draws `r` with probability `tr Λ^r(ρ) / tr ρ` and returns it with the
/// unnormalized post-state.
pub fn sample_outcome<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    op: &QuantumOperation,
    map: &RegisterMap,
    rng: &mut R,
) -> Result<(Outcome, DensityMatrix)> {
    let tr = rho.trace();
    if tr <= ZERO_PROBABILITY {
        return Err(Error::ZeroProbabilityHistory(tr));
    }
    let probs = outcome_probabilities(rho, op, map)?;
    let chosen = if probs.len() == 1 {
        probs[0].0.clone()
    } else {
        let total: f64 = probs.iter().map(|(_, p)| p.max(0.0)).sum();
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (r, p) in &probs {
            if *p <= ZERO_PROBABILITY {
                continue;
            }
            acc += p;
            pick = Some(r);
            if u < acc {
                break;
            }
        }
        pick.ok_or(Error::ZeroProbabilityHistory(total))?.clone()
    };
    let post = apply_outcome(rho, op, map, &chosen)?;
    Ok((chosen, post))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub trace_preserving: bool,
    /// Largest entry-wise deviation of `Σ_r Σ_k K†K` from the identity.
    pub max_deviation: f64,
    /// Always true: each branch is given in Kraus form.
    pub completely_positive: bool,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.trace_preserving && self.completely_positive && self.failures.is_empty()
    }
}

pub fn validate_operation(op: &QuantumOperation) -> ValidationReport {
    let d: usize = op.in_dims().iter().product();
    let mut sum = CMatrix::zeros(d, d);
    for (_, kraus) in op.branches() {
        for k in kraus {
            sum += k.adjoint() * k;
        }
    }
    let deviation = (sum - CMatrix::identity(d, d))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let mut failures = Vec::new();
    let trace_preserving = deviation <= EPS_VALIDATE;
    if !trace_preserving {
        failures.push(format!(
            "sum of K†K deviates from identity by {deviation:e}"
        ));
    }
    ValidationReport {
        trace_preserving,
        max_deviation: deviation,
        completely_positive: true,
        failures,
    }
}

/// Registers sorted by id, entries permuted accordingly.
pub fn canonical_form(rho: &DensityMatrix) -> DensityMatrix {
    let mut ids: Vec<RegisterId> = rho.space.ids().collect();
    ids.sort();
    rho.permuted(&ids).expect("sorting preserves the register set")
}
