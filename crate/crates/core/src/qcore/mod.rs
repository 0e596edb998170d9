//! Dense complex linear algebra over a dynamically labeled tensor-product
//! register space.
//!
//! Row and column indices decompose big-endian in register-list order: the
//! last register in a [`RegisterSpace`] varies fastest. Every operation here
//! is a pure function over immutable values.

mod ops;
pub mod gates;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};


pub use ops::{
    apply_outcome, canonical_form, outcome_probabilities, partial_trace, sample_outcome,
    tensor_product, validate_operation, ValidationReport,
};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Validation tolerance for Hermiticity, positivity, trace preservation and
/// trace bounds.
pub const EPS_VALIDATE: f64 = 1e-9;
/// Tolerance for algebraic identities on freshly computed values.
pub const EPS_ALGEBRA: f64 = 1e-12;
/// A history whose trace falls below this is treated as impossible.
pub const ZERO_PROBABILITY: f64 = 1e-15;
/// Default cap on the total dimension of a register space.
pub const DEFAULT_DIM_CAP: usize = 4096;

/// The dimension cap in force: `QGO_DIM_CAP` if set and valid, otherwise
/// [`DEFAULT_DIM_CAP`]. Read once per process.
pub fn dim_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("QGO_DIM_CAP")
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&c| c >= 1)
            .unwrap_or(DEFAULT_DIM_CAP)
    })
}

/// Stable identifier of a quantum register. Never reused within a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegisterId(pub u64);

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Register {
    pub id: RegisterId,
    pub dim: usize,
}

impl Register {
    pub fn new(id: u64, dim: usize) -> Self {
        Register {
            id: RegisterId(id),
            dim,
        }
    }

    pub fn qubit(id: u64) -> Self {
        Register::new(id, 2)
    }
}

/// An ordered list of registers; the order fixes the index decomposition.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegisterSpace {
    registers: Vec<Register>,
}

impl RegisterSpace {
    pub fn new(registers: Vec<Register>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut total: usize = 1;
        for r in &registers {
            if r.dim == 0 {
                return Err(Error::ShapeError(format!("register {} has dimension 0", r.id)));
            }
            if !seen.insert(r.id) {
                return Err(Error::IdCollision(r.id));
            }
            total = total.checked_mul(r.dim).ok_or(Error::CapacityError {
                dim: usize::MAX,
                cap: dim_cap(),
            })?;
        }
        if total > dim_cap() {
            return Err(Error::CapacityError {
                dim: total,
                cap: dim_cap(),
            });
        }
        Ok(RegisterSpace { registers })
    }

    pub fn empty() -> Self {
        RegisterSpace::default()
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn ids(&self) -> impl Iterator<Item = RegisterId> + '_ {
        self.registers.iter().map(|r| r.id)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.registers.iter().map(|r| r.dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.registers.iter().map(|r| r.dim).product()
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn position(&self, id: RegisterId) -> Option<usize> {
        self.registers.iter().position(|r| r.id == id)
    }

    pub fn contains(&self, id: RegisterId) -> bool {
        self.position(id).is_some()
    }

    pub fn get(&self, id: RegisterId) -> Option<Register> {
        self.registers.iter().copied().find(|r| r.id == id)
    }

    pub fn dim_of(&self, id: RegisterId) -> Result<usize> {
        self.get(id).map(|r| r.dim).ok_or(Error::UnknownRegister(id))
    }
}

/// A classical outcome label. Opaque; `⊥` marks "no measurement performed".
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Outcome(pub String);

impl Outcome {
    pub const BOTTOM_LABEL: &'static str = "⊥";

    pub fn new(label: impl Into<String>) -> Self {
        Outcome(label.into())
    }

    pub fn bottom() -> Self {
        Outcome(Self::BOTTOM_LABEL.to_string())
    }

    pub fn is_bottom(&self) -> bool {
        self.0 == Self::BOTTOM_LABEL
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A subnormalized density matrix over a [`RegisterSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    space: RegisterSpace,
    entries: CMatrix,
}

impl DensityMatrix {
    /// The trivial state of a system with no quantum registers.
    pub fn scalar_one() -> Self {
        DensityMatrix {
            space: RegisterSpace::empty(),
            entries: CMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
        }
    }

    pub fn from_entries(space: RegisterSpace, entries: CMatrix) -> Result<Self> {
        let d = space.total_dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::ShapeError(format!(
                "expected {d}x{d} entries, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(DensityMatrix { space, entries })
    }

    /// `|ψ⟩⟨ψ|` for an amplitude vector in the space's index order.
    pub fn from_pure(space: RegisterSpace, amplitudes: &[C64]) -> Result<Self> {
        let d = space.total_dim();
        if amplitudes.len() != d {
            return Err(Error::ShapeError(format!(
                "expected {d} amplitudes, got {}",
                amplitudes.len()
            )));
        }
        let entries = CMatrix::from_fn(d, d, |i, j| amplitudes[i] * amplitudes[j].conj());
        Ok(DensityMatrix { space, entries })
    }

    /// The computational basis projector `|index⟩⟨index|`.
    pub fn basis(space: RegisterSpace, index: usize) -> Result<Self> {
        let d = space.total_dim();
        if index >= d {
            return Err(Error::ShapeError(format!("basis index {index} out of range {d}")));
        }
        let mut entries = CMatrix::zeros(d, d);
        entries[(index, index)] = C64::new(1.0, 0.0);
        Ok(DensityMatrix { space, entries })
    }

    pub fn maximally_mixed(space: RegisterSpace) -> Self {
        let d = space.total_dim();
        let entries = CMatrix::identity(d, d) * C64::new(1.0 / d as f64, 0.0);
        DensityMatrix { space, entries }
    }

    /// The EPR state `(|00⟩+|11⟩)/√2` on two fresh qubits.
    pub fn epr(a: RegisterId, b: RegisterId) -> Result<Self> {
        let space = RegisterSpace::new(vec![
            Register { id: a, dim: 2 },
            Register { id: b, dim: 2 },
        ])?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = [C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0)];
        DensityMatrix::from_pure(space, &amps)
    }

    /// A seeded random full-rank state `G G† / tr(G G†)`, scaled by `weight`.
    pub fn random(space: RegisterSpace, seed: u64, weight: f64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = space.total_dim();
        let g = CMatrix::from_fn(d, d, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let m = &g * g.adjoint();
        let tr = m.trace().re;
        DensityMatrix {
            space,
            entries: m * C64::new(weight / tr, 0.0),
        }
    }

    pub fn space(&self) -> &RegisterSpace {
        &self.space
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn scaled(&self, factor: f64) -> DensityMatrix {
        DensityMatrix {
            space: self.space.clone(),
            entries: &self.entries * C64::new(factor, 0.0),
        }
    }

    /// Largest entry-wise modulus of `self - other`. Spaces must list the
    /// same registers in the same order.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> Option<f64> {
        if self.space != other.space {
            return None;
        }
        Some(
            self.entries
                .iter()
                .zip(other.entries.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        )
    }

    /// Entry-wise comparison after bringing both sides to canonical form.
    pub fn approx_eq(&self, other: &DensityMatrix, tol: f64) -> bool {
        let a = canonical_form(self);
        let b = canonical_form(other);
        matches!(a.max_abs_diff(&b), Some(d) if d <= tol)
    }

    pub fn hermiticity_error(&self) -> f64 {
        let adj = self.entries.adjoint();
        self.entries
            .iter()
            .zip(adj.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.entries + self.entries.adjoint()) * C64::new(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks the density-matrix invariants at the validation tolerances.
    pub fn is_valid(&self) -> bool {
        let tr = self.trace();
        self.hermiticity_error() <= EPS_VALIDATE
            && self.min_eigenvalue() >= -EPS_VALIDATE
            && tr >= -EPS_VALIDATE
            && tr <= 1.0 + EPS_VALIDATE
    }

    /// Reorders the registers into `order`, permuting entries to match.
    pub fn permuted(&self, order: &[RegisterId]) -> Result<DensityMatrix> {
        if order.len() != self.space.len() {
            return Err(Error::ShapeError(format!(
                "permutation lists {} registers, space has {}",
                order.len(),
                self.space.len()
            )));
        }
        let mut new_regs = Vec::with_capacity(order.len());
        let mut old_pos = Vec::with_capacity(order.len());
        for id in order {
            let pos = self.space.position(*id).ok_or(Error::UnknownRegister(*id))?;
            new_regs.push(self.space.registers[pos]);
            old_pos.push(pos);
        }
        let new_space = RegisterSpace::new(new_regs)?;
        if old_pos.iter().enumerate().all(|(i, p)| i == *p) {
            return Ok(DensityMatrix {
                space: new_space,
                entries: self.entries.clone(),
            });
        }
        let map = index_map(&self.space, &new_space, &old_pos);
        let d = map.len();
        let entries = CMatrix::from_fn(d, d, |i, j| self.entries[(map[i], map[j])]);
        Ok(DensityMatrix {
            space: new_space,
            entries,
        })
    }
}

/// For every index of `new_space`, the index of the same basis element in
/// `old_space`. `old_pos[k]` is the position in `old_space` of the `k`-th
/// register of `new_space`.
fn index_map(old_space: &RegisterSpace, new_space: &RegisterSpace, old_pos: &[usize]) -> Vec<usize> {
    let old_dims = old_space.dims();
    let mut old_strides = vec![1usize; old_dims.len()];
    for k in (0..old_dims.len().saturating_sub(1)).rev() {
        old_strides[k] = old_strides[k + 1] * old_dims[k + 1];
    }
    let new_dims = new_space.dims();
    let d = new_space.total_dim();
    let mut map = Vec::with_capacity(d);
    let mut digits = vec![0usize; new_dims.len()];
    for _ in 0..d {
        let old: usize = digits
            .iter()
            .zip(old_pos)
            .map(|(digit, &p)| digit * old_strides[p])
            .sum();
        map.push(old);
        // increment big-endian counter
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < new_dims[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    map
}

/// A finite-outcome quantum operation in Kraus form: for each outcome `r`,
/// a list of Kraus matrices `K` (each `out_total × in_total`) representing
/// `Λ^r(ρ) = Σ K ρ K†`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumOperation {
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    branches: Vec<(Outcome, Vec<CMatrix>)>,
}

impl QuantumOperation {
    pub fn new(
        in_dims: Vec<usize>,
        out_dims: Vec<usize>,
        branches: Vec<(Outcome, Vec<CMatrix>)>,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::ShapeError("outcome set is empty".into()));
        }
        let din: usize = in_dims.iter().product();
        let dout: usize = out_dims.iter().product();
        let mut seen = BTreeSet::new();
        for (r, kraus) in &branches {
            if !seen.insert(r.clone()) {
                return Err(Error::ShapeError(format!("duplicate outcome {r}")));
            }
            for k in kraus {
                if k.nrows() != dout || k.ncols() != din {
                    return Err(Error::ShapeError(format!(
                        "Kraus operator for {r} is {}x{}, expected {dout}x{din}",
                        k.nrows(),
                        k.ncols()
                    )));
                }
            }
        }
        Ok(QuantumOperation {
            in_dims,
            out_dims,
            branches,
        })
    }

    /// Single outcome `⊥`, Kraus `{I}`.
    pub fn identity(dims: Vec<usize>) -> Self {
        Self::identity_labeled(dims, Outcome::bottom())
    }

    /// Identity quantum action reporting a fixed label.
    pub fn identity_labeled(dims: Vec<usize>, label: Outcome) -> Self {
        let d: usize = dims.iter().product();
        QuantumOperation {
            in_dims: dims.clone(),
            out_dims: dims,
            branches: vec![(label, vec![CMatrix::identity(d, d)])],
        }
    }

    pub fn unitary(dims: Vec<usize>, u: CMatrix) -> Result<Self> {
        Self::new(dims.clone(), dims, vec![(Outcome::bottom(), vec![u])])
    }

    /// Computational-basis measurement of every input register. Outcome
    /// labels are the measured digits, big-endian.
    pub fn std_measurement(dims: Vec<usize>) -> Self {
        Self::std_measurement_labeled(dims, |digits| Outcome(digits.to_string()))
    }

    /// Computational-basis measurement with caller-chosen labels, built from
    /// the digit string of each basis element.
    pub fn std_measurement_labeled(dims: Vec<usize>, label: impl Fn(&str) -> Outcome) -> Self {
        let d: usize = dims.iter().product();
        let branches = (0..d)
            .map(|i| {
                let mut p = CMatrix::zeros(d, d);
                p[(i, i)] = C64::new(1.0, 0.0);
                (label(&digit_string(i, &dims)), vec![p])
            })
            .collect();
        QuantumOperation {
            in_dims: dims.clone(),
            out_dims: dims,
            branches,
        }
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &Outcome> {
        self.branches.iter().map(|(r, _)| r)
    }

    pub fn branches(&self) -> &[(Outcome, Vec<CMatrix>)] {
        &self.branches
    }

    pub fn kraus(&self, r: &Outcome) -> Option<&[CMatrix]> {
        self.branches
            .iter()
            .find(|(o, _)| o == r)
            .map(|(_, k)| k.as_slice())
    }

    pub fn has_outcome(&self, r: &Outcome) -> bool {
        self.kraus(r).is_some()
    }

    pub fn is_dimension_preserving(&self) -> bool {
        self.in_dims == self.out_dims
    }
}

/// Big-endian digit string of `index` in the mixed radix `dims`; digits are
/// separated by `.` when any radix exceeds 10.
pub fn digit_string(index: usize, dims: &[usize]) -> String {
    let mut digits = vec![0usize; dims.len()];
    let mut rest = index;
    for k in (0..dims.len()).rev() {
        digits[k] = rest % dims[k];
        rest /= dims[k];
    }
    let wide = dims.iter().any(|&d| d > 10);
    let parts: Vec<String> = digits.iter().map(|d| d.to_string()).collect();
    if wide {
        parts.join(".")
    } else {
        parts.concat()
    }
}

/// Assignment of an operation's input slots to registers of a space, plus
/// the registers its outputs occupy afterwards.
///
/// For a dimension-preserving operation the outputs are normally the inputs
/// themselves ("in place"). Operations that grow or shrink the system name
/// fresh output registers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterMap {
    pub inputs: Vec<RegisterId>,
    pub outputs: Vec<Register>,
}

impl RegisterMap {
    pub fn in_place(space: &RegisterSpace, ids: &[RegisterId]) -> Result<Self> {
        let outputs = ids
            .iter()
            .map(|id| space.get(*id).ok_or(Error::UnknownRegister(*id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RegisterMap {
            inputs: ids.to_vec(),
            outputs,
        })
    }

    pub fn new(inputs: Vec<RegisterId>, outputs: Vec<Register>) -> Self {
        RegisterMap { inputs, outputs }
    }

    pub fn is_in_place(&self) -> bool {
        self.inputs.len() == self.outputs.len()
            && self.inputs.iter().zip(&self.outputs).all(|(a, b)| *a == b.id)
    }
}
