//! Frequently used matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CMatrix, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

pub fn hadamard() -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_row_slice(2, 2, &[c(s, 0.), c(s, 0.), c(s, 0.), c(-s, 0.)])
}

/// Control on the first register, target on the second.
pub fn cnot() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    m[(0, 0)] = c(1., 0.);
    m[(1, 1)] = c(1., 0.);
    m[(2, 3)] = c(1., 0.);
    m[(3, 2)] = c(1., 0.);
    m
}

/// Generalized Pauli `X^a Z^b` on a `d`-level register. For `d = 2` the keys
/// `(0,0),(1,0),(1,1),(0,1)` give `I, X, XZ ∝ Y, Z`.
pub fn weyl(d: usize, a: usize, b: usize) -> CMatrix {
    let omega = 2.0 * std::f64::consts::PI / d as f64;
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        // Z^b |j> = ω^{bj} |j>, then X^a shifts to |j+a>
        let phase = C64::from_polar(1.0, omega * (b * j) as f64);
        m[((j + a) % d, j)] = phase;
    }
    m
}

/// Single-qubit rotation `Rz(α) Ry(β) Rz(γ)`.
pub fn euler(alpha: f64, beta: f64, gamma: f64) -> CMatrix {
    let rz = |t: f64| {
        CMatrix::from_row_slice(
            2,
            2,
            &[C64::from_polar(1.0, -t / 2.0), c(0., 0.), c(0., 0.), C64::from_polar(1.0, t / 2.0)],
        )
    };
    let (s, co) = (beta / 2.0).sin_cos();
    let ry = CMatrix::from_row_slice(2, 2, &[c(co, 0.), c(-s, 0.), c(s, 0.), c(co, 0.)]);
    rz(alpha) * ry * rz(gamma)
}

/// A unitary on dimension `d` determined entirely by `seed`: Gram-Schmidt
/// on a seeded complex Gaussian-like matrix.
pub fn seeded_unitary(d: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMatrix::from_fn(d, d, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // fix column phases so the result does not depend on QR sign conventions
    let mut u = q;
    for j in 0..d {
        let diag = r[(j, j)];
        if diag.norm() > 0.0 {
            let phase = diag / diag.norm();
            for i in 0..d {
                u[(i, j)] *= phase;
            }
        }
    }
    u
}

/// The four Bell-basis bras as `1×4` Kraus rows, labeled by the two
/// classical bits `(m_z, m_x)` used for teleportation corrections:
/// `00 ↔ Φ+`, `01 ↔ Ψ+`, `10 ↔ Φ-`, `11 ↔ Ψ-`.
pub fn bell_bras() -> Vec<(&'static str, CMatrix)> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let row = |v: [f64; 4]| CMatrix::from_row_slice(1, 4, &v.map(|x| c(x * s, 0.)));
    vec![
        ("00", row([1., 0., 0., 1.])),
        ("01", row([0., 1., 1., 0.])),
        ("10", row([1., 0., 0., -1.])),
        ("11", row([0., 1., -1., 0.])),
    ]
}
