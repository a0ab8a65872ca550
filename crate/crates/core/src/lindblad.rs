//! Lindblad propagation of a qutrit with a time-dependent Hamiltonian.
//!
//! Steps use the fourth-order Magnus expansion on the vectorized
//! Liouvillian, so every step is a single matrix exponential.

use nalgebra::{SMatrix, SVector};

use crate::linalg::{c, Mat3, C64, I};

pub type Superop = SMatrix<C64, 9, 9>;
type Vec9 = SVector<C64, 9>;

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // √3/6
const MAGNUS_COMM: f64 = 0.144_337_567_297_406_44; // √3/12

/// Row-major vectorization ρ ↦ (ρ₀₀, ρ₀₁, …, ρ₂₂).
pub fn vectorize(rho: &Mat3) -> Vec9 {
    Vec9::from_fn(|k, _| rho[(k / 3, k % 3)])
}

pub fn unvectorize(v: &Vec9) -> Mat3 {
    Mat3::from_fn(|i, j| v[3 * i + j])
}

/// Superoperator of ρ ↦ AρB in row-major vectorization (A ⊗ Bᵀ).
fn sandwich(a: &Mat3, b: &Mat3) -> Superop {
    Superop::from_fn(|r, col| a[(r / 3, col / 3)] * b[(col % 3, r % 3)])
}

/// Dissipative part Σ D[L]ρ for the given collapse operators.
pub fn dissipator(collapse: &[Mat3]) -> Superop {
    let id = Mat3::identity();
    let mut out = Superop::zeros();
    for l in collapse {
        let ldl = l.adjoint() * l;
        out += sandwich(l, &l.adjoint()) - (sandwich(&ldl, &id) + sandwich(&id, &ldl)).scale(0.5);
    }
    out
}

/// Coherent part −i[H, ·].
pub fn commutator_superop(h: &Mat3) -> Superop {
    let id = Mat3::identity();
    (sandwich(h, &id) - sandwich(&id, h)) * (-I)
}

macro_rules! magnus4 {
    ($name:ident, $mat:ty) => {
        /// One fourth-order Magnus step of dX/dt = A(t)X.
        fn $name(generator: &impl Fn(f64) -> $mat, t: f64, h: f64) -> $mat {
            let a1 = generator(t + (0.5 - GAUSS_OFFSET) * h);
            let a2 = generator(t + (0.5 + GAUSS_OFFSET) * h);
            let comm = a2 * a1 - a1 * a2;
            let omega = (a1 + a2) * c(0.5 * h, 0.0) + comm * c(MAGNUS_COMM * h * h, 0.0);
            omega.exp()
        }
    };
}

magnus4!(magnus4_super, Superop);
magnus4!(magnus4_unitary, Mat3);

/// Propagates ρ over [t0, t0 + duration] with n equal Magnus steps.
pub fn evolve_density(
    rho: &Mat3,
    hamiltonian: &impl Fn(f64) -> Mat3,
    dissipation: &Superop,
    t0: f64,
    duration: f64,
    steps: usize,
) -> Mat3 {
    let h = duration / steps as f64;
    let generator = |t: f64| commutator_superop(&hamiltonian(t)) + dissipation;
    let mut v = vectorize(rho);
    for k in 0..steps {
        v = magnus4_super(&generator, t0 + k as f64 * h, h) * v;
    }
    let out = unvectorize(&v);
    (out + out.adjoint()).scale(0.5)
}

/// Unitary propagator of H(t) over [t0, t0 + duration].
pub fn evolve_unitary(hamiltonian: &impl Fn(f64) -> Mat3, t0: f64, duration: f64, steps: usize) -> Mat3 {
    let h = duration / steps as f64;
    let generator = |t: f64| hamiltonian(t) * (-I);
    let mut u = Mat3::identity();
    for k in 0..steps {
        u = magnus4_unitary(&generator, t0 + k as f64 * h, h) * u;
    }
    u
}

/// Free evolution under a constant dissipator for `duration`.
pub fn idle(rho: &Mat3, dissipation: &Superop, duration: f64) -> Mat3 {
    if duration <= 0.0 || dissipation.iter().all(|z| *z == c(0.0, 0.0)) {
        return *rho;
    }
    let prop = (dissipation * c(duration, 0.0)).exp();
    let out = unvectorize(&(prop * vectorize(rho)));
    (out + out.adjoint()).scale(0.5)
}
