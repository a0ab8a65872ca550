use std::fmt;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::linalg::{self, c, Mat3, Vec3};

/// A qutrit density matrix.
#[derive(Clone, PartialEq)]
pub struct DensityMatrix3(pub Mat3);

/// Pure-state vector in the {|0⟩, |1⟩, |2⟩} basis.
pub type StateVector = Vec3;

impl fmt::Debug for DensityMatrix3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DensityMatrix3{:.6}", self.0)
    }
}

impl DensityMatrix3 {
    pub fn ground() -> Self {
        Self::basis(0)
    }

    pub fn basis(n: usize) -> Self {
        let mut m = Mat3::zeros();
        m[(n, n)] = c(1.0, 0.0);
        Self(m)
    }

    pub fn maximally_mixed() -> Self {
        Self(Mat3::identity().scale(1.0 / 3.0))
    }

    pub fn pure(psi: &StateVector) -> Self {
        Self(linalg::projector(psi))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn populations(&self) -> [f64; 3] {
        [self.0[(0, 0)].re, self.0[(1, 1)].re, self.0[(2, 2)].re]
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.0).re
    }

    pub fn purity(&self) -> f64 {
        linalg::trace(&(self.0 * self.0)).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.0)
    }

    pub fn trace_distance(&self, other: &Self) -> f64 {
        linalg::trace_distance(&self.0, &other.0)
    }

    /// Hermiticity, unit trace and (with `psd_tol`) positivity checks.
    pub fn check(&self, tol: f64, psd_tol: Option<f64>) -> Result<()> {
        let herm = linalg::hermiticity_error(&self.0);
        if herm > tol {
            return Err(crate::error::invalid(
                "rho",
                format!("not Hermitian (deviation {herm:e})"),
            ));
        }
        let tr = linalg::trace(&self.0);
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(crate::error::invalid("rho", format!("trace is {tr}")));
        }
        if let Some(psd) = psd_tol {
            let lo = self.min_eigenvalue();
            if lo < -psd {
                return Err(crate::error::invalid("rho", format!("negative eigenvalue {lo:e}")));
            }
        }
        Ok(())
    }

    /// Physical state from a lower-triangular factor: ρ = T†T / Tr(T†T).
    ///
    /// `t` holds the 9 real parameters: the three diagonal entries followed
    /// by (re, im) of T₁₀, T₂₀, T₂₁.
    pub fn from_cholesky_params(t: &[f64]) -> Self {
        let tm = cholesky_factor(t);
        let m = tm.adjoint() * tm;
        let tr = linalg::trace(&m).re;
        let m = m.unscale(tr);
        Self((m + m.adjoint()).scale(0.5))
    }

    /// Inverse of [`Self::from_cholesky_params`] after flooring eigenvalues
    /// at `floor` so the factor exists.
    pub fn to_cholesky_params(&self, floor: f64) -> Vec<f64> {
        let (vals, vecs) = linalg::eigh(&self.0);
        let clipped = Vector3::from_fn(|i, _| c(vals[i].max(floor), 0.0));
        let m = vecs * Mat3::from_diagonal(&clipped) * vecs.adjoint();
        let m = (m + m.adjoint()).scale(0.5);
        // ρ = T†T with T lower triangular ⇔ JρJ = LL† with T = J L† J.
        #[rustfmt::skip]
        let j = Mat3::new(
            c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0),
            c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0),
            c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0),
        );
        let l = (j * m * j).cholesky().expect("floored matrix is positive definite").l();
        let t = j * l.adjoint() * j;
        vec![
            t[(0, 0)].re,
            t[(1, 1)].re,
            t[(2, 2)].re,
            t[(1, 0)].re,
            t[(1, 0)].im,
            t[(2, 0)].re,
            t[(2, 0)].im,
            t[(2, 1)].re,
            t[(2, 1)].im,
        ]
    }

    /// Closest physical state in Frobenius norm.
    pub fn project_physical(&self) -> Self {
        Self(linalg::project_physical(&self.0))
    }
}

#[rustfmt::skip]
pub(crate) fn cholesky_factor(t: &[f64]) -> Mat3 {
    let z = c(0.0, 0.0);
    Mat3::new(
        c(t[0], 0.0), z, z,
        c(t[3], t[4]), c(t[1], 0.0), z,
        c(t[5], t[6]), c(t[7], t[8]), c(t[2], 0.0),
    )
}

/// Normalizes a state vector, rejecting the zero vector.
pub fn normalized(psi: StateVector) -> Result<StateVector> {
    let n = psi.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::NotNormalized(n));
    }
    Ok(psi.unscale(n))
}

/// |⟨ψ|ρ|ψ⟩| for a normalized ψ.
pub fn fidelity(target: &StateVector, rho: &DensityMatrix3) -> Result<f64> {
    let norm = target.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(norm));
    }
    let f = (target.adjoint() * rho.0 * target)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}
