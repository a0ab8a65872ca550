//! Small dense helpers for 3×3 complex matrices.

use nalgebra::{Complex, Matrix3, SymmetricEigen, Vector3};

pub type C64 = Complex<f64>;
pub type Mat3 = Matrix3<C64>;
pub type Vec3 = Vector3<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Frobenius-norm deviation from Hermiticity.
pub fn hermiticity_error(m: &Mat3) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn trace(m: &Mat3) -> C64 {
    m[(0, 0)] + m[(1, 1)] + m[(2, 2)]
}

/// Ascending eigenvalues and matching eigenvectors of a Hermitian matrix.
pub fn eigh(m: &Mat3) -> (Vector3<f64>, Mat3) {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(h);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector3::from_fn(|i, _| eig.eigenvalues[idx[i]]);
    let vectors = Mat3::from_fn(|r, col| eig.eigenvectors[(r, idx[col])]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &Mat3) -> f64 {
    eigh(m).0[0]
}

/// Trace distance ½‖a − b‖₁ between two Hermitian matrices.
pub fn trace_distance(a: &Mat3, b: &Mat3) -> f64 {
    let (values, _) = eigh(&(a - b));
    0.5 * values.iter().map(|v| v.abs()).sum::<f64>()
}

/// Euclidean projection of a real vector onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Nearest unit-trace positive semidefinite matrix in Frobenius norm.
pub fn project_physical(m: &Mat3) -> Mat3 {
    let (values, vectors) = eigh(m);
    let p = project_simplex(values.as_slice());
    let d = Mat3::from_diagonal(&Vector3::new(c(p[0], 0.0), c(p[1], 0.0), c(p[2], 0.0)));
    let out = vectors * d * vectors.adjoint();
    (out + out.adjoint()).scale(0.5)
}

/// Outer product |ψ⟩⟨ψ|.
pub fn projector(psi: &Vec3) -> Mat3 {
    psi * psi.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_fixes_points_on_simplex() {
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = project_simplex(&[1.2, -0.1, -0.1]);
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn eigh_sorts_ascending() {
        let m = Mat3::from_diagonal(&Vector3::new(c(3.0, 0.0), c(-1.0, 0.0), c(0.5, 0.0)));
        let (v, _) = eigh(&m);
        assert_eq!(v.as_slice(), &[-1.0, 0.5, 3.0]);
    }

    #[test]
    fn physical_projection_removes_negative_weight() {
        let m = Mat3::from_diagonal(&Vector3::new(c(1.1, 0.0), c(-0.1, 0.0), c(0.0, 0.0)));
        let p = project_physical(&m);
        assert!(min_eigenvalue(&p) >= -1e-12);
        assert!((trace(&p).re - 1.0).abs() < 1e-12);
    }
}
