//! Population extraction from averaged readout traces and three-level state
//! tomography.
//!
//! Readout is linear in the level populations, so a trace is a weighted sum
//! of the three reference traces and its time integral measures the operator
//! M = diag(m₀, m₁, m₂). Tomography applies nine rotations before readout and
//! inverts ⟨I_k⟩ = Tr[U_k ρ U_k† M] = Tr[ρ U_k† M U_k].

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cavity::ReadoutTrace;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, Mat3};
use crate::optim::{self, NelderMeadOptions};
use crate::pulse::{rotation, Transition};
use crate::state::DensityMatrix3;

pub use crate::state::fidelity;

/// Default integration window for the measurement operator, ns.
pub const DEFAULT_WINDOW_NS: f64 = 500.0;

/// Smallest accepted relative gap between measurement eigenvalues.
const DISTINCT_TOL: f64 = 1e-9;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    pub m_values: [f64; 3],
    /// Integration window, ns.
    pub window: f64,
}

/// Trapezoid integral of the in-phase quadrature over [t₀, t₀ + window].
pub fn integrate_in_phase(trace: &ReadoutTrace, window: f64) -> Result<f64> {
    if trace.len() < 2 {
        return Err(invalid("trace", "need at least two samples to integrate"));
    }
    let t0 = trace.times[0];
    let end = t0 + window;
    if trace.times[trace.len() - 1] < end - 1e-9 {
        return Err(invalid(
            "window",
            format!(
                "{window} ns extends past the trace end at {} ns",
                trace.times[trace.len() - 1]
            ),
        ));
    }
    let mut total = 0.0;
    for k in 1..trace.len() {
        let (ta, tb) = (trace.times[k - 1], trace.times[k]);
        if ta >= end - 1e-12 {
            break;
        }
        let (ia, ib) = (trace.i_quad[k - 1], trace.i_quad[k]);
        if tb > end {
            // partial last interval
            let f = (end - ta) / (tb - ta);
            let iend = ia + f * (ib - ia);
            total += 0.5 * (ia + iend) * (end - ta);
            break;
        }
        total += 0.5 * (ia + ib) * (tb - ta);
    }
    Ok(total)
}

impl MeasurementOperator {
    /// Operator with the given eigenvalues. Distinctness is not checked here,
    /// so degenerate operators can reach [`design_matrix`] and be diagnosed.
    pub fn new(m_values: [f64; 3], window: f64) -> Self {
        Self { m_values, window }
    }

    /// Integrates the three reference traces over `window`.
    pub fn from_references(refs: &[ReadoutTrace; 3], window: f64) -> Result<Self> {
        if !(window > 0.0) {
            return Err(invalid("window", "must be positive"));
        }
        check_grid(&refs[0], &refs[1..])?;
        let mut m = [0.0; 3];
        for (n, r) in refs.iter().enumerate() {
            m[n] = integrate_in_phase(r, window)?;
        }
        let op = Self::new(m, window);
        op.check_distinct()?;
        Ok(op)
    }

    pub fn check_distinct(&self) -> Result<()> {
        let m = self.m_values;
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let gap = (m[0] - m[1]).abs().min((m[0] - m[2]).abs()).min((m[1] - m[2]).abs());
        if !(gap > DISTINCT_TOL * scale) {
            return Err(invalid(
                "m_values",
                format!(
                    "eigenvalues {m:?} are not pairwise distinct in a {} ns window",
                    self.window
                ),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&nalgebra::Vector3::from_fn(|n, _| c(self.m_values[n], 0.0)))
    }
}

fn check_grid(first: &ReadoutTrace, others: &[ReadoutTrace]) -> Result<()> {
    for o in others {
        if o.len() != first.len() {
            return Err(Error::GridMismatch(format!("{} vs {} samples", first.len(), o.len())));
        }
        if let Some(k) = (0..first.len()).find(|&k| (first.times[k] - o.times[k]).abs() > 1e-9) {
            return Err(Error::GridMismatch(format!(
                "sample {k} at {} ns vs {} ns",
                first.times[k], o.times[k]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEstimate {
    pub p: [f64; 3],
    /// Covariance of the unconstrained estimate, σ̂²(AᵀA)⁻¹.
    pub covariance: Matrix3<f64>,
    /// Condition number of the N×3 design matrix.
    pub condition: f64,
    /// Residual variance per sample.
    pub residual_variance: f64,
}

/// Least-squares populations from the in-phase quadrature, one row per
/// time step. With `constrained` the estimate is projected onto the simplex;
/// the covariance always refers to the unconstrained solution.
pub fn ols_populations(
    trace: &ReadoutTrace,
    refs: &[ReadoutTrace; 3],
    constrained: bool,
) -> Result<PopulationEstimate> {
    check_grid(trace, refs)?;
    let n = trace.len();
    if n < 4 {
        return Err(invalid("trace", "need more samples than populations"));
    }
    let a = DMatrix::from_fn(n, 3, |i, j| refs[j].i_quad[i]);
    let b = DVector::from_column_slice(&trace.i_quad);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
    if rank < 3 || !(smax > 0.0) {
        return Err(Error::RankDeficient { rank, condition });
    }
    let x = svd.solve(&b, RANK_TOL * smax).map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &b - &a * &x;
    let residual_variance = resid.norm_squared() / (n - 3) as f64;
    let ata = a.transpose() * &a;
    let inv = ata.try_inverse().ok_or(Error::RankDeficient { rank, condition })?;
    let covariance = Matrix3::from_fn(|i, j| inv[(i, j)] * residual_variance);
    let mut p = [x[0], x[1], x[2]];
    if constrained {
        let q = linalg::project_simplex(&p);
        p = [q[0], q[1], q[2]];
    }
    Ok(PopulationEstimate {
        p,
        covariance,
        condition,
        residual_variance,
    })
}

/// One tomography pre-rotation: (transition, angle, axis phase).
pub type RotationPulse = (Transition, f64, f64);

pub const ROTATION_LABELS: [&str; 9] = [
    "I",
    "X90_01",
    "Y90_01",
    "X180_01",
    "X90_12",
    "Y90_12",
    "X180_01*X90_12",
    "X180_01*Y90_12",
    "X180_01*X180_12",
];

/// Pulse sequences of the nine rotations, in the order they act on the
/// state. Composite entries apply the 01 π pulse first, so the 12 pulse
/// probes the 0-2 coherence; in the opposite order the set is rank-deficient.
pub fn tomography_sequences() -> [Vec<RotationPulse>; 9] {
    use Transition::*;
    [
        vec![],
        vec![(T01, FRAC_PI_2, 0.0)],
        vec![(T01, FRAC_PI_2, FRAC_PI_2)],
        vec![(T01, PI, 0.0)],
        vec![(T12, FRAC_PI_2, 0.0)],
        vec![(T12, FRAC_PI_2, FRAC_PI_2)],
        vec![(T01, PI, 0.0), (T12, FRAC_PI_2, 0.0)],
        vec![(T01, PI, 0.0), (T12, FRAC_PI_2, FRAC_PI_2)],
        vec![(T01, PI, 0.0), (T12, PI, 0.0)],
    ]
}

/// Unitary of a pulse list applied in order.
pub fn sequence_unitary(seq: &[RotationPulse]) -> Mat3 {
    seq.iter()
        .fold(Mat3::identity(), |u, &(tr, angle, axis)| rotation(tr, angle, axis) * u)
}

pub fn tomography_rotations() -> [Mat3; 9] {
    let seqs = tomography_sequences();
    std::array::from_fn(|k| sequence_unitary(&seqs[k]))
}

/// Real coordinates x of a Hermitian matrix:
/// (ρ₀₀, ρ₁₁, ρ₂₂, Re ρ₀₁, Re ρ₀₂, Re ρ₁₂, Im ρ₀₁, Im ρ₀₂, Im ρ₁₂).
pub fn hermitian_to_real(m: &Mat3) -> [f64; 9] {
    [
        m[(0, 0)].re,
        m[(1, 1)].re,
        m[(2, 2)].re,
        m[(0, 1)].re,
        m[(0, 2)].re,
        m[(1, 2)].re,
        m[(0, 1)].im,
        m[(0, 2)].im,
        m[(1, 2)].im,
    ]
}

#[rustfmt::skip]
pub fn real_to_hermitian(x: &[f64]) -> Mat3 {
    let d = |v: f64| c(v, 0.0);
    let (a, b, e) = (c(x[3], x[6]), c(x[4], x[7]), c(x[5], x[8]));
    Mat3::new(
        d(x[0]), a, b,
        a.conj(), d(x[1]), e,
        b.conj(), e.conj(), d(x[2]),
    )
}

/// Row r with Tr[ρ·O] = r·x(ρ) for Hermitian ρ and O.
fn observable_row(o: &Mat3) -> [f64; 9] {
    [
        o[(0, 0)].re,
        o[(1, 1)].re,
        o[(2, 2)].re,
        2.0 * o[(1, 0)].re,
        2.0 * o[(2, 0)].re,
        2.0 * o[(2, 1)].re,
        -2.0 * o[(1, 0)].im,
        -2.0 * o[(2, 0)].im,
        -2.0 * o[(2, 1)].im,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// One row per rotation, one column per real coordinate of ρ.
    pub rows: DMatrix<f64>,
    /// Rank and condition number with the trace row appended. The trace is
    /// fixed by the constraint, so a direction the rotations cannot see
    /// along the identity does not count as missing.
    pub condition: f64,
    pub rank: usize,
}

/// Singular-value rank and condition number of a matrix.
fn rank_and_condition(a: &DMatrix<f64>) -> (usize, f64) {
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
    let condition = if smin > 0.0 && sv.len() >= a.ncols() {
        smax / smin
    } else {
        f64::INFINITY
    };
    (rank, condition)
}

/// Design matrix of the measurement set. Fails unless it determines all nine
/// real coordinates of a unit-trace ρ.
pub fn design_matrix(ops: &MeasurementOperator, rotations: &[Mat3]) -> Result<DesignMatrix> {
    let m = ops.matrix();
    let rows: Vec<[f64; 9]> = rotations
        .iter()
        .map(|u| observable_row(&(u.adjoint() * m * u)))
        .collect();
    let a = DMatrix::from_fn(rows.len(), 9, |i, j| rows[i][j]);
    let scale = ops.m_values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let folded = DMatrix::from_fn(rows.len() + 1, 9, |i, j| {
        if i < rows.len() {
            rows[i][j]
        } else if j < 3 {
            scale
        } else {
            0.0
        }
    });
    let (rank, condition) = rank_and_condition(&folded);
    if rank < 9 {
        return Err(Error::RankDeficient { rank, condition });
    }
    Ok(DesignMatrix {
        rows: a,
        condition,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyRecord {
    pub values: [f64; 9],
    pub sigmas: [f64; 9],
    pub rotation_labels: [String; 9],
}

impl TomographyRecord {
    pub fn new(values: [f64; 9], sigmas: [f64; 9]) -> Result<Self> {
        let rec = Self {
            values,
            sigmas,
            rotation_labels: ROTATION_LABELS.map(String::from),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("values", "non-finite measurement"));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("sigmas", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Noiseless ⟨I_k⟩ for a state.
pub fn expected_values(rho: &DensityMatrix3, ops: &MeasurementOperator, rotations: &[Mat3; 9]) -> [f64; 9] {
    let m = ops.matrix();
    std::array::from_fn(|k| {
        let u = rotations[k];
        linalg::trace(&(u * rho.matrix() * u.adjoint() * m)).re
    })
}

/// Weighted least squares with Tr ρ = 1 imposed through a Lagrange
/// multiplier. Hermitian and unit trace, not necessarily positive.
pub fn linear_inversion(
    record: &TomographyRecord,
    ops: &MeasurementOperator,
    rotations: &[Mat3; 9],
) -> Result<DensityMatrix3> {
    record.validate()?;
    let design = design_matrix(ops, rotations)?;
    let a = &design.rows;
    let w = DVector::from_iterator(9, record.sigmas.iter().map(|s| 1.0 / (s * s)));
    let mut kkt = SMatrix::<f64, 10, 10>::zeros();
    let mut rhs = SVector::<f64, 10>::zeros();
    for i in 0..9 {
        for j in 0..9 {
            kkt[(i, j)] = (0..9).map(|k| a[(k, i)] * w[k] * a[(k, j)]).sum();
        }
        rhs[i] = (0..9).map(|k| a[(k, i)] * w[k] * record.values[k]).sum();
    }
    for i in 0..3 {
        kkt[(i, 9)] = 1.0;
        kkt[(9, i)] = 1.0;
    }
    rhs[9] = 1.0;
    let sol = kkt.lu().solve(&rhs).ok_or(Error::RankDeficient {
        rank: design.rank,
        condition: design.condition,
    })?;
    Ok(DensityMatrix3(real_to_hermitian(sol.as_slice())))
}

/// χ² of a state against a record.
pub fn mle_cost(
    rho: &DensityMatrix3,
    record: &TomographyRecord,
    ops: &MeasurementOperator,
    rotations: &[Mat3; 9],
) -> f64 {
    let pred = expected_values(rho, ops, rotations);
    (0..9)
        .map(|k| ((record.values[k] - pred[k]) / record.sigmas[k]).powi(2))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    pub max_iterations: u64,
    pub tolerance: f64,
    /// Eigenvalue floor applied to the seed before factorisation.
    pub seed_floor: f64,
    /// Projected-gradient steps taken before the simplex search.
    pub gradient_iterations: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-12,
            seed_floor: 1e-6,
            gradient_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleEstimate {
    pub rho: DensityMatrix3,
    pub cost: f64,
    /// Cost of the seed state as given.
    pub seed_cost: f64,
    pub iterations: u64,
}

/// Maximum-likelihood state over ρ = T†T / Tr(T†T) with T lower triangular.
/// The seed itself stays a candidate, so the result never costs more than it.
pub fn mle_estimate(
    record: &TomographyRecord,
    ops: &MeasurementOperator,
    rotations: &[Mat3; 9],
    seed: &DensityMatrix3,
    opts: &MleOptions,
) -> Result<MleEstimate> {
    record.validate()?;
    design_matrix(ops, rotations)?;
    let seed_cost = mle_cost(seed, record, ops, rotations);
    // The Cholesky simplex stalls near rank-deficient optima, so it starts
    // from the projected-gradient optimum and only polishes.
    let refined = projected_gradient(record, ops, rotations, seed, opts.gradient_iterations);
    let refined_cost = mle_cost(&refined, record, ops, rotations);
    let (start, start_cost) = if refined_cost <= seed_cost || !seed_is_physical(seed) {
        (refined, refined_cost)
    } else {
        (seed.clone(), seed_cost)
    };
    let x0 = start.to_cholesky_params(opts.seed_floor);
    let f = |x: &[f64]| {
        if x[..3].iter().chain(&x[3..]).all(|v| *v == 0.0) {
            return f64::INFINITY;
        }
        mle_cost(&DensityMatrix3::from_cholesky_params(x), record, ops, rotations)
    };
    let nm = NelderMeadOptions {
        max_iterations: opts.max_iterations,
        tolerance: opts.tolerance,
        ..NelderMeadOptions::new(vec![0.05; 9])
    };
    let found = optim::minimize(f, &x0, &nm)?;
    let rho = DensityMatrix3::from_cholesky_params(&found.x);
    if found.cost > start_cost {
        return Ok(MleEstimate {
            rho: start,
            cost: start_cost,
            seed_cost,
            iterations: found.iterations,
        });
    }
    Ok(MleEstimate {
        rho,
        cost: found.cost,
        seed_cost,
        iterations: found.iterations,
    })
}

/// Accelerated projected gradient (FISTA) on ρ. The cost is a convex
/// quadratic on the set of density matrices, so this reaches the global
/// minimum from any start.
pub fn projected_gradient(
    record: &TomographyRecord,
    ops: &MeasurementOperator,
    rotations: &[Mat3; 9],
    start: &DensityMatrix3,
    max_iterations: u64,
) -> DensityMatrix3 {
    let m = ops.matrix();
    let b: Vec<Mat3> = rotations.iter().map(|u| u.adjoint() * m * u).collect();
    let w: Vec<f64> = record.sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let lipschitz: f64 = 2.0 * (0..9).map(|k| w[k] * b[k].norm_squared()).sum::<f64>();
    let grad = |x: &Mat3| -> Mat3 {
        let mut g = Mat3::zeros();
        for k in 0..9 {
            let r = record.values[k] - linalg::trace(&(b[k] * x)).re;
            g += b[k].scale(-2.0 * w[k] * r);
        }
        g
    };
    let mut x = linalg::project_physical(start.matrix());
    let mut y = x;
    let mut t = 1.0f64;
    for _ in 0..max_iterations {
        let next = linalg::project_physical(&(y - grad(&y).unscale(lipschitz)));
        let step = (next - x).norm();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next + (next - x).scale((t - 1.0) / t_next);
        x = next;
        t = t_next;
        if step < 1e-14 {
            break;
        }
    }
    DensityMatrix3(x)
}

fn seed_is_physical(seed: &DensityMatrix3) -> bool {
    seed.check(1e-10, Some(1e-9)).is_ok()
}

/// Linear inversion, projection to the nearest physical state, then MLE.
pub fn reconstruct(
    record: &TomographyRecord,
    ops: &MeasurementOperator,
    rotations: &[Mat3; 9],
    opts: &MleOptions,
) -> Result<MleEstimate> {
    let seed = linear_inversion(record, ops, rotations)?.project_physical();
    mle_estimate(record, ops, rotations, &seed, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSpread {
    /// Element-wise standard deviation of Re ρ and Im ρ.
    pub re: [[f64; 3]; 3],
    pub im: [[f64; 3]; 3],
    /// Reconstructed state of every resample, in stream order.
    pub states: Vec<DensityMatrix3>,
}

impl BootstrapSpread {
    /// Mean spread over the nine independent real coordinates.
    pub fn typical(&self) -> f64 {
        let diag: f64 = (0..3).map(|n| self.re[n][n]).sum();
        let off: f64 = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| self.re[i][j] + self.im[i][j])
            .sum();
        (diag + off) / 9.0
    }
}

/// Parametric bootstrap: redraw each value from N(value, σ), reconstruct,
/// and take element-wise spreads. Resample i uses ChaCha stream i of `seed`.
pub fn bootstrap(
    record: &TomographyRecord,
    ops: &MeasurementOperator,
    rotations: &[Mat3; 9],
    resamples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<BootstrapSpread> {
    if resamples < 2 {
        return Err(invalid("resamples", "need at least two"));
    }
    record.validate()?;
    let states: Vec<Mat3> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut values = record.values;
            for (v, s) in values.iter_mut().zip(record.sigmas) {
                *v += Normal::new(0.0, s).expect("positive sigma").sample(&mut rng);
            }
            let r = TomographyRecord {
                values,
                ..record.clone()
            };
            reconstruct(&r, ops, rotations, opts).map(|m| m.rho.0)
        })
        .collect::<Result<_>>()?;
    let n = resamples as f64;
    let mut re = [[0.0; 3]; 3];
    let mut im = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let spread = |part: &dyn Fn(&Mat3) -> f64| {
                let mean = states.iter().map(part).sum::<f64>() / n;
                (states.iter().map(|s| (part(s) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            re[i][j] = spread(&|s| s[(i, j)].re);
            im[i][j] = spread(&|s| s[(i, j)].im);
        }
    }
    Ok(BootstrapSpread {
        re,
        im,
        states: states.into_iter().map(DensityMatrix3).collect(),
    })
}

/// Three lines of `re im re im re im`, row-major, 17 significant digits.
pub fn format_density_matrix(rho: &DensityMatrix3) -> String {
    let mut s = String::new();
    for i in 0..3 {
        let row: Vec<String> = (0..3)
            .flat_map(|j| {
                let z = rho.matrix()[(i, j)];
                [format!("{:.16e}", z.re), format!("{:.16e}", z.im)]
            })
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn parse_density_matrix(text: &str) -> Result<DensityMatrix3> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| invalid("density_matrix", format!("`{t}`: {e}")))
        })
        .collect::<Result<_>>()?;
    if nums.len() != 18 {
        return Err(invalid(
            "density_matrix",
            format!("expected 18 numbers, found {}", nums.len()),
        ));
    }
    Ok(DensityMatrix3(Mat3::from_fn(|i, j| {
        c(nums[6 * i + 2 * j], nums[6 * i + 2 * j + 1])
    })))
}
