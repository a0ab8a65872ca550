//! Nonlinear least-squares curve fits with Jacobian-based error bars.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::{self, NelderMeadOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// One standard error per parameter, σ̂²(JᵀJ)⁻¹ on the diagonal.
    pub errors: Vec<f64>,
    pub rss: f64,
    pub dof: usize,
}

/// Minimizes Σ rᵢ(p)² from `p0` with simplex edges `steps`.
pub fn least_squares<F>(residuals: F, p0: &[f64], steps: &[f64]) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let rss = |p: &[f64]| residuals(p).iter().map(|r| r * r).sum::<f64>();
    let opts = NelderMeadOptions {
        tolerance: 1e-14 * rss(p0).clamp(1e-300, 1.0),
        ..NelderMeadOptions::new(steps.to_vec())
    };
    let best = optim::minimize(rss, p0, &opts)?;
    let r0 = residuals(&best.x);
    let n = r0.len();
    let k = p0.len();
    if n <= k {
        return Err(Error::Fit(format!("{n} points for {k} parameters")));
    }
    let mut jac = DMatrix::zeros(n, k);
    for j in 0..k {
        let h = 1e-6 * best.x[j].abs().max(steps[j].abs());
        let mut hi = best.x.clone();
        let mut lo = best.x.clone();
        hi[j] += h;
        lo[j] -= h;
        let (rh, rl) = (residuals(&hi), residuals(&lo));
        for i in 0..n {
            jac[(i, j)] = (rh[i] - rl[i]) / (2.0 * h);
        }
    }
    let s2 = best.cost / (n - k) as f64;
    let errors = match (jac.transpose() * &jac).try_inverse() {
        Some(inv) => (0..k).map(|j| (s2 * inv[(j, j)]).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; k],
    };
    Ok(FitResult {
        params: best.x,
        errors,
        rss: best.cost,
        dof: n - k,
    })
}

/// Best (a, b, c) of y ≈ a·cos(ωx) + b·sin(ωx) + c and its residual.
fn linear_sinusoid(x: &[f64], y: &[f64], omega: f64) -> Option<([f64; 3], f64)> {
    let a = DMatrix::from_fn(x.len(), 3, |i, j| match j {
        0 => (omega * x[i]).cos(),
        1 => (omega * x[i]).sin(),
        _ => 1.0,
    });
    let b = DVector::from_column_slice(y);
    let sol = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let rss = (&b - &a * &sol).norm_squared();
    Some(([sol[0], sol[1], sol[2]], rss))
}

/// Angular frequency that best explains `y` as an undamped sinusoid,
/// scanned between one period over the span and the Nyquist limit.
fn scan_frequency(x: &[f64], y: &[f64]) -> Result<f64> {
    let span = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || x.len() < 5 {
        return Err(Error::Fit("need at least five distinct sample points".into()));
    }
    let spacing = span / (x.len() - 1) as f64;
    let (lo, hi) = (0.25 / span, 0.5 / spacing);
    let n = 20 * x.len();
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let f = lo + (hi - lo) * i as f64 / n as f64;
        if let Some((_, rss)) = linear_sinusoid(x, y, 2.0 * PI * f) {
            if rss < best.0 {
                best = (rss, f);
            }
        }
    }
    Ok(2.0 * PI * best.1)
}

/// y = A·e^{−x/T}·cos(2πf·x + φ) + B; params (A, T, f, φ, B).
pub fn damped_cosine(p: &[f64], x: f64) -> f64 {
    p[0] * (-x / p[1]).exp() * (2.0 * PI * p[2] * x + p[3]).cos() + p[4]
}

pub fn fit_damped_cosine(x: &[f64], y: &[f64]) -> Result<FitResult> {
    let omega = scan_frequency(x, y)?;
    let ([a, b, c], _) = linear_sinusoid(x, y, omega).ok_or_else(|| Error::Fit("singular sinusoid basis".into()))?;
    let span = x[x.len() - 1] - x[0];
    let amp = a.hypot(b);
    let p0 = [amp, span, omega / (2.0 * PI), (-b).atan2(a), c];
    let steps = [0.1 * amp.max(1e-3), 0.2 * span, 0.02 * p0[2], 0.2, 0.05 * amp.max(1e-3)];
    let fit = least_squares(
        |p| x.iter().zip(y).map(|(&xi, &yi)| damped_cosine(p, xi) - yi).collect(),
        &p0,
        &steps,
    )?;
    let mut fit = fit;
    if fit.params[0] < 0.0 {
        fit.params[0] = -fit.params[0];
        fit.params[3] += PI;
    }
    fit.params[3] = (fit.params[3] + PI).rem_euclid(2.0 * PI) - PI;
    Ok(fit)
}

/// y = B − A·cos(k·x); params (A, k, B). The oscillation starts at its
/// minimum, as a Rabi curve from an undriven level does.
pub fn rabi_curve(p: &[f64], x: f64) -> f64 {
    p[2] - p[0] * (p[1] * x).cos()
}

pub fn fit_rabi(x: &[f64], y: &[f64]) -> Result<FitResult> {
    let omega = scan_frequency(x, y)?;
    let ([a, _, c], _) = linear_sinusoid(x, y, omega).ok_or_else(|| Error::Fit("singular sinusoid basis".into()))?;
    let p0 = [-a, omega, c];
    let steps = [0.05 * a.abs().max(1e-3), 0.02 * omega, 0.05 * a.abs().max(1e-3)];
    least_squares(
        |p| x.iter().zip(y).map(|(&xi, &yi)| rabi_curve(p, xi) - yi).collect(),
        &p0,
        &steps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_damped_cosine() {
        let truth = [0.45, 480.0, 5.0e-3, 0.3, 0.02];
        let x: Vec<f64> = (0..300).map(|i| 5.0 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| damped_cosine(&truth, t)).collect();
        let fit = fit_damped_cosine(&x, &y).unwrap();
        for (got, want) in fit.params.iter().zip(truth) {
            assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{:?}", fit.params);
        }
    }

    #[test]
    fn recovers_rabi_frequency() {
        let truth = [0.49, 0.031, 0.5];
        let x: Vec<f64> = (0..80).map(|i| 2.5 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&a| rabi_curve(&truth, a)).collect();
        let fit = fit_rabi(&x, &y).unwrap();
        assert!((fit.params[1] - truth[1]).abs() < 1e-9, "{:?}", fit.params);
    }

    #[test]
    fn error_bars_scale_with_noise() {
        // deterministic pseudo-noise
        let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let noise = |i: usize, s: f64| s * ((i as f64 * 12.9898).sin() * 43758.5453).fract();
        let fit_with = |s: f64| {
            let y: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &t)| 2.0 * t + 1.0 + noise(i, s))
                .collect();
            least_squares(
                |p| x.iter().zip(&y).map(|(&t, &v)| p[0] * t + p[1] - v).collect(),
                &[1.0, 0.0],
                &[0.1, 0.1],
            )
            .unwrap()
        };
        let small = fit_with(0.01);
        let large = fit_with(0.1);
        assert!((small.params[0] - 2.0).abs() < 1e-3);
        assert!(large.errors[0] > 5.0 * small.errors[0]);
    }
}
