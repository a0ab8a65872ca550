//! Derivative-free minimisation used by the fits and the likelihood search.

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Iteration cap summed over all restarts.
    pub max_iterations: u64,
    /// Standard deviation of simplex costs at which a run stops, relative
    /// to max(1, |cost|) at the start of the run.
    pub tolerance: f64,
    /// Initial simplex edge per coordinate.
    pub initial_step: Vec<f64>,
    pub max_restarts: usize,
}

impl NelderMeadOptions {
    pub fn new(initial_step: Vec<f64>) -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-12,
            initial_step,
            max_restarts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: u64,
}

struct Objective<'a, F>(&'a F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let v = (self.0)(p);
        // NaN would poison the simplex ordering.
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

/// Nelder-Mead from `x0`, restarted from the incumbent until a restart no
/// longer improves the cost. Fails with `NotConverged` if the iteration cap
/// is hit first.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<Minimum> {
    if opts.initial_step.len() != x0.len() {
        return Err(Error::InvalidParameter {
            name: "initial_step",
            reason: format!("length {} for {} parameters", opts.initial_step.len(), x0.len()),
        });
    }
    let mut best = Minimum {
        x: x0.to_vec(),
        cost: Objective(&f).cost(&x0.to_vec()).unwrap_or(f64::INFINITY),
        iterations: 0,
    };
    let mut scale = 1.0;
    for _ in 0..=opts.max_restarts {
        let remaining = opts.max_iterations.saturating_sub(best.iterations);
        if remaining == 0 {
            break;
        }
        let mut simplex = vec![best.x.clone()];
        for (k, step) in opts.initial_step.iter().enumerate() {
            let mut v = best.x.clone();
            v[k] += scale * step;
            simplex.push(v);
        }
        let tol = opts.tolerance * best.cost.abs().clamp(1.0, f64::MAX);
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(tol)
            .map_err(|e| Error::Fit(e.to_string()))?;
        let res = Executor::new(Objective(&f), solver)
            .configure(|s| s.max_iters(remaining))
            .run()
            .map_err(|e| Error::Fit(e.to_string()))?;
        let state = res.state();
        let converged = matches!(
            state.get_termination_status(),
            TerminationStatus::Terminated(TerminationReason::SolverConverged)
        );
        best.iterations += state.get_iter();
        let cost = state.get_best_cost();
        let improved = cost < best.cost - tol.max(1e-14 * best.cost.abs());
        if cost <= best.cost {
            if let Some(x) = state.get_best_param() {
                best.x = x.clone();
                best.cost = cost;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                iterations: best.iterations as usize,
                cost: best.cost,
                best: best.x,
            });
        }
        if !improved {
            return Ok(best);
        }
        scale *= 0.5;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &NelderMeadOptions::new(vec![0.5, 0.5])).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn quadratic_in_nine_dimensions() {
        let f = |x: &[f64]| {
            x.iter()
                .enumerate()
                .map(|(k, v)| (k as f64 + 1.0) * (v - 0.1 * k as f64).powi(2))
                .sum()
        };
        let m = minimize(f, &[0.0; 9], &NelderMeadOptions::new(vec![0.2; 9])).unwrap();
        for (k, v) in m.x.iter().enumerate() {
            assert!((v - 0.1 * k as f64).abs() < 1e-5, "{m:?}");
        }
    }

    #[test]
    fn tolerance_scales_with_cost() {
        // a large constant offset would stall an absolute 1e-12 criterion
        let f = |x: &[f64]| 1e8 + (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let m = minimize(f, &[0.0, 0.0], &NelderMeadOptions::new(vec![0.5, 0.5])).unwrap();
        assert!((m.x[0] - 3.0).abs() < 1e-1 && (m.x[1] + 1.0).abs() < 1e-1, "{m:?}");
    }

    #[test]
    fn iteration_cap_reports_best_point() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_iterations: 5,
            ..NelderMeadOptions::new(vec![0.5, 0.5])
        };
        match minimize(f, &[-1.2, 1.0], &opts) {
            Err(Error::NotConverged { iterations, best, .. }) => {
                assert_eq!(iterations, 5);
                assert_eq!(best.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
