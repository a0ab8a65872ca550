use proptest::prelude::*;

use qutrit::cavity::{simulate_readout, ReadoutSettings, ReadoutTrace};
use qutrit::device::{dispersive_spectrum, DeviceParams};
use qutrit::linalg::{c, cis, Vec3};
use qutrit::pulse::{preparation_angles, propagate, rotation, PulseSegment, PulseShape, Transition};
use qutrit::reconstruction::{
    expected_values, linear_inversion, mle_cost, ols_populations, reconstruct, tomography_rotations,
    MeasurementOperator, MleOptions, TomographyRecord,
};
use qutrit::state::{fidelity, normalized, DensityMatrix3};

const M: [f64; 3] = [-49.3, -131.9, 141.6];

fn ops() -> MeasurementOperator {
    MeasurementOperator::new(M, 500.0)
}

fn cholesky() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 9).prop_filter("nonzero factor", |t| t[..3].iter().any(|d| d.abs() > 0.05))
}

fn simplex() -> impl Strategy<Value = [f64; 3]> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        [lo, hi - lo, 1.0 - hi]
    })
}

fn amplitudes() -> impl Strategy<Value = Vec3> {
    prop::collection::vec(-1.0f64..1.0, 6)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        .prop_map(|v| normalized(Vec3::new(c(v[0], v[1]), c(v[2], v[3]), c(v[4], v[5]))).unwrap())
}

fn short_readout() -> ReadoutSettings {
    ReadoutSettings {
        t_end: 400.0,
        ..ReadoutSettings::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_inversion_recovers_any_state(t in cholesky()) {
        let rho = DensityMatrix3::from_cholesky_params(&t);
        let rot = tomography_rotations();
        let rec = TomographyRecord::new(expected_values(&rho, &ops(), &rot), [1.0; 9]).unwrap();
        let back = linear_inversion(&rec, &ops(), &rot).unwrap();
        prop_assert!(back.trace_distance(&rho) < 1e-8);
    }

    #[test]
    fn cholesky_parameters_round_trip(t in cholesky()) {
        let rho = DensityMatrix3::from_cholesky_params(&t);
        prop_assume!(rho.min_eigenvalue() > 1e-4);
        let again = DensityMatrix3::from_cholesky_params(&rho.to_cholesky_params(0.0));
        prop_assert!(again.trace_distance(&rho) < 1e-10);
    }

    #[test]
    fn fidelity_ignores_global_phase(psi in amplitudes(), t in cholesky(), phase in -3.2f64..3.2) {
        let rho = DensityMatrix3::from_cholesky_params(&t);
        let a = fidelity(&psi, &rho).unwrap();
        let b = fidelity(&(psi * cis(phase)), &rho).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn ideal_rotations_prepare_any_pure_state(psi in amplitudes()) {
        let [t01, p01, t12, p12] = preparation_angles(&psi).unwrap();
        let u = rotation(Transition::T12, t12, p12) * rotation(Transition::T01, t01, p01);
        let mut ground = Vec3::zeros();
        ground[0] = c(1.0, 0.0);
        let f = fidelity(&psi, &DensityMatrix3::pure(&(u * ground))).unwrap();
        prop_assert!(f > 1.0 - 1e-12, "{f}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mle_is_physical_and_never_worse_than_its_seed(
        t in cholesky(),
        noise in prop::collection::vec(-1.0f64..1.0, 9),
        scale in 0.5f64..20.0,
    ) {
        let rho = DensityMatrix3::from_cholesky_params(&t);
        let rot = tomography_rotations();
        let clean = expected_values(&rho, &ops(), &rot);
        let values: [f64; 9] = std::array::from_fn(|k| clean[k] + scale * noise[k]);
        let rec = TomographyRecord::new(values, [scale; 9]).unwrap();
        let seed = linear_inversion(&rec, &ops(), &rot).unwrap().project_physical();
        let est = reconstruct(&rec, &ops(), &rot, &MleOptions::default()).unwrap();
        prop_assert!(est.rho.min_eigenvalue() >= -1e-9);
        prop_assert!((est.rho.trace() - 1.0).abs() <= 1e-10);
        prop_assert!(est.cost <= mle_cost(&seed, &rec, &ops(), &rot) + 1e-12);
    }

    #[test]
    fn mle_agrees_from_different_seeds(t in cholesky(), noise in prop::collection::vec(-1.0f64..1.0, 9)) {
        let rho = DensityMatrix3::from_cholesky_params(&t);
        let rot = tomography_rotations();
        let clean = expected_values(&rho, &ops(), &rot);
        let values: [f64; 9] = std::array::from_fn(|k| clean[k] + 5.0 * noise[k]);
        let rec = TomographyRecord::new(values, [5.0; 9]).unwrap();
        let opts = MleOptions::default();
        let a = qutrit::reconstruction::mle_estimate(&rec, &ops(), &rot, &DensityMatrix3::maximally_mixed(), &opts).unwrap();
        let b = reconstruct(&rec, &ops(), &rot, &opts).unwrap();
        // the likelihood is convex in ρ, so distinct starts meet
        prop_assert!((a.cost - b.cost).abs() <= 1e-6 * b.cost.max(1.0), "{} vs {}", a.cost, b.cost);
        prop_assert!(a.rho.trace_distance(&b.rho) < 1e-3);
    }

    #[test]
    fn readout_is_linear_in_populations(p in simplex()) {
        let params = DeviceParams::reference();
        let spec = dispersive_spectrum(&params).unwrap();
        let s = short_readout();
        let basis: Vec<ReadoutTrace> = (0..3)
            .map(|n| {
                let mut e = [0.0; 3];
                e[n] = 1.0;
                simulate_readout(&params, &spec, &s, e).unwrap()
            })
            .collect();
        let mixed = simulate_readout(&params, &spec, &s, p).unwrap();
        let combined = ReadoutTrace::combine(&[&basis[0], &basis[1], &basis[2]], &p);
        let scale = basis.iter().flat_map(|t| t.i_quad.iter().chain(&t.q_quad)).fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..mixed.len() {
            prop_assert!((mixed.i_quad[k] - combined.i_quad[k]).abs() <= 1e-8 * scale);
            prop_assert!((mixed.q_quad[k] - combined.q_quad[k]).abs() <= 1e-8 * scale);
            let total: f64 = mixed.populations[k].iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(mixed.populations[k].iter().all(|v| *v >= -1e-9));
        }
    }

    #[test]
    fn ols_recovers_noiseless_mixtures(p in simplex()) {
        let params = DeviceParams::reference();
        let spec = dispersive_spectrum(&params).unwrap();
        let s = short_readout();
        let refs: [ReadoutTrace; 3] = std::array::from_fn(|n| {
            let mut e = [0.0; 3];
            e[n] = 1.0;
            simulate_readout(&params, &spec, &s, e).unwrap()
        });
        let trace = ReadoutTrace::combine(&[&refs[0], &refs[1], &refs[2]], &p);
        let est = ols_populations(&trace, &refs, false).unwrap();
        for (got, want) in est.p.iter().zip(p) {
            prop_assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn dissipative_propagation_keeps_a_physical_state(
        a01 in -6.0f64..6.0,
        a12 in -6.0f64..6.0,
        axis in -3.2f64..3.2,
        delay in 0.0f64..300.0,
    ) {
        let shape = PulseShape { calibrate: false, step: 0.1, ..PulseShape::default() };
        let seq = [
            PulseSegment::new(Transition::T01, a01, &shape).with_axis_phase(axis),
            PulseSegment::new(Transition::T12, a12, &shape).with_delay(delay),
        ];
        let rho = propagate(&DeviceParams::reference(), &DensityMatrix3::ground(), &seq, true).unwrap();
        prop_assert!((rho.trace() - 1.0).abs() < 1e-10);
        prop_assert!(rho.min_eigenvalue() > -1e-10);
        prop_assert!(rho.purity() <= 1.0 + 1e-10);
    }
}
