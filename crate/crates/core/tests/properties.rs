use averaged_lorentz::averaging::{
    boost_from_rest, global_moments, sample_ensemble, AveragedConnection, EnsembleSpec,
};
use averaged_lorentz::diagnostics::{bar_metric, diameter, fit_power_law, shell_defect, MeanVelocity};
use averaged_lorentz::geometry::{lorentz_coeffs, ConnectionField, FieldConfiguration, LorentzConnection, Metric, Potential};
use averaged_lorentz::io::{read_ensemble, write_ensemble};
use averaged_lorentz::reduce::chunked_reduce;
use averaged_lorentz::solver::integrate;
use proptest::prelude::*;

fn crossed(e: f64, b: f64) -> FieldConfiguration {
    FieldConfiguration::inertial(4, Potential::Crossed { electric: e, magnetic: b }).unwrap()
}

fn unit(w: [f64; 3]) -> Vec<f64> {
    let s = w.iter().map(|v| v * v).sum::<f64>();
    vec![(1.0 + s).sqrt(), w[0], w[1], w[2]]
}

fn spatial() -> impl Strategy<Value = [f64; 3]> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

fn bunch(seed: u64, spread: f64, gamma: f64) -> averaged_lorentz::averaging::Ensemble {
    let metric = Metric::minkowski();
    sample_ensemble(
        &metric,
        &EnsembleSpec {
            count: 64,
            mean_velocity: metric.boosted_unit(gamma, 1),
            spread,
            position_width: 0.01,
            center: vec![0.0; 4],
            seed,
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lorentz_flow_stays_on_the_shell(e in -0.5..0.5f64, b in -2.0..2.0f64, w in spatial()) {
        let conn = LorentzConnection::new(crossed(e, b));
        let traj = integrate(&conn, &[0.0; 4], &unit(w), 1.0, 1e-3).unwrap();
        prop_assert!(traj.norm_drift(&Metric::minkowski()) < 1e-9);
    }

    #[test]
    fn closed_form_acceleration_matches_contraction(e in -1.0..1.0f64, b in -2.0..2.0f64, w in spatial(),
                                                     x in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]) {
        let field = crossed(e, b);
        let xs = [0.3, x[0], x[1], x[2]];
        let y = unit(w);
        let direct = LorentzConnection::new(field.clone()).acceleration(&xs, &y).unwrap();
        let contracted = lorentz_coeffs(&field, &xs, &y).unwrap().contract(&y, &y);
        let scale = direct.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (a, c) in direct.iter().zip(&contracted) {
            prop_assert!((a + c).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn averaged_coefficients_are_symmetric_and_velocity_free(seed in 0u64..1000, spread in 0.0..0.3f64,
                                                               gamma in 1.0..50.0f64, w in spatial()) {
        let ens = bunch(seed, spread, gamma);
        let conn = AveragedConnection::constant(crossed(0.2, 1.0), global_moments(&ens).unwrap());
        let x = [0.0, 0.1, -0.2, 0.3];
        let a = conn.coeffs(&x, &unit(w)).unwrap();
        let b = conn.coeffs(&x, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        prop_assert_eq!(a.lower_asymmetry(), 0.0);
        prop_assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn bar_metric_is_positive_with_unit_observer(w in spatial(), v in spatial()) {
        let metric = Metric::minkowski();
        let u = unit(w);
        let bar = bar_metric(&metric, &MeanVelocity(u.clone())).unwrap();
        prop_assert!(bar.eigenvalues().iter().all(|e| *e > 0.0));
        prop_assert!((bar.inner(&u, &u) - 1.0 - 3.0 * shell_defect(&metric, &u)).abs() < 1e-12);
        let z = unit(v);
        prop_assert!(bar.norm(&z) > 0.0);
    }

    #[test]
    fn rest_frame_boost_preserves_the_shell(w in spatial(), v in [-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64]) {
        let metric = Metric::minkowski();
        let y = boost_from_rest(&unit(w), &unit(v));
        prop_assert!(shell_defect(&metric, &y).abs() < 1e-12);
    }

    #[test]
    fn diameter_ignores_particle_order(seed in 0u64..1000, spread in 0.001..0.2f64) {
        let metric = Metric::minkowski();
        let mut ens = bunch(seed, spread, 10.0);
        let u = MeanVelocity(metric.boosted_unit(10.0, 1));
        let bar = bar_metric(&metric, &u).unwrap();
        let before = diameter(&ens, &bar).value();
        ens.particles.reverse();
        prop_assert_eq!(before, diameter(&ens, &bar).value());
    }

    #[test]
    fn ensemble_csv_round_trip_is_lossless(seed in 0u64..1000, spread in 0.0..0.5f64, gamma in 1.0..1e3f64) {
        let ens = bunch(seed, spread, gamma);
        let mut buf = Vec::new();
        write_ensemble(&ens, &mut buf).unwrap();
        let back = read_ensemble(buf.as_slice()).unwrap();
        prop_assert_eq!(ens.particles, back.particles);
    }

    #[test]
    fn chunked_sum_does_not_depend_on_pool_size(xs in prop::collection::vec(-1e6..1e6f64, 0..2000)) {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| chunked_reduce(xs.len(), |r| xs[r].iter().sum::<f64>(), |a, b| a + b))
        };
        let one = run(1).map(f64::to_bits);
        prop_assert_eq!(one, run(4).map(f64::to_bits));
        prop_assert_eq!(one, run(8).map(f64::to_bits));
    }

    #[test]
    fn fitter_recovers_planted_exponents(p in 0.01..100.0f64, ea in -3.0..3.0f64, ee in -3.0..3.0f64) {
        let mut rows = Vec::new();
        for a in [1e-3f64, 1e-2, 1e-1, 1.0] {
            for e in [1.0f64, 10.0, 100.0] {
                rows.push((vec![a, e], p * a.powf(ea) * e.powf(ee)));
            }
        }
        let fit = fit_power_law(&["alpha", "energy"], &rows).unwrap();
        prop_assert!((fit.exponents[0] - ea).abs() < 1e-9);
        prop_assert!((fit.exponents[1] - ee).abs() < 1e-9);
        prop_assert!((fit.prefactor / p - 1.0).abs() < 1e-9);
    }
}
