//! The invariant suite behind the `validate` subcommand: closed-form
//! oracles, structural identities and a fault-injection probe.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::averaging::{boost_from_rest, global_moments, normal_frame, sample_ensemble, AveragedConnection, EnsembleSpec};
use crate::config::ScenarioConfig;
use crate::diagnostics::{bar_metric, fit_power_law, operator_norm, shell_defect, MeanVelocity};
use crate::error::Result;
use crate::experiments::{compare_with, RunContext};
use crate::geometry::{lorentz_coeffs, Chart, ConnectionField, FieldConfiguration, LorentzConnection, Metric, Potential};
use crate::io;
use crate::kinetic::{lab_trajectory, DistributionFunction, DomainBox, Profile};
use crate::solver::{convergence_order, integrate};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Check {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            tolerance: f64::NAN,
            detail: err.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub seed: u64,
    pub checks: Vec<Check>,
}

fn inertial(p: Potential) -> FieldConfiguration {
    FieldConfiguration::inertial(4, p).expect("catalog potentials are valid in 4D")
}

/// `(τ, x, y)` of the closed-form orbit in `F_12 = k`, starting at the
/// origin with velocity `γv` along x¹.
pub fn cyclotron_exact(k: f64, gamma: f64, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let p = (gamma * gamma - 1.0).sqrt();
    let (s, c) = (k * tau).sin_cos();
    (
        vec![gamma * tau, p / k * s, p / k * (c - 1.0), 0.0],
        vec![gamma, p * c, -p * s, 0.0],
    )
}

/// Hyperbolic motion from rest in `F_10 = k`.
pub fn hyperbolic_exact(k: f64, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let (sh, ch) = ((k * tau).sinh(), (k * tau).cosh());
    (vec![sh / k, (ch - 1.0) / k, 0.0, 0.0], vec![ch, sh, 0.0, 0.0])
}

fn oracle_error(
    conn: &dyn ConnectionField,
    x0: &[f64],
    y0: &[f64],
    duration: f64,
    h: f64,
    exact: &dyn Fn(f64) -> (Vec<f64>, Vec<f64>),
) -> Result<f64> {
    let traj = integrate(conn, x0, y0, duration, h)?;
    Ok(traj
        .samples
        .iter()
        .map(|s| {
            let (x, _) = exact(s.t);
            s.x.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .fold(0.0, f64::max))
}

/// Largest position error of the cyclotron orbit over one period at `h`.
pub fn cyclotron_error(h: f64) -> Result<f64> {
    let (k, gamma) = (1.0, 2.0);
    let conn = LorentzConnection::new(inertial(Potential::UniformMagnetic { strength: k, a: 1, b: 2 }));
    let (x0, y0) = cyclotron_exact(k, gamma, 0.0);
    oracle_error(&conn, &x0, &y0, 2.0 * PI / k, h, &|t| cyclotron_exact(k, gamma, t))
}

/// Largest position error of hyperbolic motion over unit proper time.
pub fn hyperbolic_error(h: f64) -> Result<f64> {
    let k = 1.0;
    let conn = LorentzConnection::new(inertial(Potential::UniformElectric { strength: k, axis: 1 }));
    let (x0, y0) = hyperbolic_exact(k, 0.0);
    oracle_error(&conn, &x0, &y0, 1.0, h, &|t| hyperbolic_exact(k, t))
}

/// Step-halving order for the two oracles.
pub fn oracle_orders() -> Result<(Option<f64>, Option<f64>)> {
    let b = LorentzConnection::new(inertial(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 }));
    let (x0, y0) = cyclotron_exact(1.0, 2.0, 0.0);
    let cyc = convergence_order(&b, &x0, &y0, 2.0 * PI, 2.0 * PI / 128.0)?.order;
    let e = LorentzConnection::new(inertial(Potential::UniformElectric { strength: 1.0, axis: 1 }));
    let (x0, y0) = hyperbolic_exact(1.0, 0.0);
    let hyp = convergence_order(&e, &x0, &y0, 1.0, 0.05)?.order;
    Ok((cyc, hyp))
}

fn random_potential(rng: &mut ChaCha8Rng) -> Potential {
    let mut r = || 2.0 * rng.random::<f64>() - 1.0;
    match (r().abs() * 5.0) as usize {
        0 => Potential::UniformElectric { strength: r(), axis: 1 },
        1 => Potential::UniformMagnetic { strength: r(), a: 1, b: 2 },
        2 => Potential::Crossed { electric: r(), magnetic: r() },
        3 => Potential::PlaneWave {
            amplitude: r(),
            wavenumber: 1.0 + r().abs(),
            polarization: 2,
            direction: 3,
        },
        _ => Potential::Polynomial { a: r(), b: r() },
    }
}

/// Largest relative difference between the contracted Lorentz connection
/// and `−ηΓ(y, y) − √n F^i_m y^m` over random events, velocities, fields
/// and charts.
pub fn contraction_equivalence(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let metric = Metric::minkowski();
    let mut worst = 0.0f64;
    for n in 0..samples {
        let chart = if n % 2 == 0 { Chart::Inertial } else { Chart::Cylindrical };
        let field = FieldConfiguration::new(metric.clone(), chart, random_potential(&mut rng))?;
        let xi: Vec<f64> = (0..4).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let v: Vec<f64> = (0..3).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let scale = 0.5 + 2.0 * rng.random::<f64>();
        let v2: f64 = v.iter().map(|c| c * c).sum();
        let mut yi = vec![scale * (1.0 + v2).sqrt()];
        yi.extend(v.iter().map(|c| scale * c));
        let x = chart.from_inertial(&xi);
        let y = chart.pull_vector(&x, &yi);
        let contracted: Vec<f64> = lorentz_coeffs(&field, &x, &y)?.contract(&y, &y).iter().map(|v| -v).collect();
        let closed = LorentzConnection::new(field.clone()).acceleration(&x, &y)?;
        let root = chart.metric_at(&metric, &x).bilinear(&y, &y).sqrt();
        let lc = chart.christoffel(&x).contract(&y, &y);
        let fy = field.field_mixed(&x).mul_vec(&y);
        let want: Vec<f64> = (0..4).map(|i| -lc[i] - root * fy[i]).collect();
        let size = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for got in [&contracted, &closed] {
            let diff = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / size);
        }
    }
    Ok(worst)
}

/// The potentials exercised by the norm-conservation check.
pub fn catalog() -> Vec<(&'static str, Potential)> {
    vec![
        ("zero", Potential::Zero),
        ("uniform_electric", Potential::UniformElectric { strength: 0.3, axis: 1 }),
        ("uniform_magnetic", Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 }),
        ("crossed", Potential::Crossed { electric: 0.5, magnetic: 1.0 }),
        (
            "plane_wave",
            Potential::PlaneWave {
                amplitude: 0.5,
                wavenumber: 2.0,
                polarization: 2,
                direction: 3,
            },
        ),
        ("polynomial", Potential::Polynomial { a: 0.1, b: 0.2 }),
    ]
}

/// Largest `|η(y, y) − 1|` along a Lorentz autoparallel of proper length
/// `duration` in the catalog field `p`.
pub fn norm_drift(p: Potential, duration: f64, h: f64) -> Result<f64> {
    let metric = Metric::minkowski();
    let conn = LorentzConnection::new(inertial(p));
    let y0 = vec![2.0, 1.0, 1.0, 1.0];
    let traj = integrate(&conn, &[0.0, 0.1, 0.2, 0.3], &y0, duration, h)?;
    Ok(traj
        .samples
        .iter()
        .map(|s| (metric.norm_sq(&s.y) - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Small comparison scenario: uniform `B = 1`, `E = 100`, zero spread.
pub fn delta_scenario(seed: u64) -> ScenarioConfig {
    let text = format!(
        r#"
        [potential]
        name = "uniform_magnetic"
        params = {{ strength = 1.0 }}
        [ensemble]
        count = 16
        energy = 100.0
        spread = 0.0
        seed = {seed}
        [integrator]
        h = 0.01
        duration = 1.0
        [experiment]
        kind = "compare"
        "#
    );
    ScenarioConfig::from_toml(&text).expect("built-in scenario is valid")
}

/// Largest position gap of a zero-spread comparison.
pub fn delta_gap(seed: u64, flip_third_moment: bool) -> Result<f64> {
    let cfg = delta_scenario(seed);
    let (_, summary) = compare_with(&cfg, 0.0, cfg.ensemble.energy, flip_third_moment)?;
    Ok(summary.max_dx)
}

/// Structure of the averaged connection for a bunch in a nonuniform
/// field: `(y-independent bitwise, lower-index asymmetry, normal-frame
/// residual at x₀)`.
pub fn averaged_structure(seed: u64) -> Result<(bool, f64, f64)> {
    let metric = Metric::minkowski();
    let e = sample_ensemble(
        &metric,
        &EnsembleSpec {
            count: 200,
            mean_velocity: metric.boosted_unit(4.0, 1),
            spread: 0.05,
            position_width: 0.1,
            center: vec![0.0; 4],
            seed,
        },
    )?;
    let field = inertial(Potential::Polynomial { a: 0.3, b: 0.7 });
    let avg = AveragedConnection::constant(field, global_moments(&e)?);
    let x0 = [0.2, 0.4, -0.3, 0.1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = avg.coeffs(&x0, &[1.0, 0.0, 0.0, 0.0])?;
    let mut independent = true;
    for _ in 0..20 {
        let y: Vec<f64> = (0..4).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        independent &= avg.coeffs(&x0, &y)? == reference;
    }
    let frame = normal_frame(&avg, &x0)?;
    let flat = frame.transformed_coeffs(&avg, &x0)?.max_abs();
    Ok((independent, reference.lower_asymmetry(), flat))
}

/// Largest `|f(x(t), y(t), t) − f₀(x₀, y₀)|` along a Lorentz
/// characteristic.
pub fn liouville_drift() -> Result<f64> {
    let metric = Metric::minkowski();
    let field = inertial(Potential::Crossed { electric: 0.3, magnetic: 1.0 });
    let u = metric.boosted_unit(3.0, 1);
    let profile = Profile::new(vec![0.0; 4], 0.2, u.clone(), 0.1)?;
    let conn: Arc<dyn ConnectionField> = Arc::new(LorentzConnection::new(field));
    let f = DistributionFunction {
        profile: profile.clone(),
        conn: conn.clone(),
        dt: 0.01,
        domain: DomainBox {
            lo: vec![-10.0; 3],
            hi: vec![10.0; 3],
        },
    };
    let x0 = [0.0, 0.1, -0.1, 0.05];
    let y0 = boost_from_rest(&u, &[(1.0f64 + 0.05 * 0.05).sqrt(), 0.05, 0.0, 0.0]);
    let f0 = profile.value(&x0, &y0);
    let traj = lab_trajectory(conn.as_ref(), &x0, &y0, 1.0, 0.01)?;
    let mut worst = 0.0f64;
    for s in traj.samples.iter().step_by(10) {
        worst = worst.max((f.evaluate(&s.x, &s.y, s.t)? - f0).abs());
    }
    Ok(worst)
}

/// Random unit velocities with gamma log-uniform in `[1, gamma_max]`.
pub fn random_boosts(count: usize, gamma_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let gamma = gamma_max.powf(rng.random::<f64>());
            let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let phi = 2.0 * PI * rng.random::<f64>();
            let r = (1.0 - z * z).sqrt();
            let p = (gamma * gamma - 1.0).sqrt();
            vec![gamma, p * r * phi.cos(), p * r * phi.sin(), p * z]
        })
        .collect()
}

/// Random unit velocities whose components are multiples of 1/16 lying
/// exactly on the unit shell, gamma log-uniform in `[1, gamma_max]`.
pub fn exact_boosts(count: usize, gamma_max: f64, seed: u64) -> Vec<Vec<f64>> {
    const D: i64 = 16;
    let is_square = |m: i64| {
        let r = (m as f64).sqrt().round() as i64;
        (r - 1..=r + 1).find(|k| *k >= 0 && k * k == m)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let gamma = gamma_max.powf(rng.random::<f64>());
        let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
        let phi = 2.0 * PI * rng.random::<f64>();
        let r = (1.0 - z * z).sqrt();
        let p = (gamma * gamma - 1.0).sqrt() * D as f64;
        let a = (p * r * phi.cos()).round() as i64;
        let b = (p * r * phi.sin()).round() as i64;
        let c0 = (p * z).round() as i64;
        let base = D * D + a * a + b * b;
        let limit = (gamma_max * D as f64) as i64;
        let hit = (0..=limit).flat_map(|k| [c0 + k, c0 - k]).find_map(|c| {
            is_square(base + c * c).filter(|x| *x <= limit).map(|x| (x, c))
        });
        if let Some((x, c)) = hit {
            let s = 1.0 / D as f64;
            out.push(vec![x as f64 * s, a as f64 * s, b as f64 * s, c as f64 * s]);
        }
    }
    out
}

/// Per boost: `(smallest eigenvalue of η̄, η̄(U, U) − 1, shell defect of U)`.
pub fn bar_metric_identities(boosts: &[Vec<f64>]) -> Result<Vec<(f64, f64, f64)>> {
    let metric = Metric::minkowski();
    boosts
        .iter()
        .map(|u| {
            let bar = bar_metric(&metric, &MeanVelocity(u.clone()))?;
            let min_eig = bar.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            Ok((min_eig, bar.inner(u, u) - 1.0, shell_defect(&metric, u)))
        })
        .collect()
}

/// `|‖F‖_η̄ − |B||` for a uniform magnetic field seen by observers at rest
/// and boosted along the field.
pub fn magnetic_operator_norm_error() -> Result<f64> {
    let metric = Metric::minkowski();
    let b = 1.7;
    let fm = inertial(Potential::UniformMagnetic { strength: b, a: 1, b: 2 }).field_mixed(&[0.0; 4]);
    let mut worst = 0.0f64;
    for gamma in [1.0, 10.0, 1000.0] {
        let bar = bar_metric(&metric, &MeanVelocity(metric.boosted_unit(gamma, 3)))?;
        worst = worst.max((operator_norm(&fm, &bar) - b).abs());
    }
    Ok(worst)
}

/// Exponent error of the fitter on a planted `7 α² E⁻² t²`.
pub fn fitter_self_test() -> Result<f64> {
    let mut rows = Vec::new();
    for a in [1e-3, 1e-2, 1e-1] {
        for e in [10.0, 100.0, 1000.0] {
            for t in [0.1, 1.0, 10.0] {
                rows.push((vec![a, e, t], 7.0 * a * a / (e * e) * t * t));
            }
        }
    }
    let fit = fit_power_law(&["alpha", "energy", "t_lab"], &rows)?;
    Ok(fit
        .exponents
        .iter()
        .zip([2.0, -2.0, 2.0])
        .fold(0.0f64, |m, (g, w)| m.max((g - w).abs())))
}

fn check(name: &str, r: Result<Check>) -> Check {
    r.unwrap_or_else(|e| Check::failed(name, e))
}

/// Runs every check. `flip_third_moment` injects a sign fault into the
/// averaged connection used by the delta-consistency check.
pub fn run_validate(seed: u64, flip_third_moment: bool) -> ValidationReport {
    let mut checks = Vec::new();
    checks.push(check(
        "cyclotron_position",
        cyclotron_error(1e-3).map(|e| Check::at_most("cyclotron_position", e, 1e-8, "h = 1e-3, one period")),
    ));
    checks.push(check(
        "hyperbolic_position",
        hyperbolic_error(1e-3).map(|e| Check::at_most("hyperbolic_position", e, 1e-8, "h = 1e-3, unit proper time")),
    ));
    match oracle_orders() {
        Ok((cyc, hyp)) => {
            for (name, order) in [("cyclotron_order", cyc), ("hyperbolic_order", hyp)] {
                let err = order.map_or(f64::INFINITY, |o| (o - 4.0).abs());
                checks.push(Check::at_most(name, err, 0.2, format!("measured order {order:?}")));
            }
        }
        Err(e) => checks.push(Check::failed("oracle_orders", e)),
    }
    checks.push(check(
        "contraction_equivalence",
        contraction_equivalence(1000, seed)
            .map(|e| Check::at_most("contraction_equivalence", e, 1e-10, "1000 random samples, both charts")),
    ));
    for (name, p) in catalog() {
        let label = format!("norm_conservation_{name}");
        checks.push(check(
            &label,
            norm_drift(p, 10.0, 1e-3).map(|e| Check::at_most(&label, e, 1e-9, "T = 10, h = 1e-3")),
        ));
    }
    checks.push(check(
        "delta_consistency",
        delta_gap(seed, flip_third_moment).map(|e| {
            let note = if flip_third_moment { "third moment sign flipped" } else { "zero spread" };
            Check::at_most("delta_consistency", e, 1e-9, note)
        }),
    ));
    match averaged_structure(seed) {
        Ok((independent, asym, flat)) => {
            checks.push(Check {
                name: "averaged_velocity_independent".into(),
                passed: independent,
                value: if independent { 0.0 } else { 1.0 },
                tolerance: 0.0,
                detail: "bitwise over 20 velocities".into(),
            });
            checks.push(Check::at_most("averaged_symmetric", asym, 0.0, "lower-index asymmetry"));
            checks.push(Check::at_most("normal_frame_vanishes", flat, 1e-10, "coefficients at the origin"));
        }
        Err(e) => checks.push(Check::failed("averaged_structure", e)),
    }
    checks.push(check(
        "liouville_constancy",
        liouville_drift().map(|e| Check::at_most("liouville_constancy", e, 1e-8, "lab step 0.01 over unit time")),
    ));
    match bar_metric_identities(&random_boosts(100, 1e3, seed)) {
        Ok(rows) => {
            let min_eig = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            checks.push(Check {
                name: "bar_metric_positive".into(),
                passed: min_eig > 0.0,
                value: min_eig,
                tolerance: 0.0,
                detail: "smallest eigenvalue over 100 boosts".into(),
            });
            // the stored U is on the shell only to its own defect δ; η̄(U, U) = 1 + 3δ exactly
            let excess = rows.iter().map(|r| (r.1 - 3.0 * r.2).abs()).fold(0.0, f64::max);
            checks.push(Check::at_most(
                "bar_metric_unit_observer",
                excess,
                1e-12,
                "|η̄(U, U) − 1 − 3δ| with δ the shell defect of U",
            ));
        }
        Err(e) => checks.push(Check::failed("bar_metric", e)),
    }
    match bar_metric_identities(&exact_boosts(100, 1e3, seed)) {
        Ok(rows) => {
            let min_eig = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            let dev = rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
            checks.push(Check {
                name: "bar_metric_positive_exact".into(),
                passed: min_eig > 0.0,
                value: min_eig,
                tolerance: 0.0,
                detail: "smallest eigenvalue over 100 exactly representable boosts".into(),
            });
            checks.push(Check::at_most(
                "bar_metric_unit_observer_exact",
                dev,
                1e-12,
                "|η̄(U, U) − 1| for exactly representable unit U",
            ));
        }
        Err(e) => checks.push(Check::failed("bar_metric_exact", e)),
    }
    checks.push(check(
        "operator_norm_magnetic",
        magnetic_operator_norm_error().map(|e| Check::at_most("operator_norm_magnetic", e, 1e-10, "gamma 1, 10, 1000")),
    ));
    checks.push(check(
        "fitter_planted",
        fitter_self_test().map(|e| Check::at_most("fitter_planted", e, 1e-9, "7 α² E⁻² t²")),
    ));
    ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        seed,
        checks,
    }
}

pub fn write_validation(report: &ValidationReport, ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if ctx.json {
        let p = ctx.out.join("validation.json");
        io::write_json(report, io::create(&p)?)?;
        files.push(p);
    }
    if ctx.csv {
        let p = ctx.out.join("validation.csv");
        let mut w = csv::Writer::from_writer(io::create(&p)?);
        w.write_record(["name", "passed", "value", "tolerance", "detail"])?;
        for c in &report.checks {
            w.write_record([
                c.name.clone(),
                c.passed.to_string(),
                io::fmt(c.value),
                io::fmt(c.tolerance),
                c.detail.clone(),
            ])?;
        }
        w.flush()?;
        files.push(p);
    }
    Ok(files)
}
