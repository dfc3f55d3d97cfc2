//! Comparison apparatus for the Lorentz and averaged flows: the unit mean
//! velocity `U`, the Riemannian metric `η̄ = −η + 2 U♭ ⊗ U♭`, distribution
//! diameters, operator norms, the θ² diagnostics and log-log power-law fits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{boost_from_rest, boost_to_rest, Ensemble, MomentSet};
use crate::error::{Error, Result};
use crate::geometry::Metric;
use crate::tensor::{spatial_norm_sq, Mat};

/// Exact pairwise diameter scan is used up to this many particles.
pub const EXACT_DIAMETER_LIMIT: usize = 4096;

/// Either a unit timelike vector or the zero vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanVelocity(pub Vec<f64>);

impl MeanVelocity {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Gamma factor of the frame relative to the laboratory, `U⁰`.
    pub fn gamma(&self) -> f64 {
        self.0[0]
    }
}

/// Normalized first moment, or zero when the mean is not timelike.
pub fn mean_velocity(metric: &Metric, moments: &MomentSet) -> MeanVelocity {
    let n = metric.norm_sq(&moments.m1);
    if n > 0.0 {
        let r = n.sqrt();
        MeanVelocity(moments.m1.iter().map(|v| v / r).collect())
    } else {
        MeanVelocity(vec![0.0; moments.m1.len()])
    }
}

/// Positive-definite metric built from a unit timelike observer.
#[derive(Clone, Debug)]
pub struct BarMetric {
    pub matrix: Mat,
    pub observer: Vec<f64>,
    signs: Vec<f64>,
}

pub fn bar_metric(metric: &Metric, u: &MeanVelocity) -> Result<BarMetric> {
    if u.is_zero() {
        return Err(Error::Domain(
            "bar metric is undefined for a vanishing mean velocity".into(),
        ));
    }
    if !(u.0[0] > 0.0 && metric.norm_sq(&u.0) > 0.0) {
        return Err(Error::Domain("bar metric needs a future timelike observer".into()));
    }
    let d = metric.dim();
    let ul = metric.lower(&u.0);
    let matrix = Mat::from_fn(d, |i, j| {
        let eta = if i == j { metric.sign(i) } else { 0.0 };
        -eta + 2.0 * ul[i] * ul[j]
    });
    Ok(BarMetric {
        matrix,
        observer: u.0.clone(),
        signs: (0..d).map(|i| metric.sign(i)).collect(),
    })
}

/// Compensated `η(a, b)` (error-free products and sums).
fn eta_dot(signs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for ((g, x), y) in signs.iter().zip(a).zip(b) {
        let xs = g * x;
        let p = xs * y;
        let e = xs.mul_add(*y, -p);
        let t = s + p;
        let z = t - s;
        c += (s - (t - z)) + (p - z) + e;
        s = t;
    }
    s + c
}

/// `η(u, u) − 1` in compensated arithmetic.
pub fn shell_defect(metric: &Metric, u: &[f64]) -> f64 {
    let signs: Vec<f64> = (0..metric.dim()).map(|i| metric.sign(i)).collect();
    eta_dot(&signs, u, u) - 1.0
}

impl BarMetric {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `η̄(a, b) = 2 η(a, U) η(b, U) − η(a, b)`, evaluated without forming
    /// the matrix to avoid `γ⁴` cancellation.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let u = &self.observer;
        2.0 * eta_dot(&self.signs, a, u) * eta_dot(&self.signs, b, u) - eta_dot(&self.signs, a, b)
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.orthonormal(v).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        self.norm(&diff)
    }

    /// Components in an η̄-orthonormal basis: the rest frame of the observer.
    pub fn orthonormal(&self, v: &[f64]) -> Vec<f64> {
        boost_to_rest(&self.observer, v)
    }

    fn to_rest_matrix(&self) -> Mat {
        let d = self.dim();
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                self.orthonormal(&e)
            })
            .collect();
        Mat::from_fn(d, |i, j| cols[j][i])
    }

    fn from_rest_matrix(&self) -> Mat {
        let d = self.dim();
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                boost_from_rest(&self.observer, &e)
            })
            .collect();
        Mat::from_fn(d, |i, j| cols[j][i])
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let e = nalgebra::SymmetricEigen::new(self.matrix.to_nalgebra());
        let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Diameter of a velocity support, exact or bracketed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diameter {
    Exact { value: f64 },
    Bracket { lower: f64, upper: f64 },
}

impl Diameter {
    /// Representative value: the exact value or the bracket's upper end.
    pub fn value(&self) -> f64 {
        match *self {
            Diameter::Exact { value } => value,
            Diameter::Bracket { upper, .. } => upper,
        }
    }
}

/// Largest η̄-distance between particle velocities.
pub fn diameter(ensemble: &Ensemble, bar: &BarMetric) -> Diameter {
    let pts: Vec<Vec<f64>> = ensemble.particles.iter().map(|p| bar.orthonormal(&p.y)).collect();
    diameter_of_points(&pts)
}

/// Same as [`diameter`] on points already in orthonormal coordinates.
pub fn diameter_of_points(pts: &[Vec<f64>]) -> Diameter {
    let n = pts.len();
    if n <= 1 {
        return Diameter::Exact { value: 0.0 };
    }
    if n <= EXACT_DIAMETER_LIMIT {
        // max is order-independent, so the parallel scan is deterministic
        let best = (0..n)
            .into_par_iter()
            .map(|a| {
                let mut m = 0.0f64;
                for b in (a + 1)..n {
                    let s: f64 = pts[a].iter().zip(&pts[b]).map(|(p, q)| (p - q) * (p - q)).sum();
                    m = m.max(s);
                }
                m
            })
            .reduce(|| 0.0, f64::max);
        Diameter::Exact { value: best.sqrt() }
    } else {
        let d = pts[0].len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in pts {
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let extents: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
        Diameter::Bracket {
            lower: extents.iter().fold(0.0, |m: f64, v| m.max(*v)),
            upper: extents.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// `sup ‖A y‖_η̄ / ‖y‖_η̄` for the mixed tensor `A = F^i_j`.
pub fn operator_norm(mixed: &Mat, bar: &BarMetric) -> f64 {
    let m = bar.to_rest_matrix().mul(mixed).mul(&bar.from_rest_matrix());
    m.to_nalgebra()
        .singular_values()
        .iter()
        .fold(0.0f64, |a, b| a.max(*b))
}

/// θ diagnostics at one laboratory time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaSample {
    pub t_lab: f64,
    pub theta2: f64,
    pub theta_bar2: f64,
    pub gamma_bar: f64,
}

impl ThetaSample {
    /// `θ² = |y⃗|² − |U⃗|²`, `θ̄² = |U⃗|² − |ỹ⃗|²`, lab-frame spatial norms.
    pub fn new(t_lab: f64, y: &[f64], y_avg: &[f64], u: &MeanVelocity) -> Self {
        let uu = spatial_norm_sq(&u.0);
        ThetaSample {
            t_lab,
            theta2: spatial_norm_sq(y) - uu,
            theta_bar2: uu - spatial_norm_sq(y_avg),
            gamma_bar: u.gamma(),
        }
    }

    pub fn gap(&self) -> f64 {
        (self.theta2 - self.theta_bar2).abs()
    }
}

/// Window suprema of the θ diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaSummary {
    pub theta2: f64,
    pub theta_bar2: f64,
    pub hypothesis4_gap: f64,
}

pub fn theta_summary(samples: &[ThetaSample]) -> ThetaSummary {
    let sup = |f: &dyn Fn(&ThetaSample) -> f64| samples.iter().map(f).fold(0.0f64, f64::max);
    ThetaSummary {
        theta2: sup(&|s| s.theta2.abs()),
        theta_bar2: sup(&|s| s.theta_bar2.abs()),
        hypothesis4_gap: sup(&|s| s.gap()),
    }
}

/// One row of a comparison report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub t_lab: f64,
    pub dx: f64,
    pub dy: f64,
    pub theta2: f64,
    pub theta_bar2: f64,
    pub gamma_bar: f64,
    pub alpha: f64,
    pub energy: f64,
}

/// Least-squares fit of `log v = log P + Σ e_k log z_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub variables: Vec<String>,
    pub exponents: Vec<f64>,
    pub stderr: Vec<f64>,
    pub prefactor: f64,
    /// Root-mean-square residual in natural-log units.
    pub rms_residual: f64,
    pub points: usize,
}

impl PowerLawFit {
    pub fn exponent(&self, name: &str) -> Option<f64> {
        self.variables.iter().position(|v| v == name).map(|i| self.exponents[i])
    }

    /// `{variable, exponent, stderr, prefactor}` rows.
    pub fn rows(&self) -> Vec<FitRow> {
        self.variables
            .iter()
            .enumerate()
            .map(|(i, v)| FitRow {
                variable: v.clone(),
                exponent: self.exponents[i],
                stderr: self.stderr[i],
                prefactor: self.prefactor,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub variable: String,
    pub exponent: f64,
    pub stderr: f64,
    pub prefactor: f64,
}

/// Multivariate power-law fit. Rows with a non-positive value or variable
/// are skipped.
pub fn fit_power_law(variables: &[&str], rows: &[(Vec<f64>, f64)]) -> Result<PowerLawFit> {
    let p = variables.len();
    let usable: Vec<&(Vec<f64>, f64)> = rows
        .iter()
        .filter(|(z, v)| *v > 0.0 && v.is_finite() && z.iter().all(|x| *x > 0.0 && x.is_finite()))
        .collect();
    let n = usable.len();
    if n < p + 1 {
        return Err(Error::Fit(format!(
            "need at least {} positive points, have {n}",
            p + 1
        )));
    }
    let x = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { usable[r].0[c - 1].ln() });
    let yv = DVector::from_fn(n, |r, _| usable[r].1.ln());
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Fit("variables do not vary independently".into()))?;
    let beta = &xtx_inv * x.transpose() * &yv;
    let resid = &yv - &x * &beta;
    let rss = resid.norm_squared();
    let dof = n.saturating_sub(p + 1);
    let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    Ok(PowerLawFit {
        variables: variables.iter().map(|s| s.to_string()).collect(),
        exponents: (1..=p).map(|i| beta[i]).collect(),
        stderr: (1..=p).map(|i| (sigma2 * xtx_inv[(i, i)]).max(0.0).sqrt()).collect(),
        prefactor: beta[0].exp(),
        rms_residual: (rss / n as f64).sqrt(),
        points: n,
    })
}

/// Geometric-mean prefactor of `v / Π z_k^{e_k}` for fixed exponents.
pub fn model_prefactor(exponents: &[f64], rows: &[(Vec<f64>, f64)]) -> Option<f64> {
    let logs: Vec<f64> = rows
        .iter()
        .filter(|(z, v)| *v > 0.0 && z.iter().all(|x| *x > 0.0))
        .map(|(z, v)| v.ln() - z.iter().zip(exponents).map(|(x, e)| e * x.ln()).sum::<f64>())
        .collect();
    (!logs.is_empty()).then(|| (logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

/// Fits of the trajectory and velocity gaps against `α`, `E` and `t_lab`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundFit {
    pub position: PowerLawFit,
    pub velocity: PowerLawFit,
    /// `P` in `Δx ≈ P α² E⁻² t²`.
    pub position_prefactor: f64,
    /// `Q` in `Δy ≈ Q α² E⁻² t`.
    pub velocity_prefactor: f64,
}

pub const GAP_FLOOR: f64 = 1e-13;

/// Fits the gap models over all records whose gaps clear `GAP_FLOOR`.
pub fn bound_evaluation(records: &[ComparisonRecord]) -> Result<BoundFit> {
    let max_dx = records.iter().map(|r| r.dx).fold(0.0f64, f64::max);
    if max_dx <= GAP_FLOOR {
        return Err(Error::AtFloor { floor: max_dx });
    }
    let above: Vec<&ComparisonRecord> = records
        .iter()
        .filter(|r| r.dx > GAP_FLOOR && r.dy > GAP_FLOOR && r.t_lab > 0.0)
        .collect();
    let decades = |f: &dyn Fn(&ComparisonRecord) -> f64| {
        let (lo, hi) = above
            .iter()
            .map(|r| f(r))
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
        if lo > 0.0 {
            (hi / lo).log10()
        } else {
            0.0
        }
    };
    let span = decades(&|r| r.alpha)
        .max(decades(&|r| r.energy))
        .max(decades(&|r| r.t_lab));
    if span < 3.0 - 1e-9 {
        return Err(Error::Fit(format!(
            "records span only {span:.2} decades; at least 3 are needed in one variable"
        )));
    }
    let vars = ["alpha", "energy", "t_lab"];
    let pos_rows: Vec<(Vec<f64>, f64)> = above
        .iter()
        .map(|r| (vec![r.alpha, r.energy, r.t_lab], r.dx))
        .collect();
    let vel_rows: Vec<(Vec<f64>, f64)> = above
        .iter()
        .map(|r| (vec![r.alpha, r.energy, r.t_lab], r.dy))
        .collect();
    Ok(BoundFit {
        position: fit_power_law(&vars, &pos_rows)?,
        velocity: fit_power_law(&vars, &vel_rows)?,
        position_prefactor: model_prefactor(&[2.0, -2.0, 2.0], &pos_rows).unwrap_or(f64::NAN),
        velocity_prefactor: model_prefactor(&[2.0, -2.0, 1.0], &vel_rows).unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{global_moments, sample_ensemble, EnsembleSpec, Particle};
    use crate::geometry::{FieldConfiguration, Potential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, max_gamma: f64) -> Vec<f64> {
        let m = Metric::minkowski();
        let gamma = 1.0 + rng.random::<f64>() * (max_gamma - 1.0);
        let mut dir: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= n);
        let p = (gamma * gamma - 1.0).sqrt();
        let mut u = vec![0.0, p * dir[0], p * dir[1], p * dir[2]];
        m.project_to_shell(&mut u);
        u
    }

    #[test]
    fn delta_mean_is_the_particle() {
        let m = Metric::minkowski();
        let y = m.boosted_unit(3.0, 2);
        let u = mean_velocity(&m, &MomentSet::delta(&y));
        assert!(u.0.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs().max(1.0)));
    }

    #[test]
    fn spacelike_mean_gives_zero_observer() {
        // two light-like-ish particles in opposite directions: mean is spacelike
        let m = Metric::minkowski();
        let big = 1e4f64;
        let a = vec![(1.0 + big * big).sqrt(), big, 0.0, 0.0];
        let b = vec![(1.0 + big * big).sqrt(), 0.0, big, 0.0];
        let mut mo = MomentSet::delta(&a);
        mo.m1 = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
        // fabricate a mean outside the cone to exercise the zero branch
        mo.m1[0] = 0.5 * mo.m1[1];
        let u = mean_velocity(&m, &mo);
        assert!(u.is_zero());
        assert!(bar_metric(&m, &u).is_err());
    }

    #[test]
    fn normalized_mean_of_a_bunch() {
        let m = Metric::minkowski();
        let spec = EnsembleSpec {
            count: 500,
            mean_velocity: m.boosted_unit(30.0, 1),
            spread: 0.05,
            position_width: 0.0,
            center: vec![0.0; 4],
            seed: 5,
        };
        let e = sample_ensemble(&m, &spec).unwrap();
        let u = mean_velocity(&m, &global_moments(&e).unwrap());
        assert!((m.norm_sq(&u.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rest_observer_gives_identity() {
        let m = Metric::minkowski();
        let bar = bar_metric(&m, &MeanVelocity(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(bar.matrix, Mat::identity(4));
        let a = [0.3, 1.0, -2.0, 0.5];
        let b = [1.0, 0.0, 0.5, 0.5];
        let euclid = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!((bar.distance(&a, &b) - euclid).abs() < 1e-15);
    }

    #[test]
    fn bar_metric_identities_for_random_boosts() {
        let m = Metric::minkowski();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u = random_unit(&mut rng, 1e3);
            let bar = bar_metric(&m, &MeanVelocity(u.clone())).unwrap();
            // the stored vector is itself only on the shell to ~γ² ulps
            let shell = eta_dot(&[1.0, -1.0, -1.0, -1.0], &u, &u) - 1.0;
            let got = bar.inner(&u, &u) - 1.0;
            assert!((got - 3.0 * shell).abs() <= 1e-12, "{got:e} vs {shell:e}");
            assert!(bar.eigenvalues()[0] > 0.0);
            let y: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let expanded = 2.0 * m.dot(&y, &u).powi(2) - m.norm_sq(&y);
            assert!((bar.inner(&y, &y) - expanded).abs() <= 1e-12 * expanded.abs().max(1.0));
            assert!((bar.norm(&y).powi(2) - expanded).abs() <= 1e-12 * expanded.abs().max(1.0) * u[0] * u[0]);
        }
    }

    #[test]
    fn diameter_edge_cases() {
        let m = Metric::minkowski();
        let bar = bar_metric(&m, &MeanVelocity(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        let one = Ensemble::delta(vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(diameter(&one, &bar), Diameter::Exact { value: 0.0 });
        let y1 = vec![2f64.sqrt(), 1.0, 0.0, 0.0];
        let y2 = vec![1.0, 0.0, 0.0, 0.0];
        let two = Ensemble::new(
            4,
            vec![
                Particle { x: vec![0.0; 4], y: y1.clone(), w: 1.0 },
                Particle { x: vec![0.0; 4], y: y2.clone(), w: 1.0 },
            ],
        )
        .unwrap();
        let d = diameter(&two, &bar).value();
        assert!((d - bar.distance(&y1, &y2)).abs() < 1e-14);
    }

    #[test]
    fn large_ensembles_are_bracketed() {
        let pts: Vec<Vec<f64>> = (0..5000).map(|i| vec![(i as f64 * 0.1).sin(), (i as f64 * 0.07).cos()]).collect();
        match diameter_of_points(&pts) {
            Diameter::Bracket { lower, upper } => {
                assert!(lower <= upper);
                assert!(lower >= 1.9 && upper <= 2.0 * 2f64.sqrt() + 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn operator_norm_of_uniform_magnetic_field() {
        let m = Metric::minkowski();
        let bar = bar_metric(&m, &MeanVelocity(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        let b = 2.5;
        let f = FieldConfiguration::inertial(4, Potential::UniformMagnetic { strength: b, a: 1, b: 2 }).unwrap();
        let fm = f.field_mixed(&[0.0; 4]);
        assert!((operator_norm(&fm, &bar) - b).abs() < 1e-10);
        assert!((operator_norm(&fm.scaled(-3.0), &bar) - 3.0 * b).abs() < 1e-10);
        assert_eq!(operator_norm(&Mat::zeros(4), &bar), 0.0);
    }

    #[test]
    fn operator_norm_matches_sampled_ratio() {
        let m = Metric::minkowski();
        let u = boost_from_rest(&m.boosted_unit(4.0, 1), &[1.0, 0.0, 0.0, 0.0]);
        let bar = bar_metric(&m, &MeanVelocity(u)).unwrap();
        let f = FieldConfiguration::inertial(4, Potential::Crossed { electric: 0.5, magnetic: 1.2 }).unwrap();
        let fm = f.field_mixed(&[0.0; 4]);
        let norm = operator_norm(&fm, &bar);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut best = 0.0f64;
        for _ in 0..20_000 {
            let y: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            best = best.max(bar.norm(&fm.mul_vec(&y)) / bar.norm(&y));
        }
        assert!(best <= norm * (1.0 + 1e-12));
        assert!(best >= 0.9 * norm);
    }

    #[test]
    fn fitter_recovers_planted_model() {
        let mut rows = Vec::new();
        for a in [1e-3, 1e-2, 1e-1] {
            for e in [10.0, 100.0, 1000.0] {
                for t in [0.01, 0.1, 1.0, 10.0] {
                    rows.push((vec![a, e, t], 7.0 * a * a / (e * e) * t * t));
                }
            }
        }
        let fit = fit_power_law(&["alpha", "energy", "t_lab"], &rows).unwrap();
        for (got, want) in fit.exponents.iter().zip([2.0, -2.0, 2.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!((fit.prefactor - 7.0).abs() < 1e-9);
    }

    #[test]
    fn bound_evaluation_refuses_floor() {
        let r = ComparisonRecord {
            t_lab: 1.0,
            dx: 1e-14,
            dy: 1e-14,
            theta2: 0.0,
            theta_bar2: 0.0,
            gamma_bar: 1.0,
            alpha: 0.0,
            energy: 100.0,
        };
        assert!(matches!(bound_evaluation(&[r; 5]), Err(Error::AtFloor { .. })));
    }
}
