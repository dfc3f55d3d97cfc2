//! Vlasov and averaged-Vlasov transport by characteristics, distribution
//! values along flows, cell-averaged velocity fields and the cold-fluid
//! residual.
//!
//! Ensemble flows that couple particles through their moments run in
//! laboratory time `t = x⁰`, so every particle sits on the same time slice
//! and moments are well defined at each stage:
//!
//! ```text
//! dx/dt = y / y⁰,    dy/dt = −Γ(x, y) y y / y⁰
//! ```

use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::{boost_to_rest, global_moments, AveragedConnection, Ensemble, MomentHistory, MomentSet, Particle};
use crate::diagnostics::{bar_metric, diameter_of_points, mean_velocity, BarMetric, MeanVelocity};
use crate::error::{Error, Result};
use crate::geometry::{ConnectionField, FieldConfiguration, LorentzConnection, Metric};
use crate::reduce::chunked_reduce;
use crate::solver::{flow, Sample, Trajectory};

/// Drift of `η(y, y)` above which transported particles are re-projected.
pub const REPROJECT_DRIFT: f64 = 1e-9;

/// Cells holding less than this fraction of the total weight are empty.
pub const EMPTY_CELL_FRACTION: f64 = 1e-6;

/// Profile truncation radius, in standard deviations.
pub const TRUNCATION: f64 = 6.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TransportReport {
    pub reprojected: usize,
    pub max_drift: f64,
}

/// Advances every particle by proper time `duration` along `conn`.
pub fn transport_ensemble(
    conn: &dyn ConnectionField,
    ensemble: &Ensemble,
    duration: f64,
    h: f64,
) -> Result<(Ensemble, TransportReport)> {
    if !(duration > 0.0 && h > 0.0 && h <= duration * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "transport needs 0 < h <= T, got h = {h}, T = {duration}"
        )));
    }
    let metric = Metric::new(ensemble.dim)?;
    let moved: Vec<Result<(Particle, f64)>> = ensemble
        .particles
        .par_iter()
        .enumerate()
        .map(|(a, p)| {
            let (x, mut y) = flow(conn, &p.x, &p.y, duration, h).map_err(|e| Error::Particle {
                index: a,
                source: Box::new(e),
            })?;
            let drift = (metric.norm_sq(&y) - 1.0).abs();
            if drift > REPROJECT_DRIFT {
                metric.project_to_shell(&mut y);
            }
            Ok((Particle { x, y, w: p.w }, drift))
        })
        .collect();
    let mut particles = Vec::with_capacity(moved.len());
    let mut report = TransportReport::default();
    for r in moved {
        let (p, drift) = r?;
        if drift > REPROJECT_DRIFT {
            report.reprojected += 1;
        }
        report.max_drift = report.max_drift.max(drift);
        particles.push(p);
    }
    if report.reprojected > 0 {
        warn!(
            "re-projected {} of {} particles (max drift {:e})",
            report.reprojected,
            particles.len(),
            report.max_drift
        );
    }
    Ok((
        Ensemble {
            dim: ensemble.dim,
            particles,
            seed: ensemble.seed,
            spec: ensemble.spec.clone(),
        },
        report,
    ))
}

fn lab_rhs(conn: &dyn ConnectionField, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(y[0] > 0.0) {
        return Err(Error::Domain(format!("velocity is not future directed: y0 = {}", y[0])));
    }
    let inv = 1.0 / y[0];
    let a = conn.acceleration(x, y)?;
    Ok((y.iter().map(|v| v * inv).collect(), a.iter().map(|v| v * inv).collect()))
}

fn shift(base: &[f64], k: &[f64], c: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, kk)| b + c * kk).collect()
}

fn combine(base: &[f64], k: [&[f64]; 4], dt: f64) -> Vec<f64> {
    (0..base.len())
        .map(|i| base[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

/// One RK4 step of laboratory time `dt` (may be negative).
pub fn lab_step(conn: &dyn ConnectionField, x: &[f64], y: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (k1x, k1y) = lab_rhs(conn, x, y)?;
    let (k2x, k2y) = lab_rhs(conn, &shift(x, &k1x, 0.5 * dt), &shift(y, &k1y, 0.5 * dt))?;
    let (k3x, k3y) = lab_rhs(conn, &shift(x, &k2x, 0.5 * dt), &shift(y, &k2y, 0.5 * dt))?;
    let (k4x, k4y) = lab_rhs(conn, &shift(x, &k3x, dt), &shift(y, &k3y, dt))?;
    Ok((
        combine(x, [&k1x, &k2x, &k3x, &k4x], dt),
        combine(y, [&k1y, &k2y, &k3y, &k4y], dt),
    ))
}

fn lab_steps(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Domain(format!("bad lab-time span {duration} with step {dt}")));
    }
    let r = duration / dt;
    let n = r.round();
    if (r - n).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::Domain(format!(
            "lab-time span {duration} is not a multiple of the step {dt}"
        )));
    }
    Ok(n as usize)
}

/// Single-particle flow sampled on a uniform laboratory-time grid; the
/// sample parameter `t` is `x⁰ − x₀⁰`.
pub fn lab_trajectory(
    conn: &dyn ConnectionField,
    x0: &[f64],
    y0: &[f64],
    duration: f64,
    dt: f64,
) -> Result<Trajectory> {
    let n = lab_steps(duration, dt)?;
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(Sample {
        t: 0.0,
        x: x0.to_vec(),
        y: y0.to_vec(),
    });
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    for step in 0..n {
        let (xn, yn) = lab_step(conn, &x, &y, dt).map_err(|e| e.annotate(format!("lab step {step}")))?;
        x = xn;
        y = yn;
        samples.push(Sample {
            t: (step + 1) as f64 * dt,
            x: x.clone(),
            y: y.clone(),
        });
    }
    Ok(Trajectory {
        samples,
        conn_id: format!("{}/lab", conn.id()),
        h: dt,
    })
}

/// How transported particles interact with the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Independent Lorentz characteristics (Vlasov).
    Lorentz,
    /// The averaged connection built from the ensemble's own global moments,
    /// re-evaluated at every Runge–Kutta stage (averaged Vlasov).
    SelfConsistent,
}

/// Ensemble state recorded at one laboratory time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub ensemble: Ensemble,
}

#[derive(Clone, Debug)]
pub struct EnsembleRun {
    /// Global moments at every step.
    pub history: MomentHistory,
    pub snapshots: Vec<Snapshot>,
    pub reprojected: usize,
}

impl EnsembleRun {
    pub fn snapshot_at(&self, t: f64) -> Option<&Ensemble> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|s| &s.ensemble)
    }
}

type State = (Vec<f64>, Vec<f64>);

fn state_moments(states: &[State], weights: &[f64], d: usize) -> Result<MomentSet> {
    let particles = states
        .iter()
        .zip(weights)
        .map(|((x, y), w)| Particle {
            x: x.clone(),
            y: y.clone(),
            w: *w,
        })
        .collect();
    global_moments(&Ensemble::new(d, particles)?)
}

fn rates(conn: &dyn ConnectionField, states: &[State]) -> Result<Vec<State>> {
    let out: Vec<Result<State>> = states
        .par_iter()
        .enumerate()
        .map(|(a, (x, y))| {
            lab_rhs(conn, x, y).map_err(|e| Error::Particle {
                index: a,
                source: Box::new(e),
            })
        })
        .collect();
    out.into_iter().collect()
}

fn offset(states: &[State], k: &[State], c: f64) -> Vec<State> {
    states
        .iter()
        .zip(k)
        .map(|((x, y), (kx, ky))| (shift(x, kx, c), shift(y, ky, c)))
        .collect()
}

/// Evolves an ensemble whose particles share one laboratory time slice,
/// recording global moments at every step and full snapshots at the
/// requested times (each a multiple of `dt` past the start).
pub fn evolve_ensemble(
    field: &FieldConfiguration,
    ensemble: &Ensemble,
    coupling: Coupling,
    duration: f64,
    dt: f64,
    snapshot_times: &[f64],
) -> Result<EnsembleRun> {
    let d = ensemble.dim;
    let t0 = ensemble.particles[0].x[0];
    if ensemble.particles.iter().any(|p| p.x[0] != t0) {
        return Err(Error::Domain("ensemble particles are not on one time slice".into()));
    }
    let n = lab_steps(duration, dt)?;
    if n < 3 {
        return Err(Error::Domain("lab-time run needs at least 3 steps".into()));
    }
    let mut wanted = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        let k = lab_steps(t - t0, dt).map_err(|e| e.annotate(format!("snapshot time {t}")))?;
        if k > n {
            return Err(Error::Domain(format!("snapshot time {t} is past the end of the run")));
        }
        wanted.push((k, t));
    }
    let metric = Metric::new(d)?;
    let weights: Vec<f64> = ensemble.particles.iter().map(|p| p.w).collect();
    let mut states: Vec<State> = ensemble.particles.iter().map(|p| (p.x.clone(), p.y.clone())).collect();
    let lorentz = LorentzConnection::new(field.clone());
    let mut samples = Vec::with_capacity(n + 1);
    let mut snapshots = Vec::new();
    let mut reprojected = 0;
    let record = |k: usize, states: &[State], snapshots: &mut Vec<Snapshot>| -> Result<MomentSet> {
        for &(kk, t) in &wanted {
            if kk == k {
                let particles = states
                    .iter()
                    .zip(&weights)
                    .map(|((x, y), w)| Particle { x: x.clone(), y: y.clone(), w: *w })
                    .collect();
                snapshots.push(Snapshot {
                    t,
                    ensemble: Ensemble {
                        dim: d,
                        particles,
                        seed: ensemble.seed,
                        spec: ensemble.spec.clone(),
                    },
                });
            }
        }
        state_moments(states, &weights, d)
    };
    let mut current = record(0, &states, &mut snapshots)?;
    samples.push(current.clone());
    for step in 0..n {
        let next = match coupling {
            Coupling::Lorentz => {
                let out: Vec<Result<State>> = states
                    .par_iter()
                    .enumerate()
                    .map(|(a, (x, y))| {
                        lab_step(&lorentz, x, y, dt).map_err(|e| Error::Particle {
                            index: a,
                            source: Box::new(e),
                        })
                    })
                    .collect();
                out.into_iter().collect::<Result<Vec<_>>>()
            }
            Coupling::SelfConsistent => {
                let stage = |s: &[State], m: MomentSet| -> Result<Vec<State>> {
                    rates(&AveragedConnection::constant(field.clone(), m), s)
                };
                let k1 = stage(&states, current.clone())?;
                let s2 = offset(&states, &k1, 0.5 * dt);
                let k2 = stage(&s2, state_moments(&s2, &weights, d)?)?;
                let s3 = offset(&states, &k2, 0.5 * dt);
                let k3 = stage(&s3, state_moments(&s3, &weights, d)?)?;
                let s4 = offset(&states, &k3, dt);
                let k4 = stage(&s4, state_moments(&s4, &weights, d)?)?;
                Ok(states
                    .iter()
                    .enumerate()
                    .map(|(a, (x, y))| {
                        let kx = [k1[a].0.as_slice(), &k2[a].0, &k3[a].0, &k4[a].0];
                        let ky = [k1[a].1.as_slice(), &k2[a].1, &k3[a].1, &k4[a].1];
                        (combine(x, kx, dt), combine(y, ky, dt))
                    })
                    .collect())
            }
        }
        .map_err(|e| e.annotate(format!("lab step {step}")))?;
        states = next;
        // every particle advanced by the same dt; pin the slice exactly
        let t = t0 + (step + 1) as f64 * dt;
        for (x, y) in &mut states {
            x[0] = t;
            if (metric.norm_sq(y) - 1.0).abs() > REPROJECT_DRIFT {
                metric.project_to_shell(y);
                reprojected += 1;
            }
        }
        current = record(step + 1, &states, &mut snapshots)?;
        samples.push(current.clone());
    }
    if reprojected > 0 {
        debug!("re-projected {reprojected} particle states during the run");
    }
    Ok(EnsembleRun {
        history: MomentHistory::new(t0, dt, samples)?,
        snapshots,
        reprojected,
    })
}

/// Analytic initial distribution: Gaussian in position around `center`
/// times a Gaussian on the unit shell around `mean_velocity`, cut off at
/// [`TRUNCATION`] standard deviations. Unnormalized, peak value 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Profile {
    pub center: Vec<f64>,
    pub position_width: f64,
    pub mean_velocity: Vec<f64>,
    pub spread: f64,
}

impl Profile {
    pub fn new(center: Vec<f64>, position_width: f64, mean_velocity: Vec<f64>, spread: f64) -> Result<Self> {
        if !(position_width > 0.0 && spread > 0.0) {
            return Err(Error::Domain("profile widths must be positive".into()));
        }
        if center.len() != mean_velocity.len() {
            return Err(Error::Domain("profile center and velocity differ in dimension".into()));
        }
        Ok(Profile {
            center,
            position_width,
            mean_velocity,
            spread,
        })
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x[1..]
            .iter()
            .zip(&self.center[1..])
            .map(|(a, b)| ((a - b) / self.position_width).powi(2))
            .sum();
        let w = boost_to_rest(&self.mean_velocity, y);
        let v2: f64 = w[1..].iter().map(|c| (c / self.spread).powi(2)).sum();
        let cut = TRUNCATION * TRUNCATION;
        if r2 > cut || v2 > cut {
            0.0
        } else {
            (-0.5 * (r2 + v2)).exp()
        }
    }
}

/// Spatial box that backward characteristics must stay inside.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x[1..]
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// A distribution transported by the characteristics of `conn`.
#[derive(Clone)]
pub struct DistributionFunction {
    pub profile: Profile,
    pub conn: Arc<dyn ConnectionField>,
    /// Laboratory-time step of the backward characteristic integration.
    pub dt: f64,
    pub domain: DomainBox,
}

impl DistributionFunction {
    /// `f(x, y, t) = f₀(Φ₋ₜ(x, y))`, following the characteristic back
    /// through laboratory time `t`.
    pub fn evaluate(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(self.profile.value(x, y));
        }
        let n = ((t.abs() / self.dt).round() as usize).max(1);
        let step = -t / n as f64;
        let (mut xb, mut yb) = (x.to_vec(), y.to_vec());
        for k in 0..n {
            if !self.domain.contains(&xb) {
                return Err(Error::OutOfDomain(format!(
                    "backward characteristic left the domain at step {k}: {xb:?}"
                )));
            }
            let (xn, yn) = lab_step(self.conn.as_ref(), &xb, &yb, step)?;
            xb = xn;
            yb = yn;
        }
        if !self.domain.contains(&xb) {
            return Err(Error::OutOfDomain(format!("backward characteristic ends outside the domain: {xb:?}")));
        }
        Ok(self.profile.value(&xb, &yb))
    }
}

pub fn evaluate_distribution(df: &DistributionFunction, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    df.evaluate(x, y, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapSample {
    pub t_lab: f64,
    pub f: f64,
    pub f_avg: f64,
    pub gap: f64,
    pub dx: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionGap {
    pub samples: Vec<GapSample>,
    /// Least-squares slope of `gap` against `dx` through the origin.
    pub slope: Option<f64>,
    /// `‖gap − slope·dx‖₂ / ‖gap‖₂`.
    pub relative_residual: Option<f64>,
    /// Present when the fit was refused; the largest gap observed.
    pub floor: Option<f64>,
}

/// Evaluates `f` and `f̃` along the Lorentz trajectory and relates their
/// difference to the distance between the two trajectories. Both
/// trajectories are laboratory-time parametrized on a shared grid; `u_at`
/// supplies the observer for the η̄ norm.
pub fn distribution_gap(
    f: &DistributionFunction,
    f_avg: &DistributionFunction,
    lorentz: &Trajectory,
    averaged: &Trajectory,
    metric: &Metric,
    u_at: &dyn Fn(f64) -> MeanVelocity,
    stride: usize,
) -> Result<DistributionGap> {
    if lorentz.len() != averaged.len() {
        return Err(Error::Domain("trajectories have different lengths".into()));
    }
    let stride = stride.max(1);
    let mut samples = Vec::new();
    for (a, b) in lorentz.samples.iter().zip(&averaged.samples).step_by(stride) {
        let fv = f.evaluate(&a.x, &a.y, a.t)?;
        let fa = f_avg.evaluate(&a.x, &a.y, a.t)?;
        let bar = bar_metric(metric, &u_at(a.t))?;
        samples.push(GapSample {
            t_lab: a.t,
            f: fv,
            f_avg: fa,
            gap: (fv - fa).abs(),
            dx: bar.distance(&a.x, &b.x),
        });
    }
    let max_gap = samples.iter().map(|s| s.gap).fold(0.0, f64::max);
    let max_dx = samples.iter().map(|s| s.dx).fold(0.0, f64::max);
    if max_gap <= 1e-12 || max_dx <= 1e-12 {
        return Ok(DistributionGap {
            samples,
            slope: None,
            relative_residual: None,
            floor: Some(max_gap),
        });
    }
    let sxy: f64 = samples.iter().map(|s| s.gap * s.dx).sum();
    let sxx: f64 = samples.iter().map(|s| s.dx * s.dx).sum();
    let c = sxy / sxx;
    let res: f64 = samples.iter().map(|s| (s.gap - c * s.dx).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = samples.iter().map(|s| s.gap * s.gap).sum::<f64>().sqrt();
    Ok(DistributionGap {
        samples,
        slope: Some(c),
        relative_residual: Some(res / norm),
        floor: None,
    })
}

/// Uniform spatial grid: `cells[a]` cells of width `spacing[a]` along
/// spatial axis `a`, centered on `center`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridLayout {
    pub lo: Vec<f64>,
    pub spacing: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridLayout {
    pub fn centered(center: &[f64], spacing: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let ns = spacing.len();
        if cells.len() != ns || center.len() != ns + 1 {
            return Err(Error::Grid("grid layout has inconsistent dimensions".into()));
        }
        if cells.iter().any(|&c| c < 3) {
            return Err(Error::Grid(format!("need at least 3 cells per axis, got {cells:?}")));
        }
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Grid("grid spacing must be positive".into()));
        }
        let lo = (0..ns)
            .map(|a| center[a + 1] - 0.5 * cells[a] as f64 * spacing[a])
            .collect();
        Ok(GridLayout { lo, spacing, cells })
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for a in 0..self.cells.len() {
            flat = flat * self.cells[a] + idx[a];
        }
        flat
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.cells.len()];
        for a in (0..self.cells.len()).rev() {
            idx[a] = flat % self.cells[a];
            flat /= self.cells[a];
        }
        idx
    }

    /// Spatial coordinates of a cell center.
    pub fn center(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i as f64 + 0.5) * self.spacing[a])
            .collect()
    }
}

/// Cell-averaged, normalized mean velocity field on one time slice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VelocityFieldGrid {
    pub t: f64,
    pub layout: GridLayout,
    pub weight: Vec<f64>,
    /// Unit mean velocity per cell; `None` for empty cells.
    pub velocity: Vec<Option<Vec<f64>>>,
    /// Velocity diameter of the particles whose nearest cell this is.
    pub alpha: Vec<f64>,
    /// Cells at least `margin + 1` cells from the grid edge whose
    /// neighborhood of that radius is entirely nonempty.
    pub interior: Vec<bool>,
    pub residual: Vec<Option<Vec<f64>>>,
}

/// Cloud-in-cell deposition of weights and velocities onto cell centers.
pub fn deposit(
    ensemble: &Ensemble,
    layout: &GridLayout,
    metric: &Metric,
    margin: usize,
) -> Result<VelocityFieldGrid> {
    let d = ensemble.dim;
    let ns = d - 1;
    if layout.cells.len() != ns {
        return Err(Error::Grid("grid layout does not match the ensemble dimension".into()));
    }
    let t = ensemble.particles[0].x[0];
    let ncell = layout.len();
    let corners = 1usize << ns;
    let particles = &ensemble.particles;
    let (weight, sums) = chunked_reduce(
        particles.len(),
        |range| {
            let mut w = vec![0.0; ncell];
            let mut s = vec![0.0; ncell * d];
            let mut base = vec![0isize; ns];
            let mut frac = vec![0.0; ns];
            for p in &particles[range] {
                for a in 0..ns {
                    let u = (p.x[a + 1] - layout.lo[a]) / layout.spacing[a] - 0.5;
                    let f = u.floor();
                    base[a] = f as isize;
                    frac[a] = u - f;
                }
                'corner: for c in 0..corners {
                    let mut share = p.w;
                    let mut flat = 0usize;
                    for a in 0..ns {
                        let hi = (c >> a) & 1 == 1;
                        let i = base[a] + hi as isize;
                        if i < 0 || i >= layout.cells[a] as isize {
                            continue 'corner;
                        }
                        share *= if hi { frac[a] } else { 1.0 - frac[a] };
                        flat = flat * layout.cells[a] + i as usize;
                    }
                    if share == 0.0 {
                        continue;
                    }
                    w[flat] += share;
                    for i in 0..d {
                        s[flat * d + i] += share * p.y[i];
                    }
                }
            }
            (w, s)
        },
        |(mut wa, mut sa), (wb, sb)| {
            wa.iter_mut().zip(&wb).for_each(|(a, b)| *a += b);
            sa.iter_mut().zip(&sb).for_each(|(a, b)| *a += b);
            (wa, sa)
        },
    )
    .ok_or_else(|| Error::Grid("cannot deposit an empty ensemble".into()))?;
    let total = ensemble.total_weight();
    let velocity: Vec<Option<Vec<f64>>> = (0..ncell)
        .map(|c| {
            if weight[c] < EMPTY_CELL_FRACTION * total {
                return None;
            }
            let m: Vec<f64> = sums[c * d..(c + 1) * d].to_vec();
            let n = metric.norm_sq(&m);
            (n > 0.0).then(|| m.iter().map(|v| v / n.sqrt()).collect())
        })
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ncell];
    for (a, p) in particles.iter().enumerate() {
        let idx: Option<Vec<usize>> = (0..ns)
            .map(|k| {
                let u = ((p.x[k + 1] - layout.lo[k]) / layout.spacing[k]).floor();
                (u >= 0.0 && u < layout.cells[k] as f64).then_some(u as usize)
            })
            .collect();
        if let Some(idx) = idx {
            members[layout.index(&idx)].push(a);
        }
    }
    let alpha: Vec<f64> = (0..ncell)
        .into_par_iter()
        .map(|c| match &velocity[c] {
            Some(v) if members[c].len() > 1 => {
                let bar = match bar_metric(metric, &MeanVelocity(v.clone())) {
                    Ok(b) => b,
                    Err(_) => return 0.0,
                };
                let pts = unique_points(members[c].iter().map(|&a| particles[a].y.as_slice()), &bar);
                diameter_of_points(&pts).value()
            }
            _ => 0.0,
        })
        .collect();

    let interior = erode(layout, &velocity, margin + 1);
    Ok(VelocityFieldGrid {
        t,
        layout: layout.clone(),
        weight,
        velocity,
        alpha,
        interior,
        residual: vec![None; ncell],
    })
}

/// Distinct velocities in η̄-orthonormal coordinates.
pub fn unique_points<'a>(ys: impl Iterator<Item = &'a [f64]>, bar: &BarMetric) -> Vec<Vec<f64>> {
    let mut keys: Vec<Vec<u64>> = ys.map(|y| y.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.iter()
        .map(|k| bar.orthonormal(&k.iter().map(|b| f64::from_bits(*b)).collect::<Vec<_>>()))
        .collect()
}

fn erode(layout: &GridLayout, velocity: &[Option<Vec<f64>>], radius: usize) -> Vec<bool> {
    let ns = layout.cells.len();
    (0..layout.len())
        .map(|flat| {
            let idx = layout.unflatten(flat);
            if (0..ns).any(|a| idx[a] < radius || idx[a] + radius >= layout.cells[a]) {
                return false;
            }
            let span = 2 * radius + 1;
            let count = span.pow(ns as u32);
            (0..count).all(|mut o| {
                let mut nb = idx.clone();
                for a in 0..ns {
                    nb[a] = nb[a] + o % span - radius;
                    o /= span;
                }
                velocity[layout.index(&nb)].is_some()
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Largest η̄-norm of the residual over interior cells.
    pub max_residual: f64,
    pub interior_cells: usize,
    /// Largest cell diameter among interior cells.
    pub max_alpha: f64,
}

/// Residual `V^k ∂_k V^i + Γ̄^i_jk V^j V^k` of the cold-fluid equation on
/// the middle slice of five equally spaced (`delta` apart) grids sharing one
/// layout, over interior cells whose stencil neighbors are interior too. Time derivatives use the fourth-order central stencil, spatial
/// ones the second-order central stencil. Fills `slices[2].residual`.
pub fn fluid_residual(
    avg: &AveragedConnection,
    slices: &mut [VelocityFieldGrid],
    delta: f64,
    metric: &Metric,
) -> Result<ResidualReport> {
    if slices.len() != 5 {
        return Err(Error::Grid("fluid residual needs five time slices".into()));
    }
    let layout = slices[2].layout.clone();
    if slices.iter().any(|s| s.layout != layout) {
        return Err(Error::Grid("time slices use different grid layouts".into()));
    }
    if layout.cells.iter().any(|&c| c < 3) {
        return Err(Error::Grid("need at least 3 cells per axis".into()));
    }
    let ns = layout.cells.len();
    let d = ns + 1;
    let mid = &slices[2];
    let stencil_ok = |c: usize| {
        let idx = layout.unflatten(c);
        (0..ns).all(|a| {
            let mut lo = idx.clone();
            let mut hi = idx.clone();
            lo[a] -= 1;
            hi[a] += 1;
            mid.interior[layout.index(&lo)] && mid.interior[layout.index(&hi)]
        })
    };
    let cells: Vec<usize> = (0..layout.len())
        .filter(|&c| mid.interior[c] && stencil_ok(c) && slices.iter().all(|s| s.interior[c]))
        .collect();
    if cells.is_empty() {
        return Err(Error::Grid("no interior cells with full stencils".into()));
    }
    let results: Vec<Result<(usize, Vec<f64>, f64)>> = cells
        .par_iter()
        .map(|&c| {
            let v = mid.velocity[c].as_ref().expect("interior cell is nonempty");
            let idx = layout.unflatten(c);
            let mut r = vec![0.0; d];
            for i in 0..d {
                let at = |s: usize| slices[s].velocity[c].as_ref().expect("checked")[i];
                let dt = (at(0) - 8.0 * at(1) + 8.0 * at(3) - at(4)) / (12.0 * delta);
                r[i] += v[0] * dt;
            }
            for a in 0..ns {
                let mut lo = idx.clone();
                let mut hi = idx.clone();
                lo[a] -= 1;
                hi[a] += 1;
                let vl = mid.velocity[layout.index(&lo)].as_ref().expect("interior neighbors are nonempty");
                let vh = mid.velocity[layout.index(&hi)].as_ref().expect("interior neighbors are nonempty");
                for i in 0..d {
                    r[i] += v[a + 1] * (vh[i] - vl[i]) / (2.0 * layout.spacing[a]);
                }
            }
            let mut event = vec![mid.t];
            event.extend(layout.center(&idx));
            let acc = avg.acceleration(&event, v)?;
            for i in 0..d {
                r[i] -= acc[i];
            }
            let norm = bar_metric(metric, &MeanVelocity(v.clone()))?.norm(&r);
            Ok((c, r, norm))
        })
        .collect();
    let mut max_residual = 0.0f64;
    let mut max_alpha = 0.0f64;
    let mut filled = vec![None; layout.len()];
    for res in results {
        let (c, r, norm) = res?;
        max_residual = max_residual.max(norm);
        max_alpha = max_alpha.max(mid.alpha[c]);
        filled[c] = Some(r);
    }
    slices[2].residual = filled;
    Ok(ResidualReport {
        max_residual,
        interior_cells: cells.len(),
        max_alpha,
    })
}

impl VelocityFieldGrid {
    /// Multilinear interpolation of `V` at a spatial point, using interior
    /// cells only. Not renormalized.
    pub fn interpolate(&self, xs: &[f64]) -> Option<Vec<f64>> {
        let ns = self.layout.cells.len();
        let mut base = vec![0usize; ns];
        let mut frac = vec![0.0; ns];
        for a in 0..ns {
            let u = (xs[a] - self.layout.lo[a]) / self.layout.spacing[a] - 0.5;
            let f = u.floor();
            if f < 0.0 || f + 1.0 >= self.layout.cells[a] as f64 {
                return None;
            }
            base[a] = f as usize;
            frac[a] = u - f;
        }
        let d = ns + 1;
        let mut out = vec![0.0; d];
        for c in 0..(1usize << ns) {
            let mut idx = base.clone();
            let mut share = 1.0;
            for a in 0..ns {
                let hi = (c >> a) & 1 == 1;
                idx[a] += hi as usize;
                share *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            let flat = self.layout.index(&idx);
            if !self.interior[flat] {
                return None;
            }
            let v = self.velocity[flat].as_ref()?;
            for i in 0..d {
                out[i] += share * v[i];
            }
        }
        Some(out)
    }
}

/// Time series of grids on a uniform laboratory-time spacing.
#[derive(Clone, Debug)]
pub struct FieldSeries {
    pub t0: f64,
    pub dt: f64,
    pub grids: Vec<VelocityFieldGrid>,
}

impl FieldSeries {
    pub fn new(grids: Vec<VelocityFieldGrid>) -> Result<Self> {
        if grids.len() < 4 {
            return Err(Error::Grid("a field series needs at least 4 slices".into()));
        }
        let t0 = grids[0].t;
        let dt = grids[1].t - t0;
        if !(dt > 0.0) || grids.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0)) {
            return Err(Error::Grid("field series must be uniformly spaced in time".into()));
        }
        Ok(FieldSeries { t0, dt, grids })
    }

    /// Unit velocity at event `x`: multilinear in space, cubic in time.
    pub fn velocity_at(&self, x: &[f64], metric: &Metric) -> Option<Vec<f64>> {
        let n = self.grids.len();
        let s = (x[0] - self.t0) / self.dt;
        if s < -1e-9 || s > (n - 1) as f64 + 1e-9 {
            return None;
        }
        let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let mut out = vec![0.0; x.len()];
        for q in 0..4 {
            let mut c = 1.0;
            for r in 0..4 {
                if r != q {
                    c *= (s - (base + r) as f64) / ((base + q) as f64 - (base + r) as f64);
                }
            }
            let v = self.grids[base + q].interpolate(&x[1..])?;
            for i in 0..out.len() {
                out[i] += c * v[i];
            }
        }
        let norm = metric.norm_sq(&out);
        (norm > 0.0).then(|| out.iter().map(|v| v / norm.sqrt()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FluidSample {
    pub t_lab: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluidReport {
    pub samples: Vec<FluidSample>,
    pub max_gap: f64,
    /// True when the integral curve left the grid before the window ended.
    pub truncated: bool,
    pub t_end: f64,
}

/// Integral curve of the reconstructed unit velocity field from `x0`,
/// compared with the Lorentz trajectory from `(x0, y0)`, both advanced in
/// laboratory time with step `dt` for `duration`.
pub fn fluid_vs_particle(
    series: &FieldSeries,
    field: &FieldConfiguration,
    x0: &[f64],
    y0: &[f64],
    duration: f64,
    dt: f64,
) -> Result<FluidReport> {
    let metric = Metric::new(field.dim())?;
    let lorentz = LorentzConnection::new(field.clone());
    let n = lab_steps(duration, dt)?;
    let u = |x: &[f64]| series.velocity_at(x, &metric);
    let rhs = |x: &[f64]| -> Option<Vec<f64>> {
        let v = u(x)?;
        Some(v.iter().map(|c| c / v[0]).collect())
    };
    let mut xf = x0.to_vec();
    let (mut xl, mut yl) = (x0.to_vec(), y0.to_vec());
    let mut samples = vec![FluidSample { t_lab: 0.0, gap: 0.0 }];
    let mut truncated = false;
    for step in 0..n {
        let next = (|| {
            let k1 = rhs(&xf)?;
            let k2 = rhs(&shift(&xf, &k1, 0.5 * dt))?;
            let k3 = rhs(&shift(&xf, &k2, 0.5 * dt))?;
            let k4 = rhs(&shift(&xf, &k3, dt))?;
            Some(combine(&xf, [&k1, &k2, &k3, &k4], dt))
        })();
        let Some(xn) = next else {
            truncated = true;
            break;
        };
        let (xln, yln) = lab_step(&lorentz, &xl, &yl, dt)?;
        xf = xn;
        xl = xln;
        yl = yln;
        let observer = match u(&xf) {
            Some(v) => v,
            None => {
                truncated = true;
                break;
            }
        };
        let bar = bar_metric(&metric, &MeanVelocity(observer))?;
        samples.push(FluidSample {
            t_lab: (step + 1) as f64 * dt,
            gap: bar.distance(&xf, &xl),
        });
    }
    let t_end = samples.last().map_or(0.0, |s| s.t_lab);
    if truncated {
        warn!("integral curve left the grid at t = {t_end}; window truncated");
    }
    Ok(FluidReport {
        max_gap: samples.iter().map(|s| s.gap).fold(0.0, f64::max),
        samples,
        truncated,
        t_end,
    })
}

/// Unit mean velocity of an ensemble's global moments.
pub fn ensemble_mean_velocity(ensemble: &Ensemble, metric: &Metric) -> Result<MeanVelocity> {
    Ok(mean_velocity(metric, &global_moments(ensemble)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{lattice_ensemble, sample_ensemble, EnsembleSpec, LatticeSpec, MomentProvider};
    use crate::geometry::Potential;
    use crate::solver::integrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(p: Potential) -> FieldConfiguration {
        FieldConfiguration::inertial(4, p).unwrap()
    }

    fn bunch(spread: f64, count: usize, gamma: f64) -> Ensemble {
        let m = Metric::minkowski();
        sample_ensemble(
            &m,
            &EnsembleSpec {
                count,
                mean_velocity: m.boosted_unit(gamma, 1),
                spread,
                position_width: 0.1,
                center: vec![0.0; 4],
                seed: 11,
            },
        )
        .unwrap()
    }

    fn lattice(spread: f64, n: usize, gamma: f64) -> Ensemble {
        let m = Metric::minkowski();
        lattice_ensemble(
            &m,
            &LatticeSpec {
                mean_velocity: m.boosted_unit(gamma, 1),
                spread,
                center: vec![0.0; 4],
                half_widths: vec![1.0; 3],
                points: vec![n; 3],
                velocity_nodes: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn free_transport_is_straight() {
        let e = bunch(0.1, 50, 2.0);
        let conn = LorentzConnection::new(field(Potential::Zero));
        let (out, report) = transport_ensemble(&conn, &e, 1.5, 0.01).unwrap();
        assert_eq!(report.reprojected, 0);
        for (a, b) in e.particles.iter().zip(&out.particles) {
            for i in 0..4 {
                assert!((b.x[i] - (a.x[i] + 1.5 * a.y[i])).abs() < 1e-12);
            }
            assert_eq!(a.w, b.w);
        }
    }

    #[test]
    fn delta_transport_matches_single_trajectory() {
        let m = Metric::minkowski();
        let y = m.boosted_unit(3.0, 1);
        let e = Ensemble::delta(vec![0.0; 4], y.clone());
        let conn = LorentzConnection::new(field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 }));
        let (out, _) = transport_ensemble(&conn, &e, 2.0, 0.01).unwrap();
        let traj = integrate(&conn, &[0.0; 4], &y, 2.0, 0.01).unwrap();
        assert_eq!(out.particles[0].x, traj.last().x);
    }

    #[test]
    fn transport_errors_name_the_particle() {
        let mut e = bunch(0.1, 5, 2.0);
        e.particles[3].y = vec![0.5, 1.0, 0.0, 0.0];
        let conn = LorentzConnection::new(field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 }));
        match transport_ensemble(&conn, &e, 1.0, 0.1) {
            Err(Error::Particle { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lab_flow_reaches_the_same_event_as_proper_time_flow() {
        let m = Metric::minkowski();
        let conn = LorentzConnection::new(field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 }));
        let y = m.boosted_unit(2.0, 1);
        let lab = lab_trajectory(&conn, &[0.0; 4], &y, 2.0, 0.001).unwrap();
        let tau = integrate(&conn, &[0.0; 4], &y, 1.5, 0.001).unwrap();
        let (_, x, _) = tau.at_lab_time(2.0).unwrap();
        for i in 0..4 {
            assert!((lab.last().x[i] - x[i]).abs() < 1e-9, "{i}");
        }
    }

    #[test]
    fn lorentz_run_history_matches_snapshot_moments() {
        let e = bunch(0.05, 40, 3.0);
        let f = field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let run = evolve_ensemble(&f, &e, Coupling::Lorentz, 1.0, 0.05, &[0.5, 1.0]).unwrap();
        let snap = run.snapshot_at(0.5).unwrap();
        let direct = global_moments(snap).unwrap();
        assert!(direct.m1.iter().zip(&run.history.at(0.5).m1).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(snap.particles.iter().all(|p| p.x[0] == 0.5));
    }

    #[test]
    fn misaligned_snapshot_is_rejected() {
        let e = bunch(0.05, 10, 3.0);
        let f = field(Potential::Zero);
        assert!(evolve_ensemble(&f, &e, Coupling::Lorentz, 1.0, 0.1, &[0.55]).is_err());
    }

    #[test]
    fn self_consistent_flow_of_a_cold_bunch_is_lorentz() {
        let m = Metric::minkowski();
        let y = m.boosted_unit(2.0, 1);
        let e = Ensemble::delta(vec![0.0; 4], y.clone());
        let f = field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let run = evolve_ensemble(&f, &e, Coupling::SelfConsistent, 1.0, 0.01, &[1.0]).unwrap();
        let lab = lab_trajectory(&LorentzConnection::new(f), &[0.0; 4], &y, 1.0, 0.01).unwrap();
        let p = &run.snapshot_at(1.0).unwrap().particles[0];
        for i in 0..4 {
            assert!((p.x[i] - lab.last().x[i]).abs() < 1e-10);
        }
    }

    fn profile() -> Profile {
        let m = Metric::minkowski();
        Profile::new(vec![0.0; 4], 0.5, m.boosted_unit(1.5, 1), 0.2).unwrap()
    }

    fn wide_box() -> DomainBox {
        DomainBox {
            lo: vec![-100.0; 3],
            hi: vec![100.0; 3],
        }
    }

    #[test]
    fn profile_is_truncated_and_nonnegative() {
        let p = profile();
        assert_eq!(p.value(&[0.0; 4], &p.mean_velocity), 1.0);
        assert_eq!(p.value(&[0.0, 3.1, 0.0, 0.0], &p.mean_velocity), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Metric::minkowski();
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let mut y = vec![0.0, rng.random::<f64>() * 3.0, rng.random::<f64>() - 0.5, 0.0];
            m.project_to_shell(&mut y);
            assert!(p.value(&x, &y) >= 0.0);
        }
    }

    #[test]
    fn free_streaming_closed_form() {
        let df = DistributionFunction {
            profile: profile(),
            conn: Arc::new(LorentzConnection::new(field(Potential::Zero))),
            dt: 0.01,
            domain: wide_box(),
        };
        let m = Metric::minkowski();
        let mut y = vec![0.0, 1.0, 0.1, 0.0];
        m.project_to_shell(&mut y);
        let x = [0.7, 0.6, 0.2, -0.1];
        let t = 0.7;
        let back: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - t * b / y[0]).collect();
        let expect = df.profile.value(&back, &y);
        assert!((df.evaluate(&x, &y, t).unwrap() - expect).abs() < 1e-14);
        assert_eq!(df.evaluate(&x, &y, 0.0).unwrap(), df.profile.value(&x, &y));
    }

    #[test]
    fn liouville_constancy_along_characteristics() {
        let f = field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let conn = Arc::new(LorentzConnection::new(f));
        let df = DistributionFunction {
            profile: profile(),
            conn: conn.clone(),
            dt: 0.01,
            domain: wide_box(),
        };
        let m = Metric::minkowski();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = vec![0.0, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, 0.0];
            let mut y = vec![0.0, 1.1 + 0.4 * (rng.random::<f64>() - 0.5), 0.3 * (rng.random::<f64>() - 0.5), 0.0];
            m.project_to_shell(&mut y);
            let tr = lab_trajectory(conn.as_ref(), &x, &y, 1.0, 0.01).unwrap();
            let end = tr.last();
            let v = df.evaluate(&end.x, &end.y, 1.0).unwrap();
            assert!((v - df.profile.value(&x, &y)).abs() <= 1e-7);
        }
    }

    #[test]
    fn backward_flow_outside_box_is_an_error() {
        let df = DistributionFunction {
            profile: profile(),
            conn: Arc::new(LorentzConnection::new(field(Potential::Zero))),
            dt: 0.1,
            domain: DomainBox {
                lo: vec![-1.0; 3],
                hi: vec![1.0; 3],
            },
        };
        let m = Metric::minkowski();
        let y = m.boosted_unit(2.0, 1);
        assert!(matches!(df.evaluate(&[5.0, 0.9, 0.0, 0.0], &y, 5.0), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn cic_of_a_uniform_lattice_is_flat() {
        let e = lattice(0.01, 8, 2.0);
        let m = Metric::minkowski();
        // lattice spacing 0.25; cells twice as wide
        let layout = GridLayout::centered(&e.centroid(), vec![0.5; 3], vec![6; 3]).unwrap();
        let g = deposit(&e, &layout, &m, 1).unwrap();
        let inner: Vec<usize> = (0..layout.len()).filter(|&c| g.interior[c]).collect();
        assert!(!inner.is_empty());
        let w0 = g.weight[inner[0]];
        let u = ensemble_mean_velocity(&e, &m).unwrap();
        for &c in &inner {
            assert!((g.weight[c] - w0).abs() < 1e-12);
            let v = g.velocity[c].as_ref().unwrap();
            assert!((m.norm_sq(v) - 1.0).abs() < 1e-10);
            assert!(v.iter().zip(&u.0).all(|(a, b)| (a - b).abs() < 1e-12));
            assert!(g.alpha[c] > 0.0);
        }
    }

    #[test]
    fn too_few_cells_is_an_error() {
        assert!(GridLayout::centered(&[0.0; 4], vec![1.0; 3], vec![2, 5, 5]).is_err());
    }

    #[test]
    fn free_uniform_field_has_zero_residual() {
        let e = lattice(0.02, 8, 2.0);
        let m = Metric::minkowski();
        let f = field(Potential::Zero);
        let dt = 0.05;
        let times: Vec<f64> = (0..5).map(|k| 0.2 + k as f64 * dt).collect();
        let run = evolve_ensemble(&f, &e, Coupling::SelfConsistent, 0.4, dt, &times).unwrap();
        let center = run.snapshot_at(0.3).unwrap().centroid();
        let layout = GridLayout::centered(&center, vec![0.25; 3], vec![10; 3]).unwrap();
        let mut slices: Vec<VelocityFieldGrid> = times
            .iter()
            .map(|t| deposit(run.snapshot_at(*t).unwrap(), &layout, &m, 1).unwrap())
            .collect();
        let avg = AveragedConnection::new(f, MomentProvider::Constant(run.history.at(0.3)));
        let r = fluid_residual(&avg, &mut slices, dt, &m).unwrap();
        assert!(r.max_residual < 1e-12, "{}", r.max_residual);
    }

    #[test]
    fn cold_bunch_fluid_tracks_the_particle() {
        let e = lattice(0.0, 8, 2.0);
        let m = Metric::minkowski();
        let f = field(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let dt = 0.02;
        let times: Vec<f64> = (0..=25).map(|k| k as f64 * dt * 2.0).collect();
        let run = evolve_ensemble(&f, &e, Coupling::Lorentz, 1.0, dt, &times).unwrap();
        let grids = times
            .iter()
            .map(|t| {
                let snap = run.snapshot_at(*t).unwrap();
                let layout = GridLayout::centered(&snap.centroid(), vec![0.5; 3], vec![6; 3]).unwrap();
                deposit(snap, &layout, &m, 0).unwrap()
            })
            .collect();
        let series = FieldSeries::new(grids).unwrap();
        let u0 = ensemble_mean_velocity(&e, &m).unwrap();
        let rep = fluid_vs_particle(&series, &f, &e.centroid(), &u0.0, 0.9, dt).unwrap();
        assert!(!rep.truncated);
        assert!(rep.max_gap <= 1e-6, "{}", rep.max_gap);
    }
}
