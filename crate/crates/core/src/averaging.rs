//! Fiber moments of a particle distribution on the unit hyperboloid and the
//! affine connection obtained by averaging the Lorentz coefficients over it.
//!
//! For velocities on the unit shell `η(y, y) = 1`, averaging the Lorentz
//! coefficients term by term gives
//!
//! ```text
//! Γ̄^i_jk = ηΓ^i_jk + ½ (F^i_j ⟨y⟩_k + F^i_k ⟨y⟩_j)
//!        + ½ F^i_m (⟨y^m⟩ g_jk − g_js g_kl ⟨y^m y^s y^l⟩)
//! ```
//!
//! which needs only the first and third moments and no longer depends on y.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Chart, ConnectionField, FieldConfiguration, Metric};
use crate::reduce::chunked_reduce;
use crate::tensor::{Mat, Rank3};

/// Tolerance on `|η(y, y) − 1|` for ensemble velocities.
pub const SHELL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: f64,
}

/// Generating parameters of a random Gaussian bunch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub count: usize,
    /// Mean four-velocity, on the unit shell.
    pub mean_velocity: Vec<f64>,
    /// Rest-frame standard deviation of each spatial velocity component.
    pub spread: f64,
    /// Lab-frame standard deviation of each spatial position component.
    pub position_width: f64,
    /// Event at the bunch center; particles start on its `x⁰` slice.
    pub center: Vec<f64>,
    pub seed: u64,
}

/// Weighted particles standing in for a distribution function.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    pub particles: Vec<Particle>,
    pub seed: Option<u64>,
    pub spec: Option<EnsembleSpec>,
}

impl Ensemble {
    pub fn new(dim: usize, particles: Vec<Particle>) -> Result<Self> {
        let e = Ensemble {
            dim,
            particles,
            seed: None,
            spec: None,
        };
        e.validate_weights()?;
        Ok(e)
    }

    /// A single particle of unit weight.
    pub fn delta(x: Vec<f64>, y: Vec<f64>) -> Self {
        Ensemble {
            dim: x.len(),
            particles: vec![Particle { x, y, w: 1.0 }],
            seed: None,
            spec: None,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.w).sum()
    }

    fn validate_weights(&self) -> Result<()> {
        if self.particles.is_empty() {
            return Err(Error::Domain("ensemble is empty".into()));
        }
        for (a, p) in self.particles.iter().enumerate() {
            if !(p.w > 0.0 && p.w.is_finite()) {
                return Err(Error::Domain(format!("particle {a} has weight {}", p.w)));
            }
            if p.x.len() != self.dim || p.y.len() != self.dim {
                return Err(Error::Domain(format!("particle {a} has wrong dimension")));
            }
        }
        Ok(())
    }

    /// Largest `|η(y_a, y_a) − 1|`.
    pub fn shell_deviation(&self, metric: &Metric) -> f64 {
        self.particles
            .iter()
            .map(|p| (metric.norm_sq(&p.y) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Weighted mean position.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        let mut w = 0.0;
        for p in &self.particles {
            w += p.w;
            for (ci, xi) in c.iter_mut().zip(&p.x) {
                *ci += p.w * xi;
            }
        }
        c.iter_mut().for_each(|v| *v /= w);
        c
    }

    /// Root-mean-square spatial distance from the centroid.
    pub fn rms_width(&self) -> f64 {
        let c = self.centroid();
        let mut s = 0.0;
        let mut w = 0.0;
        for p in &self.particles {
            w += p.w;
            s += p.w * spatial_dist_sq(&p.x, &c);
        }
        (s / w).sqrt()
    }
}

#[inline]
pub(crate) fn spatial_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a[1..].iter().zip(&b[1..]).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Pure boost taking the rest four-velocity `(1, 0, …)` to the unit vector `u`.
pub fn boost_from_rest(u: &[f64], w: &[f64]) -> Vec<f64> {
    let gamma = u[0];
    let p = &u[1..];
    let pw: f64 = p.iter().zip(&w[1..]).map(|(a, b)| a * b).sum();
    let mut out = Vec::with_capacity(u.len());
    out.push(gamma * w[0] + pw);
    let coef = w[0] + pw / (gamma + 1.0);
    for (pi, wi) in p.iter().zip(&w[1..]) {
        out.push(wi + pi * coef);
    }
    out
}

/// Inverse of [`boost_from_rest`]: components of `y` in the rest frame of `u`.
pub fn boost_to_rest(u: &[f64], y: &[f64]) -> Vec<f64> {
    let mut v = u.to_vec();
    for c in &mut v[1..] {
        *c = -*c;
    }
    boost_from_rest(&v, y)
}

fn check_unit_mean(metric: &Metric, u: &[f64]) -> Result<()> {
    if u.len() != metric.dim() {
        return Err(Error::Domain("mean velocity has wrong dimension".into()));
    }
    let n = metric.norm_sq(u);
    // a stored unit vector is only on the shell to about γ² ulps
    if (n - 1.0).abs() > 1e-12 * u[0] * u[0] || u[0] <= 0.0 {
        return Err(Error::Domain(format!(
            "mean velocity must be a future unit timelike vector, eta(u,u) = {n}"
        )));
    }
    Ok(())
}

/// Draws a Gaussian bunch: isotropic rest-frame velocity offsets of width
/// `spread`, boosted to the lab frame and placed on the unit shell.
pub fn sample_ensemble(metric: &Metric, spec: &EnsembleSpec) -> Result<Ensemble> {
    check_unit_mean(metric, &spec.mean_velocity)?;
    if spec.count == 0 {
        return Err(Error::Domain("ensemble count must be at least 1".into()));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::Domain(format!("spread must be >= 0, got {}", spec.spread)));
    }
    if spec.center.len() != metric.dim() {
        return Err(Error::Domain("bunch center has wrong dimension".into()));
    }
    let d = metric.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = 1.0 / spec.count as f64;
    let mut particles = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let mut x = spec.center.clone();
        for xi in &mut x[1..] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *xi += spec.position_width * z;
        }
        let mut rest = vec![0.0; d];
        for ri in &mut rest[1..] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *ri = spec.spread * z;
        }
        let y = if spec.spread == 0.0 {
            spec.mean_velocity.clone()
        } else {
            metric.project_to_shell(&mut rest);
            let mut y = boost_from_rest(&spec.mean_velocity, &rest);
            metric.project_to_shell(&mut y);
            y
        };
        particles.push(Particle { x, y, w });
    }
    Ok(Ensemble {
        dim: d,
        particles,
        seed: Some(spec.seed),
        spec: Some(spec.clone()),
    })
}

/// Parameters of a deterministic phase-space lattice ("quiet start").
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub mean_velocity: Vec<f64>,
    pub spread: f64,
    pub center: Vec<f64>,
    /// Half extent of the uniform position box along each spatial axis.
    pub half_widths: Vec<f64>,
    /// Lattice points along each spatial axis.
    pub points: Vec<usize>,
    /// Gauss–Hermite nodes per velocity axis: 1, 3 or 5.
    pub velocity_nodes: usize,
}

fn hermite_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match n {
        1 => Ok((vec![0.0], vec![1.0])),
        3 => {
            let r = 3f64.sqrt();
            Ok((vec![-r, 0.0, r], vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]))
        }
        5 => {
            let a = (5.0 - 10f64.sqrt()).sqrt();
            let b = (5.0 + 10f64.sqrt()).sqrt();
            let he4 = |x: f64| x.powi(4) - 6.0 * x * x + 3.0;
            let wt = |x: f64| 120.0 / (25.0 * he4(x).powi(2));
            Ok((vec![-b, -a, 0.0, a, b], vec![wt(b), wt(a), wt(0.0), wt(a), wt(b)]))
        }
        other => Err(Error::Config(format!(
            "velocity_nodes must be 1, 3 or 5, got {other}"
        ))),
    }
}

/// Tensor-product lattice: uniform positions times Gauss–Hermite velocity
/// nodes in the rest frame of the mean velocity. Every position carries the
/// full velocity set, so cell averages are free of sampling noise.
pub fn lattice_ensemble(metric: &Metric, spec: &LatticeSpec) -> Result<Ensemble> {
    check_unit_mean(metric, &spec.mean_velocity)?;
    let d = metric.dim();
    let ns = d - 1;
    if spec.half_widths.len() != ns || spec.points.len() != ns || spec.center.len() != d {
        return Err(Error::Domain("lattice spec has wrong dimension".into()));
    }
    if spec.points.iter().any(|&n| n == 0) {
        return Err(Error::Domain("lattice needs at least one point per axis".into()));
    }
    let (nodes, weights) = hermite_rule(spec.velocity_nodes)?;
    let positions = cartesian(&spec.points);
    let vels = cartesian(&vec![nodes.len(); ns]);
    let n_pos = positions.len() as f64;
    let mut particles = Vec::with_capacity(positions.len() * vels.len());
    for pidx in &positions {
        let mut x = spec.center.clone();
        for a in 0..ns {
            let step = 2.0 * spec.half_widths[a] / spec.points[a] as f64;
            x[a + 1] += -spec.half_widths[a] + (pidx[a] as f64 + 0.5) * step;
        }
        for vidx in &vels {
            let mut rest = vec![0.0; d];
            let mut w = 1.0 / n_pos;
            for a in 0..ns {
                rest[a + 1] = spec.spread * nodes[vidx[a]];
                w *= weights[vidx[a]];
            }
            let y = if spec.spread == 0.0 {
                spec.mean_velocity.clone()
            } else {
                metric.project_to_shell(&mut rest);
                let mut y = boost_from_rest(&spec.mean_velocity, &rest);
                metric.project_to_shell(&mut y);
                y
            };
            particles.push(Particle { x: x.clone(), y, w });
        }
    }
    Ok(Ensemble {
        dim: d,
        particles,
        seed: None,
        spec: None,
    })
}

fn cartesian(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in sizes {
        let mut next = Vec::with_capacity(out.len() * n);
        for prefix in &out {
            for i in 0..n {
                let mut v = prefix.clone();
                v.push(i);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// First, second and third fiber moments plus normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    pub vol: f64,
    pub m1: Vec<f64>,
    pub m2: Mat,
    pub m3: Rank3,
    /// Laboratory-frame mean energy `⟨y⁰⟩`.
    pub energy: f64,
    pub centered: CenteredMoments,
}

/// Moments of `δ = v − center`. Contractions such as `⟨v (v·y)²⟩` are
/// formed from these without the `γ⁴` cancellation of the raw moments.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredMoments {
    pub center: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Mat,
    pub c3: Rank3,
}

impl CenteredMoments {
    fn zero_about(center: &[f64]) -> Self {
        let d = center.len();
        CenteredMoments {
            center: center.to_vec(),
            c1: vec![0.0; d],
            c2: Mat::zeros(d),
            c3: Rank3::zeros(d),
        }
    }

    /// `⟨v^a (g(v, y))²⟩` with `g` the metric at the evaluation point.
    pub fn cubic_contraction(&self, g: &Mat, y: &[f64]) -> Vec<f64> {
        let d = y.len();
        let yl = g.mul_vec(y);
        let dot = |a: &[f64]| a.iter().zip(&yl).map(|(u, v)| u * v).sum::<f64>();
        let p = dot(&self.center);
        let c1y = dot(&self.c1);
        let c2y = self.c2.mul_vec(&yl);
        let yc2y = dot(&c2y);
        let c3yy = self.c3.contract(&yl, &yl);
        let along = p * p + 2.0 * p * c1y + yc2y;
        (0..d)
            .map(|a| self.center[a] * along + p * p * self.c1[a] + 2.0 * p * c2y[a] + c3yy[a])
            .collect()
    }
}

impl MomentSet {
    /// Moments of a single unit-weight velocity.
    pub fn delta(y: &[f64]) -> Self {
        let d = y.len();
        let mut m3 = Rank3::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    m3.set(i, j, k, y[i] * y[j] * y[k]);
                }
            }
        }
        MomentSet {
            vol: 1.0,
            m1: y.to_vec(),
            m2: Mat::from_fn(d, |i, j| y[i] * y[j]),
            m3,
            energy: y[0],
            centered: CenteredMoments::zero_about(y),
        }
    }

    pub fn dim(&self) -> usize {
        self.m1.len()
    }

    /// Largest deviation of `m3` from total symmetry.
    pub fn m3_asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = self.m3.get(i, j, k);
                    for w in [self.m3.get(j, i, k), self.m3.get(k, j, i), self.m3.get(i, k, j)] {
                        worst = worst.max((v - w).abs());
                    }
                }
            }
        }
        worst
    }

    /// `η_ms m3^{msi}`; equals `m1^i` when the support lies on the shell.
    pub fn contracted_m3(&self, metric: &Metric) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|m| metric.sign(m) * self.m3.get(m, m, i)).sum())
            .collect()
    }

    /// Express components in a chart at `x` (moments are stored inertially).
    pub fn in_chart(&self, chart: Chart, x: &[f64]) -> MomentSet {
        if chart == Chart::Inertial {
            return self.clone();
        }
        let j = chart.inverse_jacobian(x);
        let m1 = j.mul_vec(&self.m1);
        let m2 = j.mul(&self.m2).mul(&j.transpose());
        let m3 = transform3(&j, &self.m3);
        let c = &self.centered;
        MomentSet {
            vol: self.vol,
            m1,
            m2,
            m3,
            energy: self.energy,
            centered: CenteredMoments {
                center: j.mul_vec(&c.center),
                c1: j.mul_vec(&c.c1),
                c2: j.mul(&c.c2).mul(&j.transpose()),
                c3: transform3(&j, &c.c3),
            },
        }
    }

    fn lerp_combine(parts: &[(f64, &MomentSet)]) -> MomentSet {
        let d = parts[0].1.dim();
        let mut out = MomentSet::delta(&vec![0.0; d]);
        out.vol = 0.0;
        out.energy = 0.0;
        let axpy = |o: &mut [f64], c: f64, v: &[f64]| o.iter_mut().zip(v).for_each(|(a, b)| *a += c * b);
        for (c, m) in parts {
            out.vol += c * m.vol;
            out.energy += c * m.energy;
            axpy(&mut out.m1, *c, &m.m1);
            axpy(out.m2.data_mut(), *c, m.m2.as_slice());
            axpy(out.m3.data_mut(), *c, m.m3.as_slice());
            let (o, k) = (&mut out.centered, &m.centered);
            axpy(&mut o.center, *c, &k.center);
            axpy(&mut o.c1, *c, &k.c1);
            axpy(o.c2.data_mut(), *c, k.c2.as_slice());
            axpy(o.c3.data_mut(), *c, k.c3.as_slice());
        }
        out
    }
}

/// `T^abc = J^a_i J^b_k J^c_l S^ikl`.
fn transform3(j: &Mat, t: &Rank3) -> Rank3 {
    let d = j.dim();
    let mut out = Rank3::zeros(d);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            s += j.get(a, i) * j.get(b, k) * j.get(c, l) * t.get(i, k, l);
                        }
                    }
                }
                out.set(a, b, c, s);
            }
        }
    }
    out
}

/// Where the averaged connection takes its moments from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MomentMode {
    /// All particles.
    Global,
    /// Particles within a spatial radius of the evaluation event.
    Kernel { radius: f64 },
}

#[derive(Clone)]
struct Accum {
    w: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
}

fn sym3_index(d: usize) -> Vec<(usize, usize, usize)> {
    let mut v = Vec::new();
    for i in 0..d {
        for j in i..d {
            for k in j..d {
                v.push((i, j, k));
            }
        }
    }
    v
}

/// Weighted sums of the products of `y − center`.
fn accumulate(
    particles: &[Particle],
    select: &(dyn Fn(&Particle) -> bool + Sync),
    center: &[f64],
) -> Option<Accum> {
    let d = center.len();
    let triples = sym3_index(d);
    chunked_reduce(
        particles.len(),
        |range| {
            let mut acc = Accum {
                w: 0.0,
                s1: vec![0.0; d],
                s2: vec![0.0; d * d],
                s3: vec![0.0; triples.len()],
            };
            for p in &particles[range] {
                if !select(p) {
                    continue;
                }
                let y: Vec<f64> = p.y.iter().zip(center).map(|(a, b)| a - b).collect();
                acc.w += p.w;
                for i in 0..d {
                    acc.s1[i] += p.w * y[i];
                    for j in 0..d {
                        acc.s2[i * d + j] += p.w * y[i] * y[j];
                    }
                }
                for (n, &(i, j, k)) in triples.iter().enumerate() {
                    acc.s3[n] += p.w * y[i] * y[j] * y[k];
                }
            }
            acc
        },
        |mut a, b| {
            a.w += b.w;
            a.s1.iter_mut().zip(&b.s1).for_each(|(x, y)| *x += y);
            a.s2.iter_mut().zip(&b.s2).for_each(|(x, y)| *x += y);
            a.s3.iter_mut().zip(&b.s3).for_each(|(x, y)| *x += y);
            a
        },
    )
}

fn finish(acc: Accum, d: usize, centered: Option<Accum>) -> MomentSet {
    let inv = 1.0 / acc.w;
    let m1: Vec<f64> = acc.s1.iter().map(|v| v * inv).collect();
    let m2 = Mat::from_fn(d, |i, j| acc.s2[i * d + j] * inv);
    let mut m3 = Rank3::zeros(d);
    for (n, (i, j, k)) in sym3_index(d).into_iter().enumerate() {
        let v = acc.s3[n] * inv;
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            m3.set(a, b, c, v);
        }
    }
    let centered = match centered {
        Some(c) => {
            let raw = finish(c, d, None);
            CenteredMoments {
                center: m1.clone(),
                c1: raw.m1,
                c2: raw.m2,
                c3: raw.m3,
            }
        }
        None => CenteredMoments::zero_about(&m1),
    };
    MomentSet {
        vol: acc.w,
        energy: m1[0],
        m1,
        m2,
        m3,
        centered,
    }
}

/// Weighted fiber moments of the particles selected by `mode` around the
/// inertial event `at`.
pub fn compute_moments(ensemble: &Ensemble, at: &[f64], mode: &MomentMode) -> Result<MomentSet> {
    let d = ensemble.dim;
    let r2 = match mode {
        MomentMode::Global => f64::INFINITY,
        MomentMode::Kernel { radius } => radius * radius,
    };
    let select = |p: &Particle| r2.is_infinite() || spatial_dist_sq(&p.x, at) <= r2;
    match accumulate(&ensemble.particles, &select, &vec![0.0; d]) {
        Some(a) if a.w > 0.0 => {
            let mean: Vec<f64> = a.s1.iter().map(|v| v / a.w).collect();
            let centered = accumulate(&ensemble.particles, &select, &mean);
            Ok(finish(a, d, centered))
        }
        _ => Err(Error::DegenerateMoments(format!(
            "no particles selected around {at:?}"
        ))),
    }
}

/// Global moments of the whole ensemble.
pub fn global_moments(ensemble: &Ensemble) -> Result<MomentSet> {
    compute_moments(ensemble, &vec![0.0; ensemble.dim], &MomentMode::Global)
}

/// Averaged connection coefficients at chart point `x`, with moments given
/// in inertial components.
pub fn averaged_coeffs(field: &FieldConfiguration, moments: &MomentSet, x: &[f64]) -> Rank3 {
    averaged_coeffs_signed(field, moments, x, 1.0)
}

/// `third_sign = −1` flips the third-moment term; used only for fault
/// injection in the validation suite.
pub(crate) fn averaged_coeffs_signed(
    field: &FieldConfiguration,
    moments: &MomentSet,
    x: &[f64],
    third_sign: f64,
) -> Rank3 {
    let d = field.dim();
    let m = moments.in_chart(field.chart, x);
    let g = field.chart.metric_at(&field.metric, x);
    let fm = field.field_mixed(x);
    let m1_low = g.mul_vec(&m.m1);
    let fm1 = fm.mul_vec(&m.m1);
    // m3_low[m][j][k] = g_js g_kl m3^{msl}
    let mut m3_low = Rank3::zeros(d);
    for a in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for sidx in 0..d {
                    let gjs = g.get(j, sidx);
                    if gjs == 0.0 {
                        continue;
                    }
                    for l in 0..d {
                        s += gjs * g.get(k, l) * m.m3.get(a, sidx, l);
                    }
                }
                m3_low.set(a, j, k, s);
            }
        }
    }
    let mut c = field.chart.christoffel(x);
    for i in 0..d {
        for j in 0..d {
            for k in j..d {
                let mut v = 0.5 * (fm.get(i, j) * m1_low[k] + fm.get(i, k) * m1_low[j]);
                v += 0.5 * fm1[i] * g.get(j, k);
                let mut t = 0.0;
                for a in 0..d {
                    t += fm.get(i, a) * m3_low.get(a, j, k);
                }
                v -= third_sign * 0.5 * t;
                c.add(i, j, k, v);
                if k != j {
                    c.add(i, k, j, v);
                }
            }
        }
    }
    c
}

/// Moments sampled on a uniform laboratory-time grid, interpolated with
/// four-point Lagrange polynomials.
#[derive(Clone, Debug)]
pub struct MomentHistory {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<MomentSet>,
}

impl MomentHistory {
    pub fn new(t0: f64, dt: f64, samples: Vec<MomentSet>) -> Result<Self> {
        if samples.len() < 4 || !(dt > 0.0) {
            return Err(Error::Domain(
                "moment history needs at least 4 samples and positive spacing".into(),
            ));
        }
        Ok(MomentHistory { t0, dt, samples })
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.samples.len() - 1) as f64
    }

    /// Interpolated moments at laboratory time `t`; extrapolates from the
    /// nearest stencil outside the sampled range.
    pub fn at(&self, t: f64) -> MomentSet {
        let n = self.samples.len();
        let s = (t - self.t0) / self.dt;
        let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let nodes: Vec<f64> = (0..4).map(|q| (base + q) as f64).collect();
        let mut parts = Vec::with_capacity(4);
        for q in 0..4 {
            let mut c = 1.0;
            for r in 0..4 {
                if r != q {
                    c *= (s - nodes[r]) / (nodes[q] - nodes[r]);
                }
            }
            parts.push((c, &self.samples[base + q]));
        }
        MomentSet::lerp_combine(&parts)
    }
}

/// Source of moments for [`AveragedConnection`].
#[derive(Clone, Debug)]
pub enum MomentProvider {
    /// One moment set everywhere: the narrow-bunch regime.
    Constant(MomentSet),
    /// Moments of particles within `radius` of the evaluation point, falling
    /// back to `fallback` when the neighborhood is empty.
    Kernel {
        ensemble: Arc<Ensemble>,
        radius: f64,
        fallback: MomentSet,
    },
    /// Global moments of a transported bunch as a function of lab time `x⁰`.
    History(Arc<MomentHistory>),
}

/// The affine connection obtained by averaging the Lorentz connection.
#[derive(Clone, Debug)]
pub struct AveragedConnection {
    pub field: FieldConfiguration,
    pub provider: MomentProvider,
    third_sign: f64,
}

impl AveragedConnection {
    pub fn new(field: FieldConfiguration, provider: MomentProvider) -> Self {
        AveragedConnection {
            field,
            provider,
            third_sign: 1.0,
        }
    }

    pub fn constant(field: FieldConfiguration, moments: MomentSet) -> Self {
        Self::new(field, MomentProvider::Constant(moments))
    }

    /// Fault injection: flips the sign of the third-moment term.
    #[doc(hidden)]
    pub fn with_flipped_third_moment(mut self) -> Self {
        self.third_sign = -self.third_sign;
        self
    }

    /// Moments used at chart point `x`.
    pub fn moments_at(&self, x: &[f64]) -> Result<MomentSet> {
        match &self.provider {
            MomentProvider::Constant(m) => Ok(m.clone()),
            MomentProvider::Kernel {
                ensemble,
                radius,
                fallback,
            } => {
                let xi = self.field.chart.to_inertial(x);
                match compute_moments(ensemble, &xi, &MomentMode::Kernel { radius: *radius }) {
                    Ok(m) => Ok(m),
                    Err(Error::DegenerateMoments(_)) => Ok(fallback.clone()),
                    Err(e) => Err(e),
                }
            }
            MomentProvider::History(h) => Ok(h.at(x[0])),
        }
    }
}

impl ConnectionField for AveragedConnection {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        match self.provider {
            MomentProvider::Constant(_) => "averaged/constant".into(),
            MomentProvider::Kernel { .. } => "averaged/kernel".into(),
            MomentProvider::History(_) => "averaged/history".into(),
        }
    }

    fn coeffs(&self, x: &[f64], _y: &[f64]) -> Result<Rank3> {
        let m = self.moments_at(x)?;
        Ok(averaged_coeffs_signed(&self.field, &m, x, self.third_sign))
    }

    /// `−Γ̄(y, y)` contracted in closed form:
    /// `−ηΓ(y, y) − F y ⟨v·y⟩ − ½ F⟨v⟩ g(y, y) + ½ F ⟨v (v·y)²⟩`.
    fn acceleration(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let d = y.len();
        let m = self.moments_at(x)?.in_chart(self.field.chart, x);
        let g = self.field.chart.metric_at(&self.field.metric, x);
        let fm = self.field.field_mixed(x);
        let lc = self.field.chart.christoffel(x).contract(y, y);
        let yl = g.mul_vec(y);
        let m1y: f64 = m.m1.iter().zip(&yl).map(|(a, b)| a * b).sum();
        let yy = g.bilinear(y, y);
        let fy = fm.mul_vec(y);
        let fm1 = fm.mul_vec(&m.m1);
        let ft = fm.mul_vec(&m.centered.cubic_contraction(&g, y));
        Ok((0..d)
            .map(|i| -lc[i] - fy[i] * m1y - 0.5 * fm1[i] * yy + 0.5 * self.third_sign * ft[i])
            .collect())
    }

    fn norm_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        self.field.chart.metric_at(&self.field.metric, x).bilinear(y, y)
    }
}

/// Quadratic chart `x′ = (x − x₀) + ½ Γ̄(x₀)(x − x₀)(x − x₀)` in which the
/// coefficients of a symmetric affine connection vanish at `x₀`.
#[derive(Clone, Debug)]
pub struct NormalFrame {
    pub origin: Vec<f64>,
    pub gamma0: Rank3,
}

/// Builds normal coordinates at `x0`. Only affine connections qualify.
pub fn normal_frame(conn: &dyn ConnectionField, x0: &[f64]) -> Result<NormalFrame> {
    if !conn.is_affine() {
        return Err(Error::Domain(
            "normal coordinates need an affine connection".into(),
        ));
    }
    let mut probe = vec![0.0; x0.len()];
    probe[0] = 1.0;
    let gamma0 = conn.coeffs(x0, &probe)?;
    Ok(NormalFrame {
        origin: x0.to_vec(),
        gamma0,
    })
}

impl NormalFrame {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let dx: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        let q = self.gamma0.contract(&dx, &dx);
        dx.iter().zip(&q).map(|(a, b)| a + 0.5 * b).collect()
    }

    /// `∂x′/∂x` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Mat {
        let d = x.len();
        let dx: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        Mat::from_fn(d, |a, i| {
            let lin: f64 = (0..d).map(|j| self.gamma0.get(a, i, j) * dx[j]).sum();
            if a == i {
                1.0 + lin
            } else {
                lin
            }
        })
    }

    /// Inverse map by Newton iteration.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut x: Vec<f64> = z.iter().zip(&self.origin).map(|(a, b)| a + b).collect();
        for _ in 0..50 {
            let r: Vec<f64> = self.forward(&x).iter().zip(z).map(|(a, b)| a - b).collect();
            let err = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if err <= 1e-15 * (1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                return Ok(x);
            }
            let jinv = self
                .jacobian(&x)
                .inverse()
                .ok_or_else(|| Error::Domain("normal chart is singular here".into()))?;
            let step = jinv.mul_vec(&r);
            x.iter_mut().zip(&step).for_each(|(a, s)| *a -= s);
        }
        Err(Error::Domain("normal chart inversion did not converge".into()))
    }

    /// Coefficients of `conn` expressed in the normal chart, at original point `x`:
    /// `Γ′^a_bc = J^a_i Γ^i_jk K^j_b K^k_c − K^j_b K^k_c ∂²x′^a/∂x^j∂x^k`, with `K = J⁻¹`.
    pub fn transformed_coeffs(&self, conn: &dyn ConnectionField, x: &[f64]) -> Result<Rank3> {
        let d = x.len();
        let mut probe = vec![0.0; d];
        probe[0] = 1.0;
        let gamma = conn.coeffs(x, &probe)?;
        let j = self.jacobian(x);
        let k = j
            .inverse()
            .ok_or_else(|| Error::Domain("normal chart is singular here".into()))?;
        let mut out = Rank3::zeros(d);
        // inner[i][b][c] = (Γ^i_jk − J^{-1}·H ... ) computed in two passes
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let mut s = 0.0;
                    for jj in 0..d {
                        for kk in 0..d {
                            let kk_bc = k.get(jj, b) * k.get(kk, c);
                            if kk_bc == 0.0 {
                                continue;
                            }
                            let mut t = -self.gamma0.get(a, jj, kk);
                            for i in 0..d {
                                t += j.get(a, i) * gamma.get(i, jj, kk);
                            }
                            s += t * kk_bc;
                        }
                    }
                    out.set(a, b, c, s);
                }
            }
        }
        Ok(out)
    }
}
