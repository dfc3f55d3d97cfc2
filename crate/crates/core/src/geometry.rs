//! Minkowski metric, coordinate charts, the electromagnetic potential
//! catalog and the velocity-dependent Lorentz connection.
//!
//! Conventions: signature (+, −, …, −), c = 1, and the charge-to-mass ratio
//! is folded into the field tensor. A vector `y` is timelike when
//! `η(y, y) > 0`. The autoparallel equation of the Lorentz connection is
//!
//! ```text
//! ÿ^i + ηΓ^i_jk y^j y^k + √η(y,y) F^i_m y^m = 0
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Rank3};

/// Vectors with `η(y, y)` at or below this value are rejected as non-timelike.
pub const TIMELIKE_EPS: f64 = 1e-10;

/// Flat metric of signature (+, −, …, −) in `dim` spacetime dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Metric {
    dim: usize,
}

impl Metric {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "spacetime dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Metric { dim })
    }

    /// The usual four-dimensional Minkowski metric.
    pub fn minkowski() -> Self {
        Metric { dim: 4 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal entry `η_ii`; equal to `η^ii`.
    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a[0] * b[0] - a[1..self.dim].iter().zip(&b[1..self.dim]).map(|(x, y)| x * y).sum::<f64>()
    }

    #[inline]
    pub fn norm_sq(&self, y: &[f64]) -> f64 {
        self.dot(y, y)
    }

    pub fn lower(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| self.sign(i) * y[i]).collect()
    }

    pub fn raise(&self, y: &[f64]) -> Vec<f64> {
        self.lower(y)
    }

    pub fn matrix(&self) -> Mat {
        Mat::from_fn(self.dim, |i, j| if i == j { self.sign(i) } else { 0.0 })
    }

    pub fn is_timelike(&self, y: &[f64]) -> bool {
        self.norm_sq(y) > TIMELIKE_EPS
    }

    /// Returns `η(y, y)` or a domain error when `y` is not timelike.
    pub fn require_timelike(&self, y: &[f64]) -> Result<f64> {
        let n = self.norm_sq(y);
        if n > TIMELIKE_EPS && n.is_finite() {
            Ok(n)
        } else {
            Err(Error::NotTimelike { norm: n })
        }
    }

    /// Unit timelike vector with energy `gamma` moving along spatial `axis`.
    pub fn boosted_unit(&self, gamma: f64, axis: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        y[0] = gamma;
        y[axis] = (gamma * gamma - 1.0).max(0.0).sqrt();
        y
    }

    /// Puts `y` back on the unit hyperboloid by recomputing `y⁰` from the
    /// spatial part.
    pub fn project_to_shell(&self, y: &mut [f64]) {
        let s: f64 = y[1..self.dim].iter().map(|v| v * v).sum();
        y[0] = (1.0 + s).sqrt();
    }
}

/// Coordinate chart on flat spacetime.
///
/// Dynamics runs in the inertial chart; the cylindrical chart replaces the
/// spatial pair (x¹, x²) by (r, φ) and exists to exercise the covariant form
/// of the equations with non-vanishing Levi-Civita coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    Inertial,
    Cylindrical,
}

impl Chart {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "inertial" => Ok(Chart::Inertial),
            "cylindrical" => Ok(Chart::Cylindrical),
            other => Err(Error::Config(format!("unknown chart '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Chart::Inertial => "inertial",
            Chart::Cylindrical => "cylindrical",
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if *self == Chart::Cylindrical && dim < 3 {
            return Err(Error::Config(
                "cylindrical chart needs at least two spatial dimensions".into(),
            ));
        }
        Ok(())
    }

    pub fn to_inertial(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Chart::Inertial => x.to_vec(),
            Chart::Cylindrical => {
                let mut out = x.to_vec();
                let (r, phi) = (x[1], x[2]);
                out[1] = r * phi.cos();
                out[2] = r * phi.sin();
                out
            }
        }
    }

    pub fn from_inertial(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Chart::Inertial => x.to_vec(),
            Chart::Cylindrical => {
                let mut out = x.to_vec();
                out[1] = x[1].hypot(x[2]);
                out[2] = x[2].atan2(x[1]);
                out
            }
        }
    }

    /// `∂X^a/∂x^i` with X inertial, x chart coordinates; row index a.
    pub fn jacobian(&self, x: &[f64]) -> Mat {
        let d = x.len();
        let mut j = Mat::identity(d);
        if let Chart::Cylindrical = self {
            let (r, phi) = (x[1], x[2]);
            let (s, c) = phi.sin_cos();
            j.set(1, 1, c);
            j.set(1, 2, -r * s);
            j.set(2, 1, s);
            j.set(2, 2, r * c);
        }
        j
    }

    /// `∂x^i/∂X^a`; row index i.
    pub fn inverse_jacobian(&self, x: &[f64]) -> Mat {
        let d = x.len();
        let mut j = Mat::identity(d);
        if let Chart::Cylindrical = self {
            let (r, phi) = (x[1], x[2]);
            let (s, c) = phi.sin_cos();
            j.set(1, 1, c);
            j.set(1, 2, s);
            j.set(2, 1, -s / r);
            j.set(2, 2, c / r);
        }
        j
    }

    /// `∂²X^a/∂x^i∂x^j`, stored as `h[a][i][j]`.
    pub fn hessian(&self, x: &[f64]) -> Rank3 {
        let d = x.len();
        let mut h = Rank3::zeros(d);
        if let Chart::Cylindrical = self {
            let (r, phi) = (x[1], x[2]);
            let (s, c) = phi.sin_cos();
            // X¹ = r cos φ
            h.set(1, 1, 2, -s);
            h.set(1, 2, 1, -s);
            h.set(1, 2, 2, -r * c);
            // X² = r sin φ
            h.set(2, 1, 2, c);
            h.set(2, 2, 1, c);
            h.set(2, 2, 2, -r * s);
        }
        h
    }

    /// Metric components `g_ij` in this chart.
    pub fn metric_at(&self, metric: &Metric, x: &[f64]) -> Mat {
        let mut g = metric.matrix();
        if let Chart::Cylindrical = self {
            g.set(2, 2, -x[1] * x[1]);
        }
        g
    }

    /// Inverse metric components `g^ij`.
    pub fn inverse_metric_at(&self, metric: &Metric, x: &[f64]) -> Mat {
        let mut g = metric.matrix();
        if let Chart::Cylindrical = self {
            g.set(2, 2, -1.0 / (x[1] * x[1]));
        }
        g
    }

    /// Levi-Civita coefficients of η in this chart.
    pub fn christoffel(&self, x: &[f64]) -> Rank3 {
        let d = x.len();
        let mut c = Rank3::zeros(d);
        if let Chart::Cylindrical = self {
            let r = x[1];
            c.set(1, 2, 2, -r);
            c.set(2, 1, 2, 1.0 / r);
            c.set(2, 2, 1, 1.0 / r);
        }
        c
    }

    /// Push a chart-component vector at `x` to inertial components.
    pub fn push_vector(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.jacobian(x).mul_vec(v)
    }

    /// Pull inertial components of a vector at chart point `x` back to the chart.
    pub fn pull_vector(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.inverse_jacobian(x).mul_vec(v)
    }
}

/// Name plus numeric parameters, as written in a scenario file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl PotentialSpec {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        PotentialSpec {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// Closed catalog of analytic potentials `A_j(x)` in inertial coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `A_0 = k x^axis`, so `F_{0,axis} = −k`.
    UniformElectric { strength: f64, axis: usize },
    /// `A_b = k x^a`, so `F_ab = k`.
    UniformMagnetic { strength: f64, a: usize, b: usize },
    /// `A_0 = e x²` plus `A_2 = b x¹`.
    Crossed { electric: f64, magnetic: f64 },
    /// `A_p = amplitude · sin(k (x⁰ − x^q))`.
    PlaneWave {
        amplitude: f64,
        wavenumber: f64,
        polarization: usize,
        direction: usize,
    },
    /// `A_0 = a (x¹)²/2`, `A_2 = b (x¹)²/2`: fields growing linearly in x¹.
    Polynomial { a: f64, b: f64 },
}

fn take_param(
    params: &mut BTreeMap<String, f64>,
    key: &str,
    default: Option<f64>,
) -> Result<f64> {
    match params.remove(key) {
        Some(v) if v.is_finite() => Ok(v),
        Some(v) => Err(Error::Config(format!("parameter '{key}' is not finite: {v}"))),
        None => default.ok_or_else(|| Error::Config(format!("missing parameter '{key}'"))),
    }
}

fn take_axis(
    params: &mut BTreeMap<String, f64>,
    key: &str,
    default: usize,
    dim: usize,
) -> Result<usize> {
    let v = take_param(params, key, Some(default as f64))?;
    if v.fract() != 0.0 || v < 1.0 || v >= dim as f64 {
        return Err(Error::Config(format!(
            "'{key}' must be a spatial axis in 1..{}, got {v}",
            dim - 1
        )));
    }
    Ok(v as usize)
}

impl Potential {
    pub fn from_spec(spec: &PotentialSpec, dim: usize) -> Result<Self> {
        let mut p = spec.params.clone();
        let need_3 = |name: &str| -> Result<()> {
            if dim < 3 {
                Err(Error::Config(format!(
                    "potential '{name}' needs at least two spatial dimensions"
                )))
            } else {
                Ok(())
            }
        };
        let pot = match spec.name.as_str() {
            "zero" => Potential::Zero,
            "uniform_electric" => Potential::UniformElectric {
                strength: take_param(&mut p, "strength", None)?,
                axis: take_axis(&mut p, "axis", 1, dim)?,
            },
            "uniform_magnetic" => {
                need_3("uniform_magnetic")?;
                let strength = take_param(&mut p, "strength", None)?;
                let a = take_axis(&mut p, "axis_a", 1, dim)?;
                let b = take_axis(&mut p, "axis_b", 2, dim)?;
                if a == b {
                    return Err(Error::Config("magnetic axes must differ".into()));
                }
                Potential::UniformMagnetic { strength, a, b }
            }
            "crossed" => {
                need_3("crossed")?;
                Potential::Crossed {
                    electric: take_param(&mut p, "electric", None)?,
                    magnetic: take_param(&mut p, "magnetic", None)?,
                }
            }
            "plane_wave" => {
                need_3("plane_wave")?;
                let polarization = take_axis(&mut p, "polarization", 1, dim)?;
                let direction = take_axis(&mut p, "direction", dim - 1, dim)?;
                if polarization == direction {
                    return Err(Error::Config(
                        "plane wave polarization must be transverse to its direction".into(),
                    ));
                }
                Potential::PlaneWave {
                    amplitude: take_param(&mut p, "amplitude", None)?,
                    wavenumber: take_param(&mut p, "wavenumber", None)?,
                    polarization,
                    direction,
                }
            }
            "polynomial" => {
                need_3("polynomial")?;
                Potential::Polynomial {
                    a: take_param(&mut p, "a", None)?,
                    b: take_param(&mut p, "b", None)?,
                }
            }
            other => return Err(Error::Config(format!("unknown potential '{other}'"))),
        };
        if let Some(k) = p.keys().next() {
            return Err(Error::Config(format!(
                "unknown parameter '{k}' for potential '{}'",
                spec.name
            )));
        }
        Ok(pot)
    }

    /// `A_j(X)` in inertial coordinates.
    pub fn potential(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut a = vec![0.0; d];
        match *self {
            Potential::Zero => {}
            Potential::UniformElectric { strength, axis } => a[0] = strength * x[axis],
            Potential::UniformMagnetic { strength, a: i, b } => a[b] = strength * x[i],
            Potential::Crossed { electric, magnetic } => {
                a[0] = electric * x[2];
                a[2] = magnetic * x[1];
            }
            Potential::PlaneWave {
                amplitude,
                wavenumber,
                polarization,
                direction,
            } => a[polarization] = amplitude * (wavenumber * (x[0] - x[direction])).sin(),
            Potential::Polynomial { a: ca, b: cb } => {
                a[0] = 0.5 * ca * x[1] * x[1];
                a[2] = 0.5 * cb * x[1] * x[1];
            }
        }
        a
    }

    /// Analytic `F_ij = ∂_i A_j − ∂_j A_i` in inertial coordinates.
    pub fn field(&self, x: &[f64]) -> Mat {
        let d = x.len();
        let mut f = Mat::zeros(d);
        let mut put = |i: usize, j: usize, v: f64| {
            f.add(i, j, v);
            f.add(j, i, -v);
        };
        match *self {
            Potential::Zero => {}
            Potential::UniformElectric { strength, axis } => put(axis, 0, strength),
            Potential::UniformMagnetic { strength, a, b } => put(a, b, strength),
            Potential::Crossed { electric, magnetic } => {
                put(2, 0, electric);
                put(1, 2, magnetic);
            }
            Potential::PlaneWave {
                amplitude,
                wavenumber,
                polarization,
                direction,
            } => {
                let g = amplitude * wavenumber * (wavenumber * (x[0] - x[direction])).cos();
                put(0, polarization, g);
                put(direction, polarization, -g);
            }
            Potential::Polynomial { a, b } => {
                put(1, 0, a * x[1]);
                put(1, 2, b * x[1]);
            }
        }
        f
    }
}

/// A potential together with the metric and chart it is evaluated in.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfiguration {
    pub metric: Metric,
    pub chart: Chart,
    pub potential: Potential,
}

impl FieldConfiguration {
    pub fn new(metric: Metric, chart: Chart, potential: Potential) -> Result<Self> {
        chart.check_dim(metric.dim())?;
        Ok(FieldConfiguration {
            metric,
            chart,
            potential,
        })
    }

    pub fn from_spec(dim: usize, chart: &str, spec: &PotentialSpec) -> Result<Self> {
        let metric = Metric::new(dim)?;
        let chart = Chart::from_name(chart)?;
        Self::new(metric, chart, Potential::from_spec(spec, dim)?)
    }

    /// Inertial chart, given potential.
    pub fn inertial(dim: usize, potential: Potential) -> Result<Self> {
        Self::new(Metric::new(dim)?, Chart::Inertial, potential)
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// `A_i` in chart components.
    pub fn potential_at(&self, x: &[f64]) -> Vec<f64> {
        let xi = self.chart.to_inertial(x);
        let a = self.potential.potential(&xi);
        let j = self.chart.jacobian(x);
        j.transpose().mul_vec(&a)
    }

    /// `F_ij` in chart components.
    pub fn field_tensor(&self, x: &[f64]) -> Mat {
        let f = self.potential.field(&self.chart.to_inertial(x));
        match self.chart {
            Chart::Inertial => f,
            _ => {
                let j = self.chart.jacobian(x);
                j.transpose().mul(&f).mul(&j)
            }
        }
    }

    /// `F^i_j = g^ik F_kj`.
    pub fn field_mixed(&self, x: &[f64]) -> Mat {
        let f = self.field_tensor(x);
        let ginv = self.chart.inverse_metric_at(&self.metric, x);
        ginv.mul(&f)
    }
}

/// Coefficient map `Γ^i_jk(x, y)` shared by the Levi-Civita, Lorentz and
/// averaged connections.
pub trait ConnectionField: Send + Sync {
    fn dim(&self) -> usize;

    /// True iff the coefficients do not depend on `y`.
    fn is_affine(&self) -> bool;

    /// Short identifier recorded with trajectories.
    fn id(&self) -> String;

    fn coeffs(&self, x: &[f64], y: &[f64]) -> Result<Rank3>;

    /// Metric norm `g(y, y)` at `x`; used by the solver's cone checks.
    fn norm_sq(&self, x: &[f64], y: &[f64]) -> f64;

    /// Whether solutions are required to stay timelike.
    fn requires_timelike(&self) -> bool {
        !self.is_affine()
    }

    /// Autoparallel right-hand side `a^i = −Γ^i_jk y^j y^k`.
    fn acceleration(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let c = self.coeffs(x, y)?;
        Ok(c.contract(y, y).into_iter().map(|v| -v).collect())
    }
}

/// Levi-Civita connection of η in a chart.
#[derive(Clone, Debug)]
pub struct LeviCivita {
    pub metric: Metric,
    pub chart: Chart,
}

impl ConnectionField for LeviCivita {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn id(&self) -> String {
        format!("levi-civita/{}", self.chart.name())
    }

    fn coeffs(&self, x: &[f64], _y: &[f64]) -> Result<Rank3> {
        Ok(self.chart.christoffel(x))
    }

    fn norm_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        self.chart.metric_at(&self.metric, x).bilinear(y, y)
    }
}

/// Non-affine connection whose autoparallels are the solutions of the
/// Lorentz force equation.
#[derive(Clone, Debug)]
pub struct LorentzConnection {
    pub field: FieldConfiguration,
}

impl LorentzConnection {
    pub fn new(field: FieldConfiguration) -> Self {
        LorentzConnection { field }
    }
}

/// Lorentz connection coefficients at `(x, y)`:
///
/// ```text
/// Γ^i_jk = ηΓ^i_jk + (F^i_j y_k + F^i_k y_j) / (2√n)
///        + F^i_m y^m / (2√n) · (g_jk − y_j y_k / n),     n = g(y, y)
/// ```
pub fn lorentz_coeffs(field: &FieldConfiguration, x: &[f64], y: &[f64]) -> Result<Rank3> {
    let d = field.dim();
    let g = field.chart.metric_at(&field.metric, x);
    let n = g.bilinear(y, y);
    if !(n > TIMELIKE_EPS && n.is_finite()) {
        return Err(Error::NotTimelike { norm: n });
    }
    let root = n.sqrt();
    let fm = field.field_mixed(x);
    let y_low = g.mul_vec(y);
    let fy = fm.mul_vec(y);
    let mut c = field.chart.christoffel(x);
    let half_inv_root = 0.5 / root;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let first = (fm.get(i, j) * y_low[k] + fm.get(i, k) * y_low[j]) * half_inv_root;
                let second = fy[i] * half_inv_root * (g.get(j, k) - y_low[j] * y_low[k] / n);
                c.add(i, j, k, first + second);
            }
        }
    }
    Ok(c)
}

impl ConnectionField for LorentzConnection {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn is_affine(&self) -> bool {
        false
    }

    fn id(&self) -> String {
        "lorentz".into()
    }

    fn coeffs(&self, x: &[f64], y: &[f64]) -> Result<Rank3> {
        lorentz_coeffs(&self.field, x, y)
    }

    /// `−ηΓ(y, y) − √n F^i_m y^m`, the contraction of [`lorentz_coeffs`]
    /// without its `γ⁴` cancellation.
    fn acceleration(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let g = self.field.chart.metric_at(&self.field.metric, x);
        let n = g.bilinear(y, y);
        if !(n > TIMELIKE_EPS && n.is_finite()) {
            return Err(Error::NotTimelike { norm: n });
        }
        let root = n.sqrt();
        let lc = self.field.chart.christoffel(x).contract(y, y);
        let fy = self.field.field_mixed(x).mul_vec(y);
        Ok(lc.iter().zip(&fy).map(|(a, b)| -a - root * b).collect())
    }

    fn norm_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        self.field.chart.metric_at(&self.field.metric, x).bilinear(y, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_field(p: &Potential, x: &[f64], h: f64) -> Mat {
        let d = x.len();
        // ∂_i A_j by central differences
        let mut grad = Mat::zeros(d);
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let ap = p.potential(&xp);
            let am = p.potential(&xm);
            for j in 0..d {
                grad.set(i, j, (ap[j] - am[j]) / (2.0 * h));
            }
        }
        Mat::from_fn(d, |i, j| grad.get(i, j) - grad.get(j, i))
    }

    fn catalog() -> Vec<Potential> {
        vec![
            Potential::Zero,
            Potential::UniformElectric { strength: 0.7, axis: 1 },
            Potential::UniformMagnetic { strength: 1.3, a: 1, b: 2 },
            Potential::Crossed { electric: 0.4, magnetic: 0.9 },
            Potential::PlaneWave {
                amplitude: 0.5,
                wavenumber: 2.0,
                polarization: 1,
                direction: 3,
            },
            Potential::Polynomial { a: 0.3, b: -0.2 },
        ]
    }

    #[test]
    fn zero_potential_has_zero_field() {
        let f = Potential::Zero.field(&[0.3, 1.0, -2.0, 0.5]);
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn uniform_electric_matches_finite_differences() {
        let k = 1.7;
        let p = Potential::UniformElectric { strength: k, axis: 1 };
        let x = [0.2, 0.4, -0.1, 0.9];
        let fd = fd_field(&p, &x, 1e-4);
        assert!((fd.get(0, 1) + k).abs() < 1e-9);
        assert!((fd.get(1, 0) - k).abs() < 1e-9);
        let f = p.field(&x);
        assert_eq!(f.get(0, 1), -k);
        assert_eq!(f.get(1, 0), k);
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) != (0, 1) && (i, j) != (1, 0) {
                    assert_eq!(f.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn uniform_magnetic_matches_finite_differences() {
        let k = 0.8;
        let p = Potential::UniformMagnetic { strength: k, a: 1, b: 2 };
        let x = [1.0, -0.3, 0.7, 0.2];
        let fd = fd_field(&p, &x, 1e-4);
        assert!((fd.get(1, 2) - k).abs() < 1e-9);
        assert!((fd.get(2, 1) + k).abs() < 1e-9);
        let f = p.field(&x);
        assert_eq!(f.get(1, 2), k);
        assert_eq!(f.get(2, 1), -k);
    }

    #[test]
    fn catalog_fields_are_exterior_derivatives() {
        let x = [0.3, 0.8, -0.4, 0.25];
        for p in catalog() {
            let f = p.field(&x);
            let fd = fd_field(&p, &x, 1e-4);
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(f.get(i, j), -f.get(j, i), "{p:?}");
                    assert!((f.get(i, j) - fd.get(i, j)).abs() < 1e-7, "{p:?} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn catalog_fields_are_closed() {
        let x = [0.3, 0.8, -0.4, 0.25];
        let h = 1e-4;
        for p in catalog() {
            let d = 4;
            let df = |i: usize, j: usize, k: usize| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (p.field(&xp).get(j, k) - p.field(&xm).get(j, k)) / (2.0 * h)
            };
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let cyc = df(i, j, k) + df(j, k, i) + df(k, i, j);
                        assert!(cyc.abs() < 1e-7, "{p:?}: {cyc}");
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_potential_is_config_error() {
        let spec = PotentialSpec::new("monopole", &[]);
        assert!(matches!(Potential::from_spec(&spec, 4), Err(Error::Config(_))));
        let spec = PotentialSpec::new("uniform_magnetic", &[("strength", 1.0), ("tilt", 2.0)]);
        assert!(matches!(Potential::from_spec(&spec, 4), Err(Error::Config(_))));
        let spec = PotentialSpec::new("uniform_magnetic", &[]);
        assert!(matches!(Potential::from_spec(&spec, 4), Err(Error::Config(_))));
    }

    #[test]
    fn metric_lower_raise_round_trip() {
        let m = Metric::minkowski();
        let y = [1.5, -0.3, 0.2, 7.0];
        assert_eq!(m.raise(&m.lower(&y)), y.to_vec());
        assert!(Metric::new(1).is_err());
    }

    #[test]
    fn chart_round_trip_and_symmetric_christoffel() {
        let c = Chart::Cylindrical;
        for x in [[0.1, 1.0, 2.0, 0.3], [2.0, -0.5, 0.25, -1.0], [0.0, 3.0, -1.0, 0.0]] {
            let back = c.to_inertial(&c.from_inertial(&x));
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let x = [0.0, 1.3, 0.4, 0.0];
        assert_eq!(c.christoffel(&x).lower_asymmetry(), 0.0);
        assert_eq!(Chart::Inertial.christoffel(&x).max_abs(), 0.0);
        let j = c.jacobian(&x);
        let ji = c.inverse_jacobian(&x);
        let id = j.mul(&ji);
        assert!((id.max_abs() - 1.0).abs() < 1e-14);
        for i in 0..4 {
            for k in 0..4 {
                let e = if i == k { 1.0 } else { 0.0 };
                assert!((id.get(i, k) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn field_free_lorentz_coeffs_vanish() {
        let f = FieldConfiguration::inertial(4, Potential::Zero).unwrap();
        let c = lorentz_coeffs(&f, &[0.0; 4], &[2.0, 0.3, 1.0, -0.4]).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn lorentz_coeffs_reject_non_timelike() {
        let f = FieldConfiguration::inertial(4, Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 })
            .unwrap();
        let err = lorentz_coeffs(&f, &[0.0; 4], &[1.0, 1.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NotTimelike { norm } if norm == 0.0));
        assert!(lorentz_coeffs(&f, &[0.0; 4], &[1.0, 0.0, 2.0, 0.0]).is_err());
    }

    #[test]
    fn magnetic_acceleration_matches_field_contraction() {
        let k = 0.6;
        let f = FieldConfiguration::inertial(4, Potential::UniformMagnetic { strength: k, a: 1, b: 2 })
            .unwrap();
        let conn = LorentzConnection::new(f.clone());
        let v: f64 = 0.8;
        let g = 1.0 / (1.0 - v * v).sqrt();
        let y = [g, g * v, 0.0, 0.0];
        let a = conn.acceleration(&[0.0; 4], &y).unwrap();
        let fy = f.field_mixed(&[0.0; 4]).mul_vec(&y);
        for i in 0..4 {
            assert!((a[i] + fy[i]).abs() < 1e-12);
        }
        // circular motion: ẏ² = −k y¹
        assert!((a[2] + k * g * v).abs() < 1e-12);
        assert!((f.metric.dot(&a, &y)).abs() < 1e-12);
    }

    #[test]
    fn cylindrical_chart_is_covariant() {
        let pot = Potential::Crossed { electric: 0.3, magnetic: 0.7 };
        let inertial = LorentzConnection::new(FieldConfiguration::inertial(4, pot.clone()).unwrap());
        let cyl = LorentzConnection::new(
            FieldConfiguration::new(Metric::minkowski(), Chart::Cylindrical, pot).unwrap(),
        );
        let xc = [0.2, 1.4, 0.6, -0.3];
        let yc = [1.6, 0.3, 0.2, 0.1];
        let chart = Chart::Cylindrical;
        let xi = chart.to_inertial(&xc);
        let yi = chart.push_vector(&xc, &yc);
        let ac = cyl.acceleration(&xc, &yc).unwrap();
        // Ẍ = J ẍ + H(ẋ, ẋ)
        let mut a_pushed = chart.jacobian(&xc).mul_vec(&ac);
        let h = chart.hessian(&xc).contract(&yc, &yc);
        for i in 0..4 {
            a_pushed[i] += h[i];
        }
        let ai = inertial.acceleration(&xi, &yi).unwrap();
        for i in 0..4 {
            assert!((a_pushed[i] - ai[i]).abs() < 1e-12, "{i}: {} vs {}", a_pushed[i], ai[i]);
        }
    }
}
