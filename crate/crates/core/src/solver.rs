//! Fixed-step classical Runge–Kutta integration of the autoparallel system
//! `ẋ = y, ẏ = −Γ(x, y) y y` for any [`ConnectionField`].
//!
//! The step parameter is the proper time of the starting velocity; no
//! renormalization is applied to Lorentz runs, so conservation of `η(y, y)`
//! is a diagnostic rather than a constraint.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ConnectionField, Metric, TIMELIKE_EPS};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub conn_id: String,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntegrateOptions {
    /// Re-project `y` onto the unit shell after every step. Only honored for
    /// affine connections; Lorentz runs are never renormalized.
    pub reproject: bool,
}

fn cone_check(conn: &dyn ConnectionField, x: &[f64], y: &[f64], step: usize) -> Result<()> {
    if conn.requires_timelike() {
        let n = conn.norm_sq(x, y);
        if !(n > TIMELIKE_EPS && n.is_finite()) {
            return Err(Error::LeftCone { step, norm: n });
        }
    }
    Ok(())
}

fn accel(conn: &dyn ConnectionField, x: &[f64], y: &[f64], step: usize) -> Result<Vec<f64>> {
    cone_check(conn, x, y, step)?;
    conn.acceleration(x, y).map_err(|e| match e {
        Error::NotTimelike { norm } => Error::LeftCone { step, norm },
        other => other,
    })
}

/// One classical RK4 step of size `h` (may be negative).
pub fn rk4_step(
    conn: &dyn ConnectionField,
    x: &[f64],
    y: &[f64],
    h: f64,
    step: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = x.len();
    let k1x = y.to_vec();
    let k1y = accel(conn, x, y, step)?;
    let stage = |base: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, kk)| b + c * kk).collect()
    };
    let x2 = stage(x, &k1x, 0.5 * h);
    let y2 = stage(y, &k1y, 0.5 * h);
    let k2y = accel(conn, &x2, &y2, step)?;
    let x3 = stage(x, &y2, 0.5 * h);
    let y3 = stage(y, &k2y, 0.5 * h);
    let k3y = accel(conn, &x3, &y3, step)?;
    let x4 = stage(x, &y3, h);
    let y4 = stage(y, &k3y, h);
    let k4y = accel(conn, &x4, &y4, step)?;
    let mut xn = Vec::with_capacity(d);
    let mut yn = Vec::with_capacity(d);
    for i in 0..d {
        xn.push(x[i] + h / 6.0 * (k1x[i] + 2.0 * y2[i] + 2.0 * y3[i] + y4[i]));
        yn.push(y[i] + h / 6.0 * (k1y[i] + 2.0 * k2y[i] + 2.0 * k3y[i] + k4y[i]));
    }
    cone_check(conn, &xn, &yn, step + 1)?;
    Ok((xn, yn))
}

fn step_count(duration: f64, h: f64) -> usize {
    let r = duration / h;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        n.max(1.0) as usize
    } else {
        r.ceil() as usize
    }
}

/// Integrates for parameter duration `duration` with uniform step `h`.
pub fn integrate(
    conn: &dyn ConnectionField,
    x0: &[f64],
    y0: &[f64],
    duration: f64,
    h: f64,
) -> Result<Trajectory> {
    integrate_with(conn, x0, y0, duration, h, IntegrateOptions::default())
}

pub fn integrate_with(
    conn: &dyn ConnectionField,
    x0: &[f64],
    y0: &[f64],
    duration: f64,
    h: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Domain(format!("duration must be positive, got {duration}")));
    }
    if !(h > 0.0 && h <= duration * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("step must satisfy 0 < h <= T, got {h}")));
    }
    if x0.len() != conn.dim() || y0.len() != conn.dim() {
        return Err(Error::Domain("initial state has wrong dimension".into()));
    }
    cone_check(conn, x0, y0, 0)?;
    let n = step_count(duration, h);
    let reproject = opts.reproject && conn.is_affine();
    let metric = Metric::new(conn.dim())?;
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(Sample {
        t: 0.0,
        x: x0.to_vec(),
        y: y0.to_vec(),
    });
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    for step in 0..n {
        let (xn, mut yn) = rk4_step(conn, &x, &y, h, step)?;
        if reproject {
            metric.project_to_shell(&mut yn);
        }
        x = xn;
        y = yn;
        samples.push(Sample {
            t: (step + 1) as f64 * h,
            x: x.clone(),
            y: y.clone(),
        });
    }
    Ok(Trajectory {
        samples,
        conn_id: conn.id(),
        h,
    })
}

/// Final state after flowing for signed parameter time `tau`.
pub fn flow(
    conn: &dyn ConnectionField,
    x0: &[f64],
    y0: &[f64],
    tau: f64,
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if tau == 0.0 {
        return Ok((x0.to_vec(), y0.to_vec()));
    }
    let n = step_count(tau.abs(), h.abs());
    let hs = tau / n as f64;
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    for step in 0..n {
        let (xn, yn) = rk4_step(conn, &x, &y, hs, step)?;
        x = xn;
        y = yn;
    }
    Ok((x, y))
}

fn lagrange4(ts: [f64; 4], vs: [&[f64]; 4], t: f64) -> Vec<f64> {
    let d = vs[0].len();
    let mut out = vec![0.0; d];
    for q in 0..4 {
        let mut c = 1.0;
        for r in 0..4 {
            if r != q {
                c *= (t - ts[r]) / (ts[q] - ts[r]);
            }
        }
        for i in 0..d {
            out[i] += c * vs[q][i];
        }
    }
    out
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn dim(&self) -> usize {
        self.samples[0].x.len()
    }

    /// Largest `|η(y, y) − η(y₀, y₀)|` along the trajectory.
    pub fn norm_drift(&self, metric: &Metric) -> f64 {
        let n0 = metric.norm_sq(&self.samples[0].y);
        self.samples
            .iter()
            .map(|s| (metric.norm_sq(&s.y) - n0).abs())
            .fold(0.0, f64::max)
    }

    /// Laboratory time `x⁰` of the last sample.
    pub fn lab_end(&self) -> f64 {
        self.last().x[0]
    }

    /// State `(τ, x, y)` at laboratory time `t_lab`, by cubic Hermite
    /// interpolation of `x` (using `ẋ = y`) and four-point Lagrange
    /// interpolation of `y`. `None` outside the covered range.
    pub fn at_lab_time(&self, t_lab: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let n = self.samples.len();
        if n < 4 {
            return None;
        }
        let first = self.samples[0].x[0];
        let last = self.samples[n - 1].x[0];
        if t_lab < first.min(last) || t_lab > first.max(last) {
            return None;
        }
        // x⁰ is monotone for future-directed timelike motion
        let k = match self.samples.binary_search_by(|s| s.x[0].total_cmp(&t_lab)) {
            Ok(k) => return Some((self.samples[k].t, self.samples[k].x.clone(), self.samples[k].y.clone())),
            Err(k) => k.clamp(1, n - 1) - 1,
        };
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        let h = b.t - a.t;
        let hermite = |s: f64, p0: f64, m0: f64, p1: f64, m1: f64| {
            let s2 = s * s;
            let s3 = s2 * s;
            (2.0 * s3 - 3.0 * s2 + 1.0) * p0
                + (s3 - 2.0 * s2 + s) * h * m0
                + (-2.0 * s3 + 3.0 * s2) * p1
                + (s3 - s2) * h * m1
        };
        let dhermite = |s: f64, p0: f64, m0: f64, p1: f64, m1: f64| {
            let s2 = s * s;
            ((6.0 * s2 - 6.0 * s) * p0 + (3.0 * s2 - 4.0 * s + 1.0) * h * m0 + (-6.0 * s2 + 6.0 * s) * p1
                + (3.0 * s2 - 2.0 * s) * h * m1)
                / h
        };
        let mut s = (t_lab - a.x[0]) / (b.x[0] - a.x[0]);
        for _ in 0..50 {
            let f = hermite(s, a.x[0], a.y[0], b.x[0], b.y[0]) - t_lab;
            let df = dhermite(s, a.x[0], a.y[0], b.x[0], b.y[0]);
            let ds = f / df;
            s -= ds;
            if ds.abs() < 1e-15 {
                break;
            }
        }
        let d = a.x.len();
        let x: Vec<f64> = (0..d).map(|i| hermite(s, a.x[i], a.y[i], b.x[i], b.y[i])).collect();
        let tau = a.t + s * h;
        let base = k.saturating_sub(1).min(n - 4);
        let ts = [0, 1, 2, 3].map(|q| self.samples[base + q].t);
        let vs = [0, 1, 2, 3].map(|q| self.samples[base + q].y.as_slice());
        let y = lagrange4(ts, vs, tau);
        Some((tau, x, y))
    }
}

/// Outcome of a step-halving order measurement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub steps: [f64; 3],
    /// `|X_h − X_{h/2}|` and `|X_{h/2} − X_{h/4}|` of the final state.
    pub differences: [f64; 2],
    /// Measured order, absent when saturated.
    pub order: Option<f64>,
    pub saturated: bool,
}

/// Differences below this (relative to the state scale) count as roundoff.
pub const SATURATION_FLOOR: f64 = 1e-13;

fn final_state(t: &Trajectory) -> Vec<f64> {
    let s = t.last();
    s.x.iter().chain(&s.y).copied().collect()
}

/// Richardson order estimate from runs at steps `h`, `h/2`, `h/4`.
pub fn convergence_order(
    conn: &dyn ConnectionField,
    x0: &[f64],
    y0: &[f64],
    duration: f64,
    h: f64,
) -> Result<ConvergenceReport> {
    let steps = [h, h / 2.0, h / 4.0];
    let runs: Vec<Vec<f64>> = steps
        .iter()
        .map(|&hh| integrate(conn, x0, y0, duration, hh).map(|t| final_state(&t)))
        .collect::<Result<_>>()?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let scale = runs[2].iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let d1 = diff(&runs[0], &runs[1]);
    let d2 = diff(&runs[1], &runs[2]);
    let floor = SATURATION_FLOOR * scale;
    let saturated = d1 <= floor || d2 <= floor;
    Ok(ConvergenceReport {
        steps,
        differences: [d1, d2],
        order: (!saturated).then(|| (d1 / d2).log2()),
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FieldConfiguration, LorentzConnection, Potential};

    fn lorentz(p: Potential) -> LorentzConnection {
        LorentzConnection::new(FieldConfiguration::inertial(4, p).unwrap())
    }

    #[test]
    fn free_particle_moves_in_straight_lines() {
        let conn = lorentz(Potential::Zero);
        let y0 = [1.25, 0.75, 0.0, 0.0];
        let x0 = [0.0, 1.0, 2.0, 3.0];
        let t = integrate(&conn, &x0, &y0, 2.0, 0.01).unwrap();
        assert_eq!(t.len(), 201);
        let last = t.last();
        for i in 0..4 {
            assert!((last.x[i] - (x0[i] + y0[i] * 2.0)).abs() < 1e-13);
            assert_eq!(last.y[i], y0[i]);
        }
    }

    #[test]
    fn samples_are_uniform() {
        let conn = lorentz(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let t = integrate(&conn, &[0.0; 4], &[1.0, 0.0, 0.0, 0.0], 1.0, 0.125).unwrap();
        for (k, s) in t.samples.iter().enumerate() {
            assert_eq!(s.t, k as f64 * 0.125);
        }
        assert_eq!(t.conn_id, "lorentz");
    }

    #[test]
    fn rejects_bad_steps() {
        let conn = lorentz(Potential::Zero);
        let y = [1.0, 0.0, 0.0, 0.0];
        assert!(integrate(&conn, &[0.0; 4], &y, 0.0, 0.1).is_err());
        assert!(integrate(&conn, &[0.0; 4], &y, 1.0, 2.0).is_err());
        assert!(integrate(&conn, &[0.0; 4], &y, 1.0, -0.1).is_err());
    }

    #[test]
    fn spacelike_start_aborts_at_step_zero() {
        let conn = lorentz(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let err = integrate(&conn, &[0.0; 4], &[0.5, 1.0, 0.0, 0.0], 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::LeftCone { step: 0, .. }));
    }

    #[test]
    fn forward_then_backward_returns_home() {
        let conn = lorentz(Potential::Crossed { electric: 0.4, magnetic: 1.1 });
        let x0 = [0.0, 0.2, -0.1, 0.0];
        let y0 = {
            let mut y = vec![0.0, 0.5, 0.3, -0.2];
            Metric::minkowski().project_to_shell(&mut y);
            y
        };
        let (x1, y1) = flow(&conn, &x0, &y0, 3.0, 1e-3).unwrap();
        let (x2, y2) = flow(&conn, &x1, &y1, -3.0, 1e-3).unwrap();
        for i in 0..4 {
            assert!((x2[i] - x0[i]).abs() < 1e-8);
            assert!((y2[i] - y0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lab_time_lookup_recovers_samples() {
        let conn = lorentz(Potential::UniformMagnetic { strength: 1.0, a: 1, b: 2 });
        let y0 = Metric::minkowski().boosted_unit(2.0, 1);
        let t = integrate(&conn, &[0.0; 4], &y0, 2.0, 0.01).unwrap();
        let s = &t.samples[77];
        let (tau, x, y) = t.at_lab_time(s.x[0] + 1e-3).unwrap();
        assert!((tau - (s.t + 1e-3 / s.y[0])).abs() < 1e-6);
        assert!((x[1] - (s.x[1] + s.y[1] * 1e-3 / s.y[0])).abs() < 1e-6);
        assert!((y[2] - s.y[2]).abs() < 1e-3);
        assert!(t.at_lab_time(-1.0).is_none());
    }

    #[test]
    fn free_flow_saturates_order_measurement() {
        let conn = lorentz(Potential::Zero);
        let r = convergence_order(&conn, &[0.0; 4], &[1.0, 0.0, 0.0, 0.0], 1.0, 0.1).unwrap();
        assert!(r.saturated);
        assert!(r.order.is_none());
    }
}
