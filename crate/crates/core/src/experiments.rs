//! Experiment pipelines driven by a [`ScenarioConfig`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::averaging::{
    boost_from_rest, global_moments, lattice_ensemble, sample_ensemble, AveragedConnection, Ensemble,
    EnsembleSpec, LatticeSpec, MomentProvider,
};
use crate::config::{EnsembleKind, ExperimentKind, OutputConfig, ScenarioConfig};
use crate::diagnostics::{
    bar_metric, bound_evaluation, diameter, fit_power_law, mean_velocity, theta_summary, BoundFit,
    ComparisonRecord, FitRow, PowerLawFit, ThetaSample, ThetaSummary, GAP_FLOOR,
};
use crate::error::{Error, Result};
use crate::geometry::{ConnectionField, LorentzConnection};
use crate::io;
use crate::kinetic::{
    deposit, distribution_gap, evolve_ensemble, fluid_residual, fluid_vs_particle, lab_trajectory,
    Coupling, DistributionFunction, DistributionGap, DomainBox, FieldSeries, GridLayout, Profile,
    VelocityFieldGrid,
};
use crate::solver::{integrate_with, IntegrateOptions};
use crate::validation::{run_validate, write_validation};

/// Where and how a run writes its files.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub out: PathBuf,
    pub workers: usize,
    pub csv: bool,
    pub json: bool,
}

impl RunContext {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        RunContext {
            out: cfg.output.directory.clone(),
            workers: 1,
            csv: cfg.output.csv(),
            json: cfg.output.json(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Provenance of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Output files, relative to the output directory.
    pub files: Vec<PathBuf>,
    pub duration_seconds: f64,
}

/// SHA-256 of the scenario with the output section reset to its defaults.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let mut scenario = cfg.clone();
    scenario.output = OutputConfig::default();
    hex::encode(Sha256::digest(scenario.to_toml().as_bytes()))
}

/// Runs the configured experiment on a pool of `ctx.workers` threads and
/// writes `manifest.json` next to the results.
pub fn run(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<RunManifest> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let start = Instant::now();
    let files = pool.install(|| -> Result<Vec<PathBuf>> {
        Ok(match cfg.experiment.kind {
            ExperimentKind::Simulate => run_simulate(cfg, ctx)?.files,
            ExperimentKind::Compare => run_compare(cfg, ctx)?.files,
            ExperimentKind::Scale => run_scale(cfg, ctx)?.files,
            ExperimentKind::Residual => run_residual(cfg, ctx)?.files,
            ExperimentKind::Fluid => run_fluid(cfg, ctx)?.files,
            ExperimentKind::Validate => {
                let report = run_validate(cfg.ensemble.seed, false);
                let files = write_validation(&report, ctx)?;
                if !report.passed {
                    return Err(Error::Fit(format!(
                        "{} validation checks failed",
                        report.checks.iter().filter(|c| !c.passed).count()
                    )));
                }
                files
            }
        })
    })?;
    let manifest = RunManifest {
        experiment: cfg.experiment.kind,
        config_hash: config_hash(cfg),
        seed: cfg.ensemble.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        files: files
            .iter()
            .map(|f| f.strip_prefix(&ctx.out).map(PathBuf::from).unwrap_or_else(|_| f.clone()))
            .collect(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    io::write_json(&manifest, io::create(&ctx.path("manifest.json"))?)?;
    Ok(manifest)
}

fn write_json_file<T: Serialize>(ctx: &RunContext, name: &str, value: &T, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = ctx.path(name);
    io::write_json(value, io::create(&p)?)?;
    files.push(p);
    Ok(())
}

/// Gaussian bunch or quiet-start lattice at the origin with the requested
/// spread and energy.
pub fn build_ensemble(cfg: &ScenarioConfig, spread: f64, energy: f64) -> Result<Ensemble> {
    let metric = cfg.metric();
    let e = &cfg.ensemble;
    let u = metric.boosted_unit(energy, e.axis);
    let d = cfg.dimension;
    match e.kind {
        EnsembleKind::Gaussian => sample_ensemble(
            &metric,
            &EnsembleSpec {
                count: e.count,
                mean_velocity: u,
                spread,
                position_width: e.position_width,
                center: vec![0.0; d],
                seed: e.seed,
            },
        ),
        EnsembleKind::Lattice => lattice_ensemble(
            &metric,
            &LatticeSpec {
                mean_velocity: u,
                spread,
                center: vec![0.0; d],
                half_widths: vec![e.position_width; d - 1],
                points: vec![e.lattice_points; d - 1],
                velocity_nodes: e.velocity_nodes,
            },
        ),
    }
}

/// Spatial axis orthogonal to both the beam axis and the field, if any.
fn transverse_axis(cfg: &ScenarioConfig) -> usize {
    let d = cfg.dimension;
    let beam = cfg.ensemble.axis;
    (1..d).rev().find(|&a| a != beam).unwrap_or(beam)
}

#[derive(Clone, Debug, Serialize)]
pub struct Simulation {
    pub norm_drift: f64,
    pub lab_end: f64,
    pub steps: usize,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// One Lorentz trajectory from the bunch centroid at the mean velocity, in
/// proper time.
pub fn run_simulate(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<Simulation> {
    let metric = cfg.metric();
    let field = cfg.field()?;
    let conn = LorentzConnection::new(field);
    let x0 = vec![0.0; cfg.dimension];
    let y0 = metric.boosted_unit(cfg.ensemble.energy, cfg.ensemble.axis);
    let traj = integrate_with(
        &conn,
        &x0,
        &y0,
        cfg.integrator.duration,
        cfg.integrator.h,
        IntegrateOptions {
            reproject: cfg.integrator.reproject,
        },
    )?;
    let mut sim = Simulation {
        norm_drift: traj.norm_drift(&metric),
        lab_end: traj.lab_end(),
        steps: traj.len() - 1,
        files: Vec::new(),
    };
    if ctx.csv {
        let p = ctx.path("trajectory.csv");
        io::write_trajectory(&traj, io::create(&p)?)?;
        sim.files.push(p);
    }
    if ctx.json {
        let mut files = std::mem::take(&mut sim.files);
        write_json_file(ctx, "simulation.json", &sim, &mut files)?;
        sim.files = files;
    }
    Ok(sim)
}

/// Regime checks reported with every comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hypotheses {
    pub energy: f64,
    pub alpha: f64,
    /// `E ≥ 10`.
    pub ultra_relativistic: bool,
    /// `E > 10 α`.
    pub narrow: bool,
    /// Set when the narrowness condition fails; the run still completes.
    pub warning: Option<String>,
    /// Supremum of `|θ² − θ̄²|` over the window, with its parts.
    pub theta: ThetaSummary,
    /// Lab time of the earliest sample the comparison covers.
    pub window_start: f64,
    pub window_end: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareSummary {
    pub spread: f64,
    pub count: usize,
    pub seed: u64,
    pub step: f64,
    pub probe_offset: f64,
    pub max_dx: f64,
    pub max_dy: f64,
    pub final_dx: f64,
    pub final_dy: f64,
    pub dx_monotone: bool,
    pub hypotheses: Hypotheses,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub records: Vec<ComparisonRecord>,
    pub summary: CompareSummary,
    pub files: Vec<PathBuf>,
}

/// Lorentz and averaged flows from one initial condition at the bunch
/// centroid, sampled on a shared laboratory-time grid. The averaged
/// connection takes its moments from the bunch transported by the Lorentz
/// flow.
pub fn compare(cfg: &ScenarioConfig, spread: f64, energy: f64) -> Result<(Vec<ComparisonRecord>, CompareSummary)> {
    compare_with(cfg, spread, energy, false)
}

/// [`compare`] with an optional sign flip of the third moment in the
/// averaged connection (fault injection).
pub fn compare_with(
    cfg: &ScenarioConfig,
    spread: f64,
    energy: f64,
    flip_third_moment: bool,
) -> Result<(Vec<ComparisonRecord>, CompareSummary)> {
    let metric = cfg.metric();
    let field = cfg.field()?;
    let ens = build_ensemble(cfg, spread, energy)?;
    let (h, duration) = (cfg.integrator.h, cfg.integrator.duration);
    let run = evolve_ensemble(&field, &ens, Coupling::Lorentz, duration, h, &[])?;
    let history = Arc::new(run.history);
    let m0 = global_moments(&ens)?;
    let u0 = mean_velocity(&metric, &m0);
    let alpha = diameter(&ens, &bar_metric(&metric, &u0)?).value();
    let e_lab = m0.energy;

    let x0 = ens.centroid();
    let mut w = vec![0.0; cfg.dimension];
    let p = cfg.experiment.probe_offset;
    w[0] = (1.0 + p * p).sqrt();
    w[transverse_axis(cfg)] = p;
    let y0 = boost_from_rest(&u0.0, &w);

    let lorentz = LorentzConnection::new(field.clone());
    let mut averaged = AveragedConnection::new(field, MomentProvider::History(history.clone()));
    if flip_third_moment {
        averaged = averaged.with_flipped_third_moment();
    }
    let tl = lab_trajectory(&lorentz, &x0, &y0, duration, h)?;
    let ta = lab_trajectory(&averaged, &x0, &y0, duration, h)?;

    let mut records = Vec::new();
    let mut thetas = Vec::new();
    for (k, (a, b)) in tl.samples.iter().zip(&ta.samples).enumerate() {
        if k % cfg.experiment.record_every != 0 && k + 1 != tl.len() {
            continue;
        }
        let u = mean_velocity(&metric, &history.at(a.x[0]));
        let bar = bar_metric(&metric, &u)?;
        let th = ThetaSample::new(a.t, &a.y, &b.y, &u);
        thetas.push(th);
        records.push(ComparisonRecord {
            t_lab: a.t,
            dx: bar.distance(&a.x, &b.x),
            dy: bar.distance(&a.y, &b.y),
            theta2: th.theta2,
            theta_bar2: th.theta_bar2,
            gamma_bar: th.gamma_bar,
            alpha,
            energy: e_lab,
        });
    }
    let narrow = e_lab > 10.0 * alpha;
    let hypotheses = Hypotheses {
        energy: e_lab,
        alpha,
        ultra_relativistic: e_lab >= 10.0,
        narrow,
        warning: (!narrow).then(|| format!("E = {e_lab} is not much larger than alpha = {alpha}")),
        theta: theta_summary(&thetas),
        window_start: 0.0,
        window_end: duration,
    };
    if let Some(msg) = &hypotheses.warning {
        warn!("{msg}");
    }
    let last = records.last().copied().expect("at least the initial sample");
    let summary = CompareSummary {
        spread,
        count: ens.len(),
        seed: cfg.ensemble.seed,
        step: h,
        probe_offset: p,
        max_dx: records.iter().map(|r| r.dx).fold(0.0, f64::max),
        max_dy: records.iter().map(|r| r.dy).fold(0.0, f64::max),
        final_dx: last.dx,
        final_dy: last.dy,
        dx_monotone: records.windows(2).all(|w| w[1].dx >= w[0].dx),
        hypotheses,
    };
    Ok((records, summary))
}

pub fn run_compare(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<Comparison> {
    let (records, summary) = compare(cfg, cfg.ensemble.spread, cfg.ensemble.energy)?;
    let mut files = Vec::new();
    if ctx.csv {
        let p = ctx.path("comparison.csv");
        io::write_report(&records, io::create(&p)?)?;
        files.push(p);
    }
    if ctx.json {
        write_json_file(ctx, "comparison.json", &summary, &mut files)?;
    }
    Ok(Comparison { records, summary, files })
}

/// Outcome of one sweep point.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub sweep: String,
    pub spread: f64,
    pub alpha: f64,
    pub energy: f64,
    pub final_dx: f64,
    pub final_dy: f64,
    /// Set when the gaps sit at the numerical floor.
    pub at_floor: bool,
    pub hypotheses: Option<Hypotheses>,
}

/// Per-variable and joint exponent fits of one gap.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GapFits {
    pub alpha: Option<PowerLawFit>,
    pub energy: Option<PowerLawFit>,
    pub t_lab: Option<PowerLawFit>,
    /// Reasons a fit was refused, keyed by variable.
    pub refused: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaleReport {
    pub synthetic: bool,
    pub window: f64,
    pub points: Vec<SweepPoint>,
    pub position: GapFits,
    pub velocity: GapFits,
    pub joint: Option<BoundFit>,
    pub joint_refused: Option<String>,
    pub rows: Vec<FitRow>,
    /// Comparison records of each sweep point, in point order.
    #[serde(skip)]
    pub records: Vec<Vec<ComparisonRecord>>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

fn single_fit(name: &str, rows: &[(f64, f64)]) -> std::result::Result<PowerLawFit, String> {
    let kept: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .filter(|(x, v)| *x > 0.0 && *v > GAP_FLOOR)
        .map(|(x, v)| (vec![*x], *v))
        .collect();
    if kept.len() < 3 {
        let max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        return Err(if max <= GAP_FLOOR {
            Error::AtFloor { floor: max }.to_string()
        } else {
            format!("only {} of {} points clear the floor {GAP_FLOOR:e}", kept.len(), rows.len())
        });
    }
    fit_power_law(&[name], &kept).map_err(|e| e.to_string())
}

fn gap_fits(
    alpha_rows: &[(f64, f64)],
    energy_rows: &[(f64, f64)],
    time_rows: &[(f64, f64)],
) -> GapFits {
    let mut out = GapFits::default();
    for (name, rows, slot) in [
        ("alpha", alpha_rows, &mut out.alpha),
        ("energy", energy_rows, &mut out.energy),
        ("t_lab", time_rows, &mut out.t_lab),
    ] {
        if rows.is_empty() {
            continue;
        }
        match single_fit(name, rows) {
            Ok(f) => *slot = Some(f),
            Err(e) => {
                out.refused.insert(name.into(), e);
            }
        }
    }
    out
}

/// Spread giving a bunch of velocity diameter `alpha`, from the diameter
/// of the same seed at a reference spread.
fn spread_for_alpha(cfg: &ScenarioConfig, alpha: f64) -> Result<f64> {
    const REFERENCE: f64 = 1e-3;
    let metric = cfg.metric();
    let ens = build_ensemble(cfg, REFERENCE, cfg.ensemble.energy)?;
    let u = mean_velocity(&metric, &global_moments(&ens)?);
    let a = diameter(&ens, &bar_metric(&metric, &u)?).value();
    if !(a > 0.0) {
        return Err(Error::Config("reference bunch has zero diameter".into()));
    }
    Ok(alpha * REFERENCE / a)
}

/// Planted `Δx = 7 α² E⁻² t²`, `Δy = 3 α² E⁻² t` on the configured grid.
fn synthetic_records(cfg: &ScenarioConfig) -> Vec<(SweepPoint, Vec<ComparisonRecord>)> {
    let x = &cfg.experiment;
    let n = (cfg.integrator.duration / cfg.integrator.h).round() as usize;
    let mut out = Vec::new();
    let mut push = |sweep: &str, alpha: f64, energy: f64| {
        let records: Vec<ComparisonRecord> = (1..=n)
            .map(|k| {
                let t = k as f64 * cfg.integrator.h;
                let base = alpha * alpha / (energy * energy);
                ComparisonRecord {
                    t_lab: t,
                    dx: 7.0 * base * t * t,
                    dy: 3.0 * base * t,
                    theta2: 0.0,
                    theta_bar2: 0.0,
                    gamma_bar: energy,
                    alpha,
                    energy,
                }
            })
            .collect();
        let last = *records.last().expect("n >= 1");
        out.push((
            SweepPoint {
                index: out.len(),
                sweep: sweep.into(),
                spread: 0.0,
                alpha,
                energy,
                final_dx: last.dx,
                final_dy: last.dy,
                at_floor: false,
                hypotheses: None,
            },
            records,
        ));
    };
    for &a in &x.alpha {
        push("alpha", a, cfg.ensemble.energy);
    }
    for &e in &x.energy {
        push("energy", x.alpha.first().copied().unwrap_or(0.01), e);
    }
    out
}

/// Comparison sweeps over `α` (at the configured energy) and over `E` (at
/// the configured spread), with exponent fits per variable and jointly.
/// The time exponent comes from the history of the point with the largest
/// final position gap.
pub fn scale(cfg: &ScenarioConfig) -> Result<ScaleReport> {
    let x = &cfg.experiment;
    let sweeps: Vec<(SweepPoint, Vec<ComparisonRecord>)> = if x.synthetic {
        synthetic_records(cfg)
    } else {
        if x.alpha.len() < 3 && x.energy.len() < 3 {
            return Err(Error::Config("scale needs a sweep of at least 3 points".into()));
        }
        let mut jobs: Vec<(String, f64, f64)> = Vec::new();
        for &a in &x.alpha {
            jobs.push(("alpha".into(), spread_for_alpha(cfg, a)?, cfg.ensemble.energy));
        }
        for &e in &x.energy {
            jobs.push(("energy".into(), cfg.ensemble.spread, e));
        }
        jobs.par_iter()
            .enumerate()
            .map(|(index, (sweep, spread, energy))| {
                info!("sweep point {index}: {sweep}, spread {spread:e}, energy {energy}");
                let (records, summary) =
                    compare(cfg, *spread, *energy).map_err(|e| e.annotate(format!("sweep point {index}")))?;
                let h = summary.hypotheses.clone();
                Ok((
                    SweepPoint {
                        index,
                        sweep: sweep.clone(),
                        spread: *spread,
                        alpha: h.alpha,
                        energy: h.energy,
                        final_dx: summary.final_dx,
                        final_dy: summary.final_dy,
                        at_floor: summary.max_dx <= GAP_FLOOR,
                        hypotheses: Some(h),
                    },
                    records,
                ))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let pick = |sweep: &str, f: &dyn Fn(&SweepPoint) -> (f64, f64)| -> Vec<(f64, f64)> {
        sweeps.iter().filter(|(p, _)| p.sweep == sweep).map(|(p, _)| f(p)).collect()
    };
    let time_rows = |f: &dyn Fn(&ComparisonRecord) -> f64| -> Vec<(f64, f64)> {
        sweeps
            .iter()
            .max_by(|a, b| a.0.final_dx.total_cmp(&b.0.final_dx))
            .map(|(_, r)| r.iter().filter(|r| r.t_lab > 0.0).map(|r| (r.t_lab, f(r))).collect())
            .unwrap_or_default()
    };
    let position = gap_fits(
        &pick("alpha", &|p| (p.alpha, p.final_dx)),
        &pick("energy", &|p| (p.energy, p.final_dx)),
        &time_rows(&|r| r.dx),
    );
    let velocity = gap_fits(
        &pick("alpha", &|p| (p.alpha, p.final_dy)),
        &pick("energy", &|p| (p.energy, p.final_dy)),
        &time_rows(&|r| r.dy),
    );
    let all: Vec<ComparisonRecord> = sweeps.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let (joint, joint_refused) = match bound_evaluation(&all) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let rows = joint
        .as_ref()
        .map(|j| {
            let mut rows = j.position.rows();
            rows.extend(j.velocity.rows());
            rows
        })
        .unwrap_or_default();
    Ok(ScaleReport {
        synthetic: x.synthetic,
        window: cfg.integrator.duration,
        points: sweeps.iter().map(|(p, _)| p.clone()).collect(),
        position,
        velocity,
        joint,
        joint_refused,
        rows,
        records: sweeps.into_iter().map(|(_, r)| r).collect(),
        files: Vec::new(),
    })
}

pub fn run_scale(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<ScaleReport> {
    let mut report = scale(cfg)?;
    let mut files = Vec::new();
    if ctx.csv {
        for (p, records) in report.points.iter().zip(&report.records) {
            let path = ctx.path(&format!("sweep_{:03}.csv", p.index));
            io::write_report(records, io::create(&path)?)?;
            files.push(path);
        }
    }
    if ctx.json {
        write_json_file(ctx, "scale.json", &report, &mut files)?;
    }
    report.files = files;
    Ok(report)
}

/// Configuration copy forced onto a quiet-start lattice.
fn lattice_config(cfg: &ScenarioConfig, points: usize) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.ensemble.kind = EnsembleKind::Lattice;
    c.ensemble.lattice_points = points;
    c
}

fn lattice_spacing(cfg: &ScenarioConfig, points: usize) -> f64 {
    2.0 * cfg.ensemble.position_width / points as f64
}

/// Layout of `spacing`-wide cells covering every particle of `ensembles`
/// plus `pad` cells on each side.
fn covering_layout(ensembles: &[&Ensemble], spacing: f64, pad: usize) -> Result<GridLayout> {
    let d = ensembles[0].dim;
    let mut lo = vec![f64::INFINITY; d - 1];
    let mut hi = vec![f64::NEG_INFINITY; d - 1];
    for e in ensembles {
        for p in &e.particles {
            for a in 0..d - 1 {
                lo[a] = lo[a].min(p.x[a + 1]);
                hi[a] = hi[a].max(p.x[a + 1]);
            }
        }
    }
    let mut center = vec![ensembles[0].particles[0].x[0]];
    let mut cells = Vec::with_capacity(d - 1);
    for a in 0..d - 1 {
        center.push(0.5 * (lo[a] + hi[a]));
        cells.push(((hi[a] - lo[a]) / spacing).ceil() as usize + 1 + 2 * pad);
    }
    GridLayout::centered(&center, vec![spacing; d - 1], cells)
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualPoint {
    pub index: usize,
    pub spread: f64,
    pub lattice_points: usize,
    /// Largest cell velocity diameter over the residual cells.
    pub alpha: f64,
    pub max_residual: f64,
    pub interior_cells: usize,
    pub at_floor: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolutionCheck {
    pub spread: f64,
    pub coarse: f64,
    pub fine: f64,
    pub relative_change: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualSummary {
    pub time: f64,
    pub slice_spacing: f64,
    pub points: Vec<ResidualPoint>,
    pub fit: Option<PowerLawFit>,
    pub fit_refused: Option<String>,
    pub resolution: Option<ResolutionCheck>,
    #[serde(skip)]
    pub grids: Vec<VelocityFieldGrid>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// Below this the cold-fluid residual counts as roundoff.
pub const RESIDUAL_FLOOR: f64 = 1e-6;

/// Cold-fluid residual of a lattice bunch of rest-frame spread `spread`
/// evolved self-consistently under the averaged flow, on five slices
/// centered on the configured duration.
pub fn residual_point(cfg: &ScenarioConfig, spread: f64, points: usize) -> Result<(ResidualPoint, VelocityFieldGrid)> {
    let lc = lattice_config(cfg, points);
    let metric = cfg.metric();
    let field = cfg.field()?;
    let g = &cfg.experiment.grid;
    let h = cfg.integrator.h;
    let delta = g.slice_steps as f64 * h;
    let t_mid = cfg.integrator.duration;
    if t_mid < 2.0 * delta - 1e-12 {
        return Err(Error::Config(format!(
            "integrator.duration {t_mid} must be at least two slice spacings ({})",
            2.0 * delta
        )));
    }
    let ens = build_ensemble(&lc, spread, cfg.ensemble.energy)?;
    let times: Vec<f64> = (-2..=2).map(|k| t_mid + k as f64 * delta).collect();
    let run = evolve_ensemble(&field, &ens, Coupling::SelfConsistent, t_mid + 2.0 * delta, h, &times)?;
    let snaps: Vec<&Ensemble> = run.snapshots.iter().map(|s| &s.ensemble).collect();
    let spacing = g.cell_factor as f64 * lattice_spacing(cfg, points);
    let layout = covering_layout(&snaps, spacing, g.pad)?;
    let mut grids = snaps
        .iter()
        .map(|e| deposit(e, &layout, &metric, g.margin))
        .collect::<Result<Vec<_>>>()?;
    let mid = snaps[2].clone();
    let radius = g.kernel_radius.unwrap_or(3.0 * mid.rms_width());
    let fallback = global_moments(&mid)?;
    let avg = AveragedConnection::new(
        field,
        MomentProvider::Kernel {
            ensemble: Arc::new(mid),
            radius,
            fallback,
        },
    );
    let report = fluid_residual(&avg, &mut grids, delta, &metric)?;
    let grid = grids.swap_remove(2);
    Ok((
        ResidualPoint {
            index: 0,
            spread,
            lattice_points: points,
            alpha: report.max_alpha,
            max_residual: report.max_residual,
            interior_cells: report.interior_cells,
            at_floor: report.max_residual <= RESIDUAL_FLOOR,
        },
        grid,
    ))
}

/// Residual sweep over `experiment.spread`, the log-log fit of the
/// residual against the cell diameter, and a resolution-doubling check at
/// the middle nonzero spread.
pub fn residual(cfg: &ScenarioConfig) -> Result<ResidualSummary> {
    let spreads = &cfg.experiment.spread;
    if spreads.is_empty() {
        return Err(Error::Config("residual needs an experiment.spread sweep".into()));
    }
    let points = cfg.ensemble.lattice_points;
    let results = spreads
        .par_iter()
        .enumerate()
        .map(|(index, &s)| {
            residual_point(cfg, s, points)
                .map(|(mut p, g)| {
                    p.index = index;
                    (p, g)
                })
                .map_err(|e| e.annotate(format!("spread {s:e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (points_out, grids): (Vec<ResidualPoint>, Vec<VelocityFieldGrid>) = results.into_iter().unzip();
    let rows: Vec<(Vec<f64>, f64)> = points_out
        .iter()
        .filter(|p| p.spread > 0.0 && !p.at_floor && p.alpha > 0.0)
        .map(|p| (vec![p.alpha], p.max_residual))
        .collect();
    let (fit, fit_refused) = if rows.len() >= 3 {
        match fit_power_law(&["alpha"], &rows) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some(format!("only {} spreads clear the floor {RESIDUAL_FLOOR:e}", rows.len())))
    };
    let positive: Vec<f64> = spreads.iter().copied().filter(|s| *s > 0.0).collect();
    let resolution = if positive.is_empty() {
        None
    } else {
        let s = positive[positive.len() / 2];
        let coarse = points_out
            .iter()
            .find(|p| p.spread == s)
            .map(|p| p.max_residual)
            .expect("middle spread is in the sweep");
        let (fine, _) = residual_point(cfg, s, 2 * points).map_err(|e| e.annotate("resolution check"))?;
        Some(ResolutionCheck {
            spread: s,
            coarse,
            fine: fine.max_residual,
            relative_change: (fine.max_residual - coarse).abs() / coarse,
        })
    };
    Ok(ResidualSummary {
        time: cfg.integrator.duration,
        slice_spacing: cfg.experiment.grid.slice_steps as f64 * cfg.integrator.h,
        points: points_out,
        fit,
        fit_refused,
        resolution,
        grids,
        files: Vec::new(),
    })
}

pub fn run_residual(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<ResidualSummary> {
    let mut summary = residual(cfg)?;
    let mut files = Vec::new();
    if ctx.csv {
        for (p, g) in summary.points.iter().zip(&summary.grids) {
            let path = ctx.path(&format!("residual_{:03}.csv", p.index));
            io::write_grid(g, io::create(&path)?)?;
            files.push(path);
        }
    }
    if ctx.json {
        write_json_file(ctx, "residual.json", &summary, &mut files)?;
    }
    summary.files = files;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct FluidPoint {
    pub index: usize,
    pub spread: f64,
    /// Largest cell velocity diameter on the initial slice.
    pub alpha: f64,
    pub max_gap: f64,
    pub truncated: bool,
    pub t_end: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FluidSummary {
    pub points: Vec<FluidPoint>,
    pub fit: Option<PowerLawFit>,
    pub fit_refused: Option<String>,
    pub distribution: Option<DistributionGap>,
    pub distribution_refused: Option<String>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// Integral curve of the reconstructed cold-fluid field of a lattice bunch
/// transported by the Lorentz flow, against the Lorentz trajectory from the
/// bunch centroid at the mean velocity.
pub fn fluid_point(cfg: &ScenarioConfig, spread: f64) -> Result<FluidPoint> {
    let points = cfg.ensemble.lattice_points;
    let lc = lattice_config(cfg, points);
    let metric = cfg.metric();
    let field = cfg.field()?;
    let g = &cfg.experiment.grid;
    let h = cfg.integrator.h;
    let duration = cfg.integrator.duration;
    let every = g.slice_steps as f64 * h;
    let n_slices = (duration / every).round() as usize;
    if n_slices < 3 || ((n_slices as f64) * every - duration).abs() > 1e-9 * duration {
        return Err(Error::Config(format!(
            "integrator.duration must be at least 3 slice spacings and a multiple of {every}"
        )));
    }
    let ens = build_ensemble(&lc, spread, cfg.ensemble.energy)?;
    let times: Vec<f64> = (0..=n_slices).map(|k| k as f64 * every).collect();
    let run = evolve_ensemble(&field, &ens, Coupling::Lorentz, duration, h, &times)?;
    let spacing = g.cell_factor as f64 * lattice_spacing(cfg, points);
    let grids = run
        .snapshots
        .iter()
        .map(|s| {
            let layout = covering_layout(&[&s.ensemble], spacing, g.pad)?;
            deposit(&s.ensemble, &layout, &metric, g.margin)
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha = grids[0]
        .alpha
        .iter()
        .zip(&grids[0].interior)
        .filter(|(_, i)| **i)
        .map(|(a, _)| *a)
        .fold(0.0, f64::max);
    let series = FieldSeries::new(grids)?;
    let u0 = mean_velocity(&metric, &global_moments(&ens)?);
    let report = fluid_vs_particle(&series, &field, &ens.centroid(), &u0.0, duration, h)?;
    Ok(FluidPoint {
        index: 0,
        spread,
        alpha,
        max_gap: report.max_gap,
        truncated: report.truncated,
        t_end: report.t_end,
    })
}

/// Distance between `f` and `f̃` along a Lorentz trajectory started one
/// position width off the centroid at the mean velocity. `f̃` is carried by
/// the averaged connection built from the self-consistently evolved bunch.
pub fn distribution_comparison(cfg: &ScenarioConfig) -> Result<DistributionGap> {
    let metric = cfg.metric();
    let field = cfg.field()?;
    let e = &cfg.ensemble;
    let (h, duration) = (cfg.integrator.h, cfg.integrator.duration);
    let mut gc = cfg.clone();
    gc.ensemble.kind = EnsembleKind::Gaussian;
    let ens = build_ensemble(&gc, e.spread, e.energy)?;
    let run = evolve_ensemble(&field, &ens, Coupling::SelfConsistent, duration, h, &[])?;
    let history = Arc::new(run.history);
    let u0 = metric.boosted_unit(e.energy, e.axis);
    let profile = Profile::new(vec![0.0; cfg.dimension], e.position_width, u0.clone(), e.spread)?;
    let reach = 20.0 * e.position_width + 2.0 * duration;
    let domain = DomainBox {
        lo: vec![-reach; cfg.dimension - 1],
        hi: vec![reach; cfg.dimension - 1],
    };
    let lorentz: Arc<dyn ConnectionField> = Arc::new(LorentzConnection::new(field.clone()));
    let averaged: Arc<dyn ConnectionField> =
        Arc::new(AveragedConnection::new(field, MomentProvider::History(history.clone())));
    let f = DistributionFunction {
        profile: profile.clone(),
        conn: lorentz.clone(),
        dt: h,
        domain: domain.clone(),
    };
    let f_avg = DistributionFunction {
        profile,
        conn: averaged.clone(),
        dt: h,
        domain,
    };
    let mut x0 = vec![0.0; cfg.dimension];
    x0[transverse_axis(cfg)] = e.position_width;
    let tl = lab_trajectory(lorentz.as_ref(), &x0, &u0, duration, h)?;
    let ta = lab_trajectory(averaged.as_ref(), &x0, &u0, duration, h)?;
    let u_at = |t: f64| mean_velocity(&metric, &history.at(t));
    distribution_gap(&f, &f_avg, &tl, &ta, &metric, &u_at, cfg.experiment.record_every)
}

/// Fluid-tracking sweep over `experiment.spread` plus the distribution gap
/// at the configured ensemble.
pub fn fluid(cfg: &ScenarioConfig) -> Result<FluidSummary> {
    let spreads = &cfg.experiment.spread;
    if spreads.is_empty() {
        return Err(Error::Config("fluid needs an experiment.spread sweep".into()));
    }
    let points = spreads
        .par_iter()
        .enumerate()
        .map(|(index, &s)| {
            fluid_point(cfg, s)
                .map(|mut p| {
                    p.index = index;
                    p
                })
                .map_err(|e| e.annotate(format!("spread {s:e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(Vec<f64>, f64)> = points
        .iter()
        .filter(|p| p.alpha > 0.0 && p.max_gap > GAP_FLOOR)
        .map(|p| (vec![p.alpha], p.max_gap))
        .collect();
    let (fit, fit_refused) = if rows.len() >= 3 {
        match fit_power_law(&["alpha"], &rows) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some(format!("only {} spreads clear the floor {GAP_FLOOR:e}", rows.len())))
    };
    let (distribution, distribution_refused) = if cfg.ensemble.spread > 0.0 {
        match distribution_comparison(cfg) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("ensemble.spread is zero".into()))
    };
    Ok(FluidSummary {
        points,
        fit,
        fit_refused,
        distribution,
        distribution_refused,
        files: Vec::new(),
    })
}

pub fn run_fluid(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<FluidSummary> {
    let mut summary = fluid(cfg)?;
    let mut files = Vec::new();
    if ctx.json {
        write_json_file(ctx, "fluid.json", &summary, &mut files)?;
    }
    if ctx.csv {
        let p = ctx.path("fluid.csv");
        let mut w = csv::Writer::from_writer(io::create(&p)?);
        w.write_record(["index", "spread", "alpha", "max_gap", "truncated", "t_end"])?;
        for q in &summary.points {
            w.write_record([
                q.index.to_string(),
                io::fmt(q.spread),
                io::fmt(q.alpha),
                io::fmt(q.max_gap),
                q.truncated.to_string(),
                io::fmt(q.t_end),
            ])?;
        }
        w.flush()?;
        files.push(p);
    }
    summary.files = files;
    Ok(summary)
}
