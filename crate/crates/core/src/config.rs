//! Scenario files: one TOML document per run.
//!
//! ```toml
//! dimension = 4
//! chart = "inertial"
//!
//! [potential]
//! name = "uniform_magnetic"
//! params = { strength = 1.0 }
//!
//! [ensemble]
//! count = 2000
//! energy = 100.0
//! spread = 1e-3
//! seed = 7
//!
//! [integrator]
//! h = 0.005
//! duration = 5.0
//!
//! [experiment]
//! kind = "compare"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Chart, FieldConfiguration, Metric, PotentialSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_chart")]
    pub chart: String,
    pub potential: PotentialSpec,
    pub ensemble: EnsembleConfig,
    pub integrator: IntegratorConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_dimension() -> usize {
    4
}

fn default_chart() -> String {
    "inertial".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Random isotropic Gaussian offsets.
    Gaussian,
    /// Uniform position lattice times Gauss–Hermite velocity nodes.
    Lattice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "default_kind")]
    pub kind: EnsembleKind,
    /// Particle count (Gaussian bunches).
    #[serde(default = "default_count")]
    pub count: usize,
    /// Target laboratory energy: the gamma factor of the mean velocity.
    pub energy: f64,
    /// Rest-frame velocity spread.
    pub spread: f64,
    #[serde(default = "default_position_width")]
    pub position_width: f64,
    /// Spatial axis of the mean velocity.
    #[serde(default = "default_axis")]
    pub axis: usize,
    #[serde(default)]
    pub seed: u64,
    /// Lattice points per spatial axis (lattice bunches).
    #[serde(default = "default_points")]
    pub lattice_points: usize,
    /// Gauss–Hermite nodes per velocity axis (lattice bunches).
    #[serde(default = "default_nodes")]
    pub velocity_nodes: usize,
}

fn default_kind() -> EnsembleKind {
    EnsembleKind::Gaussian
}
fn default_count() -> usize {
    2000
}
fn default_position_width() -> f64 {
    0.01
}
fn default_axis() -> usize {
    1
}
fn default_points() -> usize {
    8
}
fn default_nodes() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Step; laboratory time for ensemble runs and comparisons.
    pub h: f64,
    /// Window length, in the same time as `h`.
    pub duration: f64,
    #[serde(default)]
    pub reproject: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Compare,
    Scale,
    Residual,
    Fluid,
    Validate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Target velocity diameters for the α sweep.
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// Laboratory energies for the E sweep.
    #[serde(default)]
    pub energy: Vec<f64>,
    /// Rest-frame spreads for the residual and fluid sweeps.
    #[serde(default)]
    pub spread: Vec<f64>,
    /// Rest-frame speed of the probe relative to the bunch mean, along the
    /// field-free transverse axis.
    #[serde(default)]
    pub probe_offset: f64,
    /// Keep every n-th comparison sample.
    #[serde(default = "default_stride")]
    pub record_every: usize,
    #[serde(default)]
    pub grid: GridConfig,
    /// Bypass the pipelines and fit a planted power law (fitter self-test).
    #[serde(default)]
    pub synthetic: bool,
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Lattice spacings per grid cell.
    #[serde(default = "default_cell_factor")]
    pub cell_factor: usize,
    /// Cells per axis beyond the lattice extent on each side.
    #[serde(default = "default_pad")]
    pub pad: usize,
    /// Extra erosion beyond the stencil layer.
    #[serde(default = "default_margin")]
    pub margin: usize,
    /// Kernel radius for local moments; 3× the RMS bunch width if absent.
    #[serde(default)]
    pub kernel_radius: Option<f64>,
    /// Slice spacing for time derivatives, in integrator steps.
    #[serde(default = "default_slice_steps")]
    pub slice_steps: usize,
}

fn default_cell_factor() -> usize {
    1
}
fn default_pad() -> usize {
    2
}
fn default_margin() -> usize {
    1
}
fn default_slice_steps() -> usize {
    2
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cell_factor: default_cell_factor(),
            pad: default_pad(),
            margin: default_margin(),
            kernel_radius: None,
            slice_steps: default_slice_steps(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite, got {v}")))
    }
}

fn increasing(name: &str, v: &[f64]) -> Result<()> {
    for x in v {
        finite(name, *x)?;
    }
    if v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(format!("{name} sweep must be strictly increasing")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        Metric::new(self.dimension).map_err(|e| Error::Config(e.to_string()))?;
        self.field()?;
        let e = &self.ensemble;
        finite("ensemble.energy", e.energy)?;
        finite("ensemble.spread", e.spread)?;
        finite("ensemble.position_width", e.position_width)?;
        if e.count < 1 {
            return Err(Error::Config("ensemble.count must be at least 1".into()));
        }
        if !(e.energy >= 1.0) {
            return Err(Error::Config("ensemble.energy is a gamma factor and must be >= 1".into()));
        }
        if e.spread < 0.0 || e.position_width < 0.0 {
            return Err(Error::Config("ensemble widths must be non-negative".into()));
        }
        if e.axis < 1 || e.axis >= self.dimension {
            return Err(Error::Config(format!("ensemble.axis must be a spatial axis, got {}", e.axis)));
        }
        if e.kind == EnsembleKind::Lattice && (e.lattice_points == 0 || ![1, 3, 5].contains(&e.velocity_nodes)) {
            return Err(Error::Config("lattice needs points >= 1 and 1, 3 or 5 velocity nodes".into()));
        }
        let i = &self.integrator;
        finite("integrator.h", i.h)?;
        finite("integrator.duration", i.duration)?;
        if !(i.h > 0.0) {
            return Err(Error::Config("integrator.h must be positive".into()));
        }
        if !(i.duration > 0.0) || i.h > i.duration {
            return Err(Error::Config("integrator.duration must be positive and at least h".into()));
        }
        let x = &self.experiment;
        increasing("experiment.alpha", &x.alpha)?;
        increasing("experiment.energy", &x.energy)?;
        increasing("experiment.spread", &x.spread)?;
        finite("experiment.probe_offset", x.probe_offset)?;
        if x.alpha.iter().any(|v| *v <= 0.0) || x.energy.iter().any(|v| *v < 1.0) || x.spread.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("sweep values out of range".into()));
        }
        if x.record_every == 0 {
            return Err(Error::Config("experiment.record_every must be at least 1".into()));
        }
        let g = &x.grid;
        if g.cell_factor == 0 || g.slice_steps == 0 {
            return Err(Error::Config("grid.cell_factor and grid.slice_steps must be positive".into()));
        }
        if let Some(r) = g.kernel_radius {
            finite("grid.kernel_radius", r)?;
            if !(r > 0.0) {
                return Err(Error::Config("grid.kernel_radius must be positive".into()));
            }
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats must not be empty".into()));
        }
        Ok(())
    }

    pub fn field(&self) -> Result<FieldConfiguration> {
        let chart = Chart::from_name(&self.chart)?;
        FieldConfiguration::from_spec(self.dimension, chart.name(), &self.potential)
    }

    pub fn metric(&self) -> Metric {
        Metric::new(self.dimension).expect("validated dimension")
    }
}
