//! Experiment recipes, end-to-end pipelines and report directories.
//!
//! A report directory holds `config.toml` (the full experiment echo),
//! `manifest.toml` (the numbers), the clean and noisy data matrices, the ROM
//! factor, one trajectory CSV per inversion mode, wall-clock timings in a
//! separate CSV (so trajectories replay byte for byte), and the true and
//! estimated fields as matrices and PGM images.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    add_noise, check_reference, data_matrices, record_response, DataMatrices, Pulse, Sampling, SourceArray,
};
use crate::inversion::{invert, relative_field_error, relative_model_error, InversionConfig, InversionData, InversionResult, Mode, Parameterization};
use crate::io::{load_matrix, save_matrix, save_pgm, FormatError, Header};
use crate::rom::{assemble_mass, assemble_stiffness, auto_rank, build_rom, RomFactor, SimConfig};
use crate::wavesim::{ForcingScheme, Grid, Integrator, MediumModel};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("non-positive {field} at cell {index}: {value}")]
    NonPositiveField { field: &'static str, index: usize, value: f64 },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl HarnessError {
    /// 2 for configuration and input problems, 3 for numerical failures,
    /// 1 for output I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Format { .. } | HarnessError::NonPositiveField { .. } => 2,
            HarnessError::Stage { .. } => 3,
            HarnessError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn stage<E: std::error::Error + Send + Sync + 'static>(name: &'static str) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage: name,
        source: Box::new(e),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// km
    pub width: f64,
    /// km
    pub depth: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Homogeneous,
    TwoInclusions,
    Cracks1,
    Cracks2,
    LayeredWedge,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub model: ModelKind,
    pub c_o: f64,
    pub rho_o: f64,
    /// Field file for `model = "file"`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub sensors: usize,
    pub x_start: f64,
    pub x_end: f64,
    pub depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub nu: f64,
    pub bandwidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s: Option<f64>,
}

/// `"auto"`, `"full"` or a fixed rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankSpec {
    Fixed(usize),
    Named(RankName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankName {
    Auto,
    Full,
}

impl std::str::FromStr for RankSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(RankSpec::Named(RankName::Auto)),
            "full" => Ok(RankSpec::Named(RankName::Full)),
            _ => s
                .parse::<usize>()
                .map(RankSpec::Fixed)
                .map_err(|_| format!("rank must be auto, full or a positive integer, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSpec {
    pub n_t: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Data interval; `1/(2.3(ν + B))` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub rank: RankSpec,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub scheme: ForcingScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

fn default_substeps() -> usize {
    10
}

fn default_ramp() -> usize {
    2
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Rom, Mode::Fwi]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSpec {
    pub nbx: usize,
    pub nby: usize,
    /// `[x_min, x_max, y_min, y_max]` of the bump centres; whole domain
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[f64; 4]>,
    /// Taper ramp width in cells beyond the source supports.
    #[serde(default = "default_ramp")]
    pub taper_ramp: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(flatten)]
    pub solver: InversionConfig,
}

/// A point where the estimate is compared to a known value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridSpec,
    pub medium: MediumSpec,
    pub array: ArraySpec,
    pub pulse: PulseSpec,
    pub rom: RomSpec,
    pub inversion: InversionSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<Probe>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(p) = cfg.medium.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::covering(g.width, g.depth, g.nx, g.ny).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn pulse(&self) -> Pulse {
        let mut p = Pulse::new(self.pulse.nu, self.pulse.bandwidth);
        if let Some(t_s) = self.pulse.t_s {
            p.t_s = t_s;
        }
        p
    }

    pub fn array(&self) -> SourceArray {
        let a = &self.array;
        let mut s = SourceArray::line(a.sensors, a.x_start, a.x_end, a.depth);
        s.sigma = a.sigma;
        s
    }

    pub fn sim(&self) -> Result<SimConfig> {
        let pulse = self.pulse();
        let mut sampling = Sampling::for_pulse(&pulse, self.rom.n_t);
        sampling.substeps = self.rom.substeps;
        if let Some(dt) = self.rom.dt {
            sampling.dt = dt;
        }
        Ok(SimConfig {
            grid: self.grid()?,
            array: self.array(),
            pulse,
            sampling,
            integrator: self.rom.integrator,
            scheme: self.rom.scheme,
            tau: self.rom.tau,
        })
    }

    pub fn parameterization(&self) -> Result<Parameterization> {
        let grid = self.grid()?;
        let inv = &self.inversion;
        let region = inv.region.unwrap_or([0.0, grid.width(), 0.0, grid.depth()]);
        Ok(Parameterization::new(&grid, inv.nbx, inv.nby, region, self.medium.c_o, self.medium.rho_o)
            .with_taper(&grid, &self.array(), inv.taper_ramp))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let g = &self.grid;
        if !(g.width > 0.0 && g.depth > 0.0 && g.nx >= 2 && g.ny >= 2) {
            return bad(format!("grid {g:?}"));
        }
        let a = &self.array;
        if a.sensors == 0 {
            return bad("at least one sensor".into());
        }
        if !(a.depth > 0.0 && a.depth < g.depth) {
            return bad(format!("array depth {} must lie strictly inside (0, {})", a.depth, g.depth));
        }
        if !(a.x_start > 0.0 && a.x_end < g.width && a.x_start <= a.x_end) {
            return bad(format!("array span [{}, {}] outside (0, {})", a.x_start, a.x_end, g.width));
        }
        if !(self.medium.c_o > 0.0 && self.medium.rho_o > 0.0) {
            return bad("reference values must be positive".into());
        }
        if self.medium.model == ModelKind::File && self.medium.path.is_none() {
            return bad("model = \"file\" needs a path".into());
        }
        if let Some(p) = &self.medium.path {
            if self.medium.model == ModelKind::File && !p.exists() {
                return bad(format!("field file {} does not exist", p.display()));
            }
        }
        if !(self.pulse.nu > 0.0 && self.pulse.bandwidth > 0.0) {
            return bad("pulse frequencies must be positive".into());
        }
        if self.rom.n_t < 1 || self.rom.substeps < 1 {
            return bad("n_t and substeps must be positive".into());
        }
        if let RankSpec::Fixed(r) = self.rom.rank {
            if r == 0 || r > self.rom.n_t {
                return bad(format!("rank {r} outside 1..={}", self.rom.n_t));
            }
        }
        if !(self.rom.noise_level >= 0.0) {
            return bad("noise level must be non-negative".into());
        }
        if self.inversion.nbx == 0 || self.inversion.nby == 0 {
            return bad("basis grid must be non-empty".into());
        }
        self.inversion
            .solver
            .schedule(self.rom.n_t)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let pulse = self.pulse();
        let dt = self.rom.dt.unwrap_or(pulse.default_dt());
        if !(dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if let Some(tau) = self.rom.tau {
            if tau < pulse.t_s {
                return bad(format!("tau {tau} below the pulse half support {}", pulse.t_s));
            }
        }
        Ok(())
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn in_box(x: f64, y: f64, b: [f64; 4]) -> bool {
    x >= b[0] && x <= b[1] && y >= b[2] && y <= b[3]
}

/// Distance from `(x, y)` to the segment `a`–`b`.
fn segment_distance((x, y): (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((x - a.0) * dx + (y - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((x - a.0 - t * dx).powi(2) + (y - a.1 - t * dy).powi(2)).sqrt()
}

const C_INCLUSION: [f64; 4] = [0.8, 1.3, 1.34, 1.69];
const RHO_INCLUSION: [f64; 4] = [1.7, 2.2, 1.34, 1.69];

/// Procedural true media. Every model equals the reference above `y_ref`.
pub fn procedural_medium(kind: ModelKind, grid: &Grid, c_o: f64, rho_o: f64) -> Result<MediumModel> {
    let f: Box<dyn Fn(f64, f64) -> (f64, f64)> = match kind {
        ModelKind::Homogeneous => Box::new(move |_, _| (c_o, rho_o)),
        ModelKind::TwoInclusions => Box::new(move |x, y| {
            let c = if in_box(x, y, C_INCLUSION) { 1.5 * c_o } else { c_o };
            let rho = if in_box(x, y, RHO_INCLUSION) { 1.5 * rho_o } else { rho_o };
            (c, rho)
        }),
        ModelKind::Cracks1 | ModelKind::Cracks2 => {
            let swap = kind == ModelKind::Cracks2;
            Box::new(move |x, y| {
                // smooth backgrounds rising from the reference below 0.4 km
                let s = smoothstep((y - 0.4) / 0.7);
                let mut c = c_o * (1.0 + 0.5 * s);
                let mut rho = rho_o * (1.0 + 0.2 * s);
                let long = segment_distance((x, y), (0.6, 0.55), (1.3, 0.8)) < 0.035;
                let short = segment_distance((x, y), (1.5, 0.85), (2.0, 0.6)) < 0.035;
                let (c_crack, rho_crack) = if swap { (short, long) } else { (long, short) };
                if c_crack {
                    c = 2.0 * c_o;
                }
                if rho_crack {
                    rho = 1.5 * rho_o;
                }
                (c, rho)
            })
        }
        ModelKind::LayeredWedge => Box::new(move |x, y| {
            let first = 0.45 + 0.04 * x;
            let second = 0.8 + 0.1 * (1.3 * x).sin();
            let wedge_top = 0.95 - 0.15 * x;
            let (c, rho) = if y < first {
                (1.0, 1.0)
            } else if y < second {
                (1.25, 1.15)
            } else if y < wedge_top.max(second) {
                (1.55, 1.3)
            } else if x > 1.6 && y < wedge_top + 0.3 {
                (2.2, 1.7)
            } else {
                (1.8, 1.45)
            };
            (c * c_o, rho * rho_o)
        }),
        ModelKind::File => {
            return Err(HarnessError::Config("file models are loaded with import_field".into()));
        }
    };
    MediumModel::from_fn(grid, c_o, rho_o, f).map_err(|e| HarnessError::Config(e.to_string()))
}

/// A configured experiment with its true medium.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub truth: MediumModel,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let (c_o, rho_o) = (config.medium.c_o, config.medium.rho_o);
        let truth = match config.medium.model {
            ModelKind::File => {
                let path = config.medium.path.as_ref().expect("validated");
                let mut m = import_field(path, &grid)?;
                m.c_o = c_o;
                m.rho_o = rho_o;
                m
            }
            kind => procedural_medium(kind, &grid, c_o, rho_o)?,
        };
        check_reference(&config.array(), &grid, &truth)
            .map_err(|e| HarnessError::Config(format!("true medium: {e}")))?;
        Ok(Experiment { config, truth })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let cfg = match name {
            "two-inclusions" => recipe_two_inclusions(),
            "cracks1" => recipe_cracks(1),
            "cracks2" => recipe_cracks(2),
            "layered-wedge" => recipe_layered_wedge(),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown experiment `{other}` (two-inclusions, cracks1, cracks2, layered-wedge, or custom with --config)"
                )))
            }
        };
        Experiment::new(cfg)
    }
}

/// Disjoint inclusions, one in `c` and one in `ρ`, both of contrast 1.5,
/// below an array at 1 km depth in a 3 × 2 km domain.
pub fn recipe_two_inclusions() -> ExperimentConfig {
    let center = |b: [f64; 4]| (0.5 * (b[0] + b[1]), 0.5 * (b[2] + b[3]));
    let (cx, cy) = center(C_INCLUSION);
    let (rx, ry) = center(RHO_INCLUSION);
    ExperimentConfig {
        name: "two-inclusions".into(),
        grid: GridSpec {
            width: 3.0,
            depth: 2.0,
            nx: 40,
            ny: 27,
        },
        medium: MediumSpec {
            model: ModelKind::TwoInclusions,
            c_o: 1.0,
            rho_o: 1.0,
            path: None,
        },
        array: ArraySpec {
            sensors: 9,
            x_start: 0.5,
            x_end: 2.5,
            depth: 1.0,
            sigma: None,
        },
        pulse: PulseSpec {
            nu: 6.0,
            bandwidth: 4.0,
            t_s: None,
        },
        rom: RomSpec {
            n_t: 18,
            substeps: 10,
            dt: Some(0.08),
            rank: RankSpec::Named(RankName::Full),
            noise_level: 0.0,
            seed: 1,
            integrator: Integrator::Chebyshev,
            scheme: ForcingScheme::ExponentialQuadrature,
            tau: None,
        },
        inversion: InversionSpec {
            nbx: 12,
            nby: 8,
            region: Some([0.3, 2.7, 1.25, 1.85]),
            taper_ramp: 2,
            modes: default_modes(),
            solver: InversionConfig {
                iterations: 15,
                gamma: 0.1,
                ..InversionConfig::default()
            },
        },
        probes: vec![
            Probe {
                name: "c-inclusion".into(),
                x: cx,
                y: cy,
            },
            Probe {
                name: "rho-inclusion".into(),
                x: rx,
                y: ry,
            },
        ],
    }
}

/// Crack-like features in smooth backgrounds, sensors 100 m deep.
/// Variant 2 interchanges the crack shapes of `c` and `ρ` and triples the
/// noise.
pub fn recipe_cracks(variant: u8) -> ExperimentConfig {
    let (model, b) = if variant == 2 {
        (ModelKind::Cracks2, 3e-2)
    } else {
        (ModelKind::Cracks1, 1e-2)
    };
    ExperimentConfig {
        name: format!("cracks{}", if variant == 2 { 2 } else { 1 }),
        grid: GridSpec {
            width: 2.5,
            depth: 1.2,
            nx: 42,
            ny: 20,
        },
        medium: MediumSpec {
            model,
            c_o: 1.0,
            rho_o: 1.0,
            path: None,
        },
        array: ArraySpec {
            sensors: 11,
            x_start: 0.25,
            x_end: 2.25,
            depth: 0.1,
            sigma: None,
        },
        pulse: PulseSpec {
            nu: 6.0,
            bandwidth: 4.0,
            t_s: None,
        },
        rom: RomSpec {
            n_t: 30,
            substeps: 10,
            dt: None,
            rank: RankSpec::Named(RankName::Auto),
            noise_level: b,
            seed: 7,
            integrator: Integrator::Chebyshev,
            scheme: ForcingScheme::ExponentialQuadrature,
            tau: None,
        },
        inversion: InversionSpec {
            nbx: 14,
            nby: 7,
            region: Some([0.1, 2.4, 0.25, 1.15]),
            taper_ramp: 2,
            modes: default_modes(),
            solver: InversionConfig {
                layers: vec![10, 20, 30],
                iterations: 6,
                gamma: 0.1,
                ..InversionConfig::default()
            },
        },
        probes: Vec::new(),
    }
}

/// Layered section with a faulted wedge, standing in for a field model.
pub fn recipe_layered_wedge() -> ExperimentConfig {
    ExperimentConfig {
        name: "layered-wedge".into(),
        grid: GridSpec {
            width: 3.0,
            depth: 1.5,
            nx: 44,
            ny: 22,
        },
        medium: MediumSpec {
            model: ModelKind::LayeredWedge,
            c_o: 1.5,
            rho_o: 1.0,
            path: None,
        },
        array: ArraySpec {
            sensors: 13,
            x_start: 0.3,
            x_end: 2.7,
            depth: 0.1,
            sigma: None,
        },
        pulse: PulseSpec {
            nu: 6.0,
            bandwidth: 4.0,
            t_s: None,
        },
        rom: RomSpec {
            n_t: 30,
            substeps: 10,
            dt: None,
            rank: RankSpec::Named(RankName::Auto),
            noise_level: 0.0,
            seed: 3,
            integrator: Integrator::Chebyshev,
            scheme: ForcingScheme::ExponentialQuadrature,
            tau: None,
        },
        inversion: InversionSpec {
            nbx: 14,
            nby: 8,
            region: Some([0.0, 3.0, 0.25, 1.5]),
            taper_ramp: 2,
            modes: default_modes(),
            solver: InversionConfig {
                layers: vec![6, 12, 18, 24, 30],
                iterations: 4,
                gamma: 0.1,
                ..InversionConfig::default()
            },
        },
        probes: Vec::new(),
    }
}

/// Clean data, and noisy data when a noise level is set.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub clean: DataMatrices,
    pub noisy: Option<DataMatrices>,
    /// Realized noise-to-signal ratio of the recorded traces.
    pub noise_ratio: f64,
}

impl DataBundle {
    /// What the inversions see.
    pub fn measured(&self) -> &DataMatrices {
        self.noisy.as_ref().unwrap_or(&self.clean)
    }
}

pub fn make_data(exp: &Experiment) -> Result<DataBundle> {
    let sim = exp.config.sim()?;
    let rec = record_response(&exp.truth, &sim.grid, &sim.array, &sim.pulse, &sim.sampling, sim.integrator)
        .map_err(stage("data generation"))?;
    let n_t = sim.sampling.n_t;
    let clean = data_matrices(&rec, sim.sampling.dt, n_t).map_err(stage("data generation"))?;
    let b = exp.config.rom.noise_level;
    if b > 0.0 {
        let noisy_rec = add_noise(&rec, b, exp.config.rom.seed).map_err(stage("noise"))?;
        let noisy = data_matrices(&noisy_rec, sim.sampling.dt, n_t).map_err(stage("noise"))?;
        Ok(DataBundle {
            clean,
            noisy: Some(noisy),
            noise_ratio: noisy_rec.noise_ratio(),
        })
    } else {
        Ok(DataBundle {
            clean,
            noisy: None,
            noise_ratio: 0.0,
        })
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// `D_0..D_{n_t}` side by side, with `dt` and the noise level in a
/// sidecar header.
pub fn save_data(path: &Path, data: &DataMatrices) -> Result<()> {
    let m = data.n_excitations();
    let mut all = DMatrix::zeros(m, m * data.d.len());
    for (j, d) in data.d.iter().enumerate() {
        all.view_mut((0, j * m), (m, m)).copy_from(d);
    }
    save_matrix(path, &all, m).map_err(io_err(path))?;
    let mut h = Header::new();
    h.set("kind", "data").set("dt", data.dt).set("noise_level", data.noise_level).set("n_t", data.n_t());
    let hp = sidecar(path);
    h.save(&hp).map_err(io_err(&hp))
}

pub fn load_data(path: &Path) -> Result<DataMatrices> {
    let fmt = |source| HarnessError::Format {
        path: path.to_path_buf(),
        source,
    };
    let (all, m) = load_matrix(path).map_err(fmt)?;
    let h = Header::load(sidecar(path)).map_err(fmt)?;
    if m == 0 || all.nrows() != m || all.ncols() % m != 0 {
        return Err(fmt(FormatError::Header(format!("{}x{} with block size {m}", all.nrows(), all.ncols()))));
    }
    let d = (0..all.ncols() / m).map(|j| all.columns(j * m, m).into_owned()).collect();
    Ok(DataMatrices {
        d,
        dt: h.parse_value("dt").map_err(fmt)?,
        noise_level: h.parse_value("noise_level").map_err(fmt)?,
    })
}

/// Builds the ROM factor from measured data.
pub fn rom_from_data(data: &DataMatrices, rank: RankSpec) -> Result<RomFactor> {
    let n_t = data.n_t();
    let mass = assemble_mass(&data.d, n_t).map_err(stage("mass assembly"))?;
    let stiff = assemble_stiffness(&data.d, n_t).map_err(stage("stiffness assembly"))?;
    let r = match rank {
        RankSpec::Named(RankName::Full) => n_t,
        RankSpec::Named(RankName::Auto) => auto_rank(&mass, data.noise_level),
        RankSpec::Fixed(r) => r,
    };
    if r == 0 || r > n_t {
        return Err(HarnessError::Config(format!("rank {r} outside 1..={n_t}")));
    }
    build_rom(&mass, &stiff, r).map_err(stage("ROM construction"))
}

pub fn save_rom(dir: &Path, f: &RomFactor) -> Result<()> {
    let m = f.block_size();
    for (name, mat, bs) in [("rom_r.bin", f.r.matrix(), m), ("rom_p.bin", f.p.matrix(), m), ("rom_pi.bin", &f.pi, m)] {
        let p = dir.join(name);
        save_matrix(&p, mat, bs).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Runs one inversion mode on an experiment.
pub fn run_inversion(exp: &Experiment, data: &DataMatrices, rom: Option<&RomFactor>, mode: Mode) -> Result<InversionResult> {
    let sim = exp.config.sim()?;
    let param = exp.config.parameterization()?;
    let input = match (mode, rom) {
        (Mode::Rom, Some(f)) => InversionData::Rom(f),
        (Mode::Rom, None) => return Err(HarnessError::Config("ROM mode needs a ROM factor".into())),
        (Mode::Fwi, _) => InversionData::Fwi(data),
    };
    invert(&exp.config.inversion.solver, input, &sim, &param).map_err(stage(match mode {
        Mode::Rom => "ROM inversion",
        Mode::Fwi => "FWI inversion",
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub c_true: f64,
    pub rho_true: f64,
    pub c: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub relative_error: f64,
    pub relative_error_c: f64,
    pub relative_error_rho: f64,
    pub c_range: [f64; 2],
    pub rho_range: [f64; 2],
    pub last_update_norm: f64,
    pub runtime_seconds: f64,
    #[serde(default)]
    pub probes: Vec<ProbeValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    pub n_excitations: usize,
    pub n_t: usize,
    pub dt: f64,
    pub rank: usize,
    pub noise_level: f64,
    pub realized_noise_ratio: f64,
    pub seed: u64,
    pub search_dimension: usize,
    pub truth_c_range: [f64; 2],
    pub truth_rho_range: [f64; 2],
    pub data_seconds: f64,
    pub modes: Vec<ModeReport>,
}

impl Report {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {}x{} grid, n_E = {}, n_t = {}, rank {}, b = {} (realized {:.4e}), 2N = {}\n",
            self.name,
            self.nx,
            self.ny,
            self.n_excitations,
            self.n_t,
            self.rank,
            self.noise_level,
            self.realized_noise_ratio,
            self.search_dimension
        );
        for m in &self.modes {
            s += &format!(
                "  {}: objective {:.3e} -> {:.3e}, rel. error {:.4} (c {:.4}, rho {:.4}), c in [{:.3}, {:.3}], rho in [{:.3}, {:.3}], {:.1} s\n",
                m.mode,
                m.initial_objective,
                m.final_objective,
                m.relative_error,
                m.relative_error_c,
                m.relative_error_rho,
                m.c_range[0],
                m.c_range[1],
                m.rho_range[0],
                m.rho_range[1],
                m.runtime_seconds
            );
            for p in &m.probes {
                s += &format!(
                    "    {} at ({:.2}, {:.2}): c {:.3} (true {:.3}), rho {:.3} (true {:.3})\n",
                    p.name, p.x, p.y, p.c, p.c_true, p.rho, p.rho_true
                );
            }
        }
        s
    }

    pub fn load(dir: &Path) -> Result<Report> {
        let p = dir.join("manifest.toml");
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
    }
}

fn range(v: &[f64]) -> [f64; 2] {
    [v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max)]
}

/// Value of a cell field at the cell containing `(x, y)`.
pub fn probe(field: &[f64], grid: &Grid, x: f64, y: f64) -> f64 {
    let (i, j) = grid.locate(x, y);
    field[grid.cell(i, j)]
}

pub fn trajectory_csv(result: &InversionResult) -> String {
    let mut s = String::from("iteration,layer,k,objective,update_norm,mu,clamped\n");
    for r in &result.trajectory {
        s += &format!(
            "{},{},{},{:e},{:e},{:e},{}\n",
            r.iteration, r.layer, r.k, r.objective, r.update_norm, r.mu, r.clamped
        );
    }
    s
}

fn timing_csv(result: &InversionResult) -> String {
    let mut s = String::from("iteration,wall_time\n");
    for r in &result.trajectory {
        s += &format!("{},{:.6}\n", r.iteration, r.wall_time);
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `<stem>.bin` (the field as `ny × nx`) and `<stem>.pgm`; returns
/// the PGM range.
pub fn save_field(dir: &Path, stem: &str, values: &[f64], grid: &Grid) -> Result<(f64, f64)> {
    let m = DMatrix::from_fn(grid.ny, grid.nx, |j, i| values[grid.cell(i, j)]);
    let p = dir.join(format!("{stem}.bin"));
    save_matrix(&p, &m, 1).map_err(io_err(&p))?;
    let p = dir.join(format!("{stem}.pgm"));
    save_pgm(&p, values, grid.nx, grid.ny).map_err(io_err(&p))
}

/// Full pipeline into `out`: data, ROM, every configured inversion mode,
/// artifacts and manifest. Artifacts written before a failure are kept.
pub fn run_experiment(exp: &Experiment, out: &Path) -> Result<Report> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg = &exp.config;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let grid = cfg.grid()?;
    let mut pgm = Header::new();
    let (lo, hi) = save_field(out, "true_c", &exp.truth.c, &grid)?;
    pgm.set("true_c", format!("{lo:e} {hi:e}"));
    let (lo, hi) = save_field(out, "true_rho", &exp.truth.rho, &grid)?;
    pgm.set("true_rho", format!("{lo:e} {hi:e}"));

    let t0 = Instant::now();
    let data = make_data(exp)?;
    save_data(&out.join("data_clean.bin"), &data.clean)?;
    if let Some(noisy) = &data.noisy {
        save_data(&out.join("data_noisy.bin"), noisy)?;
    }
    let rom = if cfg.inversion.modes.contains(&Mode::Rom) {
        let f = rom_from_data(data.measured(), cfg.rom.rank)?;
        save_rom(out, &f)?;
        Some(f)
    } else {
        None
    };
    let data_seconds = t0.elapsed().as_secs_f64();
    log::info!("{}: data and ROM in {data_seconds:.1} s", cfg.name);

    let mut modes = Vec::new();
    for &mode in &cfg.inversion.modes {
        let start = Instant::now();
        let res = run_inversion(exp, data.measured(), rom.as_ref(), mode)?;
        let runtime = start.elapsed().as_secs_f64();
        write_text(&out.join(format!("trajectory_{mode}.csv")), &trajectory_csv(&res))?;
        write_text(&out.join(format!("timing_{mode}.csv")), &timing_csv(&res))?;
        let p = out.join(format!("eta_{mode}.bin"));
        save_matrix(&p, &DMatrix::from_column_slice(res.eta.len(), 1, &res.eta), 1).map_err(io_err(&p))?;
        let (lo, hi) = save_field(out, &format!("{mode}_c"), &res.medium.c, &grid)?;
        pgm.set(&format!("{mode}_c"), format!("{lo:e} {hi:e}"));
        let (lo, hi) = save_field(out, &format!("{mode}_rho"), &res.medium.rho, &grid)?;
        pgm.set(&format!("{mode}_rho"), format!("{lo:e} {hi:e}"));
        let probes = cfg
            .probes
            .iter()
            .map(|p| ProbeValue {
                name: p.name.clone(),
                x: p.x,
                y: p.y,
                c_true: probe(&exp.truth.c, &grid, p.x, p.y),
                rho_true: probe(&exp.truth.rho, &grid, p.x, p.y),
                c: probe(&res.medium.c, &grid, p.x, p.y),
                rho: probe(&res.medium.rho, &grid, p.x, p.y),
            })
            .collect();
        let last = res.trajectory.last();
        modes.push(ModeReport {
            mode,
            iterations: res.trajectory.len(),
            initial_objective: res.initial_objective,
            final_objective: last.map_or(res.initial_objective, |r| r.objective),
            relative_error: relative_model_error(&res.medium, &exp.truth),
            relative_error_c: relative_field_error(&res.medium.c, &exp.truth.c, exp.truth.c_o),
            relative_error_rho: relative_field_error(&res.medium.rho, &exp.truth.rho, exp.truth.rho_o),
            c_range: range(&res.medium.c),
            rho_range: range(&res.medium.rho),
            last_update_norm: last.map_or(0.0, |r| r.update_norm),
            runtime_seconds: runtime,
            probes,
        });
        log::info!("{}: {mode} inversion in {runtime:.1} s", cfg.name);
    }
    let p = out.join("pgm_ranges.hdr");
    pgm.save(&p).map_err(io_err(&p))?;

    let report = Report {
        name: cfg.name.clone(),
        nx: grid.nx,
        ny: grid.ny,
        n_excitations: cfg.array().n_excitations(),
        n_t: cfg.rom.n_t,
        dt: data.clean.dt,
        rank: rom.as_ref().map_or(0, |f| f.rank),
        noise_level: cfg.rom.noise_level,
        realized_noise_ratio: data.noise_ratio,
        seed: cfg.rom.seed,
        search_dimension: 2 * cfg.inversion.nbx * cfg.inversion.nby,
        truth_c_range: range(&exp.truth.c),
        truth_rho_range: range(&exp.truth.rho),
        data_seconds,
        modes,
    };
    let manifest = toml::to_string(&report).expect("report serializes");
    write_text(&out.join("manifest.toml"), &manifest)?;
    Ok(report)
}

/// Writes a medium as a field file: `(2·ny) × nx` with `c` on top of `ρ`,
/// plus a sidecar header with the grid geometry.
pub fn export_field(path: &Path, medium: &MediumModel, grid: &Grid) -> Result<()> {
    let (nx, ny) = (grid.nx, grid.ny);
    let m = DMatrix::from_fn(2 * ny, nx, |r, i| {
        if r < ny {
            medium.c[grid.cell(i, r)]
        } else {
            medium.rho[grid.cell(i, r - ny)]
        }
    });
    save_matrix(path, &m, 1).map_err(io_err(path))?;
    let mut h = Header::new();
    h.set("kind", "field")
        .set("nx", nx)
        .set("ny", ny)
        .set("hx", format!("{:e}", grid.hx))
        .set("hy", format!("{:e}", grid.hy))
        .set("x0", format!("{:e}", grid.x0))
        .set("y0", format!("{:e}", grid.y0))
        .set("c_o", format!("{:e}", medium.c_o))
        .set("rho_o", format!("{:e}", medium.rho_o));
    let hp = sidecar(path);
    h.save(&hp).map_err(io_err(&hp))
}

/// Reads a field file and resamples it bilinearly onto `grid`.
pub fn import_field(path: &Path, grid: &Grid) -> Result<MediumModel> {
    let fmt = |source| HarnessError::Format {
        path: path.to_path_buf(),
        source,
    };
    let (m, _) = load_matrix(path).map_err(fmt)?;
    let h = Header::load(sidecar(path)).map_err(fmt)?;
    let nx: usize = h.parse_value("nx").map_err(fmt)?;
    let ny: usize = h.parse_value("ny").map_err(fmt)?;
    if m.nrows() != 2 * ny || m.ncols() != nx || nx == 0 || ny == 0 {
        return Err(fmt(FormatError::Header(format!(
            "field is {}x{}, header says {}x{}",
            m.nrows(),
            m.ncols(),
            2 * ny,
            nx
        ))));
    }
    let src = Grid::with_origin(
        nx,
        ny,
        h.parse_value("hx").map_err(fmt)?,
        h.parse_value("hy").map_err(fmt)?,
        h.parse_value("x0").map_err(fmt)?,
        h.parse_value("y0").map_err(fmt)?,
    )
    .map_err(|e| fmt(FormatError::Header(e.to_string())))?;
    let c_o: f64 = h.parse_value("c_o").map_err(fmt)?;
    let rho_o: f64 = h.parse_value("rho_o").map_err(fmt)?;
    for r in 0..2 * ny {
        for i in 0..nx {
            let v = m[(r, i)];
            if !(v > 0.0) {
                let (field, j) = if r < ny { ("c", r) } else { ("rho", r - ny) };
                return Err(HarnessError::NonPositiveField {
                    field,
                    index: src.cell(i, j),
                    value: v,
                });
            }
        }
    }
    let (c, rho) = if src == *grid {
        (
            (0..grid.n_cells()).map(|k| m[(k / nx, k % nx)]).collect(),
            (0..grid.n_cells()).map(|k| m[(ny + k / nx, k % nx)]).collect(),
        )
    } else {
        let sample = |x: f64, y: f64, off: usize| -> f64 {
            let axis = |v: f64, o: f64, h: f64, n: usize| -> (usize, usize, f64) {
                let f = ((v - o) / h - 0.5).clamp(0.0, (n - 1) as f64);
                let r = f.round();
                let f = if (f - r).abs() < 1e-9 { r } else { f };
                let i0 = (f.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, f - i0 as f64)
            };
            let (i0, i1, fx) = axis(x, src.x0, src.hx, nx);
            let (j0, j1, fy) = axis(y, src.y0, src.hy, ny);
            let v = |i: usize, j: usize| m[(off + j, i)];
            (1.0 - fy) * ((1.0 - fx) * v(i0, j0) + fx * v(i1, j0)) + fy * ((1.0 - fx) * v(i0, j1) + fx * v(i1, j1))
        };
        let mut c = vec![0.0; grid.n_cells()];
        let mut rho = vec![0.0; grid.n_cells()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                c[grid.cell(i, j)] = sample(x, y, 0);
                rho[grid.cell(i, j)] = sample(x, y, ny);
            }
        }
        (c, rho)
    };
    MediumModel::new(grid, c, rho, c_o, rho_o).map_err(|e| HarnessError::Config(e.to_string()))
}
