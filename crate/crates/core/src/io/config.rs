//! TOML case files.
//!
//! ```toml
//! [grid]
//! dims = [64, 32]
//! spacing = [1.5873e-3, 1.5873e-3]   # or: extent = [0.1, 0.0492]
//!
//! [material]                          # optional, aluminium by default
//! rho0 = 2700.0
//! c0 = 6000.0
//!
//! [time]
//! dt = 1.2e-7
//! steps = 300
//!
//! [[sources]]
//! position = [10, 31]
//! amplitude = 1e12
//! frequency = 5e5
//! cycles = 2
//!
//! [sensors]
//! edge = "1+"                         # face where axis 1 is at its maximum
//! stride = 2
//!
//! [[voids]]
//! shape = "circle"
//! center = [0.05, 0.025]
//! radius = 0.005
//!
//! [train]
//! strategy = "hybrid"
//! epochs = 50
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::adjoint::Quadrature;
use crate::ansatz::NetworkConfig;
use crate::error::{FwiError, Result};
use crate::fields::{Grid, MaterialModel, ScalarField, TimeAxis};
use crate::forward::{SensorArray, ShotRecord, SourceSpec};
use crate::inversion::{Problem, Strategy, TrainConfig};
use crate::io::phantom::{build_phantom, make_reference_data, PhantomSpec, VoidShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureName {
    #[default]
    LeftRiemann,
    Trapezoid,
}

impl From<QuadratureName> for Quadrature {
    fn from(q: QuadratureName) -> Self {
        match q {
            QuadratureName::LeftRiemann => Quadrature::LeftRiemann,
            QuadratureName::Trapezoid => Quadrature::Trapezoid,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    grid: RawGrid,
    #[serde(default)]
    material: RawMaterial,
    time: RawTime,
    sources: Vec<RawSource>,
    sensors: RawSensors,
    #[serde(default)]
    voids: Vec<VoidShape>,
    train: Option<RawTrain>,
    network: Option<RawNetwork>,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dims: Vec<usize>,
    spacing: Option<Vec<f64>>,
    extent: Option<Vec<f64>>,
    #[serde(default = "one")]
    ghost_layers: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    rho0: f64,
    c0: f64,
    eps: f64,
    upper: f64,
}

impl Default for RawMaterial {
    fn default() -> Self {
        let m = MaterialModel::aluminium();
        Self {
            rho0: m.rho0,
            c0: m.c0,
            eps: m.eps,
            upper: m.upper,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    dt: f64,
    steps: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    position: Vec<usize>,
    amplitude: f64,
    frequency: f64,
    cycles: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensors {
    positions: Option<Vec<Vec<usize>>>,
    edge: Option<String>,
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    offset: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    strategy: String,
    epochs: usize,
    lr: Option<f64>,
    lr_penalty: Option<f64>,
    decay_power: Option<f64>,
    decay_rate: Option<f64>,
    clip: Option<f64>,
    #[serde(default)]
    seed: u64,
    voxel: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    latent_channels: usize,
    block_channels: Vec<usize>,
    latent_dims: Option<Vec<usize>>,
    pixel_norm: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    #[serde(default = "two")]
    refine: usize,
    #[serde(default)]
    quadrature: QuadratureName,
}

impl Default for RawData {
    fn default() -> Self {
        Self {
            refine: 2,
            quadrature: QuadratureName::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default = "default_dir")]
    dir: PathBuf,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A fully validated case.
#[derive(Debug, Clone)]
pub struct Case {
    pub grid: Grid,
    pub material: MaterialModel,
    pub time: TimeAxis,
    pub sources: Vec<SourceSpec>,
    pub sensors: SensorArray,
    pub phantom: PhantomSpec,
    /// absent for cases that only run the forward solver
    pub train: Option<TrainConfig>,
    pub refine: usize,
    pub quadrature: Quadrature,
    pub output_dir: PathBuf,
}

fn cfg_err(key: &str, reason: impl Into<String>) -> FwiError {
    FwiError::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Re-labels library validation errors with the config key they came from.
fn under(prefix: &str, e: FwiError) -> FwiError {
    match e {
        FwiError::InvalidParameter { key, reason } if prefix.is_empty() || key.starts_with(prefix) => cfg_err(&key, reason),
        FwiError::InvalidParameter { key, reason } => cfg_err(&format!("{prefix}.{key}"), reason),
        FwiError::Config { .. } => e,
        other => cfg_err(prefix, other.to_string()),
    }
}

/// The dotted key at the byte offset of a TOML error: the nearest preceding
/// table header joined with the key on the offending line.
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map_or(0, |p| p + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    let section = text[..line_start]
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.starts_with('[').then(|| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        })
        .unwrap_or_default();
    if key.starts_with('[') {
        key.trim_matches(|c| c == '[' || c == ']').trim().to_string()
    } else if section.is_empty() || key.is_empty() {
        format!("{section}{key}")
    } else {
        format!("{section}.{key}")
    }
}

fn sensor_edge(grid: &Grid, edge: &str, stride: usize, offset: usize) -> Result<Vec<Vec<usize>>> {
    let bad = || cfg_err("sensors.edge", format!("`{edge}` is not of the form <axis><+|->, e.g. \"1+\""));
    if !edge.is_ascii() {
        return Err(bad());
    }
    let (axis, sign) = edge.split_at(edge.len().saturating_sub(1));
    let axis: usize = axis.parse().map_err(|_| bad())?;
    if axis >= grid.ndim() {
        return Err(cfg_err("sensors.edge", format!("axis {axis} exceeds the grid dimension {}", grid.ndim())));
    }
    let fixed = match sign {
        "+" => grid.dims()[axis] - 1,
        "-" => 0,
        _ => return Err(bad()),
    };
    if stride == 0 {
        return Err(cfg_err("sensors.stride", "must be ≥ 1"));
    }
    let free: Vec<usize> = (0..grid.ndim()).filter(|&a| a != axis).collect();
    let ranges: Vec<Vec<usize>> = free
        .iter()
        .map(|&a| (offset..grid.dims()[a]).step_by(stride).collect())
        .collect();
    if ranges.iter().any(|r| r.is_empty()) {
        return Err(cfg_err("sensors.offset", "leaves no sensor on the edge"));
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; free.len()];
    loop {
        let mut p = vec![fixed; grid.ndim()];
        for (k, &a) in free.iter().enumerate() {
            p[a] = ranges[k][idx[k]];
        }
        out.push(p);
        let mut k = 0;
        loop {
            if k == free.len() {
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] < ranges[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

pub fn parse_case(text: &str) -> Result<Case> {
    let raw: RawCase = toml::from_str(text).map_err(|e| {
        let key = e.span().map_or_else(|| "<document>".to_string(), |s| key_at(text, s.start));
        cfg_err(&key, e.message().trim().to_string())
    })?;

    let g = &raw.grid;
    let grid = match (&g.spacing, &g.extent) {
        (Some(h), None) => Grid::with_spacing(&g.dims, h, g.ghost_layers),
        (None, Some(l)) => Grid::new(&g.dims, l, g.ghost_layers),
        _ => return Err(cfg_err("grid", "give exactly one of `spacing` and `extent`")),
    }
    .map_err(|e| cfg_err("grid", e.to_string()))?;

    let m = &raw.material;
    let material = MaterialModel::new(m.rho0, m.c0, m.eps, m.upper).map_err(|e| under("material", e))?;

    let time = TimeAxis::new(raw.time.dt, raw.time.steps).map_err(|e| under("time", e))?;
    if raw.time.steps == 0 {
        return Err(cfg_err("time.steps", "must be ≥ 1"));
    }
    time.check_cfl(&grid, material.c0).map_err(|e| cfg_err("time.dt", e.to_string()))?;

    if raw.sources.is_empty() {
        return Err(cfg_err("sources", "at least one source is required"));
    }
    let sources = raw
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let key = format!("sources[{i}]");
            if grid.index(&s.position).is_none() {
                return Err(cfg_err(&format!("{key}.position"), format!("{:?} is outside the grid", s.position)));
            }
            SourceSpec::new(s.position.clone(), s.amplitude, s.frequency, s.cycles).map_err(|e| under(&key, e))
        })
        .collect::<Result<Vec<_>>>()?;

    let positions = match (&raw.sensors.positions, &raw.sensors.edge) {
        (Some(p), None) => p.clone(),
        (None, Some(edge)) => sensor_edge(&grid, edge, raw.sensors.stride, raw.sensors.offset)?,
        _ => return Err(cfg_err("sensors", "give exactly one of `positions` and `edge`")),
    };
    if let Some(p) = positions.iter().find(|p| grid.index(p).is_none()) {
        return Err(cfg_err("sensors.positions", format!("{p:?} is outside the grid")));
    }
    let sensors = SensorArray::new(positions).map_err(|e| cfg_err("sensors.positions", e.to_string()))?;

    let phantom = PhantomSpec { voids: raw.voids };
    build_phantom(&phantom, &grid, material.eps).map_err(|e| under("voids", e))?;

    let train = match raw.train {
        None => {
            if raw.network.is_some() {
                return Err(cfg_err("network", "needs a [train] section"));
            }
            None
        }
        Some(t) => {
            let strategy: Strategy = t.strategy.parse().map_err(|e| under("train", e))?;
            let mut cfg = TrainConfig::new(strategy, t.epochs);
            cfg.lr = t.lr.unwrap_or(cfg.lr);
            cfg.lr_penalty = t.lr_penalty.unwrap_or(cfg.lr_penalty);
            cfg.decay_power = t.decay_power.unwrap_or(cfg.decay_power);
            cfg.decay_rate = t.decay_rate.unwrap_or(cfg.decay_rate);
            cfg.clip = t.clip.unwrap_or(cfg.clip);
            cfg.seed = t.seed;
            if let Some(v) = &t.voxel {
                if v.len() != grid.ndim() || v.iter().zip(grid.dims()).any(|(&s, &n)| s == 0 || n % s != 0) {
                    return Err(cfg_err("train.voxel", format!("{v:?} does not tile the grid {:?}", grid.dims())));
                }
            }
            cfg.voxel = t.voxel;
            if let Some(n) = raw.network {
                let mut net = NetworkConfig::for_grid(grid.dims(), n.latent_channels, n.block_channels, material.eps)
                    .with_pixel_norm(n.pixel_norm.unwrap_or(grid.ndim() == 3));
                if let Some(ld) = n.latent_dims {
                    net.latent_dims = ld;
                }
                net.validate().map_err(|e| under("network", e))?;
                if net.generated_dims().iter().zip(grid.dims()).any(|(g, n)| g < n) {
                    return Err(cfg_err(
                        "network.latent_dims",
                        format!("generator yields {:?}, too small for grid {:?}", net.generated_dims(), grid.dims()),
                    ));
                }
                cfg.network = Some(net);
            }
            cfg.validate().map_err(|e| under("train", e))?;
            Some(cfg)
        }
    };

    if raw.data.refine == 0 {
        return Err(cfg_err("data.refine", "must be ≥ 1"));
    }

    Ok(Case {
        grid,
        material,
        time,
        sources,
        sensors,
        phantom,
        train,
        refine: raw.data.refine,
        quadrature: raw.data.quadrature.into(),
        output_dir: raw.output.dir,
    })
}

pub fn load_case(path: &Path) -> Result<Case> {
    parse_case(&fs::read_to_string(path)?)
}

impl Case {
    pub fn truth(&self) -> Result<ScalarField> {
        build_phantom(&self.phantom, &self.grid, self.material.eps)
    }

    pub fn reference_data(&self) -> Result<Vec<ShotRecord>> {
        make_reference_data(
            &self.phantom,
            &self.grid,
            &self.material,
            self.time,
            &self.sources,
            &self.sensors,
            self.refine,
        )
    }

    pub fn problem(&self, data: Vec<ShotRecord>) -> Result<Problem> {
        let p = Problem {
            grid: self.grid.clone(),
            material: self.material,
            time: self.time,
            sources: self.sources.clone(),
            sensors: self.sensors.clone(),
            data,
            truth: Some(self.truth()?),
            quadrature: self.quadrature,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
dims = [16, 8]
spacing = [1e-3, 1e-3]

[time]
dt = 5e-8
steps = 40

[[sources]]
position = [4, 7]
amplitude = 1e12
frequency = 5e5
cycles = 2

[sensors]
edge = "1+"
stride = 3
"#;

    fn key_of(text: &str) -> String {
        match parse_case(text) {
            Err(FwiError::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_case_parses() {
        let c = parse_case(MINIMAL).unwrap();
        assert_eq!(c.grid.dims(), &[16, 8]);
        assert_eq!(c.sensors.len(), 6);
        assert_eq!(c.sensors.positions()[1], vec![3, 7]);
        assert_eq!(c.refine, 2);
        assert!(c.train.is_none());
        assert_eq!(c.material, MaterialModel::aluminium());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("stride = 3", "stride = 3\nstrid = 2");
        assert_eq!(key_of(&text), "sensors.strid");
    }

    #[test]
    fn unknown_section_is_named() {
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert_eq!(key_of(&text), "extra");
    }

    #[test]
    fn wrong_type_is_named() {
        let text = MINIMAL.replace("steps = 40", "steps = \"forty\"");
        assert_eq!(key_of(&text), "time.steps");
    }

    #[test]
    fn cfl_violation_names_dt() {
        let text = MINIMAL.replace("dt = 5e-8", "dt = 5e-6");
        assert_eq!(key_of(&text), "time.dt");
    }

    #[test]
    fn source_outside_grid() {
        let text = MINIMAL.replace("position = [4, 7]", "position = [4, 8]");
        assert_eq!(key_of(&text), "sources[0].position");
    }

    #[test]
    fn bad_strategy_and_lr() {
        let text = format!("{MINIMAL}\n[train]\nstrategy = \"sgd\"\nepochs = 3\n");
        assert_eq!(key_of(&text), "train.strategy");
        let text = format!("{MINIMAL}\n[train]\nstrategy = \"hybrid\"\nepochs = 3\nlr = -1.0\n");
        assert_eq!(key_of(&text), "train.lr");
    }

    #[test]
    fn network_must_match_grid() {
        let text = format!(
            "{MINIMAL}\n[train]\nstrategy = \"hybrid\"\nepochs = 3\n\n[network]\nlatent_channels = 4\nblock_channels = [4, 4]\nlatent_dims = [2, 2]\n"
        );
        assert_eq!(key_of(&text), "network.latent_dims");
    }

    #[test]
    fn void_outside_domain() {
        let text = format!("{MINIMAL}\n[[voids]]\nshape = \"circle\"\ncenter = [0.1, 0.0]\nradius = 1e-3\n");
        assert!(key_of(&text).starts_with("voids"));
    }

    #[test]
    fn train_section_round_trip() {
        let text = format!(
            "{MINIMAL}\n[train]\nstrategy = \"adjoint-constant\"\nepochs = 7\nlr = 0.05\nvoxel = [2, 2]\nseed = 9\n"
        );
        let t = parse_case(&text).unwrap().train.unwrap();
        assert_eq!(t.strategy, Strategy::AdjointConstant);
        assert_eq!(t.epochs, 7);
        assert_eq!(t.lr, 0.05);
        assert_eq!(t.voxel, Some(vec![2, 2]));
        assert_eq!(t.seed, 9);
    }
}
