use serde::Deserialize;

use crate::error::{FwiError, Result};
use crate::fields::{Grid, MaterialModel, ScalarField, TimeAxis};
use crate::forward::{run_forward, SensorArray, ShotRecord, SourceSpec};

/// A void region in physical coordinates (metres, origin at node 0).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum VoidShape {
    Circle { center: Vec<f64>, radius: f64 },
    Sphere { center: Vec<f64>, radius: f64 },
    Box { min: Vec<f64>, max: Vec<f64> },
}

impl VoidShape {
    fn ndim(&self) -> usize {
        match self {
            VoidShape::Circle { .. } => 2,
            VoidShape::Sphere { .. } => 3,
            VoidShape::Box { min, .. } => min.len(),
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            VoidShape::Circle { center, radius } | VoidShape::Sphere { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            VoidShape::Box { min, max } => (min.clone(), max.clone()),
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self {
            VoidShape::Circle { center, radius } | VoidShape::Sphere { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() <= radius * radius
            }
            VoidShape::Box { min, max } => x.iter().zip(min.iter().zip(max)).all(|(a, (lo, hi))| *lo <= *a && *a <= *hi),
        }
    }

    fn check(&self, grid: &Grid, key: &str) -> Result<()> {
        let err = |reason: String| FwiError::Config {
            key: key.to_string(),
            reason,
        };
        if self.ndim() != grid.ndim() {
            return Err(err(format!("{}D shape on a {}D grid", self.ndim(), grid.ndim())));
        }
        let (lo, hi) = self.bounds();
        if lo.len() != grid.ndim() || hi.len() != grid.ndim() {
            return Err(err("coordinate lists must have one entry per axis".into()));
        }
        if let VoidShape::Circle { radius, .. } | VoidShape::Sphere { radius, .. } = self {
            if !(*radius > 0.0) {
                return Err(err(format!("radius must be positive, got {radius}")));
            }
        }
        for (axis, ((l, h), e)) in lo.iter().zip(&hi).zip(grid.extent()).enumerate() {
            if !(l <= h) {
                return Err(err(format!("empty extent on axis {axis}")));
            }
            if *l < 0.0 || *h > *e {
                return Err(err(format!("shape leaves the domain [0, {e}] on axis {axis}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default)]
    pub voids: Vec<VoidShape>,
}

/// `γ = 1` outside the voids and `γ = eps` at every node whose position lies
/// inside one.
pub fn build_phantom(spec: &PhantomSpec, grid: &Grid, eps: f64) -> Result<ScalarField> {
    for (i, v) in spec.voids.iter().enumerate() {
        v.check(grid, &format!("voids[{i}]"))?;
    }
    let mut field = ScalarField::constant(grid, 1.0);
    for (i, value) in field.values_mut().iter_mut().enumerate() {
        let x = grid.position(&grid.coords(i));
        if spec.voids.iter().any(|v| v.contains(&x)) {
            *value = eps;
        }
    }
    Ok(field)
}

/// Records every source on a grid refined by `refine` in space and time,
/// with the phantom rasterised on the fine grid, and samples the traces
/// back onto the coarse time axis.
///
/// The grid-scaled point source carries `ψ0·V/‖dx‖²` of physical strength;
/// the fine amplitude is rescaled so both grids model the same source.
pub fn make_reference_data(
    phantom: &PhantomSpec,
    grid: &Grid,
    material: &MaterialModel,
    time: TimeAxis,
    sources: &[SourceSpec],
    sensors: &SensorArray,
    refine: usize,
) -> Result<Vec<ShotRecord>> {
    if refine == 0 {
        return Err(FwiError::param("data.refine", "must be ≥ 1"));
    }
    let fine = grid.refined(refine)?;
    let fine_time = TimeAxis::new(time.dt / refine as f64, time.n_steps * refine)?;
    let gamma = build_phantom(phantom, &fine, material.eps)?;
    let lift = |p: &[usize]| p.iter().map(|&c| c * refine).collect::<Vec<_>>();
    let fine_sensors = SensorArray::new(sensors.positions().iter().map(|p| lift(p)).collect())?;
    let amplitude_scale = (fine.spacing_norm_sq() / grid.spacing_norm_sq()) * (grid.cell_volume() / fine.cell_volume());
    let shots: Vec<Result<ShotRecord>> = {
        use rayon::prelude::*;
        sources
            .par_iter()
            .map(|src| {
                grid.index(&src.position).ok_or_else(|| FwiError::OutOfRange(src.position.clone()))?;
                let fine_src = SourceSpec {
                    position: lift(&src.position),
                    amplitude: src.amplitude * amplitude_scale,
                    ..src.clone()
                };
                let (_, rec) = run_forward(&gamma, material, fine_time, &fine_src, &fine_sensors, false)?;
                let mut coarse = ShotRecord::zeros(sensors.clone(), time);
                for s in 0..sensors.len() {
                    let fine_trace = rec.trace(s);
                    for (n, v) in coarse.trace_mut(s).iter_mut().enumerate() {
                        *v = fine_trace[n * refine];
                    }
                }
                Ok(coarse)
            })
            .collect()
    };
    shots.into_iter().collect()
}
