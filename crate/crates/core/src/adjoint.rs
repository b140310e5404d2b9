//! Continuous adjoint state method.
//!
//! The adjoint field solves the same wave equation backward in time with
//! `−(û − u_ℳ)` injected at every sensor. Because the spatial operator is
//! self-adjoint and leapfrog is time-reversible, the adjoint is obtained by
//! running the forward propagator on the time-reversed residual and then
//! reversing the output. The point-source delta at a sensor is discretised
//! as `1/V_node`, where `V_node` is the control volume of the node (halved
//! per axis on the boundary).
//!
//! The sensitivity density is the Fréchet kernel
//! `K_γ = ∫ −ρ0 u†_t u_t + ρ0c0² ∇u†·∇u dt`.

use std::ops::Deref;

use crate::ansatz::ConstantAnsatz;
use crate::error::{FwiError, Result};
use crate::fields::{Grid, MaterialModel, ScalarField, TimeAxis};
use crate::forward::{
    propagate, run_forward_with, SensorArray, ShotRecord, SourceSpec, WaveOperator,
    WavefieldHistory,
};

/// Time quadrature for the misfit integral and the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `Σ_{n=0}^{N−1} g(t_n) Δt`
    #[default]
    LeftRiemann,
    /// end samples weighted by one half
    Trapezoid,
}

impl Quadrature {
    pub fn weight(self, n: usize, n_steps: usize) -> f64 {
        match self {
            Quadrature::LeftRiemann => {
                if n < n_steps {
                    1.0
                } else {
                    0.0
                }
            }
            Quadrature::Trapezoid => {
                if n == 0 || n == n_steps {
                    0.5
                } else {
                    1.0
                }
            }
        }
    }
}

/// `û − u_ℳ` per sensor and step.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord(ShotRecord);

impl ResidualRecord {
    pub fn new(prediction: &ShotRecord, data: &ShotRecord) -> Result<Self> {
        if !prediction.same_layout(data) {
            return Err(FwiError::ShapeMismatch(
                "prediction and data differ in sensors or time axis".into(),
            ));
        }
        let diff = prediction
            .data()
            .iter()
            .zip(data.data())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self(ShotRecord::new(
            prediction.sensors().clone(),
            prediction.time(),
            diff,
        )?))
    }

    pub fn from_record(record: ShotRecord) -> Self {
        Self(record)
    }

    pub fn record(&self) -> &ShotRecord {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.scaled(factor))
    }
}

/// Adjoint wavefield `u†` at steps `0..=n_steps`, aligned with the forward
/// time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointHistory(WavefieldHistory);

impl AdjointHistory {
    pub fn into_inner(self) -> WavefieldHistory {
        self.0
    }
}

impl Deref for AdjointHistory {
    type Target = WavefieldHistory;

    fn deref(&self) -> &WavefieldHistory {
        &self.0
    }
}

/// `½ Σ_sensors Σ_n w_n (û − u_ℳ)² Δt`.
pub fn measurement_loss(shot: &ShotRecord, data: &ShotRecord, quadrature: Quadrature) -> Result<f64> {
    let residual = ResidualRecord::new(shot, data)?;
    Ok(residual_loss(&residual, quadrature))
}

pub(crate) fn residual_loss(residual: &ResidualRecord, quadrature: Quadrature) -> f64 {
    let rec = residual.record();
    let time = rec.time();
    let mut sum = 0.0;
    for s in 0..rec.sensors().len() {
        for (n, r) in rec.trace(s).iter().enumerate() {
            sum += quadrature.weight(n, time.n_steps) * r * r;
        }
    }
    0.5 * sum * time.dt
}

pub fn run_adjoint(
    gamma: &ScalarField,
    material: &MaterialModel,
    time: TimeAxis,
    residual: &ResidualRecord,
    quadrature: Quadrature,
) -> Result<AdjointHistory> {
    let op = WaveOperator::new(gamma, material, time)?;
    run_adjoint_with(&op, residual, quadrature)
}

pub fn run_adjoint_with(
    op: &WaveOperator,
    residual: &ResidualRecord,
    quadrature: Quadrature,
) -> Result<AdjointHistory> {
    let grid = op.grid();
    let time = op.time();
    let rec = residual.record();
    if rec.time() != time {
        return Err(FwiError::ShapeMismatch("residual time axis differs from solver".into()));
    }
    if let Some(bad) = rec.data().iter().find(|v| !v.is_finite()) {
        return Err(FwiError::Divergence(format!("non-finite residual {bad}")));
    }
    let nodes = rec.sensors().nodes(grid)?;
    let inv_volume: Vec<f64> = nodes.iter().map(|&i| 1.0 / grid.node_volume(i)).collect();
    let n_steps = time.n_steps;
    let mut reversed = Vec::with_capacity(n_steps + 1);
    let zeros = vec![0.0; grid.len()];
    propagate(
        op,
        n_steps,
        zeros.clone(),
        zeros,
        |k, buf| {
            // forward step k in reversed time carries the residual of step N−k
            let n = n_steps - k;
            let w = quadrature.weight(n, n_steps);
            if w == 0.0 {
                return;
            }
            for (s, &node) in nodes.iter().enumerate() {
                let r = rec.trace(s)[n];
                if r != 0.0 {
                    buf.push((node, -w * r * inv_volume[s]));
                }
            }
        },
        |_, v| reversed.push(v.to_vec()),
    );
    reversed.reverse();
    Ok(AdjointHistory(WavefieldHistory::new(grid.clone(), time, reversed)?))
}

/// First derivative along `axis` at every node: central in the interior,
/// one-sided on the boundary.
fn spatial_derivative(grid: &Grid, u: &[f64], axis: usize, out: &mut [f64]) {
    let s = grid.strides()[axis];
    let n = grid.dims()[axis];
    let h = grid.spacing()[axis];
    for (i, o) in out.iter_mut().enumerate() {
        let c = (i / s) % n;
        *o = if c == 0 {
            (u[i + s] - u[i]) / h
        } else if c == n - 1 {
            (u[i] - u[i - s]) / h
        } else {
            (u[i + s] - u[i - s]) / (2.0 * h)
        };
    }
}

fn time_derivative(hist: &WavefieldHistory, n: usize, out: &mut [f64]) {
    let dt = hist.time().dt;
    let last = hist.time().n_steps;
    let (a, b, scale) = if n == 0 {
        (1, 0, 1.0 / dt)
    } else if n == last {
        (last, last - 1, 1.0 / dt)
    } else {
        (n + 1, n - 1, 0.5 / dt)
    };
    let (ua, ub) = (hist.snapshot(a), hist.snapshot(b));
    for ((o, x), y) in out.iter_mut().zip(ua).zip(ub) {
        *o = (x - y) * scale;
    }
}

/// Assembles `K_γ` on the nodes.
pub fn frechet_kernel(
    forward: &WavefieldHistory,
    adjoint: &AdjointHistory,
    material: &MaterialModel,
    quadrature: Quadrature,
) -> Result<ScalarField> {
    let grid = forward.grid();
    if !grid.same_shape(adjoint.grid()) || forward.time() != adjoint.time() {
        return Err(FwiError::ShapeMismatch("forward and adjoint histories differ".into()));
    }
    let time = forward.time();
    let len = grid.len();
    let mass = material.rho0;
    let stiff = material.rho0 * material.c0 * material.c0;
    let mut kernel = vec![0.0; len];
    let mut dt_u = vec![0.0; len];
    let mut dt_a = vec![0.0; len];
    let mut dx_u = vec![0.0; len];
    let mut dx_a = vec![0.0; len];
    for n in 0..=time.n_steps {
        let w = quadrature.weight(n, time.n_steps) * time.dt;
        if w == 0.0 {
            continue;
        }
        time_derivative(forward, n, &mut dt_u);
        time_derivative(adjoint, n, &mut dt_a);
        for i in 0..len {
            kernel[i] -= w * mass * dt_a[i] * dt_u[i];
        }
        for axis in 0..grid.ndim() {
            spatial_derivative(grid, forward.snapshot(n), axis, &mut dx_u);
            spatial_derivative(grid, adjoint.snapshot(n), axis, &mut dx_a);
            for i in 0..len {
                kernel[i] += w * stiff * dx_a[i] * dx_u[i];
            }
        }
    }
    ScalarField::new(grid.clone(), kernel)
}

/// Nodal gradient `∂ℒ/∂γ_i ≈ K_γ(x_i) · V_node(i)`.
pub fn kernel_to_nodal_gradient(kernel: &ScalarField) -> ScalarField {
    let grid = kernel.grid();
    let values = kernel
        .values()
        .iter()
        .enumerate()
        .map(|(i, k)| k * grid.node_volume(i))
        .collect();
    ScalarField::new(grid.clone(), values).expect("same grid")
}

/// Coefficient gradient of a constant Ansatz: the kernel integrated over
/// every voxel with nodal quadrature.
pub fn gradient_wrt_coeffs(kernel: &ScalarField, ansatz: &ConstantAnsatz) -> Result<Vec<f64>> {
    ansatz.chain_to_coeffs(&kernel_to_nodal_gradient(kernel))
}

/// Loss and nodal gradient of one shot by the continuous adjoint.
pub fn adjoint_gradient(
    gamma: &ScalarField,
    material: &MaterialModel,
    time: TimeAxis,
    src: &SourceSpec,
    sensors: &SensorArray,
    data: &ShotRecord,
    quadrature: Quadrature,
) -> Result<(f64, ScalarField)> {
    let op = WaveOperator::new(gamma, material, time)?;
    let (history, shot) = run_forward_with(&op, src, sensors, true)?;
    let residual = ResidualRecord::new(&shot, data)?;
    let loss = residual_loss(&residual, quadrature);
    let adjoint = run_adjoint_with(&op, &residual, quadrature)?;
    let kernel = frechet_kernel(&history.expect("history requested"), &adjoint, material, quadrature)?;
    Ok((loss, kernel_to_nodal_gradient(&kernel)))
}
