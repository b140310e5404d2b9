//! Discrete adjoint: exact reverse-mode differentiation of the leapfrog loop.
//!
//! For `u^{n+1} = 2u^n − u^{n−1} + Σ_s w_is(γ)(u^n_j − u^n_i) + Δt²/(ρ0γ_i) f_i^n`
//! with `w_is = 2C_s² γ_j/(γ_i+γ_j)`, the cotangent `ū^{n+1}` is pushed onto
//! `ū^n`, `ū^{n−1}` and `γ̄`, including the derivatives of the harmonic face
//! weights and of the `1/γ` source prefactor.

use crate::adjoint::{residual_loss, Quadrature, ResidualRecord};
use crate::error::{FwiError, Result};
use crate::fields::{MaterialModel, ScalarField, TimeAxis};
use crate::forward::{
    run_forward_with, sine_burst, SensorArray, ShotRecord, SourceSpec, WaveOperator,
    WavefieldHistory,
};

/// Derivatives of the edge weights with respect to both endpoint indicators.
#[derive(Debug, Clone)]
pub struct WeightDerivatives {
    slots: usize,
    /// `∂w_is/∂γ_i`
    d_self: Vec<f64>,
    /// `∂w_is/∂γ_j`
    d_neighbor: Vec<f64>,
    /// `∂(Δt²/(ρ0γ_i))/∂γ_i`
    d_source: Vec<f64>,
}

impl WeightDerivatives {
    pub fn new(op: &WaveOperator, gamma: &ScalarField) -> Self {
        let stencil = op.stencil();
        let slots = stencil.slots();
        let g = gamma.values();
        let cs = op.courant_sq();
        let mut d_self = Vec::with_capacity(g.len() * slots);
        let mut d_neighbor = Vec::with_capacity(g.len() * slots);
        for (i, &gi) in g.iter().enumerate() {
            for (s, &j) in stencil.neighbors(i).iter().enumerate() {
                let gj = g[j];
                let denom = (gi + gj) * (gi + gj);
                d_self.push(-2.0 * cs[s] * gj / denom);
                d_neighbor.push(2.0 * cs[s] * gi / denom);
            }
        }
        let dt2 = op.time().dt * op.time().dt;
        let rho0 = op.material().rho0;
        let d_source = g.iter().map(|&gi| -dt2 / (rho0 * gi * gi)).collect();
        Self {
            slots,
            d_self,
            d_neighbor,
            d_source,
        }
    }
}

/// Transpose of one step. On entry `cot_next = ū^{n+1}`, `cot_curr` holds the
/// cotangent of `u^n` accumulated so far and `cot_prev` that of `u^{n−1}`.
/// `forces` are the `(node, density)` pairs that entered `u^{n+1}`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    op: &WaveOperator,
    derivs: &WeightDerivatives,
    cot_next: &[f64],
    cot_curr: &mut [f64],
    cot_prev: &mut [f64],
    u_curr: &[f64],
    forces: &[(usize, f64)],
    accum: &mut [f64],
) {
    let stencil = op.stencil();
    let slots = derivs.slots;
    let weights = op.edge_weights();
    for i in 0..cot_next.len() {
        let g = cot_next[i];
        if g == 0.0 {
            continue;
        }
        cot_prev[i] -= g;
        let ui = u_curr[i];
        let nb = stencil.neighbors(i);
        let base = i * slots;
        let mut self_coeff = 2.0;
        let mut dgamma_i = 0.0;
        for s in 0..slots {
            let j = nb[s];
            let w = weights[base + s];
            let diff = u_curr[j] - ui;
            cot_curr[j] += g * w;
            self_coeff -= w;
            dgamma_i += derivs.d_self[base + s] * diff;
            accum[j] += g * derivs.d_neighbor[base + s] * diff;
        }
        cot_curr[i] += g * self_coeff;
        accum[i] += g * dgamma_i;
    }
    for &(node, f) in forces {
        accum[node] += cot_next[node] * derivs.d_source[node] * f;
    }
}

/// Stored forward snapshots, two rolling cotangent buffers and the
/// γ-gradient accumulator.
#[derive(Debug)]
pub struct TapelessReverseState {
    history: WavefieldHistory,
    cot_a: Vec<f64>,
    cot_b: Vec<f64>,
    cot_c: Vec<f64>,
    accum: Vec<f64>,
}

impl TapelessReverseState {
    pub fn new(history: WavefieldHistory) -> Self {
        let n = history.grid().len();
        Self {
            history,
            cot_a: vec![0.0; n],
            cot_b: vec![0.0; n],
            cot_c: vec![0.0; n],
            accum: vec![0.0; n],
        }
    }

    /// Sweeps from the last step to the first. `seed(n, buf)` adds
    /// `∂ℒ/∂u^n` into `buf`; `forces(n, buf)` lists the forcing of step `n`.
    pub fn sweep(
        mut self,
        op: &WaveOperator,
        derivs: &WeightDerivatives,
        mut seed: impl FnMut(usize, &mut [f64]),
        mut forces: impl FnMut(usize, &mut Vec<(usize, f64)>),
    ) -> Vec<f64> {
        let n_steps = self.history.time().n_steps;
        // cot_a ↔ ū^{n+1}, cot_b ↔ ū^n, cot_c ↔ ū^{n−1}
        seed(n_steps, &mut self.cot_a);
        if n_steps >= 1 {
            seed(n_steps - 1, &mut self.cot_b);
        }
        let mut buf = Vec::new();
        for n in (1..n_steps).rev() {
            self.cot_c.iter_mut().for_each(|v| *v = 0.0);
            seed(n - 1, &mut self.cot_c);
            buf.clear();
            forces(n, &mut buf);
            reverse_step(
                op,
                derivs,
                &self.cot_a,
                &mut self.cot_b,
                &mut self.cot_c,
                self.history.snapshot(n),
                &buf,
                &mut self.accum,
            );
            // shift: ū^{n+1} ← ū^n, ū^n ← ū^{n−1}
            std::mem::swap(&mut self.cot_a, &mut self.cot_b);
            std::mem::swap(&mut self.cot_b, &mut self.cot_c);
        }
        self.accum
    }
}

/// Loss and exact gradient `∂ℒ/∂γ` of the discretised problem for one shot.
pub fn backprop_through_solver(
    gamma: &ScalarField,
    material: &MaterialModel,
    time: TimeAxis,
    src: &SourceSpec,
    sensors: &SensorArray,
    data: &ShotRecord,
    quadrature: Quadrature,
) -> Result<(f64, ScalarField)> {
    let op = WaveOperator::new(gamma, material, time)?;
    let grid = gamma.grid().clone();
    let (history, shot) = run_forward_with(&op, src, sensors, true)?;
    let residual = ResidualRecord::new(&shot, data)?;
    let loss = residual_loss(&residual, quadrature);
    if !loss.is_finite() {
        return Err(FwiError::Divergence("non-finite measurement loss".into()));
    }
    let nodes = sensors.nodes(&grid)?;
    let src_node = src.node(&grid)?;
    let scale = 1.0 / grid.spacing_norm_sq();
    let rec = residual.record();
    let derivs = WeightDerivatives::new(&op, gamma);
    let state = TapelessReverseState::new(history.expect("history requested"));
    let grad = state.sweep(
        &op,
        &derivs,
        |n, buf| {
            let w = quadrature.weight(n, time.n_steps) * time.dt;
            if w == 0.0 {
                return;
            }
            for (s, &node) in nodes.iter().enumerate() {
                buf[node] += w * rec.trace(s)[n];
            }
        },
        |n, buf| {
            let psi = sine_burst(time.time(n), src);
            if psi != 0.0 {
                buf.push((src_node, psi * scale));
            }
        },
    );
    Ok((loss, ScalarField::new(grid, grad)?))
}
