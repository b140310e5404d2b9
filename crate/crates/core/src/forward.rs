//! Explicit leapfrog solver for `γρ0 u_tt − ∇·(γρ0c0²∇u) = f` with
//! homogeneous Neumann boundaries enforced by mirrored ghost nodes.
//!
//! The spatial operator uses harmonic face averages of the indicator:
//!
//! ```text
//! u⁺ = 2u − u⁻ + (2/γ_i) Σ_d C_d² [ H(γ_i,γ_i+e)(u_i+e − u_i) − H(γ_i−e,γ_i)(u_i − u_i−e) ]
//!      + Δt²/(ρ0 γ_i) f_i,          H(a,b) = (1/a + 1/b)⁻¹,  C_d = c0Δt/h_d
//! ```
//!
//! A ghost node outside the grid takes the value of the first interior
//! neighbour on the opposite side (mirror about the boundary node), for both
//! `u` and `γ`.

use std::f64::consts::PI;

use crate::error::{FwiError, Result};
use crate::fields::{Grid, MaterialModel, ScalarField, TimeAxis};

/// Point source emitting a sine burst.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub position: Vec<usize>,
    /// ψ0
    pub amplitude: f64,
    /// f_ψ in Hz
    pub frequency: f64,
    /// n_c
    pub cycles: u32,
}

impl SourceSpec {
    pub fn new(position: Vec<usize>, amplitude: f64, frequency: f64, cycles: u32) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(FwiError::param("frequency", "must be positive"));
        }
        if cycles == 0 {
            return Err(FwiError::param("cycles", "must be ≥ 1"));
        }
        if !amplitude.is_finite() {
            return Err(FwiError::param("amplitude", "must be finite"));
        }
        Ok(Self {
            position,
            amplitude,
            frequency,
            cycles,
        })
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    /// End of the burst window, `2π n_c / ω`.
    pub fn burst_end(&self) -> f64 {
        self.cycles as f64 / self.frequency
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }

    pub(crate) fn node(&self, grid: &Grid) -> Result<usize> {
        grid.index(&self.position)
            .ok_or_else(|| FwiError::OutOfRange(self.position.clone()))
    }
}

/// `ψ0 sin(ωt) sin(ωt / 2n_c)` inside the burst window, zero afterwards.
pub fn sine_burst(t: f64, src: &SourceSpec) -> f64 {
    if !(0.0..=src.burst_end()).contains(&t) {
        return 0.0;
    }
    let w = src.omega();
    src.amplitude * (w * t).sin() * (w * t / (2.0 * src.cycles as f64)).sin()
}

/// Adds the grid-scaled source term `ψ(t)/‖dx‖²` at the source node.
pub fn inject_source(force: &mut ScalarField, src: &SourceSpec, t: f64) -> Result<()> {
    let node = src.node(force.grid())?;
    let scale = force.grid().spacing_norm_sq();
    force.values_mut()[node] += sine_burst(t, src) / scale;
    Ok(())
}

/// Sensor nodes on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    positions: Vec<Vec<usize>>,
}

impl SensorArray {
    pub fn new(positions: Vec<Vec<usize>>) -> Result<Self> {
        for (i, p) in positions.iter().enumerate() {
            if positions[..i].contains(p) {
                return Err(FwiError::param("sensors", format!("duplicate position {p:?}")));
            }
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Vec<usize>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn nodes(&self, grid: &Grid) -> Result<Vec<usize>> {
        self.positions
            .iter()
            .map(|p| grid.index(p).ok_or_else(|| FwiError::OutOfRange(p.clone())))
            .collect()
    }
}

/// `u` at every node for steps `0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefieldHistory {
    grid: Grid,
    time: TimeAxis,
    snapshots: Vec<Vec<f64>>,
}

impl WavefieldHistory {
    pub fn new(grid: Grid, time: TimeAxis, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        if snapshots.len() != time.n_steps + 1 {
            return Err(FwiError::ShapeMismatch(format!(
                "{} snapshots for {} steps",
                snapshots.len(),
                time.n_steps
            )));
        }
        if snapshots.iter().any(|s| s.len() != grid.len()) {
            return Err(FwiError::ShapeMismatch("snapshot size differs from grid".into()));
        }
        Ok(Self {
            grid,
            time,
            snapshots,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> TimeAxis {
        self.time
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    pub fn snapshot(&self, n: usize) -> &[f64] {
        &self.snapshots[n]
    }

    pub fn field(&self, n: usize) -> ScalarField {
        ScalarField::new(self.grid.clone(), self.snapshots[n].clone()).expect("consistent history")
    }
}

/// Seismograms for one shot: `sensors × (n_steps + 1)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    sensors: SensorArray,
    time: TimeAxis,
    data: Vec<f64>,
}

impl ShotRecord {
    pub fn new(sensors: SensorArray, time: TimeAxis, data: Vec<f64>) -> Result<Self> {
        if data.len() != sensors.len() * (time.n_steps + 1) {
            return Err(FwiError::ShapeMismatch(format!(
                "record has {} samples, expected {} sensors × {} steps",
                data.len(),
                sensors.len(),
                time.n_steps + 1
            )));
        }
        Ok(Self {
            sensors,
            time,
            data,
        })
    }

    pub fn zeros(sensors: SensorArray, time: TimeAxis) -> Self {
        let n = sensors.len() * (time.n_steps + 1);
        Self {
            sensors,
            time,
            data: vec![0.0; n],
        }
    }

    pub fn sensors(&self) -> &SensorArray {
        &self.sensors
    }

    pub fn time(&self) -> TimeAxis {
        self.time
    }

    pub fn n_samples(&self) -> usize {
        self.time.n_steps + 1
    }

    pub fn trace(&self, sensor: usize) -> &[f64] {
        let n = self.n_samples();
        &self.data[sensor * n..(sensor + 1) * n]
    }

    pub fn trace_mut(&mut self, sensor: usize) -> &mut [f64] {
        let n = self.n_samples();
        &mut self.data[sensor * n..(sensor + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sensors: self.sensors.clone(),
            time: self.time,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn same_layout(&self, other: &ShotRecord) -> bool {
        self.sensors == other.sensors && self.time == other.time
    }
}

/// Neighbour table of the radius-1 stencil with mirrored ghosts: every node
/// has `2·ndim` slots, `[axis0−, axis0+, axis1−, axis1+, …]`.
#[derive(Debug, Clone)]
pub struct Stencil {
    slots: usize,
    neighbors: Vec<usize>,
}

impl Stencil {
    pub fn new(grid: &Grid) -> Self {
        let nd = grid.ndim();
        let slots = 2 * nd;
        let mut neighbors = Vec::with_capacity(grid.len() * slots);
        for i in 0..grid.len() {
            let c = grid.coords(i);
            for axis in 0..nd {
                let s = grid.strides()[axis];
                let n = grid.dims()[axis];
                let lo = if c[axis] == 0 { i + s } else { i - s };
                let hi = if c[axis] == n - 1 { i - s } else { i + s };
                neighbors.push(lo);
                neighbors.push(hi);
            }
        }
        Self { slots, neighbors }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node * self.slots..(node + 1) * self.slots]
    }
}

/// The discrete operator for one fixed indicator field: stencil plus the
/// per-edge weights `2C²γ_j/(γ_i+γ_j)` and the source prefactor
/// `Δt²/(ρ0γ_i)`.
#[derive(Debug, Clone)]
pub struct WaveOperator {
    grid: Grid,
    stencil: Stencil,
    /// `C_d²` per slot
    courant_sq: Vec<f64>,
    weights: Vec<f64>,
    source_factor: Vec<f64>,
    time: TimeAxis,
    material: MaterialModel,
}

impl WaveOperator {
    pub fn new(gamma: &ScalarField, material: &MaterialModel, time: TimeAxis) -> Result<Self> {
        let grid = gamma.grid().clone();
        time.check_cfl(&grid, material.c0)?;
        if let Some((node, &value)) = gamma
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(FwiError::NonPositiveIndicator { node, value });
        }
        let stencil = Stencil::new(&grid);
        let courant_sq: Vec<f64> = grid
            .spacing()
            .iter()
            .flat_map(|h| {
                let c = material.c0 * time.dt / h;
                [c * c, c * c]
            })
            .collect();
        let g = gamma.values();
        let slots = stencil.slots();
        let mut weights = Vec::with_capacity(g.len() * slots);
        for (i, &gi) in g.iter().enumerate() {
            for (s, &j) in stencil.neighbors(i).iter().enumerate() {
                weights.push(2.0 * courant_sq[s] * g[j] / (gi + g[j]));
            }
        }
        let dt2 = time.dt * time.dt;
        let source_factor = g.iter().map(|&gi| dt2 / (material.rho0 * gi)).collect();
        Ok(Self {
            grid,
            stencil,
            courant_sq,
            weights,
            source_factor,
            time,
            material: *material,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    /// `w_is = 2C_s²γ_j/(γ_i+γ_j)`, `slots` entries per node.
    pub fn edge_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn courant_sq(&self) -> &[f64] {
        &self.courant_sq
    }

    pub fn time(&self) -> TimeAxis {
        self.time
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    /// Force-free update `u_next = 2u − u_prev + L_γ u`.
    pub fn step(&self, u_prev: &[f64], u_curr: &[f64], u_next: &mut [f64]) {
        let slots = self.stencil.slots();
        for i in 0..u_curr.len() {
            let ui = u_curr[i];
            let nb = self.stencil.neighbors(i);
            let w = &self.weights[i * slots..(i + 1) * slots];
            let mut flux = 0.0;
            for s in 0..slots {
                flux += w[s] * (u_curr[nb[s]] - ui);
            }
            u_next[i] = 2.0 * ui - u_prev[i] + flux;
        }
    }

    /// Adds `Δt²/(ρ0γ) · f` for a force density `f` at `node`.
    #[inline]
    pub fn apply_force(&self, u_next: &mut [f64], node: usize, force: f64) {
        u_next[node] += self.source_factor[node] * force;
    }
}

/// One explicit step with a dense force field.
pub fn step_wavefield(
    u_prev: &ScalarField,
    u_curr: &ScalarField,
    gamma: &ScalarField,
    force: &ScalarField,
    material: &MaterialModel,
    time: TimeAxis,
) -> Result<ScalarField> {
    let grid = gamma.grid();
    for f in [u_prev, u_curr, force] {
        if !f.grid().same_shape(grid) {
            return Err(FwiError::GridMismatch("step_wavefield inputs".into()));
        }
    }
    let op = WaveOperator::new(gamma, material, time)?;
    let mut next = vec![0.0; grid.len()];
    op.step(u_prev.values(), u_curr.values(), &mut next);
    for (i, &f) in force.values().iter().enumerate() {
        if f != 0.0 {
            op.apply_force(&mut next, i, f);
        }
    }
    ScalarField::new(grid.clone(), next)
}

/// Runs `n_steps` leapfrog steps from `(u0, u1)`. `force(n, buf)` appends
/// `(node, density)` pairs for the forcing at step `n`, which enters
/// `u^{n+1}`. `observe(n, u^n)` sees every level `0..=n_steps`.
pub fn propagate(
    op: &WaveOperator,
    n_steps: usize,
    u0: Vec<f64>,
    u1: Vec<f64>,
    mut force: impl FnMut(usize, &mut Vec<(usize, f64)>),
    mut observe: impl FnMut(usize, &[f64]),
) {
    let mut prev = u0;
    let mut curr = u1;
    let mut next = vec![0.0; curr.len()];
    let mut forces = Vec::new();
    observe(0, &prev);
    if n_steps == 0 {
        return;
    }
    observe(1, &curr);
    for n in 1..n_steps {
        op.step(&prev, &curr, &mut next);
        forces.clear();
        force(n, &mut forces);
        for &(node, f) in &forces {
            op.apply_force(&mut next, node, f);
        }
        std::mem::swap(&mut prev, &mut curr);
        std::mem::swap(&mut curr, &mut next);
        observe(n + 1, &curr);
    }
}

/// Simulates one shot from rest; returns the sensor record and, on request,
/// the full wavefield history.
pub fn run_forward(
    gamma: &ScalarField,
    material: &MaterialModel,
    time: TimeAxis,
    src: &SourceSpec,
    sensors: &SensorArray,
    store_history: bool,
) -> Result<(Option<WavefieldHistory>, ShotRecord)> {
    let op = WaveOperator::new(gamma, material, time)?;
    run_forward_with(&op, src, sensors, store_history)
}

pub fn run_forward_with(
    op: &WaveOperator,
    src: &SourceSpec,
    sensors: &SensorArray,
    store_history: bool,
) -> Result<(Option<WavefieldHistory>, ShotRecord)> {
    let grid = op.grid();
    let time = op.time();
    let src_node = src.node(grid)?;
    let sensor_nodes = sensors.nodes(grid)?;
    let scale = 1.0 / grid.spacing_norm_sq();
    let n_samples = time.n_steps + 1;
    let mut record = ShotRecord::zeros(sensors.clone(), time);
    let mut snapshots = Vec::with_capacity(if store_history { n_samples } else { 0 });
    let zeros = vec![0.0; grid.len()];
    propagate(
        op,
        time.n_steps,
        zeros.clone(),
        zeros,
        |n, buf| {
            let psi = sine_burst(time.time(n), src);
            if psi != 0.0 {
                buf.push((src_node, psi * scale));
            }
        },
        |n, u| {
            for (s, &node) in sensor_nodes.iter().enumerate() {
                record.data[s * n_samples + n] = u[node];
            }
            if store_history {
                snapshots.push(u.to_vec());
            }
        },
    );
    let history = if store_history {
        Some(WavefieldHistory::new(grid.clone(), time, snapshots)?)
    } else {
        None
    };
    Ok((history, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(nx: usize, ny: usize, h: f64) -> Grid {
        Grid::with_spacing(&[nx, ny], &[h, h], 1).unwrap()
    }

    fn burst() -> SourceSpec {
        SourceSpec::new(vec![0, 0], 1.0, 5e5, 2).unwrap()
    }

    #[test]
    fn sine_burst_values() {
        let src = burst();
        assert_eq!(sine_burst(0.0, &src), 0.0);
        let end = src.burst_end();
        assert_eq!(end, 4e-6);
        assert!(sine_burst(end, &src).abs() < 1e-12);
        assert_eq!(sine_burst(end * (1.0 + 1e-12), &src), 0.0);
        assert_eq!(sine_burst(1.0, &src), 0.0);
        let expected = (PI / 2.0).sin() * (PI / 8.0).sin();
        assert!((sine_burst(5e-7, &src) - expected).abs() < 1e-12);
        assert!((expected - 0.382_683).abs() < 1e-6);
    }

    #[test]
    fn inject_source_scaling() {
        let h = 0.01;
        let g = grid2(5, 5, h);
        let mut f = ScalarField::zeros(&g);
        let src = SourceSpec::new(vec![2, 2], 1.0, 5e5, 2).unwrap();
        inject_source(&mut f, &src, 1.0).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        inject_source(&mut f, &src, 5e-7).unwrap();
        let psi = sine_burst(5e-7, &src);
        assert!((f.get(&[2, 2]).unwrap() - psi / (2.0 * h * h)).abs() < 1e-9);
        assert_eq!(f.values().iter().filter(|v| **v != 0.0).count(), 1);

        let g3 = Grid::with_spacing(&[4, 4, 4], &[h; 3], 1).unwrap();
        let mut f3 = ScalarField::zeros(&g3);
        let src3 = SourceSpec::new(vec![1, 2, 3], 1.0, 5e5, 2).unwrap();
        inject_source(&mut f3, &src3, 5e-7).unwrap();
        assert!((f3.get(&[1, 2, 3]).unwrap() - psi / (3.0 * h * h)).abs() < 1e-9);

        let far = SourceSpec::new(vec![9, 2], 1.0, 5e5, 2).unwrap();
        assert!(inject_source(&mut f, &far, 0.0).is_err());
    }

    #[test]
    fn quiescent_state_stays_zero() {
        let g = grid2(6, 5, 0.01);
        let gamma = ScalarField::constant(&g, 1.0);
        let z = ScalarField::zeros(&g);
        let m = MaterialModel::aluminium();
        let t = TimeAxis::new(5e-7, 1).unwrap();
        let next = step_wavefield(&z, &z, &gamma, &z, &m, t).unwrap();
        assert_eq!(next.max_abs(), 0.0);
    }

    #[test]
    fn unit_spike_hand_evaluation() {
        let h = 0.01;
        let g = grid2(5, 5, h);
        let m = MaterialModel::aluminium();
        // C = c0 dt / h = 0.5
        let t = TimeAxis::new(0.5 * h / m.c0, 1).unwrap();
        let gamma = ScalarField::constant(&g, 1.0);
        let z = ScalarField::zeros(&g);
        let spike = ScalarField::from_fn(&g, |c| if c == [2, 2] { 1.0 } else { 0.0 });
        let next = step_wavefield(&z, &spike, &gamma, &z, &m, t).unwrap();
        assert!((next.get(&[2, 2]).unwrap() - 1.0).abs() < 1e-14);
        for c in [[1, 2], [3, 2], [2, 1], [2, 3]] {
            assert!((next.get(&c).unwrap() - 0.25).abs() < 1e-14);
        }
        assert_eq!(next.get(&[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_cfl_violation_and_bad_gamma() {
        let g = grid2(5, 5, 0.01);
        let m = MaterialModel::aluminium();
        let bad_t = TimeAxis::new(0.01 / m.c0, 1).unwrap();
        let gamma = ScalarField::constant(&g, 1.0);
        assert!(matches!(
            WaveOperator::new(&gamma, &m, bad_t),
            Err(FwiError::CflViolation { .. })
        ));
        let t = TimeAxis::new(0.3 * 0.01 / m.c0, 1).unwrap();
        let mut neg = gamma.clone();
        neg.values_mut()[3] = 0.0;
        assert!(matches!(
            WaveOperator::new(&neg, &m, t),
            Err(FwiError::NonPositiveIndicator { node: 3, .. })
        ));
    }

    #[test]
    fn zero_source_gives_zero_record() {
        let g = grid2(10, 8, 1e-3);
        let m = MaterialModel::aluminium();
        let t = TimeAxis::new(1e-7, 40).unwrap();
        let gamma = ScalarField::constant(&g, 1.0);
        let src = SourceSpec::new(vec![5, 7], 0.0, 5e5, 2).unwrap();
        let sensors = SensorArray::new(vec![vec![0, 7], vec![9, 7]]).unwrap();
        let (hist, rec) = run_forward(&gamma, &m, t, &src, &sensors, true).unwrap();
        assert!(rec.data().iter().all(|v| *v == 0.0));
        assert_eq!(hist.unwrap().snapshots().len(), 41);
    }

    #[test]
    fn history_starts_at_rest() {
        let g = grid2(10, 8, 1e-3);
        let m = MaterialModel::aluminium();
        let t = TimeAxis::new(1e-7, 20).unwrap();
        let gamma = ScalarField::constant(&g, 1.0);
        let src = SourceSpec::new(vec![5, 4], 1e12, 5e5, 2).unwrap();
        let sensors = SensorArray::new(vec![vec![5, 4]]).unwrap();
        let (hist, rec) = run_forward(&gamma, &m, t, &src, &sensors, true).unwrap();
        let hist = hist.unwrap();
        assert!(hist.snapshot(0).iter().all(|v| *v == 0.0));
        assert!(hist.snapshot(1).iter().all(|v| *v == 0.0));
        assert_eq!(rec.trace(0)[0], 0.0);
        assert!(rec.trace(0)[5] != 0.0);
        assert_eq!(rec.trace(0)[7], hist.snapshot(7)[g.index(&[5, 4]).unwrap()]);
    }

    #[test]
    fn duplicate_sensors_rejected() {
        assert!(SensorArray::new(vec![vec![1, 1], vec![1, 1]]).is_err());
    }
}
