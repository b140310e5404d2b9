//! Regular node-centred grids, nodal scalar fields and the material constants
//! shared by every solver in the crate.
//!
//! Fields are stored interior-only in row-major order with the last axis
//! varying fastest. Ghost layers are never stored; the solver materialises
//! them on the fly by mirroring.

use crate::error::{FwiError, Result};

/// Node-centred regular grid in two or three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    extent: Vec<f64>,
    ghost_layers: usize,
    strides: Vec<usize>,
}

/// Radius of the second-order stencil used by the forward solver.
pub const STENCIL_RADIUS: usize = 1;

impl Grid {
    /// Builds a grid from node counts and physical extent; spacing is
    /// `extent / (dims - 1)` per axis.
    pub fn new(dims: &[usize], extent: &[f64], ghost_layers: usize) -> Result<Self> {
        if dims.len() != extent.len() {
            return Err(FwiError::InvalidGrid(format!(
                "dims has {} entries but extent has {}",
                dims.len(),
                extent.len()
            )));
        }
        if !(2..=3).contains(&dims.len()) {
            return Err(FwiError::InvalidGrid(format!(
                "only 2D and 3D grids are supported, got {} axes",
                dims.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 3) {
            return Err(FwiError::InvalidGrid(format!(
                "every axis needs at least 3 nodes, got {d}"
            )));
        }
        if let Some(e) = extent.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(FwiError::InvalidGrid(format!(
                "extent entries must be positive and finite, got {e}"
            )));
        }
        if ghost_layers < STENCIL_RADIUS {
            return Err(FwiError::InvalidGrid(format!(
                "ghost_layers = {ghost_layers} is below the stencil radius {STENCIL_RADIUS}"
            )));
        }
        let spacing = dims
            .iter()
            .zip(extent)
            .map(|(&n, &e)| e / (n - 1) as f64)
            .collect();
        Ok(Self::assemble(dims.to_vec(), spacing, extent.to_vec(), ghost_layers))
    }

    /// Builds a grid from node counts and spacing; extent is derived.
    pub fn with_spacing(dims: &[usize], spacing: &[f64], ghost_layers: usize) -> Result<Self> {
        if dims.len() != spacing.len() {
            return Err(FwiError::InvalidGrid(format!(
                "dims has {} entries but spacing has {}",
                dims.len(),
                spacing.len()
            )));
        }
        let extent: Vec<f64> = dims
            .iter()
            .zip(spacing)
            .map(|(&n, &h)| h * (n.max(1) - 1) as f64)
            .collect();
        let grid = Self::new(dims, &extent, ghost_layers)?;
        // keep the caller's spacing bit-exact
        Ok(Self::assemble(grid.dims, spacing.to_vec(), grid.extent, ghost_layers))
    }

    /// Checks that a declared spacing is consistent with `extent / (dims - 1)`
    /// to 1e-12 relative.
    pub fn check_spacing(&self, declared: &[f64]) -> Result<()> {
        if declared.len() != self.ndim() {
            return Err(FwiError::InvalidGrid("spacing has wrong length".into()));
        }
        for (axis, (&h, &d)) in self.spacing.iter().zip(declared).enumerate() {
            if ((h - d) / h).abs() > 1e-12 {
                return Err(FwiError::InvalidGrid(format!(
                    "axis {axis}: declared spacing {d} but extent/(n-1) = {h}"
                )));
            }
        }
        Ok(())
    }

    fn assemble(dims: Vec<usize>, spacing: Vec<f64>, extent: Vec<f64>, ghost_layers: usize) -> Self {
        let mut strides = vec![1; dims.len()];
        for axis in (0..dims.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * dims[axis + 1];
        }
        Self {
            dims,
            spacing,
            extent,
            ghost_layers,
            strides,
        }
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn ghost_layers(&self) -> usize {
        self.ghost_layers
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Number of stored (interior) nodes.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of a node; `None` if any coordinate is out of range.
    pub fn index(&self, coords: &[usize]) -> Option<usize> {
        if coords.len() != self.ndim() {
            return None;
        }
        let mut idx = 0;
        for ((&c, &n), &s) in coords.iter().zip(&self.dims).zip(&self.strides) {
            if c >= n {
                return None;
            }
            idx += c * s;
        }
        Some(idx)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim()];
        for (axis, &s) in self.strides.iter().enumerate() {
            out[axis] = idx / s;
            idx %= s;
        }
        out
    }

    /// Physical position of a node.
    pub fn position(&self, coords: &[usize]) -> Vec<f64> {
        coords
            .iter()
            .zip(&self.spacing)
            .map(|(&c, &h)| c as f64 * h)
            .collect()
    }

    /// `Σ_d spacing[d]²`, the point-source scaling denominator.
    pub fn spacing_norm_sq(&self) -> f64 {
        self.spacing.iter().map(|h| h * h).sum()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Control volume of a node: the cell volume halved once for every axis
    /// on which the node sits on the boundary.
    pub fn node_volume(&self, idx: usize) -> f64 {
        self.cell_volume() * self.boundary_weight(idx)
    }

    pub fn boundary_weight(&self, idx: usize) -> f64 {
        let coords = self.coords(idx);
        coords
            .iter()
            .zip(&self.dims)
            .map(|(&c, &n)| if c == 0 || c == n - 1 { 0.5 } else { 1.0 })
            .product()
    }

    /// True for nodes on the outermost ring (shell in 3D).
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.coords(idx)
            .iter()
            .zip(&self.dims)
            .any(|(&c, &n)| c == 0 || c == n - 1)
    }

    /// Grid refined by an integer factor: `factor·(n−1)+1` nodes per axis
    /// over the same extent.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(FwiError::param("refine", "must be ≥ 1"));
        }
        let dims: Vec<usize> = self.dims.iter().map(|&n| factor * (n - 1) + 1).collect();
        let spacing: Vec<f64> = self.spacing.iter().map(|h| h / factor as f64).collect();
        Grid::with_spacing(&dims, &spacing, self.ghost_layers)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FwiError::ShapeMismatch(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, coords: &[usize]) -> Option<f64> {
        self.grid.index(coords).map(|i| self.values[i])
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_shape(&other.grid) {
            Ok(())
        } else {
            Err(FwiError::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid.dims(),
                other.grid.dims()
            )))
        }
    }
}

/// Density of intact material, wave speed and indicator bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    pub rho0: f64,
    pub c0: f64,
    pub eps: f64,
    pub upper: f64,
}

impl MaterialModel {
    pub fn new(rho0: f64, c0: f64, eps: f64, upper: f64) -> Result<Self> {
        if !(rho0 > 0.0 && rho0.is_finite()) {
            return Err(FwiError::param("rho0", "must be positive"));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(FwiError::param("c0", "must be positive"));
        }
        if !(eps > 0.0) {
            return Err(FwiError::param("eps", "must be positive"));
        }
        if !(eps < upper && upper <= 1.5) {
            return Err(FwiError::param("upper", "must satisfy eps < upper ≤ 1.5"));
        }
        Ok(Self { rho0, c0, eps, upper })
    }

    /// Aluminium-like plate used throughout the examples: ρ0 = 2700 kg/m³,
    /// c0 = 6000 m/s, ε = 1e-5, upper bound 1.
    pub fn aluminium() -> Self {
        Self {
            rho0: 2700.0,
            c0: 6000.0,
            eps: 1e-5,
            upper: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeAxis {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FwiError::param("dt", "must be positive"));
        }
        if n_steps == 0 {
            return Err(FwiError::param("n_steps", "must be ≥ 1"));
        }
        Ok(Self { dt, n_steps })
    }

    /// Time of step `n`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// `c0·dt·sqrt(Σ_d 1/h_d²)`.
    pub fn courant(&self, grid: &Grid, c0: f64) -> f64 {
        c0 * self.dt * grid.spacing().iter().map(|h| 1.0 / (h * h)).sum::<f64>().sqrt()
    }

    pub fn check_cfl(&self, grid: &Grid, c0: f64) -> Result<()> {
        let courant = self.courant(grid, c0);
        if courant < 1.0 {
            Ok(())
        } else {
            Err(FwiError::CflViolation { courant })
        }
    }
}

/// `min(upper, max(eps, |x|))` applied nodewise.
pub fn clip_value(x: f64, eps: f64, upper: f64) -> f64 {
    x.abs().max(eps).min(upper)
}

pub fn clip_indicator(field: &ScalarField, eps: f64, upper: f64) -> ScalarField {
    let values = field.values.iter().map(|&v| clip_value(v, eps, upper)).collect();
    ScalarField {
        grid: field.grid.clone(),
        values,
    }
}

/// Mean over nodes of the squared difference.
pub fn field_mse(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.check_same_grid(b)?;
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.values.len() as f64)
}
