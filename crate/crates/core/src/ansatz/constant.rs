use crate::error::{FwiError, Result};
use crate::fields::{clip_value, Grid, ScalarField};

/// Piecewise-constant indicator: every node takes the clipped coefficient of
/// the voxel containing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantAnsatz {
    grid: Grid,
    voxel: Vec<usize>,
    counts: Vec<usize>,
    coeffs: Vec<f64>,
    eps: f64,
    upper: f64,
}

impl ConstantAnsatz {
    /// `voxel` gives the nodes per voxel along each axis and must tile the
    /// grid exactly.
    pub fn new(grid: &Grid, voxel: &[usize], coeffs: Vec<f64>, eps: f64, upper: f64) -> Result<Self> {
        if voxel.len() != grid.ndim() {
            return Err(FwiError::ShapeMismatch(format!(
                "voxel layout has {} axes, grid has {}",
                voxel.len(),
                grid.ndim()
            )));
        }
        let mut counts = Vec::with_capacity(voxel.len());
        for (axis, (&n, &v)) in grid.dims().iter().zip(voxel).enumerate() {
            if v == 0 || n % v != 0 {
                return Err(FwiError::ShapeMismatch(format!(
                    "voxel size {v} does not tile {n} nodes on axis {axis}"
                )));
            }
            counts.push(n / v);
        }
        if !(eps > 0.0 && eps < upper) {
            return Err(FwiError::param("eps", format!("need 0 < eps < upper, got eps={eps}, upper={upper}")));
        }
        let expected: usize = counts.iter().product();
        if coeffs.len() != expected {
            return Err(FwiError::ShapeMismatch(format!(
                "{} coefficients for {expected} voxels",
                coeffs.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            voxel: voxel.to_vec(),
            counts,
            coeffs,
            eps,
            upper,
        })
    }

    pub fn uniform(grid: &Grid, voxel: &[usize], value: f64, eps: f64, upper: f64) -> Result<Self> {
        let n = grid
            .dims()
            .iter()
            .zip(voxel)
            .map(|(&d, &v)| d.checked_div(v).unwrap_or(0))
            .product();
        Self::new(grid, voxel, vec![value; n], eps, upper)
    }

    /// One voxel per node.
    pub fn nodal(grid: &Grid, value: f64, eps: f64, upper: f64) -> Result<Self> {
        Self::uniform(grid, &vec![1; grid.ndim()], value, eps, upper)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn voxel_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.eps, self.upper)
    }

    /// Clips the stored coefficients in place so the next evaluation is the
    /// identity on them.
    pub fn clip_coeffs(&mut self) {
        for c in &mut self.coeffs {
            *c = clip_value(*c, self.eps, self.upper);
        }
    }

    fn voxel_of(&self, node: usize) -> usize {
        let coords = self.grid.coords(node);
        coords
            .iter()
            .zip(&self.voxel)
            .zip(&self.counts)
            .fold(0, |acc, ((&c, &v), &n)| acc * n + c / v)
    }

    pub fn eval(&self) -> ScalarField {
        let values = (0..self.grid.len())
            .map(|i| clip_value(self.coeffs[self.voxel_of(i)], self.eps, self.upper))
            .collect();
        ScalarField::new(self.grid.clone(), values).expect("grid length")
    }

    /// Chain rule from per-node derivatives `∂ℒ/∂γ_i` to the coefficients:
    /// each coefficient collects the sum over its voxel. The clip is treated
    /// as the identity because coefficients are kept clipped after every
    /// update.
    pub fn chain_to_coeffs(&self, nodal_grad: &ScalarField) -> Result<Vec<f64>> {
        if !nodal_grad.grid().same_shape(&self.grid) {
            return Err(FwiError::GridMismatch("nodal gradient and voxel layout differ".into()));
        }
        let mut out = vec![0.0; self.coeffs.len()];
        for (i, g) in nodal_grad.values().iter().enumerate() {
            out[self.voxel_of(i)] += g;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: &[usize]) -> Grid {
        Grid::with_spacing(dims, &vec![1e-3; dims.len()], 1).unwrap()
    }

    #[test]
    fn unit_coefficients_give_unit_field() {
        let a = ConstantAnsatz::uniform(&grid(&[6, 4]), &[2, 2], 1.0, 1e-5, 1.0).unwrap();
        assert!(a.eval().values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn negative_coefficient_reads_its_magnitude() {
        let g = grid(&[4, 4]);
        let mut a = ConstantAnsatz::nodal(&g, 1.0, 1e-5, 1.0).unwrap();
        a.coeffs_mut()[5] = -0.3;
        assert_eq!(a.eval().values()[5], 0.3);
    }

    #[test]
    fn quadrants_are_constant() {
        let g = grid(&[4, 4]);
        let a = ConstantAnsatz::new(&g, &[2, 2], vec![0.1, 0.2, 0.3, 0.4], 1e-5, 1.0).unwrap();
        let f = a.eval();
        for x in 0..4 {
            for y in 0..4 {
                let expected = [0.1, 0.2, 0.3, 0.4][(x / 2) * 2 + y / 2];
                assert_eq!(f.get(&[x, y]).unwrap(), expected);
            }
        }
    }

    #[test]
    fn layout_must_tile() {
        assert!(ConstantAnsatz::uniform(&grid(&[5, 4]), &[2, 2], 1.0, 1e-5, 1.0).is_err());
        assert!(ConstantAnsatz::uniform(&grid(&[4, 4]), &[2], 1.0, 1e-5, 1.0).is_err());
    }

    #[test]
    fn chain_sums_over_voxels() {
        let g = grid(&[4, 6, 3]);
        let a = ConstantAnsatz::uniform(&g, &[2, 3, 1], 1.0, 1e-5, 1.0).unwrap();
        let nodal = ScalarField::from_fn(&g, |c| (c[0] * 100 + c[1] * 10 + c[2]) as f64);
        let out = a.chain_to_coeffs(&nodal).unwrap();
        let mut expected = vec![0.0; out.len()];
        for x in 0..4 {
            for y in 0..6 {
                for z in 0..3 {
                    expected[((x / 2) * 2 + y / 3) * 3 + z] += (x * 100 + y * 10 + z) as f64;
                }
            }
        }
        assert_eq!(out, expected);
    }
}
