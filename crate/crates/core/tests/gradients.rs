use std::ops::{Add, Div, Mul, Sub};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fwi_core::adjoint::{frechet_kernel, gradient_wrt_coeffs, kernel_to_nodal_gradient, run_adjoint, Quadrature, ResidualRecord};
use fwi_core::ansatz::ConstantAnsatz;
use fwi_core::forward::sine_burst;
use fwi_core::gradcheck::{compare, fd_gradient, FdStep};
use fwi_core::inversion::Problem;
use fwi_core::reverse::backprop_through_solver;
use fwi_core::*;

/// `a + b·δ` with `δ² = 0`.
#[derive(Debug, Clone, Copy)]
struct Dual(f64, f64);

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual(self.0 + o.0, self.1 + o.1)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual(self.0 - o.0, self.1 - o.1)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual(self.0 * o.0, self.0 * o.1 + self.1 * o.0)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual(self.0 / o.0, (self.1 * o.0 - self.0 * o.1) / (o.0 * o.0))
    }
}

fn c(v: f64) -> Dual {
    Dual(v, 0.0)
}

struct Case {
    grid: Grid,
    material: MaterialModel,
    time: TimeAxis,
    src: SourceSpec,
    sensors: SensorArray,
    data: ShotRecord,
}

fn small_case(nx: usize, ny: usize, steps: usize) -> Case {
    let h = 1e-3;
    let grid = Grid::with_spacing(&[nx, ny], &[h, h], 1).unwrap();
    let material = MaterialModel::aluminium();
    let time = TimeAxis::new(0.5 * h / material.c0, steps).unwrap();
    let src = SourceSpec::new(vec![nx / 2, ny - 1], 1e12, 5e5, 2).unwrap();
    let sensors = SensorArray::new(vec![vec![0, ny - 1], vec![nx - 1, ny - 1], vec![nx / 2, 0]]).unwrap();
    let (_, data) = run_forward(&ScalarField::constant(&grid, 1.0), &material, time, &src, &sensors, false).unwrap();
    Case {
        grid,
        material,
        time,
        src,
        sensors,
        data,
    }
}

/// Directional derivative of the left-Riemann misfit along `dir`, by
/// propagating dual numbers through a separately written leapfrog.
fn jvp(case: &Case, gamma: &ScalarField, dir: &[f64]) -> f64 {
    let g = &case.grid;
    let dims = g.dims();
    let (nx, ny) = (dims[0], dims[1]);
    let h = g.spacing()[0];
    let c2 = c((case.material.c0 * case.time.dt / h).powi(2));
    let gam: Vec<Dual> = gamma.values().iter().zip(dir).map(|(&a, &b)| Dual(a, b)).collect();
    let idx = |x: usize, y: usize| x * ny + y;
    let mirror = |k: isize, n: usize| -> usize {
        if k < 0 {
            1
        } else if k as usize >= n {
            n - 2
        } else {
            k as usize
        }
    };
    let src = idx(case.src.position[0], case.src.position[1]);
    let sens: Vec<usize> = case.sensors.positions().iter().map(|p| idx(p[0], p[1])).collect();
    let n_steps = case.time.n_steps;
    let mut prev = vec![c(0.0); g.len()];
    let mut curr = vec![c(0.0); g.len()];
    let mut loss = c(0.0);
    let add_loss = |n: usize, u: &[Dual], loss: &mut Dual| {
        if n < n_steps {
            for (s, &k) in sens.iter().enumerate() {
                let r = u[k] - c(case.data.trace(s)[n]);
                *loss = *loss + c(0.5 * case.time.dt) * r * r;
            }
        }
    };
    add_loss(0, &prev, &mut loss);
    add_loss(1, &curr, &mut loss);
    for n in 1..n_steps {
        let mut next = vec![c(0.0); g.len()];
        for x in 0..nx {
            for y in 0..ny {
                let i = idx(x, y);
                let nbrs = [
                    idx(mirror(x as isize - 1, nx), y),
                    idx(mirror(x as isize + 1, nx), y),
                    idx(x, mirror(y as isize - 1, ny)),
                    idx(x, mirror(y as isize + 1, ny)),
                ];
                let mut acc = c(2.0) * curr[i] - prev[i];
                for &j in &nbrs {
                    let w = c(2.0) * c2 * gam[j] / (gam[i] + gam[j]);
                    acc = acc + w * (curr[j] - curr[i]);
                }
                next[i] = acc;
            }
        }
        let psi = sine_burst(case.time.time(n), &case.src) / g.spacing_norm_sq();
        let factor = c(case.time.dt * case.time.dt / case.material.rho0) / gam[src];
        next[src] = next[src] + factor * c(psi);
        prev = curr;
        curr = next;
        add_loss(n + 1, &curr, &mut loss);
    }
    loss.1
}

#[test]
fn reverse_sweep_passes_dot_product_test_against_forward_mode() {
    let case = small_case(9, 7, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let gamma = ScalarField::from_fn(&case.grid, |_| rng.random_range(0.2..1.0));
        let dir: Vec<f64> = (0..case.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) =
            backprop_through_solver(&gamma, &case.material, case.time, &case.src, &case.sensors, &case.data, Quadrature::LeftRiemann)
                .unwrap();
        let lhs: f64 = grad.values().iter().zip(&dir).map(|(a, b)| a * b).sum();
        let rhs = jvp(&case, &gamma, &dir);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }
}

fn problem_of(case: &Case) -> Problem {
    Problem {
        grid: case.grid.clone(),
        material: case.material,
        time: case.time,
        sources: vec![case.src.clone()],
        sensors: case.sensors.clone(),
        data: vec![case.data.clone()],
        truth: None,
        quadrature: Quadrature::LeftRiemann,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reverse_sweep_matches_central_differences(seed in 0u64..10_000) {
        let case = small_case(8, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = ScalarField::from_fn(&case.grid, |_| rng.random_range(0.2..1.0));
        let (_, grad) =
            backprop_through_solver(&gamma, &case.material, case.time, &case.src, &case.sensors, &case.data, Quadrature::LeftRiemann)
                .unwrap();
        let fd = fd_gradient(&problem_of(&case), &gamma, FdStep::Relative(1e-6)).unwrap();
        let cmp = compare(&grad, &fd).unwrap();
        prop_assert!(cmp.max_rel <= 1e-6, "{}", cmp.max_rel);
    }

    #[test]
    fn trapezoid_reverse_sweep_matches_central_differences(seed in 0u64..10_000) {
        let case = small_case(7, 6, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = ScalarField::from_fn(&case.grid, |_| rng.random_range(0.2..1.0));
        let (_, left) =
            backprop_through_solver(&gamma, &case.material, case.time, &case.src, &case.sensors, &case.data, Quadrature::LeftRiemann)
                .unwrap();
        let (_, trap) =
            backprop_through_solver(&gamma, &case.material, case.time, &case.src, &case.sensors, &case.data, Quadrature::Trapezoid)
                .unwrap();
        // the rules differ in the end-sample weights, and the last sample
        // depends on γ
        let mut p = problem_of(&case);
        p.quadrature = Quadrature::Trapezoid;
        let fd = fd_gradient(&p, &gamma, FdStep::Relative(1e-6)).unwrap();
        let worst = trap.values().iter().zip(fd.values()).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        prop_assert!(worst <= 1e-6 * fd.max_abs(), "{worst:e} vs {:e}", fd.max_abs());
        prop_assert!(compare(&trap, &fd).unwrap().interior_rel_l2 <= 1e-7);
        prop_assert!(left.values() != trap.values());
    }
}

#[test]
fn coefficient_gradient_sums_nodal_sensitivity_over_two_by_two_voxels() {
    let case = small_case(12, 8, 60);
    let gamma = ScalarField::from_fn(&case.grid, |x| if x[0] > 5 && x[1] < 4 { 0.5 } else { 0.9 });
    let (hist, shot) = run_forward(&gamma, &case.material, case.time, &case.src, &case.sensors, true).unwrap();
    let residual = ResidualRecord::new(&shot, &case.data).unwrap();
    let adjoint = run_adjoint(&gamma, &case.material, case.time, &residual, Quadrature::LeftRiemann).unwrap();
    let kernel = frechet_kernel(&hist.unwrap(), &adjoint, &case.material, Quadrature::LeftRiemann).unwrap();
    let coeffs: Vec<f64> = (0..6 * 4)
        .map(|v| {
            let (vx, vy) = (v / 4, v % 4);
            gamma.get(&[2 * vx, 2 * vy]).unwrap()
        })
        .collect();
    let m = case.material;
    let ansatz = ConstantAnsatz::new(&case.grid, &[2, 2], coeffs, m.eps, m.upper).unwrap();
    assert_eq!(ansatz.eval().values(), gamma.values());
    let grad = gradient_wrt_coeffs(&kernel, &ansatz).unwrap();
    let nodal = kernel_to_nodal_gradient(&kernel);
    let g = &case.grid;
    for (v, gv) in grad.iter().enumerate() {
        let (vx, vy) = (v / 4, v % 4);
        let mut expect = 0.0;
        for dx in 0..2 {
            for dy in 0..2 {
                let i = g.index(&[2 * vx + dx, 2 * vy + dy]).unwrap();
                expect += kernel.values()[i] * g.cell_volume() * g.boundary_weight(i);
                assert_eq!(nodal.values()[i], kernel.values()[i] * g.node_volume(i));
            }
        }
        assert!((gv - expect).abs() <= 1e-12 * expect.abs().max(1e-300), "voxel {v}");
    }
}
