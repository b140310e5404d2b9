use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fwi_core::*;

fn plate(nx: usize, ny: usize) -> (Grid, MaterialModel, TimeAxis) {
    let h = 1e-3;
    let g = Grid::with_spacing(&[nx, ny], &[h, h], 1).unwrap();
    let m = MaterialModel::aluminium();
    let t = TimeAxis::new(0.5 * h / m.c0, 60).unwrap();
    (g, m, t)
}

fn random_gamma(g: &Grid, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::from_fn(g, |_| rng.random_range(0.2..1.0))
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn record_is_linear_in_amplitude(seed in 0u64..1000, factor in -4.0f64..4.0) {
        let (g, m, t) = plate(14, 10);
        let gamma = random_gamma(&g, seed);
        let src = SourceSpec::new(vec![5, 9], 1e12, 5e5, 2).unwrap();
        let sensors = SensorArray::new(vec![vec![0, 9], vec![13, 9], vec![7, 0]]).unwrap();
        let (_, base) = run_forward(&gamma, &m, t, &src, &sensors, false).unwrap();
        let (_, scaled) = run_forward(&gamma, &m, t, &src.with_amplitude(factor * 1e12), &sensors, false).unwrap();
        let expect: Vec<f64> = base.data().iter().map(|v| factor * v).collect();
        prop_assert!(close(scaled.data(), &expect, 1e-12));
    }

    #[test]
    fn interior_source_receiver_pairs_are_reciprocal(seed in 0u64..1000) {
        let (g, m, t) = plate(12, 9);
        let gamma = random_gamma(&g, seed);
        let a = vec![3, 4];
        let b = vec![8, 6];
        let from_a = SourceSpec::new(a.clone(), 1e12, 5e5, 2).unwrap();
        let from_b = SourceSpec::new(b.clone(), 1e12, 5e5, 2).unwrap();
        let (_, at_b) = run_forward(&gamma, &m, t, &from_a, &SensorArray::new(vec![b]).unwrap(), false).unwrap();
        let (_, at_a) = run_forward(&gamma, &m, t, &from_b, &SensorArray::new(vec![a]).unwrap(), false).unwrap();
        prop_assert!(at_b.data().iter().any(|v| *v != 0.0));
        prop_assert!(close(at_b.data(), at_a.data(), 1e-11));
    }

    #[test]
    fn mirrored_setup_gives_mirrored_field(seed in 0u64..1000) {
        let (g, m, t) = plate(13, 8);
        let half = random_gamma(&g, seed);
        let gamma = ScalarField::from_fn(&g, |c| {
            let x = c[0].min(12 - c[0]);
            half.get(&[x, c[1]]).unwrap()
        });
        let src = SourceSpec::new(vec![6, 7], 1e12, 5e5, 2).unwrap();
        let sensors = SensorArray::new(vec![vec![0, 0]]).unwrap();
        let (hist, _) = run_forward(&gamma, &m, t, &src, &sensors, true).unwrap();
        let u = hist.unwrap();
        let last = u.field(t.n_steps);
        let left: Vec<f64> = (0..g.len()).map(|i| last.values()[i]).collect();
        let right: Vec<f64> = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                last.get(&[12 - c[0], c[1]]).unwrap()
            })
            .collect();
        prop_assert!(close(&left, &right, 1e-12));
    }
}

#[test]
fn signal_spreads_at_most_one_node_per_step() {
    let (g, m, t) = plate(30, 20);
    let gamma = random_gamma(&g, 7);
    let src = SourceSpec::new(vec![4, 19], 1e12, 5e5, 2).unwrap();
    let sensors = SensorArray::new(vec![vec![29, 19], vec![4, 0], vec![20, 10]]).unwrap();
    let (_, rec) = run_forward(&gamma, &m, t, &src, &sensors, false).unwrap();
    for (s, p) in sensors.positions().iter().enumerate() {
        let dist = p[0].abs_diff(4) + p[1].abs_diff(19);
        let trace = rec.trace(s);
        assert!(trace[..=dist.min(t.n_steps)].iter().all(|v| *v == 0.0), "sensor {p:?}");
    }
    assert!(rec.trace(2).iter().any(|v| *v != 0.0));
}

#[test]
fn homogeneous_field_matches_direct_laplacian_leapfrog_in_3d() {
    let h = 1e-3;
    let g = Grid::with_spacing(&[6, 5, 4], &[h, h, h], 1).unwrap();
    let m = MaterialModel::aluminium();
    let t = TimeAxis::new(0.5 * h / m.c0, 12).unwrap();
    let src = SourceSpec::new(vec![2, 2, 3], 1e12, 5e5, 2).unwrap();
    let sensors = SensorArray::new(vec![vec![5, 0, 0]]).unwrap();
    let (hist, _) = run_forward(&ScalarField::constant(&g, 1.0), &m, t, &src, &sensors, true).unwrap();
    let hist = hist.unwrap();

    let c2 = (m.c0 * t.dt / h).powi(2);
    let dims = [6usize, 5, 4];
    let at = |u: &[f64], x: [isize; 3]| {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let n = dims[a] as isize;
            let v = if x[a] < 0 { -x[a] } else if x[a] >= n { 2 * (n - 1) - x[a] } else { x[a] };
            c[a] = v as usize;
        }
        u[(c[0] * dims[1] + c[1]) * dims[2] + c[2]]
    };
    let mut prev = vec![0.0; g.len()];
    let mut curr = vec![0.0; g.len()];
    let src_idx = (2 * dims[1] + 2) * dims[2] + 3;
    for n in 1..t.n_steps {
        let mut next = vec![0.0; g.len()];
        for x in 0..dims[0] as isize {
            for y in 0..dims[1] as isize {
                for z in 0..dims[2] as isize {
                    let c = at(&curr, [x, y, z]);
                    let lap = at(&curr, [x + 1, y, z]) + at(&curr, [x - 1, y, z]) + at(&curr, [x, y + 1, z])
                        + at(&curr, [x, y - 1, z])
                        + at(&curr, [x, y, z + 1])
                        + at(&curr, [x, y, z - 1])
                        - 6.0 * c;
                    let i = ((x as usize) * dims[1] + y as usize) * dims[2] + z as usize;
                    next[i] = 2.0 * c - prev[i] + c2 * lap;
                }
            }
        }
        let psi = fwi_core::forward::sine_burst(t.time(n), &src);
        next[src_idx] += t.dt * t.dt / m.rho0 * psi / (3.0 * h * h);
        prev = curr;
        curr = next;
        assert!(close(hist.snapshot(n + 1), &curr, 1e-12), "step {}", n + 1);
    }
}
