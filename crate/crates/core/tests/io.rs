use proptest::prelude::*;

use fwi_core::ansatz::{ConstantAnsatz, GeneratorNetwork, NetworkConfig};
use fwi_core::inversion::{AnsatzParams, Strategy};
use fwi_core::io::{
    build_phantom, decode_field, encode_field, format_record, load_case, make_reference_data, parse_record,
    read_checkpoint, write_checkpoint, PhantomSpec, VoidShape,
};
use fwi_core::*;

fn config(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn field_file_round_trip_keeps_every_bit(
        dims in prop_oneof![prop::collection::vec(3usize..7, 2), prop::collection::vec(3usize..5, 3)],
        bits in prop::collection::vec(any::<u64>(), 343),
        h in 1e-6f64..1.0,
    ) {
        let g = Grid::with_spacing(&dims, &vec![h; dims.len()], 1).unwrap();
        let values: Vec<f64> = bits[..g.len()].iter().map(|b| f64::from_bits(*b)).collect();
        let f = ScalarField::new(g, values).unwrap();
        let back = decode_field(&encode_field(&f), 1).unwrap();
        prop_assert_eq!(back.grid().spacing(), f.grid().spacing());
        prop_assert!(back.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn record_text_round_trip_is_exact(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 2 * 9),
        dt in 1e-9f64..1e-6,
    ) {
        let sensors = SensorArray::new(vec![vec![0, 3], vec![7, 3]]).unwrap();
        let rec = ShotRecord::new(sensors, TimeAxis::new(dt, 8).unwrap(), values).unwrap();
        let back = parse_record(&format_record(&rec)).unwrap();
        prop_assert!(back.data().iter().zip(rec.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn checkpoints_survive_the_file_system() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::with_spacing(&[8, 6], &[1e-3, 1e-3], 1).unwrap();
    let constant = ConstantAnsatz::new(&g, &[2, 3], (0..8).map(|i| 0.1 * i as f64 + 0.05).collect(), 1e-5, 1.0).unwrap();
    let cfg = NetworkConfig::for_grid(&[8, 6], 3, vec![4, 2], 1e-5);
    let network = GeneratorNetwork::glorot_init(cfg, 4).unwrap();
    for (name, params) in [("c.fwic", AnsatzParams::Constant(constant)), ("n.fwic", AnsatzParams::Network(network))] {
        let path = dir.path().join(name);
        write_checkpoint(&path, &params).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.params(), params.params());
        assert_eq!(back.field(&g).unwrap().values(), params.field(&g).unwrap().values());
    }
}

#[test]
fn shipped_configs_parse() {
    let desk = load_case(&config("desk.toml")).unwrap();
    assert_eq!(desk.grid.dims(), &[64, 32]);
    assert_eq!(desk.sources.len(), 4);
    assert_eq!(desk.train.as_ref().unwrap().strategy, Strategy::Hybrid);

    let plate = load_case(&config("plate2d.toml")).unwrap();
    assert_eq!(plate.grid.dims(), &[252, 124]);
    assert_eq!(plate.sources.len(), 4);
    assert_eq!(plate.sensors.len(), 54);
    assert_eq!(plate.time.n_steps, 1200);
    let net = plate.train.as_ref().unwrap().network_for(&plate.grid, plate.material.eps);
    assert_eq!(net.param_count(), NetworkConfig::plate_2d().param_count());
    let truth = plate.truth().unwrap();
    let void = truth.values().iter().filter(|v| **v < 1.0).count() as f64;
    let h = plate.grid.spacing();
    let expect = std::f64::consts::PI * 2.5e-3 * 2.5e-3 / (h[0] * h[1]);
    assert!((void - expect).abs() <= 0.05 * expect, "{void} vs {expect}");
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn refined_and_coarse_traces_agree_before_the_first_reflection() {
    let h = 5e-4;
    let g = Grid::with_spacing(&[161, 81], &[h, h], 1).unwrap();
    let m = MaterialModel::aluminium();
    let t = TimeAxis::new(3e-8, 330).unwrap();
    let src = SourceSpec::new(vec![60, 80], 1e12, 5e5, 2).unwrap();
    let sensors = SensorArray::new(vec![vec![80, 80], vec![60, 60]]).unwrap();
    let intact = PhantomSpec { voids: vec![] };
    let fine = make_reference_data(&intact, &g, &m, t, std::slice::from_ref(&src), &sensors, 2).unwrap();
    let (_, coarse) = run_forward(&ScalarField::constant(&g, 1.0), &m, t, &src, &sensors, false).unwrap();
    for s in 0..sensors.len() {
        let e = rel_l2(coarse.trace(s), fine[0].trace(s));
        assert!(e <= 0.02, "sensor {s}: {e}");
    }
}

#[test]
fn refined_void_data_differs_from_coarse_synthetic_data() {
    let case = load_case(&config("desk.toml")).unwrap();
    let fine = case.reference_data().unwrap();
    let truth = case.truth().unwrap();
    let mut worst = 0.0f64;
    for (src, rec) in case.sources.iter().zip(&fine) {
        let (_, coarse) = run_forward(&truth, &case.material, case.time, src, &case.sensors, false).unwrap();
        worst = worst.max(rel_l2(coarse.data(), rec.data()));
    }
    assert!(worst > 1e-6, "{worst}");
}

#[test]
fn reference_data_is_deterministic() {
    let case = load_case(&config("desk.toml")).unwrap();
    let a = case.reference_data().unwrap();
    let b = case.reference_data().unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(format_record(x), format_record(y));
    }
}

#[test]
fn boxes_and_spheres_rasterise_inside_their_bounds() {
    let h = 1e-3;
    let g = Grid::with_spacing(&[11, 11, 11], &[h, h, h], 1).unwrap();
    let spec = PhantomSpec {
        voids: vec![
            VoidShape::Sphere { center: vec![5e-3, 5e-3, 5e-3], radius: 2e-3 },
            VoidShape::Box { min: vec![0.0, 0.0, 0.0], max: vec![1e-3, 1e-3, 1e-3] },
        ],
    };
    let f = build_phantom(&spec, &g, 1e-5).unwrap();
    let void: Vec<Vec<usize>> = (0..g.len()).filter(|&i| f.values()[i] < 1.0).map(|i| g.coords(i)).collect();
    let corner = void.iter().filter(|c| c.iter().all(|&x| x <= 1)).count();
    assert_eq!(corner, 8);
    // lattice points within radius 2 of the centre: 1 + 6 + 12 + 8 + 6
    assert_eq!(void.len() - corner, 33);
}
