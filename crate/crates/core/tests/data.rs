#![allow(clippy::needless_range_loop)]

use catgraph::data::{
    derive_oracle_params, generate_dataset, generate_split, morse, oracle_energy_forces, read_jsonl, tag0_fraction,
    write_jsonl, GeneratorConfig, Split,
};
use catgraph::geom;
use catgraph::ElementTable;
use proptest::prelude::*;

fn setup(n_train: usize) -> (GeneratorConfig, catgraph::data::OracleParams) {
    let cfg = GeneratorConfig {
        n_train,
        n_val: 3,
        ..Default::default()
    };
    let oracle = derive_oracle_params(&ElementTable::bundled(), &cfg.elements()).unwrap();
    (cfg, oracle)
}

#[test]
fn oracle_forces_match_central_differences() {
    let (cfg, oracle) = setup(3);
    for s in generate_split(&cfg, &oracle, Split::Train).unwrap() {
        let forces = s.forces.clone().unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let scale = forces.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in [0, 20, s.num_atoms() - 1] {
            for k in 0..3 {
                let mut p = s.clone();
                p.positions[i][k] += h;
                let ep = oracle_energy_forces(&p, &oracle).unwrap().0;
                p.positions[i][k] -= 2.0 * h;
                let em = oracle_energy_forces(&p, &oracle).unwrap().0;
                let fd = -(ep - em) / (2.0 * h);
                worst = worst.max((fd - forces[i][k]).abs() / forces[i][k].abs().max(1e-3 * scale));
            }
        }
        assert!(worst < 1e-6, "relative error {worst}");
    }
}

#[test]
fn oracle_is_rotation_invariant_about_z() {
    // rotating the whole system by 90° about z together with its square cell
    let (cfg, oracle) = setup(1);
    let s = &generate_split(&cfg, &oracle, Split::Train).unwrap()[0];
    let r = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    let mut t = s.clone();
    t.positions = s.positions.iter().map(|&p| geom::rotate(p, &r)).collect();
    t.cell = [geom::rotate(s.cell[0], &r), geom::rotate(s.cell[1], &r), s.cell[2]];
    let (e0, f0) = oracle_energy_forces(s, &oracle).unwrap();
    let (e1, f1) = oracle_energy_forces(&t, &oracle).unwrap();
    assert!((e0 - e1).abs() < 1e-9 * e0.abs());
    for (a, b) in f0.iter().zip(&f1) {
        let ra = geom::rotate(*a, &r);
        for k in 0..3 {
            assert!((ra[k] - b[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn train_tag0_fraction_near_target() {
    let (cfg, oracle) = setup(200);
    let train = generate_split(&cfg, &oracle, Split::Train).unwrap();
    assert!((tag0_fraction(&train) - cfg.target_tag0_fraction).abs() <= 0.03);
}

#[test]
fn dataset_directory_round_trip() {
    let (cfg, oracle) = setup(4);
    let ds = generate_dataset(&cfg, &oracle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_dir(dir.path()).unwrap();
    let back = catgraph::data::Dataset::read_dir(dir.path()).unwrap();
    assert_eq!(ds, back);
    let bytes1 = std::fs::read(dir.path().join("train.jsonl")).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, &oracle).unwrap().write_dir(dir2.path()).unwrap();
    assert_eq!(bytes1, std::fs::read(dir2.path().join("train.jsonl")).unwrap());
}

#[test]
fn jsonl_round_trip_of_generated_samples() {
    let (cfg, oracle) = setup(10);
    let systems = generate_split(&cfg, &oracle, Split::Train).unwrap();
    let f = tempfile::NamedTempFile::new().unwrap();
    write_jsonl(&systems, f.path()).unwrap();
    assert_eq!(read_jsonl(f.path()).unwrap(), systems);
}

proptest! {
    #[test]
    fn morse_derivative_matches_difference(depth in 0.1f64..2.0, r_eq in 0.8f64..3.0, d in 0.6f64..6.0) {
        let p = catgraph::data::PairParams { depth, r_eq };
        let h = 1e-6;
        let fd = (morse(p, 1.5, d + h).0 - morse(p, 1.5, d - h).0) / (2.0 * h);
        let an = morse(p, 1.5, d).1;
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
    }

    #[test]
    fn oracle_params_symmetric(a in 0usize..11, b in 0usize..11) {
        let (cfg, oracle) = setup(1);
        let el = cfg.elements();
        let (za, zb) = (el[a % el.len()], el[b % el.len()]);
        prop_assert_eq!(oracle.pair(za, zb).unwrap(), oracle.pair(zb, za).unwrap());
        prop_assert!(oracle.pair(za, zb).unwrap().depth > 0.0);
    }
}
