mod common;

use catgraph::graph::{build_radius_graph, GraphBuildConfig};
use common::{brute_force_graph, random_system, rng};
use proptest::prelude::*;

fn assert_matches_brute_force(seed: u64, cutoff: f64) {
    let s = random_system(&mut rng(seed), 12);
    let fast = build_radius_graph(&s, &GraphBuildConfig::with_cutoff(cutoff)).unwrap();
    let slow = brute_force_graph(&s, cutoff);
    assert_eq!(fast.edges, slow.edges, "seed {seed}");
    for (a, b) in fast.distances.iter().zip(&slow.distances) {
        assert!((a - b).abs() < 1e-9);
    }
    fast.check_against(&s).unwrap();
}

#[test]
fn small_cutoffs_match_brute_force() {
    for seed in 0..40 {
        assert_matches_brute_force(seed, 2.5);
    }
}

#[test]
fn edges_come_in_reverse_pairs() {
    for seed in 0..20 {
        let s = random_system(&mut rng(seed), 10);
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        for e in &g.edges {
            let rev = catgraph::Edge {
                src: e.dst,
                dst: e.src,
                offset: e.offset.map(|o| -o),
            };
            assert!(g.edges.binary_search(&rev).is_ok());
        }
    }
}

#[test]
fn translation_leaves_graph_unchanged_for_open_systems() {
    for seed in 0..10 {
        let mut s = random_system(&mut rng(seed), 10);
        s.pbc = [false; 3];
        let g = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        for p in &mut s.positions {
            p[0] += 13.7;
            p[2] -= 4.1;
        }
        let h = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        assert_eq!(g.edges, h.edges);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cell_list_equals_enumeration(seed in any::<u64>(), cutoff in 1.0f64..7.0) {
        assert_matches_brute_force(seed, cutoff);
    }

    #[test]
    fn max_neighbors_bounds_in_degree(seed in any::<u64>(), m in 1usize..6) {
        let s = random_system(&mut rng(seed), 8);
        let cfg = GraphBuildConfig { max_neighbors: Some(m), ..GraphBuildConfig::default() };
        let g = build_radius_graph(&s, &cfg).unwrap();
        let full = build_radius_graph(&s, &GraphBuildConfig::default()).unwrap();
        for i in 0..s.num_atoms() {
            let deg = g.edges.iter().filter(|e| e.dst == i).count();
            let full_deg = full.edges.iter().filter(|e| e.dst == i).count();
            prop_assert_eq!(deg, full_deg.min(m));
        }
    }
}
