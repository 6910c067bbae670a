mod common;

use catgraph::data::Split;
use catgraph::graph::GraphBuildConfig;
use catgraph::rewire::{prepare, rewiring_stats, RewireStrategy};
use common::{check_rewiring, generated, random_system, rng};
use proptest::prelude::*;

#[test]
fn generated_slabs_satisfy_accounting() {
    let build = GraphBuildConfig::default();
    for s in generated(10, Split::Train) {
        check_rewiring(&s, &build).unwrap();
    }
}

#[test]
fn default_dataset_reduction() {
    let systems = generated(40, Split::Train);
    let stats = rewiring_stats(&systems, RewireStrategy::RemoveTag0, &GraphBuildConfig::default()).unwrap();
    assert!(
        (stats.atoms_remaining_pct - 35.0).abs() <= 2.0,
        "{}",
        stats.atoms_remaining_pct
    );
    assert!(stats.edges_remaining_pct < 25.0);
    assert_eq!(stats.per_sample.len(), 40);
}

#[test]
fn supernode_graphs_pass_consistency_checks_except_cutoff() {
    let build = GraphBuildConfig::default();
    for s in generated(4, Split::ValId) {
        for strategy in [RewireStrategy::SupernodePerGraph, RewireStrategy::SupernodePerAtomType] {
            let (sys, g) = prepare(&s, strategy, &build).unwrap();
            g.check_against(&sys).unwrap();
            for (e, &d) in g.edges.iter().zip(&g.distances) {
                if !sys.is_supernode(e.src) && !sys.is_supernode(e.dst) {
                    assert!(d <= build.cutoff);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_systems_satisfy_accounting(seed in any::<u64>()) {
        let s = random_system(&mut rng(seed), 12);
        prop_assert_eq!(check_rewiring(&s, &GraphBuildConfig::default()), Ok(()));
    }

    #[test]
    fn remove_tag0_is_idempotent(seed in any::<u64>()) {
        let s = random_system(&mut rng(seed), 12);
        prop_assume!(s.tags.iter().any(|&t| t != 0));
        let build = GraphBuildConfig::default();
        let (once, g1) = prepare(&s, RewireStrategy::RemoveTag0, &build).unwrap();
        let (twice, g2) = prepare(&once, RewireStrategy::RemoveTag0, &build).unwrap();
        prop_assert_eq!(once, twice);
        prop_assert_eq!(g1, g2);
    }
}
