use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use kgh_core::fixtures::{gold_candidate_sets, gold_edges, label_prefix_gold, roots_only, synthetic_gold};
use kgh_core::stats::edge_score;
use kgh_core::{
    apply_delta, generate_cyclical, generate_one_shot, GenerateOptions, Hierarchy, HierarchyDelta, MockOracle,
    MockOracleConfig, NodeId, TemplateSet,
};

type Strategy = fn(
    &Hierarchy,
    &kgh_core::CandidateSet,
    &MockOracle,
    &TemplateSet,
    &GenerateOptions,
) -> Result<HierarchyDelta, kgh_core::GenerateError>;

const STRATEGIES: [(&str, Strategy); 2] = [("one_shot", generate_one_shot), ("cyclical", generate_cyclical)];

fn delta_edges(d: &HierarchyDelta) -> BTreeSet<(NodeId, NodeId)> {
    d.edges_added.iter().map(|e| (e.parent.clone(), e.child.clone())).collect()
}

/// Runs `generate` for every category of `gold` on a graph holding only the
/// roots, applies the deltas and returns the whole-graph edge F1.
fn reconstruct(gold: &Hierarchy, generate: Strategy, seed: u64) -> f64 {
    let mock = MockOracle::new(gold.clone(), MockOracleConfig::noiseless(seed));
    let templates = TemplateSet::default();
    let options = GenerateOptions::default();
    let mut graph = roots_only(gold);
    let mut predicted = BTreeSet::new();
    let mut expected = BTreeSet::new();
    for set in gold_candidate_sets(gold) {
        let delta = generate(&graph, &set, &mock, &templates, &options).unwrap();
        assert_eq!(delta.candidates().len(), set.len(), "every candidate accounted for");
        predicted.extend(delta_edges(&delta));
        expected.extend(gold_edges(gold, &set.l1_category));
        graph = apply_delta(&graph, &delta).unwrap();
    }
    let graph_edges: BTreeSet<_> = graph.edges().map(|e| (e.parent, e.child)).collect();
    assert_eq!(graph_edges, predicted);
    edge_score(&predicted, &expected).f1
}

#[test]
fn noiseless_generation_reconstructs_gold() {
    for depth in 3..=6u32 {
        for nodes in [30usize, 120, 500] {
            let gold = synthetic_gold(depth, nodes, u64::from(depth) * 1000 + nodes as u64);
            for (name, generate) in STRATEGIES {
                let start = Instant::now();
                let f1 = reconstruct(&gold, generate, 11);
                let elapsed = start.elapsed();
                assert_eq!(f1, 1.0, "{name} depth {depth} nodes {nodes}");
                assert!(elapsed < Duration::from_secs(10), "{name} took {elapsed:?}");
            }
        }
    }
}

#[test]
fn labels_sharing_prefixes_are_not_confused() {
    let gold = label_prefix_gold();
    for (name, generate) in STRATEGIES {
        assert_eq!(reconstruct(&gold, generate, 2), 1.0, "{name}");
    }
}

#[test]
fn small_one_shot_batches_still_reconstruct() {
    let gold = synthetic_gold(4, 150, 9);
    let mock = MockOracle::new(gold.clone(), MockOracleConfig::noiseless(1));
    let options = GenerateOptions {
        batch_size: 17,
        ..GenerateOptions::default()
    };
    for set in gold_candidate_sets(&gold) {
        let d = generate_one_shot(&roots_only(&gold), &set, &mock, &TemplateSet::default(), &options).unwrap();
        assert_eq!(delta_edges(&d), gold_edges(&gold, &set.l1_category));
        assert!(d.unplaced.is_empty());
    }
}
