use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use kgh_core::fixtures::{colors_fixture, intents_fixture, synthetic_gold};
use kgh_core::stats::{coverage_report, level_histogram, LevelCounting};
use kgh_core::{Hierarchy, NodeId};

/// Brute-force oracle: walks every root path from scratch using only the
/// edge list, recording each node's shortest depth and the set of bucketed
/// depths at which it occurs.
fn oracle(g: &Hierarchy, collapse_at: u32) -> (BTreeMap<u32, usize>, BTreeMap<u32, usize>) {
    let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for e in g.edges() {
        children.entry(e.parent).or_default().push(e.child);
    }
    let mut min_depth: HashMap<NodeId, u32> = HashMap::new();
    let mut depths: HashMap<NodeId, BTreeSet<u32>> = HashMap::new();
    fn walk(
        n: &NodeId,
        d: u32,
        children: &HashMap<NodeId, Vec<NodeId>>,
        min_depth: &mut HashMap<NodeId, u32>,
        depths: &mut HashMap<NodeId, BTreeSet<u32>>,
        collapse_at: u32,
    ) {
        let m = min_depth.entry(n.clone()).or_insert(d);
        *m = (*m).min(d);
        depths.entry(n.clone()).or_default().insert(d.min(collapse_at));
        for c in children.get(n).into_iter().flatten() {
            walk(c, d + 1, children, min_depth, depths, collapse_at);
        }
    }
    for r in g.roots() {
        walk(r, 1, &children, &mut min_depth, &mut depths, collapse_at);
    }
    let mut minimal = BTreeMap::new();
    for d in min_depth.values() {
        *minimal.entry((*d).min(collapse_at)).or_insert(0) += 1;
    }
    let mut occ = BTreeMap::new();
    for ds in depths.values() {
        for d in ds {
            *occ.entry(*d).or_insert(0) += 1;
        }
    }
    (minimal, occ)
}

fn as_map(counts: &[usize]) -> BTreeMap<u32, usize> {
    counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(i, c)| (i as u32 + 1, *c))
        .collect()
}

#[test]
fn intents_row() {
    let start = Instant::now();
    let f = intents_fixture();
    let r = coverage_report(&f.before, &f.after, f.node_class).unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(r.total_nodes, 12385);
    assert_eq!(r.in_hierarchy_before, 956);
    assert_eq!(r.in_hierarchy_after, 12339);
    assert_eq!(r.level_occurrences.counts(), [25, 904, 4684, 4961, 3195]);
    assert_eq!(r.per_level_counts.counts(), [25, 904, 4684, 3531, 3195]);
    assert_eq!(r.per_level_counts.total(), r.in_hierarchy_after);
    assert!((r.coverage_fraction - 0.9963).abs() < 5e-5);
    assert!((r.coverage_increase - (12339.0 - 956.0) / 12385.0).abs() < 1e-12);
}

#[test]
fn colors_row_totals() {
    let f = colors_fixture();
    let r = coverage_report(&f.before, &f.after, f.node_class).unwrap();
    assert_eq!(
        (r.total_nodes, r.in_hierarchy_before, r.in_hierarchy_after),
        (328, 12, 328)
    );
    assert_eq!(r.coverage_fraction, 1.0);
}

#[test]
fn histograms_match_path_oracle() {
    let mut graphs = vec![intents_fixture().after, colors_fixture().after];
    graphs.extend((3..=6).map(|d| synthetic_gold(d, 300, u64::from(d))));
    for g in &graphs {
        for collapse_at in [2, 3, 5, 8] {
            let (minimal, occ) = oracle(g, collapse_at);
            let h_min = level_histogram(g, collapse_at, LevelCounting::Minimal).unwrap();
            let h_occ = level_histogram(g, collapse_at, LevelCounting::Occurrence).unwrap();
            assert_eq!(as_map(&h_min.counts()), minimal);
            assert_eq!(as_map(&h_occ.counts()), occ);
        }
    }
}
