use std::collections::{BTreeSet, HashMap};

use kgh_core::fixtures::{gold_candidate_sets, roots_only, synthetic_gold};
use kgh_core::ingest::{
    apply_delta_with, load_snapshot, replay, save_snapshot, subgraph_fingerprint, IngestError,
};
use kgh_core::provider::CorruptionMode;
use kgh_core::{
    apply_corrections, generate_cyclical, generate_one_shot, merge_subgraph, Correction, CorrectionSet,
    GenerateOptions, GraphSnapshot, Hierarchy, MockOracle, MockOracleConfig, Node, NodeId, Provenance, TemplateSet,
};
use proptest::prelude::*;

const CLASS: &str = "intent";

fn nid(i: usize) -> NodeId {
    NodeId::from(format!("n{i}").as_str())
}

/// Independent cycle check: Kahn's algorithm over the exported edge list.
fn edges_acyclic(g: &Hierarchy) -> bool {
    let mut indeg: HashMap<NodeId, usize> = g.nodes().map(|n| (n.id().clone(), 0)).collect();
    let mut out: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for e in g.edges() {
        *indeg.get_mut(&e.child).unwrap() += 1;
        out.entry(e.parent).or_default().push(e.child);
    }
    let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| n.clone()).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for c in out.get(&n).into_iter().flatten() {
            let d = indeg.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(c.clone());
            }
        }
    }
    seen == g.len()
}

#[derive(Debug, Clone)]
enum Op {
    AddEdge(usize, usize),
    RemoveEdge(usize, usize),
    AddRoot(usize),
    Correct {
        node: usize,
        remove: Vec<usize>,
        add: Vec<usize>,
    },
}

fn op(n: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..n, 0..n).prop_map(|(a, b)| Op::AddEdge(a, b)),
        1 => (0..n, 0..n).prop_map(|(a, b)| Op::RemoveEdge(a, b)),
        1 => (0..n).prop_map(Op::AddRoot),
        2 => (0..n, prop::collection::vec(0..n, 0..3), prop::collection::vec(0..n, 0..3))
            .prop_map(|(node, remove, add)| Op::Correct { node, remove, add }),
    ]
}

fn blank(n: usize) -> Hierarchy {
    let mut g = Hierarchy::for_class(CLASS);
    for i in 0..n {
        g.add_node(Node::new(nid(i), format!("label {i}"), CLASS).unwrap()).unwrap();
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn operation_sequences_stay_acyclic(ops in (3usize..14).prop_flat_map(|n| (Just(n), prop::collection::vec(op(n), 1..40)))) {
        let (n, ops) = ops;
        let mut g = blank(n);
        for o in ops {
            match o {
                Op::AddEdge(a, b) => {
                    let would_cycle = a == b || g.is_ancestor(&nid(b), &nid(a)).unwrap();
                    let res = g.add_edge(&nid(a), &nid(b), Provenance::Generated);
                    if would_cycle {
                        prop_assert!(res.is_err());
                    }
                }
                Op::RemoveEdge(a, b) => {
                    g.remove_edge(&nid(a), &nid(b));
                }
                Op::AddRoot(a) => {
                    let _ = g.add_root(&nid(a));
                }
                Op::Correct { node, remove, add } => {
                    let set = CorrectionSet {
                        corrections: vec![Correction {
                            node: nid(node),
                            remove_parents: remove.into_iter().map(nid).collect(),
                            add_parents: add.into_iter().map(nid).collect(),
                            reviewer: String::new(),
                            timestamp: None,
                        }],
                    };
                    let before = g.clone();
                    let (next, report) = apply_corrections(&g, &set);
                    if report.failed() > 0 {
                        prop_assert_eq!(&next, &before);
                    }
                    g = next;
                }
            }
            prop_assert!(edges_acyclic(&g));
            prop_assert!(g.validate().is_empty());
        }
    }

    #[test]
    fn deltas_account_for_every_candidate_and_apply_atomically(
        depth in 3u32..6,
        extra in 0usize..40,
        seed in any::<u64>(),
        noise in 0.0f64..0.6,
        mode in prop_oneof![
            Just(CorruptionMode::WrongCategory),
            Just(CorruptionMode::SpuriousParent),
            Just(CorruptionMode::DropNode)
        ],
        cyclical in any::<bool>(),
        cut in any::<prop::sample::Index>(),
    ) {
        let gold = synthetic_gold(depth, depth as usize + extra, seed);
        let mock = MockOracle::new(gold.clone(), MockOracleConfig::noisy(noise, seed, mode));
        let base = roots_only(&gold);
        let set = &gold_candidate_sets(&gold)[0];
        let generate = if cyclical { generate_cyclical::<MockOracle> } else { generate_one_shot::<MockOracle> };
        let delta = generate(&base, set, &mock, &TemplateSet::default(), &GenerateOptions::default()).unwrap();

        let wanted: BTreeSet<NodeId> = set.candidates.iter().cloned().collect();
        let placed = delta.placed();
        prop_assert!(placed.is_disjoint(&delta.unplaced));
        prop_assert_eq!(placed.len() + delta.unplaced.len(), wanted.len());
        prop_assert_eq!(delta.candidates(), wanted);

        let mut snap = GraphSnapshot::new(base.clone());
        let bytes = save_snapshot(&snap);
        if !delta.edges_added.is_empty() {
            let at = cut.index(delta.edges_added.len());
            let err = snap.apply_delta_with(&delta, None, &|i| i == at).unwrap_err();
            prop_assert!(matches!(err, IngestError::Interrupted { .. }), "unexpected error {:?}", err);
            prop_assert_eq!(save_snapshot(&snap), bytes);
        }
        prop_assert!(snap.apply_delta(&delta, None).unwrap());
        prop_assert!(edges_acyclic(&snap.hierarchy));
        prop_assert_eq!(snap.hierarchy.edge_count(), delta.edges_added.len());
        let fp = subgraph_fingerprint(&snap.hierarchy, &set.l1_category, &delta.candidates()).unwrap();
        prop_assert_eq!(fp, delta.base_fingerprint.clone());
        prop_assert_eq!(&apply_delta_with(&snap.hierarchy, &delta, &|_| false).unwrap(), &snap.hierarchy);
        prop_assert!(!snap.apply_delta(&delta, None).unwrap());
    }
}

/// Graph with nodes labelled from a small shared pool so that two such
/// graphs overlap on labels.
fn labelled_graph() -> impl Strategy<Value = Hierarchy> {
    (
        prop::collection::btree_set(0usize..12, 1..8),
        prop::collection::vec((0usize..8, 0usize..8), 0..12),
        "[a-c]",
    )
        .prop_map(|(labels, edges, prefix)| {
            let labels: Vec<usize> = labels.into_iter().collect();
            let mut g = Hierarchy::for_class(CLASS);
            let ids: Vec<NodeId> = labels
                .iter()
                .map(|l| NodeId::from(format!("{prefix}{l}").as_str()))
                .collect();
            for (id, l) in ids.iter().zip(&labels) {
                let node = Node::new(id.clone(), format!("Topic {l}"), CLASS)
                    .unwrap()
                    .with_attribute(format!("from-{prefix}"), "1");
                g.add_node(node).unwrap();
            }
            g.add_root(&ids[0]).unwrap();
            for (a, b) in edges {
                let (a, b) = (a % ids.len(), b % ids.len());
                if a < b {
                    let _ = g.add_edge(&ids[a], &ids[b], Provenance::Preexisting);
                }
            }
            g
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn merge_is_idempotent_and_acyclic(kg in labelled_graph(), domain in labelled_graph()) {
        let (once, _) = merge_subgraph(&kg, &domain);
        let (twice, _) = merge_subgraph(&once, &domain);
        prop_assert!(edges_acyclic(&once));
        prop_assert!(once.validate().is_empty());
        prop_assert_eq!(&once, &twice);
        let keys: BTreeSet<String> = once.nodes().map(|n| n.normalized_label().to_string()).collect();
        prop_assert_eq!(keys.len(), once.len());
    }

    #[test]
    fn snapshot_round_trips_and_replays(kg in labelled_graph(), domain in labelled_graph(), moves in prop::collection::vec((0usize..8, 0usize..8), 0..6)) {
        let mut snap = GraphSnapshot::new(kg.clone());
        snap.merge_subgraph(&domain, None);
        let ids: Vec<NodeId> = snap.hierarchy.nodes().map(|n| n.id().clone()).collect();
        let corrections = moves
            .into_iter()
            .map(|(a, b)| Correction {
                node: ids[a % ids.len()].clone(),
                remove_parents: BTreeSet::new(),
                add_parents: BTreeSet::from([ids[b % ids.len()].clone()]),
                reviewer: "prop".into(),
                timestamp: None,
            })
            .collect();
        snap.apply_corrections(&CorrectionSet { corrections }, Some("t".into()));
        let bytes = save_snapshot(&snap);
        prop_assert_eq!(&load_snapshot(&bytes).unwrap(), &snap);
        prop_assert_eq!(&replay(&kg, &snap.provenance_log).unwrap(), &snap.hierarchy);
    }
}

#[test]
fn stale_delta_is_refused_after_an_unrelated_edit() {
    let gold = synthetic_gold(4, 40, 3);
    let mock = MockOracle::new(gold.clone(), MockOracleConfig::noiseless(3));
    let base = roots_only(&gold);
    let set = &gold_candidate_sets(&gold)[0];
    let delta = generate_one_shot(&base, set, &mock, &TemplateSet::default(), &GenerateOptions::default()).unwrap();
    let mut edited = base.clone();
    edited
        .add_node(Node::new("late".into(), "late arrival", kgh_core::fixtures::CONCEPT_CLASS).unwrap())
        .unwrap();
    edited.add_edge(&set.l1_category, &"late".into(), Provenance::HumanCorrected).unwrap();
    assert!(matches!(
        kgh_core::apply_delta(&edited, &delta),
        Err(IngestError::StaleDelta { .. })
    ));
}
