//! Deterministic fixture graphs: the coverage fixtures for the intent and
//! color node classes, seeded synthetic gold hierarchies, and small
//! hand-built graphs used by tests, benches and the CLI.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{CategorySet, FewShotExample};
use crate::generator::CandidateSet;
use crate::graph::{Hierarchy, Node, NodeId, Provenance};

pub const INTENT_CLASS: &str = "intent";
pub const COLOR_CLASS: &str = "color";
pub const CONCEPT_CLASS: &str = "concept";

/// Coverage fixture: the graph before and after hierarchy generation.
#[derive(Debug, Clone)]
pub struct CoverageFixture {
    pub node_class: &'static str,
    pub before: Hierarchy,
    pub after: Hierarchy,
}

const INTENT_ROOTS: [&str; 25] = [
    "Travel",
    "Celebrations",
    "Beauty and Wellness",
    "Relationships",
    "Food and Drink",
    "Business",
    "Education",
    "Home and Garden",
    "Fashion",
    "Sports",
    "Music",
    "Photography",
    "Pets",
    "Health",
    "Finance",
    "Technology",
    "Art and Design",
    "Holidays",
    "Parenting",
    "Events",
    "Social Media",
    "Real Estate",
    "Nonprofit",
    "Entertainment",
    "Science",
];

fn id(prefix: &str, i: usize) -> NodeId {
    NodeId::from(format!("{prefix}{i:05}").as_str())
}

fn add(g: &mut Hierarchy, id: &NodeId, label: String, class: &str) {
    g.add_node(Node::new(id.clone(), label, class).expect("fixture label"))
        .expect("fixture node");
}

fn link(g: &mut Hierarchy, parent: &NodeId, child: &NodeId) {
    g.add_edge(parent, child, Provenance::Preexisting).expect("fixture edge");
}

/// Intent graph with 12385 nodes under 25 roots. After generation 12339
/// are reachable, 46 are not. Minimal levels: 904 at L2, 4684 at L3, 3531
/// at L4 and 3195 at L5 or deeper. 1430 leaf L3 nodes take a second parent
/// at L3, so they also occur at depth 4. Before generation only the 904
/// root edges and 27 L2 -> L3 edges exist (956 reachable nodes).
pub fn intents_fixture() -> CoverageFixture {
    const L2: usize = 904;
    const L3: usize = 4684;
    const L4: usize = 3531;
    const L5: usize = 3000;
    const L6: usize = 195;
    const DOUBLE: usize = 1430;
    const UNREACHABLE: usize = 46;
    const BEFORE_L3: usize = 27;

    let mut after = Hierarchy::for_class(INTENT_CLASS);
    let roots: Vec<NodeId> = (0..INTENT_ROOTS.len()).map(|i| id("r", i)).collect();
    for (r, label) in roots.iter().zip(INTENT_ROOTS) {
        add(&mut after, r, label.to_string(), INTENT_CLASS);
        after.add_root(r).expect("fixture root");
    }
    let level = |prefix: &str, count: usize, parents: &[NodeId], g: &mut Hierarchy| -> Vec<NodeId> {
        (0..count)
            .map(|i| {
                let n = id(prefix, i);
                let parent = &parents[i % parents.len()];
                add(g, &n, format!("{prefix} intent {i}"), INTENT_CLASS);
                link(g, parent, &n);
                n
            })
            .collect()
    };
    let l2 = level("a", L2, &roots, &mut after);
    let l3 = level("b", L3, &l2, &mut after);
    // the last DOUBLE level-3 nodes stay leaves; the rest hold level 4
    let (inner, doubles) = l3.split_at(L3 - DOUBLE);
    let l4 = level("c", L4, inner, &mut after);
    let l5 = level("d", L5, &l4, &mut after);
    level("e", L6, &l5, &mut after);
    for (i, d) in doubles.iter().enumerate() {
        link(&mut after, &inner[(i * 7 + 3) % inner.len()], d);
    }
    for i in 0..UNREACHABLE {
        add(&mut after, &id("u", i), format!("unplaced intent {i}"), INTENT_CLASS);
    }

    let mut before = after.clone();
    let keep: BTreeSet<(NodeId, NodeId)> = roots
        .iter()
        .flat_map(|r| after.children(r).expect("root").into_iter().map(move |c| (r.clone(), c.clone())))
        .chain(l3[..BEFORE_L3].iter().map(|c| {
            let p = after.parents(c).expect("node")[0].clone();
            (p, c.clone())
        }))
        .collect();
    for e in after.edges() {
        if !keep.contains(&(e.parent.clone(), e.child.clone())) {
            before.remove_edge(&e.parent, &e.child);
        }
    }
    CoverageFixture {
        node_class: INTENT_CLASS,
        before,
        after,
    }
}

const COLOR_ROOTS: [&str; 12] = [
    "Red", "Orange", "Yellow", "Green", "Blue", "Purple", "Pink", "Brown", "Gray", "Black", "White", "Metallic",
];

/// Color graph: 12 roots, 84 L2, 225 L3 and 7 L4 nodes, all reachable after
/// generation. Before generation there are no edges.
pub fn colors_fixture() -> CoverageFixture {
    let mut after = Hierarchy::for_class(COLOR_CLASS);
    let roots: Vec<NodeId> = (0..COLOR_ROOTS.len()).map(|i| id("color-r", i)).collect();
    for (r, label) in roots.iter().zip(COLOR_ROOTS) {
        add(&mut after, r, label.to_string(), COLOR_CLASS);
        after.add_root(r).expect("fixture root");
    }
    let mut prev = roots.clone();
    for (depth, count) in [(2usize, 84usize), (3, 225), (4, 7)] {
        let mut current = Vec::with_capacity(count);
        for i in 0..count {
            let n = id(&format!("color-{depth}-"), i);
            let parent = &prev[i % prev.len()];
            let label = format!("{} shade {depth}.{i}", after.node(parent).expect("parent").label());
            add(&mut after, &n, label, COLOR_CLASS);
            link(&mut after, parent, &n);
            current.push(n);
        }
        prev = current;
    }
    let mut before = after.clone();
    for e in after.edges() {
        before.remove_edge(&e.parent, &e.child);
    }
    CoverageFixture {
        node_class: COLOR_CLASS,
        before,
        after,
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ba", "de", "fu", "gi", "ho", "ju", "pe", "zo",
];

fn word(mut i: usize) -> String {
    let mut w = String::new();
    loop {
        w.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
        if i == 0 {
            break w;
        }
    }
}

/// Seeded gold hierarchy of `nodes` concept nodes whose longest root path
/// has exactly `depth` levels. Every node sits one level below each of its
/// parents, and about a tenth of the nodes below L2 take a second parent
/// from the same category.
pub fn synthetic_gold(depth: u32, nodes: usize, seed: u64) -> Hierarchy {
    assert!(depth >= 2, "depth must be at least 2");
    let n_roots = (2 + nodes / 200).min(nodes / depth as usize).max(1);
    assert!(nodes >= n_roots * depth as usize, "too few nodes for the requested depth");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Hierarchy::for_class(CONCEPT_CLASS);
    // by_level[root][level - 1]
    let mut by_level: Vec<Vec<Vec<NodeId>>> = vec![vec![Vec::new(); depth as usize]; n_roots];
    let mut next = 0usize;
    let mut fresh = |g: &mut Hierarchy, level: u32| {
        let n = id("g", next);
        add(g, &n, format!("{} {}", word(next), level), CONCEPT_CLASS);
        next += 1;
        n
    };
    for levels in by_level.iter_mut() {
        let root = fresh(&mut g, 1);
        g.add_root(&root).expect("fixture root");
        levels[0].push(root);
        for l in 1..depth as usize {
            let n = fresh(&mut g, l as u32 + 1);
            link(&mut g, &levels[l - 1][0], &n);
            levels[l].push(n);
        }
    }
    while g.len() < nodes {
        let r = rng.random_range(0..n_roots);
        let l = rng.random_range(1..depth as usize);
        let parent = by_level[r][l - 1].choose(&mut rng).expect("chain").clone();
        let n = fresh(&mut g, l as u32 + 1);
        link(&mut g, &parent, &n);
        if l >= 2 && by_level[r][l - 1].len() > 1 && rng.random_bool(0.1) {
            let other = by_level[r][l - 1].choose(&mut rng).expect("level").clone();
            if other != parent {
                link(&mut g, &other, &n);
            }
        }
        by_level[r][l].push(n);
    }
    g
}

/// Fixture used by the strategy comparison: depth 5, 200 nodes.
pub fn experiment_gold() -> Hierarchy {
    synthetic_gold(5, 200, 5200)
}

/// `gold` with every non-root edge removed: what generation starts from.
pub fn roots_only(gold: &Hierarchy) -> Hierarchy {
    let mut g = gold.clone();
    for e in gold.edges() {
        g.remove_edge(&e.parent, &e.child);
    }
    g
}

/// One candidate set per root: every other node of that root's subtree, in
/// id order.
pub fn gold_candidate_sets(gold: &Hierarchy) -> Vec<CandidateSet> {
    gold.roots()
        .map(|r| CandidateSet::new(r.clone(), gold.descendants(r).expect("root")))
        .collect()
}

/// Gold edges inside the subtree of `root`.
pub fn gold_edges(gold: &Hierarchy, root: &NodeId) -> BTreeSet<(NodeId, NodeId)> {
    let mut inside = gold.descendants(root).expect("root");
    inside.insert(root.clone());
    gold.edges()
        .filter(|e| inside.contains(&e.child))
        .map(|e| (e.parent, e.child))
        .collect()
}

/// Labels that are prefixes and extensions of one another.
pub fn label_prefix_gold() -> Hierarchy {
    let mut g = Hierarchy::for_class(CONCEPT_CLASS);
    let nodes = [
        ("p0", "Card"),
        ("p1", "card design"),
        ("p2", "birthday card"),
        ("p3", "birthday card design"),
        ("p4", "card designer"),
        ("p5", "birthday"),
        ("p6", "birthday card design template"),
        ("p7", "design"),
        ("p8", "card design template"),
    ];
    for (i, l) in nodes {
        add(&mut g, &i.into(), l.to_string(), CONCEPT_CLASS);
    }
    g.add_root(&"p0".into()).expect("root");
    for (p, c) in [
        ("p0", "p1"),
        ("p0", "p2"),
        ("p0", "p5"),
        ("p0", "p7"),
        ("p1", "p4"),
        ("p1", "p8"),
        ("p2", "p3"),
        ("p5", "p3"),
        ("p3", "p6"),
        ("p8", "p6"),
    ] {
        link(&mut g, &p.into(), &c.into());
    }
    g
}

/// The relationships category: love -> mom dad, marriage -> romantic
/// message, plus unplaced wedding and anniversary.
pub fn relationships() -> Hierarchy {
    let mut g = Hierarchy::for_class(INTENT_CLASS);
    for (i, l) in [
        ("rel", "Relationships"),
        ("love", "love"),
        ("marriage", "marriage"),
        ("momdad", "mom dad"),
        ("romantic", "romantic message"),
        ("wedding", "wedding"),
        ("anniv", "anniversary"),
    ] {
        add(&mut g, &i.into(), l.to_string(), INTENT_CLASS);
    }
    g.add_root(&"rel".into()).expect("root");
    for (p, c) in [
        ("rel", "love"),
        ("rel", "marriage"),
        ("love", "momdad"),
        ("marriage", "romantic"),
    ] {
        link(&mut g, &p.into(), &c.into());
    }
    g
}

/// Classification fixture: a gold graph whose roots are the categories,
/// plus the category set, a few worked examples and the gold labels.
#[derive(Debug, Clone)]
pub struct ClassificationFixture {
    pub gold: Hierarchy,
    pub categories: CategorySet,
    pub examples: Vec<FewShotExample>,
    pub nodes: Vec<NodeId>,
    pub expected: BTreeMap<NodeId, BTreeSet<String>>,
}

const CLASS_ROOTS: [&str; 5] = ["Travel", "Celebrations", "Beauty and Wellness", "Food and Drink", "Business"];

/// `n` intent nodes under five categories; every seventh node belongs to two.
pub fn classification_fixture(n: usize) -> ClassificationFixture {
    let mut gold = Hierarchy::for_class(INTENT_CLASS);
    let roots: Vec<NodeId> = (0..CLASS_ROOTS.len()).map(|i| id("k", i)).collect();
    for (r, l) in roots.iter().zip(CLASS_ROOTS) {
        add(&mut gold, r, l.to_string(), INTENT_CLASS);
        gold.add_root(r).expect("root");
    }
    let mut nodes = Vec::with_capacity(n);
    let mut expected = BTreeMap::new();
    for i in 0..n {
        let node = id("q", i);
        let first = i % roots.len();
        add(&mut gold, &node, format!("{} {}", word(i + 40), word(i * 3 + 7)), INTENT_CLASS);
        link(&mut gold, &roots[first], &node);
        let mut cats = BTreeSet::from([CLASS_ROOTS[first].to_string()]);
        if i % 7 == 3 {
            let second = (first + 2) % roots.len();
            link(&mut gold, &roots[second], &node);
            cats.insert(CLASS_ROOTS[second].to_string());
        }
        expected.insert(node.clone(), cats);
        nodes.push(node);
    }
    let examples = vec![
        FewShotExample {
            label: "book a beach hotel".into(),
            categories: BTreeSet::from(["Travel".to_string()]),
        },
        FewShotExample {
            label: "birthday party invitation".into(),
            categories: BTreeSet::from(["Celebrations".to_string()]),
        },
        FewShotExample {
            label: "quantum chromodynamics".into(),
            categories: BTreeSet::from([crate::provider::parse::OTHER.to_string()]),
        },
    ];
    ClassificationFixture {
        gold,
        categories: CategorySet::new(CLASS_ROOTS, INTENT_CLASS).expect("categories"),
        examples,
        nodes,
        expected,
    }
}
