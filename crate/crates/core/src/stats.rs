//! Coverage and per-level statistics, review sampling and relevance
//! aggregation, plus edge-accuracy measures used by the experiment harness.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{Hierarchy, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("node class {class:?} differs between graphs: {before} nodes before, {after} after")]
    ClassMismatch {
        class: String,
        before: usize,
        after: usize,
    },
    #[error("no review outcomes recorded")]
    NoOutcomes,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// How a node that occurs at several depths is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelCounting {
    /// Once, at its shortest-path level. Bucket totals equal node counts.
    Minimal,
    /// Once per distinct (bucketed) depth over all root paths.
    Occurrence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelBucket {
    pub level: u32,
    /// Set on the last bucket, which also holds every deeper level.
    pub or_deeper: bool,
    pub count: usize,
}

impl LevelBucket {
    pub fn name(&self) -> String {
        if self.or_deeper {
            format!("{}+", self.level)
        } else {
            self.level.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelHistogram {
    pub counting: LevelCounting,
    pub collapse_at: u32,
    /// Buckets `1..=collapse_at`, empty ones included.
    pub buckets: Vec<LevelBucket>,
}

impl LevelHistogram {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.count).sum()
    }

    pub fn count(&self, level: u32) -> usize {
        self.buckets
            .iter()
            .find(|b| b.level == level.min(self.collapse_at))
            .map_or(0, |b| b.count)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.count).collect()
    }

    /// Buckets with a non-zero count, as `(name, count)`.
    pub fn non_empty(&self) -> Vec<(String, usize)> {
        self.buckets
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.name(), b.count))
            .collect()
    }
}

fn histogram<'a>(
    graph: &Hierarchy,
    collapse_at: u32,
    counting: LevelCounting,
    include: impl Fn(&NodeId) -> bool + 'a,
) -> Result<LevelHistogram, StatsError> {
    if collapse_at < 2 {
        return Err(StatsError::Precondition("collapse_at must be at least 2".into()));
    }
    let mut counts = vec![0usize; collapse_at as usize + 1];
    match counting {
        LevelCounting::Minimal => {
            for (id, level) in graph.levels() {
                if include(&id) {
                    counts[level.get().min(collapse_at) as usize] += 1;
                }
            }
        }
        LevelCounting::Occurrence => {
            for (id, depths) in graph.depth_occurrences(collapse_at) {
                if include(&id) {
                    for d in depths {
                        counts[d as usize] += 1;
                    }
                }
            }
        }
    }
    let buckets = (1..=collapse_at)
        .map(|level| LevelBucket {
            level,
            or_deeper: level == collapse_at,
            count: counts[level as usize],
        })
        .collect();
    Ok(LevelHistogram {
        counting,
        collapse_at,
        buckets,
    })
}

/// Per-level node counts with every level at or below `collapse_at` merged
/// into one bucket.
pub fn level_histogram(
    graph: &Hierarchy,
    collapse_at: u32,
    counting: LevelCounting,
) -> Result<LevelHistogram, StatsError> {
    histogram(graph, collapse_at, counting, |_| true)
}

/// Depth from which the report's histograms are collapsed.
pub const REPORT_COLLAPSE_AT: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub node_class: String,
    pub total_nodes: usize,
    pub in_hierarchy_before: usize,
    pub in_hierarchy_after: usize,
    /// Each node once, at its minimal level. Sums to `in_hierarchy_after`.
    pub per_level_counts: LevelHistogram,
    /// Each node once per distinct depth it occupies.
    pub level_occurrences: LevelHistogram,
    pub coverage_fraction: f64,
    pub coverage_before_fraction: f64,
    /// `(after - before) / total`.
    pub coverage_increase: f64,
}

fn class_ids(graph: &Hierarchy, class: &str) -> BTreeSet<NodeId> {
    graph
        .nodes()
        .filter(|n| n.node_class() == class)
        .map(|n| n.id().clone())
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Before/after coverage of `node_class`. Both graphs must hold the same
/// population of that class.
pub fn coverage_report(before: &Hierarchy, after: &Hierarchy, node_class: &str) -> Result<CoverageReport, StatsError> {
    let population = class_ids(after, node_class);
    let before_population = class_ids(before, node_class);
    if population != before_population {
        return Err(StatsError::ClassMismatch {
            class: node_class.to_string(),
            before: before_population.len(),
            after: population.len(),
        });
    }
    let count_in = |g: &Hierarchy| {
        g.in_hierarchy_nodes()
            .iter()
            .filter(|id| population.contains(*id))
            .count()
    };
    let in_before = count_in(before);
    let in_after = count_in(after);
    let member = |id: &NodeId| population.contains(id);
    let total = population.len();
    Ok(CoverageReport {
        node_class: node_class.to_string(),
        total_nodes: total,
        in_hierarchy_before: in_before,
        in_hierarchy_after: in_after,
        per_level_counts: histogram(after, REPORT_COLLAPSE_AT, LevelCounting::Minimal, member)?,
        level_occurrences: histogram(after, REPORT_COLLAPSE_AT, LevelCounting::Occurrence, member)?,
        coverage_fraction: ratio(in_after, total),
        coverage_before_fraction: ratio(in_before, total),
        coverage_increase: if total == 0 {
            0.0
        } else {
            (in_after as f64 - in_before as f64) / total as f64
        },
    })
}

/// Fixed-width text table, one row per report.
pub fn render_coverage_table(reports: &[CoverageReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>7} {:>7} {:>7} {:>9} {:>9}  {:<9} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "class", "total", "before", "after", "coverage", "increase", "levels", "L1", "L2", "L3", "L4", "lower"
    );
    for r in reports {
        for (name, h) in [("paths", &r.level_occurrences), ("minimal", &r.per_level_counts)] {
            let cells: Vec<String> = h.counts().iter().map(|c| format!("{c:>6}")).collect();
            if name == "paths" {
                let _ = write!(
                    out,
                    "{:<10} {:>7} {:>7} {:>7} {:>8.2}% {:>8.2}%  ",
                    r.node_class,
                    r.total_nodes,
                    r.in_hierarchy_before,
                    r.in_hierarchy_after,
                    100.0 * r.coverage_fraction,
                    100.0 * r.coverage_increase
                );
            } else {
                let _ = write!(out, "{:<10} {:>7} {:>7} {:>7} {:>9} {:>9}  ", "", "", "", "", "", "");
            }
            let _ = writeln!(out, "{:<9} {}", name, cells.join(" "));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewOutcome {
    Relevant,
    Misplaced,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub subtree_root: NodeId,
    pub nodes: Vec<NodeId>,
    #[serde(default)]
    pub assigned_reviewer: Option<String>,
    #[serde(default)]
    pub outcomes: BTreeMap<NodeId, ReviewOutcome>,
}

impl ReviewSample {
    /// Records an outcome; nodes outside the sample are refused.
    pub fn record(&mut self, node: &NodeId, outcome: ReviewOutcome) -> bool {
        if !self.nodes.contains(node) {
            return false;
        }
        self.outcomes.insert(node.clone(), outcome);
        true
    }
}

/// Shortest-path depth of every node below `root`, 1 for the root.
fn depths_from(graph: &Hierarchy, root: &NodeId) -> BTreeMap<NodeId, u32> {
    let mut depth = BTreeMap::new();
    depth.insert(root.clone(), 1);
    let mut queue = VecDeque::from([root.clone()]);
    while let Some(n) = queue.pop_front() {
        let d = depth[&n];
        for c in graph.children(&n).unwrap_or_default() {
            if !depth.contains_key(c) {
                depth.insert(c.clone(), d + 1);
                queue.push_back(c.clone());
            }
        }
    }
    depth
}

fn root_rng(seed: u64, root: &NodeId) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(root.as_str().as_bytes());
    let mut s = [0u8; 32];
    s.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(s)
}

/// Seeded stratified sample, one [`ReviewSample`] per L1 category. Strata
/// are (category, depth within that category); each contributes
/// `round(rate * size)` nodes, and every category contributes at least one.
pub fn sample_for_review(graph: &Hierarchy, rate: f64, seed: u64) -> Result<Vec<ReviewSample>, StatsError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(StatsError::Precondition(format!("rate {rate} outside (0, 1]")));
    }
    let mut out = Vec::new();
    for root in graph.roots() {
        let mut strata: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
        for (id, d) in depths_from(graph, root) {
            strata.entry(d).or_default().push(id);
        }
        let mut rng = root_rng(seed, root);
        let mut picked: Vec<NodeId> = Vec::new();
        for members in strata.values_mut() {
            let k = (rate * members.len() as f64).round() as usize;
            members.shuffle(&mut rng);
            picked.extend(members.iter().take(k).cloned());
        }
        if picked.is_empty() {
            let largest = strata.values().max_by_key(|m| m.len()).expect("root stratum");
            picked.push(largest[0].clone());
        }
        out.push(ReviewSample {
            subtree_root: root.clone(),
            nodes: picked,
            assigned_reviewer: None,
            outcomes: BTreeMap::new(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceCounts {
    pub relevant: usize,
    pub misplaced: usize,
    pub unresolved: usize,
    /// `relevant / (relevant + misplaced)`; absent when both are zero.
    pub relevant_fraction: Option<f64>,
}

impl RelevanceCounts {
    fn add(&mut self, o: ReviewOutcome) {
        match o {
            ReviewOutcome::Relevant => self.relevant += 1,
            ReviewOutcome::Misplaced => self.misplaced += 1,
            ReviewOutcome::Unsure => self.unresolved += 1,
        }
    }

    fn close(&mut self) {
        let decided = self.relevant + self.misplaced;
        self.relevant_fraction = (decided > 0).then(|| self.relevant as f64 / decided as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub overall: RelevanceCounts,
    pub by_category: BTreeMap<NodeId, RelevanceCounts>,
}

pub fn relevance_summary(samples: &[ReviewSample]) -> Result<RelevanceSummary, StatsError> {
    let mut overall = RelevanceCounts::default();
    let mut by_category: BTreeMap<NodeId, RelevanceCounts> = BTreeMap::new();
    for s in samples {
        for o in s.outcomes.values() {
            overall.add(*o);
            by_category.entry(s.subtree_root.clone()).or_default().add(*o);
        }
    }
    if overall.relevant + overall.misplaced + overall.unresolved == 0 {
        return Err(StatsError::NoOutcomes);
    }
    overall.close();
    by_category.values_mut().for_each(RelevanceCounts::close);
    Ok(RelevanceSummary { overall, by_category })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EdgeScore {
    fn new(gold: usize, predicted: usize, correct: usize) -> Self {
        // an empty prediction of an empty gold set is perfect
        let precision = if predicted == 0 { (gold == 0) as u8 as f64 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { (predicted == 0) as u8 as f64 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            gold,
            predicted,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

pub fn edge_score(predicted: &BTreeSet<(NodeId, NodeId)>, gold: &BTreeSet<(NodeId, NodeId)>) -> EdgeScore {
    EdgeScore::new(gold.len(), predicted.len(), predicted.intersection(gold).count())
}

/// Edge scores grouped by the gold level of the child. Predicted edges whose
/// child is outside the gold hierarchy are grouped under level 0.
pub fn edge_score_by_depth(
    predicted: &BTreeSet<(NodeId, NodeId)>,
    gold_edges: &BTreeSet<(NodeId, NodeId)>,
    gold: &Hierarchy,
) -> BTreeMap<u32, EdgeScore> {
    let levels: HashMap<NodeId, u32> = gold.levels().into_iter().map(|(k, v)| (k, v.get())).collect();
    let depth = |c: &NodeId| levels.get(c).copied().unwrap_or(0);
    let mut tallies: BTreeMap<u32, (usize, usize, usize)> = BTreeMap::new();
    for (_, c) in gold_edges {
        tallies.entry(depth(c)).or_default().0 += 1;
    }
    for e in predicted {
        let t = tallies.entry(depth(&e.1)).or_default();
        t.1 += 1;
        if gold_edges.contains(e) {
            t.2 += 1;
        }
    }
    tallies
        .into_iter()
        .map(|(d, (g, p, c))| (d, EdgeScore::new(g, p, c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, Provenance};

    fn chain(n: usize) -> Hierarchy {
        let mut g = Hierarchy::for_class("intent");
        for i in 0..n {
            g.add_node(Node::new(NodeId::new(format!("n{i}")).unwrap(), format!("n{i}"), "intent").unwrap())
                .unwrap();
        }
        g.add_root(&"n0".into()).unwrap();
        for i in 1..n {
            g.add_edge(
                &NodeId::new(format!("n{}", i - 1)).unwrap(),
                &NodeId::new(format!("n{i}")).unwrap(),
                Provenance::Preexisting,
            )
            .unwrap();
        }
        g
    }

    #[test]
    fn chain_of_seven_collapses_at_five() {
        let h = level_histogram(&chain(7), 5, LevelCounting::Minimal).unwrap();
        assert_eq!(h.counts(), [1, 1, 1, 1, 3]);
        assert_eq!(h.buckets[4].name(), "5+");
    }

    #[test]
    fn single_root_histogram() {
        let h = level_histogram(&chain(1), 5, LevelCounting::Minimal).unwrap();
        assert_eq!(h.non_empty(), [("1".to_string(), 1)]);
        assert!(level_histogram(&chain(1), 1, LevelCounting::Minimal).is_err());
    }

    #[test]
    fn occurrence_counts_each_depth_once() {
        let mut g = chain(4);
        g.add_edge(&"n0".into(), &"n3".into(), Provenance::Preexisting).unwrap();
        let min = level_histogram(&g, 5, LevelCounting::Minimal).unwrap();
        let occ = level_histogram(&g, 5, LevelCounting::Occurrence).unwrap();
        assert_eq!(min.counts(), [1, 2, 1, 0, 0]);
        assert_eq!(occ.counts(), [1, 2, 1, 1, 0]);
    }

    #[test]
    fn empty_graph_coverage_is_zero() {
        let g = Hierarchy::for_class("intent");
        let r = coverage_report(&g, &g, "intent").unwrap();
        assert_eq!((r.total_nodes, r.in_hierarchy_after), (0, 0));
        assert_eq!(r.coverage_fraction, 0.0);
        assert_eq!(r.per_level_counts.total(), 0);
    }

    #[test]
    fn class_mismatch() {
        let a = chain(3);
        let b = chain(4);
        assert!(matches!(
            coverage_report(&a, &b, "intent"),
            Err(StatsError::ClassMismatch { .. })
        ));
    }

    #[test]
    fn relevance_arithmetic() {
        let nodes: Vec<NodeId> = (0..21).map(|i| NodeId::new(format!("n{i}")).unwrap()).collect();
        let mut s = ReviewSample {
            subtree_root: "r".into(),
            nodes: nodes.clone(),
            assigned_reviewer: None,
            outcomes: BTreeMap::new(),
        };
        for n in &nodes[..19] {
            assert!(s.record(n, ReviewOutcome::Relevant));
        }
        s.record(&nodes[19], ReviewOutcome::Misplaced);
        s.record(&nodes[20], ReviewOutcome::Unsure);
        assert!(!s.record(&"elsewhere".into(), ReviewOutcome::Relevant));
        let sum = relevance_summary(&[s]).unwrap();
        assert_eq!(sum.overall.relevant_fraction, Some(0.95));
        assert_eq!(sum.overall.unresolved, 1);
    }

    #[test]
    fn all_unsure_has_no_fraction_and_empty_is_error() {
        let mut s = ReviewSample {
            subtree_root: "r".into(),
            nodes: vec!["a".into(), "b".into()],
            assigned_reviewer: None,
            outcomes: BTreeMap::new(),
        };
        assert_eq!(relevance_summary(&[s.clone()]), Err(StatsError::NoOutcomes));
        s.record(&"a".into(), ReviewOutcome::Unsure);
        s.record(&"b".into(), ReviewOutcome::Unsure);
        let sum = relevance_summary(&[s]).unwrap();
        assert_eq!(sum.overall.relevant_fraction, None);
        assert_eq!(sum.overall.unresolved, 2);
    }

    #[test]
    fn full_rate_samples_everything() {
        let g = chain(6);
        let s = sample_for_review(&g, 1.0, 3).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].nodes.len(), 6);
        assert_eq!(sample_for_review(&g, 0.3, 9).unwrap(), sample_for_review(&g, 0.3, 9).unwrap());
        assert_eq!(sample_for_review(&g, 0.01, 9).unwrap()[0].nodes.len(), 1);
        assert!(sample_for_review(&g, 0.0, 9).is_err());
    }

    #[test]
    fn edge_scores() {
        let e = |a: &str, b: &str| (NodeId::from(a), NodeId::from(b));
        let gold = BTreeSet::from([e("n0", "n1"), e("n1", "n2")]);
        let pred = BTreeSet::from([e("n0", "n1"), e("n0", "n2")]);
        let s = edge_score(&pred, &gold);
        assert_eq!((s.precision, s.recall), (0.5, 0.5));
        let by = edge_score_by_depth(&pred, &gold, &chain(3));
        assert_eq!(by[&2].f1, 1.0);
        assert_eq!(by[&3].correct, 0);
        assert_eq!(edge_score(&BTreeSet::new(), &BTreeSet::new()).f1, 1.0);
    }
}
