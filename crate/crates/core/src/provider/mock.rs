//! Deterministic, fixture-backed stand-in for the completion model.
//!
//! The oracle answers every task from a gold taxonomy. Each response element
//! (one node's answer) is corrupted independently with probability `noise_rate`,
//! using a generator seeded from `(seed, request hash, element label)`. The
//! same request therefore always yields the same text, independent of call
//! order or concurrency.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::parse::{hierarchy_to_json, OTHER};
use super::{CompletionProvider, CompletionResponse, ProviderError, PromptRequest, TaskInput};
use crate::graph::{normalize_label, Hierarchy, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Categorical answers (L1 category, keep/defer, subtree choice) are
    /// replaced by a different allowed answer. Parent choices are rewired.
    #[default]
    WrongCategory,
    /// Parent choices are rewired to a random known node. Categorical answers
    /// are replaced as for `WrongCategory`.
    SpuriousParent,
    /// The element is omitted from the response.
    DropNode,
}

fn default_budget() -> usize {
    super::DEFAULT_CONTEXT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockOracleConfig {
    #[serde(default)]
    pub noise_rate: f64,
    /// Noise used for zero-shot classification requests; defaults to `noise_rate`.
    #[serde(default)]
    pub zero_shot_noise_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub corruption_mode: CorruptionMode,
    /// Requests whose L1 root or category list mentions one of these labels
    /// fail with `ProviderUnavailable`.
    #[serde(default)]
    pub fail_on: BTreeSet<String>,
    #[serde(default = "default_budget")]
    pub context_budget_tokens: usize,
}

impl Default for MockOracleConfig {
    fn default() -> Self {
        Self {
            noise_rate: 0.0,
            zero_shot_noise_rate: None,
            seed: 0,
            corruption_mode: CorruptionMode::default(),
            fail_on: BTreeSet::new(),
            context_budget_tokens: default_budget(),
        }
    }
}

impl MockOracleConfig {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn noisy(noise_rate: f64, seed: u64, corruption_mode: CorruptionMode) -> Self {
        Self {
            noise_rate,
            seed,
            corruption_mode,
            ..Self::default()
        }
    }
}

pub struct MockOracle {
    gold: Hierarchy,
    config: MockOracleConfig,
    by_label: HashMap<String, NodeId>,
    fail_on: HashSet<String>,
}

impl std::fmt::Debug for MockOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockOracle")
            .field("gold_nodes", &self.gold.len())
            .field("config", &self.config)
            .finish()
    }
}

impl MockOracle {
    pub fn new(gold: Hierarchy, config: MockOracleConfig) -> Self {
        let mut by_label = HashMap::with_capacity(gold.len());
        for n in gold.nodes() {
            by_label
                .entry(n.normalized_label().to_string())
                .or_insert_with(|| n.id().clone());
        }
        let fail_on = config.fail_on.iter().map(|l| normalize_label(l)).collect();
        Self {
            gold,
            config,
            by_label,
            fail_on,
        }
    }

    pub fn config(&self) -> &MockOracleConfig {
        &self.config
    }

    pub fn gold(&self) -> &Hierarchy {
        &self.gold
    }

    fn id(&self, label: &str) -> Option<&NodeId> {
        self.by_label.get(&normalize_label(label))
    }

    fn element_rng(&self, request_hash: &str, element: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(request_hash.as_bytes());
        h.update([0u8]);
        h.update(element.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(seed)
    }

    fn corrupted(rng: &mut ChaCha8Rng, rate: f64) -> bool {
        rate > 0.0 && rng.random::<f64>() < rate
    }

    fn gold_parents(&self, id: &NodeId) -> Vec<&NodeId> {
        self.gold.parents(id).unwrap_or_default()
    }

    fn gold_roots_of(&self, id: &NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut seen = HashSet::new();
        let mut stack = vec![id.clone()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                continue;
            }
            if self.gold.is_root(&n) {
                out.insert(n.clone());
            }
            for p in self.gold_parents(&n) {
                stack.push(p.clone());
            }
        }
        out
    }

    fn proper_ancestor(&self, a: &NodeId, n: &NodeId) -> bool {
        a != n && self.gold.is_ancestor(a, n).unwrap_or(false)
    }

    /// Gold parents of `id` that are among `known`; failing that, the nearest
    /// known gold ancestors, found layer by layer upwards.
    fn nearest_known_parents(&self, id: &NodeId, known: &HashMap<NodeId, String>) -> Vec<NodeId> {
        let mut frontier: Vec<NodeId> = self.gold_parents(id).into_iter().cloned().collect();
        let mut seen: HashSet<NodeId> = frontier.iter().cloned().collect();
        while !frontier.is_empty() {
            let hits: Vec<NodeId> = frontier
                .iter()
                .filter(|p| known.contains_key(*p))
                .cloned()
                .collect();
            if !hits.is_empty() {
                return hits;
            }
            let mut next = Vec::new();
            for p in &frontier {
                for gp in self.gold_parents(p) {
                    if seen.insert(gp.clone()) {
                        next.push(gp.clone());
                    }
                }
            }
            frontier = next;
        }
        Vec::new()
    }

    fn should_fail(&self, labels: &[&str]) -> bool {
        !self.fail_on.is_empty()
            && labels
                .iter()
                .any(|l| self.fail_on.contains(&normalize_label(l)))
    }

    fn classify(&self, hash: &str, labels: &[String], categories: &[String], zero_shot: bool) -> Value {
        let rate = if zero_shot {
            self.config.zero_shot_noise_rate.unwrap_or(self.config.noise_rate)
        } else {
            self.config.noise_rate
        };
        let cat_by_norm: HashMap<String, &String> =
            categories.iter().map(|c| (normalize_label(c), c)).collect();
        let mut allowed: Vec<&str> = categories.iter().map(String::as_str).collect();
        allowed.push(OTHER);
        let mut out = Map::new();
        for label in labels {
            let mut gold: BTreeSet<&str> = BTreeSet::new();
            if let Some(id) = self.id(label) {
                for root in self.gold_roots_of(id) {
                    let root_label = self.gold.node(&root).unwrap().normalized_label();
                    if let Some(c) = cat_by_norm.get(root_label) {
                        gold.insert(c.as_str());
                    }
                }
            }
            if gold.is_empty() {
                gold.insert(OTHER);
            }
            let mut rng = self.element_rng(hash, label);
            let answer: Vec<&str> = if Self::corrupted(&mut rng, rate) {
                if self.config.corruption_mode == CorruptionMode::DropNode {
                    continue;
                }
                let wrong: Vec<&str> = allowed.iter().copied().filter(|c| !gold.contains(c)).collect();
                match wrong.choose(&mut rng) {
                    Some(c) => vec![*c],
                    None => gold.into_iter().collect(),
                }
            } else {
                gold.into_iter().collect()
            };
            out.insert(label.clone(), json!(answer));
        }
        Value::Object(out)
    }

    fn membership(&self, hash: &str, parent: &str, candidates: &[String]) -> Value {
        let parent_id = self.id(parent);
        let mut out = Map::new();
        for label in candidates {
            let keep = match (parent_id, self.id(label)) {
                (Some(p), Some(c)) => self.gold_parents(c).contains(&p),
                _ => false,
            };
            let mut rng = self.element_rng(hash, label);
            let keep = if Self::corrupted(&mut rng, self.config.noise_rate) {
                if self.config.corruption_mode == CorruptionMode::DropNode {
                    continue;
                }
                !keep
            } else {
                keep
            };
            out.insert(label.clone(), json!(if keep { "keep" } else { "defer" }));
        }
        Value::Object(out)
    }

    fn placement(&self, hash: &str, subtrees: &[String], candidates: &[String]) -> Value {
        let subtree_ids: Vec<(&String, Option<&NodeId>)> =
            subtrees.iter().map(|s| (s, self.id(s))).collect();
        let mut options: Vec<&str> = subtrees.iter().map(String::as_str).collect();
        options.push(OTHER);
        let mut out = Map::new();
        for label in candidates {
            let mut gold: Vec<&str> = Vec::new();
            if let Some(c) = self.id(label) {
                for (s, sid) in &subtree_ids {
                    if sid.is_some_and(|sid| self.proper_ancestor(sid, c)) {
                        gold.push(s.as_str());
                    }
                }
            }
            if gold.is_empty() {
                gold.push(OTHER);
            }
            let mut rng = self.element_rng(hash, label);
            let answer = if Self::corrupted(&mut rng, self.config.noise_rate) {
                if self.config.corruption_mode == CorruptionMode::DropNode {
                    continue;
                }
                let wrong: Vec<&str> = options.iter().copied().filter(|o| !gold.contains(o)).collect();
                match wrong.choose(&mut rng) {
                    Some(o) => vec![*o],
                    None => gold,
                }
            } else {
                gold
            };
            out.insert(label.clone(), json!(answer));
        }
        Value::Object(out)
    }

    fn generate(&self, hash: &str, root: &str, existing: &[(String, String)], candidates: &[String]) -> Value {
        // known node id -> label as spelled in the request
        let mut known: HashMap<NodeId, String> = HashMap::new();
        let mut known_labels: BTreeSet<String> = BTreeSet::new();
        let mut note = |label: &String, known: &mut HashMap<NodeId, String>| {
            known_labels.insert(label.clone());
            if let Some(id) = self.id(label) {
                known.entry(id.clone()).or_insert_with(|| label.clone());
            }
        };
        note(&root.to_string(), &mut known);
        for (p, c) in existing {
            note(p, &mut known);
            note(c, &mut known);
        }
        for c in candidates {
            note(c, &mut known);
        }
        let pool: Vec<&String> = known_labels.iter().collect();

        // candidates are placed afresh; only the rest of the structure is echoed
        let fresh: HashSet<&str> = candidates.iter().map(String::as_str).collect();
        let mut edges: Vec<(String, String)> = existing
            .iter()
            .filter(|(_, c)| !fresh.contains(c.as_str()))
            .cloned()
            .collect();
        for label in candidates {
            let Some(id) = self.id(label) else { continue };
            let mut parents: Vec<String> = self
                .nearest_known_parents(id, &known)
                .iter()
                .map(|p| known[p].clone())
                .collect();
            parents.sort();
            let mut rng = self.element_rng(hash, label);
            if Self::corrupted(&mut rng, self.config.noise_rate) {
                if self.config.corruption_mode == CorruptionMode::DropNode {
                    continue;
                }
                let others: Vec<&&String> = pool.iter().filter(|l| **l != label).collect();
                if let Some(new_parent) = others.choose(&mut rng) {
                    if parents.is_empty() {
                        parents.push((**new_parent).clone());
                    } else {
                        let slot = rng.random_range(0..parents.len());
                        parents[slot] = (**new_parent).clone();
                    }
                }
            }
            for p in parents {
                edges.push((p, label.clone()));
            }
        }
        hierarchy_to_json(&[root.to_string()], &edges)
    }

    fn findings(&self, hash: &str, roots: &[String], edges: &[(String, String)]) -> Vec<Value> {
        let mut present: BTreeSet<&str> = roots.iter().map(String::as_str).collect();
        for (p, c) in edges {
            present.insert(p);
            present.insert(c);
        }
        let present_ids: HashMap<NodeId, &str> = present
            .iter()
            .filter_map(|l| self.id(l).map(|id| (id.clone(), *l)))
            .collect();
        let pool: Vec<&str> = present.iter().copied().collect();
        let mut out = Vec::new();
        for (p_label, c_label) in edges {
            let (Some(p), Some(c)) = (self.id(p_label), self.id(c_label)) else {
                continue;
            };
            let gold_parents = self.gold_parents(c);
            if gold_parents.contains(&p) {
                continue;
            }
            let mut suggested: Vec<&str> = gold_parents
                .iter()
                .filter_map(|gp| present_ids.get(*gp).copied())
                .collect();
            suggested.sort_unstable();
            let shares_parent = self
                .gold_parents(p)
                .iter()
                .any(|pp| gold_parents.contains(pp));
            let kind = if shares_parent || self.proper_ancestor(c, p) {
                "sibling_confusion"
            } else if self.proper_ancestor(p, c) {
                "level_misplacement"
            } else {
                "wrong_parent"
            };
            let mut suggested = suggested.first().map(|s| s.to_string());
            let mut rng = self.element_rng(hash, &format!("{p_label}\u{1f}{c_label}"));
            if Self::corrupted(&mut rng, self.config.noise_rate) {
                if self.config.corruption_mode == CorruptionMode::DropNode {
                    continue;
                }
                suggested = pool.choose(&mut rng).map(|s| s.to_string());
            }
            let rationale = match &suggested {
                Some(s) => format!("{c_label:?} is more specific to {s:?} than to {p_label:?}"),
                None => format!("{c_label:?} does not belong under {p_label:?}"),
            };
            out.push(json!({
                "kind": kind,
                "node": c_label,
                "current_parent": p_label,
                "suggested_parent": suggested,
                "rationale": rationale,
            }));
        }
        out
    }

    fn answer(&self, request: &PromptRequest) -> Result<Value, ProviderError> {
        let hash = request.hash();
        let unavailable = || ProviderError::ProviderUnavailable {
            attempts: 1,
            reason: "mock configured to fail for this category".into(),
        };
        let value = match &request.task {
            TaskInput::Classify {
                labels,
                categories,
                zero_shot,
            } => {
                let cats: Vec<&str> = categories.iter().map(String::as_str).collect();
                if self.should_fail(&cats) {
                    return Err(unavailable());
                }
                self.classify(&hash, labels, categories, *zero_shot)
            }
            TaskInput::LevelMembership {
                root,
                parent,
                candidates,
                ..
            } => {
                if self.should_fail(&[root]) {
                    return Err(unavailable());
                }
                self.membership(&hash, parent, candidates)
            }
            TaskInput::Placement {
                root,
                subtrees,
                candidates,
                ..
            } => {
                if self.should_fail(&[root]) {
                    return Err(unavailable());
                }
                self.placement(&hash, subtrees, candidates)
            }
            TaskInput::Generate {
                root,
                existing,
                candidates,
                ..
            } => {
                if self.should_fail(&[root]) {
                    return Err(unavailable());
                }
                self.generate(&hash, root, existing, candidates)
            }
            TaskInput::Review { roots, edges } => {
                let rs: Vec<&str> = roots.iter().map(String::as_str).collect();
                if self.should_fail(&rs) {
                    return Err(unavailable());
                }
                json!({ "findings": self.findings(&hash, roots, edges) })
            }
            TaskInput::Evaluate { root, edges } => {
                if self.should_fail(&[root]) {
                    return Err(unavailable());
                }
                let findings = self.findings(&hash, std::slice::from_ref(root), edges);
                json!({ "approved": findings.is_empty(), "findings": findings })
            }
            TaskInput::Freeform => json!({}),
        };
        Ok(value)
    }
}

impl CompletionProvider for MockOracle {
    fn context_budget(&self) -> usize {
        self.config.context_budget_tokens
    }

    fn send(&self, request: &PromptRequest) -> Result<CompletionResponse, ProviderError> {
        let value = self.answer(request)?;
        let mut response = CompletionResponse::complete(value.to_string());
        response
            .provider_metadata
            .insert("provider".into(), "mock-oracle".into());
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, Provenance};
    use crate::provider::parse::{parse_classification, parse_hierarchy};
    use crate::provider::complete;

    fn gold() -> Hierarchy {
        let mut g = Hierarchy::for_class("intent");
        for (id, label) in [
            ("bw", "Beauty and Wellness"),
            ("cel", "Celebrations"),
            ("lip", "lipstick"),
            ("mk", "makeup"),
            ("bday", "birthday"),
        ] {
            g.add_node(Node::new(id.into(), label, "intent").unwrap()).unwrap();
        }
        g.add_root(&"bw".into()).unwrap();
        g.add_root(&"cel".into()).unwrap();
        g.add_edge(&"bw".into(), &"mk".into(), Provenance::Preexisting).unwrap();
        g.add_edge(&"mk".into(), &"lip".into(), Provenance::Preexisting).unwrap();
        g.add_edge(&"cel".into(), &"bday".into(), Provenance::Preexisting).unwrap();
        g
    }

    fn classify_request(labels: &[&str]) -> PromptRequest {
        PromptRequest::new(
            "classify",
            "payload",
            TaskInput::Classify {
                labels: labels.iter().map(|s| s.to_string()).collect(),
                categories: vec!["Beauty and Wellness".into(), "Celebrations".into(), "Travel".into()],
                zero_shot: false,
            },
        )
    }

    fn allowed() -> BTreeSet<String> {
        ["Beauty and Wellness", "Celebrations", "Travel", OTHER]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn noiseless_classification_names_gold_category() {
        let mock = MockOracle::new(gold(), MockOracleConfig::noiseless(1));
        let resp = complete(&mock, &classify_request(&["lipstick", "unheard of"])).unwrap();
        let parsed = parse_classification(resp.text(), &allowed()).unwrap();
        assert_eq!(
            parsed["lipstick"],
            BTreeSet::from(["Beauty and Wellness".to_string()])
        );
        assert_eq!(parsed["unheard of"], BTreeSet::from([OTHER.to_string()]));
    }

    #[test]
    fn same_seed_same_text() {
        let cfg = MockOracleConfig::noisy(0.5, 9, CorruptionMode::WrongCategory);
        let a = MockOracle::new(gold(), cfg.clone());
        let b = MockOracle::new(gold(), cfg);
        let req = classify_request(&["lipstick", "birthday", "makeup"]);
        assert_eq!(
            complete(&a, &req).unwrap().raw_text,
            complete(&b, &req).unwrap().raw_text
        );
    }

    #[test]
    fn full_noise_always_wrong() {
        let mock = MockOracle::new(
            gold(),
            MockOracleConfig::noisy(1.0, 3, CorruptionMode::WrongCategory),
        );
        let resp = complete(&mock, &classify_request(&["lipstick"])).unwrap();
        let parsed = parse_classification(resp.text(), &allowed()).unwrap();
        assert!(!parsed["lipstick"].contains("Beauty and Wellness"));
        assert_eq!(parsed["lipstick"].len(), 1);
    }

    #[test]
    fn drop_mode_omits_elements() {
        let mock = MockOracle::new(gold(), MockOracleConfig::noisy(1.0, 3, CorruptionMode::DropNode));
        let resp = complete(&mock, &classify_request(&["lipstick"])).unwrap();
        assert_eq!(resp.text(), "{}");
    }

    #[test]
    fn generation_reproduces_gold_edges() {
        let mock = MockOracle::new(gold(), MockOracleConfig::noiseless(0));
        let req = PromptRequest::new(
            "generate",
            "payload",
            TaskInput::Generate {
                root: "Beauty and Wellness".into(),
                existing: vec![],
                candidates: vec!["lipstick".into(), "makeup".into()],
                correction: false,
            },
        );
        let resp = complete(&mock, &req).unwrap();
        let known = ["Beauty and Wellness", "lipstick", "makeup"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let parsed = parse_hierarchy(resp.text(), &known).unwrap();
        let edges: BTreeSet<_> = parsed.edges.into_iter().collect();
        assert_eq!(
            edges,
            BTreeSet::from([
                ("Beauty and Wellness".to_string(), "makeup".to_string()),
                ("makeup".to_string(), "lipstick".to_string()),
            ])
        );
    }

    #[test]
    fn generation_falls_back_to_nearest_known_ancestor() {
        let mock = MockOracle::new(gold(), MockOracleConfig::noiseless(0));
        let req = PromptRequest::new(
            "generate",
            "payload",
            TaskInput::Generate {
                root: "Beauty and Wellness".into(),
                existing: vec![],
                candidates: vec!["lipstick".into()],
                correction: false,
            },
        );
        let resp = complete(&mock, &req).unwrap();
        assert_eq!(resp.text(), r#"{"Beauty and Wellness":{"lipstick":{}}}"#);
    }

    #[test]
    fn fail_on_category_is_unavailable() {
        let mut cfg = MockOracleConfig::noiseless(0);
        cfg.fail_on.insert("Celebrations".into());
        let mock = MockOracle::new(gold(), cfg);
        let req = PromptRequest::new(
            "generate",
            "payload",
            TaskInput::Generate {
                root: "Celebrations".into(),
                existing: vec![],
                candidates: vec!["birthday".into()],
                correction: false,
            },
        );
        assert!(matches!(
            complete(&mock, &req),
            Err(ProviderError::ProviderUnavailable { .. })
        ));
    }
}
