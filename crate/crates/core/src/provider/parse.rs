//! Strict structured-output parsing for model responses.
//!
//! The only accepted shape is a JSON dictionary. Surrounding prose is
//! tolerated: the first `{` that starts a complete JSON object marks the
//! outermost dictionary span.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::graph::normalize_label;

pub const OTHER: &str = "Other";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparseable output: {0}")]
    UnparseableOutput(String),
    #[error("category {category:?} assigned to {label:?} is not allowed")]
    IllegalCategory { label: String, category: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Locates the outermost JSON object in `raw`.
pub fn extract_object(raw: &str) -> Result<Map<String, Value>, ParseError> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Ok(map);
        }
    }
    let preview: String = raw.chars().take(80).collect();
    Err(ParseError::UnparseableOutput(format!(
        "no JSON dictionary found in {preview:?}"
    )))
}

/// Maps normalized spellings back to their canonical form; first spelling wins.
struct Vocabulary<'a> {
    canon: HashMap<String, &'a str>,
}

impl<'a> Vocabulary<'a> {
    fn new<I: IntoIterator<Item = &'a String>>(labels: I) -> Self {
        let mut canon = HashMap::new();
        for l in labels {
            canon.entry(normalize_label(l)).or_insert(l.as_str());
        }
        Self { canon }
    }

    fn lookup(&self, label: &str) -> Option<&'a str> {
        self.canon.get(&normalize_label(label)).copied()
    }
}

fn string_list(value: &Value) -> Option<Vec<String>> {
    match value {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect(),
        Value::Null => Some(Vec::new()),
        _ => None,
    }
}

/// Parses `{"node label": ["Category", ...], ...}`.
///
/// Every returned value is a non-empty subset of `allowed`, spelled as in
/// `allowed`. An empty assignment is read as `Other`.
pub fn parse_classification(
    raw: &str,
    allowed: &BTreeSet<String>,
) -> Result<BTreeMap<String, BTreeSet<String>>, ParseError> {
    if allowed.is_empty() || !allowed.iter().any(|c| c == OTHER) {
        return Err(ParseError::Precondition(
            "allowed categories must be non-empty and include Other".into(),
        ));
    }
    let vocab = Vocabulary::new(allowed);
    let map = extract_object(raw)?;
    let mut out = BTreeMap::new();
    for (label, value) in map {
        let cats = string_list(&value).ok_or_else(|| {
            ParseError::UnparseableOutput(format!("value for {label:?} is not a category list"))
        })?;
        let mut set = BTreeSet::new();
        for c in cats {
            match vocab.lookup(&c) {
                Some(canon) => {
                    set.insert(canon.to_string());
                }
                None => {
                    return Err(ParseError::IllegalCategory {
                        label,
                        category: c,
                    })
                }
            }
        }
        if set.is_empty() {
            set.insert(OTHER.to_string());
        }
        out.insert(label.trim().to_string(), set);
    }
    Ok(out)
}

/// Edges recovered from a nested-dictionary hierarchy response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedHierarchy {
    /// `(parent, child)` pairs in document order, deduplicated.
    pub edges: Vec<(String, String)>,
    /// Labels that were not among the known nodes, in order of appearance.
    pub rejected: Vec<String>,
}

/// Parses `{"Root": {"child": {"grandchild": {}}}}`. Leaf lists
/// (`{"Root": ["a", "b"]}`) and bare string children are accepted too.
/// Any edge touching an unknown label is dropped and the label reported.
pub fn parse_hierarchy(raw: &str, known: &BTreeSet<String>) -> Result<ParsedHierarchy, ParseError> {
    if known.is_empty() {
        return Err(ParseError::Precondition("known node set is empty".into()));
    }
    let vocab = Vocabulary::new(known);
    let map = extract_object(raw)?;
    let mut state = HierarchyWalk {
        vocab: &vocab,
        out: ParsedHierarchy::default(),
        seen_edges: HashSet::new(),
        seen_rejected: HashSet::new(),
    };
    for (label, value) in &map {
        let parent = state.resolve(label);
        state.walk(parent, value)?;
    }
    Ok(state.out)
}

struct HierarchyWalk<'v, 'a> {
    vocab: &'v Vocabulary<'a>,
    out: ParsedHierarchy,
    seen_edges: HashSet<(String, String)>,
    seen_rejected: HashSet<String>,
}

impl HierarchyWalk<'_, '_> {
    fn resolve(&mut self, label: &str) -> Option<String> {
        match self.vocab.lookup(label) {
            Some(c) => Some(c.to_string()),
            None => {
                let trimmed = label.trim().to_string();
                if self.seen_rejected.insert(trimmed.clone()) {
                    self.out.rejected.push(trimmed);
                }
                None
            }
        }
    }

    fn link(&mut self, parent: &Option<String>, child: &Option<String>) {
        if let (Some(p), Some(c)) = (parent, child) {
            if p != c && self.seen_edges.insert((p.clone(), c.clone())) {
                self.out.edges.push((p.clone(), c.clone()));
            }
        }
    }

    fn walk(&mut self, parent: Option<String>, value: &Value) -> Result<(), ParseError> {
        match value {
            Value::Object(children) => {
                for (label, sub) in children {
                    let child = self.resolve(label);
                    self.link(&parent, &child);
                    self.walk(child, sub)?;
                }
            }
            Value::Array(items) => {
                for item in items {
                    match item {
                        Value::String(s) => {
                            let child = self.resolve(s);
                            self.link(&parent, &child);
                        }
                        Value::Object(_) => self.walk(parent.clone(), item)?,
                        other => {
                            return Err(ParseError::UnparseableOutput(format!(
                                "unexpected list item {other}"
                            )))
                        }
                    }
                }
            }
            Value::String(s) if !s.trim().is_empty() => {
                let child = self.resolve(s);
                self.link(&parent, &child);
            }
            Value::String(_) | Value::Null => {}
            other => {
                return Err(ParseError::UnparseableOutput(format!(
                    "unexpected hierarchy value {other}"
                )))
            }
        }
        Ok(())
    }
}

/// Renders `(parent, child)` pairs as the nested-dictionary shape accepted by
/// [`parse_hierarchy`]. Each node's children are expanded at its first
/// occurrence only; later occurrences are empty leaves. Parentless nodes (and
/// anything stranded on a cycle) become top-level keys after `roots`.
pub fn hierarchy_to_json(roots: &[String], edges: &[(String, String)]) -> Value {
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut has_parent: HashSet<&str> = HashSet::new();
    let mut all: BTreeSet<&str> = BTreeSet::new();
    for (p, c) in edges {
        children.entry(p).or_default().push(c);
        has_parent.insert(c);
        all.insert(p);
        all.insert(c);
    }
    for kids in children.values_mut() {
        kids.sort_unstable();
        kids.dedup();
    }
    let mut expanded: HashSet<&str> = HashSet::new();
    let mut top = Map::new();
    let mut starts: Vec<&str> = roots.iter().map(String::as_str).collect();
    starts.extend(all.iter().filter(|n| !has_parent.contains(*n) && !roots.iter().any(|r| r == *n)));
    for s in starts {
        if !expanded.contains(s) {
            let v = expand(s, &children, &mut expanded);
            top.insert(s.to_string(), v);
        }
    }
    // nodes only reachable through a cycle
    for n in &all {
        if !expanded.contains(n) && children.contains_key(n) {
            let v = expand(n, &children, &mut expanded);
            top.insert(n.to_string(), v);
        }
    }
    Value::Object(top)
}

fn expand<'a>(
    node: &'a str,
    children: &BTreeMap<&'a str, Vec<&'a str>>,
    expanded: &mut HashSet<&'a str>,
) -> Value {
    expanded.insert(node);
    let mut map = Map::new();
    if let Some(kids) = children.get(node) {
        for &k in kids {
            let v = if expanded.contains(k) {
                Value::Object(Map::new())
            } else {
                expand(k, children, expanded)
            };
            map.insert(k.to_string(), v);
        }
    }
    Value::Object(map)
}

/// Parses keep/defer decisions: `{"label": "keep" | "defer" | true | false}`.
/// Labels outside `candidates` are ignored.
pub fn parse_membership(
    raw: &str,
    candidates: &BTreeSet<String>,
) -> Result<BTreeMap<String, bool>, ParseError> {
    let vocab = Vocabulary::new(candidates);
    let map = extract_object(raw)?;
    let mut out = BTreeMap::new();
    for (label, value) in map {
        let Some(canon) = vocab.lookup(&label) else {
            continue;
        };
        let keep = match &value {
            Value::Bool(b) => *b,
            Value::String(s) => match s.trim().to_lowercase().as_str() {
                "keep" | "yes" | "member" => true,
                "defer" | "no" | "lower" => false,
                other => {
                    return Err(ParseError::UnparseableOutput(format!(
                        "decision {other:?} for {label:?} is neither keep nor defer"
                    )))
                }
            },
            other => {
                return Err(ParseError::UnparseableOutput(format!(
                    "decision {other} for {label:?} is neither keep nor defer"
                )))
            }
        };
        out.insert(canon.to_string(), keep);
    }
    Ok(out)
}

/// One flaw reported by a review or evaluation response, still in label space.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawFinding {
    pub kind: String,
    pub node: String,
    pub current_parent: String,
    #[serde(default)]
    pub suggested_parent: Option<String>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedReview {
    pub approved: Option<bool>,
    pub findings: Vec<RawFinding>,
}

/// Parses `{"approved": bool?, "findings": [ {...}, ... ]}`.
pub fn parse_review(raw: &str) -> Result<ParsedReview, ParseError> {
    let map = extract_object(raw)?;
    let approved = match map.get("approved") {
        None => None,
        Some(Value::Bool(b)) => Some(*b),
        Some(other) => {
            return Err(ParseError::UnparseableOutput(format!(
                "approved must be a boolean, got {other}"
            )))
        }
    };
    let findings = match map.get("findings") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| ParseError::UnparseableOutput(format!("findings: {e}")))?,
    };
    Ok(ParsedReview { approved, findings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn classification_well_formed() {
        let allowed = set(&["Celebrations", "Travel", OTHER]);
        let got = parse_classification(
            r#"Sure! {"birthday card": ["Celebrations"]} hope that helps"#,
            &allowed,
        )
        .unwrap();
        assert_eq!(got["birthday card"], set(&["Celebrations"]));
    }

    #[test]
    fn classification_without_dictionary() {
        let allowed = set(&["Travel", OTHER]);
        assert!(matches!(
            parse_classification("I think it's probably Travel", &allowed),
            Err(ParseError::UnparseableOutput(_))
        ));
    }

    #[test]
    fn classification_illegal_category_is_named() {
        let allowed = set(&["Travel", OTHER]);
        let err = parse_classification(r#"{"beach": ["Vacations"]}"#, &allowed).unwrap_err();
        assert_eq!(
            err,
            ParseError::IllegalCategory {
                label: "beach".into(),
                category: "Vacations".into()
            }
        );
    }

    #[test]
    fn classification_requires_other() {
        assert!(matches!(
            parse_classification("{}", &set(&["Travel"])),
            Err(ParseError::Precondition(_))
        ));
    }

    #[test]
    fn classification_normalizes_spelling_and_empty_means_other() {
        let allowed = set(&["Beauty and Wellness", OTHER]);
        let got =
            parse_classification(r#"{"lipstick": "beauty  and wellness", "x": []}"#, &allowed).unwrap();
        assert_eq!(got["lipstick"], set(&["Beauty and Wellness"]));
        assert_eq!(got["x"], set(&[OTHER]));
    }

    #[test]
    fn hierarchy_nested() {
        let known = set(&["Health", "fitness"]);
        let got = parse_hierarchy(r#"{"Health": {"fitness": {}}}"#, &known).unwrap();
        assert_eq!(got.edges, vec![("Health".into(), "fitness".into())]);
        assert!(got.rejected.is_empty());
    }

    #[test]
    fn hierarchy_hallucination_is_contained() {
        let known = set(&["Health", "fitness", "yoga"]);
        let got = parse_hierarchy(
            r#"{"Health": {"fitness": {}, "wellnessology": {"yoga": {}}}}"#,
            &known,
        )
        .unwrap();
        assert_eq!(got.edges, vec![("Health".into(), "fitness".into())]);
        assert_eq!(got.rejected, vec!["wellnessology".to_string()]);
    }

    #[test]
    fn hierarchy_leaf_lists() {
        let known = set(&["Travel", "beach", "hiking"]);
        let got = parse_hierarchy(r#"{"Travel": ["beach", "hiking"]}"#, &known).unwrap();
        assert_eq!(got.edges.len(), 2);
        assert!(parse_hierarchy("no tree", &known).is_err());
        assert!(parse_hierarchy("{}", &BTreeSet::new()).is_err());
    }

    #[test]
    fn rendered_hierarchy_round_trips_with_shared_children() {
        let edges: Vec<(String, String)> = [
            ("R", "a"),
            ("R", "b"),
            ("a", "d"),
            ("b", "d"),
            ("d", "e"),
        ]
        .iter()
        .map(|(p, c)| (p.to_string(), c.to_string()))
        .collect();
        let json = hierarchy_to_json(&["R".to_string()], &edges);
        let known = set(&["R", "a", "b", "d", "e"]);
        let parsed = parse_hierarchy(&json.to_string(), &known).unwrap();
        let got: BTreeSet<_> = parsed.edges.into_iter().collect();
        assert_eq!(got, edges.into_iter().collect());
    }

    #[test]
    fn rendered_hierarchy_keeps_cycle_edges() {
        let edges: Vec<(String, String)> = [("a", "b"), ("b", "a")]
            .iter()
            .map(|(p, c)| (p.to_string(), c.to_string()))
            .collect();
        let json = hierarchy_to_json(&[], &edges);
        let parsed = parse_hierarchy(&json.to_string(), &set(&["a", "b"])).unwrap();
        assert_eq!(parsed.edges.len(), 2);
    }

    #[test]
    fn membership_decisions() {
        let cands = set(&["birthday", "birthday party"]);
        let got =
            parse_membership(r#"{"birthday": "keep", "birthday party": false, "x": "keep"}"#, &cands)
                .unwrap();
        assert_eq!(got.len(), 2);
        assert!(got["birthday"]);
        assert!(!got["birthday party"]);
        assert!(parse_membership(r#"{"birthday": "maybe"}"#, &cands).is_err());
    }

    #[test]
    fn review_findings() {
        let got = parse_review(
            r#"{"approved": false, "findings": [{"kind": "wrong_parent", "node": "mom dad",
                "current_parent": "love", "suggested_parent": "marriage", "rationale": "r"}]}"#,
        )
        .unwrap();
        assert_eq!(got.approved, Some(false));
        assert_eq!(got.findings[0].suggested_parent.as_deref(), Some("marriage"));
        assert_eq!(parse_review("{}").unwrap(), ParsedReview::default());
    }
}
