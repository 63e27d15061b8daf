//! Few-shot, multi-label assignment of nodes to L1 categories with an `Other`
//! fallback, plus shuffle-and-vote consensus to damp order sensitivity.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{normalize_label, Node, NodeId};
use crate::prompts::{json_list, Template, TemplateError, TemplateSet};
use crate::provider::parse::{parse_classification, OTHER};
use crate::provider::{complete, CompletionProvider, FewShotPair, PromptRequest, ProviderError, TaskInput};

pub const DEFAULT_BATCH_SIZE: usize = 20;
pub const MAX_CATEGORIES_PER_NODE: usize = 3;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The L1 category labels for one node class. `Other` is always an implicit
/// outcome and is never stored here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySet {
    categories: Vec<String>,
    node_class: String,
}

impl CategorySet {
    pub fn new<I, S>(categories: I, node_class: impl Into<String>) -> Result<Self, ClassifyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in categories {
            let c: String = c.into();
            let c = c.trim().to_string();
            let key = normalize_label(&c);
            if key.is_empty() {
                continue;
            }
            if key == normalize_label(OTHER) {
                return Err(ClassifyError::Precondition(
                    "Other is implicit and cannot be listed as a category".into(),
                ));
            }
            if seen.insert(key) {
                out.push(c);
            }
        }
        if out.len() < 2 {
            return Err(ClassifyError::Precondition(format!(
                "need at least 2 categories, got {}",
                out.len()
            )));
        }
        Ok(Self {
            categories: out,
            node_class: node_class.into(),
        })
    }

    /// One category per non-empty line.
    pub fn from_lines(text: &str, node_class: impl Into<String>) -> Result<Self, ClassifyError> {
        Self::new(text.lines(), node_class)
    }

    pub fn labels(&self) -> &[String] {
        &self.categories
    }

    pub fn node_class(&self) -> &str {
        &self.node_class
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Position in the set, `Other` sorting last.
    fn rank(&self, category: &str) -> usize {
        self.categories
            .iter()
            .position(|c| c == category)
            .unwrap_or(self.categories.len())
    }

    fn allowed(&self) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = self.categories.iter().cloned().collect();
        set.insert(OTHER.to_string());
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub label: String,
    pub categories: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    FewShot,
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultProvenance {
    Model,
    HumanCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub node: NodeId,
    pub label: String,
    /// Category labels in category-set order, or exactly `["Other"]`.
    pub categories: Vec<String>,
    pub consensus_support: f64,
    pub provenance: ResultProvenance,
    /// Set when the model's answer for this node could not be used.
    #[serde(default)]
    pub flagged: bool,
}

impl ClassificationResult {
    pub fn is_other(&self) -> bool {
        self.categories.len() == 1 && self.categories[0] == OTHER
    }

    pub fn category_set(&self) -> BTreeSet<String> {
        self.categories.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOptions {
    pub batch_size: usize,
    pub mode: PromptMode,
    pub repair_attempts: usize,
    pub max_output_tokens: usize,
    pub temperature: f32,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            mode: PromptMode::FewShot,
            repair_attempts: 2,
            max_output_tokens: 2048,
            temperature: 0.0,
        }
    }
}

/// Keeps real categories only when any are present, then caps the count,
/// preferring higher `score` and then category-set order.
fn finalize(
    categories: &CategorySet,
    mut picked: Vec<(String, usize)>,
) -> Vec<String> {
    let has_real = picked.iter().any(|(c, _)| c != OTHER);
    if has_real {
        picked.retain(|(c, _)| c != OTHER);
    }
    if picked.is_empty() {
        return vec![OTHER.to_string()];
    }
    picked.sort_by(|(a, sa), (b, sb)| sb.cmp(sa).then(categories.rank(a).cmp(&categories.rank(b))));
    picked.truncate(MAX_CATEGORIES_PER_NODE);
    picked.sort_by_key(|(c, _)| categories.rank(c));
    picked.into_iter().map(|(c, _)| c).collect()
}

fn example_pairs(
    examples: &[FewShotExample],
    categories: &CategorySet,
    templates: &TemplateSet,
) -> Result<Vec<FewShotPair>, ClassifyError> {
    let cats = json_list(categories.labels());
    examples
        .iter()
        .map(|ex| {
            let input = templates.render(
                Template::ClassifyExample,
                &[("categories", &cats), ("candidates", &json_list(&[&ex.label]))],
            )?;
            let mut answer = serde_json::Map::new();
            answer.insert(
                ex.label.clone(),
                serde_json::json!(ex.categories.iter().collect::<Vec<_>>()),
            );
            Ok(FewShotPair {
                input,
                output: serde_json::Value::Object(answer).to_string(),
            })
        })
        .collect()
}

fn check_examples(examples: &[FewShotExample], categories: &CategorySet) -> Result<(), ClassifyError> {
    let allowed = categories.allowed();
    for ex in examples {
        if ex.categories.is_empty() {
            return Err(ClassifyError::Precondition(format!(
                "few-shot example {:?} has no categories",
                ex.label
            )));
        }
        if let Some(bad) = ex.categories.iter().find(|c| !allowed.contains(*c)) {
            return Err(ClassifyError::Precondition(format!(
                "few-shot example {:?} uses unknown category {bad:?}",
                ex.label
            )));
        }
    }
    Ok(())
}

/// Classifies `nodes` in prompts of `options.batch_size`. Returns exactly one
/// result per node, in input order. Nodes whose answer is missing or whose
/// batch could not be parsed after the repair retries come back as `Other`
/// with `flagged` set. Provider failures abort the whole call.
pub fn classify_batch<P: CompletionProvider + ?Sized>(
    nodes: &[Node],
    categories: &CategorySet,
    examples: &[FewShotExample],
    provider: &P,
    templates: &TemplateSet,
    options: &ClassifyOptions,
) -> Result<Vec<ClassificationResult>, ClassifyError> {
    if nodes.is_empty() {
        return Err(ClassifyError::Precondition("no nodes to classify".into()));
    }
    if options.batch_size == 0 {
        return Err(ClassifyError::Precondition("batch size must be positive".into()));
    }
    if options.mode == PromptMode::FewShot && examples.is_empty() {
        return Err(ClassifyError::Precondition(
            "few-shot mode needs at least one example".into(),
        ));
    }
    check_examples(examples, categories)?;
    let pairs = match options.mode {
        PromptMode::FewShot => example_pairs(examples, categories, templates)?,
        PromptMode::ZeroShot => Vec::new(),
    };
    let allowed = categories.allowed();
    let system = templates.text(Template::ClassifySystem).to_string();
    let cats_json = json_list(categories.labels());

    let mut results = Vec::with_capacity(nodes.len());
    for chunk in nodes.chunks(options.batch_size) {
        let labels: Vec<String> = chunk.iter().map(|n| n.label().to_string()).collect();
        let payload = templates.render(
            Template::Classify,
            &[("categories", &cats_json), ("candidates", &json_list(&labels))],
        )?;
        let mut request = PromptRequest::new(
            system.clone(),
            payload,
            TaskInput::Classify {
                labels: labels.clone(),
                categories: categories.labels().to_vec(),
                zero_shot: options.mode == PromptMode::ZeroShot,
            },
        );
        request.few_shot_examples = pairs.clone();
        request.max_output_tokens = options.max_output_tokens;
        request.temperature = options.temperature;

        let mut parsed = None;
        for attempt in 0..=options.repair_attempts {
            let problem = match complete(provider, &request) {
                Ok(resp) => match parse_classification(resp.text(), &allowed) {
                    Ok(map) => {
                        parsed = Some(map);
                        break;
                    }
                    Err(e) => e.to_string(),
                },
                Err(ProviderError::Truncated { .. }) => "the answer was cut off".to_string(),
                Err(e) => return Err(e.into()),
            };
            log::debug!("classification attempt {} unusable: {problem}", attempt + 1);
            request = request.with_repair_note(&problem);
        }

        let by_label: HashMap<String, BTreeSet<String>> = parsed
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| (normalize_label(&k), v))
            .collect();
        for node in chunk {
            let (cats, flagged) = match by_label.get(node.normalized_label()) {
                Some(set) => (
                    finalize(categories, set.iter().map(|c| (c.clone(), 1)).collect()),
                    false,
                ),
                None => (vec![OTHER.to_string()], true),
            };
            results.push(ClassificationResult {
                node: node.id().clone(),
                label: node.label().to_string(),
                categories: cats,
                consensus_support: 1.0,
                provenance: ResultProvenance::Model,
                flagged,
            });
        }
    }
    Ok(results)
}

fn pass_seed(seed: u64, pass: usize) -> u64 {
    seed ^ (pass as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs [`classify_batch`] over `passes` seeded shuffles of the input and
/// combines the answers by majority vote per (node, category).
///
/// A category is kept when at least half of the passes chose it (ties
/// include). If nothing reaches that bar, the most-voted outcome wins, ties
/// broken by category-set order with `Other` last. `consensus_support` is the
/// smallest vote share among the kept categories.
#[allow(clippy::too_many_arguments)]
pub fn classify_all<P: CompletionProvider + ?Sized>(
    nodes: &[Node],
    categories: &CategorySet,
    examples: &[FewShotExample],
    provider: &P,
    templates: &TemplateSet,
    options: &ClassifyOptions,
    passes: usize,
    seed: u64,
) -> Result<Vec<ClassificationResult>, ClassifyError> {
    if passes == 0 {
        return Err(ClassifyError::Precondition("passes must be at least 1".into()));
    }
    if nodes.is_empty() {
        return Err(ClassifyError::Precondition("no nodes to classify".into()));
    }
    let mut votes: HashMap<&NodeId, BTreeMap<String, usize>> = HashMap::new();
    let mut flags: HashMap<&NodeId, usize> = HashMap::new();
    let ids: HashMap<&NodeId, &NodeId> = nodes.iter().map(|n| (n.id(), n.id())).collect();
    for pass in 0..passes {
        let mut order: Vec<&Node> = nodes.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(pass_seed(seed, pass)));
        let shuffled: Vec<Node> = order.into_iter().cloned().collect();
        for r in classify_batch(&shuffled, categories, examples, provider, templates, options)? {
            let node = *ids.get(&r.node).expect("result for an input node");
            let tally = votes.entry(node).or_default();
            for c in r.categories {
                *tally.entry(c).or_default() += 1;
            }
            if r.flagged {
                *flags.entry(node).or_default() += 1;
            }
        }
    }

    let mut out = Vec::with_capacity(nodes.len());
    for node in nodes {
        let tally = votes.get(node.id()).cloned().unwrap_or_default();
        let mut kept: Vec<(String, usize)> = tally
            .iter()
            .filter(|(_, &v)| 2 * v >= passes)
            .map(|(c, &v)| (c.clone(), v))
            .collect();
        if kept.is_empty() {
            let best = tally
                .iter()
                .max_by(|(a, va), (b, vb)| va.cmp(vb).then(categories.rank(b).cmp(&categories.rank(a))))
                .map(|(c, &v)| (c.clone(), v));
            kept.extend(best);
        }
        let cats = finalize(categories, kept);
        let support = cats
            .iter()
            .map(|c| tally.get(c).copied().unwrap_or(0))
            .min()
            .unwrap_or(0) as f64
            / passes as f64;
        out.push(ClassificationResult {
            node: node.id().clone(),
            label: node.label().to_string(),
            categories: cats,
            consensus_support: support,
            provenance: ResultProvenance::Model,
            flagged: 2 * flags.get(node.id()).copied().unwrap_or(0) > passes,
        });
    }
    Ok(out)
}

/// Fraction of results whose category set exactly matches `gold`. Only
/// nodes present in `gold` count.
pub fn accuracy(results: &[ClassificationResult], gold: &BTreeMap<NodeId, BTreeSet<String>>) -> f64 {
    let scored: Vec<bool> = results
        .iter()
        .filter_map(|r| gold.get(&r.node).map(|g| *g == r.category_set()))
        .collect();
    if scored.is_empty() {
        return 0.0;
    }
    scored.iter().filter(|&&ok| ok).count() as f64 / scored.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAccuracy {
    pub few_shot: f64,
    pub zero_shot: f64,
    pub evaluated: usize,
}

/// Classifies the gold-labelled nodes once in each prompt mode and reports
/// per-mode accuracy. Makes no claim about which mode wins.
pub fn compare_prompt_modes<P: CompletionProvider + ?Sized>(
    nodes: &[Node],
    categories: &CategorySet,
    examples: &[FewShotExample],
    provider: &P,
    templates: &TemplateSet,
    options: &ClassifyOptions,
    gold: &BTreeMap<NodeId, BTreeSet<String>>,
) -> Result<ModeAccuracy, ClassifyError> {
    if gold.is_empty() {
        return Err(ClassifyError::Precondition("gold labelling is empty".into()));
    }
    let labelled: Vec<Node> = nodes.iter().filter(|n| gold.contains_key(n.id())).cloned().collect();
    let few = ClassifyOptions {
        mode: PromptMode::FewShot,
        ..options.clone()
    };
    let zero = ClassifyOptions {
        mode: PromptMode::ZeroShot,
        ..options.clone()
    };
    let few_results = classify_batch(&labelled, categories, examples, provider, templates, &few)?;
    let zero_results = classify_batch(&labelled, categories, examples, provider, templates, &zero)?;
    Ok(ModeAccuracy {
        few_shot: accuracy(&few_results, gold),
        zero_shot: accuracy(&zero_results, gold),
        evaluated: labelled.len(),
    })
}
