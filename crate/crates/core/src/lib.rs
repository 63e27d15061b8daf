//! Hierarchy induction over knowledge-graph nodes: graph model, completion
//! providers, classification into L1 categories, hierarchy generation,
//! transactional ingest and coverage statistics.

pub mod classifier;
pub mod fixtures;
pub mod generator;
pub mod graph;
pub mod ingest;
pub mod prompts;
pub mod provider;
pub mod stats;

pub use classifier::{
    classify_all, classify_batch, CategorySet, ClassificationResult, ClassifyError, ClassifyOptions, FewShotExample,
    PromptMode,
};
pub use generator::{
    generate, generate_cyclical, generate_one_shot, review_pass, select_strategy, CandidateSet, DeltaEdge,
    GenerateError, GenerateOptions, HierarchyDelta, Strategy, StrategyChoice, StrategyOverride,
};
pub use graph::{Edge, GraphError, Hierarchy, Level, Node, NodeId, Provenance};
pub use ingest::{
    apply_corrections, apply_delta, merge_subgraph, Correction, CorrectionSet, GraphSnapshot, IngestError,
};
pub use prompts::{Template, TemplateSet};
pub use provider::{CompletionProvider, MockOracle, MockOracleConfig, PromptRequest, ProviderError};
pub use stats::{coverage_report, level_histogram, CoverageReport, LevelCounting, LevelHistogram};
