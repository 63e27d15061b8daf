mod classify;
mod experiment;
mod fixture;
mod generate;
mod merge;

mod stats;

use std::path::{Path, PathBuf};

use kgh_core::classifier::ClassifyError;
use kgh_core::generator::GenerateError;
use kgh_core::provider::{HttpProvider, RecordingProvider, ReplayProvider};
use kgh_core::{CompletionProvider, Hierarchy, MockOracle, MockOracleConfig, Provenance, ProviderError, TemplateSet};

pub use classify::{cmd_classify, ClassificationFile};
pub use experiment::{cmd_experiment, run_experiment, DepthRow, ExperimentReport};
pub use fixture::cmd_fixture;
pub use generate::{cmd_generate, CategoryOutcome, GenerateSummary};
pub use merge::cmd_merge;
pub mod review;
pub use review::{cmd_review_apply, cmd_review_export};
pub use stats::{cmd_stats, strip_model_edges};

use crate::args::GlobalArgs;
use crate::config::{PipelineConfig, ProviderSettings, DEFAULT_CONFIG};
use crate::error::{CliError, CliResult};
use crate::files;

/// Resolved configuration shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
}

impl Context {
    pub fn from_args(global: &GlobalArgs) -> CliResult<Self> {
        let (path, required) = match &global.config {
            Some(p) => (p.clone(), true),
            None => (PathBuf::from(DEFAULT_CONFIG), false),
        };
        let mut config = PipelineConfig::load(&path, required)?;
        if let Some(s) = &global.snapshot {
            config.paths.snapshot = s.clone();
        }
        if let Some(o) = &global.output_dir {
            config.paths.output_dir = o.clone();
        }
        if let Some(c) = &global.node_class {
            config.node_class = c.clone();
        }
        if let Some(seed) = global.seed {
            config.classify.seed = seed;
            config.review.seed = seed;
            if let Some(ProviderSettings::Mock(m)) = config.provider.as_mut() {
                m.seed = seed;
            }
        }
        Ok(Self { config })
    }

    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    pub fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.paths.output_dir.join(rel)
    }

    pub fn templates(&self) -> CliResult<TemplateSet> {
        match &self.config.paths.templates {
            None => Ok(TemplateSet::default()),
            Some(dir) if !dir.is_dir() => Err(CliError::config(format!(
                "template directory {} not found",
                dir.display()
            ))),
            Some(dir) => TemplateSet::load_dir(dir).map_err(|e| CliError::config(e.to_string())),
        }
    }

    pub fn provider(&self) -> CliResult<Box<dyn CompletionProvider>> {
        match &self.config.provider {
            None => Err(CliError::config(
                "no provider configured; add a [provider] section with kind = \"mock\", \"http\" or \"replay\"",
            )),
            Some(ProviderSettings::Mock(m)) => {
                let gold = files::load_snapshot(&m.gold)?.hierarchy;
                let mut oc = MockOracleConfig::noisy(m.noise_rate, m.seed, m.corruption_mode);
                oc.zero_shot_noise_rate = m.zero_shot_noise_rate;
                oc.fail_on = m.fail_on.clone();
                if let Some(b) = m.context_budget_tokens {
                    oc.context_budget_tokens = b;
                }
                Ok(Box::new(MockOracle::new(gold, oc)))
            }
            Some(ProviderSettings::Http { config, record }) => {
                let http = HttpProvider::from_env(config.clone()).map_err(|e| provider_error(&e))?;
                match record {
                    None => Ok(Box::new(http)),
                    Some(path) => {
                        let sink = std::fs::OpenOptions::new()
                            .create(true)
                            .append(true)
                            .open(path)
                            .map_err(|e| CliError::config(format!("cannot open transcript {}: {e}", path.display())))?;
                        Ok(Box::new(RecordingProvider::new(http, Box::new(sink))))
                    }
                }
            }
            Some(ProviderSettings::Replay {
                transcript,
                context_budget_tokens,
            }) => {
                let f = std::fs::File::open(transcript)
                    .map_err(|e| CliError::config(format!("cannot open transcript {}: {e}", transcript.display())))?;
                let mut replay = ReplayProvider::from_reader(std::io::BufReader::new(f))
                    .map_err(|e| CliError::validation(format!("{}: {e}", transcript.display())))?;
                if let Some(b) = context_budget_tokens {
                    replay = replay.with_budget(*b);
                }
                Ok(Box::new(replay))
            }
        }
    }
}

pub fn provider_error(e: &ProviderError) -> CliError {
    match e {
        ProviderError::MissingApiKey(_) => CliError::config(e.to_string()),
        ProviderError::InvalidRequest(_) => CliError::internal(e.to_string()),
        _ => CliError::provider(e.to_string()),
    }
}

pub fn classify_error(e: ClassifyError) -> CliError {
    match e {
        ClassifyError::Provider(p) => provider_error(&p),
        other => CliError::config(other.to_string()),
    }
}

pub fn generate_error(e: &GenerateError) -> CliError {
    match e {
        GenerateError::Provider(p) => provider_error(p),
        GenerateError::Template(_) | GenerateError::Precondition(_) => CliError::config(e.to_string()),
        GenerateError::Graph(_) => CliError::validation(e.to_string()),
    }
}

/// Reachable nodes of `class` and the class population size.
pub fn coverage_counts(g: &Hierarchy, class: &str) -> (usize, usize) {
    let reachable = g.in_hierarchy_nodes();
    let mut total = 0;
    let mut inside = 0;
    for n in g.nodes().filter(|n| n.node_class() == class) {
        total += 1;
        if reachable.contains(n.id()) {
            inside += 1;
        }
    }
    (inside, total)
}

pub fn coverage_line(label: &str, g: &Hierarchy, class: &str) -> String {
    let (inside, total) = coverage_counts(g, class);
    let pct = if total == 0 { 0.0 } else { 100.0 * inside as f64 / total as f64 };
    format!("coverage {label}: {inside}/{total} {class} nodes ({pct:.2}%)")
}

pub fn count_provenance(g: &Hierarchy, p: Provenance) -> usize {
    g.edges().filter(|e| e.provenance == p).count()
}
