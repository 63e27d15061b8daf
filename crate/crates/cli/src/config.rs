//! Pipeline configuration: one TOML (or JSON) file, relative paths resolved
//! against the file's directory, then flag overrides on top.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use kgh_core::classifier::PromptMode;
use kgh_core::provider::{CorruptionMode, ProviderConfig};
use kgh_core::{ClassifyOptions, GenerateOptions, StrategyOverride};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_CONFIG: &str = "kgh.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub snapshot: PathBuf,
    pub categories: PathBuf,
    pub examples: PathBuf,
    pub templates: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            snapshot: "graph.snapshot.json".into(),
            categories: "categories.txt".into(),
            examples: "examples.json".into(),
            templates: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    /// Snapshot whose hierarchy the oracle answers from.
    pub gold: PathBuf,
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub zero_shot_noise_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub corruption_mode: CorruptionMode,
    #[serde(default)]
    pub fail_on: BTreeSet<String>,
    #[serde(default)]
    pub context_budget_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSettings {
    Mock(MockSettings),
    Http {
        #[serde(flatten)]
        config: ProviderConfig,
        /// Append every exchange to this transcript file.
        #[serde(default)]
        record: Option<PathBuf>,
    },
    Replay {
        transcript: PathBuf,
        #[serde(default)]
        context_budget_tokens: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySettings {
    pub batch_size: usize,
    pub passes: usize,
    pub mode: PromptMode,
    pub seed: u64,
    /// Classify every non-root node instead of only those outside the hierarchy.
    pub all_nodes: bool,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self {
            batch_size: kgh_core::classifier::DEFAULT_BATCH_SIZE,
            passes: 1,
            mode: PromptMode::FewShot,
            seed: 0,
            all_nodes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub strategy: StrategyOverride,
    pub batch_size: usize,
    pub max_depth: u32,
    pub sort_by_label_length: bool,
    pub max_output_tokens: usize,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        let d = GenerateOptions::default();
        Self {
            strategy: StrategyOverride::Auto,
            batch_size: d.batch_size,
            max_depth: d.max_depth,
            sort_by_label_length: d.sort_by_label_length,
            max_output_tokens: d.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSettings {
    pub sample_rate: f64,
    pub seed: u64,
    /// Apply corrections posted to the service immediately instead of
    /// staging them as files.
    pub live_apply: bool,
}

impl Default for ReviewSettings {
    fn default() -> Self {
        Self {
            sample_rate: 0.1,
            seed: 0,
            live_apply: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub noise_rates: Vec<f64>,
    pub seeds: u64,
    pub depth: u32,
    pub nodes: usize,
    pub fixture_seed: u64,
    pub corruption_mode: CorruptionMode,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            noise_rates: vec![0.0, 0.05, 0.1, 0.2],
            seeds: 20,
            depth: 5,
            nodes: 200,
            fixture_seed: 5200,
            corruption_mode: CorruptionMode::WrongCategory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub node_class: String,
    /// Stamp log entries with the wall clock. Off by default so repeated
    /// runs produce identical files.
    pub record_timestamps: bool,
    pub paths: Paths,
    pub provider: Option<ProviderSettings>,
    pub classify: ClassifySettings,
    pub generate: GenerateSettings,
    pub review: ReviewSettings,
    pub experiment: ExperimentSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            node_class: "intent".into(),
            record_timestamps: false,
            paths: Paths::default(),
            provider: None,
            classify: ClassifySettings::default(),
            generate: GenerateSettings::default(),
            review: ReviewSettings::default(),
            experiment: ExperimentSettings::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Loads `path`. A missing file is only tolerated when `required` is
    /// false, in which case defaults relative to the current directory apply.
    pub fn load(path: &Path, required: bool) -> CliResult<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && !required => return Ok(Self::default()),
            Err(e) => return Err(CliError::config(format!("cannot read config {}: {e}", path.display()))),
        };
        let json = path.extension().is_some_and(|x| x == "json");
        let mut cfg = Self::parse(&text, json)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.snapshot, &mut p.categories, &mut p.examples, &mut p.output_dir] {
            resolve(base, path);
        }
        if let Some(t) = p.templates.as_mut() {
            resolve(base, t);
        }
        match self.provider.as_mut() {
            Some(ProviderSettings::Mock(m)) => resolve(base, &mut m.gold),
            Some(ProviderSettings::Http { record: Some(r), .. }) => resolve(base, r),
            Some(ProviderSettings::Replay { transcript, .. }) => resolve(base, transcript),
            _ => {}
        }
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            batch_size: self.classify.batch_size,
            mode: self.classify.mode,
            ..ClassifyOptions::default()
        }
    }

    pub fn generate_options(&self) -> GenerateOptions {
        GenerateOptions {
            batch_size: self.generate.batch_size,
            max_depth: self.generate.max_depth,
            sort_by_label_length: self.generate.sort_by_label_length,
            max_output_tokens: self.generate.max_output_tokens,
            ..GenerateOptions::default()
        }
    }

    pub fn timestamp(&self) -> Option<String> {
        self.record_timestamps
            .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_mock_provider() {
        let cfg = PipelineConfig::parse(
            r#"
node_class = "color"
[paths]
snapshot = "g.json"
[provider]
kind = "mock"
gold = "gold.json"
noise_rate = 0.1
[generate]
strategy = "one_shot"
"#,
            false,
        )
        .unwrap();
        assert_eq!(cfg.node_class, "color");
        assert_eq!(cfg.generate.strategy, StrategyOverride::OneShot);
        assert!(matches!(cfg.provider, Some(ProviderSettings::Mock(ref m)) if m.noise_rate == 0.1));
        assert_eq!(cfg.classify.batch_size, 20);
    }

    #[test]
    fn http_provider_names_only_the_key_variable() {
        let cfg = PipelineConfig::parse(
            r#"
[provider]
kind = "http"
endpoint = "http://localhost:1/v1/chat/completions"
model_name = "m"
api_key_env_var = "KGH_TEST_KEY"
"#,
            false,
        )
        .unwrap();
        match cfg.provider {
            Some(ProviderSettings::Http { config, record }) => {
                assert_eq!(config.api_key_env_var, "KGH_TEST_KEY");
                assert!(record.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_and_paths_resolved() {
        assert!(PipelineConfig::parse("colour = 1", false).is_err());
        let mut cfg = PipelineConfig::default();
        cfg.resolve_paths(Path::new("/tmp/run"));
        assert_eq!(cfg.paths.snapshot, PathBuf::from("/tmp/run/graph.snapshot.json"));
    }
}
