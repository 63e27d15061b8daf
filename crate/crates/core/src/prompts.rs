//! Versioned prompt templates with `{name}` placeholders.
//!
//! The built-in set lives in `templates/` and is compiled in. A directory
//! containing any subset of the same file names overrides individual files.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

pub const TEMPLATE_SET_VERSION: &str = include_str!("../templates/VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    ClassifySystem,
    Classify,
    ClassifyExample,
    MembershipSystem,
    Membership,
    PlacementSystem,
    Placement,
    GenerateSystem,
    Generate,
    CorrectSystem,
    Correct,
    ReviewSystem,
    Review,
    EvaluateSystem,
    Evaluate,
}

impl Template {
    pub const ALL: [Template; 15] = [
        Template::ClassifySystem,
        Template::Classify,
        Template::ClassifyExample,
        Template::MembershipSystem,
        Template::Membership,
        Template::PlacementSystem,
        Template::Placement,
        Template::GenerateSystem,
        Template::Generate,
        Template::CorrectSystem,
        Template::Correct,
        Template::ReviewSystem,
        Template::Review,
        Template::EvaluateSystem,
        Template::Evaluate,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Template::ClassifySystem => "classify.system.txt",
            Template::Classify => "classify.txt",
            Template::ClassifyExample => "classify.example.txt",
            Template::MembershipSystem => "membership.system.txt",
            Template::Membership => "membership.txt",
            Template::PlacementSystem => "placement.system.txt",
            Template::Placement => "placement.txt",
            Template::GenerateSystem => "generate.system.txt",
            Template::Generate => "generate.txt",
            Template::CorrectSystem => "correct.system.txt",
            Template::Correct => "correct.txt",
            Template::ReviewSystem => "review.system.txt",
            Template::Review => "review.txt",
            Template::EvaluateSystem => "evaluate.system.txt",
            Template::Evaluate => "evaluate.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            Template::ClassifySystem => include_str!("../templates/classify.system.txt"),
            Template::Classify => include_str!("../templates/classify.txt"),
            Template::ClassifyExample => include_str!("../templates/classify.example.txt"),
            Template::MembershipSystem => include_str!("../templates/membership.system.txt"),
            Template::Membership => include_str!("../templates/membership.txt"),
            Template::PlacementSystem => include_str!("../templates/placement.system.txt"),
            Template::Placement => include_str!("../templates/placement.txt"),
            Template::GenerateSystem => include_str!("../templates/generate.system.txt"),
            Template::Generate => include_str!("../templates/generate.txt"),
            Template::CorrectSystem => include_str!("../templates/correct.system.txt"),
            Template::Correct => include_str!("../templates/correct.txt"),
            Template::ReviewSystem => include_str!("../templates/review.system.txt"),
            Template::Review => include_str!("../templates/review.txt"),
            Template::EvaluateSystem => include_str!("../templates/evaluate.system.txt"),
            Template::Evaluate => include_str!("../templates/evaluate.txt"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template} uses placeholder {{{name}}} but no value was supplied")]
    MissingValue { template: &'static str, name: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    texts: BTreeMap<Template, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            texts: Template::ALL
                .iter()
                .map(|&t| (t, t.builtin().trim_end().to_string()))
                .collect(),
        }
    }
}

impl TemplateSet {
    /// Built-in templates overridden by whichever files exist in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for t in Template::ALL {
            let path = dir.join(t.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.texts.insert(t, text.trim_end().to_string());
            }
        }
        Ok(set)
    }

    pub fn text(&self, t: Template) -> &str {
        &self.texts[&t]
    }

    pub fn render(&self, t: Template, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        render(self.text(t), values).map_err(|name| TemplateError::MissingValue {
            template: t.file_name(),
            name,
        })
    }
}

/// Substitutes `{identifier}` placeholders (lowercase ASCII and `_`). Any
/// other brace usage, such as JSON examples, is left untouched. Returns the
/// name of the first placeholder without a value.
fn render(text: &str, values: &[(&str, &str)]) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}') {
            let name = &after[..name_len];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| name.to_string())?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// JSON list rendering used for node and category lists in prompts.
pub fn json_list<S: AsRef<str>>(items: &[S]) -> String {
    serde_json::to_string(&items.iter().map(AsRef::as_ref).collect::<Vec<_>>()).expect("strings serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_substituted_and_json_left_alone() {
        let out = render(
            "Nodes: {candidates}\nAnswer {\"node\": [\"X\"]} {}",
            &[("candidates", "[\"a\"]")],
        )
        .unwrap();
        assert_eq!(out, "Nodes: [\"a\"]\nAnswer {\"node\": [\"X\"]} {}");
    }

    #[test]
    fn missing_value_is_reported() {
        assert_eq!(render("{existing_hierarchy}", &[]), Err("existing_hierarchy".into()));
    }

    #[test]
    fn builtin_templates_render_with_their_placeholders() {
        let set = TemplateSet::default();
        let all = [
            ("categories", "[]"),
            ("candidates", "[]"),
            ("examples", "-"),
            ("existing_hierarchy", "{}"),
            ("hierarchy", "{}"),
            ("root", "R"),
            ("parent", "P"),
            ("parent_level", "1"),
            ("level", "2"),
            ("subtrees", "[]"),
        ];
        for t in Template::ALL {
            set.render(t, &all).unwrap();
        }
        assert_eq!(TEMPLATE_SET_VERSION.trim(), "1");
    }

    #[test]
    fn directory_overrides_single_file() {
        let dir = std::env::temp_dir().join(format!("kgh-tpl-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("review.txt"), "custom {hierarchy}\n").unwrap();
        let set = TemplateSet::load_dir(&dir).unwrap();
        assert_eq!(set.text(Template::Review), "custom {hierarchy}");
        assert_eq!(set.text(Template::Evaluate), TemplateSet::default().text(Template::Evaluate));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
