//! Locale-keyed prompt templates.
//!
//! English defaults are compiled in. A templates directory laid out as
//! `<dir>/<locale>/<name>.txt` overrides any subset of them.

use std::collections::BTreeMap;
use std::path::Path;

use crate::survey::DataError;

pub const STRESS_ASSIGN: &str = "stress_assign";
pub const PROFILE_FILTER: &str = "profile_filter";
pub const PERSONALITY: &str = "personality";
pub const STRESS_IMPACT: &str = "stress_impact";
pub const PROCESS_REASONING: &str = "process_reasoning";
pub const SYNTHESIS: &str = "synthesis";
pub const AUGMENT_PERSONALITY: &str = "augment_personality";
pub const AUGMENT_VALUES: &str = "augment_values";
pub const BASELINE_NO_DEMO: &str = "baseline_no_demo";
pub const BASELINE_NATION_A: &str = "baseline_nation_a";
pub const BASELINE_NATION_B: &str = "baseline_nation_b";
pub const BASELINE_DEMO_IDEO: &str = "baseline_demo_ideo";
pub const BASELINE_DEMO_IDEO_OPINION: &str = "baseline_demo_ideo_opinion";
pub const BASELINE_THREE_VARIABLE: &str = "baseline_three_variable";

const DEFAULTS: &[(&str, &str)] = &[
    (STRESS_ASSIGN, include_str!("../templates/en/stress_assign.txt")),
    (PROFILE_FILTER, include_str!("../templates/en/profile_filter.txt")),
    (PERSONALITY, include_str!("../templates/en/personality.txt")),
    (STRESS_IMPACT, include_str!("../templates/en/stress_impact.txt")),
    (PROCESS_REASONING, include_str!("../templates/en/process_reasoning.txt")),
    (SYNTHESIS, include_str!("../templates/en/synthesis.txt")),
    (AUGMENT_PERSONALITY, include_str!("../templates/en/augment_personality.txt")),
    (AUGMENT_VALUES, include_str!("../templates/en/augment_values.txt")),
    (BASELINE_NO_DEMO, include_str!("../templates/en/baseline_no_demo.txt")),
    (BASELINE_NATION_A, include_str!("../templates/en/baseline_nation_a.txt")),
    (BASELINE_NATION_B, include_str!("../templates/en/baseline_nation_b.txt")),
    (BASELINE_DEMO_IDEO, include_str!("../templates/en/baseline_demo_ideo.txt")),
    (
        BASELINE_DEMO_IDEO_OPINION,
        include_str!("../templates/en/baseline_demo_ideo_opinion.txt"),
    ),
    (
        BASELINE_THREE_VARIABLE,
        include_str!("../templates/en/baseline_three_variable.txt"),
    ),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub locale: String,
    texts: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates::english()
    }
}

impl PromptTemplates {
    pub fn english() -> PromptTemplates {
        PromptTemplates {
            locale: "en".into(),
            texts: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.trim_end().to_string()))
                .collect(),
        }
    }

    /// Defaults overridden by whatever `<dir>/<locale>/*.txt` provides.
    pub fn load(dir: &Path, locale: &str) -> Result<PromptTemplates, DataError> {
        let mut templates = PromptTemplates::english();
        templates.locale = locale.to_string();
        let locale_dir = dir.join(locale);
        if !locale_dir.is_dir() {
            return Err(DataError::Invalid(format!(
                "template directory {} does not exist",
                locale_dir.display()
            )));
        }
        for (name, _) in DEFAULTS {
            let path = locale_dir.join(format!("{name}.txt"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                templates.texts.insert(name.to_string(), text.trim_end().to_string());
            }
        }
        Ok(templates)
    }

    pub fn get(&self, name: &str) -> &str {
        self.texts
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown template {name}"))
    }

    pub fn set(&mut self, name: &str, text: impl Into<String>) {
        self.texts.insert(name.to_string(), text.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.texts.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Substitutes `{key}` placeholders. Unknown placeholders are left as is.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self.get(name).to_string();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_present() {
        let t = PromptTemplates::english();
        assert!(t.get(STRESS_ASSIGN).contains("integers from 0 to 100"));
        assert!(t.get(PROFILE_FILTER).contains("dropped_profile"));
        assert!(t.get(PERSONALITY).contains("get_next_process"));
        assert!(t.get(STRESS_IMPACT).contains("trigger the negative aspect"));
        assert!(t.get(PROCESS_REASONING).contains("\"weight\": 0.4"));
        assert!(t.get(SYNTHESIS).contains("rewrite the result and explanation"));
        assert!(t.get(AUGMENT_PERSONALITY).contains("PROB%"));
    }

    #[test]
    fn render_substitutes() {
        let t = PromptTemplates::english();
        let s = t.render(BASELINE_NATION_A, &[("nation", "the United States")]);
        assert!(s.contains("someone from the United States"));
        assert!(s.contains("{question}"));
    }

    #[test]
    fn locale_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("zh")).unwrap();
        std::fs::write(dir.path().join("zh/synthesis.txt"), "综合\n").unwrap();
        let t = PromptTemplates::load(dir.path(), "zh").unwrap();
        assert_eq!(t.get(SYNTHESIS), "综合");
        assert_eq!(t.get(STRESS_ASSIGN), PromptTemplates::english().get(STRESS_ASSIGN));
        assert!(PromptTemplates::load(dir.path(), "fr").is_err());
    }
}
