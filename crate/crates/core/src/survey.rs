//! Survey questions, respondents and option-label canonicalization.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dynamics::TypeCode;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid data: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub id: String,
    pub text: String,
    pub options: Vec<QuestionOption>,
}

impl SurveyQuestion {
    /// Builds a question with labels "(A)", "(B)", ... assigned in order.
    pub fn lettered(id: &str, text: &str, options: &[&str]) -> SurveyQuestion {
        SurveyQuestion {
            id: id.to_string(),
            text: text.to_string(),
            options: options
                .iter()
                .enumerate()
                .map(|(i, t)| QuestionOption {
                    label: format!("({})", (b'A' + i as u8) as char),
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.options.len() < 2 {
            return Err(DataError::Invalid(format!(
                "question {} has fewer than two options",
                self.id
            )));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if label_letters(&opt.label).is_none() {
                return Err(DataError::Invalid(format!(
                    "question {}: option label {:?} is not of the form (A)",
                    self.id, opt.label
                )));
            }
            if !seen.insert(opt.label.to_ascii_uppercase()) {
                return Err(DataError::Invalid(format!(
                    "question {}: duplicate option label {}",
                    self.id, opt.label
                )));
            }
        }
        let labels: Vec<&str> = self.options.iter().map(|o| o.label.as_str()).collect();
        let mut sorted = labels.clone();
        sorted.sort_by_key(|l| (l.len(), l.to_ascii_uppercase()));
        if sorted != labels {
            return Err(DataError::Invalid(format!(
                "question {}: option labels are not in order",
                self.id
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.options.iter().map(|o| o.label.clone()).collect()
    }

    pub fn option(&self, label: &str) -> Option<&QuestionOption> {
        self.options.iter().find(|o| o.label == label)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.options.iter().position(|o| o.label == label)
    }

    /// "(A) Very important" for a label, or the label itself if unknown.
    pub fn display(&self, label: &str) -> String {
        match self.option(label) {
            Some(o) => format!("{} {}", o.label, o.text),
            None => label.to_string(),
        }
    }

    pub fn render_options(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("{} {}", o.label, o.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render(&self) -> String {
        format!("Survey question: {}\nOptions: {}", self.text, {
            self.options
                .iter()
                .map(|o| format!("{} {}", o.label, o.text))
                .collect::<Vec<_>>()
                .join(", ")
        })
    }

    /// Maps free model output onto one of this question's labels.
    ///
    /// A parenthesized label wins; otherwise the whole answer must equal an
    /// option text (case-folded) or a bare option letter. Anything else is
    /// unmappable.
    pub fn canonicalize(&self, raw: &str) -> Option<String> {
        let raw = raw.trim();
        let bytes = raw.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'(' {
                let end = bytes[i + 1..]
                    .iter()
                    .position(|&b| b == b')')
                    .map(|p| i + 1 + p);
                if let Some(end) = end {
                    let inner = &raw[i + 1..end];
                    if !inner.is_empty() && inner.chars().all(|c| c.is_ascii_alphabetic()) {
                        if let Some(opt) = self.option_by_letters(inner) {
                            return Some(opt.label.clone());
                        }
                    }
                }
            }
            i += 1;
        }
        let folded = raw.to_lowercase();
        if let Some(opt) = self
            .options
            .iter()
            .find(|o| o.text.trim().to_lowercase() == folded)
        {
            return Some(opt.label.clone());
        }
        if !raw.is_empty() && raw.chars().all(|c| c.is_ascii_alphabetic()) && raw.len() <= 2 {
            return self.option_by_letters(raw).map(|o| o.label.clone());
        }
        None
    }

    fn option_by_letters(&self, letters: &str) -> Option<&QuestionOption> {
        self.options.iter().find(|o| {
            label_letters(&o.label).is_some_and(|l| l.eq_ignore_ascii_case(letters))
        })
    }
}

fn label_letters(label: &str) -> Option<&str> {
    let inner = label.strip_prefix('(')?.strip_suffix(')')?;
    (!inner.is_empty() && inner.chars().all(|c| c.is_ascii_alphabetic())).then_some(inner)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicFeature {
    pub key: String,
    pub value: String,
}

impl DemographicFeature {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        DemographicFeature {
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: String,
    pub features: IndexMap<String, Value>,
    #[serde(default)]
    pub answers: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_personality: Option<TypeCode>,
    /// Cluster index, present on sampled representatives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

impl Respondent {
    /// Present features rendered as text, in file order.
    pub fn demographic_features(&self) -> Vec<DemographicFeature> {
        self.features
            .iter()
            .filter_map(|(k, v)| value_text(v).map(|t| DemographicFeature::new(k.clone(), t)))
            .collect()
    }

    pub fn feature_text(&self, key: &str) -> Option<String> {
        self.features
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .and_then(|(_, v)| value_text(v))
    }
}

/// One simulated answer, as stored in a run's responses file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedResponse {
    pub subject_id: String,
    pub question_id: String,
    /// Canonical option label; `None` when the subject-question pair failed.
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// FNV-1a of an identifier: a seed component that is stable across runs,
/// platforms and input order.
pub fn stable_hash(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) if s.trim().is_empty() => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| DataError::Parse {
            path: display.clone(),
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::create(path).map_err(io_err)?;
    for item in items {
        let line = serde_json::to_string(item).expect("serializable record");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn load_questions(path: &Path) -> Result<Vec<SurveyQuestion>, DataError> {
    let questions: Vec<SurveyQuestion> = read_jsonl(path)?;
    let mut ids = HashSet::new();
    for q in &questions {
        q.validate()?;
        if !ids.insert(q.id.clone()) {
            return Err(DataError::Invalid(format!("duplicate question id {}", q.id)));
        }
    }
    Ok(questions)
}

/// Loads respondents and checks that answers reference known questions.
pub fn load_respondents(
    path: &Path,
    questions: &[SurveyQuestion],
) -> Result<Vec<Respondent>, DataError> {
    let respondents: Vec<Respondent> = read_jsonl(path)?;
    validate_respondents(&respondents, questions)?;
    Ok(respondents)
}

pub fn validate_respondents(
    respondents: &[Respondent],
    questions: &[SurveyQuestion],
) -> Result<(), DataError> {
    let mut ids = HashSet::new();
    for r in respondents {
        if !ids.insert(r.id.as_str()) {
            return Err(DataError::Invalid(format!("duplicate respondent id {}", r.id)));
        }
        if r.features.is_empty() {
            return Err(DataError::Invalid(format!("respondent {} has no features", r.id)));
        }
        for (qid, label) in &r.answers {
            let q = questions.iter().find(|q| &q.id == qid).ok_or_else(|| {
                DataError::Invalid(format!("respondent {} answers unknown question {qid}", r.id))
            })?;
            if q.option(label).is_none() {
                return Err(DataError::Invalid(format!(
                    "respondent {} answers {qid} with unknown label {label}",
                    r.id
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family() -> SurveyQuestion {
        SurveyQuestion::lettered(
            "Q1",
            "For family, would you say it is very important, rather important, not very important, or not important at all?",
            &["Very important", "Rather important", "Not very important", "Not important at all"],
        )
    }

    #[test]
    fn canonicalize_parenthesized_label() {
        let q = family();
        assert_eq!(q.canonicalize("(A) Very important").as_deref(), Some("(A)"));
        assert_eq!(q.canonicalize("(d) not at all").as_deref(), Some("(D)"));
        assert_eq!(q.canonicalize("I pick (C) here").as_deref(), Some("(C)"));
        assert_eq!(q.canonicalize("(E) Something").as_deref(), None);
    }

    #[test]
    fn canonicalize_option_text() {
        let q = family();
        assert_eq!(q.canonicalize("Very important").as_deref(), Some("(A)"));
        assert_eq!(q.canonicalize("  rather IMPORTANT ").as_deref(), Some("(B)"));
        assert_eq!(q.canonicalize("B").as_deref(), Some("(B)"));
        assert_eq!(q.canonicalize("Quite important").as_deref(), None);
        assert_eq!(q.canonicalize("important").as_deref(), None);
        assert_eq!(q.canonicalize("").as_deref(), None);
    }

    #[test]
    fn question_validation() {
        assert!(family().validate().is_ok());
        let one = SurveyQuestion::lettered("Q", "t", &["only"]);
        assert!(one.validate().is_err());
        let mut dup = family();
        dup.options[1].label = "(A)".into();
        assert!(dup.validate().is_err());
        let mut unordered = family();
        unordered.options.swap(0, 1);
        assert!(unordered.validate().is_err());
    }

    #[test]
    fn respondent_features_skip_missing() {
        let r: Respondent = serde_json::from_str(
            r#"{"id":"r1","features":{"age":44,"religion":"Catholic","income":null},"answers":{}}"#,
        )
        .unwrap();
        let f = r.demographic_features();
        assert_eq!(f, vec![
            DemographicFeature::new("age", "44"),
            DemographicFeature::new("religion", "Catholic"),
        ]);
    }
}
