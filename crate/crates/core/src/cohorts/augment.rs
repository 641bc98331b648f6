//! Oracle personality (and value orientation) inferred from a respondent's
//! actual answers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CohortError;
use crate::dynamics::{PersonalityRole, TypeCode};
use crate::gateway::{parse_percent, ChatMessage, Field, Gateway, SchemaSpec, Shape};
use crate::survey::{Respondent, SurveyQuestion};
use crate::templates::{self, PromptTemplates};

pub const TAG_AUGMENT_ROLE: &str = "augment_role";
pub const TAG_AUGMENT_TYPE: &str = "augment_type";
pub const TAG_AUGMENT_VALUES: &str = "augment_values";

const ROLES: [PersonalityRole; 4] = [
    PersonalityRole::Analysts,
    PersonalityRole::Diplomats,
    PersonalityRole::Explorers,
    PersonalityRole::Sentinels,
];

#[derive(Debug, Clone, Default)]
pub struct AugmentConfig {
    pub templates: PromptTemplates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAssignment {
    pub type_code: TypeCode,
    pub role: PersonalityRole,
    /// Mean probability per role over the answered questions.
    pub role_probabilities: BTreeMap<String, f64>,
    pub type_probabilities: BTreeMap<String, f64>,
    pub questions_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Normalizes a `{name: "NN%"}` map onto `keys`, in `keys` order.
fn probability_map<K: Copy>(
    value: &Value,
    keys: &[K],
    key_of: impl Fn(&str) -> Option<K>,
    eq: impl Fn(K, K) -> bool,
) -> Result<Vec<f64>, String> {
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let mut probs = vec![None; keys.len()];
    for (name, v) in obj {
        let Some(k) = key_of(name) else {
            return Err(format!("unexpected key {name:?}"));
        };
        let Some(i) = keys.iter().position(|&x| eq(x, k)) else {
            return Err(format!("unexpected key {name:?}"));
        };
        let p = v.as_str().and_then(parse_percent).ok_or_else(|| format!("{name:?}: {v} is not a percentage"))?;
        if probs[i].replace(p).is_some() {
            return Err(format!("duplicate key {name:?}"));
        }
    }
    let values: Vec<f64> = probs.into_iter().map(|p| p.unwrap_or(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err("all probabilities are zero".into());
    }
    Ok(values.into_iter().map(|p| p / total).collect())
}

fn question_block(question: &SurveyQuestion, answer: &str) -> String {
    let choices: Vec<String> = question
        .options
        .iter()
        .map(|o| format!("  {} {}", o.label, o.text))
        .collect();
    format!(
        "Survey Question:\n  {}\nChoices:\n{}\nChosen answer: {}",
        question.text,
        choices.join("\n"),
        question.display(answer)
    )
}

/// Index of the largest value; the earliest wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] + 1e-12 {
            best = i;
        }
    }
    best
}

fn mean_maps(maps: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut mean = vec![0.0; width];
    for m in maps {
        for (acc, p) in mean.iter_mut().zip(m) {
            *acc += p / maps.len() as f64;
        }
    }
    mean
}

/// Two passes: role-level maps for every answered question pick the role,
/// then type-level maps within that role pick the type. Unanswered questions
/// and answers outside the option set are skipped.
pub fn augment_oracle_personality(
    respondent: &Respondent,
    questions: &[SurveyQuestion],
    gateway: &Gateway,
    config: &AugmentConfig,
) -> Result<OracleAssignment, CohortError> {
    let mut warnings = Vec::new();
    let answered: Vec<(&SurveyQuestion, String)> = questions
        .iter()
        .filter_map(|q| {
            let label = respondent.answers.get(&q.id)?;
            match q.canonicalize(label) {
                Some(canonical) => Some((q, canonical)),
                None => {
                    warnings.push(format!("answer {label:?} to {} is not an option; skipped", q.id));
                    None
                }
            }
        })
        .collect();
    if answered.is_empty() {
        return Err(CohortError::NoAnsweredQuestions(respondent.id.clone()));
    }
    let system = ChatMessage::system(config.templates.get(templates::AUGMENT_PERSONALITY));
    let schema = SchemaSpec::new("augment_probabilities", Shape::Map(Box::new(Shape::Percent)));

    let mut role_maps = Vec::new();
    for (q, answer) in &answered {
        let roles: Vec<String> = ROLES
            .iter()
            .map(|r| {
                let types: Vec<String> = r.types().iter().map(|t| t.to_string()).collect();
                format!("  {}: {}", r.name(), types.join(", "))
            })
            .collect();
        let user = format!(
            "{}\nPersonality roles:\n{}\nPredict the probability that each role would select the chosen answer. Use the role names as keys.",
            question_block(q, answer),
            roles.join("\n")
        );
        let parsed = gateway.complete_parsed(TAG_AUGMENT_ROLE, &[system.clone(), ChatMessage::user(user)], &schema, |v| {
            probability_map(v, &ROLES, PersonalityRole::parse, |a, b| a == b)
        })?;
        role_maps.push(parsed.value);
    }
    let role_mean = mean_maps(&role_maps, ROLES.len());
    let role = ROLES[argmax(&role_mean)];

    let types = role.types();
    let mut type_maps = Vec::new();
    for (q, answer) in &answered {
        let names: Vec<String> = types.iter().map(|t| t.to_string()).collect();
        let user = format!(
            "{}\nPersonality types ({}):\n  {}\nPredict the probability that each type would select the chosen answer. Use the type codes as keys.",
            question_block(q, answer),
            role.name(),
            names.join(", ")
        );
        let parsed = gateway.complete_parsed(TAG_AUGMENT_TYPE, &[system.clone(), ChatMessage::user(user)], &schema, |v| {
            probability_map(v, &types, |s| s.trim().parse::<TypeCode>().ok(), |a, b| a == b)
        })?;
        type_maps.push(parsed.value);
    }
    let type_mean = mean_maps(&type_maps, types.len());
    let type_code = types[argmax(&type_mean)];

    Ok(OracleAssignment {
        type_code,
        role,
        role_probabilities: ROLES.iter().map(|r| r.name().to_string()).zip(role_mean).collect(),
        type_probabilities: types.iter().map(|t| t.to_string()).zip(type_mean).collect(),
        questions_used: answered.len(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDimension {
    pub name: String,
    /// Features of people scoring high on this value.
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueOrientation {
    pub value_name: String,
    /// Canonical labels.
    pub high_score_choices: Vec<String>,
}

/// Which options of `question` indicate a high score on each dimension.
pub fn augment_value_orientation(
    question: &SurveyQuestion,
    dimensions: &[ValueDimension],
    gateway: &Gateway,
    config: &AugmentConfig,
) -> Result<Vec<ValueOrientation>, CohortError> {
    let choices: Vec<String> = question
        .options
        .iter()
        .map(|o| format!("{} {}", o.label, o.text))
        .collect();
    let user = format!(
        "Question: \"{}\"\nChoices: {}\nPre-assigned value: {}\nFeatures of people with high score: {}",
        question.text,
        choices.join(", "),
        dimensions.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(", "),
        dimensions.iter().map(|d| d.description.as_str()).collect::<Vec<_>>().join(" ")
    );
    let entry = Shape::Object(vec![
        Field::required("value_name", Shape::NonEmptyString),
        Field::required("high_score_choices", Shape::array(Shape::NonEmptyString)),
    ]);
    let schema = SchemaSpec::new("augment_values", Shape::OneOf(vec![Shape::non_empty_array(entry.clone()), entry]));
    let messages = [
        ChatMessage::system(config.templates.get(templates::AUGMENT_VALUES)),
        ChatMessage::user(user),
    ];
    let parsed = gateway.complete_parsed(TAG_AUGMENT_VALUES, &messages, &schema, |v| {
        let items: Vec<&Value> = match v {
            Value::Array(items) => items.iter().collect(),
            other => vec![other],
        };
        items
            .into_iter()
            .map(|item| {
                let value_name = item["value_name"].as_str().unwrap_or_default().to_string();
                let high_score_choices = item["high_score_choices"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|c| {
                        let raw = c.as_str().unwrap_or_default();
                        question
                            .canonicalize(raw)
                            .ok_or_else(|| format!("choice {raw:?} is not an option"))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ValueOrientation {
                    value_name,
                    high_score_choices,
                })
            })
            .collect()
    })?;
    Ok(parsed.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayError, MockBackend};
    use serde_json::json;

    fn respondent(answers: Value) -> Respondent {
        serde_json::from_value(json!({"id": "r1", "features": {"age": 30}, "answers": answers})).unwrap()
    }

    fn questions() -> Vec<SurveyQuestion> {
        vec![
            SurveyQuestion::lettered("Q1", "Family?", &["Very important", "Not important"]),
            SurveyQuestion::lettered("Q2", "Work?", &["Very important", "Not important"]),
        ]
    }

    #[test]
    fn picks_role_then_type() {
        let gw = Gateway::mock(
            MockBackend::new()
                .on(
                    TAG_AUGMENT_ROLE,
                    r#"{"Analysts": "5%", "Diplomats": "3%", "Sentinels": "90%", "Explorers": "2%"}"#,
                )
                .on(TAG_AUGMENT_TYPE, r#"{"ISFJ": "80%", "ISTJ": "10%", "ESFJ": "5%", "ESTJ": "5%"}"#),
        );
        let r = respondent(json!({"Q1": "(A)", "Q2": "(B)"}));
        let a = augment_oracle_personality(&r, &questions(), &gw, &AugmentConfig::default()).unwrap();
        assert_eq!(a.type_code.as_str(), "ISFJ");
        assert_eq!(a.role, PersonalityRole::Sentinels);
        assert_eq!(a.questions_used, 2);
        assert!((a.role_probabilities["Sentinels"] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn role_ties_are_lexicographic() {
        let gw = Gateway::mock(
            MockBackend::new()
                .on(TAG_AUGMENT_ROLE, r#"{"Sentinels": "50%", "Diplomats": "50%"}"#)
                .on(TAG_AUGMENT_TYPE, r#"{"INFJ": "25%", "INFP": "25%", "ENFJ": "25%", "ENFP": "25%"}"#),
        );
        let r = respondent(json!({"Q1": "(A)"}));
        let a = augment_oracle_personality(&r, &questions(), &gw, &AugmentConfig::default()).unwrap();
        assert_eq!(a.role, PersonalityRole::Diplomats);
        assert_eq!(a.type_code.as_str(), "ENFJ");
    }

    #[test]
    fn malformed_percent_is_a_schema_violation() {
        let gw = Gateway::mock(MockBackend::new().on(TAG_AUGMENT_ROLE, r#"{"Sentinels": "%%"}"#));
        let r = respondent(json!({"Q1": "(A)"}));
        assert!(matches!(
            augment_oracle_personality(&r, &questions(), &gw, &AugmentConfig::default()),
            Err(CohortError::Gateway(GatewayError::SchemaViolation { .. }))
        ));
    }

    #[test]
    fn unanswered_respondent_rejected() {
        let gw = Gateway::mock(MockBackend::new());
        let r = respondent(json!({}));
        assert!(matches!(
            augment_oracle_personality(&r, &questions(), &gw, &AugmentConfig::default()),
            Err(CohortError::NoAnsweredQuestions(_))
        ));
    }

    #[test]
    fn value_orientation() {
        let gw = Gateway::mock(MockBackend::new().on(
            TAG_AUGMENT_VALUES,
            r#"[{"value_name": "Tradition Index", "high_score_choices": ["A"]}]"#,
        ));
        let dims = [ValueDimension {
            name: "Tradition".into(),
            description: "Values customs.".into(),
        }];
        let v = augment_value_orientation(&questions()[0], &dims, &gw, &AugmentConfig::default()).unwrap();
        assert_eq!(v[0].high_score_choices, ["(A)"]);
    }
}
