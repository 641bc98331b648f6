//! Single-call comparison strategies: random choice, plain question,
//! nation persona, demographics (+ ideology, + related opinions) and the
//! three-variable persona.

mod retrieval;

pub use retrieval::{cosine, retrieve_top_opinions, token_jaccard, Embedder, HttpEmbedder, Opinion};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ChatMessage, Field, Gateway, GatewayError, SchemaSpec, Shape};
use crate::survey::{stable_hash, Respondent, SimulatedResponse, SurveyQuestion};
use crate::templates::{self, PromptTemplates};

pub const TAG_BASELINE: &str = "baseline";

const SYSTEM: &str = "You are taking part in a survey. Answer every question with exactly one of the given options.";

pub const DEFAULT_TOP_K: usize = 3;

pub const DEFAULT_IDEOLOGY_PATTERNS: [&str; 3] = ["politic", "religio", "ideolog"];

/// Baseline strategy with exactly the parameters it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", try_from = "RawSpec")]
pub enum BaselineSpec {
    Random,
    NoDemo,
    NationOnlyA {
        nation: String,
    },
    NationOnlyB {
        nation: String,
    },
    DemoIdeo {
        /// Case-insensitive substrings selecting the ideology features;
        /// empty means [`DEFAULT_IDEOLOGY_PATTERNS`].
        ideology_keys: Vec<String>,
    },
    DemoIdeoOpinion {
        ideology_keys: Vec<String>,
        top_k: usize,
    },
    ThreeVariable,
}

/// Flat wire form, so that parameters a strategy does not take are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    nation: Option<String>,
    top_k: Option<usize>,
    #[serde(default)]
    ideology_keys: Option<Vec<String>>,
}

impl TryFrom<RawSpec> for BaselineSpec {
    type Error = BaselineError;

    fn try_from(raw: RawSpec) -> Result<Self, BaselineError> {
        let mut spec = BaselineSpec::from_parts(&raw.name, raw.nation.as_deref(), raw.top_k)?;
        if let Some(keys) = raw.ideology_keys {
            match &mut spec {
                BaselineSpec::DemoIdeo { ideology_keys } | BaselineSpec::DemoIdeoOpinion { ideology_keys, .. } => {
                    *ideology_keys = keys
                }
                _ => return Err(BaselineError::InvalidSpec(format!("{} takes no ideology_keys", raw.name))),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid baseline: {0}")]
    InvalidSpec(String),
}

impl BaselineSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Random => "random",
            BaselineSpec::NoDemo => "no_demo",
            BaselineSpec::NationOnlyA { .. } => "nation_only_a",
            BaselineSpec::NationOnlyB { .. } => "nation_only_b",
            BaselineSpec::DemoIdeo { .. } => "demo_ideo",
            BaselineSpec::DemoIdeoOpinion { .. } => "demo_ideo_opinion",
            BaselineSpec::ThreeVariable => "three_variable",
        }
    }

    /// Builds a spec from a name and optional parameters, rejecting
    /// parameters the strategy does not take.
    pub fn from_parts(name: &str, nation: Option<&str>, top_k: Option<usize>) -> Result<Self, BaselineError> {
        let no_nation = |spec: BaselineSpec| match nation {
            Some(_) => Err(BaselineError::InvalidSpec(format!("{name} takes no nation"))),
            None => Ok(spec),
        };
        let spec = match name {
            "random" => no_nation(BaselineSpec::Random)?,
            "no_demo" => no_nation(BaselineSpec::NoDemo)?,
            "nation_only_a" | "nation_only_b" => {
                let nation = nation
                    .filter(|n| !n.trim().is_empty())
                    .ok_or_else(|| BaselineError::InvalidSpec(format!("{name} needs a nation")))?
                    .to_string();
                if name.ends_with('a') {
                    BaselineSpec::NationOnlyA { nation }
                } else {
                    BaselineSpec::NationOnlyB { nation }
                }
            }
            "demo_ideo" => no_nation(BaselineSpec::DemoIdeo { ideology_keys: Vec::new() })?,
            "demo_ideo_opinion" => no_nation(BaselineSpec::DemoIdeoOpinion {
                ideology_keys: Vec::new(),
                top_k: top_k.unwrap_or(DEFAULT_TOP_K),
            })?,
            "three_variable" => no_nation(BaselineSpec::ThreeVariable)?,
            other => return Err(BaselineError::InvalidSpec(format!("unknown baseline {other:?}"))),
        };
        if top_k.is_some() && !matches!(spec, BaselineSpec::DemoIdeoOpinion { .. }) {
            return Err(BaselineError::InvalidSpec(format!("{name} takes no top_k")));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        match self {
            BaselineSpec::NationOnlyA { nation } | BaselineSpec::NationOnlyB { nation } if nation.trim().is_empty() => {
                Err(BaselineError::InvalidSpec("nation must not be empty".into()))
            }
            BaselineSpec::DemoIdeoOpinion { top_k: 0, .. } => {
                Err(BaselineError::InvalidSpec("top_k must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

pub struct BaselineConfig<'a> {
    pub templates: PromptTemplates,
    pub seed: u64,
    pub embedder: Option<&'a dyn Embedder>,
    pub questions_pool: &'a [SurveyQuestion],
}

fn is_ideology(key: &str, patterns: &[String]) -> bool {
    let key = key.to_lowercase();
    if patterns.is_empty() {
        DEFAULT_IDEOLOGY_PATTERNS.iter().any(|p| key.contains(p))
    } else {
        patterns.iter().any(|p| key.contains(&p.to_lowercase()))
    }
}

fn feature_lines(r: &Respondent, keep: impl Fn(&str) -> bool) -> String {
    let lines: Vec<String> = r
        .demographic_features()
        .into_iter()
        .filter(|f| keep(&f.key))
        .map(|f| format!("- {}: {}", f.key, f.value))
        .collect();
    if lines.is_empty() {
        "- (not available)".into()
    } else {
        lines.join("\n")
    }
}

fn normalized(key: &str) -> String {
    key.to_lowercase().chars().filter(|c| c.is_alphanumeric()).collect()
}

/// First feature whose normalized key contains one of `needles`.
fn find_feature(r: &Respondent, needles: &[&str]) -> String {
    r.demographic_features()
        .into_iter()
        .find(|f| {
            let k = normalized(&f.key);
            needles.iter().any(|n| k.contains(n))
        })
        .map(|f| f.value)
        .unwrap_or_else(|| "unknown".into())
}

/// The single prompt the strategy sends for this subject and question.
/// `None` for the random strategy.
pub fn render_baseline_prompt(
    spec: &BaselineSpec,
    respondent: &Respondent,
    question: &SurveyQuestion,
    config: &BaselineConfig<'_>,
) -> Option<String> {
    let options = question.render_options();
    let t = &config.templates;
    let base = [("question", question.text.as_str()), ("options", options.as_str())];
    let with = |name: &str, extra: &[(&str, &str)]| {
        let mut vars = base.to_vec();
        vars.extend_from_slice(extra);
        t.render(name, &vars)
    };
    Some(match spec {
        BaselineSpec::Random => return None,
        BaselineSpec::NoDemo => with(templates::BASELINE_NO_DEMO, &[]),
        BaselineSpec::NationOnlyA { nation } => with(templates::BASELINE_NATION_A, &[("nation", nation)]),
        BaselineSpec::NationOnlyB { nation } => with(templates::BASELINE_NATION_B, &[("nation", nation)]),
        BaselineSpec::DemoIdeo { ideology_keys } => {
            let demographics = feature_lines(respondent, |k| !is_ideology(k, ideology_keys));
            let ideology = feature_lines(respondent, |k| is_ideology(k, ideology_keys));
            with(
                templates::BASELINE_DEMO_IDEO,
                &[("demographics", &demographics), ("ideology", &ideology)],
            )
        }
        BaselineSpec::DemoIdeoOpinion { ideology_keys, top_k } => {
            let demographics = feature_lines(respondent, |k| !is_ideology(k, ideology_keys));
            let ideology = feature_lines(respondent, |k| is_ideology(k, ideology_keys));
            let opinions = retrieve_top_opinions(respondent, question, config.questions_pool, *top_k, config.embedder);
            let opinions = if opinions.is_empty() {
                "- (none)".to_string()
            } else {
                opinions
                    .iter()
                    .map(|o| format!("- Q: {}\n  A: {}", o.question, o.answer_text))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            with(
                templates::BASELINE_DEMO_IDEO_OPINION,
                &[("demographics", &demographics), ("ideology", &ideology), ("opinions", &opinions)],
            )
        }
        BaselineSpec::ThreeVariable => {
            let continent = find_feature(respondent, &["continent", "region"]);
            let area = find_feature(respondent, &["residentarea", "settlement", "urban", "rural", "area"]);
            let education = find_feature(respondent, &["education", "educational"]);
            with(
                templates::BASELINE_THREE_VARIABLE,
                &[
                    ("continent", &continent),
                    ("resident_area", &area),
                    ("education_level", &education),
                ],
            )
        }
    })
}

fn answer_schema() -> SchemaSpec {
    SchemaSpec::new(
        "baseline_answer",
        Shape::Object(vec![Field::required("answer", Shape::NonEmptyString).alias("conclusion")]),
    )
}

fn ask(
    spec: &BaselineSpec,
    respondent: &Respondent,
    question: &SurveyQuestion,
    gateway: &Gateway,
    config: &BaselineConfig<'_>,
) -> Result<String, GatewayError> {
    let prompt = render_baseline_prompt(spec, respondent, question, config).expect("not the random strategy");
    let messages = [ChatMessage::system(SYSTEM), ChatMessage::user(prompt)];
    let parsed = gateway.complete_parsed(TAG_BASELINE, &messages, &answer_schema(), |v: &Value| {
        let raw = v.get("answer").or_else(|| v.get("conclusion")).and_then(Value::as_str).unwrap_or_default();
        question.canonicalize(raw).ok_or_else(|| {
            format!("answer {raw:?} is not one of the options:\n{}", question.render_options())
        })
    })?;
    Ok(parsed.value)
}

/// Uniform draw seeded per (run seed, subject, question), so a pair gets the
/// same label however the batch is split or resumed.
pub fn random_label(seed: u64, subject: &Respondent, question: &SurveyQuestion) -> String {
    let pair_seed = seed ^ stable_hash(&subject.id) ^ stable_hash(&question.id).rotate_left(29);
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
    question.options[rng.gen_range(0..question.options.len())].label.clone()
}

/// Answers every (subject, question) pair, in subject-major order.
/// The random strategy never touches the gateway.
pub fn run_baseline(
    spec: &BaselineSpec,
    subjects: &[Respondent],
    questions: &[SurveyQuestion],
    gateway: &Gateway,
    config: &BaselineConfig<'_>,
) -> Vec<SimulatedResponse> {
    let pairs: Vec<(&Respondent, &SurveyQuestion)> =
        subjects.iter().flat_map(|s| questions.iter().map(move |q| (s, q))).collect();
    if let BaselineSpec::Random = spec {
        return pairs
            .into_iter()
            .map(|(s, q)| SimulatedResponse {
                subject_id: s.id.clone(),
                question_id: q.id.clone(),
                answer: Some(random_label(config.seed, s, q)),
                cluster: s.cluster,
                error: None,
            })
            .collect();
    }
    pairs
        .par_iter()
        .map(|(s, q)| {
            let result = ask(spec, s, q, gateway, config);
            if let Err(e) = &result {
                tracing::warn!(subject = %s.id, question = %q.id, "baseline call failed: {e}");
            }
            SimulatedResponse {
                subject_id: s.id.clone(),
                question_id: q.id.clone(),
                answer: result.as_ref().ok().cloned(),
                cluster: s.cluster,
                error: result.err().map(|e| e.to_string()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use serde_json::json;

    fn subject() -> Respondent {
        serde_json::from_value(json!({
            "id": "s1",
            "features": {
                "Continent": "North America",
                "Resident Area": "Urban",
                "Education Level": "Bachelor",
                "Age": 42,
                "Political Party": "Independent",
                "Religion": "None"
            },
            "answers": {"Q1": "(A)", "Q2": "(B)", "Q3": "(A)", "Q4": "(B)"}
        }))
        .unwrap()
    }

    fn questions() -> Vec<SurveyQuestion> {
        ["family", "work", "friends", "leisure"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                SurveyQuestion::lettered(&format!("Q{}", i + 1), &format!("How important is {t}?"), &["Very", "Not"])
            })
            .collect()
    }

    fn config(pool: &[SurveyQuestion]) -> BaselineConfig<'_> {
        BaselineConfig {
            templates: PromptTemplates::english(),
            seed: 7,
            embedder: None,
            questions_pool: pool,
        }
    }

    #[test]
    fn spec_parameters_are_exact() {
        assert!(BaselineSpec::from_parts("nation_only_a", None, None).is_err());
        assert!(BaselineSpec::from_parts("random", Some("France"), None).is_err());
        assert!(BaselineSpec::from_parts("no_demo", None, Some(3)).is_err());
        assert_eq!(
            BaselineSpec::from_parts("nation_only_b", Some("Japan"), None).unwrap(),
            BaselineSpec::NationOnlyB { nation: "Japan".into() }
        );
        let parsed: BaselineSpec = serde_json::from_str(r#"{"name": "demo_ideo_opinion"}"#).unwrap();
        assert_eq!(parsed, BaselineSpec::DemoIdeoOpinion { ideology_keys: vec![], top_k: 3 });
        assert!(serde_json::from_str::<BaselineSpec>(r#"{"name": "random", "nation": "x"}"#).is_err());
    }

    #[test]
    fn random_is_reproducible_and_roughly_uniform() {
        let qs = vec![SurveyQuestion::lettered("Q", "q", &["a", "b", "c", "d"])];
        let subjects: Vec<Respondent> = (0..4000)
            .map(|i| serde_json::from_value(json!({"id": format!("s{i}"), "features": {"a": 1}})).unwrap())
            .collect();
        let gw = Gateway::mock(MockBackend::new());
        let a = run_baseline(&BaselineSpec::Random, &subjects, &qs, &gw, &config(&qs));
        let b = run_baseline(&BaselineSpec::Random, &subjects, &qs, &gw, &config(&qs));
        assert_eq!(a, b);
        for label in ["(A)", "(B)", "(C)", "(D)"] {
            let f = a.iter().filter(|r| r.answer.as_deref() == Some(label)).count() as f64 / 4000.0;
            assert!((f - 0.25).abs() < 0.03, "{label}: {f}");
        }
    }

    #[test]
    fn three_variable_prompt() {
        let qs = questions();
        let p = render_baseline_prompt(&BaselineSpec::ThreeVariable, &subject(), &qs[0], &config(&qs)).unwrap();
        assert!(p.contains("Continent: North America"));
        assert!(p.contains("Resident area: Urban"));
        assert!(p.contains("Education level: Bachelor"));
        assert!(!p.contains("42") && !p.contains("Independent"));
    }

    #[test]
    fn opinion_prompt_has_three_priors_and_no_leak() {
        let qs = questions();
        let spec = BaselineSpec::from_parts("demo_ideo_opinion", None, None).unwrap();
        let p = render_baseline_prompt(&spec, &subject(), &qs[0], &config(&qs)).unwrap();
        assert_eq!(p.matches("- Q: ").count(), 3);
        assert_eq!(p.matches("How important is family?").count(), 1);
        assert!(p.contains("- Political Party: Independent"));
        let demo = p.split("Ideological inclinations:").next().unwrap();
        assert!(demo.contains("- Age: 42") && !demo.contains("Religion"));
    }

    #[test]
    fn prompts_are_stable() {
        let qs = questions();
        let spec = BaselineSpec::NationOnlyA { nation: "the United States".into() };
        let p = render_baseline_prompt(&spec, &subject(), &qs[1], &config(&qs)).unwrap();
        assert_eq!(
            p,
            "How would someone from the United States answer the following question:\nHow important is work?\nOptions:\n(A) Very\n(B) Not\nChoose exactly one option. Only output a JSON object of the form {\"answer\": \"(X) option text\"}."
        );
    }

    #[test]
    fn llm_answers_are_canonicalized() {
        let qs = questions();
        let gw = Gateway::mock(
            MockBackend::new()
                .on(TAG_BASELINE, r#"{"answer": "(B) Not"}"#)
                .on_contains(TAG_BASELINE, "family", r#"{"answer": "maybe"}"#),
        );
        let out = run_baseline(&BaselineSpec::NoDemo, &[subject()], &qs, &gw, &config(&qs));
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].answer, None);
        assert!(out[0].error.is_some());
        assert!(out[1..].iter().all(|r| r.answer.as_deref() == Some("(B)")));
    }
}
