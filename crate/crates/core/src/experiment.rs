//! Batch driver: runs one method over many subjects and converts outputs
//! into the shapes the metrics expect.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_baseline, BaselineConfig, BaselineError, BaselineSpec, Embedder};
use crate::dynamics::{stack_for, FunctionStack, ProcessStage, TypeCode};
use crate::gateway::Gateway;
use crate::metrics::LabeledResponse;
use crate::pipeline::{simulate_subject, PipelineConfig, SimulationMode, TraceRecord};
use crate::survey::{stable_hash, Respondent, SimulatedResponse, SurveyQuestion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// The full four-stage pipeline.
    #[serde(alias = "pipeline")]
    Mark,
    /// The pipeline with a single process answering.
    Ablation { stage: ProcessStage },
    Baseline { spec: BaselineSpec },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Mark => "mark".into(),
            Method::Ablation { stage } => format!("ablation_{}", stage.as_str().to_lowercase()),
            Method::Baseline { spec } => format!("baseline_{}", spec.name()),
        }
    }
}

/// Where the personality used by the pipeline comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PersonalityStrategy {
    /// Stage 2 predicts it from demographics.
    #[default]
    Predicted,
    /// A uniformly drawn type per subject; `seed` defaults to the run seed.
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// The type stored on the respondent by augmentation.
    Oracle,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("respondent {0} has no oracle personality; run augmentation first")]
    MissingOracle(String),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

pub struct ExperimentConfig<'a> {
    pub method: Method,
    pub personality: PersonalityStrategy,
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub embedder: Option<&'a dyn Embedder>,
}

/// Everything produced for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectOutput {
    pub subject_id: String,
    pub responses: Vec<SimulatedResponse>,
    pub trace: Vec<TraceRecord>,
}

/// The type a subject gets under the random strategy.
pub fn random_type(seed: u64, subject_id: &str) -> TypeCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(subject_id));
    *TypeCode::all().choose(&mut rng).expect("sixteen types")
}

/// The stack to impose on a subject, `None` when stage 2 should predict it.
pub fn fixed_stack(
    strategy: PersonalityStrategy,
    subject: &Respondent,
    run_seed: u64,
) -> Result<Option<FunctionStack>, ExperimentError> {
    Ok(match strategy {
        PersonalityStrategy::Predicted => None,
        PersonalityStrategy::Random { seed } => Some(stack_for(random_type(seed.unwrap_or(run_seed), &subject.id))),
        PersonalityStrategy::Oracle => Some(stack_for(
            subject
                .oracle_personality
                .ok_or_else(|| ExperimentError::MissingOracle(subject.id.clone()))?,
        )),
    })
}

/// Runs the configured method subject by subject, handing each result to
/// `sink` as soon as it is complete. Preconditions (oracle types present,
/// baseline parameters valid) are checked before any call is made.
pub fn run_subjects(
    subjects: &[Respondent],
    questions: &[SurveyQuestion],
    question_pool: &[SurveyQuestion],
    gateway: &Gateway,
    config: &ExperimentConfig<'_>,
    mut sink: impl FnMut(SubjectOutput),
) -> Result<(), ExperimentError> {
    match &config.method {
        Method::Baseline { spec } => {
            spec.validate()?;
            let bc = BaselineConfig {
                templates: config.pipeline.templates.clone(),
                seed: config.seed,
                embedder: config.embedder,
                questions_pool: question_pool,
            };
            for s in subjects {
                sink(SubjectOutput {
                    subject_id: s.id.clone(),
                    responses: run_baseline(spec, std::slice::from_ref(s), questions, gateway, &bc),
                    trace: Vec::new(),
                });
            }
        }
        Method::Mark | Method::Ablation { .. } => {
            let stacks = subjects
                .iter()
                .map(|s| fixed_stack(config.personality, s, config.seed))
                .collect::<Result<Vec<_>, _>>()?;
            let mut pipeline = config.pipeline.clone();
            pipeline.mode = match config.method {
                Method::Ablation { stage } => SimulationMode::Ablation(stage),
                _ => SimulationMode::Full,
            };
            for (s, stack) in subjects.iter().zip(stacks) {
                let run = simulate_subject(&s.id, &s.demographic_features(), questions, stack, gateway, &pipeline);
                sink(SubjectOutput {
                    subject_id: s.id.clone(),
                    responses: run
                        .outcomes
                        .into_iter()
                        .map(|o| SimulatedResponse {
                            subject_id: s.id.clone(),
                            question_id: o.question_id,
                            answer: o.answer,
                            cluster: s.cluster,
                            error: o.error,
                        })
                        .collect(),
                    trace: run.trace,
                });
            }
        }
    }
    Ok(())
}

/// Human answers mapped to canonical labels. Answers that match no option
/// are skipped and counted in the returned warnings.
pub fn human_responses(respondents: &[Respondent], questions: &[SurveyQuestion]) -> (Vec<LabeledResponse>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for r in respondents {
        for q in questions {
            let Some(raw) = r.answers.get(&q.id) else { continue };
            match q.canonicalize(raw) {
                Some(label) => out.push(LabeledResponse {
                    subject_id: r.id.clone(),
                    question_id: q.id.clone(),
                    label,
                    cluster: r.cluster,
                }),
                None => warnings.push(format!("respondent {} answer {raw:?} to {} matches no option", r.id, q.id)),
            }
        }
    }
    (out, warnings)
}

/// Successful simulated answers; failed pairs are left out and counted.
pub fn predicted_responses(responses: &[SimulatedResponse]) -> (Vec<LabeledResponse>, Vec<String>) {
    let failed = responses.iter().filter(|r| r.answer.is_none()).count();
    let warnings = if failed > 0 {
        vec![format!("{failed} subject-question pairs have no simulated answer; excluded from metrics")]
    } else {
        Vec::new()
    };
    let labeled = responses
        .iter()
        .filter_map(|r| {
            Some(LabeledResponse {
                subject_id: r.subject_id.clone(),
                question_id: r.question_id.clone(),
                label: r.answer.clone()?,
                cluster: r.cluster,
            })
        })
        .collect();
    (labeled, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use serde_json::json;

    fn subject(id: &str, oracle: Option<&str>) -> Respondent {
        let mut v = json!({"id": id, "features": {"Age": 30}, "answers": {"Q1": "A"}, "cluster": 0});
        if let Some(t) = oracle {
            v["oracle_personality"] = json!(t);
        }
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn method_serde_forms() {
        let m: Method = serde_json::from_value(json!({"kind": "pipeline"})).unwrap();
        assert_eq!(m, Method::Mark);
        let m: Method = serde_json::from_value(json!({"kind": "ablation", "stage": "Inferior"})).unwrap();
        assert_eq!(m.label(), "ablation_inferior");
        let m: Method =
            serde_json::from_value(json!({"kind": "baseline", "spec": {"name": "nation_only_a", "nation": "Peru"}}))
                .unwrap();
        assert_eq!(m.label(), "baseline_nation_only_a");
        let p: PersonalityStrategy = serde_json::from_value(json!({"kind": "random"})).unwrap();
        assert_eq!(p, PersonalityStrategy::Random { seed: None });
    }

    #[test]
    fn random_types_are_seeded_per_subject() {
        assert_eq!(random_type(3, "a"), random_type(3, "a"));
        let drawn: std::collections::BTreeSet<TypeCode> = (0..400).map(|i| random_type(9, &format!("s{i}"))).collect();
        assert_eq!(drawn.len(), 16);
    }

    #[test]
    fn oracle_requires_augmentation_before_any_call() {
        let subjects = [subject("a", Some("ISFJ")), subject("b", None)];
        let qs = [SurveyQuestion::lettered("Q1", "q", &["x", "y"])];
        let gw = Gateway::mock(MockBackend::new());
        let config = ExperimentConfig {
            method: Method::Mark,
            personality: PersonalityStrategy::Oracle,
            pipeline: PipelineConfig::default(),
            seed: 0,
            embedder: None,
        };
        let mut seen = 0;
        let err = run_subjects(&subjects, &qs, &qs, &gw, &config, |_| seen += 1).unwrap_err();
        assert_eq!(err, ExperimentError::MissingOracle("b".into()));
        assert_eq!(seen, 0);
    }

    #[test]
    fn human_answers_canonicalized() {
        let qs = [SurveyQuestion::lettered("Q1", "q", &["x", "y"])];
        let (h, w) = human_responses(&[subject("a", None)], &qs);
        assert_eq!(h[0].label, "(A)");
        assert_eq!(h[0].cluster, Some(0));
        assert!(w.is_empty());
    }
}
