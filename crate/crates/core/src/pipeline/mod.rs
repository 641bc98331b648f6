//! The four-stage simulation of one respondent: stress analysis, personality
//! prediction, per-process reasoning and synthesis.

mod personality;
mod reasoning;
mod stress;
mod synthesis;

pub use personality::{stage2_personality, PersonalityPrediction, SELECT_AUXILIARY, TAG_AUXILIARY, TAG_DOMINANT};
pub use reasoning::{
    stage3_impacts, stage3_reasoning, ImpactAssessment, ProcessReasoning, ReasoningSet, StageImpact,
    TAG_IMPACT, TAG_REASONING,
};
pub use stress::{
    mean_stress, stage1_stress_analysis, ProfileMetadata, StressProfile, StressScoredFeature, TAG_FILTER,
    TAG_SCORING,
};
pub use synthesis::{stage4_synthesis, votes_of, weighted_vote, SynthesisResult, Vote, TAG_SYNTHESIS, TIE_TOLERANCE};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dynamics::{FunctionStack, ProcessStage};
use crate::gateway::{Gateway, GatewayError};
use crate::survey::{DemographicFeature, SurveyQuestion};
use crate::templates::PromptTemplates;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("respondent has no demographic features")]
    EmptyFeatures,
    #[error("model never named a known process: {0:?}")]
    UnknownProcessName(String),
    #[error("no usable per-process reasoning for question {0}")]
    NoUsableReasoning(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Which processes take part in answering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    /// All four processes, combined by the synthesis stage.
    #[default]
    Full,
    /// A single process answers alone; no synthesis call.
    Ablation(ProcessStage),
}

impl SimulationMode {
    pub fn stages(self) -> Vec<ProcessStage> {
        match self {
            SimulationMode::Full => ProcessStage::ALL.to_vec(),
            SimulationMode::Ablation(stage) => vec![stage],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub templates: PromptTemplates,
    /// Overall stress at or above which unusable impact output defaults to "negative".
    pub negative_threshold: f64,
    pub mode: SimulationMode,
    /// Answer a subject's questions concurrently (bounded by the gateway).
    pub parallel_questions: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            templates: PromptTemplates::english(),
            negative_threshold: 70.0,
            mode: SimulationMode::Full,
            parallel_questions: true,
        }
    }
}

/// Stress levels print without trailing zeros: 45, 46.5, 46.67.
pub fn format_stress(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Per-question input shared by stages 3 and 4.
#[derive(Debug, Clone)]
pub struct QuestionContext<'a> {
    pub sociodemographic_prompt: String,
    pub overall_stress: f64,
    pub question: &'a SurveyQuestion,
}

/// One intermediate output, as written to the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub stage: String,
    pub output: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    /// Canonical option label.
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRun {
    pub subject_id: String,
    pub profile: Option<StressProfile>,
    pub stack: Option<FunctionStack>,
    pub outcomes: Vec<QuestionOutcome>,
    pub trace: Vec<TraceRecord>,
    /// Failure in stage 1 or 2; every question is then unanswered.
    pub error: Option<String>,
}

struct Tracer<'a> {
    subject_id: &'a str,
    question_id: Option<&'a str>,
    records: Vec<TraceRecord>,
}

impl<'a> Tracer<'a> {
    fn new(subject_id: &'a str, question_id: Option<&'a str>) -> Self {
        Tracer {
            subject_id,
            question_id,
            records: Vec::new(),
        }
    }

    fn push(&mut self, stage: &str, output: &impl Serialize, warnings: &[String]) {
        for w in warnings {
            tracing::warn!(subject = self.subject_id, question = self.question_id, stage, "{w}");
        }
        self.records.push(TraceRecord {
            subject_id: self.subject_id.to_string(),
            question_id: self.question_id.map(str::to_string),
            stage: stage.to_string(),
            output: serde_json::to_value(output).expect("trace output serializes"),
            warnings: warnings.to_vec(),
        });
    }

    fn error(&mut self, stage: &str, err: &PipelineError) {
        tracing::error!(subject = self.subject_id, question = self.question_id, stage, "{err}");
        self.push("error", &json!({ "stage": stage, "error": err.to_string() }), &[]);
    }
}

fn answer_question(
    subject_id: &str,
    question: &SurveyQuestion,
    profile: &StressProfile,
    prompt: &str,
    stack: &FunctionStack,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> (QuestionOutcome, Vec<TraceRecord>) {
    let mut tracer = Tracer::new(subject_id, Some(&question.id));
    let ctx = QuestionContext {
        sociodemographic_prompt: prompt.to_string(),
        overall_stress: profile.overall_stress,
        question,
    };
    let stages = config.mode.stages();
    let result = (|| -> Result<SynthesisResult, PipelineError> {
        let impacts = stage3_impacts(&ctx, stack, &stages, gateway, config)
            .inspect_err(|e| tracer.error("stress_impact", e))?;
        tracer.push("stress_impact", &impacts, &impacts.warnings);
        let set = stage3_reasoning(&ctx, stack, &impacts.impacts, gateway, config)
            .inspect_err(|e| tracer.error("process_reasoning", e))?;
        tracer.push("process_reasoning", &set, &set.warnings);
        match config.mode {
            SimulationMode::Full => {
                let synthesis = stage4_synthesis(&ctx, stack, &set.reasonings, gateway, config)
                    .inspect_err(|e| tracer.error("synthesis", e))?;
                tracer.push("synthesis", &synthesis, &synthesis.warnings);
                Ok(synthesis)
            }
            SimulationMode::Ablation(_) => {
                let r = &set.reasonings[0];
                let conclusion = r.reasoning_result.clone().ok_or_else(|| {
                    let e = PipelineError::NoUsableReasoning(question.id.clone());
                    tracer.error("ablation", &e);
                    e
                })?;
                let synthesis = SynthesisResult {
                    evaluations: set.reasonings.clone(),
                    conclusion,
                    explanation: r.reasoning_explanation.clone(),
                    fallback_used: false,
                    warnings: Vec::new(),
                };
                tracer.push("ablation", &synthesis, &[]);
                Ok(synthesis)
            }
        }
    })();
    let outcome = match result {
        Ok(s) => QuestionOutcome {
            question_id: question.id.clone(),
            answer: Some(s.conclusion.clone()),
            synthesis: Some(s),
            error: None,
        },
        Err(e) => QuestionOutcome {
            question_id: question.id.clone(),
            answer: None,
            synthesis: None,
            error: Some(e.to_string()),
        },
    };
    (outcome, tracer.records)
}

/// Runs every stage for one subject. `fixed_stack` skips stage 2.
///
/// Errors never abort the batch: a stage 1/2 failure marks the whole subject,
/// a later failure marks only its question.
pub fn simulate_subject(
    subject_id: &str,
    features: &[DemographicFeature],
    questions: &[SurveyQuestion],
    fixed_stack: Option<FunctionStack>,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> SubjectRun {
    let mut tracer = Tracer::new(subject_id, None);
    let failed = |e: PipelineError, profile, stack, mut trace: Vec<TraceRecord>, records: Vec<TraceRecord>| {
        trace.extend(records);
        SubjectRun {
            subject_id: subject_id.to_string(),
            profile,
            stack,
            outcomes: questions
                .iter()
                .map(|q| QuestionOutcome {
                    question_id: q.id.clone(),
                    answer: None,
                    synthesis: None,
                    error: Some(e.to_string()),
                })
                .collect(),
            trace,
            error: Some(e.to_string()),
        }
    };

    let profile = match stage1_stress_analysis(features, gateway, config) {
        Ok(p) => p,
        Err(e) => {
            tracer.error("stress_analysis", &e);
            return failed(e, None, None, Vec::new(), tracer.records);
        }
    };
    tracer.push("stress_analysis", &profile, &profile.warnings);
    let prompt = profile.sociodemographic_prompt();

    let stack = match fixed_stack {
        Some(stack) => {
            tracer.push(
                "personality",
                &json!({ "stack": stack, "type_code": stack.type_code(), "source": "fixed" }),
                &[],
            );
            stack
        }
        None => match stage2_personality(&prompt, profile.overall_stress, gateway, config) {
            Ok(p) => {
                tracer.push(
                    "personality",
                    &json!({
                        "stack": p.stack,
                        "type_code": p.stack.type_code(),
                        "source": "predicted",
                        "fallback_used": p.fallback_used,
                    }),
                    &p.warnings,
                );
                p.stack
            }
            Err(e) => {
                tracer.error("personality", &e);
                return failed(e, Some(profile), None, Vec::new(), tracer.records);
            }
        },
    };

    let run_one = |q: &SurveyQuestion| answer_question(subject_id, q, &profile, &prompt, &stack, gateway, config);
    let answered: Vec<(QuestionOutcome, Vec<TraceRecord>)> = if config.parallel_questions {
        questions.par_iter().map(run_one).collect()
    } else {
        questions.iter().map(run_one).collect()
    };
    let mut trace = tracer.records;
    let mut outcomes = Vec::with_capacity(answered.len());
    for (outcome, records) in answered {
        outcomes.push(outcome);
        trace.extend(records);
    }
    SubjectRun {
        subject_id: subject_id.to_string(),
        profile: Some(profile),
        stack: Some(stack),
        outcomes,
        trace,
        error: None,
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use std::sync::Arc;

    use crate::gateway::{Gateway, GenerationConfig, MockBackend, RequestLog};
    use crate::survey::SurveyQuestion;

    /// Mock gateway with an in-memory request log.
    pub fn logged(mock: MockBackend) -> Gateway {
        let config = GenerationConfig {
            backoff_ms: 0,
            ..GenerationConfig::default()
        };
        Gateway::with_log(Arc::new(mock), config, Some(Arc::new(RequestLog::in_memory())))
    }

    pub fn family_question() -> SurveyQuestion {
        SurveyQuestion::lettered(
            "Q1",
            "For family, would you say it is very important, rather important, not very important, or not important at all?",
            &["Very important", "Rather important", "Not very important", "Not important at all"],
        )
    }
}
