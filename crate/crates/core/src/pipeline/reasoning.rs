//! Stage 3: stress impact per process, then per-process reasoning.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{format_stress, PipelineConfig, PipelineError, QuestionContext};
use crate::dynamics::{CognitiveFunction, FunctionStack, ProcessStage, StressImpact};
use crate::gateway::{ChatMessage, Field, Gateway, GatewayError, SchemaSpec, Shape};
use crate::templates;

pub const TAG_IMPACT: &str = "stress_impact";
pub const TAG_REASONING: &str = "process_reasoning";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageImpact {
    pub reasoning_stage: ProcessStage,
    pub process: CognitiveFunction,
    pub stress_impact: StressImpact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactAssessment {
    pub impacts: Vec<StageImpact>,
    /// True when the model's output was unusable and impacts were set from
    /// the overall stress threshold.
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessReasoning {
    pub reasoning_stage: ProcessStage,
    pub process: CognitiveFunction,
    pub stress_impact: StressImpact,
    pub process_description: String,
    /// Canonical option label, `None` when the model's answer matched no option.
    pub reasoning_result: Option<String>,
    pub raw_result: String,
    pub reasoning_explanation: String,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_evaluate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSet {
    pub reasonings: Vec<ProcessReasoning>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Stage an output entry refers to: its `reasoning_stage`, or failing that,
/// the stage whose process it names.
pub(crate) fn resolve_stage(entry: &Value, stack: &FunctionStack) -> Option<ProcessStage> {
    if let Some(stage) = entry
        .get("reasoning_stage")
        .and_then(Value::as_str)
        .and_then(ProcessStage::parse)
    {
        return Some(stage);
    }
    let process = entry
        .get("process")
        .and_then(Value::as_str)
        .and_then(CognitiveFunction::parse_name)?;
    stack.processes().into_iter().find(|(_, f)| *f == process).map(|(s, _)| s)
}

/// Entries keyed by active stage; every active stage must appear exactly once.
/// Entries for inactive stages are ignored.
pub(crate) fn entries_by_stage<'a>(
    value: &'a Value,
    stack: &FunctionStack,
    stages: &[ProcessStage],
) -> Result<Vec<(ProcessStage, &'a Value)>, String> {
    let items: Vec<&Value> = match value {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    };
    let mut found: Vec<Option<&Value>> = vec![None; stages.len()];
    for item in items {
        let Some(stage) = resolve_stage(item, stack) else {
            continue;
        };
        if let Some(pos) = stages.iter().position(|s| *s == stage) {
            if found[pos].replace(item).is_some() {
                return Err(format!("stage {stage} appears more than once"));
            }
        }
    }
    let missing: Vec<&str> = stages
        .iter()
        .zip(&found)
        .filter(|(_, f)| f.is_none())
        .map(|(s, _)| s.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing entries for stages {}", missing.join(", ")));
    }
    Ok(stages.iter().copied().zip(found.into_iter().flatten()).collect())
}

fn selected_processes(stack: &FunctionStack, stages: &[ProcessStage]) -> String {
    let list: Vec<Value> = stages
        .iter()
        .map(|&s| json!({"reasoning_stage": s.as_str(), "process": stack.get(s).name()}))
        .collect();
    serde_json::to_string(&list).expect("json")
}

fn impact_schema() -> SchemaSpec {
    let entry = Shape::Object(vec![
        Field::optional("reasoning_stage", Shape::String),
        Field::optional("process", Shape::String),
        Field::required("stress_impact", Shape::enumeration(&["positive", "negative"])),
    ]);
    SchemaSpec::new("stress_impact", Shape::OneOf(vec![Shape::non_empty_array(entry.clone()), entry]))
}

pub fn stage3_impacts(
    ctx: &QuestionContext<'_>,
    stack: &FunctionStack,
    stages: &[ProcessStage],
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<ImpactAssessment, PipelineError> {
    let user = format!(
        "Human feature:\n{}\nCurrent stress level: {}/100\nSelected thinking process:\n{}\n{}",
        ctx.sociodemographic_prompt,
        format_stress(ctx.overall_stress),
        selected_processes(stack, stages),
        ctx.question.render()
    );
    let messages = vec![
        ChatMessage::system(config.templates.get(templates::STRESS_IMPACT)),
        ChatMessage::user(user),
    ];
    let parsed = gateway.complete_parsed(TAG_IMPACT, &messages, &impact_schema(), |v| {
        entries_by_stage(v, stack, stages).map(|entries| {
            entries
                .into_iter()
                .map(|(stage, e)| StageImpact {
                    reasoning_stage: stage,
                    process: stack.get(stage),
                    stress_impact: e["stress_impact"]
                        .as_str()
                        .and_then(StressImpact::parse)
                        .expect("schema checked"),
                })
                .collect::<Vec<_>>()
        })
    });
    match parsed {
        Ok(s) => Ok(ImpactAssessment {
            impacts: s.value,
            fallback_used: false,
            warnings: Vec::new(),
        }),
        Err(GatewayError::SchemaViolation { reason, .. }) => {
            let impact = if ctx.overall_stress >= config.negative_threshold {
                StressImpact::Negative
            } else {
                StressImpact::Positive
            };
            Ok(ImpactAssessment {
                impacts: stages
                    .iter()
                    .map(|&s| StageImpact {
                        reasoning_stage: s,
                        process: stack.get(s),
                        stress_impact: impact,
                    })
                    .collect(),
                fallback_used: true,
                warnings: vec![format!(
                    "stress impact output unusable ({reason}); all stages set to {} by threshold {}",
                    impact.as_str(),
                    config.negative_threshold
                )],
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn reasoning_schema() -> SchemaSpec {
    let entry = Shape::Object(vec![
        Field::optional("reasoning_stage", Shape::String),
        Field::optional("process", Shape::String),
        Field::optional("process_description", Shape::Any),
        Field::required("reasoning_result", Shape::NonEmptyString),
        Field::optional("reasoning_explained", Shape::String).alias("reasoning_explanation"),
        Field::required("weight", Shape::Number),
    ]);
    SchemaSpec::new("process_reasoning", Shape::OneOf(vec![Shape::non_empty_array(entry.clone()), entry]))
}

pub(crate) fn text_field(entry: &Value, keys: &[&str]) -> String {
    keys.iter()
        .find_map(|k| entry.get(*k).and_then(Value::as_str))
        .unwrap_or_default()
        .to_string()
}

/// Clamps into [0, 1], reporting out-of-range values.
pub(crate) fn clamp_weight(stage: ProcessStage, weight: f64, warnings: &mut Vec<String>) -> f64 {
    if weight.is_nan() {
        warnings.push(format!("{stage} weight is not a number; using 0"));
        return 0.0;
    }
    let clamped = weight.clamp(0.0, 1.0);
    if clamped != weight {
        warnings.push(format!("{stage} weight {weight} clamped to {clamped}"));
    }
    clamped
}

fn build_reasonings(
    value: &Value,
    ctx: &QuestionContext<'_>,
    stack: &FunctionStack,
    impacts: &[StageImpact],
) -> Result<(Vec<ProcessReasoning>, Vec<String>), String> {
    let stages: Vec<ProcessStage> = impacts.iter().map(|i| i.reasoning_stage).collect();
    let entries = entries_by_stage(value, stack, &stages)?;
    let mut warnings = Vec::new();
    let reasonings = entries
        .into_iter()
        .zip(impacts)
        .map(|((stage, e), impact)| {
            let raw_result = text_field(e, &["reasoning_result"]);
            let weight = clamp_weight(stage, e["weight"].as_f64().unwrap_or(0.0), &mut warnings);
            ProcessReasoning {
                reasoning_stage: stage,
                process: impact.process,
                stress_impact: impact.stress_impact,
                process_description: impact.process.description(impact.stress_impact).to_string(),
                reasoning_result: ctx.question.canonicalize(&raw_result),
                raw_result,
                reasoning_explanation: text_field(e, &["reasoning_explained", "reasoning_explanation"]),
                weight,
                reasoning_evaluate: None,
            }
        })
        .collect();
    Ok((reasonings, warnings))
}

fn unmappable(reasonings: &[ProcessReasoning]) -> Vec<&ProcessReasoning> {
    reasonings.iter().filter(|r| r.reasoning_result.is_none()).collect()
}

pub fn stage3_reasoning(
    ctx: &QuestionContext<'_>,
    stack: &FunctionStack,
    impacts: &[StageImpact],
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<ReasoningSet, PipelineError> {
    let previous: Vec<Value> = impacts
        .iter()
        .map(|i| {
            json!({
                "reasoning_stage": i.reasoning_stage.as_str(),
                "process": i.process.name(),
                "stress_impact": i.stress_impact.as_str(),
                "process_description": i.process.description(i.stress_impact),
            })
        })
        .collect();
    let user = format!(
        "Human feature:\n{}\nOverall stress level: {}/100\n{}\nPrevious node's output:\n{}",
        ctx.sociodemographic_prompt,
        format_stress(ctx.overall_stress),
        ctx.question.render(),
        serde_json::to_string_pretty(&previous).expect("json")
    );
    let mut messages = vec![
        ChatMessage::system(config.templates.get(templates::PROCESS_REASONING)),
        ChatMessage::user(user),
    ];
    let schema = reasoning_schema();
    let parse = |v: &Value| build_reasonings(v, ctx, stack, impacts);
    let first = gateway.complete_parsed(TAG_REASONING, &messages, &schema, parse)?;
    let (mut reasonings, mut warnings) = first.value;

    let bad = unmappable(&reasonings);
    if !bad.is_empty() {
        let names: Vec<String> = bad
            .iter()
            .map(|r| format!("{} ({:?})", r.reasoning_stage, r.raw_result))
            .collect();
        messages.push(ChatMessage::assistant(first.raw));
        messages.push(ChatMessage::user(format!(
            "The reasoning_result of {} does not match any option. Each reasoning_result must be one of:\n{}\nOutput the complete JSON array again.",
            names.join(", "),
            ctx.question.render_options()
        )));
        match gateway.complete_parsed(TAG_REASONING, &messages, &schema, parse) {
            Ok(retry) => {
                let (r, w) = retry.value;
                reasonings = r;
                warnings = w;
            }
            Err(GatewayError::SchemaViolation { reason, .. }) => {
                warnings.push(format!("re-prompt for unmappable results failed: {reason}"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    for r in reasonings.iter_mut().filter(|r| r.reasoning_result.is_none()) {
        warnings.push(format!(
            "{} result {:?} matches no option; dropped from the vote",
            r.reasoning_stage, r.raw_result
        ));
        r.weight = 0.0;
    }
    Ok(ReasoningSet { reasonings, warnings })
}
