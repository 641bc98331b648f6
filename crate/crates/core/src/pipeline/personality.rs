//! Stage 2: dominant and auxiliary process selection.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{format_stress, PipelineConfig, PipelineError};
use crate::dynamics::{
    all_process_descriptions, auxiliary_candidates, derive_stack, is_legal_auxiliary,
    CognitiveFunction, FunctionStack, ProcessStage,
};
use crate::gateway::{ChatMessage, Field, Gateway, GatewayError, SchemaSpec, Shape};
use crate::templates;

pub const TAG_DOMINANT: &str = "personality_dominant";
pub const TAG_AUXILIARY: &str = "personality_auxiliary";

pub const SELECT_AUXILIARY: &str = "Select auxiliary from process candidates.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalityPrediction {
    pub stack: FunctionStack,
    /// True when the model never named a legal auxiliary and the first
    /// candidate was used instead.
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn selection_schema(name: &str) -> SchemaSpec {
    let entry = Shape::Object(vec![
        Field::optional("reasoning_stage", Shape::String),
        Field::required("process", Shape::NonEmptyString),
    ]);
    SchemaSpec::new(name, Shape::OneOf(vec![Shape::non_empty_array(entry.clone()), entry]))
}

fn entries(value: &Value) -> Vec<&Value> {
    match value {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    }
}

fn entry_stage(entry: &Value) -> Option<ProcessStage> {
    entry
        .get("reasoning_stage")
        .and_then(Value::as_str)
        .and_then(ProcessStage::parse)
}

fn entry_process(entry: &Value) -> Result<CognitiveFunction, String> {
    let name = entry.get("process").and_then(Value::as_str).unwrap_or_default();
    CognitiveFunction::parse_name(name).ok_or_else(|| {
        format!(
            "{name:?} is not one of the eight processes ({})",
            CognitiveFunction::ALL.map(|f| f.name()).join(", ")
        )
    })
}

fn pick_dominant(value: &Value) -> Result<CognitiveFunction, String> {
    let items = entries(value);
    let entry = items
        .iter()
        .find(|e| entry_stage(e) == Some(ProcessStage::Dominant))
        .or_else(|| items.first())
        .ok_or("no process selected")?;
    entry_process(entry)
}

fn pick_auxiliary(value: &Value, dominant: CognitiveFunction) -> Result<CognitiveFunction, String> {
    let items = entries(value);
    if let Some(entry) = items.iter().find(|e| entry_stage(e) == Some(ProcessStage::Auxiliary)) {
        return entry_process(entry);
    }
    // no stage labels: the first entry that is not the dominant again
    for entry in &items {
        let f = entry_process(entry)?;
        if f != dominant {
            return Ok(f);
        }
    }
    Err("no auxiliary process selected".into())
}

fn candidates_text(dominant: CognitiveFunction) -> String {
    let candidates = auxiliary_candidates(dominant);
    let mut out = format!(
        "get_next_process(current_stage=\"Auxiliary\", previous_processes=[\"{}\"]) returned:",
        dominant.name()
    );
    for (i, f) in candidates.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, f.full_entry()));
    }
    out
}

fn unknown_process(e: GatewayError) -> PipelineError {
    match e {
        GatewayError::SchemaViolation { last_raw, .. } => PipelineError::UnknownProcessName(last_raw),
        other => PipelineError::Gateway(other),
    }
}

pub fn stage2_personality(
    sociodemographic_prompt: &str,
    overall_stress: f64,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<PersonalityPrediction, PipelineError> {
    let mut messages = vec![
        ChatMessage::system(config.templates.get(templates::PERSONALITY)),
        ChatMessage::user(format!(
            "{sociodemographic_prompt}\nStress level: {}/100",
            format_stress(overall_stress)
        )),
        ChatMessage::tool(format!(
            "get_all_process_desc() returned:\n{}",
            all_process_descriptions()
        )),
    ];
    let dominant = gateway
        .complete_parsed(TAG_DOMINANT, &messages, &selection_schema("personality_dominant"), pick_dominant)
        .map_err(unknown_process)?;
    let dom = dominant.value;

    messages.push(ChatMessage::assistant(dominant.raw));
    messages.push(ChatMessage::user(SELECT_AUXILIARY));
    messages.push(ChatMessage::tool(candidates_text(dom)));
    let schema = selection_schema("personality_auxiliary");
    let first = gateway
        .complete_parsed(TAG_AUXILIARY, &messages, &schema, |v| pick_auxiliary(v, dom))
        .map_err(unknown_process)?;

    let mut warnings = Vec::new();
    let mut aux = first.value;
    if !is_legal_auxiliary(dom, aux) {
        let [a, b] = auxiliary_candidates(dom);
        messages.push(ChatMessage::assistant(first.raw));
        messages.push(ChatMessage::user(format!(
            "{} cannot follow {} as the auxiliary process. {SELECT_AUXILIARY} Choose either {} or {}.",
            aux.name(),
            dom.name(),
            a.name(),
            b.name()
        )));
        let retry = gateway.complete_parsed(TAG_AUXILIARY, &messages, &schema, |v| pick_auxiliary(v, dom));
        match retry {
            Ok(s) if is_legal_auxiliary(dom, s.value) => aux = s.value,
            Ok(s) => {
                warnings.push(format!(
                    "auxiliary {} is illegal for dominant {}; using {}",
                    s.value.name(),
                    dom.name(),
                    a.name()
                ));
                aux = a;
            }
            Err(e) => {
                warnings.push(format!(
                    "auxiliary re-selection failed ({e}); using {}",
                    a.name()
                ));
                aux = a;
            }
        }
    }
    let fallback_used = !warnings.is_empty();
    let stack = derive_stack(dom, aux).expect("auxiliary was checked");
    Ok(PersonalityPrediction {
        stack,
        fallback_used,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::CognitiveFunction::*;
    use crate::gateway::{ChatRole, MockBackend};
    use crate::pipeline::testing::logged;

    fn run(mock: MockBackend) -> (Result<PersonalityPrediction, PipelineError>, Gateway) {
        let gw = Gateway::mock(mock);
        let r = stage2_personality("profile", 46.5, &gw, &PipelineConfig::default());
        (r, gw)
    }

    #[test]
    fn legal_pair_derives_stack() {
        let (r, _) = run(
            MockBackend::new()
                .on(TAG_DOMINANT, r#"[{"reasoning_stage": "Dominant", "process": "Introverted Sensing"}]"#)
                .on(
                    TAG_AUXILIARY,
                    r#"[{"reasoning_stage": "Dominant", "process": "Introverted Sensing"},
                        {"reasoning_stage": "Auxiliary", "process": "Extroverted Feeling"}]"#,
                ),
        );
        let p = r.unwrap();
        assert_eq!(p.stack.type_code().as_str(), "ISFJ");
        assert_eq!((p.stack.tertiary, p.stack.inferior), (Ti, Ne));
        assert!(!p.fallback_used);
    }

    #[test]
    fn illegal_auxiliary_falls_back_after_one_reprompt() {
        let gw = logged(
            MockBackend::new()
                .on(TAG_DOMINANT, r#"{"reasoning_stage": "Dominant", "process": "Extraverted Thinking"}"#)
                .on(TAG_AUXILIARY, r#"{"reasoning_stage": "Auxiliary", "process": "Introverted Thinking"}"#),
        );
        let p = stage2_personality("profile", 46.5, &gw, &PipelineConfig::default()).unwrap();
        assert!(p.fallback_used);
        assert_eq!(p.stack.auxiliary, auxiliary_candidates(Te)[0]);
        assert_eq!(p.stack.auxiliary, Si);
        let records = gw.log().unwrap().records();
        assert_eq!(records.iter().filter(|r| r.stage_tag == TAG_AUXILIARY).count(), 2);
    }

    #[test]
    fn transcript_follows_tool_protocol() {
        let gw = logged(
            MockBackend::new()
                .on(TAG_DOMINANT, r#"[{"process": "Ne"}]"#)
                .on(TAG_AUXILIARY, r#"[{"process": "Fi"}]"#),
        );
        let p = stage2_personality("profile", 50.0, &gw, &PipelineConfig::default()).unwrap();
        assert_eq!(p.stack.type_code().as_str(), "ENFP");
        let records = gw.log().unwrap().records();
        let aux = &records[1].messages;
        let roles: Vec<ChatRole> = aux.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [
                ChatRole::System,
                ChatRole::User,
                ChatRole::Tool,
                ChatRole::Assistant,
                ChatRole::User,
                ChatRole::Tool
            ]
        );
        assert_eq!(aux[1].content, "profile\nStress level: 50/100");
        assert_eq!(aux[4].content, SELECT_AUXILIARY);
        assert!(aux[5].content.contains("Introverted Thinking") && aux[5].content.contains("Introverted Feeling"));
    }

    #[test]
    fn unknown_dominant_is_an_error() {
        let (r, _) = run(MockBackend::new().on(TAG_DOMINANT, r#"[{"process": "Telepathy"}]"#));
        assert!(matches!(r, Err(PipelineError::UnknownProcessName(_))));
    }
}
