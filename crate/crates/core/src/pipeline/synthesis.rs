//! Stage 4: review of the per-process reasoning and final answer.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::reasoning::{clamp_weight, resolve_stage, text_field, ProcessReasoning};
use super::{PipelineConfig, PipelineError, QuestionContext};
use crate::dynamics::{FunctionStack, ProcessStage};
use crate::gateway::{ChatMessage, Field, Gateway, GatewayError, SchemaSpec, Shape};
use crate::templates;

pub const TAG_SYNTHESIS: &str = "synthesis";

/// Weights closer than this count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub stage: ProcessStage,
    pub label: String,
    pub weight: f64,
}

/// Option with the largest summed weight. Ties go to the option backed by
/// the highest-ranking process (dominant first). `None` without votes.
pub fn weighted_vote(votes: &[Vote]) -> Option<String> {
    // (label, total weight, best rank)
    let mut tally: Vec<(&str, f64, usize)> = Vec::new();
    for v in votes {
        match tally.iter_mut().find(|(l, _, _)| *l == v.label) {
            Some(entry) => {
                entry.1 += v.weight;
                entry.2 = entry.2.min(v.stage.rank());
            }
            None => tally.push((&v.label, v.weight, v.stage.rank())),
        }
    }
    let mut best: Option<(&str, f64, usize)> = None;
    for cand in tally {
        best = match best {
            None => Some(cand),
            Some(b) if cand.1 > b.1 + TIE_TOLERANCE => Some(cand),
            Some(b) if (cand.1 - b.1).abs() <= TIE_TOLERANCE && cand.2 < b.2 => Some(cand),
            keep => keep,
        };
    }
    best.map(|(l, _, _)| l.to_string())
}

pub fn votes_of(reasonings: &[ProcessReasoning]) -> Vec<Vote> {
    reasonings
        .iter()
        .filter_map(|r| {
            r.reasoning_result.as_ref().map(|label| Vote {
                stage: r.reasoning_stage,
                label: label.clone(),
                weight: r.weight,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub evaluations: Vec<ProcessReasoning>,
    /// Canonical option label.
    pub conclusion: String,
    pub explanation: String,
    /// True when the conclusion came from the local weighted vote rather
    /// than from the model.
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn synthesis_schema() -> SchemaSpec {
    let conclusion = Shape::Object(vec![
        Field::required("conclusion", Shape::NonEmptyString),
        Field::optional("explanation", Shape::String),
    ]);
    SchemaSpec::new(
        "synthesis",
        Shape::OneOf(vec![Shape::non_empty_array(Shape::Any), conclusion]),
    )
}

struct Parsed {
    evaluations: Vec<ProcessReasoning>,
    conclusion: String,
    explanation: String,
    warnings: Vec<String>,
}

fn parse_synthesis(
    value: &Value,
    ctx: &QuestionContext<'_>,
    stack: &FunctionStack,
    previous: &[ProcessReasoning],
) -> Result<Parsed, String> {
    let items: Vec<&Value> = match value {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    };
    let concl = items
        .iter()
        .find(|i| i.get("conclusion").is_some())
        .ok_or("the output has no conclusion entry")?;
    let raw = text_field(concl, &["conclusion"]);
    let conclusion = ctx.question.canonicalize(&raw).ok_or_else(|| {
        format!(
            "conclusion {raw:?} is not one of the options:\n{}",
            ctx.question.render_options()
        )
    })?;

    let mut warnings = Vec::new();
    let mut evaluations = Vec::with_capacity(previous.len());
    for prev in previous {
        let stage = prev.reasoning_stage;
        let entry = items
            .iter()
            .filter(|i| i.get("conclusion").is_none())
            .find(|i| resolve_stage(i, stack) == Some(stage));
        let Some(entry) = entry else {
            warnings.push(format!("no evaluation for {stage}; keeping the previous reasoning"));
            evaluations.push(prev.clone());
            continue;
        };
        let mut eval = prev.clone();
        let raw_result = text_field(entry, &["reasoning_result"]);
        if !raw_result.is_empty() {
            match ctx.question.canonicalize(&raw_result) {
                Some(label) => {
                    eval.reasoning_result = Some(label);
                    eval.raw_result = raw_result;
                }
                None => warnings.push(format!(
                    "{stage} revised result {raw_result:?} matches no option; kept the previous one"
                )),
            }
        }
        let explanation = text_field(entry, &["reasoning_explanation", "reasoning_explained"]);
        if !explanation.is_empty() {
            eval.reasoning_explanation = explanation;
        }
        let evaluate = text_field(entry, &["reasoning_evaluate"]);
        eval.reasoning_evaluate = (!evaluate.is_empty()).then_some(evaluate);
        if let Some(w) = entry.get("weight").and_then(Value::as_f64) {
            let w = clamp_weight(stage, w, &mut warnings);
            if (w - prev.weight).abs() > TIE_TOLERANCE {
                warnings.push(format!("{stage} weight revised from {} to {w}", prev.weight));
            }
            eval.weight = w;
        }
        if eval.reasoning_result.is_none() {
            eval.weight = 0.0;
        }
        evaluations.push(eval);
    }
    Ok(Parsed {
        evaluations,
        conclusion,
        explanation: text_field(concl, &["explanation"]),
        warnings,
    })
}

fn usable(reasonings: &[ProcessReasoning]) -> bool {
    reasonings
        .iter()
        .any(|r| r.reasoning_result.is_some() && r.weight > 0.0)
}

pub fn stage4_synthesis(
    ctx: &QuestionContext<'_>,
    stack: &FunctionStack,
    reasonings: &[ProcessReasoning],
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<SynthesisResult, PipelineError> {
    if !usable(reasonings) {
        return Err(PipelineError::NoUsableReasoning(ctx.question.id.clone()));
    }
    let previous: Vec<Value> = reasonings
        .iter()
        .map(|r| {
            json!({
                "reasoning_stage": r.reasoning_stage.as_str(),
                "process": r.process.name(),
                "process_description": r.process_description,
                "reasoning_result": r.reasoning_result.as_deref().map(|l| ctx.question.display(l)),
                "reasoning_explanation": r.reasoning_explanation,
                "weight": r.weight,
            })
        })
        .collect();
    let user = format!(
        "Human feature:\n{}\n{}\nPrevious nodes' output:\n{}",
        ctx.sociodemographic_prompt,
        ctx.question.render(),
        serde_json::to_string_pretty(&previous).expect("json")
    );
    let messages = vec![
        ChatMessage::system(config.templates.get(templates::SYNTHESIS)),
        ChatMessage::user(user),
    ];
    let parsed = gateway.complete_parsed(TAG_SYNTHESIS, &messages, &synthesis_schema(), |v| {
        parse_synthesis(v, ctx, stack, reasonings)
    });
    match parsed {
        Ok(s) => {
            let p = s.value;
            Ok(SynthesisResult {
                evaluations: p.evaluations,
                conclusion: p.conclusion,
                explanation: p.explanation,
                fallback_used: false,
                warnings: p.warnings,
            })
        }
        Err(GatewayError::SchemaViolation { reason, .. }) => {
            let conclusion = weighted_vote(&votes_of(reasonings))
                .ok_or_else(|| PipelineError::NoUsableReasoning(ctx.question.id.clone()))?;
            Ok(SynthesisResult {
                evaluations: reasonings.to_vec(),
                explanation: "Weighted vote over the per-process results.".into(),
                conclusion,
                fallback_used: true,
                warnings: vec![format!("synthesis output unusable ({reason}); used the weighted vote")],
            })
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{stack_from_type, StressImpact};
    use crate::gateway::MockBackend;
    use crate::pipeline::testing::family_question;
    use ProcessStage::*;

    fn vote(stage: ProcessStage, label: &str, weight: f64) -> Vote {
        Vote {
            stage,
            label: label.into(),
            weight,
        }
    }

    #[test]
    fn vote_sums_weights() {
        let votes = [
            vote(Dominant, "(A)", 0.6),
            vote(Auxiliary, "(A)", 0.5),
            vote(Tertiary, "(C)", 0.3),
            vote(Inferior, "(D)", 0.2),
        ];
        assert_eq!(weighted_vote(&votes).as_deref(), Some("(A)"));
        let votes = [vote(Dominant, "(A)", 0.4), vote(Auxiliary, "(B)", 0.3), vote(Tertiary, "(B)", 0.3)];
        assert_eq!(weighted_vote(&votes).as_deref(), Some("(B)"));
    }

    #[test]
    fn vote_ties_follow_hierarchy() {
        let votes = [vote(Auxiliary, "(B)", 0.5), vote(Dominant, "(A)", 0.5)];
        assert_eq!(weighted_vote(&votes).as_deref(), Some("(A)"));
        let votes = [vote(Dominant, "(B)", 0.0)];
        assert_eq!(weighted_vote(&votes).as_deref(), Some("(B)"));
        assert_eq!(weighted_vote(&[]), None);
        // 0.1 + 0.2 vs 0.3 is a tie within tolerance
        let votes = [vote(Tertiary, "(A)", 0.1), vote(Inferior, "(A)", 0.2), vote(Auxiliary, "(B)", 0.3)];
        assert_eq!(weighted_vote(&votes).as_deref(), Some("(B)"));
    }

    fn reasonings(stack: &FunctionStack) -> Vec<ProcessReasoning> {
        [("(A)", 0.6), ("(A)", 0.5), ("(C)", 0.3), ("(D)", 0.2)]
            .iter()
            .zip(ProcessStage::ALL)
            .map(|((label, w), stage)| ProcessReasoning {
                reasoning_stage: stage,
                process: stack.get(stage),
                stress_impact: StressImpact::Positive,
                process_description: stack.get(stage).normal_description().into(),
                reasoning_result: Some(label.to_string()),
                raw_result: label.to_string(),
                reasoning_explanation: "because".into(),
                weight: *w,
                reasoning_evaluate: None,
            })
            .collect()
    }

    fn ctx(q: &crate::survey::SurveyQuestion) -> QuestionContext<'_> {
        QuestionContext {
            sociodemographic_prompt: "profile".into(),
            overall_stress: 46.5,
            question: q,
        }
    }

    #[test]
    fn synthesis_accepts_revisions() {
        let q = family_question();
        let stack = stack_from_type("ISFJ").unwrap();
        let gw = Gateway::mock(MockBackend::new().on(
            TAG_SYNTHESIS,
            r#"[{"reasoning_stage": "Dominant", "reasoning_result": "(A) Very important", "reasoning_evaluate": "aligned", "weight": 0.6},
                {"reasoning_stage": "Inferior", "reasoning_result": "(B) Rather important", "weight": 0.1},
                {"conclusion": "(A) Very important", "explanation": "dominant wins"}]"#,
        ));
        let r = stage4_synthesis(&ctx(&q), &stack, &reasonings(&stack), &gw, &PipelineConfig::default()).unwrap();
        assert_eq!(r.conclusion, "(A)");
        assert!(!r.fallback_used);
        assert_eq!(r.evaluations.len(), 4);
        assert_eq!(r.evaluations[0].reasoning_evaluate.as_deref(), Some("aligned"));
        assert_eq!(r.evaluations[3].reasoning_result.as_deref(), Some("(B)"));
        assert_eq!(r.evaluations[3].weight, 0.1);
        // two missing evaluations + one weight revision
        assert_eq!(r.warnings.len(), 3);
    }

    #[test]
    fn invalid_conclusion_falls_back_to_vote() {
        let q = family_question();
        let stack = stack_from_type("ISFJ").unwrap();
        let gw = Gateway::mock(MockBackend::new().on(TAG_SYNTHESIS, r#"[{"conclusion": "(E) Unsure"}]"#));
        let r = stage4_synthesis(&ctx(&q), &stack, &reasonings(&stack), &gw, &PipelineConfig::default()).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.conclusion, "(A)");
    }

    #[test]
    fn no_usable_reasoning() {
        let q = family_question();
        let stack = stack_from_type("ISFJ").unwrap();
        let mut rs = reasonings(&stack);
        for r in &mut rs {
            r.weight = 0.0;
        }
        let gw = Gateway::mock(MockBackend::new());
        assert!(matches!(
            stage4_synthesis(&ctx(&q), &stack, &rs, &gw, &PipelineConfig::default()),
            Err(PipelineError::NoUsableReasoning(_))
        ));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn brute_force(votes: &[Vote]) -> Option<String> {
            let labels: std::collections::BTreeSet<&str> = votes.iter().map(|v| v.label.as_str()).collect();
            let score = |l: &str| -> (f64, usize) {
                let total = votes.iter().filter(|v| v.label == l).map(|v| v.weight).sum();
                let rank = votes.iter().filter(|v| v.label == l).map(|v| v.stage.rank()).min().unwrap();
                (total, rank)
            };
            let max = labels.iter().map(|l| score(l).0).fold(f64::NEG_INFINITY, f64::max);
            labels
                .iter()
                .filter(|l| score(l).0 >= max - TIE_TOLERANCE)
                .min_by_key(|l| score(l).1)
                .map(|l| l.to_string())
        }

        proptest! {
            #[test]
            fn matches_brute_force(
                picks in proptest::collection::vec((0usize..4, 0usize..4, 0u32..=10), 1..4),
            ) {
                // one vote per stage, weights on a 0.1 grid so ties happen
                let mut votes = Vec::new();
                let mut used = [false; 4];
                for (stage, label, w) in picks {
                    if std::mem::replace(&mut used[stage], true) {
                        continue;
                    }
                    votes.push(Vote {
                        stage: ProcessStage::ALL[stage],
                        label: format!("({})", (b'A' + label as u8) as char),
                        weight: f64::from(w) / 10.0,
                    });
                }
                prop_assert_eq!(weighted_vote(&votes), brute_force(&votes));
            }
        }
    }
}
