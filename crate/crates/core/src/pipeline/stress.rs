//! Stage 1: per-feature stress scoring and profile filtering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{format_stress, PipelineConfig, PipelineError};
use crate::gateway::{ChatMessage, Field, Gateway, SchemaSpec, Shape};
use crate::survey::DemographicFeature;
use crate::templates;

pub const TAG_SCORING: &str = "stress_scoring";
pub const TAG_FILTER: &str = "profile_filter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressScoredFeature {
    pub feature: DemographicFeature,
    pub stress_level: u8,
    pub explanation: String,
    /// Retention reason for kept features, exclusion reason for dropped ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMetadata {
    pub total_features: usize,
    pub retained_count: usize,
    pub average_stress_retained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressProfile {
    pub kept: Vec<StressScoredFeature>,
    pub dropped: Vec<StressScoredFeature>,
    pub dropped_profile: String,
    /// Mean stress over every feature, kept and dropped.
    pub overall_stress: f64,
    pub metadata: ProfileMetadata,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl StressProfile {
    /// Kept features plus the summary of the dropped ones: the
    /// sociodemographic context handed to the later stages.
    pub fn sociodemographic_prompt(&self) -> String {
        let kept: Vec<Value> = self
            .kept
            .iter()
            .map(|f| {
                json!({
                    "features": f.feature.key,
                    "value": f.feature.value,
                    "stress_level": f.stress_level,
                    "explanation": f.explanation,
                })
            })
            .collect();
        let mut out = format!(
            "Retained features:\n{}",
            serde_json::to_string_pretty(&kept).expect("json")
        );
        if !self.dropped_profile.trim().is_empty() {
            out.push_str("\nProfile of the remaining features:\n");
            out.push_str(self.dropped_profile.trim());
        }
        out
    }
}

pub fn mean_stress<'a>(levels: impl IntoIterator<Item = &'a StressScoredFeature>) -> f64 {
    let (sum, n) = levels
        .into_iter()
        .fold((0.0, 0usize), |(s, n), f| (s + f64::from(f.stress_level), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn scoring_schema() -> SchemaSpec {
    SchemaSpec::new(
        "stress_scoring",
        Shape::Object(vec![Field::required(
            "features",
            Shape::non_empty_array(Shape::Object(vec![
                Field::required("features", Shape::NonEmptyString).alias("feature"),
                Field::optional("value", Shape::Any),
                Field::required("stress_level", Shape::Integer { min: 0, max: 100 }),
                Field::required("explanation", Shape::NonEmptyString),
            ])),
        )]),
    )
}

fn filter_schema() -> SchemaSpec {
    let item = |reason: &str| {
        Shape::Object(vec![
            Field::required("features", Shape::NonEmptyString).alias("feature"),
            Field::optional("stress_level", Shape::Number),
            Field::optional(reason, Shape::String),
        ])
    };
    SchemaSpec::new(
        "profile_filter",
        Shape::Object(vec![
            Field::required("kept_features", Shape::array(item("retention_reason"))),
            Field::required("dropped_features", Shape::array(item("exclusion_reason"))),
            Field::required("dropped_profile", Shape::String),
            Field::optional("metadata", Shape::Any),
        ]),
    )
}

fn norm_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn str_field<'a>(obj: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str))
}

fn parse_scores(
    value: &Value,
    features: &[DemographicFeature],
) -> Result<Vec<StressScoredFeature>, String> {
    let index: HashMap<String, usize> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (norm_key(&f.key), i))
        .collect();
    let mut scored: Vec<Option<StressScoredFeature>> = vec![None; features.len()];
    for item in value["features"].as_array().into_iter().flatten() {
        let name = str_field(item, &["features", "feature"]).unwrap_or_default();
        let i = *index
            .get(&norm_key(name))
            .ok_or_else(|| format!("feature {name:?} is not one of the given features"))?;
        if scored[i].is_some() {
            return Err(format!("feature {name:?} appears more than once"));
        }
        let level = item["stress_level"].as_f64().unwrap_or_default() as u8;
        scored[i] = Some(StressScoredFeature {
            feature: features[i].clone(),
            stress_level: level,
            explanation: str_field(item, &["explanation"]).unwrap_or_default().to_string(),
            reason: None,
        });
    }
    let missing: Vec<&str> = scored
        .iter()
        .zip(features)
        .filter(|(s, _)| s.is_none())
        .map(|(_, f)| f.key.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing stress levels for features {missing:?}"));
    }
    Ok(scored.into_iter().flatten().collect())
}

/// Model's proposed split, keyed by feature index.
#[derive(Debug, Default)]
struct ProposedSplit {
    kept: Vec<(usize, Option<String>)>,
    dropped: Vec<(usize, Option<String>)>,
    profile: String,
}

fn parse_split(value: &Value, scored: &[StressScoredFeature]) -> Result<ProposedSplit, String> {
    let index: HashMap<String, usize> = scored
        .iter()
        .enumerate()
        .map(|(i, f)| (norm_key(&f.feature.key), i))
        .collect();
    let mut split = ProposedSplit {
        profile: value["dropped_profile"].as_str().unwrap_or_default().to_string(),
        ..Default::default()
    };
    let mut seen = vec![false; scored.len()];
    for (list, reason_key, kept) in [
        ("kept_features", "retention_reason", true),
        ("dropped_features", "exclusion_reason", false),
    ] {
        for item in value[list].as_array().into_iter().flatten() {
            let name = str_field(item, &["features", "feature"]).unwrap_or_default();
            let i = *index
                .get(&norm_key(name))
                .ok_or_else(|| format!("feature {name:?} is not one of the scored features"))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("feature {name:?} is listed more than once"));
            }
            let reason = str_field(item, &[reason_key]).map(str::to_string);
            if kept {
                split.kept.push((i, reason));
            } else {
                split.dropped.push((i, reason));
            }
        }
    }
    Ok(split)
}

/// Enforces the retention rule on a proposed split.
///
/// Returns (kept, dropped) index lists and warnings. Every kept feature ends
/// up at least as stressful as every dropped one.
fn repair_split(
    levels: &[u8],
    proposed_kept: &[usize],
    proposed_dropped: &[usize],
) -> (Vec<usize>, Vec<usize>, Vec<String>) {
    let n = levels.len();
    let mean = levels.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64;
    let mut warnings = Vec::new();
    let mut kept_flag = vec![None; n];
    for &i in proposed_kept {
        kept_flag[i] = Some(true);
    }
    for &i in proposed_dropped {
        kept_flag[i] = Some(false);
    }
    for (i, flag) in kept_flag.iter_mut().enumerate() {
        if flag.is_none() {
            let keep = f64::from(levels[i]) > mean;
            warnings.push(format!(
                "feature #{i} missing from the filter output; {} by the retention rule",
                if keep { "kept" } else { "dropped" }
            ));
            *flag = Some(keep);
        }
    }
    let mut kept: Vec<bool> = kept_flag.into_iter().map(|f| f.unwrap_or(false)).collect();

    if !levels.iter().any(|&l| f64::from(l) > mean) {
        if kept.iter().any(|k| !k) {
            warnings.push("no feature exceeds the mean stress; keeping all features".into());
        }
        return ((0..n).collect(), Vec::new(), warnings);
    }

    let snapshot = kept.clone();
    let max_dropped = (0..n).filter(|&i| !snapshot[i]).map(|i| levels[i]).max();
    let min_kept = (0..n).filter(|&i| snapshot[i]).map(|i| levels[i]).min();
    for i in 0..n {
        let level = levels[i];
        let below_mean = f64::from(level) < mean;
        let above_mean = f64::from(level) > mean;
        if snapshot[i] && below_mean && max_dropped.is_some_and(|m| level < m) {
            kept[i] = false;
            warnings.push(format!("feature #{i} (stress {level}) moved from kept to dropped"));
        } else if !snapshot[i] && above_mean && min_kept.is_some_and(|m| level > m) {
            kept[i] = true;
            warnings.push(format!("feature #{i} (stress {level}) moved from dropped to kept"));
        }
    }
    if !kept.iter().any(|&k| k) {
        warnings.push("filter kept no features; keeping those above the mean".into());
        for i in 0..n {
            kept[i] = f64::from(levels[i]) > mean;
        }
    }
    let kept_idx = (0..n).filter(|&i| kept[i]).collect();
    let dropped_idx = (0..n).filter(|&i| !kept[i]).collect();
    (kept_idx, dropped_idx, warnings)
}

pub fn stage1_stress_analysis(
    features: &[DemographicFeature],
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<StressProfile, PipelineError> {
    if features.is_empty() {
        return Err(PipelineError::EmptyFeatures);
    }
    let input: Vec<Value> = features.iter().map(|f| json!({ f.key.clone(): f.value })).collect();
    let messages = vec![
        ChatMessage::system(config.templates.get(templates::STRESS_ASSIGN)),
        ChatMessage::user(serde_json::to_string(&input).expect("json")),
    ];
    let scored = gateway
        .complete_parsed(TAG_SCORING, &messages, &scoring_schema(), |v| parse_scores(v, features))?
        .value;

    let overall = mean_stress(&scored);
    let scored_json: Vec<Value> = scored
        .iter()
        .map(|f| {
            json!({
                "features": f.feature.key,
                "value": f.feature.value,
                "stress_level": f.stress_level,
                "explanation": f.explanation,
            })
        })
        .collect();
    let user = format!(
        "Human features:\n{}\nAverage stress level: {}/100",
        serde_json::to_string_pretty(&json!({ "features": scored_json })).expect("json"),
        format_stress(overall)
    );
    let messages = vec![
        ChatMessage::system(config.templates.get(templates::PROFILE_FILTER)),
        ChatMessage::user(user),
    ];
    let split = gateway
        .complete_parsed(TAG_FILTER, &messages, &filter_schema(), |v| parse_split(v, &scored))?
        .value;

    let levels: Vec<u8> = scored.iter().map(|f| f.stress_level).collect();
    let proposed_kept: Vec<usize> = split.kept.iter().map(|(i, _)| *i).collect();
    let proposed_dropped: Vec<usize> = split.dropped.iter().map(|(i, _)| *i).collect();
    let (kept_idx, dropped_idx, raw_warnings) = repair_split(&levels, &proposed_kept, &proposed_dropped);
    let warnings = raw_warnings
        .into_iter()
        .map(|w| {
            // name features instead of indexes
            let mut w = w;
            for (i, f) in scored.iter().enumerate().rev() {
                w = w.replace(&format!("feature #{i} "), &format!("feature {:?} ", f.feature.key));
            }
            w
        })
        .collect();

    let reasons: HashMap<usize, Option<String>> =
        split.kept.iter().chain(split.dropped.iter()).cloned().collect();
    let with_reason = |i: usize, kept_now: bool| {
        let was_kept = proposed_kept.contains(&i);
        let reason = if was_kept == kept_now {
            reasons.get(&i).cloned().flatten()
        } else {
            Some("reassigned by the retention rule".to_string())
        };
        StressScoredFeature {
            reason,
            ..scored[i].clone()
        }
    };
    let kept: Vec<StressScoredFeature> = kept_idx.iter().map(|&i| with_reason(i, true)).collect();
    let dropped: Vec<StressScoredFeature> = dropped_idx.iter().map(|&i| with_reason(i, false)).collect();
    let metadata = ProfileMetadata {
        total_features: kept.len() + dropped.len(),
        retained_count: kept.len(),
        average_stress_retained: mean_stress(&kept),
    };
    Ok(StressProfile {
        kept,
        dropped,
        dropped_profile: split.profile,
        overall_stress: overall,
        metadata,
        warnings,
    })
}
