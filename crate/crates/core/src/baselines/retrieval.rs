//! Ranking a respondent's earlier answers by relevance to a target question.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{json_agent, post_json};
use crate::gateway::BackendError;
use crate::survey::{Respondent, SurveyQuestion};

/// Text-in, vector-out embedding service.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Embedding backend speaking the common `POST {base_url}/embeddings` protocol.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    model: String,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        HttpEmbedder {
            agent: json_agent(timeout),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        let url = format!("{}/embeddings", self.base_url);
        let value = post_json(&self.agent, &url, self.api_key.as_deref(), &body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| BackendError::Transport("embedding response has no data array".into()))?;
        let vectors: Option<Vec<Vec<f64>>> = data
            .iter()
            .map(|d| d["embedding"].as_array()?.iter().map(Value::as_f64).collect())
            .collect();
        match vectors {
            Some(v) if v.len() == texts.len() => Ok(v),
            _ => Err(BackendError::Transport("malformed embedding vectors".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    pub question_id: String,
    pub question: String,
    /// Canonical label.
    pub answer: String,
    /// "(A) Very important"
    pub answer_text: String,
    pub score: f64,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard similarity of lower-cased alphanumeric token sets.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        0.0
    } else {
        ta.intersection(&tb).count() as f64 / union as f64
    }
}

/// Up to `k` of the respondent's answers to other questions, most relevant
/// first (ties in question-id order). The target question is never returned.
/// Without an embedder, or if it fails, token Jaccard similarity is used.
pub fn retrieve_top_opinions(
    respondent: &Respondent,
    target: &SurveyQuestion,
    questions: &[SurveyQuestion],
    k: usize,
    embedder: Option<&dyn Embedder>,
) -> Vec<Opinion> {
    let priors: Vec<(&SurveyQuestion, String)> = questions
        .iter()
        .filter(|q| q.id != target.id)
        .filter_map(|q| {
            let label = respondent.answers.get(&q.id)?;
            Some((q, q.canonicalize(label)?))
        })
        .collect();
    if priors.is_empty() || k == 0 {
        return Vec::new();
    }
    let embedded = embedder.and_then(|e| {
        let mut texts = vec![target.text.clone()];
        texts.extend(priors.iter().map(|(q, _)| q.text.clone()));
        match e.embed(&texts) {
            Ok(v) => Some(v),
            Err(err) => {
                tracing::warn!("embedding failed ({err}); falling back to token overlap");
                None
            }
        }
    });
    let scores: Vec<f64> = match &embedded {
        Some(v) => v[1..].iter().map(|e| cosine(&v[0], e)).collect(),
        None => priors.iter().map(|(q, _)| token_jaccard(&target.text, &q.text)).collect(),
    };
    let mut ranked: Vec<Opinion> = priors
        .into_iter()
        .zip(scores)
        .map(|((q, label), score)| Opinion {
            question_id: q.id.clone(),
            question: q.text.clone(),
            answer_text: q.display(&label),
            answer: label,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.question_id.cmp(&b.question_id))
    });
    ranked.truncate(k);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn questions() -> Vec<SurveyQuestion> {
        vec![
            SurveyQuestion::lettered("Q1", "How important is family in your life", &["Very", "Not"]),
            SurveyQuestion::lettered("Q2", "How important is work in your life", &["Very", "Not"]),
            SurveyQuestion::lettered("Q3", "Do you trust your neighbours", &["Yes", "No"]),
        ]
    }

    fn respondent(answers: Value) -> Respondent {
        serde_json::from_value(json!({"id": "r", "features": {"a": 1}, "answers": answers})).unwrap()
    }

    /// Bag-of-letters vectors: identical texts embed identically.
    struct LetterCounts;

    impl Embedder for LetterCounts {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
            Ok(texts
                .iter()
                .map(|t| {
                    let mut v = vec![0.0; 26];
                    for c in t.to_ascii_lowercase().bytes().filter(u8::is_ascii_lowercase) {
                        v[(c - b'a') as usize] += 1.0;
                    }
                    v
                })
                .collect())
        }
    }

    #[test]
    fn identical_prior_ranks_first() {
        let mut qs = questions();
        qs.push(SurveyQuestion::lettered("Q0", "Do you trust your neighbours", &["Yes", "No"]));
        let r = respondent(json!({"Q0": "(A)", "Q1": "(B)", "Q2": "(A)", "Q3": "(B)"}));
        let got = retrieve_top_opinions(&r, &qs[2], &qs, 3, Some(&LetterCounts));
        assert_eq!(got[0].question_id, "Q0");
        assert!((got[0].score - 1.0).abs() < 1e-12);
        assert!(got.iter().all(|o| o.question_id != "Q3"));
    }

    #[test]
    fn fewer_priors_than_k() {
        let r = respondent(json!({"Q1": "(A)", "Q2": "(B)", "Q3": "(A)"}));
        let got = retrieve_top_opinions(&r, &questions()[2], &questions(), 3, None);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn lexical_fallback_orders_by_overlap() {
        let qs = vec![
            SurveyQuestion::lettered("X", "family life importance", &["a", "b"]),
            SurveyQuestion::lettered("Y", "trust neighbours", &["a", "b"]),
            SurveyQuestion::lettered("T", "importance of family life", &["a", "b"]),
        ];
        let r = respondent(json!({"X": "(A)", "Y": "(B)"}));
        let got = retrieve_top_opinions(&r, &qs[2], &qs, 3, None);
        let ids: Vec<_> = got.iter().map(|o| o.question_id.as_str()).collect();
        assert_eq!(ids, ["X", "Y"]);
        // 3 shared tokens of 4
        assert!((got[0].score - 0.75).abs() < 1e-12);
        assert_eq!(got[1].score, 0.0);
    }

    #[test]
    fn ties_in_id_order() {
        let qs = vec![
            SurveyQuestion::lettered("B", "unrelated", &["a", "b"]),
            SurveyQuestion::lettered("A", "other", &["a", "b"]),
            SurveyQuestion::lettered("T", "target", &["a", "b"]),
        ];
        let r = respondent(json!({"A": "(A)", "B": "(B)"}));
        let ids: Vec<_> = retrieve_top_opinions(&r, &qs[2], &qs, 3, None)
            .into_iter()
            .map(|o| o.question_id)
            .collect();
        assert_eq!(ids, ["A", "B"]);
    }
}
