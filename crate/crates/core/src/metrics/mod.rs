//! Agreement between simulated and human answers: accuracy, 1 - JSD, EMD and
//! Cohen's kappa, over per-question response distributions.

mod report;

pub use report::{evaluate, EvalOptions, EvalReport, EvalRow, LabeledResponse, Setting};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::survey::SurveyQuestion;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("prediction and gold keys differ ({0})")]
    KeyMismatch(String),
    #[error("distributions are over different option sets")]
    OptionSetMismatch,
    #[error("distribution for question {0} has no responses")]
    UndefinedDistribution(String),
    #[error("nothing to compare")]
    EmptyInput,
}

/// (subject id, question id)
pub type ItemKey = (String, String);

fn check_keys<V>(pred: &BTreeMap<ItemKey, V>, gold: &BTreeMap<ItemKey, V>) -> Result<(), MetricError> {
    if let Some((s, q)) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(MetricError::KeyMismatch(format!("{s}/{q} has no gold label")));
    }
    if let Some((s, q)) = gold.keys().find(|k| !pred.contains_key(*k)) {
        return Err(MetricError::KeyMismatch(format!("{s}/{q} has no prediction")));
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Fraction of items whose labels match exactly.
pub fn accuracy<T: Scalar>(
    pred: &BTreeMap<ItemKey, String>,
    gold: &BTreeMap<ItemKey, String>,
) -> Result<T, MetricError> {
    check_keys(pred, gold)?;
    let hits = pred.iter().filter(|(k, v)| gold[*k] == **v).count();
    Ok(T::from_count(hits) / T::from_count(pred.len()))
}

/// Cohen's kappa treating prediction and gold as two raters. Returns 0 when
/// chance agreement is 1 (both raters constant on the same label).
pub fn cohen_kappa<T: Scalar>(
    pred: &BTreeMap<ItemKey, String>,
    gold: &BTreeMap<ItemKey, String>,
) -> Result<T, MetricError> {
    check_keys(pred, gold)?;
    let pairs: Vec<(&str, &str)> = pred.iter().map(|(k, v)| (v.as_str(), gold[k].as_str())).collect();
    Ok(kappa_of_pairs(&pairs))
}

/// Kappa over (rater 1, rater 2) label pairs; 0 for no pairs.
pub fn kappa_of_pairs<T: Scalar>(pairs: &[(&str, &str)]) -> T {
    if pairs.is_empty() {
        return T::zero();
    }
    let n = T::from_count(pairs.len());
    let labels: BTreeSet<&str> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let agree = pairs.iter().filter(|(a, b)| a == b).count();
    let p_o = T::from_count(agree) / n;
    let p_e: T = labels
        .iter()
        .map(|l| {
            let a = pairs.iter().filter(|(x, _)| x == l).count();
            let b = pairs.iter().filter(|(_, y)| y == l).count();
            T::from_count(a) / n * (T::from_count(b) / n)
        })
        .sum();
    let denom = T::one() - p_e;
    if denom.abs() <= T::epsilon() {
        tracing::warn!("kappa undefined: chance agreement is 1; reporting 0");
        return T::zero();
    }
    (p_o - p_e) / denom
}

/// Counts per option label for one question (and optionally one group).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseDistribution {
    pub question_id: String,
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
}

impl ResponseDistribution {
    pub fn empty(question_id: &str, labels: Vec<String>) -> Self {
        let counts = vec![0; labels.len()];
        ResponseDistribution {
            question_id: question_id.to_string(),
            labels,
            counts,
        }
    }

    pub fn for_question(question: &SurveyQuestion) -> Self {
        Self::empty(&question.id, question.labels())
    }

    /// Adds one response; false if the label is not in the option set.
    pub fn add(&mut self, label: &str) -> bool {
        match self.labels.iter().position(|l| l == label) {
            Some(i) => {
                self.counts[i] += 1;
                true
            }
            None => false,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_undefined(&self) -> bool {
        self.total() == 0
    }

    pub fn probabilities<T: Scalar>(&self) -> Option<Vec<T>> {
        let total = self.total();
        (total > 0).then(|| {
            self.counts
                .iter()
                .map(|&c| T::lit(c as f64) / T::lit(total as f64))
                .collect()
        })
    }

    /// Most frequent label; the earliest option wins ties. `None` when empty.
    pub fn mode(&self) -> Option<&str> {
        let mut best: Option<usize> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 && best.is_none_or(|b| c > self.counts[b]) {
                best = Some(i);
            }
        }
        best.map(|i| self.labels[i].as_str())
    }

    fn paired<T: Scalar>(&self, other: &Self) -> Result<(Vec<T>, Vec<T>), MetricError> {
        if self.labels != other.labels {
            return Err(MetricError::OptionSetMismatch);
        }
        let p = self
            .probabilities()
            .ok_or_else(|| MetricError::UndefinedDistribution(self.question_id.clone()))?;
        let q = other
            .probabilities()
            .ok_or_else(|| MetricError::UndefinedDistribution(other.question_id.clone()))?;
        Ok((p, q))
    }
}

fn kl_base2<T: Scalar>(p: &[T], m: &[T]) -> T {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence with base-2 logarithms, in [0, 1].
pub fn jsd<T: Scalar>(p: &[T], q: &[T]) -> T {
    let half = T::lit(0.5);
    let m: Vec<T> = p.iter().zip(q).map(|(&a, &b)| half * (a + b)).collect();
    let d = half * kl_base2(p, &m) + half * kl_base2(q, &m);
    d.max(T::zero()).min(T::one())
}

/// Wasserstein-1 between distributions over ordered options, with adjacent
/// options `1 / (k - 1)` apart, in [0, 1].
pub fn emd_probs<T: Scalar>(p: &[T], q: &[T]) -> T {
    let k = p.len();
    if k < 2 {
        return T::zero();
    }
    let mut cp = T::zero();
    let mut cq = T::zero();
    let mut work = T::zero();
    for i in 0..k - 1 {
        cp += p[i];
        cq += q[i];
        work += (cp - cq).abs();
    }
    work / T::from_count(k - 1)
}

pub fn one_minus_jsd<T: Scalar>(p: &ResponseDistribution, q: &ResponseDistribution) -> Result<T, MetricError> {
    let (p, q) = p.paired::<T>(q)?;
    Ok(T::one() - jsd(&p, &q))
}

pub fn emd<T: Scalar>(p: &ResponseDistribution, q: &ResponseDistribution) -> Result<T, MetricError> {
    let (p, q) = p.paired::<T>(q)?;
    Ok(emd_probs(&p, &q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    PerClusterPerQuestion,
    GlobalPerQuestion,
}

/// Group key: cluster (None for the global grouping) and question id.
pub type GroupKey = (Option<usize>, String);

/// Count distributions for every question, per cluster or pooled.
///
/// Responses to unknown questions or with labels outside the (kept) option
/// set are skipped. With the per-cluster grouping, responses without a
/// cluster tag are skipped too. Every cluster seen gets a distribution for
/// every question, so empty groups show up as undefined.
pub fn build_distributions(
    responses: &[LabeledResponse],
    questions: &[SurveyQuestion],
    grouping: Grouping,
    excluded: &dyn Fn(&SurveyQuestion, &str) -> bool,
) -> BTreeMap<GroupKey, ResponseDistribution> {
    let templates: BTreeMap<&str, ResponseDistribution> = questions
        .iter()
        .map(|q| {
            let labels = q.labels().into_iter().filter(|l| !excluded(q, l)).collect();
            (q.id.as_str(), ResponseDistribution::empty(&q.id, labels))
        })
        .collect();
    let groups: BTreeSet<Option<usize>> = match grouping {
        Grouping::GlobalPerQuestion => [None].into(),
        Grouping::PerClusterPerQuestion => responses.iter().filter_map(|r| r.cluster).map(Some).collect(),
    };
    let mut out = BTreeMap::new();
    for g in &groups {
        for (qid, d) in &templates {
            out.insert((*g, qid.to_string()), d.clone());
        }
    }
    for r in responses {
        let group = match grouping {
            Grouping::GlobalPerQuestion => None,
            Grouping::PerClusterPerQuestion => match r.cluster {
                Some(c) => Some(c),
                None => continue,
            },
        };
        if let Some(d) = out.get_mut(&(group, r.question_id.clone())) {
            d.add(&r.label);
        }
    }
    out
}

/// Option texts treated as non-substantive when exclusion is enabled.
pub fn is_non_substantive(text: &str) -> bool {
    let t = text.trim().to_lowercase().replace('’', "'");
    ["don't know", "dont know", "do not know", "no answer", "not asked", "refused", "missing", "not applicable"]
        .iter()
        .any(|p| t.contains(p))
}
