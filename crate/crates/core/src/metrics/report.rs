//! Per-cluster metric tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    accuracy, build_distributions, cohen_kappa, emd, is_non_substantive, kappa_of_pairs, one_minus_jsd,
    Grouping, ItemKey, ResponseDistribution,
};
use crate::scalar::Scalar;
use crate::survey::SurveyQuestion;

/// One answer by one subject, simulated or human.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub subject_id: String,
    pub question_id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Compare against the sampled subjects' own answers.
    #[default]
    Sampled,
    /// Compare against the pooled answers of the whole population.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Drop "don't know" / "no answer" style options before comparing.
    pub exclude_non_substantive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow<T> {
    /// Cluster index, or "Avg." for the summary row.
    pub cluster: String,
    pub acc: Option<T>,
    pub one_minus_jsd: Option<T>,
    pub emd: Option<T>,
    pub kappa: Option<T>,
    /// Items compared (subject-question pairs, or questions for the global setting).
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    pub setting: Setting,
    pub rows: Vec<EvalRow<T>>,
    /// Unweighted mean of the cluster rows.
    pub average: EvalRow<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn mean<T: Scalar>(values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let present: Vec<T> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().copied().sum::<T>() / T::from_count(present.len()))
}

fn fmt<T: Scalar>(v: Option<T>) -> String {
    v.and_then(|x| x.to_f64()).map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl<T: Scalar> EvalReport<T> {
    pub const CSV_HEADER: [&'static str; 5] = ["cluster", "ACC", "1-JSD", "EMD", "kappa"];

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for row in self.rows.iter().chain(std::iter::once(&self.average)) {
            w.write_record([
                row.cluster.clone(),
                fmt(row.acc),
                fmt(row.one_minus_jsd),
                fmt(row.emd),
                fmt(row.kappa),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Mean 1 - JSD and EMD over questions where both distributions are defined.
fn distribution_scores<T: Scalar>(
    pairs: &[(&ResponseDistribution, &ResponseDistribution)],
    label: &str,
    warnings: &mut Vec<String>,
) -> (Option<T>, Option<T>) {
    let mut sims = Vec::new();
    let mut emds = Vec::new();
    for (model, human) in pairs {
        if model.is_undefined() || human.is_undefined() {
            warnings.push(format!(
                "{label}: question {} has no responses on one side; excluded",
                model.question_id
            ));
            continue;
        }
        if let (Ok(s), Ok(e)) = (one_minus_jsd::<T>(model, human), emd::<T>(model, human)) {
            sims.push(Some(s));
            emds.push(Some(e));
        }
    }
    (mean(sims.into_iter()), mean(emds.into_iter()))
}

/// Builds the per-cluster report. `predictions` must carry cluster tags;
/// `humans` are all human answers (the whole population for the global setting).
pub fn evaluate<T: Scalar>(
    questions: &[SurveyQuestion],
    predictions: &[LabeledResponse],
    humans: &[LabeledResponse],
    setting: Setting,
    options: EvalOptions,
) -> EvalReport<T> {
    let by_id: BTreeMap<&str, &SurveyQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let excluded = |q: &SurveyQuestion, label: &str| {
        options.exclude_non_substantive && q.option(label).is_some_and(|o| is_non_substantive(&o.text))
    };
    let keep = |r: &LabeledResponse| by_id.get(r.question_id.as_str()).is_some_and(|q| !excluded(q, &r.label));
    let mut warnings = Vec::new();
    let untagged = predictions.iter().filter(|r| r.cluster.is_none()).count();
    if untagged > 0 {
        warnings.push(format!("{untagged} predictions without a cluster tag ignored"));
    }
    let clusters: BTreeSet<usize> = predictions.iter().filter_map(|r| r.cluster).collect();
    let gold_all: BTreeMap<ItemKey, &LabeledResponse> = humans
        .iter()
        .map(|r| ((r.subject_id.clone(), r.question_id.clone()), r))
        .collect();
    let global_human = build_distributions(humans, questions, Grouping::GlobalPerQuestion, &excluded);

    let mut rows = Vec::new();
    for &c in &clusters {
        let label = format!("cluster {c}");
        let preds: Vec<&LabeledResponse> = predictions.iter().filter(|r| r.cluster == Some(c)).collect();
        let row = match setting {
            Setting::Sampled => {
                let mut pred = BTreeMap::new();
                let mut gold = BTreeMap::new();
                let mut missing = 0;
                for p in &preds {
                    let key = (p.subject_id.clone(), p.question_id.clone());
                    // items whose human answer is excluded drop out entirely
                    match gold_all.get(&key) {
                        Some(g) if keep(g) => {
                            pred.insert(key.clone(), p.label.clone());
                            gold.insert(key, g.label.clone());
                        }
                        Some(_) => {}
                        None => missing += 1,
                    }
                }
                if missing > 0 {
                    warnings.push(format!("{label}: {missing} predictions have no human answer; ignored"));
                }
                let paired_model: Vec<LabeledResponse> = pred
                    .iter()
                    .map(|((s, q), l)| LabeledResponse {
                        subject_id: s.clone(),
                        question_id: q.clone(),
                        label: l.clone(),
                        cluster: None,
                    })
                    .collect();
                let paired_human: Vec<LabeledResponse> = gold
                    .iter()
                    .map(|((s, q), l)| LabeledResponse {
                        subject_id: s.clone(),
                        question_id: q.clone(),
                        label: l.clone(),
                        cluster: None,
                    })
                    .collect();
                let md = build_distributions(&paired_model, questions, Grouping::GlobalPerQuestion, &excluded);
                let hd = build_distributions(&paired_human, questions, Grouping::GlobalPerQuestion, &excluded);
                let asked: BTreeSet<&str> = gold.keys().map(|(_, q)| q.as_str()).collect();
                let pairs: Vec<_> = md
                    .iter()
                    .filter(|((_, q), _)| asked.contains(q.as_str()))
                    .map(|(k, m)| (m, &hd[k]))
                    .collect();
                let (sim, e) = distribution_scores::<T>(&pairs, &label, &mut warnings);
                EvalRow {
                    cluster: c.to_string(),
                    acc: accuracy(&pred, &gold).ok(),
                    one_minus_jsd: sim,
                    emd: e,
                    kappa: cohen_kappa(&pred, &gold).ok(),
                    items: pred.len(),
                }
            }
            Setting::Global => {
                let owned: Vec<LabeledResponse> = preds.iter().map(|r| (*r).clone()).collect();
                let md = build_distributions(&owned, questions, Grouping::GlobalPerQuestion, &excluded);
                let asked: BTreeSet<&str> = preds.iter().map(|r| r.question_id.as_str()).collect();
                let pairs: Vec<_> = md
                    .iter()
                    .filter(|((_, q), _)| asked.contains(q.as_str()))
                    .map(|(k, m)| (m, &global_human[k]))
                    .collect();
                let (sim, e) = distribution_scores::<T>(&pairs, &label, &mut warnings);
                let modal: Vec<(&str, &str)> = pairs
                    .iter()
                    .filter_map(|(m, h)| Some((m.mode()?, h.mode()?)))
                    .collect();
                EvalRow {
                    cluster: c.to_string(),
                    acc: None,
                    one_minus_jsd: sim,
                    emd: e,
                    kappa: (!modal.is_empty()).then(|| kappa_of_pairs(&modal)),
                    items: modal.len(),
                }
            }
        };
        rows.push(row);
    }
    let average = EvalRow {
        cluster: "Avg.".into(),
        acc: mean(rows.iter().map(|r| r.acc)),
        one_minus_jsd: mean(rows.iter().map(|r| r.one_minus_jsd)),
        emd: mean(rows.iter().map(|r| r.emd)),
        kappa: mean(rows.iter().map(|r| r.kappa)),
        items: rows.iter().map(|r| r.items).sum(),
    };
    EvalReport {
        setting,
        rows,
        average,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(s: &str, q: &str, l: &str, c: Option<usize>) -> LabeledResponse {
        LabeledResponse {
            subject_id: s.into(),
            question_id: q.into(),
            label: l.into(),
            cluster: c,
        }
    }

    fn questions() -> Vec<SurveyQuestion> {
        vec![
            SurveyQuestion::lettered("Q1", "one", &["Yes", "No", "Don't know"]),
            SurveyQuestion::lettered("Q2", "two", &["Agree", "Neutral", "Disagree"]),
        ]
    }

    #[test]
    fn identical_predictions_score_perfectly() {
        let humans = vec![
            resp("a", "Q1", "(A)", None),
            resp("a", "Q2", "(B)", None),
            resp("b", "Q1", "(B)", None),
            resp("b", "Q2", "(C)", None),
        ];
        let preds: Vec<_> = humans.iter().map(|h| LabeledResponse { cluster: Some(0), ..h.clone() }).collect();
        let r: EvalReport<f64> = evaluate(&questions(), &preds, &humans, Setting::Sampled, EvalOptions::default());
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.average.acc, Some(1.0));
        assert_eq!(r.average.one_minus_jsd, Some(1.0));
        assert_eq!(r.average.emd, Some(0.0));
        assert_eq!(r.average.kappa, Some(1.0));
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "cluster,ACC,1-JSD,EMD,kappa");
        assert_eq!(lines[2], "Avg.,1.000000,1.000000,0.000000,1.000000");
    }

    #[test]
    fn average_is_unweighted() {
        let humans = vec![
            resp("a", "Q1", "(A)", None),
            resp("b", "Q1", "(A)", None),
            resp("c", "Q1", "(A)", None),
        ];
        let preds = vec![
            resp("a", "Q1", "(A)", Some(0)),
            resp("b", "Q1", "(B)", Some(1)),
            resp("c", "Q1", "(B)", Some(1)),
        ];
        let r: EvalReport<f64> = evaluate(&questions(), &preds, &humans, Setting::Sampled, EvalOptions::default());
        assert_eq!(r.rows[0].acc, Some(1.0));
        assert_eq!(r.rows[1].acc, Some(0.0));
        assert_eq!(r.average.acc, Some(0.5));
    }

    #[test]
    fn global_setting_pools_population() {
        let humans = vec![
            resp("a", "Q1", "(A)", None),
            resp("x", "Q1", "(A)", None),
            resp("y", "Q1", "(B)", None),
        ];
        let preds = vec![resp("a", "Q1", "(A)", Some(0))];
        let r: EvalReport<f64> = evaluate(&questions(), &preds, &humans, Setting::Global, EvalOptions::default());
        let row = &r.rows[0];
        assert_eq!(row.acc, None);
        assert!(row.one_minus_jsd.unwrap() < 1.0);
        assert_eq!(row.items, 1);
        assert!(r.to_csv().lines().nth(1).unwrap().starts_with("0,,"));
    }

    #[test]
    fn non_substantive_exclusion() {
        let humans = vec![resp("a", "Q1", "(C)", None), resp("b", "Q1", "(A)", None)];
        let preds = vec![resp("a", "Q1", "(A)", Some(0)), resp("b", "Q1", "(A)", Some(0))];
        let opts = EvalOptions {
            exclude_non_substantive: true,
        };
        let r: EvalReport<f64> = evaluate(&questions(), &preds, &humans, Setting::Sampled, opts);
        assert_eq!(r.rows[0].items, 1);
        assert_eq!(r.rows[0].acc, Some(1.0));
        let r: EvalReport<f64> = evaluate(&questions(), &preds, &humans, Setting::Sampled, EvalOptions::default());
        assert_eq!(r.rows[0].acc, Some(0.5));
    }
}
