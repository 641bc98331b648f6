//! Demographic features to a numeric matrix.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CohortError;
use crate::scalar::Scalar;
use crate::survey::{value_text, Respondent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingKind {
    /// Min-max scaled to [0, 1]; a constant column maps to 0.
    Numeric { min: f64, max: f64, mean: f64 },
    /// One column per category, in first-seen order. `means` fills missing values.
    OneHot { categories: Vec<String>, means: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub key: String,
    #[serde(flatten)]
    pub kind: EncodingKind,
}

/// Everything needed to encode further respondents identically.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EncodingParams {
    pub features: Vec<FeatureEncoding>,
}

fn numeric(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|x| x.is_finite()),
        _ => None,
    }
}

fn lookup<'a>(r: &'a Respondent, key: &str) -> Option<&'a Value> {
    r.features.get(key).filter(|v| value_text(v).is_some())
}

fn scale(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (x - min) / (max - min)
    } else {
        0.0
    }
}

impl EncodingParams {
    pub fn dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| match &f.kind {
                EncodingKind::Numeric { .. } => 1,
                EncodingKind::OneHot { categories, .. } => categories.len(),
            })
            .sum()
    }

    /// Encodes one respondent. Missing or unseen values take the column means.
    pub fn encode<T: Scalar>(&self, r: &Respondent) -> Vec<T> {
        let mut row = Vec::with_capacity(self.dim());
        for f in &self.features {
            let value = lookup(r, &f.key);
            match &f.kind {
                EncodingKind::Numeric { min, max, mean } => {
                    let x = value.and_then(numeric).map_or(*mean, |x| scale(x, *min, *max));
                    row.push(T::lit(x));
                }
                EncodingKind::OneHot { categories, means } => {
                    let hit = value
                        .and_then(value_text)
                        .and_then(|t| categories.iter().position(|c| *c == t));
                    match hit {
                        Some(i) => row.extend((0..categories.len()).map(|j| if i == j { T::one() } else { T::zero() })),
                        None => row.extend(means.iter().map(|&m| T::lit(m))),
                    }
                }
            }
        }
        row
    }
}

/// Builds the encoding from the respondents' features and encodes them.
///
/// A column whose present values all parse as numbers is numeric; anything
/// else is one-hot encoded.
pub fn encode_features<T: Scalar>(
    respondents: &[Respondent],
) -> Result<(Vec<Vec<T>>, EncodingParams), CohortError> {
    if respondents.is_empty() {
        return Err(CohortError::EmptyInput);
    }
    let mut keys: Vec<&str> = Vec::new();
    for r in respondents {
        for k in r.features.keys() {
            if !keys.contains(&k.as_str()) {
                keys.push(k);
            }
        }
    }
    let mut params = EncodingParams::default();
    for key in keys {
        let present: Vec<&Value> = respondents.iter().filter_map(|r| lookup(r, key)).collect();
        if present.is_empty() {
            return Err(CohortError::AllMissingColumn(key.to_string()));
        }
        let nums: Option<Vec<f64>> = present.iter().map(|v| numeric(v)).collect();
        let kind = match nums {
            Some(xs) => {
                let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = xs.iter().map(|&x| scale(x, min, max)).sum::<f64>() / xs.len() as f64;
                EncodingKind::Numeric { min, max, mean }
            }
            None => {
                let mut categories: Vec<String> = Vec::new();
                let mut counts: Vec<usize> = Vec::new();
                for t in present.iter().filter_map(|v| value_text(v)) {
                    match categories.iter().position(|c| *c == t) {
                        Some(i) => counts[i] += 1,
                        None => {
                            categories.push(t);
                            counts.push(1);
                        }
                    }
                }
                let means = counts.iter().map(|&c| c as f64 / present.len() as f64).collect();
                EncodingKind::OneHot { categories, means }
            }
        };
        params.features.push(FeatureEncoding {
            key: key.to_string(),
            kind,
        });
    }
    let matrix = respondents.iter().map(|r| params.encode(r)).collect();
    Ok((matrix, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn respondent(id: &str, features: Value) -> Respondent {
        serde_json::from_value(json!({ "id": id, "features": features })).unwrap()
    }

    #[test]
    fn min_max_scaling() {
        let rs: Vec<_> = [20, 30, 40]
            .iter()
            .enumerate()
            .map(|(i, a)| respondent(&i.to_string(), json!({ "age": a })))
            .collect();
        let (m, _) = encode_features::<f64>(&rs).unwrap();
        assert_eq!(m, vec![vec![0.0], vec![0.5], vec![1.0]]);
    }

    #[test]
    fn constant_column_is_zero() {
        let rs: Vec<_> = (0..3).map(|i| respondent(&i.to_string(), json!({ "x": 5 }))).collect();
        let (m, _) = encode_features::<f32>(&rs).unwrap();
        assert!(m.iter().all(|row| row == &[0.0]));
    }

    #[test]
    fn categorical_one_hot() {
        let rs = vec![
            respondent("a", json!({ "color": "red" })),
            respondent("b", json!({ "color": "blue" })),
        ];
        let (m, params) = encode_features::<f64>(&rs).unwrap();
        assert_eq!(m, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(params.dim(), 2);
    }

    #[test]
    fn missing_values_take_column_mean() {
        let rs = vec![
            respondent("a", json!({ "age": 20, "sex": "f" })),
            respondent("b", json!({ "age": 40, "sex": null })),
            respondent("c", json!({ "sex": "m" })),
        ];
        let (m, _) = encode_features::<f64>(&rs).unwrap();
        assert_eq!(m[2][0], 0.5);
        assert_eq!(&m[1][1..], &[0.5, 0.5]);
    }

    #[test]
    fn all_missing_column_rejected() {
        let rs = vec![respondent("a", json!({ "x": null })), respondent("b", json!({ "x": "" }))];
        assert!(matches!(
            encode_features::<f64>(&rs),
            Err(CohortError::AllMissingColumn(k)) if k == "x"
        ));
    }

    #[test]
    fn params_reencode_identically() {
        let rs = vec![
            respondent("a", json!({ "age": "25", "edu": "high" })),
            respondent("b", json!({ "age": "60", "edu": "low" })),
            respondent("c", json!({ "age": "31", "edu": "high" })),
        ];
        let (m, params) = encode_features::<f64>(&rs).unwrap();
        let back: EncodingParams = serde_json::from_str(&serde_json::to_string(&params).unwrap()).unwrap();
        for (r, row) in rs.iter().zip(&m) {
            assert_eq!(&back.encode::<f64>(r), row);
        }
    }
}
