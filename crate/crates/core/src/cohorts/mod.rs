//! Respondent cohorts: feature encoding, clustering, representative
//! sampling and oracle-personality augmentation.

mod augment;
mod encode;
mod kmeans;

pub use augment::{
    augment_oracle_personality, augment_value_orientation, AugmentConfig, OracleAssignment, ValueDimension,
    ValueOrientation, TAG_AUGMENT_ROLE, TAG_AUGMENT_TYPE, TAG_AUGMENT_VALUES,
};
pub use encode::{encode_features, EncodingKind, EncodingParams, FeatureEncoding};
pub use kmeans::{distance, kmeans, silhouette, silhouette_select_k, squared_distance, KMeansConfig, KMeansFit};

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::scalar::Scalar;
use crate::survey::Respondent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("no respondents")]
    EmptyInput,
    #[error("feature {0:?} is missing for every respondent")]
    AllMissingColumn(String),
    #[error("cannot form {k} clusters from {n} rows")]
    KTooLarge { k: usize, n: usize },
    #[error("k range {start}..={end} must lie within [2, {n} - 1]")]
    InvalidKRange { start: usize, end: usize, n: usize },
    #[error("respondent {0} has no answered question")]
    NoAnsweredQuestions(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<T> {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<T>>,
    /// Respondent id to cluster index, in input order.
    pub assignments: IndexMap<String, usize>,
    pub silhouette_by_k: BTreeMap<usize, T>,
    pub inertia: T,
    pub feature_encoding: EncodingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    /// Candidate k values for the silhouette scan; clipped to `[2, n - 1]`.
    pub k_range: RangeInclusive<usize>,
    /// Skip the scan and use this k.
    pub fixed_k: Option<usize>,
    pub seed: u64,
    pub kmeans: KMeansConfig,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            k_range: 2..=30,
            fixed_k: None,
            seed: 0,
            kmeans: KMeansConfig::default(),
        }
    }
}

/// Encodes, picks k and fits the final clustering.
pub fn fit_clusters<T: Scalar>(
    respondents: &[Respondent],
    options: &ClusterOptions,
) -> Result<ClusterModel<T>, CohortError> {
    let (matrix, encoding) = encode_features::<T>(respondents)?;
    let n = matrix.len();
    let (k, silhouette_by_k) = match options.fixed_k {
        Some(k) => (k, BTreeMap::new()),
        None => {
            let start = (*options.k_range.start()).max(2);
            let end = (*options.k_range.end()).min(n.saturating_sub(1));
            silhouette_select_k(&matrix, start..=end, options.seed, &options.kmeans)?
        }
    };
    let fit = kmeans(&matrix, k, options.seed, &options.kmeans)?;
    Ok(ClusterModel {
        k,
        seed: options.seed,
        centroids: fit.centroids,
        assignments: respondents
            .iter()
            .zip(fit.assignments)
            .map(|(r, c)| (r.id.clone(), c))
            .collect(),
        silhouette_by_k,
        inertia: fit.inertia,
        feature_encoding: encoding,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Up to `n` members drawn without replacement from each cluster.
    RandomN(usize),
    /// The member nearest each centroid.
    Centroid,
}

/// Representatives tagged with their cluster, grouped by cluster index.
///
/// Respondents missing from the model's assignments are ignored.
pub fn sample_representatives<T: Scalar>(
    model: &ClusterModel<T>,
    respondents: &[Respondent],
    strategy: SamplingStrategy,
    seed: u64,
) -> Vec<Respondent> {
    let mut members: Vec<Vec<&Respondent>> = vec![Vec::new(); model.k];
    for r in respondents {
        if let Some(&c) = model.assignments.get(&r.id) {
            members[c].push(r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (c, group) in members.iter().enumerate() {
        let picked: Vec<&Respondent> = match strategy {
            SamplingStrategy::RandomN(per_cluster) => {
                let take = per_cluster.min(group.len());
                let mut idx = sample(&mut rng, group.len(), take).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| group[i]).collect()
            }
            SamplingStrategy::Centroid => group
                .iter()
                .map(|r| (distance(&model.feature_encoding.encode::<T>(r), &model.centroids[c]), *r))
                .min_by(|(da, a), (db, b)| {
                    da.partial_cmp(db)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| a.id.cmp(&b.id))
                })
                .map(|(_, r)| r)
                .into_iter()
                .collect(),
        };
        out.extend(picked.into_iter().map(|r| Respondent {
            cluster: Some(c),
            ..r.clone()
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn blobs() -> Vec<Respondent> {
        let pts = [(0.0, 0.0), (0.1, 0.0), (0.0, 0.1), (10.0, 10.0), (10.1, 10.0), (10.0, 10.1)];
        pts.iter()
            .enumerate()
            .map(|(i, (x, y))| {
                serde_json::from_value(json!({"id": format!("r{i}"), "features": {"x": x, "y": y}})).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_blobs_pick_two() {
        let model: ClusterModel<f64> = fit_clusters(&blobs(), &ClusterOptions::default()).unwrap();
        assert_eq!(model.k, 2);
        assert_eq!(model.silhouette_by_k.keys().copied().collect::<Vec<_>>(), [2, 3, 4, 5]);
        assert!(model.silhouette_by_k[&2] > model.silhouette_by_k[&3]);
        let a = model.assignments["r0"];
        assert!(["r1", "r2"].iter().all(|id| model.assignments[*id] == a));
        assert!(["r3", "r4", "r5"].iter().all(|id| model.assignments[*id] != a));
    }

    #[test]
    fn sampling_rules() {
        let rs = blobs();
        let model: ClusterModel<f64> = fit_clusters(&rs, &ClusterOptions::default()).unwrap();
        let all = sample_representatives(&model, &rs, SamplingStrategy::RandomN(20), 1);
        assert_eq!(all.len(), 6);
        let two = sample_representatives(&model, &rs, SamplingStrategy::RandomN(2), 1);
        assert_eq!(two.len(), 4);
        assert_eq!(two, sample_representatives(&model, &rs, SamplingStrategy::RandomN(2), 1));
        let centers = sample_representatives(&model, &rs, SamplingStrategy::Centroid, 0);
        assert_eq!(centers.len(), 2);
        assert!(centers.iter().all(|r| r.cluster.is_some()));
    }

    #[test]
    fn centroid_of_singleton_cluster() {
        let mut rs = blobs();
        rs.truncate(4);
        let options = ClusterOptions {
            fixed_k: Some(2),
            ..Default::default()
        };
        let model: ClusterModel<f32> = fit_clusters(&rs, &options).unwrap();
        let centers = sample_representatives(&model, &rs, SamplingStrategy::Centroid, 0);
        assert!(centers.iter().any(|r| r.id == "r3"));
    }
}
