//! Lloyd's k-means with k-means++ seeding, and silhouette-based choice of k.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CohortError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    /// Independent restarts; the lowest-inertia fit wins.
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { n_init: 10, max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<T> {
    pub centroids: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
    pub inertia: T,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<T>,
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    squared_distance(a, b).sqrt()
}

fn nearest<T: Scalar>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(point, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus<T: Scalar>(data: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = data.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|p| squared_distance(p, &data[chosen[0]]).to_f64().unwrap_or(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // rounding can land on an exhausted tail; step back to a positive weight
            while d2[pick] <= 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // every point coincides with a center already: take any unused row
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.gen_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, p) in data.iter().enumerate() {
            let d = squared_distance(p, &data[next]).to_f64().unwrap_or(0.0);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

fn lloyd<T: Scalar>(data: &[Vec<T>], mut centroids: Vec<Vec<T>>, max_iter: usize) -> KMeansFit<T> {
    let n = data.len();
    let k = centroids.len();
    let dim = data[0].len();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        let mut inertia = T::zero();
        for (i, p) in data.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in data.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, &x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::from_count(counts[j]);
                centroids[j] = sums[j].iter().map(|&s| s / c).collect();
            }
        }
        // an emptied cluster takes over the point farthest from its centroid
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = squared_distance(&data[a], &centroids[assignments[a]]);
                        let db = squared_distance(&data[b], &centroids[assignments[b]]);
                        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[assignments[i]] -= 1;
                    counts[j] = 1;
                    centroids[j] = data[i].clone();
                    assignments[i] = j;
                }
            }
        }
    }
    let inertia = data
        .iter()
        .zip(&assignments)
        .map(|(p, &j)| squared_distance(p, &centroids[j]))
        .sum();
    KMeansFit {
        centroids,
        assignments,
        inertia,
        inertia_history: history,
    }
}

/// Deterministic for a fixed `seed`.
pub fn kmeans<T: Scalar>(
    data: &[Vec<T>],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<KMeansFit<T>, CohortError> {
    if data.is_empty() {
        return Err(CohortError::EmptyInput);
    }
    if k == 0 || k > data.len() {
        return Err(CohortError::KTooLarge { k, n: data.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit<T>> = None;
    for _ in 0..config.n_init.max(1) {
        let init = plus_plus(data, k, &mut rng);
        let fit = lloyd(data, init, config.max_iter.max(1));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette coefficient (Euclidean). Points alone in their cluster score 0.
pub fn silhouette<T: Scalar>(data: &[Vec<T>], assignments: &[usize]) -> T {
    let n = data.len();
    if n == 0 {
        return T::zero();
    }
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = T::zero();
    for i in 0..n {
        let mut sums = vec![T::zero(); k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += distance(&data[i], &data[j]);
                counts[assignments[j]] += 1;
            }
        }
        let own = assignments[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / T::from_count(counts[own]);
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / T::from_count(counts[c]))
            .fold(T::infinity(), T::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > T::zero() {
            total += (b - a) / denom;
        }
    }
    total / T::from_count(n)
}

/// Fits every k in `k_range` and returns the one with the highest mean
/// silhouette (smaller k on ties) with all scores.
pub fn silhouette_select_k<T: Scalar>(
    data: &[Vec<T>],
    k_range: RangeInclusive<usize>,
    seed: u64,
    config: &KMeansConfig,
) -> Result<(usize, BTreeMap<usize, T>), CohortError> {
    let n = data.len();
    if k_range.is_empty() || *k_range.start() < 2 || *k_range.end() + 1 > n {
        return Err(CohortError::InvalidKRange {
            start: *k_range.start(),
            end: *k_range.end(),
            n,
        });
    }
    let mut scores = BTreeMap::new();
    let mut best: Option<(usize, T)> = None;
    for k in k_range {
        let fit = kmeans(data, k, seed, config)?;
        let s = silhouette(data, &fit.assignments);
        scores.insert(k, s);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    Ok((best.expect("non-empty range").0, scores))
}
