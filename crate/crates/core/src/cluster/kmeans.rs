use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{distance, mean};
use crate::rng::{tag, CounterRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid, recorded after
    /// every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

/// Nearest centroid, ties to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let d = distance(p, cen);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| distance(p, &centroids[l]).powi(2))
        .sum()
}

/// Lloyd iterations from `k` distinct points chosen by `seed`.
pub fn kmeans_lloyd(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::domain(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let mut rng = CounterRng::from_path(seed, &[tag::KMEANS]).seeded_rng();
    let init = rand::seq::index::sample(&mut rng, points.len(), k).into_vec();
    kmeans_with_init(points, &init, max_iters)
}

/// Lloyd iterations starting from the points at `init` as centroids.
///
/// Stops at an assignment fixpoint or after `max_iters` updates. A cluster
/// left empty is re-seeded with the point farthest from its own centroid.
pub fn kmeans_with_init(
    points: &[Vec<f64>],
    init: &[usize],
    max_iters: usize,
) -> Result<KMeansResult> {
    if init.is_empty() || init.len() > points.len() {
        return Err(Error::domain(
            "initial centroid count must be in 1..=points",
        ));
    }
    if let Some(&bad) = init.iter().find(|&&i| i >= points.len()) {
        return Err(Error::domain(format!("initial index {bad} out of range")));
    }
    let dim = points[0].len();
    let k = init.len();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut inertia_history = vec![inertia(points, &labels, &centroids)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                *centroid = (0..dim)
                    .map(|j| mean(&members.iter().map(|p| p[j]).collect::<Vec<_>>()).unwrap())
                    .collect();
            }
        }
        for c in 0..k {
            if labels.iter().all(|&l| l != c) {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = distance(&points[a], &centroids[labels[a]]);
                        let db = distance(&points[b], &centroids[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                labels[far] = c;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next != labels;
        labels = next;
        inertia_history.push(inertia(points, &labels, &centroids));
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        labels,
        centroids,
        inertia_history,
        iterations,
    })
}
