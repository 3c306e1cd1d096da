use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::linalg::{distance, mean, pairwise_sum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    /// Smallest distance between two centroids.
    pub inter_cluster: f64,
    /// Mean distance of a point to its own centroid.
    pub intra_cluster: f64,
}

fn centroid(points: &[&[f64]]) -> Vec<f64> {
    let dim = points[0].len();
    (0..dim)
        .map(|j| {
            let col: Vec<f64> = points.iter().map(|p| p[j]).collect();
            mean(&col).unwrap()
        })
        .collect()
}

/// Silhouette, Davies-Bouldin, inter- and intra-cluster distances on
/// Euclidean distance. Singleton clusters contribute a silhouette of 0.
pub fn clustering_report(assignment: &ClusterAssignment) -> Result<ClusterMetrics> {
    let points = &assignment.points;
    if points.len() != assignment.labels.len() {
        return Err(Error::domain("points and labels differ in length"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in assignment.labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::domain(format!(
            "need at least two clusters, found {}",
            groups.len()
        )));
    }
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let cluster_of: Vec<usize> = {
        let mut c = vec![0; points.len()];
        for (ci, m) in members.iter().enumerate() {
            for &i in m.iter() {
                c[i] = ci;
            }
        }
        c
    };
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|m| centroid(&m.iter().map(|&i| points[i].as_slice()).collect::<Vec<_>>()))
        .collect();
    let own_dist: Vec<f64> = (0..points.len())
        .map(|i| distance(&points[i], &centroids[cluster_of[i]]))
        .collect();
    let scatter: Vec<f64> = members
        .iter()
        .map(|m| mean(&m.iter().map(|&i| own_dist[i]).collect::<Vec<_>>()).unwrap())
        .collect();

    let nc = members.len();
    let mut inter_cluster = f64::INFINITY;
    let mut db_terms = Vec::with_capacity(nc);
    for i in 0..nc {
        let mut worst: f64 = 0.0;
        for j in 0..nc {
            if i == j {
                continue;
            }
            let d = distance(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(Error::degenerate(format!(
                    "clusters {i} and {j} share a centroid"
                )));
            }
            inter_cluster = inter_cluster.min(d);
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        db_terms.push(worst);
    }

    let silhouettes: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = cluster_of[i];
            if members[own].len() == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; nc];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[cluster_of[j]] += distance(&points[i], p);
                }
            }
            let a = sums[own] / (members[own].len() - 1) as f64;
            let b = (0..nc)
                .filter(|&c| c != own)
                .map(|c| sums[c] / members[c].len() as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();

    Ok(ClusterMetrics {
        silhouette: pairwise_sum(&silhouettes) / points.len() as f64,
        davies_bouldin: pairwise_sum(&db_terms) / nc as f64,
        inter_cluster,
        intra_cluster: pairwise_sum(&own_dist) / points.len() as f64,
    })
}
