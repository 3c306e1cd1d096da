//! Clustering via memorization: each test output is labelled by the layer it
//! was read at and the side of the anchor it fell on, giving up to `2L`
//! clusters. Metrics, Lloyd k-means and a PCA projection support validation
//! and plot export.

mod kmeans;
mod metrics;
mod pca;

pub use kmeans::{kmeans_lloyd, kmeans_with_init, KMeansResult};
pub use metrics::{clustering_report, ClusterMetrics};
pub use pca::{pca_project, PcaProjection};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, RealVector};
use crate::net::LinearModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Unit layer outputs, dim `k`.
    pub points: Vec<Vec<f64>>,
    /// `2 * (layer - 1) + side`.
    pub labels: Vec<usize>,
    /// 1-based layer each point was read at.
    pub layer_of_point: Vec<usize>,
    /// Index of the sample within its layer set.
    pub sample_of_point: Vec<usize>,
    /// Samples dropped because their output vanished.
    pub skipped: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn side(&self, i: usize) -> usize {
        self.labels[i] % 2
    }

    pub fn distinct_labels(&self) -> usize {
        let mut ls = self.labels.clone();
        ls.sort_unstable();
        ls.dedup();
        ls.len()
    }

    /// The points read at `layer`, as an assignment of their own.
    pub fn layer_subset(&self, layer: usize) -> ClusterAssignment {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.layer_of_point[i] == layer)
            .collect();
        ClusterAssignment {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            layer_of_point: idx.iter().map(|&i| self.layer_of_point[i]).collect(),
            sample_of_point: idx.iter().map(|&i| self.sample_of_point[i]).collect(),
            skipped: 0,
        }
    }
}

/// Labels the outputs of `layer_sets[l - 1]` at layer `l` by which side of
/// the anchor's layer-`l` output they land on (side 0 when `u . w >= 0`).
pub fn build_trajectory_clusters(
    model: &LinearModel,
    layer_sets: &[Vec<RealVector>],
) -> Result<ClusterAssignment> {
    if layer_sets.is_empty() || layer_sets.len() > model.depth() {
        return Err(Error::domain(format!(
            "need between 1 and {} layer sets, got {}",
            model.depth(),
            layer_sets.len()
        )));
    }
    let anchor = model.anchor_trace()?;
    let mut out = ClusterAssignment {
        points: Vec::new(),
        labels: Vec::new(),
        layer_of_point: Vec::new(),
        sample_of_point: Vec::new(),
        skipped: 0,
    };
    for (li, set) in layer_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::domain(format!("layer set {} is empty", li + 1)));
        }
        let layer = li + 1;
        let anchor_dir = &anchor.per_layer[li];
        let prefix = model.prefix(layer)?;
        let results: Vec<Result<Option<Vec<f64>>>> = set
            .par_iter()
            .map(|t| {
                check_dim(model.input_dim(), t.dim())?;
                match prefix.forward_full(t) {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::DegenerateLayer { .. }) | Err(Error::Degenerate { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect();
        for (si, r) in results.into_iter().enumerate() {
            match r? {
                Some(v) => {
                    let side = usize::from(dot(&v, anchor_dir) < 0.0);
                    out.labels.push(2 * (layer - 1) + side);
                    out.points.push(v);
                    out.layer_of_point.push(layer);
                    out.sample_of_point.push(si);
                }
                None => out.skipped += 1,
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gaussian_samples;
    use crate::net::{train_maxlikelihood, NetConfig};

    fn model(depth: usize) -> (RealVector, LinearModel) {
        let w = gaussian_samples(1, 4, 3).unwrap().remove(0);
        let m = train_maxlikelihood(&w, &NetConfig::new(4, 128, depth, 2).unwrap()).unwrap();
        (w, m)
    }

    #[test]
    fn sign_split_on_single_layer() {
        let (w, m) = model(1);
        let a = build_trajectory_clusters(&m, &[vec![w.clone(), -&w]]).unwrap();
        assert_eq!(a.labels, vec![0, 1]);
        assert_eq!(a.layer_of_point, vec![1, 1]);
    }

    #[test]
    fn anchor_copies_stay_on_side_zero() {
        let (w, m) = model(3);
        let sets = vec![vec![w.clone(); 3]; 3];
        let a = build_trajectory_clusters(&m, &sets).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a.distinct_labels(), 3);
        assert!(a.labels.iter().all(|l| l % 2 == 0));
    }

    #[test]
    fn positive_scaling_changes_nothing() {
        let (_, m) = model(2);
        let tests = gaussian_samples(20, 4, 8).unwrap();
        let scaled: Vec<RealVector> = tests.iter().map(|t| t.scaled(3.7).unwrap()).collect();
        let a = build_trajectory_clusters(&m, &[tests.clone(), tests]).unwrap();
        let b = build_trajectory_clusters(&m, &[scaled.clone(), scaled]).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn layer_set_count_is_checked() {
        let (w, m) = model(2);
        assert!(build_trajectory_clusters(&m, &[]).is_err());
        assert!(build_trajectory_clusters(&m, &vec![vec![w.clone()]; 3]).is_err());
        assert!(build_trajectory_clusters(&m, &[vec![]]).is_err());
    }
}
