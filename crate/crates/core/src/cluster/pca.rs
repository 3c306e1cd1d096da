use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, mean, norm};
use crate::rng::{tag, CounterRng};

const TOLERANCE: f64 = 1e-10;
const MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// Projected coordinates, one row per input point.
    pub coords: Vec<Vec<f64>>,
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
    pub mean: Vec<f64>,
    /// Fewer than the requested components carry variance.
    pub rank_deficient: bool,
}

/// Mean-centered projection onto the top `out_dim` principal directions,
/// found by power iteration with deflation on the covariance matrix.
pub fn pca_project(points: &[Vec<f64>], out_dim: usize) -> Result<PcaProjection> {
    if out_dim == 0 {
        return Err(Error::domain("out_dim must be >= 1"));
    }
    if points.len() < out_dim {
        return Err(Error::domain(format!(
            "need at least {out_dim} points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::domain("points differ in dimension"));
    }
    let m = points.len() as f64;
    let center: Vec<f64> = (0..d)
        .map(|j| mean(&points.iter().map(|p| p[j]).collect::<Vec<_>>()).unwrap())
        .collect();
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&center).map(|(x, c)| x - c).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for p in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += p[i] * p[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= m);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let apply = |v: &[f64]| -> Vec<f64> { cov.chunks_exact(d).map(|row| dot(row, v)).collect() };
    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    };

    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut variances = Vec::new();
    let mut rank_deficient = false;
    for comp in 0..out_dim.min(d) {
        let mut v = CounterRng::from_path(0, &[tag::PCA_START])
            .child(comp as u64)
            .normals(d);
        orthogonalize(&mut v, &components);
        let n = norm(&v);
        if n == 0.0 {
            rank_deficient = true;
            break;
        }
        v.iter_mut().for_each(|x| *x /= n);
        for _ in 0..MAX_ITERS {
            let mut next = apply(&v);
            orthogonalize(&mut next, &components);
            let n = norm(&next);
            if n <= 1e-12 * trace.max(f64::MIN_POSITIVE) {
                break;
            }
            next.iter_mut().for_each(|x| *x /= n);
            let delta = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            v = next;
            if delta < TOLERANCE {
                break;
            }
        }
        let lambda = dot(&v, &apply(&v));
        if lambda.is_nan() || lambda <= 1e-12 * trace {
            rank_deficient = true;
            break;
        }
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        components.push(v);
        variances.push(lambda);
    }
    if components.len() < out_dim {
        rank_deficient = true;
    }
    let coords = centered
        .iter()
        .map(|p| components.iter().map(|c| dot(p, c)).collect())
        .collect();
    Ok(PcaProjection {
        coords,
        components,
        variances,
        mean: center,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::distance;

    #[test]
    fn planar_points_keep_their_distances() {
        let rng = CounterRng::new(4);
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let g = rng.child(i).normals(2);
                vec![3.0 * g[0], 0.0, g[1]]
            })
            .collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(!p.rank_deficient);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let a = distance(&pts[i], &pts[j]);
                let b = distance(&p.coords[i], &p.coords[j]);
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn duplicated_points_give_the_same_directions() {
        let rng = CounterRng::new(5);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let g = rng.child(i).normals(3);
                vec![2.0 * g[0], g[1] + 0.3 * g[0], 0.5 * g[2]]
            })
            .collect();
        let doubled: Vec<Vec<f64>> = pts.iter().chain(&pts).cloned().collect();
        let a = pca_project(&pts, 2).unwrap();
        let b = pca_project(&doubled, 2).unwrap();
        for (x, y) in a
            .components
            .iter()
            .flatten()
            .zip(b.components.iter().flatten())
        {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, 2.0 * i as f64, 0.0])
            .collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.rank_deficient);
        assert_eq!(p.components.len(), 1);
        assert!(p.components[0][0] > 0.0);
        assert!(pca_project(&pts[..1], 2).is_err());
    }
}
