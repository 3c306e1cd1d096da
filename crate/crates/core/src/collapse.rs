//! Output-space collapse: per-sample loss against the anchor, two-group
//! bimodality, NLL sweeps over (width, depth) grids and feature export.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_real, gaussian_samples, write_csv};
use crate::error::{check_dim, Error, Result};
use crate::likelihood::{angle_fraction, h2};
use crate::linalg::{mean, RealVector};
use crate::net::{train_maxlikelihood, LinearModel, NetConfig};
use crate::rng::{derive_key, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// `1 - theta0` per test sample; near 0 means anti-correlated output.
    pub per_sample_loss: Vec<f64>,
    /// Mean `1 - theta0` over samples with loss < 0.5 (0 when empty).
    pub mean_anti_loss: f64,
    /// Mean `theta0` over samples with loss >= 0.5 (0 when empty).
    pub mean_corr_loss: f64,
    pub bimodality_mass: f64,
    pub tol: f64,
    /// (anti-correlated, correlated)
    pub group_sizes: (usize, usize),
    /// Mean of `H2(min(theta0, 1 - theta0))`.
    pub mean_nll: f64,
}

/// Seed of the default Gaussian test population for a model seed.
pub fn test_population_seed(seed: u64) -> u64 {
    derive_key(seed, &[tag::TESTS])
}

/// `theta0` of every test output against the anchor output, in input order.
pub fn angle_fractions(model: &LinearModel, tests: &[RealVector]) -> Result<Vec<f64>> {
    tests
        .par_iter()
        .map(|t| {
            check_dim(model.input_dim(), t.dim())?;
            angle_fraction(&model.anchor_output, &model.forward_full(t)?)
        })
        .collect()
}

pub fn collapse_from_fractions(thetas: &[f64], tol: f64) -> Result<CollapseReport> {
    if thetas.is_empty() {
        return Err(Error::domain(
            "collapse experiment needs at least one test sample",
        ));
    }
    if !(tol > 0.0 && tol < 0.5) {
        return Err(Error::domain(format!("tol {tol} outside (0, 0.5)")));
    }
    let per_sample_loss: Vec<f64> = thetas.iter().map(|t| 1.0 - t).collect();
    let anti: Vec<f64> = per_sample_loss
        .iter()
        .copied()
        .filter(|&l| l < 0.5)
        .collect();
    let corr: Vec<f64> = per_sample_loss
        .iter()
        .filter(|&&l| l >= 0.5)
        .map(|l| 1.0 - l)
        .collect();
    let near = per_sample_loss
        .iter()
        .filter(|&&l| l.min(1.0 - l) <= tol)
        .count();
    let nll: Vec<f64> = thetas
        .iter()
        .map(|&t| h2(t.min(1.0 - t)))
        .collect::<Result<_>>()?;
    Ok(CollapseReport {
        mean_anti_loss: mean(&anti).unwrap_or(0.0),
        mean_corr_loss: mean(&corr).unwrap_or(0.0),
        bimodality_mass: near as f64 / thetas.len() as f64,
        tol,
        group_sizes: (anti.len(), corr.len()),
        mean_nll: mean(&nll).unwrap_or(0.0),
        per_sample_loss,
    })
}

/// Scores every test against the anchor and summarizes the two groups.
pub fn collapse_experiment(
    model: &LinearModel,
    tests: &[RealVector],
    tol: f64,
) -> Result<CollapseReport> {
    if tests.is_empty() {
        return Err(Error::domain(
            "collapse experiment needs at least one test sample",
        ));
    }
    collapse_from_fractions(&angle_fractions(model, tests)?, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    /// `nll_matrix[i][j]`: mean final-layer `H2(min(theta0, 1 - theta0))`
    /// at `widths[i]`, `depths[j]`.
    pub nll_matrix: Vec<Vec<f64>>,
    /// Wall-clock seconds per cell (training amortized across depths).
    pub runtime_per_cell: Vec<Vec<f64>>,
}

fn strictly_ascending(xs: &[usize]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Trains one model per width (deepest depth; shallower depths are its
/// prefixes) and evaluates mean NLL over `test_count` Gaussian tests.
pub fn nll_sweep(
    anchor: &RealVector,
    widths: &[usize],
    depths: &[usize],
    test_count: usize,
    seed: u64,
) -> Result<SweepGrid> {
    if widths.is_empty() || depths.is_empty() {
        return Err(Error::domain(
            "sweep needs at least one width and one depth",
        ));
    }
    if !strictly_ascending(widths) || !strictly_ascending(depths) {
        return Err(Error::domain(
            "sweep widths and depths must be strictly ascending",
        ));
    }
    let k = anchor.dim();
    let max_depth = *depths.last().unwrap();
    let tests = gaussian_samples(test_count, k, test_population_seed(seed))?;
    let mut nll_matrix = Vec::with_capacity(widths.len());
    let mut runtime_per_cell = Vec::with_capacity(widths.len());
    for &width in widths {
        let start = Instant::now();
        let cfg = NetConfig::new(k, width, max_depth, seed)?;
        let model = train_maxlikelihood(anchor, &cfg)?;
        let anchor_trace = model.anchor_trace()?;
        let traces = tests
            .par_iter()
            .enumerate()
            .map(|(i, t)| model.forward_traced(t, i as u64))
            .collect::<Result<Vec<_>>>()?;
        let row = depths
            .iter()
            .map(|&d| {
                let nll = traces
                    .iter()
                    .map(|tr| {
                        let t =
                            angle_fraction(&anchor_trace.per_layer[d - 1], &tr.per_layer[d - 1])?;
                        h2(t.min(1.0 - t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean(&nll).unwrap_or(0.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        let per_cell = start.elapsed().as_secs_f64() / depths.len() as f64;
        runtime_per_cell.push(vec![per_cell; depths.len()]);
        nll_matrix.push(row);
    }
    Ok(SweepGrid {
        widths: widths.to_vec(),
        depths: depths.to_vec(),
        nll_matrix,
        runtime_per_cell,
    })
}

/// Which layers [`export_features`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelect {
    All,
    Layer(usize),
}

/// Writes normalized layer outputs as CSV rows
/// `sample_id,layer,x0,...,x{k-1}`, one row per sample and selected layer.
pub fn export_features(
    model: &LinearModel,
    samples: &[(String, RealVector)],
    layers: LayerSelect,
    path: &Path,
) -> Result<()> {
    let depth = model.depth();
    let selected: Vec<usize> = match layers {
        LayerSelect::All => (1..=depth).collect(),
        LayerSelect::Layer(l) if (1..=depth).contains(&l) => vec![l],
        LayerSelect::Layer(l) => {
            return Err(Error::domain(format!("layer {l} outside 1..={depth}")));
        }
    };
    let traces = samples
        .par_iter()
        .enumerate()
        .map(|(i, (_, v))| model.forward_traced(v, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["sample_id".to_string(), "layer".to_string()];
    header.extend((0..model.input_dim()).map(|j| format!("x{j}")));
    let rows = samples.iter().zip(&traces).flat_map(|((id, _), tr)| {
        selected.iter().map(move |&l| {
            let mut row = vec![id.clone(), l.to_string()];
            row.extend(tr.per_layer[l - 1].iter().map(|&x| fmt_real(x)));
            row
        })
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> (RealVector, LinearModel) {
        let w = gaussian_samples(1, 6, 1).unwrap().remove(0);
        let model = train_maxlikelihood(&w, &NetConfig::new(6, 300, 8, 4).unwrap()).unwrap();
        (w, model)
    }

    #[test]
    fn anchor_and_negated_anchor() {
        let (w, model) = small_model();
        let r = collapse_experiment(&model, std::slice::from_ref(&w), 0.02).unwrap();
        assert_eq!(r.per_sample_loss, vec![1.0]);
        assert_eq!(r.group_sizes, (0, 1));
        let r = collapse_experiment(&model, &[-&w], 0.02).unwrap();
        assert_eq!(r.per_sample_loss, vec![0.0]);
        assert_eq!(r.group_sizes, (1, 0));
        assert_eq!(r.bimodality_mass, 1.0);
    }

    #[test]
    fn argument_errors() {
        let (w, model) = small_model();
        assert!(collapse_experiment(&model, &[], 0.02).is_err());
        assert!(collapse_experiment(&model, std::slice::from_ref(&w), 0.5).is_err());
        assert!(collapse_experiment(&model, &[w], 0.0).is_err());
    }

    #[test]
    fn half_goes_to_correlated_group() {
        let r = collapse_from_fractions(&[0.5, 0.1, 0.95], 0.1).unwrap();
        assert_eq!(r.group_sizes, (1, 2));
        assert!((r.mean_anti_loss - 0.05).abs() < 1e-12);
        assert!((r.mean_corr_loss - 0.3).abs() < 1e-12);
        assert!((r.bimodality_mass - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_is_one_minus_angle_fraction() {
        let (_, model) = small_model();
        let tests = gaussian_samples(50, 6, 99).unwrap();
        let r = collapse_experiment(&model, &tests, 0.05).unwrap();
        for (t, loss) in tests.iter().zip(&r.per_sample_loss) {
            let out = model.forward_full(t).unwrap();
            let direct = 1.0 - angle_fraction(&model.anchor_output, &out).unwrap();
            assert!((loss - direct).abs() < 1e-12);
            assert!((0.0..=1.0).contains(loss));
        }
        assert_eq!(r.group_sizes.0 + r.group_sizes.1, 50);
        let s = r.mean_anti_loss + (1.0 - r.mean_corr_loss);
        assert!((0.0..=2.0).contains(&s));
    }

    #[test]
    fn sweep_validates_grids() {
        let w = gaussian_samples(1, 3, 1).unwrap().remove(0);
        assert!(nll_sweep(&w, &[4, 3], &[1], 5, 0).is_err());
        assert!(nll_sweep(&w, &[3], &[], 5, 0).is_err());
        assert!(nll_sweep(&w, &[2], &[1], 5, 0).is_err());
    }

    #[test]
    fn export_rejects_bad_layer() {
        let (w, model) = small_model();
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![("a".to_string(), w)];
        let err = export_features(
            &model,
            &samples,
            LayerSelect::Layer(9),
            &dir.path().join("f.csv"),
        );
        assert!(err.is_err());
        let io = export_features(
            &model,
            &samples,
            LayerSelect::All,
            &dir.path().join("no/such/f.csv"),
        );
        assert!(matches!(io, Err(Error::Io { .. })));
    }
}
