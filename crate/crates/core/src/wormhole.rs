//! Wormholes between collapsed outputs and label reconciliation of fooling
//! examples.
//!
//! With `u = H(w)/|H(w)|` for the training input and `u'` for a fresh input:
//! a fooling example is `z = P - eta u`, a random label is
//! `P' = z + eta s u'` (with `s = sign(u' . u)`), and the reconciled label
//! `P_hat = P' - eta (s u' - u)`. The distance between `P'` and `P`, the
//! wormhole residual `eta |s u' - u|`, vanishes as the network collapses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ensure_dir, write_image_grid};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{distance, norm, RealVector};
use crate::net::{train_maxlikelihood, LinearModel, NetConfig};
use crate::rng::{derive_key, tag, CounterRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WormholePair {
    /// `-eta [0; u]`
    pub point_p: Vec<f64>,
    /// `eta [0; u']`
    pub point_p_prime: Vec<f64>,
    pub eta: f64,
    pub distance: f64,
}

fn check_eta(eta: f64, strict: bool) -> Result<()> {
    let ok = eta.is_finite() && if strict { eta > 0.0 } else { eta >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!("invalid eta {eta}")))
    }
}

/// Distance between `-eta [0; u]` and `eta [0; u']`.
pub fn wormhole_distance(
    model: &LinearModel,
    w: &RealVector,
    w_prime: &RealVector,
    eta: f64,
) -> Result<WormholePair> {
    check_eta(eta, true)?;
    let u = model.forward_full(w)?;
    let u_prime = model.forward_full(w_prime)?;
    Ok(wormhole_from_directions(&u, &u_prime, eta))
}

fn wormhole_from_directions(u: &[f64], u_prime: &[f64], eta: f64) -> WormholePair {
    let point_p: Vec<f64> = std::iter::once(0.0)
        .chain(u.iter().map(|x| -eta * x))
        .collect();
    let point_p_prime: Vec<f64> = std::iter::once(0.0)
        .chain(u_prime.iter().map(|x| eta * x))
        .collect();
    let distance = distance(&point_p, &point_p_prime);
    WormholePair {
        point_p,
        point_p_prime,
        eta,
        distance,
    }
}

/// `z = P - eta u_L`, with `u_L` the model's anchor output.
pub fn generate_fooling(model: &LinearModel, meaningful: &[f64], eta: f64) -> Result<Vec<f64>> {
    fooling_from_direction(&model.anchor_output, meaningful, eta)
}

fn fooling_from_direction(anchor_dir: &[f64], meaningful: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_dim(anchor_dir.len(), meaningful.len())?;
    check_eta(eta, false)?;
    Ok(meaningful
        .iter()
        .zip(anchor_dir)
        .map(|(p, u)| p - eta * u)
        .collect())
}

/// Which side of the anchor the fresh output fell on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Correlated,
    AntiCorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationRecord {
    pub meaningful_label: Option<Vec<f64>>,
    pub fooling_example: Vec<f64>,
    pub random_label: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// Anchor output the fooling example was generated with.
    pub anchor_direction: Vec<f64>,
    pub eta: f64,
    pub sign: i8,
    pub branch: Branch,
    /// `|P_hat - P| / |P|`, when `P` is known.
    pub rel_error: Option<f64>,
    /// `eta |s u' - u| / |P|` (or `/ |P_hat|` without `P`).
    pub residual: f64,
    /// `|P' - P|` computed explicitly from the vectors (`P_hat` without `P`).
    pub label_gap: f64,
    pub depth: usize,
}

impl ReconciliationRecord {
    /// Largest entry-wise gap between `P_hat` and `z + eta u`.
    pub fn algebra_error(&self) -> f64 {
        self.reconstruction
            .iter()
            .zip(&self.fooling_example)
            .zip(&self.anchor_direction)
            .map(|((p, z), u)| (p - (z + self.eta * u)).abs())
            .fold(0.0, f64::max)
    }
}

/// Recovers a label from fooling example `z` and a fresh input `w'`.
pub fn reconcile(
    model: &LinearModel,
    fooling: &[f64],
    w_prime: &RealVector,
    eta: f64,
    meaningful: Option<&[f64]>,
) -> Result<ReconciliationRecord> {
    let u_prime = model.forward_full(w_prime)?;
    reconcile_directions(
        &model.anchor_output,
        &u_prime,
        fooling,
        eta,
        meaningful,
        model.depth(),
    )
}

fn reconcile_directions(
    anchor_dir: &[f64],
    fresh_dir: &[f64],
    fooling: &[f64],
    eta: f64,
    meaningful: Option<&[f64]>,
    depth: usize,
) -> Result<ReconciliationRecord> {
    check_eta(eta, false)?;
    check_dim(anchor_dir.len(), fooling.len())?;
    check_dim(anchor_dir.len(), fresh_dir.len())?;
    if let Some(p) = meaningful {
        check_dim(anchor_dir.len(), p.len())?;
    }
    let overlap: f64 = crate::linalg::dot(fresh_dir, anchor_dir);
    let (sign, branch) = if overlap >= 0.0 {
        (1i8, Branch::Correlated)
    } else {
        (-1i8, Branch::AntiCorrelated)
    };
    let s = f64::from(sign);
    let random_label: Vec<f64> = fooling
        .iter()
        .zip(fresh_dir)
        .map(|(z, u)| z + eta * s * u)
        .collect();
    let reconstruction: Vec<f64> = random_label
        .iter()
        .zip(fresh_dir.iter().zip(anchor_dir))
        .map(|(p, (up, u))| p - eta * (s * up - u))
        .collect();
    let reference = meaningful.unwrap_or(&reconstruction);
    let ref_norm = norm(reference);
    if ref_norm == 0.0 {
        return Err(Error::degenerate("meaningful label has zero norm"));
    }
    let gap: Vec<f64> = fresh_dir
        .iter()
        .zip(anchor_dir)
        .map(|(up, u)| s * up - u)
        .collect();
    let residual = eta * norm(&gap) / ref_norm;
    let label_gap = distance(&random_label, reference);
    let rel_error = meaningful.map(|p| distance(&reconstruction, p) / ref_norm);
    Ok(ReconciliationRecord {
        meaningful_label: meaningful.map(<[f64]>::to_vec),
        fooling_example: fooling.to_vec(),
        random_label,
        reconstruction,
        anchor_direction: anchor_dir.to_vec(),
        eta,
        sign,
        branch,
        rel_error,
        residual,
        label_gap,
        depth,
    })
}

/// Scalar view of a record, as written to run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationSummary {
    pub digit_index: usize,
    pub label: Option<u8>,
    pub depth: usize,
    pub eta: f64,
    pub sign: i8,
    pub branch: Branch,
    pub rel_error: Option<f64>,
    pub residual: f64,
    pub label_gap: f64,
    pub algebra_error: f64,
    /// Anti-correlated wormhole distance `eta |u + u'|`.
    pub wormhole_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationRun {
    pub records: Vec<ReconciliationRecord>,
    pub summaries: Vec<ReconciliationSummary>,
}

/// A labelled image to reconcile.
#[derive(Debug, Clone, PartialEq)]
pub struct Digit {
    pub label: Option<u8>,
    pub image: Vec<f64>,
}

/// Seed for the run on digit `index`.
pub fn digit_seed(base_seed: u64, index: usize) -> u64 {
    derive_key(base_seed, &[tag::RUN, index as u64])
}

/// For every digit: trains on a Gaussian anchor, generates the fooling
/// example and reconciles it with a fresh Gaussian input at each depth.
///
/// Per digit, one model is trained at the deepest depth and every
/// shallower depth reads its prefix. `cfg.depth` is ignored. When
/// `export` is given, `recon_d{i}_L{d}.csv` holds the random label `P'`
/// (the image recovered without retaining `u`) and `fooling_d{i}_L{d}.csv`
/// the fooling example, as `rows x cols` grids.
pub fn reconciliation_experiment(
    digits: &[Digit],
    cfg: &NetConfig,
    eta: f64,
    depths: &[usize],
    export: Option<(&Path, usize)>,
) -> Result<ReconciliationRun> {
    if digits.is_empty() {
        return Err(Error::domain("reconciliation needs at least one digit"));
    }
    if depths.is_empty() || depths[0] == 0 || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain(
            "depths must be non-empty, >= 1 and strictly ascending",
        ));
    }
    check_eta(eta, false)?;
    let k = cfg.input_dim;
    if let Some((dir, _)) = export {
        ensure_dir(dir)?;
    }
    let mut records = Vec::with_capacity(digits.len() * depths.len());
    let mut summaries = Vec::with_capacity(digits.len() * depths.len());
    for (i, digit) in digits.iter().enumerate() {
        check_dim(k, digit.image.len())?;
        let seed = digit_seed(cfg.seed, i);
        let anchor = RealVector::new(CounterRng::from_path(seed, &[tag::ANCHOR]).normals(k))?;
        let fresh = RealVector::new(CounterRng::from_path(seed, &[tag::FRESH]).normals(k))?;
        let run_cfg = NetConfig {
            seed,
            depth: *depths.last().unwrap(),
            ..*cfg
        };
        run_cfg.validate()?;
        let model = train_maxlikelihood(&anchor, &run_cfg)?;
        let anchor_trace = model.anchor_trace()?;
        let fresh_trace = model.forward_traced(&fresh, 0)?;
        for &d in depths {
            let u = &anchor_trace.per_layer[d - 1];
            let u_prime = &fresh_trace.per_layer[d - 1];
            let z = fooling_from_direction(u, &digit.image, eta)?;
            let rec = reconcile_directions(u, u_prime, &z, eta, Some(&digit.image), d)?;
            let wormhole = if eta > 0.0 {
                wormhole_from_directions(u, u_prime, eta).distance
            } else {
                0.0
            };
            if let Some((dir, cols)) = export {
                write_image_grid(
                    &dir.join(format!("recon_d{i}_L{d}.csv")),
                    &rec.random_label,
                    cols,
                )?;
                write_image_grid(
                    &dir.join(format!("fooling_d{i}_L{d}.csv")),
                    &rec.fooling_example,
                    cols,
                )?;
            }
            summaries.push(ReconciliationSummary {
                digit_index: i,
                label: digit.label,
                depth: d,
                eta,
                sign: rec.sign,
                branch: rec.branch,
                rel_error: rec.rel_error,
                residual: rec.residual,
                label_gap: rec.label_gap,
                algebra_error: rec.algebra_error(),
                wormhole_distance: wormhole,
            });
            records.push(rec);
        }
        if let Some((dir, cols)) = export {
            write_image_grid(&dir.join(format!("label_d{i}.csv")), &digit.image, cols)?;
        }
    }
    Ok(ReconciliationRun { records, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gaussian_samples;

    fn setup() -> (RealVector, LinearModel) {
        let w = gaussian_samples(1, 6, 10).unwrap().remove(0);
        let m = train_maxlikelihood(&w, &NetConfig::new(6, 200, 4, 5).unwrap()).unwrap();
        (w, m)
    }

    #[test]
    fn wormhole_extremes() {
        let (w, m) = setup();
        let closed = wormhole_distance(&m, &w, &-&w, 3.0).unwrap();
        assert_eq!(closed.distance, 0.0);
        let open = wormhole_distance(&m, &w, &w, 3.0).unwrap();
        assert!((open.distance - 6.0).abs() < 1e-12);
        assert_eq!(open.point_p.len(), 7);
        assert_eq!(open.point_p[0], 0.0);
        assert!(wormhole_distance(&m, &w, &w, 0.0).is_err());
    }

    #[test]
    fn fooling_shifts_by_exactly_eta() {
        let (_, m) = setup();
        let p = vec![0.5, 0.0, 1.0, 0.25, 0.0, 0.75];
        assert_eq!(generate_fooling(&m, &p, 0.0).unwrap(), p);
        for eta in [0.5, 10.0, 1e4] {
            let z = generate_fooling(&m, &p, eta).unwrap();
            assert!((distance(&z, &p) - eta).abs() <= 1e-12 * eta.max(1.0));
        }
        assert!(generate_fooling(&m, &p[..3], 1.0).is_err());
        assert!(generate_fooling(&m, &p, -1.0).is_err());
    }

    #[test]
    fn fixed_point_when_fresh_equals_anchor() {
        let (w, m) = setup();
        let p = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let z = generate_fooling(&m, &p, 100.0).unwrap();
        let rec = reconcile(&m, &z, &w, 100.0, Some(&p)).unwrap();
        assert_eq!(rec.sign, 1);
        assert_eq!(rec.random_label, rec.reconstruction);
        for (a, b) in rec.random_label.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(rec.residual, 0.0);
    }

    #[test]
    fn residual_matches_explicit_gap() {
        let (_, m) = setup();
        let p = vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0];
        let eta = 7.5;
        for t in gaussian_samples(20, 6, 44).unwrap() {
            let z = generate_fooling(&m, &p, eta).unwrap();
            let rec = reconcile(&m, &z, &t, eta, Some(&p)).unwrap();
            let explicit = distance(&rec.random_label, &p) / norm(&p);
            assert!((rec.residual - explicit).abs() < 1e-12);
            assert!(rec.algebra_error() < 1e-9);
            assert!(rec.rel_error.unwrap() < 1e-12);
        }
    }

    #[test]
    fn experiment_argument_checks() {
        let cfg = NetConfig::new(4, 8, 1, 0).unwrap();
        let digit = Digit {
            label: Some(3),
            image: vec![0.0, 1.0, 1.0, 0.0],
        };
        assert!(reconciliation_experiment(&[], &cfg, 1.0, &[1], None).is_err());
        assert!(
            reconciliation_experiment(std::slice::from_ref(&digit), &cfg, 1.0, &[0, 1], None)
                .is_err()
        );
        assert!(
            reconciliation_experiment(std::slice::from_ref(&digit), &cfg, -1.0, &[1], None)
                .is_err()
        );
        let zero_eta = reconciliation_experiment(&[digit], &cfg, 0.0, &[1, 2], None).unwrap();
        assert!(zero_eta
            .summaries
            .iter()
            .all(|s| s.rel_error == Some(0.0) && s.residual == 0.0));
    }
}
