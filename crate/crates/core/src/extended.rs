//! Layer outputs embedded in `R^{k+1}` with a layer-index coordinate.
//!
//! A layer-`l` output `w_l` becomes `[l c; w_l] / |[l c; w_l]|`. The first
//! coordinate (`d_l`) measures how much of the embedded direction is layer
//! information; norm maximization drives it to zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm};
use crate::net::LayerTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint {
    pub layer_component: f64,
    pub spatial: Vec<f64>,
    pub layer_index: usize,
}

impl ExtendedPoint {
    pub fn as_vector(&self) -> Vec<f64> {
        std::iter::once(self.layer_component)
            .chain(self.spatial.iter().copied())
            .collect()
    }
}

/// How the unnormalized norm `|w_l|` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    /// `exp` of the trajectory's accumulated log gains.
    Accumulated,
    /// Renormalized output taken as-is (`|w_l| = 1`).
    Unit,
}

/// Embeds a unit direction with log-norm `log_norm` at layer `ell`.
///
/// Works in log space: with `t = log|w| - log(l c)`, the layer component is
/// `1/sqrt(1 + e^{2t})` and the spatial scale `1/sqrt(1 + e^{-2t})`.
pub fn embed_direction(
    direction: &[f64],
    log_norm: f64,
    ell: usize,
    c: f64,
) -> Result<ExtendedPoint> {
    if ell == 0 {
        return Err(Error::domain("layer index must be >= 1"));
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::domain("layer scale c must be positive"));
    }
    let t = log_norm - (ell as f64 * c).ln();
    let layer_component = 1.0 / (1.0 + (2.0 * t).exp()).sqrt();
    let scale = 1.0 / (1.0 + (-2.0 * t).exp()).sqrt();
    Ok(ExtendedPoint {
        layer_component,
        spatial: direction.iter().map(|x| x * scale).collect(),
        layer_index: ell,
    })
}

/// Embeds layer `ell` (1-based) of `trace` using layer scale `c`.
pub fn embed_extended(
    trace: &LayerTrace,
    c: f64,
    ell: usize,
    source: NormSource,
) -> Result<ExtendedPoint> {
    if ell == 0 || ell > trace.depth() {
        return Err(Error::domain(format!(
            "layer {ell} outside 1..={}",
            trace.depth()
        )));
    }
    let log_norm = match source {
        NormSource::Accumulated => trace.log_norm_gains[..ell].iter().sum(),
        NormSource::Unit => 0.0,
    };
    embed_direction(&trace.per_layer[ell - 1], log_norm, ell, c)
}

/// Layer components `d_1, ..., d_L` of a trace.
pub fn layer_components(trace: &LayerTrace, c: f64, source: NormSource) -> Result<Vec<f64>> {
    (1..=trace.depth())
        .map(|ell| embed_extended(trace, c, ell, source).map(|p| p.layer_component))
        .collect()
}

/// Angle fraction between two embedded unit vectors.
pub fn extended_angle_fraction(p: &ExtendedPoint, q: &ExtendedPoint) -> Result<f64> {
    check_dim(p.spatial.len(), q.spatial.len())?;
    let (a, b) = (p.as_vector(), q.as_vector());
    let cos = (dot(&a, &b) / (norm(&a) * norm(&b))).clamp(-1.0, 1.0);
    Ok(cos.acos() / PI)
}
