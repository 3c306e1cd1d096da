//! Flipped-label classification: images and their sign-flipped copies are
//! scored by angle to the anchor output, and the separation of the two score
//! distributions is summarized by the decidability index
//! `d' = |mu1 - mu2| / sqrt((sigma1^2 + sigma2^2) / 2)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{fmt_real, write_csv};
use crate::error::{check_dim, Error, Result};
use crate::likelihood::angle_fraction;
use crate::linalg::{mean_std, RealVector};
use crate::net::{train_maxlikelihood, LinearModel, NetConfig};

/// Element-wise negation (inverts a [0, 1] image to [-1, 0]).
pub fn flip_sign(image: &RealVector) -> RealVector {
    -image
}

/// Angle fraction between the anchor output and the test's output.
pub fn angle_score(model: &LinearModel, image: &RealVector) -> Result<f64> {
    check_dim(model.input_dim(), image.dim())?;
    angle_fraction(&model.anchor_output, &model.forward_full(image)?)
}

/// A decidability value; serialized as a number, or the string `"+inf"`
/// when both spreads vanish with distinct means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DPrime {
    Finite(f64),
    Infinite,
}

impl DPrime {
    pub fn value(self) -> f64 {
        match self {
            DPrime::Finite(x) => x,
            DPrime::Infinite => f64::INFINITY,
        }
    }
}

const INFINITE_TAG: &str = "+inf";

impl Serialize for DPrime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DPrime::Finite(x) => s.serialize_f64(*x),
            DPrime::Infinite => s.serialize_str(INFINITE_TAG),
        }
    }
}

impl<'de> Deserialize<'de> for DPrime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(DPrime::Finite(x)),
            Raw::Tag(t) if t == INFINITE_TAG => Ok(DPrime::Infinite),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unknown d' tag {t:?}"))),
        }
    }
}

/// `d'` from group means and population standard deviations.
pub fn decidability_index(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> DPrime {
    let spread = ((sigma1 * sigma1 + sigma2 * sigma2) / 2.0).sqrt();
    let gap = (mu1 - mu2).abs();
    if spread == 0.0 {
        if gap == 0.0 {
            DPrime::Finite(0.0)
        } else {
            DPrime::Infinite
        }
    } else {
        DPrime::Finite(gap / spread)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecidabilityReport {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub d_prime: DPrime,
    pub depth: usize,
    pub scores_nonflipped: Vec<f64>,
    pub scores_flipped: Vec<f64>,
}

impl DecidabilityReport {
    pub fn from_scores(depth: usize, nonflipped: Vec<f64>, flipped: Vec<f64>) -> Result<Self> {
        let (mu1, sigma1) =
            mean_std(&nonflipped).ok_or_else(|| Error::domain("no non-flipped scores"))?;
        let (mu2, sigma2) = mean_std(&flipped).ok_or_else(|| Error::domain("no flipped scores"))?;
        Ok(Self {
            mu1,
            mu2,
            sigma1,
            sigma2,
            d_prime: decidability_index(mu1, sigma1, mu2, sigma2),
            depth,
            scores_nonflipped: nonflipped,
            scores_flipped: flipped,
        })
    }
}

/// Trains on `anchor` once at the deepest requested depth and, for every
/// depth, scores the tests and their flipped copies against the anchor
/// output of that depth's prefix.
pub fn flipped_label_experiment(
    anchor: &RealVector,
    tests: &[RealVector],
    cfg: &NetConfig,
    depths: &[usize],
) -> Result<Vec<DecidabilityReport>> {
    if tests.is_empty() {
        return Err(Error::domain("flipped-label experiment needs test images"));
    }
    if depths.is_empty() || depths[0] == 0 || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain(
            "depths must be non-empty, >= 1 and strictly ascending",
        ));
    }
    let cfg = NetConfig {
        depth: *depths.last().unwrap(),
        ..*cfg
    };
    let model = train_maxlikelihood(anchor, &cfg)?;
    let anchor_trace = model.anchor_trace()?;
    let trace_all = |set: &[RealVector]| {
        set.par_iter()
            .enumerate()
            .map(|(i, t)| model.forward_traced(t, i as u64))
            .collect::<Result<Vec<_>>>()
    };
    let flipped: Vec<RealVector> = tests.iter().map(flip_sign).collect();
    let plain_traces = trace_all(tests)?;
    let flipped_traces = trace_all(&flipped)?;
    depths
        .iter()
        .map(|&d| {
            let reference = &anchor_trace.per_layer[d - 1];
            let score = |traces: &[crate::net::LayerTrace]| {
                traces
                    .iter()
                    .map(|tr| angle_fraction(reference, &tr.per_layer[d - 1]))
                    .collect::<Result<Vec<f64>>>()
            };
            DecidabilityReport::from_scores(d, score(&plain_traces)?, score(&flipped_traces)?)
        })
        .collect()
}

/// Equal-width histogram over [0, 1]: `(lo, hi, nonflipped, flipped)`.
pub fn score_histogram(report: &DecidabilityReport, bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let bins = bins.max(1);
    let bin_of = |s: f64| ((s * bins as f64) as usize).min(bins - 1);
    let mut a = vec![0usize; bins];
    let mut b = vec![0usize; bins];
    report
        .scores_nonflipped
        .iter()
        .for_each(|&s| a[bin_of(s)] += 1);
    report
        .scores_flipped
        .iter()
        .for_each(|&s| b[bin_of(s)] += 1);
    (0..bins)
        .map(|i| {
            (
                i as f64 / bins as f64,
                (i + 1) as f64 / bins as f64,
                a[i],
                b[i],
            )
        })
        .collect()
}

pub fn write_histogram_csv(path: &Path, report: &DecidabilityReport, bins: usize) -> Result<()> {
    let header: Vec<String> = ["bin_lo", "bin_hi", "count_nonflipped", "count_flipped"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = score_histogram(report, bins)
        .into_iter()
        .map(|(lo, hi, a, b)| vec![fmt_real(lo), fmt_real(hi), a.to_string(), b.to_string()]);
    write_csv(path, &header, rows)
}
