//! Gradient-free max-likelihood training of a linear stack.
//!
//! Each layer draws a virtual `n x k` Gaussian candidate matrix and keeps the
//! `k` rows that maximize `|G w|` for the current (normalized) vector `w`.
//! Since `|G w|^2` is the sum of `(v_i . w)^2` over the kept rows, the best
//! subset is simply the `k` largest squared inner products, found in one
//! streaming pass. Candidate rows are regenerated from `(seed, layer, row)`
//! and never stored.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, matvec, norm, normalized, RealVector};
use crate::rng::{tag, CounterRng};

/// Rows scored per work item when streaming candidates.
const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub seed: u64,
    #[serde(default = "default_layer_scale")]
    pub layer_scale_c: f64,
}

fn default_layer_scale() -> f64 {
    1.0
}

impl NetConfig {
    pub fn new(input_dim: usize, width: usize, depth: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            input_dim,
            width,
            depth,
            seed,
            layer_scale_c: default_layer_scale(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_layer_scale(mut self, c: f64) -> Result<Self> {
        self.layer_scale_c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::domain("input_dim must be >= 1"));
        }
        if self.depth == 0 {
            return Err(Error::domain("depth must be >= 1"));
        }
        if self.width < self.input_dim {
            return Err(Error::domain(format!(
                "width {} must be >= input_dim {}",
                self.width, self.input_dim
            )));
        }
        if !(self.layer_scale_c > 0.0 && self.layer_scale_c.is_finite()) {
            return Err(Error::domain(
                "layer_scale_c must be a positive finite real",
            ));
        }
        Ok(())
    }
}

/// Stream that generates the candidate rows of `layer` (1-based).
pub fn candidate_stream(seed: u64, layer: usize) -> CounterRng {
    CounterRng::from_path(seed, &[tag::CANDIDATE_LAYER, layer as u64])
}

/// Row `row` of the candidate matrix of `layer`.
pub fn candidate_row(seed: u64, layer: usize, row: usize, dim: usize) -> Vec<f64> {
    candidate_stream(seed, layer).child(row as u64).normals(dim)
}

/// The outcome of selecting one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSelection {
    /// Selected candidate rows, ascending original index.
    pub rows: Vec<usize>,
    /// `k x k` row-major matrix built from `rows`.
    pub matrix: Vec<f64>,
    /// `|G w|` for the vector the selection was made for.
    pub gain: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    row: usize,
}

// Higher score ranks higher; equal scores favour the lower row index.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.row.cmp(&self.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Bounded min-heap keeping the `k` best candidates seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Candidate>>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if c > *worst {
                self.heap.pop();
                self.heap.push(Reverse(c));
            }
        }
    }

    fn into_vec(self) -> Vec<Candidate> {
        self.heap.into_iter().map(|Reverse(c)| c).collect()
    }
}

fn merge_topk(k: usize, mut a: Vec<Candidate>, b: Vec<Candidate>) -> Vec<Candidate> {
    a.extend(b);
    a.sort_unstable_by(|x, y| y.cmp(x));
    a.truncate(k);
    a
}

/// Selects the `k = w.len()` rows of the `width x k` candidate matrix of
/// `layer` that maximize `|G w|`.
///
/// Scoring runs on the ambient rayon pool; the result does not depend on
/// the number of threads.
pub fn row_topk_select(w: &[f64], width: usize, seed: u64, layer: usize) -> Result<LayerSelection> {
    let k = w.len();
    if k == 0 || width < k {
        return Err(Error::domain(format!(
            "need 1 <= k <= width, got k={k}, width={width}"
        )));
    }
    if norm(w) == 0.0 {
        return Err(Error::degenerate("layer input is the zero vector"));
    }
    let stream = candidate_stream(seed, layer);
    let chunks = width.div_ceil(CHUNK_ROWS);
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut top = TopK::new(k);
            let mut row = vec![0.0; k];
            let end = ((c + 1) * CHUNK_ROWS).min(width);
            for i in c * CHUNK_ROWS..end {
                stream.child(i as u64).fill_normals(&mut row);
                let p = dot(&row, w);
                top.offer(Candidate {
                    score: p * p,
                    row: i,
                });
            }
            top.into_vec()
        })
        .reduce(Vec::new, |a, b| merge_topk(k, a, b));

    let mut rows: Vec<usize> = best.into_iter().map(|c| c.row).collect();
    rows.sort_unstable();
    let mut matrix = Vec::with_capacity(k * k);
    for &r in &rows {
        matrix.extend(stream.child(r as u64).normals(k));
    }
    let gain = norm(&matvec(&matrix, k, w));
    Ok(LayerSelection { rows, matrix, gain })
}

/// Builds a layer from `k` candidate rows drawn uniformly without
/// replacement; the no-optimization baseline.
pub fn random_select(w: &[f64], width: usize, seed: u64, layer: usize) -> Result<LayerSelection> {
    let k = w.len();
    if k == 0 || width < k {
        return Err(Error::domain(format!(
            "need 1 <= k <= width, got k={k}, width={width}"
        )));
    }
    let mut rng = CounterRng::from_path(seed, &[tag::RANDOM_SELECTION, layer as u64]).seeded_rng();
    let mut rows = rand::seq::index::sample(&mut rng, width, k).into_vec();
    rows.sort_unstable();
    let stream = candidate_stream(seed, layer);
    let mut matrix = Vec::with_capacity(k * k);
    for &r in &rows {
        matrix.extend(stream.child(r as u64).normals(k));
    }
    let gain = norm(&matvec(&matrix, k, w));
    Ok(LayerSelection { rows, matrix, gain })
}

/// A trained stack `G_L ... G_1` with per-layer norm-gain bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub config: NetConfig,
    /// The normalized training input.
    pub anchor_input: Vec<f64>,
    /// `L` row-major `k x k` matrices, layer 1 first.
    pub layers: Vec<Vec<f64>>,
    /// Natural log of `|G_l w_{l-1}|` for the normalized anchor trajectory.
    pub log_norm_gains: Vec<f64>,
    /// Unit output of the anchor at the last layer.
    pub anchor_output: Vec<f64>,
}

/// Normalized per-layer outputs of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub sample_id: u64,
    /// Unit vectors for layers `1..=L`.
    pub per_layer: Vec<Vec<f64>>,
    /// Natural log of each layer's norm gain on this trajectory.
    pub log_norm_gains: Vec<f64>,
}

impl LayerTrace {
    pub fn depth(&self) -> usize {
        self.per_layer.len()
    }

    pub fn output(&self) -> &[f64] {
        self.per_layer.last().expect("trace has at least one layer")
    }
}

fn train_with<F>(w: &RealVector, cfg: &NetConfig, mut select: F) -> Result<LinearModel>
where
    F: FnMut(&[f64], usize) -> Result<LayerSelection>,
{
    cfg.validate()?;
    check_dim(cfg.input_dim, w.dim())?;
    let anchor_input = w.normalized()?.into_inner();
    let mut current = anchor_input.clone();
    let mut layers = Vec::with_capacity(cfg.depth);
    let mut log_norm_gains = Vec::with_capacity(cfg.depth);
    for layer in 1..=cfg.depth {
        let sel = select(&current, layer)?;
        let out = matvec(&sel.matrix, cfg.input_dim, &current);
        current = normalized(&out).ok_or(Error::DegenerateLayer { layer })?;
        log_norm_gains.push(norm(&out).ln());
        layers.push(sel.matrix);
    }
    Ok(LinearModel {
        config: *cfg,
        anchor_input,
        layers,
        log_norm_gains,
        anchor_output: current,
    })
}

/// Trains the stack on a single input by per-layer norm maximization.
///
/// Intermediate vectors are renormalized after every layer and the gains
/// are kept as logs, so depth never overflows.
pub fn train_maxlikelihood(w: &RealVector, cfg: &NetConfig) -> Result<LinearModel> {
    train_with(w, cfg, |cur, layer| {
        row_topk_select(cur, cfg.width, cfg.seed, layer)
    })
}

/// Same stack shape with uniformly random row selection.
pub fn train_random_selection(w: &RealVector, cfg: &NetConfig) -> Result<LinearModel> {
    train_with(w, cfg, |cur, layer| {
        random_select(cur, cfg.width, cfg.seed, layer)
    })
}

impl LinearModel {
    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// The first `depth` layers as a model of their own. Layers are keyed by
    /// `(seed, layer)`, so this equals training with `depth` directly.
    pub fn prefix(&self, depth: usize) -> Result<LinearModel> {
        if depth == 0 || depth > self.depth() {
            return Err(Error::domain(format!(
                "prefix depth {depth} outside 1..={}",
                self.depth()
            )));
        }
        let mut model = LinearModel {
            config: NetConfig {
                depth,
                ..self.config
            },
            anchor_input: self.anchor_input.clone(),
            layers: self.layers[..depth].to_vec(),
            log_norm_gains: self.log_norm_gains[..depth].to_vec(),
            anchor_output: Vec::new(),
        };
        model.anchor_output = model.forward_slice(&self.anchor_input)?;
        Ok(model)
    }

    fn forward_slice(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), w.len())?;
        let mut current =
            normalized(w).ok_or_else(|| Error::degenerate("input is the zero vector"))?;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = matvec(layer, self.input_dim(), &current);
            current = normalized(&out).ok_or(Error::DegenerateLayer { layer: i + 1 })?;
        }
        Ok(current)
    }

    /// Unit output `G_L ... G_1 w' / |...|`.
    pub fn forward_full(&self, w_prime: &RealVector) -> Result<Vec<f64>> {
        self.forward_slice(w_prime.as_slice())
    }

    /// Every intermediate unit output of `w'`.
    pub fn forward_traced(&self, w_prime: &RealVector, sample_id: u64) -> Result<LayerTrace> {
        check_dim(self.input_dim(), w_prime.dim())?;
        let mut current = w_prime.normalized()?.into_inner();
        let mut per_layer = Vec::with_capacity(self.depth());
        let mut log_norm_gains = Vec::with_capacity(self.depth());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = matvec(layer, self.input_dim(), &current);
            current = normalized(&out).ok_or(Error::DegenerateLayer { layer: i + 1 })?;
            log_norm_gains.push(norm(&out).ln());
            per_layer.push(current.clone());
        }
        Ok(LayerTrace {
            sample_id,
            per_layer,
            log_norm_gains,
        })
    }

    /// The anchor's own trajectory, replayed through the stored layers.
    pub fn anchor_trace(&self) -> Result<LayerTrace> {
        let anchor = RealVector::new(self.anchor_input.clone())?;
        self.forward_traced(&anchor, u64::MAX)
    }

    /// Forward a batch in parallel; output order follows input order.
    pub fn forward_many(&self, inputs: &[RealVector]) -> Vec<Result<Vec<f64>>> {
        inputs.par_iter().map(|w| self.forward_full(w)).collect()
    }
}
