//! Run configuration: parsing, desk-scale defaults and validation.
//!
//! Every optional field left out of a config file is filled from the
//! defaults of its experiment before anything runs. The resolved config is
//! what the manifest echoes, so parsing the echo gives back the same value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wormhole_core::NetConfig;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Converge,
    Sweep,
    Cluster,
    Flip,
    Reconcile,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::Sweep => "sweep",
            Experiment::Cluster => "cluster",
            Experiment::Flip => "flip",
            Experiment::Reconcile => "reconcile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// IDX files `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    Mnist,
    /// Seven-segment glyph digits, optionally with pixel noise.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    /// Which digit-0 image anchors the flip experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_index: Option<usize>,
}

/// Network parameters; any of them may be left to the experiment default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_scale_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub net: NetSpec,
    /// Test population size `N` (per layer for `cluster`, per class for `flip`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Number of digits to reconcile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<usize>,
    /// Draw a fresh test set for every layer (`cluster`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_sets_per_layer: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram_bins: Option<usize>,
    /// Also write per-layer features of every test (`converge`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_features: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

const DEFAULT_SEED: u64 = 1;
const MNIST_SIDE: usize = 28;

fn config_err(field: &str, msg: impl std::fmt::Display) -> RunError {
    RunError::Config(format!("{field}: {msg}"))
}

fn strictly_ascending(xs: &[usize]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            net: NetSpec::default(),
            tests: None,
            eta: None,
            depths: None,
            widths: None,
            tol: None,
            digits: None,
            fresh_sets_per_layer: None,
            histogram_bins: None,
            export_features: None,
            dataset: None,
            threads: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills unset fields with the experiment's desk-scale defaults.
    ///
    /// The defaults are scaled down from the original protocols (which use
    /// widths up to 2^25); they are chosen to finish in seconds to minutes.
    pub fn with_defaults(mut self) -> Self {
        let net = &mut self.net;
        net.seed.get_or_insert(DEFAULT_SEED);
        net.layer_scale_c.get_or_insert(1.0);
        match self.experiment {
            Experiment::Converge => {
                net.input_dim.get_or_insert(16);
                net.width.get_or_insert(4096);
                net.depth.get_or_insert(30);
                self.tests.get_or_insert(2000);
                self.tol.get_or_insert(0.02);
                self.export_features.get_or_insert(false);
            }
            Experiment::Sweep => {
                net.input_dim.get_or_insert(16);
                self.widths
                    .get_or_insert_with(|| vec![16, 64, 256, 1024, 4096]);
                self.depths.get_or_insert_with(|| vec![1, 3, 5, 7, 9, 11]);
                self.tests.get_or_insert(500);
            }
            Experiment::Cluster => {
                net.input_dim.get_or_insert(15);
                net.width.get_or_insert(1 << 18);
                net.depth.get_or_insert(6);
                self.tests.get_or_insert(300);
                self.fresh_sets_per_layer.get_or_insert(true);
            }
            Experiment::Flip => {
                net.input_dim.get_or_insert(MNIST_SIDE * MNIST_SIDE);
                net.width.get_or_insert(8000);
                self.depths.get_or_insert_with(|| vec![1, 2, 3, 4]);
                self.tests.get_or_insert(500);
                self.histogram_bins.get_or_insert(50);
                let ds = self.dataset.get_or_insert(DatasetSpec {
                    source: DataSource::Mnist,
                    mnist_dir: None,
                    anchor_index: None,
                });
                ds.anchor_index.get_or_insert(0);
            }
            Experiment::Reconcile => {
                net.input_dim.get_or_insert(MNIST_SIDE * MNIST_SIDE);
                net.width.get_or_insert(1 << 15);
                self.depths.get_or_insert_with(|| vec![1, 2, 4, 8, 16, 32]);
                self.eta.get_or_insert(1e4);
                self.digits.get_or_insert(5);
                self.dataset.get_or_insert(DatasetSpec {
                    source: DataSource::Mnist,
                    mnist_dir: None,
                    anchor_index: None,
                });
            }
        }
        if let Some(ds) = self.dataset.as_mut() {
            if ds.source == DataSource::Mnist {
                ds.mnist_dir
                    .get_or_insert_with(|| PathBuf::from("data/mnist"));
            }
        }
        self
    }

    fn require<T: Copy>(value: Option<T>, field: &str) -> Result<T, RunError> {
        value.ok_or_else(|| config_err(field, "missing"))
    }

    /// Checks a resolved config; messages start with the offending field.
    pub fn validate(&self) -> Result<(), RunError> {
        let seed = Self::require(self.net.seed, "net.seed")?;
        let c = Self::require(self.net.layer_scale_c, "net.layer_scale_c")?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(config_err(
                "net.layer_scale_c",
                "must be a positive finite real",
            ));
        }
        let k = Self::require(self.net.input_dim, "net.input_dim")?;
        if k == 0 {
            return Err(config_err("net.input_dim", "must be >= 1"));
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(config_err("threads", "must be >= 1"));
            }
        }
        let tests = self.tests;
        if tests == Some(0) {
            return Err(config_err("tests", "must be >= 1"));
        }
        if let Some(depths) = &self.depths {
            if depths.is_empty() || depths[0] == 0 || !strictly_ascending(depths) {
                return Err(config_err(
                    "depths",
                    "must be non-empty, >= 1 and strictly ascending",
                ));
            }
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(config_err("eta", "must be a finite real >= 0"));
            }
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 0.5) {
                return Err(config_err("tol", "must lie in (0, 0.5)"));
            }
        }
        let net_checked = |depth: usize, width: usize| -> Result<(), RunError> {
            NetConfig {
                input_dim: k,
                width,
                depth,
                seed,
                layer_scale_c: c,
            }
            .validate()
            .map_err(|e| config_err("net", e))
        };
        match self.experiment {
            Experiment::Converge | Experiment::Cluster => {
                Self::require(tests, "tests")?;
                let depth = Self::require(self.net.depth, "net.depth")?;
                let width = Self::require(self.net.width, "net.width")?;
                net_checked(depth, width)?;
                if self.experiment == Experiment::Converge {
                    Self::require(self.tol, "tol")?;
                }
            }
            Experiment::Sweep => {
                Self::require(tests, "tests")?;
                let widths = self
                    .widths
                    .as_deref()
                    .ok_or_else(|| config_err("widths", "missing"))?;
                if widths.is_empty() || !strictly_ascending(widths) {
                    return Err(config_err(
                        "widths",
                        "must be non-empty and strictly ascending",
                    ));
                }
                if widths[0] < k {
                    return Err(config_err(
                        "widths",
                        format!("every width must be >= input_dim {k}"),
                    ));
                }
                self.depths
                    .as_ref()
                    .ok_or_else(|| config_err("depths", "missing"))?;
            }
            Experiment::Flip | Experiment::Reconcile => {
                let depths = self
                    .depths
                    .as_ref()
                    .ok_or_else(|| config_err("depths", "missing"))?;
                let width = Self::require(self.net.width, "net.width")?;
                net_checked(*depths.last().unwrap(), width)?;
                let ds = self
                    .dataset
                    .as_ref()
                    .ok_or_else(|| config_err("dataset", "missing"))?;
                if ds.source == DataSource::Mnist && ds.mnist_dir.is_none() {
                    return Err(config_err("dataset.mnist_dir", "missing"));
                }
                if k != MNIST_SIDE * MNIST_SIDE {
                    return Err(config_err(
                        "net.input_dim",
                        format!("digit images have {} pixels", MNIST_SIDE * MNIST_SIDE),
                    ));
                }
                if self.experiment == Experiment::Flip {
                    Self::require(tests, "tests")?;
                    if Self::require(self.histogram_bins, "histogram_bins")? == 0 {
                        return Err(config_err("histogram_bins", "must be >= 1"));
                    }
                } else {
                    Self::require(self.eta, "eta")?;
                    let digits = Self::require(self.digits, "digits")?;
                    if !(1..=10).contains(&digits) {
                        return Err(config_err("digits", "must lie in 1..=10"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses, fills defaults and validates.
    pub fn resolve(text: &str) -> Result<Self, RunError> {
        let cfg = Self::from_json(text)?.with_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self, depth: usize, width: usize) -> NetConfig {
        NetConfig {
            input_dim: self.net.input_dim.unwrap_or(0),
            width,
            depth,
            seed: self.net.seed.unwrap_or(DEFAULT_SEED),
            layer_scale_c: self.net.layer_scale_c.unwrap_or(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_experiment_is_named() {
        let err = RunConfig::resolve(r#"{"tests": 3}"#).unwrap_err();
        assert!(err.to_string().contains("experiment"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = RunConfig::resolve(r#"{"experiment": "converge", "colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"));
        let err =
            RunConfig::resolve(r#"{"experiment": "converge", "net": {"widht": 4}}"#).unwrap_err();
        assert!(err.to_string().contains("widht"));
    }

    #[test]
    fn every_experiment_has_valid_defaults() {
        for e in ["converge", "sweep", "cluster", "flip", "reconcile"] {
            let cfg = RunConfig::resolve(&format!(r#"{{"experiment": "{e}"}}"#)).unwrap();
            let echo = serde_json::to_string(&cfg).unwrap();
            assert_eq!(RunConfig::resolve(&echo).unwrap(), cfg, "{e}");
        }
    }

    #[test]
    fn bad_values_name_their_field() {
        let cases = [
            (r#"{"experiment": "converge", "tol": 0.5}"#, "tol"),
            (r#"{"experiment": "reconcile", "depths": [0, 1]}"#, "depths"),
            (r#"{"experiment": "reconcile", "eta": -1}"#, "eta"),
            (r#"{"experiment": "sweep", "widths": [64, 16]}"#, "widths"),
            (r#"{"experiment": "converge", "net": {"width": 3}}"#, "net"),
            (
                r#"{"experiment": "flip", "net": {"input_dim": 10}}"#,
                "net.input_dim",
            ),
            (r#"{"experiment": "cluster", "threads": 0}"#, "threads"),
        ];
        for (text, field) in cases {
            let err = RunConfig::resolve(text).unwrap_err().to_string();
            assert!(err.starts_with(field), "{text}: {err}");
        }
    }

    #[test]
    fn explicit_values_survive_defaults() {
        let cfg =
            RunConfig::resolve(r#"{"experiment": "converge", "net": {"depth": 3}, "tests": 7}"#)
                .unwrap();
        assert_eq!(cfg.net.depth, Some(3));
        assert_eq!(cfg.net.width, Some(4096));
        assert_eq!(cfg.tests, Some(7));
    }
}
