//! Dispatches a resolved [`RunConfig`] to its experiment and writes the
//! artifacts. `report.json` holds only values determined by the config;
//! timings and thread counts go to `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use wormhole_core::cluster::{
    build_trajectory_clusters, clustering_report, kmeans_lloyd, pca_project, ClusterMetrics,
};
use wormhole_core::collapse::{
    collapse_experiment, collapse_from_fractions, export_features, nll_sweep, test_population_seed,
    CollapseReport, LayerSelect,
};
use wormhole_core::dataset::{
    ensure_dir, fmt_real, gaussian_samples, glyph_digit, load_mnist, write_csv, ImageSet,
};
use wormhole_core::extended::{layer_components, NormSource};
use wormhole_core::flip::{flipped_label_experiment, write_histogram_csv, DPrime};
use wormhole_core::likelihood::angle_fraction;
use wormhole_core::linalg::spearman;
use wormhole_core::model_io::save_model;
use wormhole_core::report::emit_report;
use wormhole_core::rng::{derive_key, tag, CounterRng};
use wormhole_core::wormhole::{
    digit_seed, reconciliation_experiment, Digit, ReconciliationSummary,
};
use wormhole_core::{train_maxlikelihood, Error, RealVector};

use crate::config::{DataSource, Experiment, RunConfig};
use crate::RunError;

const DIGIT_SIDE: usize = 28;
const KMEANS_MAX_ITERS: usize = 300;
/// Pixel noise added to glyph digits when no MNIST files are used.
const GLYPH_NOISE: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Value,
    pub report_path: PathBuf,
    pub manifest_path: PathBuf,
    pub wall_time_seconds: f64,
}

/// Extra facts about a run that belong in the manifest, not the report.
#[derive(Default)]
struct RunLog {
    seeds: BTreeMap<String, u64>,
    timings: BTreeMap<String, Value>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    seeds: &'a BTreeMap<String, u64>,
    timings: &'a BTreeMap<String, Value>,
    notes: &'a [String],
    versions: BTreeMap<&'static str, &'static str>,
    threads: usize,
    wall_time_seconds: f64,
}

fn csv_header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, RunError> {
    serde_json::to_value(v).map_err(|e| RunError::Runtime(e.into()))
}

/// Threads used when neither the command line nor the config sets them.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs a validated config, writing every artifact under `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let threads = cfg.threads.unwrap_or_else(default_threads);
    ensure_dir(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Runtime(Error::Domain(format!("thread pool: {e}"))))?;
    let start = Instant::now();
    let mut log = RunLog::default();
    let report = pool.install(|| match cfg.experiment {
        Experiment::Converge => converge(cfg, out_dir, &mut log),
        Experiment::Sweep => sweep(cfg, out_dir, &mut log),
        Experiment::Cluster => cluster(cfg, out_dir, &mut log),
        Experiment::Flip => flip(cfg, out_dir, &mut log),
        Experiment::Reconcile => reconcile(cfg, out_dir, &mut log),
    })?;
    let wall_time_seconds = start.elapsed().as_secs_f64();

    let report_path = out_dir.join("report.json");
    emit_report(&report, &report_path)?;
    let manifest = Manifest {
        config: cfg,
        seeds: &log.seeds,
        timings: &log.timings,
        notes: &log.notes,
        versions: BTreeMap::from([
            ("wormhole_core", wormhole_core::VERSION),
            ("wormhole_lab", env!("CARGO_PKG_VERSION")),
        ]),
        threads,
        wall_time_seconds,
    };
    let manifest_path = out_dir.join("manifest.json");
    emit_report(&manifest, &manifest_path)?;
    Ok(RunOutcome {
        report,
        report_path,
        manifest_path,
        wall_time_seconds,
    })
}

fn gaussian_anchor(seed: u64, k: usize) -> Result<RealVector, RunError> {
    Ok(RealVector::new(
        CounterRng::from_path(seed, &[tag::ANCHOR]).normals(k),
    )?)
}

#[derive(Serialize)]
struct LayerCollapse {
    layer: usize,
    bimodality_mass: f64,
    mean_anti_loss: f64,
    mean_corr_loss: f64,
    mean_nll: f64,
    group_sizes: (usize, usize),
    anchor_layer_component: f64,
    anchor_log_norm: f64,
}

#[derive(Serialize)]
struct ConvergeReport {
    experiment: &'static str,
    collapse: CollapseReport,
    per_layer: Vec<LayerCollapse>,
}

fn converge(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<Value, RunError> {
    let net = cfg.net_config(cfg.net.depth.unwrap(), cfg.net.width.unwrap());
    let (k, seed) = (net.input_dim, net.seed);
    let n_tests = cfg.tests.unwrap();
    let tol = cfg.tol.unwrap();
    let anchor = gaussian_anchor(seed, k)?;
    let test_seed = test_population_seed(seed);
    log.seeds.insert("model".into(), seed);
    log.seeds.insert("tests".into(), test_seed);

    let t0 = Instant::now();
    let model = train_maxlikelihood(&anchor, &net)?;
    log.timings
        .insert("train_seconds".into(), t0.elapsed().as_secs_f64().into());
    save_model(&model, &out.join("model.whlm"))?;

    let tests = gaussian_samples(n_tests, k, test_seed)?;
    let anchor_trace = model.anchor_trace()?;
    let traces = tests
        .par_iter()
        .enumerate()
        .map(|(i, t)| model.forward_traced(t, i as u64))
        .collect::<wormhole_core::Result<Vec<_>>>()?;
    let components = layer_components(&anchor_trace, net.layer_scale_c, NormSource::Accumulated)?;
    let mut log_norm = 0.0;
    let mut per_layer = Vec::with_capacity(net.depth);
    for (l, &component) in components.iter().enumerate() {
        let thetas = traces
            .iter()
            .map(|tr| angle_fraction(&anchor_trace.per_layer[l], &tr.per_layer[l]))
            .collect::<wormhole_core::Result<Vec<_>>>()?;
        let r = collapse_from_fractions(&thetas, tol)?;
        log_norm += anchor_trace.log_norm_gains[l];
        per_layer.push(LayerCollapse {
            layer: l + 1,
            bimodality_mass: r.bimodality_mass,
            mean_anti_loss: r.mean_anti_loss,
            mean_corr_loss: r.mean_corr_loss,
            mean_nll: r.mean_nll,
            group_sizes: r.group_sizes,
            anchor_layer_component: component,
            anchor_log_norm: log_norm,
        });
    }
    let collapse = collapse_experiment(&model, &tests, tol)?;

    write_csv(
        &out.join("losses.csv"),
        &csv_header(&["sample", "loss"]),
        collapse
            .per_sample_loss
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), fmt_real(*l)]),
    )?;
    write_csv(
        &out.join("per_layer.csv"),
        &csv_header(&[
            "layer",
            "bimodality_mass",
            "mean_nll",
            "mean_anti_loss",
            "mean_corr_loss",
            "layer_component",
        ]),
        per_layer.iter().map(|p| {
            vec![
                p.layer.to_string(),
                fmt_real(p.bimodality_mass),
                fmt_real(p.mean_nll),
                fmt_real(p.mean_anti_loss),
                fmt_real(p.mean_corr_loss),
                fmt_real(p.anchor_layer_component),
            ]
        }),
    )?;
    if cfg.export_features == Some(true) {
        let mut samples = vec![("anchor".to_string(), anchor.clone())];
        samples.extend(
            tests
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("t{i}"), t.clone())),
        );
        export_features(
            &model,
            &samples,
            LayerSelect::All,
            &out.join("features.csv"),
        )?;
    }
    to_value(&ConvergeReport {
        experiment: "converge",
        collapse,
        per_layer,
    })
}

#[derive(Serialize)]
struct SweepReport {
    experiment: &'static str,
    widths: Vec<usize>,
    depths: Vec<usize>,
    nll_matrix: Vec<Vec<f64>>,
}

fn sweep(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<Value, RunError> {
    let k = cfg.net.input_dim.unwrap();
    let seed = cfg.net.seed.unwrap();
    let anchor = gaussian_anchor(seed, k)?;
    let widths = cfg.widths.clone().unwrap();
    let depths = cfg.depths.clone().unwrap();
    log.seeds.insert("model".into(), seed);
    log.seeds.insert("tests".into(), test_population_seed(seed));
    let grid = nll_sweep(&anchor, &widths, &depths, cfg.tests.unwrap(), seed)?;
    log.timings
        .insert("runtime_per_cell".into(), to_value(&grid.runtime_per_cell)?);
    let rows = grid.widths.iter().enumerate().flat_map(|(i, w)| {
        grid.depths
            .iter()
            .enumerate()
            .map(move |(j, d)| (i, j, *w, *d))
    });
    write_csv(
        &out.join("sweep.csv"),
        &csv_header(&["width", "depth", "mean_nll"]),
        rows.map(|(i, j, w, d)| {
            vec![
                w.to_string(),
                d.to_string(),
                fmt_real(grid.nll_matrix[i][j]),
            ]
        }),
    )?;
    to_value(&SweepReport {
        experiment: "sweep",
        widths: grid.widths,
        depths: grid.depths,
        nll_matrix: grid.nll_matrix,
    })
}

#[derive(Serialize)]
struct LayerClusters {
    layer: usize,
    side_counts: [usize; 2],
    metrics: ClusterMetrics,
}

#[derive(Serialize)]
struct TrendReport {
    silhouette: Option<f64>,
    davies_bouldin: Option<f64>,
    inter_cluster: Option<f64>,
    intra_cluster: Option<f64>,
}

#[derive(Serialize)]
struct KMeansSummary {
    clusters: usize,
    iterations: usize,
    inertia: f64,
    /// Fraction of points whose k-means cluster's majority label is their own.
    purity: f64,
}

#[derive(Serialize)]
struct ClusterReport {
    experiment: &'static str,
    points: usize,
    skipped: usize,
    distinct_labels: usize,
    overall: ClusterMetrics,
    per_layer: Vec<LayerClusters>,
    /// Spearman correlation of each metric with the layer index.
    trend: TrendReport,
    kmeans: KMeansSummary,
    pca_variances: Vec<f64>,
}

fn cluster(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<Value, RunError> {
    let net = cfg.net_config(cfg.net.depth.unwrap(), cfg.net.width.unwrap());
    let (k, seed, depth) = (net.input_dim, net.seed, net.depth);
    let n_tests = cfg.tests.unwrap();
    let anchor = gaussian_anchor(seed, k)?;
    let model = train_maxlikelihood(&anchor, &net)?;
    save_model(&model, &out.join("model.whlm"))?;
    let test_seed = test_population_seed(seed);
    log.seeds.insert("model".into(), seed);
    log.seeds.insert("tests".into(), test_seed);
    let sets = if cfg.fresh_sets_per_layer == Some(true) {
        (1..=depth)
            .map(|l| gaussian_samples(n_tests, k, derive_key(test_seed, &[l as u64])))
            .collect::<wormhole_core::Result<Vec<_>>>()?
    } else {
        vec![gaussian_samples(n_tests, k, test_seed)?; depth]
    };
    let assignment = build_trajectory_clusters(&model, &sets)?;
    if assignment.skipped > 0 {
        log.notes.push(format!(
            "{} samples skipped with vanishing output",
            assignment.skipped
        ));
    }
    let per_layer = (1..=depth)
        .map(|l| {
            let sub = assignment.layer_subset(l);
            let ones = (0..sub.len()).filter(|&i| sub.side(i) == 1).count();
            Ok(LayerClusters {
                layer: l,
                side_counts: [sub.len() - ones, ones],
                metrics: clustering_report(&sub)?,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let layers: Vec<f64> = (1..=depth).map(|l| l as f64).collect();
    let trend_of = |f: fn(&ClusterMetrics) -> f64| {
        let ys: Vec<f64> = per_layer.iter().map(|p| f(&p.metrics)).collect();
        spearman(&layers, &ys)
    };
    let trend = TrendReport {
        silhouette: trend_of(|m| m.silhouette),
        davies_bouldin: trend_of(|m| m.davies_bouldin),
        inter_cluster: trend_of(|m| m.inter_cluster),
        intra_cluster: trend_of(|m| m.intra_cluster),
    };
    let overall = clustering_report(&assignment)?;

    let distinct = assignment.distinct_labels();
    let kmeans_seed = derive_key(seed, &[tag::KMEANS]);
    log.seeds.insert("kmeans".into(), kmeans_seed);
    let km = kmeans_lloyd(&assignment.points, distinct, kmeans_seed, KMEANS_MAX_ITERS)?;
    let mut votes: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (c, l) in km.labels.iter().zip(&assignment.labels) {
        *votes.entry((*c, *l)).or_default() += 1;
    }
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for ((c, _), n) in votes {
        let e = best.entry(c).or_default();
        *e = (*e).max(n);
    }
    let purity = best.values().sum::<usize>() as f64 / assignment.len() as f64;

    let pca = pca_project(&assignment.points, 2)?;
    if pca.rank_deficient {
        log.notes
            .push("PCA found fewer than 2 directions with variance".into());
    }
    write_csv(
        &out.join("clusters.csv"),
        &csv_header(&["sample", "layer", "label", "kmeans", "pc1", "pc2"]),
        (0..assignment.len()).map(|i| {
            let c = &pca.coords[i];
            vec![
                assignment.sample_of_point[i].to_string(),
                assignment.layer_of_point[i].to_string(),
                assignment.labels[i].to_string(),
                km.labels[i].to_string(),
                fmt_real(c[0]),
                fmt_real(c.get(1).copied().unwrap_or(0.0)),
            ]
        }),
    )?;
    to_value(&ClusterReport {
        experiment: "cluster",
        points: assignment.len(),
        skipped: assignment.skipped,
        distinct_labels: distinct,
        overall,
        per_layer,
        trend,
        kmeans: KMeansSummary {
            clusters: distinct,
            iterations: km.iterations,
            inertia: km.inertia(),
            purity,
        },
        pca_variances: pca.variances,
    })
}

fn mnist_dir(cfg: &RunConfig) -> PathBuf {
    cfg.dataset
        .as_ref()
        .and_then(|d| d.mnist_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn load_digits(cfg: &RunConfig) -> Result<ImageSet, RunError> {
    let dir = mnist_dir(cfg);
    let set = load_mnist(&dir)?;
    if set.rows != DIGIT_SIDE || set.cols != DIGIT_SIDE {
        return Err(RunError::Runtime(Error::Domain(format!(
            "{}: expected {DIGIT_SIDE}x{DIGIT_SIDE} images, found {}x{}",
            dir.display(),
            set.rows,
            set.cols
        ))));
    }
    Ok(set)
}

/// A glyph digit with clipped Gaussian pixel noise from stream `(seed, i)`.
fn noisy_glyph(digit: u8, seed: u64, i: u64) -> Vec<f64> {
    let noise = CounterRng::from_path(seed, &[tag::SAMPLES, i]).normals(DIGIT_SIDE * DIGIT_SIDE);
    glyph_digit(digit)
        .iter()
        .zip(noise)
        .map(|(p, z)| (p + GLYPH_NOISE * z).clamp(0.0, 1.0))
        .collect()
}

#[derive(Serialize)]
struct FlipDepth {
    depth: usize,
    mu1: f64,
    mu2: f64,
    sigma1: f64,
    sigma2: f64,
    d_prime: DPrime,
}

#[derive(Serialize)]
struct FlipReport {
    experiment: &'static str,
    source: DataSource,
    anchor_index: usize,
    tests_used: usize,
    depths: Vec<FlipDepth>,
    d_prime_strictly_increasing: bool,
}

fn flip(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<Value, RunError> {
    let depths = cfg.depths.clone().unwrap();
    let net = cfg.net_config(*depths.last().unwrap(), cfg.net.width.unwrap());
    let ds = cfg.dataset.as_ref().unwrap();
    let anchor_index = ds.anchor_index.unwrap_or(0);
    let wanted = cfg.tests.unwrap();
    log.seeds.insert("model".into(), net.seed);
    let (anchor, tests) = match ds.source {
        DataSource::Mnist => {
            let set = load_digits(cfg)?;
            let zeros = set.indices_of(0);
            let &anchor_pos = zeros.get(anchor_index).ok_or_else(|| {
                RunError::Config(format!(
                    "dataset.anchor_index: {anchor_index} but only {} digit-0 images",
                    zeros.len()
                ))
            })?;
            let tests: Vec<RealVector> = zeros
                .iter()
                .filter(|&&i| i != anchor_pos)
                .take(wanted)
                .map(|&i| RealVector::new(set.images[i].clone()))
                .collect::<wormhole_core::Result<_>>()?;
            if tests.len() < wanted {
                log.notes.push(format!(
                    "only {} digit-0 test images available, {wanted} requested",
                    tests.len()
                ));
            }
            (RealVector::new(set.images[anchor_pos].clone())?, tests)
        }
        DataSource::Synthetic => {
            let noise_seed = derive_key(net.seed, &[tag::TESTS]);
            log.seeds.insert("glyph_noise".into(), noise_seed);
            let tests = (0..wanted as u64)
                .map(|i| RealVector::new(noisy_glyph(0, noise_seed, i)))
                .collect::<wormhole_core::Result<_>>()?;
            (RealVector::new(glyph_digit(0))?, tests)
        }
    };
    let reports = flipped_label_experiment(&anchor, &tests, &net, &depths)?;
    let bins = cfg.histogram_bins.unwrap();
    for r in &reports {
        write_histogram_csv(&out.join(format!("flip_hist_L{}.csv", r.depth)), r, bins)?;
        write_csv(
            &out.join(format!("flip_scores_L{}.csv", r.depth)),
            &csv_header(&["sample", "score_nonflipped", "score_flipped"]),
            r.scores_nonflipped
                .iter()
                .zip(&r.scores_flipped)
                .enumerate()
                .map(|(i, (a, b))| vec![i.to_string(), fmt_real(*a), fmt_real(*b)]),
        )?;
    }
    let increasing = reports
        .windows(2)
        .all(|w| w[0].d_prime.value() < w[1].d_prime.value());
    to_value(&FlipReport {
        experiment: "flip",
        source: ds.source,
        anchor_index,
        tests_used: tests.len(),
        depths: reports
            .iter()
            .map(|r| FlipDepth {
                depth: r.depth,
                mu1: r.mu1,
                mu2: r.mu2,
                sigma1: r.sigma1,
                sigma2: r.sigma2,
                d_prime: r.d_prime,
            })
            .collect(),
        d_prime_strictly_increasing: increasing,
    })
}

#[derive(Serialize)]
struct DigitTrend {
    digit_index: usize,
    label: Option<u8>,
    /// Spearman correlation of the residual with depth.
    residual_spearman: Option<f64>,
    residual_strictly_decreasing: bool,
}

#[derive(Serialize)]
struct ReconcileReport {
    experiment: &'static str,
    source: DataSource,
    eta: f64,
    records: Vec<ReconciliationSummary>,
    per_digit: Vec<DigitTrend>,
    max_algebra_error: f64,
}

fn reconcile(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<Value, RunError> {
    let depths = cfg.depths.clone().unwrap();
    let net = cfg.net_config(*depths.last().unwrap(), cfg.net.width.unwrap());
    let ds = cfg.dataset.as_ref().unwrap();
    let count = cfg.digits.unwrap();
    let eta = cfg.eta.unwrap();
    let digits: Vec<Digit> = match ds.source {
        DataSource::Mnist => {
            let set = load_digits(cfg)?;
            (0..count as u8)
                .map(|d| {
                    let i = *set.indices_of(d).first().ok_or_else(|| {
                        RunError::Runtime(Error::Domain(format!("no image of digit {d}")))
                    })?;
                    Ok(Digit {
                        label: Some(d),
                        image: set.images[i].clone(),
                    })
                })
                .collect::<Result<_, RunError>>()?
        }
        DataSource::Synthetic => (0..count as u8)
            .map(|d| Digit {
                label: Some(d),
                image: glyph_digit(d),
            })
            .collect(),
    };
    for i in 0..digits.len() {
        log.seeds
            .insert(format!("digit_{i}"), digit_seed(net.seed, i));
    }
    let run = reconciliation_experiment(&digits, &net, eta, &depths, Some((out, DIGIT_SIDE)))?;
    let depth_axis: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    let per_digit = digits
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let residuals: Vec<f64> = run
                .summaries
                .iter()
                .filter(|s| s.digit_index == i)
                .map(|s| s.residual)
                .collect();
            DigitTrend {
                digit_index: i,
                label: d.label,
                residual_spearman: spearman(&depth_axis, &residuals),
                residual_strictly_decreasing: residuals.windows(2).all(|w| w[1] < w[0]),
            }
        })
        .collect();
    let max_algebra_error = run
        .summaries
        .iter()
        .map(|s| s.algebra_error)
        .fold(0.0, f64::max);
    write_csv(
        &out.join("reconcile.csv"),
        &csv_header(&[
            "digit",
            "depth",
            "sign",
            "residual",
            "rel_error",
            "wormhole_distance",
        ]),
        run.summaries.iter().map(|s| {
            vec![
                s.digit_index.to_string(),
                s.depth.to_string(),
                s.sign.to_string(),
                fmt_real(s.residual),
                s.rel_error.map(fmt_real).unwrap_or_default(),
                fmt_real(s.wormhole_distance),
            ]
        }),
    )?;
    to_value(&ReconcileReport {
        experiment: "reconcile",
        source: ds.source,
        eta,
        records: run.summaries,
        per_digit,
        max_algebra_error,
    })
}
