//! Experiment execution. For every (method, dataset, fold) cell: grid-search
//! hyperparameters by validation accuracy on a bundle that physically lacks
//! all test rows, retrain on train ∪ val, then evaluate the requested modes.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use zsbench_core::dap::train_dap;
use zsbench_core::eval::{evaluate_gzsl, evaluate_zsl, EvalReport};
use zsbench_core::hybrid::{train_conse, train_sse, train_sync};
use zsbench_core::io::load_dataset;
use zsbench_core::linear::{train_eszsl, train_sgd, BilinearMethod, EszslConfig, RankingLoss};
use zsbench_core::nonlinear::{
    fit_novelty, train_cmt, train_latem, CmtMethod, CmtStarMethod, LatemMethod,
};
use zsbench_core::sgd::SgdConfig;
use zsbench_core::splitgen::{make_synthetic, make_validation_folds};
use zsbench_core::{DatasetBundle, Error, Result, SplitSpec, TrainedMethod};

use crate::config::{BenchmarkConfig, DatasetSpec, MethodSpec, Mode};

/// One benchmark measurement. Field order is the on-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub method: String,
    pub dataset: String,
    pub fold: usize,
    pub mode: String,
    pub hyperparameters: Value,
    pub acc_unseen: f64,
    pub acc_seen: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub seconds: f64,
}

/// A cell (or single mode of a cell) that failed, with enough context to
/// find it. Failures never abort sibling cells.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub method: String,
    pub dataset: String,
    pub fold: usize,
    pub mode: Option<Mode>,
    pub message: String,
}

impl std::fmt::Display for CellFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.mode {
            Some(m) => write!(
                f,
                "{} on {} fold {} ({}): {}",
                self.method, self.dataset, self.fold, m, self.message
            ),
            None => write!(
                f,
                "{} on {} fold {}: {}",
                self.method, self.dataset, self.fold, self.message
            ),
        }
    }
}

/// Everything a run produces: records in deterministic cell order plus the
/// isolated failures.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<ResultsRecord>,
    pub failures: Vec<CellFailure>,
}

/// One concrete hyperparameter assignment, ready to train.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainPoint {
    Ranking { loss: RankingLoss, lr: f64, epochs: usize, seed: u64 },
    Eszsl { gamma: f64, lambda: f64 },
    Latem { lr: f64, epochs: usize, seed: u64, k: usize },
    Cmt { lr: f64, epochs: usize, seed: u64, hidden: usize },
    CmtStar { lr: f64, epochs: usize, seed: u64, hidden: usize, quantile: f64 },
    Dap { reg: f64 },
    Conse { reg: f64, top_t: usize },
    Sse { reg: f64 },
    Sync { sigma: f64, reg: f64 },
}

impl TrainPoint {
    /// The assignment as the JSON object stored in the results record.
    pub fn to_json(&self) -> Value {
        match *self {
            TrainPoint::Ranking { lr, epochs, seed, .. } => {
                json!({"learning_rate": lr, "epochs": epochs, "sgd_seed": seed})
            }
            TrainPoint::Eszsl { gamma, lambda } => json!({"gamma": gamma, "lambda": lambda}),
            TrainPoint::Latem { lr, epochs, seed, k } => {
                json!({"learning_rate": lr, "epochs": epochs, "sgd_seed": seed, "k": k})
            }
            TrainPoint::Cmt { lr, epochs, seed, hidden } => {
                json!({"learning_rate": lr, "epochs": epochs, "sgd_seed": seed, "hidden": hidden})
            }
            TrainPoint::CmtStar { lr, epochs, seed, hidden, quantile } => json!({
                "learning_rate": lr, "epochs": epochs, "sgd_seed": seed,
                "hidden": hidden, "quantile": quantile
            }),
            TrainPoint::Dap { reg } => json!({"reg": reg}),
            TrainPoint::Conse { reg, top_t } => json!({"reg": reg, "top_t": top_t}),
            TrainPoint::Sse { reg } => json!({"reg": reg}),
            TrainPoint::Sync { sigma, reg } => json!({"sigma": sigma, "reg": reg}),
        }
    }

    /// Train on the bundle's training rows and return the scoring model.
    pub fn train(&self, bundle: &DatasetBundle) -> Result<Box<dyn TrainedMethod>> {
        match *self {
            TrainPoint::Ranking { loss, lr, epochs, seed } => {
                let cfg = SgdConfig::new(lr, epochs, seed)?;
                Ok(Box::new(BilinearMethod::new(train_sgd(loss, bundle, &cfg)?)))
            }
            TrainPoint::Eszsl { gamma, lambda } => {
                let cfg = EszslConfig::new(gamma, lambda)?;
                Ok(Box::new(BilinearMethod::new(train_eszsl(bundle, &cfg)?)))
            }
            TrainPoint::Latem { lr, epochs, seed, k } => {
                let cfg = SgdConfig::new(lr, epochs, seed)?;
                Ok(Box::new(LatemMethod::new(train_latem(bundle, &cfg, k)?)))
            }
            TrainPoint::Cmt { lr, epochs, seed, hidden } => {
                let cfg = SgdConfig::new(lr, epochs, seed)?;
                Ok(Box::new(CmtMethod::new(train_cmt(bundle, &cfg, hidden)?)))
            }
            TrainPoint::CmtStar { lr, epochs, seed, hidden, quantile } => {
                let cfg = SgdConfig::new(lr, epochs, seed)?;
                let model = train_cmt(bundle, &cfg, hidden)?;
                let detector = fit_novelty(&model, bundle, quantile)?;
                let seen = bundle.split().train_classes().to_vec();
                Ok(Box::new(CmtStarMethod::new(model, detector, seen)?))
            }
            TrainPoint::Dap { reg } => Ok(Box::new(train_dap(bundle, reg)?)),
            TrainPoint::Conse { reg, top_t } => Ok(Box::new(train_conse(bundle, reg, top_t)?)),
            TrainPoint::Sse { reg } => Ok(Box::new(train_sse(bundle, reg)?)),
            TrainPoint::Sync { sigma, reg } => Ok(Box::new(train_sync(bundle, sigma, reg)?)),
        }
    }
}

/// Expand a method's grid into concrete points, row-major in declared axis
/// order so "first point wins ties" is well defined.
pub fn grid_points(spec: &MethodSpec) -> Vec<TrainPoint> {
    let mut pts = Vec::with_capacity(spec.grid_size());
    match spec {
        MethodSpec::Devise(g) | MethodSpec::Ale(g) | MethodSpec::Sje(g) => {
            let loss = match spec {
                MethodSpec::Devise(_) => RankingLoss::Devise,
                MethodSpec::Ale(_) => RankingLoss::Ale,
                _ => RankingLoss::Sje,
            };
            for &lr in &g.learning_rate {
                for &epochs in &g.epochs {
                    for &seed in &g.sgd_seed {
                        pts.push(TrainPoint::Ranking { loss, lr, epochs, seed });
                    }
                }
            }
        }
        MethodSpec::Eszsl(g) => {
            for &gamma in &g.gamma {
                for &lambda in &g.lambda {
                    pts.push(TrainPoint::Eszsl { gamma, lambda });
                }
            }
        }
        MethodSpec::Latem(g) => {
            for &lr in &g.learning_rate {
                for &epochs in &g.epochs {
                    for &seed in &g.sgd_seed {
                        for &k in &g.k {
                            pts.push(TrainPoint::Latem { lr, epochs, seed, k });
                        }
                    }
                }
            }
        }
        MethodSpec::Cmt(g) => {
            for &lr in &g.learning_rate {
                for &epochs in &g.epochs {
                    for &seed in &g.sgd_seed {
                        for &hidden in &g.hidden {
                            pts.push(TrainPoint::Cmt { lr, epochs, seed, hidden });
                        }
                    }
                }
            }
        }
        MethodSpec::CmtStar(g) => {
            for &lr in &g.learning_rate {
                for &epochs in &g.epochs {
                    for &seed in &g.sgd_seed {
                        for &hidden in &g.hidden {
                            for &quantile in &g.quantile {
                                pts.push(TrainPoint::CmtStar { lr, epochs, seed, hidden, quantile });
                            }
                        }
                    }
                }
            }
        }
        MethodSpec::Dap(g) => {
            for &reg in &g.reg {
                pts.push(TrainPoint::Dap { reg });
            }
        }
        MethodSpec::Conse(g) => {
            for &reg in &g.reg {
                for &top_t in &g.top_t {
                    pts.push(TrainPoint::Conse { reg, top_t });
                }
            }
        }
        MethodSpec::Sse(g) => {
            for &reg in &g.reg {
                pts.push(TrainPoint::Sse { reg });
            }
        }
        MethodSpec::Sync(g) => {
            for &sigma in &g.sigma {
                for &reg in &g.reg {
                    pts.push(TrainPoint::Sync { sigma, reg });
                }
            }
        }
    }
    pts
}

/// Load or generate one dataset.
pub fn materialize_dataset(spec: &DatasetSpec) -> Result<DatasetBundle> {
    match (&spec.dir, &spec.synthetic) {
        (Some(dir), None) => load_dataset(dir),
        (None, Some(cfg)) => make_synthetic(cfg),
        _ => Err(Error::invalid(
            "config",
            format!("dataset {:?} must have exactly one source", spec.name),
        )),
    }
}

/// The bundle the grid search is allowed to see: only rows of fold-train and
/// fold-val classes, with the base split's held-out seen images removed. The
/// fold's val classes play the role of unseen test classes.
pub fn selection_bundle(base: &DatasetBundle, fold: &SplitSpec) -> Result<DatasetBundle> {
    let mut keep_classes: Vec<usize> = fold
        .train_classes()
        .iter()
        .chain(fold.val_classes().iter())
        .copied()
        .collect();
    keep_classes.sort_unstable();
    let held = base.split().test_seen_image_indices();
    let rows: Vec<usize> = base
        .rows_labeled_in(&keep_classes)
        .into_iter()
        .filter(|i| held.binary_search(i).is_err())
        .collect();
    let split = SplitSpec::new(
        fold.train_classes().to_vec(),
        Vec::new(),
        fold.val_classes().to_vec(),
        Vec::new(),
        format!("{}-selection", fold.name()),
    )?;
    base.subset_rows(&rows, split)
}

/// The bundle the chosen point retrains on: all rows, train ∪ val as the
/// training classes, the base test classes and held-out seen images intact.
pub fn retrain_bundle(base: &DatasetBundle, fold: &SplitSpec) -> Result<DatasetBundle> {
    let split = SplitSpec::new(
        fold.seen_classes(),
        Vec::new(),
        base.split().test_unseen_classes().to_vec(),
        base.split().test_seen_image_indices().to_vec(),
        fold.name().to_string(),
    )?;
    base.with_split(split)
}

/// Pick the grid point with the highest validation accuracy; ties keep the
/// earliest point. Single-point grids skip the search entirely.
pub fn select_point(points: &[TrainPoint], selection: &DatasetBundle) -> Result<(TrainPoint, f64)> {
    assert!(!points.is_empty(), "config validation guarantees a nonempty grid");
    if points.len() == 1 {
        return Ok((points[0].clone(), f64::NAN));
    }
    let val_classes = selection.split().test_unseen_classes();
    if val_classes.is_empty() {
        return Err(Error::invalid(
            "hyperparameter search",
            "grid has several points but the fold has no validation classes",
        ));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let model = p.train(selection)?;
        let acc = evaluate_zsl(model.as_ref(), selection, val_classes)?.acc_unseen;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((i, acc));
        }
    }
    let (idx, acc) = best.expect("at least one grid point evaluated");
    Ok((points[idx].clone(), acc))
}

fn eval_mode(
    mode: Mode,
    method: &dyn TrainedMethod,
    bundle: &DatasetBundle,
) -> Result<EvalReport> {
    match mode {
        Mode::Zsl => evaluate_zsl(method, bundle, bundle.split().test_unseen_classes()),
        Mode::Gzsl => evaluate_gzsl(method, bundle),
    }
}

struct Cell {
    method_idx: usize,
    dataset_idx: usize,
    fold_idx: usize,
}

struct CellOutput {
    records: Vec<ResultsRecord>,
    failures: Vec<CellFailure>,
}

fn run_cell(
    cfg: &BenchmarkConfig,
    cell: &Cell,
    base: &DatasetBundle,
    folds: &[SplitSpec],
) -> CellOutput {
    let spec = &cfg.methods[cell.method_idx];
    let dataset_name = cfg.datasets[cell.dataset_idx].name.clone();
    let method_name = spec.display_name().to_string();
    let fold = &folds[cell.fold_idx];
    let fail_all = |message: String| CellOutput {
        records: Vec::new(),
        failures: vec![CellFailure {
            method: method_name.clone(),
            dataset: dataset_name.clone(),
            fold: cell.fold_idx,
            mode: None,
            message,
        }],
    };

    let started = Instant::now();
    let points = grid_points(spec);
    let chosen = if points.len() > 1 {
        let selection = match selection_bundle(base, fold) {
            Ok(b) => b,
            Err(e) => return fail_all(format!("building selection bundle: {e}")),
        };
        match select_point(&points, &selection) {
            Ok((p, _)) => p,
            Err(e) => return fail_all(format!("hyperparameter search: {e}")),
        }
    } else {
        points[0].clone()
    };

    let retrain = match retrain_bundle(base, fold) {
        Ok(b) => b,
        Err(e) => return fail_all(format!("building retrain bundle: {e}")),
    };
    let model = match chosen.train(&retrain) {
        Ok(m) => m,
        Err(e) => return fail_all(format!("training: {e}")),
    };

    let mut out = CellOutput {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for &mode in &cfg.modes {
        match eval_mode(mode, model.as_ref(), &retrain) {
            Ok(report) => {
                let seconds = if cfg.record_timings {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                out.records.push(ResultsRecord {
                    method: method_name.clone(),
                    dataset: dataset_name.clone(),
                    fold: cell.fold_idx,
                    mode: mode.to_string(),
                    hyperparameters: chosen.to_json(),
                    acc_unseen: report.acc_unseen,
                    acc_seen: report.acc_seen,
                    harmonic_mean: report.harmonic_mean,
                    seconds,
                });
            }
            Err(e) => out.failures.push(CellFailure {
                method: method_name.clone(),
                dataset: dataset_name.clone(),
                fold: cell.fold_idx,
                mode: Some(mode),
                message: e.to_string(),
            }),
        }
    }
    out
}

/// Run the whole benchmark. Cells execute in parallel up to the worker
/// budget; outputs are merged in deterministic (dataset, fold, method) order
/// no matter which cell finishes first.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<RunOutcome> {
    cfg.validate()?;

    let mut bundles: Vec<Arc<DatasetBundle>> = Vec::with_capacity(cfg.datasets.len());
    let mut fold_sets: Vec<Arc<Vec<SplitSpec>>> = Vec::with_capacity(cfg.datasets.len());
    for spec in &cfg.datasets {
        let bundle = materialize_dataset(spec)
            .map_err(|e| Error::invalid("dataset", format!("{}: {e}", spec.name)))?;
        let folds = if cfg.folds == 1 {
            vec![bundle.split().clone()]
        } else {
            make_validation_folds(bundle.split(), cfg.folds, cfg.seed)
                .map_err(|e| Error::invalid("dataset", format!("{}: {e}", spec.name)))?
        };
        bundles.push(Arc::new(bundle));
        fold_sets.push(Arc::new(folds));
    }

    let mut cells = Vec::new();
    for dataset_idx in 0..cfg.datasets.len() {
        for fold_idx in 0..cfg.folds {
            for method_idx in 0..cfg.methods.len() {
                cells.push(Cell {
                    method_idx,
                    dataset_idx,
                    fold_idx,
                });
            }
        }
    }

    let run_all = || -> Vec<CellOutput> {
        cells
            .par_iter()
            .map(|cell| run_cell(cfg, cell, &bundles[cell.dataset_idx], &fold_sets[cell.dataset_idx]))
            .collect()
    };
    let outputs: Vec<CellOutput> = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))?
            .install(run_all),
        None => run_all(),
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for out in outputs {
        records.extend(out.records);
        failures.extend(out.failures);
    }
    Ok(RunOutcome { records, failures })
}

/// Canonical on-disk rendering: pretty JSON array, one trailing newline.
/// Identical configs must produce byte-identical files.
pub fn render_records(records: &[ResultsRecord]) -> String {
    let mut text = serde_json::to_string_pretty(records).expect("records always serialize");
    text.push('\n');
    text
}

pub fn parse_records(text: &str) -> Result<Vec<ResultsRecord>> {
    serde_json::from_str(text).map_err(|e| Error::invalid("results", e.to_string()))
}
