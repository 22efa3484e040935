//! Benchmark configuration: datasets, method hyperparameter grids, fold
//! count, evaluation modes. Everything arrives as one JSON document so a run
//! is reproducible from a single file.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use zsbench_core::splitgen::SyntheticConfig;
use zsbench_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Zsl,
    Gzsl,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Zsl => f.write_str("zsl"),
            Mode::Gzsl => f.write_str("gzsl"),
        }
    }
}

/// One dataset to benchmark: either a directory holding the four canonical
/// files or an inline synthetic generator config. Exactly one source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        match (&self.dir, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (None, None) => Err(Error::invalid(
                "config",
                format!("dataset {:?} needs either `dir` or `synthetic`", self.name),
            )),
            (Some(_), Some(_)) => Err(Error::invalid(
                "config",
                format!("dataset {:?} sets both `dir` and `synthetic`", self.name),
            )),
        }
    }
}

fn lr_default() -> Vec<f64> {
    vec![0.05]
}

fn epochs_default() -> Vec<usize> {
    vec![40]
}

fn sgd_seed_default() -> Vec<u64> {
    vec![0]
}

/// Grid for the pairwise-ranking SGD trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingGrid {
    #[serde(default = "lr_default")]
    pub learning_rate: Vec<f64>,
    #[serde(default = "epochs_default")]
    pub epochs: Vec<usize>,
    #[serde(default = "sgd_seed_default")]
    pub sgd_seed: Vec<u64>,
}

impl Default for RankingGrid {
    fn default() -> Self {
        Self {
            learning_rate: lr_default(),
            epochs: epochs_default(),
            sgd_seed: sgd_seed_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EszslGrid {
    #[serde(default = "one_f64")]
    pub gamma: Vec<f64>,
    #[serde(default = "one_f64")]
    pub lambda: Vec<f64>,
}

impl Default for EszslGrid {
    fn default() -> Self {
        Self {
            gamma: one_f64(),
            lambda: one_f64(),
        }
    }
}

fn one_f64() -> Vec<f64> {
    vec![1.0]
}

fn latem_k_default() -> Vec<usize> {
    vec![2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatemGrid {
    #[serde(default = "lr_default")]
    pub learning_rate: Vec<f64>,
    #[serde(default = "epochs_default")]
    pub epochs: Vec<usize>,
    #[serde(default = "sgd_seed_default")]
    pub sgd_seed: Vec<u64>,
    #[serde(default = "latem_k_default")]
    pub k: Vec<usize>,
}

impl Default for LatemGrid {
    fn default() -> Self {
        Self {
            learning_rate: lr_default(),
            epochs: epochs_default(),
            sgd_seed: sgd_seed_default(),
            k: latem_k_default(),
        }
    }
}

fn cmt_lr_default() -> Vec<f64> {
    vec![0.1]
}

fn cmt_hidden_default() -> Vec<usize> {
    vec![12]
}

fn quantile_default() -> Vec<f64> {
    vec![0.999]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmtGrid {
    #[serde(default = "cmt_lr_default")]
    pub learning_rate: Vec<f64>,
    #[serde(default = "epochs_default")]
    pub epochs: Vec<usize>,
    #[serde(default = "sgd_seed_default")]
    pub sgd_seed: Vec<u64>,
    #[serde(default = "cmt_hidden_default")]
    pub hidden: Vec<usize>,
}

impl Default for CmtGrid {
    fn default() -> Self {
        Self {
            learning_rate: cmt_lr_default(),
            epochs: epochs_default(),
            sgd_seed: sgd_seed_default(),
            hidden: cmt_hidden_default(),
        }
    }
}

/// The novelty-routed variant shares the CMT axes and adds the per-class
/// distance threshold quantile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmtStarGrid {
    #[serde(default = "cmt_lr_default")]
    pub learning_rate: Vec<f64>,
    #[serde(default = "epochs_default")]
    pub epochs: Vec<usize>,
    #[serde(default = "sgd_seed_default")]
    pub sgd_seed: Vec<u64>,
    #[serde(default = "cmt_hidden_default")]
    pub hidden: Vec<usize>,
    #[serde(default = "quantile_default")]
    pub quantile: Vec<f64>,
}

impl Default for CmtStarGrid {
    fn default() -> Self {
        Self {
            learning_rate: cmt_lr_default(),
            epochs: epochs_default(),
            sgd_seed: sgd_seed_default(),
            hidden: cmt_hidden_default(),
            quantile: quantile_default(),
        }
    }
}

fn small_reg_default() -> Vec<f64> {
    vec![0.01]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DapGrid {
    #[serde(default = "small_reg_default")]
    pub reg: Vec<f64>,
}

impl Default for DapGrid {
    fn default() -> Self {
        Self {
            reg: small_reg_default(),
        }
    }
}

fn conse_top_t_default() -> Vec<usize> {
    vec![10]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConseGrid {
    #[serde(default = "one_f64")]
    pub reg: Vec<f64>,
    #[serde(default = "conse_top_t_default")]
    pub top_t: Vec<usize>,
}

impl Default for ConseGrid {
    fn default() -> Self {
        Self {
            reg: one_f64(),
            top_t: conse_top_t_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SseGrid {
    #[serde(default = "small_reg_default")]
    pub reg: Vec<f64>,
}

impl Default for SseGrid {
    fn default() -> Self {
        Self {
            reg: small_reg_default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncGrid {
    #[serde(default = "one_f64")]
    pub sigma: Vec<f64>,
    #[serde(default = "one_f64")]
    pub reg: Vec<f64>,
}

impl Default for SyncGrid {
    fn default() -> Self {
        Self {
            sigma: one_f64(),
            reg: one_f64(),
        }
    }
}

/// One benchmarked method with its hyperparameter grid. The tag selects the
/// trainer; every axis must be nonempty.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    Devise(RankingGrid),
    Ale(RankingGrid),
    Sje(RankingGrid),
    Eszsl(EszslGrid),
    Latem(LatemGrid),
    Cmt(CmtGrid),
    CmtStar(CmtStarGrid),
    Dap(DapGrid),
    Conse(ConseGrid),
    Sse(SseGrid),
    Sync(SyncGrid),
}

impl MethodSpec {
    /// Human-readable method name used in records, tables, and rank output.
    pub fn display_name(&self) -> &'static str {
        match self {
            MethodSpec::Devise(_) => "DEVISE",
            MethodSpec::Ale(_) => "ALE",
            MethodSpec::Sje(_) => "SJE",
            MethodSpec::Eszsl(_) => "ESZSL",
            MethodSpec::Latem(_) => "LATEM",
            MethodSpec::Cmt(_) => "CMT",
            MethodSpec::CmtStar(_) => "CMT*",
            MethodSpec::Dap(_) => "DAP",
            MethodSpec::Conse(_) => "CONSE",
            MethodSpec::Sse(_) => "SSE",
            MethodSpec::Sync(_) => "SYNC",
        }
    }

    fn validate(&self) -> Result<()> {
        let name = self.display_name();
        let bad = |axis: &str| {
            Err(Error::invalid(
                "config",
                format!("method {name}: axis `{axis}` must be nonempty with valid values"),
            ))
        };
        let pos = |vals: &[f64]| vals.iter().all(|&v| v.is_finite() && v > 0.0);
        let nonempty_pos = |vals: &[f64]| !vals.is_empty() && pos(vals);
        match self {
            MethodSpec::Devise(g) | MethodSpec::Ale(g) | MethodSpec::Sje(g) => {
                if !nonempty_pos(&g.learning_rate) {
                    return bad("learning_rate");
                }
                if g.epochs.is_empty() {
                    return bad("epochs");
                }
                if g.sgd_seed.is_empty() {
                    return bad("sgd_seed");
                }
            }
            MethodSpec::Eszsl(g) => {
                if !nonempty_pos(&g.gamma) {
                    return bad("gamma");
                }
                if !nonempty_pos(&g.lambda) {
                    return bad("lambda");
                }
            }
            MethodSpec::Latem(g) => {
                if !nonempty_pos(&g.learning_rate) {
                    return bad("learning_rate");
                }
                if g.epochs.is_empty() {
                    return bad("epochs");
                }
                if g.sgd_seed.is_empty() {
                    return bad("sgd_seed");
                }
                if g.k.is_empty() || g.k.contains(&0) {
                    return bad("k");
                }
            }
            MethodSpec::Cmt(g) => {
                if !nonempty_pos(&g.learning_rate) {
                    return bad("learning_rate");
                }
                if g.epochs.is_empty() {
                    return bad("epochs");
                }
                if g.sgd_seed.is_empty() {
                    return bad("sgd_seed");
                }
                if g.hidden.is_empty() || g.hidden.contains(&0) {
                    return bad("hidden");
                }
            }
            MethodSpec::CmtStar(g) => {
                if !nonempty_pos(&g.learning_rate) {
                    return bad("learning_rate");
                }
                if g.epochs.is_empty() {
                    return bad("epochs");
                }
                if g.sgd_seed.is_empty() {
                    return bad("sgd_seed");
                }
                if g.hidden.is_empty() || g.hidden.contains(&0) {
                    return bad("hidden");
                }
                if g.quantile.is_empty() || !g.quantile.iter().all(|&q| q > 0.0 && q < 1.0) {
                    return bad("quantile");
                }
            }
            MethodSpec::Dap(g) => {
                if !nonempty_pos(&g.reg) {
                    return bad("reg");
                }
            }
            MethodSpec::Conse(g) => {
                if !nonempty_pos(&g.reg) {
                    return bad("reg");
                }
                if g.top_t.is_empty() || g.top_t.contains(&0) {
                    return bad("top_t");
                }
            }
            MethodSpec::Sse(g) => {
                if !nonempty_pos(&g.reg) {
                    return bad("reg");
                }
            }
            MethodSpec::Sync(g) => {
                if !nonempty_pos(&g.sigma) {
                    return bad("sigma");
                }
                if !nonempty_pos(&g.reg) {
                    return bad("reg");
                }
            }
        }
        Ok(())
    }

    /// Number of points in the cartesian grid.
    pub fn grid_size(&self) -> usize {
        match self {
            MethodSpec::Devise(g) | MethodSpec::Ale(g) | MethodSpec::Sje(g) => {
                g.learning_rate.len() * g.epochs.len() * g.sgd_seed.len()
            }
            MethodSpec::Eszsl(g) => g.gamma.len() * g.lambda.len(),
            MethodSpec::Latem(g) => {
                g.learning_rate.len() * g.epochs.len() * g.sgd_seed.len() * g.k.len()
            }
            MethodSpec::Cmt(g) => {
                g.learning_rate.len() * g.epochs.len() * g.sgd_seed.len() * g.hidden.len()
            }
            MethodSpec::CmtStar(g) => {
                g.learning_rate.len()
                    * g.epochs.len()
                    * g.sgd_seed.len()
                    * g.hidden.len()
                    * g.quantile.len()
            }
            MethodSpec::Dap(g) => g.reg.len(),
            MethodSpec::Conse(g) => g.reg.len() * g.top_t.len(),
            MethodSpec::Sse(g) => g.reg.len(),
            MethodSpec::Sync(g) => g.sigma.len() * g.reg.len(),
        }
    }

    pub fn ranking_axes(&self) -> Option<&RankingGrid> {
        match self {
            MethodSpec::Devise(g) | MethodSpec::Ale(g) | MethodSpec::Sje(g) => Some(g),
            _ => None,
        }
    }
}

fn folds_default() -> usize {
    1
}

/// Full benchmark description. `workers` bounds the parallel cell budget
/// (default: one thread per logical core); `record_timings` trades the
/// byte-identical-results guarantee for real wall-clock seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    #[serde(default = "folds_default")]
    pub folds: usize,
    pub modes: Vec<Mode>,
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<MethodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub record_timings: bool,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::invalid("config", "folds must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("config", "modes must be nonempty"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return Err(Error::invalid("config", format!("duplicate mode {m}")));
            }
        }
        if self.datasets.is_empty() {
            return Err(Error::invalid("config", "at least one dataset required"));
        }
        for (i, d) in self.datasets.iter().enumerate() {
            d.validate()?;
            if self.datasets[..i].iter().any(|p| p.name == d.name) {
                return Err(Error::invalid(
                    "config",
                    format!("duplicate dataset name {:?}", d.name),
                ));
            }
            if let Some(sc) = &d.synthetic {
                sc.validate()?;
            }
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("config", "at least one method required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.validate()?;
            if self.methods[..i]
                .iter()
                .any(|p| p.display_name() == m.display_name())
            {
                return Err(Error::invalid(
                    "config",
                    format!("method {} listed twice", m.display_name()),
                ));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("config", "workers must be at least 1 when set"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
