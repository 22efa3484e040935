//! Cross-method comparison: per-observation rank matrices (rank 1 = best),
//! mean ranks, and per-dataset robustness summaries across validation folds.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// One observation column: a dataset evaluated on one validation fold.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ObservationKey {
    pub dataset: String,
    pub fold: usize,
}

impl ObservationKey {
    pub fn new(dataset: impl Into<String>, fold: usize) -> Self {
        Self {
            dataset: dataset.into(),
            fold,
        }
    }
}

/// Complete methods × observations score grid. Completeness is enforced at
/// construction: every cell holds a finite score.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    methods: Vec<String>,
    observations: Vec<ObservationKey>,
    scores: Array2<f64>,
}

impl ObservationGrid {
    pub fn new(methods: Vec<String>, observations: Vec<ObservationKey>, scores: Array2<f64>) -> Result<Self> {
        if methods.is_empty() || observations.is_empty() {
            return Err(Error::invalid("observation grid", "needs ≥1 method and ≥1 observation"));
        }
        if scores.dim() != (methods.len(), observations.len()) {
            return Err(Error::Dimension {
                context: "grid score matrix".into(),
                expected: methods.len() * observations.len(),
                got: scores.len(),
            });
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation grid", "scores must be finite"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &methods {
            if !seen.insert(m.clone()) {
                return Err(Error::invalid("observation grid", format!("duplicate method name {m}")));
            }
        }
        let mut keys = std::collections::BTreeSet::new();
        for o in &observations {
            if !keys.insert(o.clone()) {
                return Err(Error::invalid(
                    "observation grid",
                    format!("duplicate observation {}#{}", o.dataset, o.fold),
                ));
            }
        }
        Ok(Self {
            methods,
            observations,
            scores,
        })
    }

    /// Assemble a grid from sparse (method, observation, score) cells.
    /// The method order is the declaration order given by `methods`;
    /// observations are sorted by (dataset, fold). A missing or duplicate
    /// cell is an error (the grid must be complete).
    pub fn from_cells(methods: &[String], cells: &[(String, ObservationKey, f64)]) -> Result<Self> {
        let mut obs: Vec<ObservationKey> = cells.iter().map(|(_, k, _)| k.clone()).collect();
        obs.sort();
        obs.dedup();
        if obs.is_empty() {
            return Err(Error::invalid("observation grid", "no cells given"));
        }
        let mut scores = Array2::<f64>::from_elem((methods.len(), obs.len()), f64::NAN);
        for (name, key, score) in cells {
            let i = methods
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| Error::invalid("observation grid", format!("unknown method {name}")))?;
            let j = obs.binary_search(key).expect("key collected above");
            if !scores[(i, j)].is_nan() {
                return Err(Error::invalid(
                    "observation grid",
                    format!("duplicate cell {name} on {}#{}", key.dataset, key.fold),
                ));
            }
            scores[(i, j)] = *score;
        }
        for i in 0..methods.len() {
            for (j, key) in obs.iter().enumerate() {
                if scores[(i, j)].is_nan() {
                    return Err(Error::invalid(
                        "observation grid",
                        format!("incomplete grid: {} missing on {}#{}", methods[i], key.dataset, key.fold),
                    ));
                }
            }
        }
        Self::new(methods.to_vec(), obs, scores)
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn observations(&self) -> &[ObservationKey] {
        &self.observations
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }
}

/// Rank-count matrix: entry (i, j) counts how often method i placed at rank
/// j+1. Methods are ordered by ascending mean rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    pub methods: Vec<String>,
    pub counts: Array2<usize>,
    pub mean_ranks: Vec<f64>,
}

/// Rank methods per observation by descending score (rank 1 = best, ties
/// broken by method declaration order), accumulate rank counts, and order
/// the output by ascending mean rank (ties again by declaration order).
pub fn rank_matrix(grid: &ObservationGrid) -> RankMatrix {
    let m = grid.methods().len();
    let n_obs = grid.observations().len();
    let mut counts = Array2::<usize>::zeros((m, m));
    let mut rank_sums = vec![0usize; m];
    for j in 0..n_obs {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            grid.scores()[(b, j)]
                .partial_cmp(&grid.scores()[(a, j)])
                .expect("grid scores are finite")
        });
        for (rank0, &method) in order.iter().enumerate() {
            counts[(method, rank0)] += 1;
            rank_sums[method] += rank0 + 1;
        }
    }
    let mean: Vec<f64> = rank_sums.iter().map(|&s| s as f64 / n_obs as f64).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by(|&a, &b| mean[a].partial_cmp(&mean[b]).expect("finite mean ranks"));
    let methods = perm.iter().map(|&i| grid.methods()[i].clone()).collect();
    let mean_ranks = perm.iter().map(|&i| mean[i]).collect();
    let mut sorted_counts = Array2::<usize>::zeros((m, m));
    for (row, &i) in perm.iter().enumerate() {
        sorted_counts.row_mut(row).assign(&counts.row(i));
    }
    RankMatrix {
        methods,
        counts: sorted_counts,
        mean_ranks,
    }
}

/// Per-(method, dataset) accuracy spread across validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub method: String,
    pub dataset: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub spread: f64,
}

/// Summarize fold-to-fold variation per method and dataset. Every dataset
/// needs at least two folds; a single fold has no spread to report.
pub fn robustness_report(grid: &ObservationGrid) -> Result<Vec<RobustnessRow>> {
    let mut by_dataset: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, key) in grid.observations().iter().enumerate() {
        by_dataset.entry(&key.dataset).or_default().push(j);
    }
    for (dataset, cols) in &by_dataset {
        if cols.len() < 2 {
            return Err(Error::invalid(
                "robustness report",
                format!("dataset {dataset} has a single fold"),
            ));
        }
    }
    let mut rows = Vec::new();
    for (i, method) in grid.methods().iter().enumerate() {
        for (dataset, cols) in &by_dataset {
            let vals: Vec<f64> = cols.iter().map(|&j| grid.scores()[(i, j)]).collect();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            rows.push(RobustnessRow {
                method: method.clone(),
                dataset: dataset.to_string(),
                min,
                mean,
                max,
                spread: max - min,
            });
        }
    }
    Ok(rows)
}
