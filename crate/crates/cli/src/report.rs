//! Render benchmark records as an accuracy table, a rank matrix, or raw JSON.

use std::collections::BTreeMap;

use zsbench_core::ranking::{rank_matrix, ObservationGrid, ObservationKey};
use zsbench_core::{Error, Result};

use crate::runner::{render_records, ResultsRecord};

/// Output flavors of the `report` subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Ranks,
    Raw,
}

pub fn render(records: &[ResultsRecord], format: ReportFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::invalid("report", "no records to report"));
    }
    match format {
        ReportFormat::Table => render_table(records),
        ReportFormat::Ranks => render_ranks(records),
        ReportFormat::Raw => Ok(render_records(records)),
    }
}

fn push_unique(list: &mut Vec<String>, value: &str) {
    if !list.iter().any(|v| v == value) {
        list.push(value.to_string());
    }
}

/// The score a table or rank report reads off one record: unseen accuracy in
/// ZSL mode, the harmonic mean in GZSL mode.
fn mode_metric(rec: &ResultsRecord) -> Option<f64> {
    match rec.mode.as_str() {
        "gzsl" => rec.harmonic_mean,
        _ => Some(rec.acc_unseen),
    }
}

fn mode_caption(mode: &str) -> &'static str {
    match mode {
        "gzsl" => "harmonic mean of seen and unseen accuracy, %",
        _ => "per-class top-1 accuracy on unseen classes, %",
    }
}

/// One grid per mode: methods as rows, datasets as columns, cell = mean over
/// folds, formatted as a percentage with one decimal. Missing cells render
/// as "-".
fn render_table(records: &[ResultsRecord]) -> Result<String> {
    let mut modes = Vec::new();
    let mut methods = Vec::new();
    let mut datasets = Vec::new();
    for rec in records {
        push_unique(&mut modes, &rec.mode);
        push_unique(&mut methods, &rec.method);
        push_unique(&mut datasets, &rec.dataset);
    }

    let mut out = String::new();
    for (mode_idx, mode) in modes.iter().enumerate() {
        if mode_idx > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# mode: {} ({})\n", mode, mode_caption(mode)));

        let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for rec in records.iter().filter(|r| &r.mode == mode) {
            let Some(metric) = mode_metric(rec) else { continue };
            let mi = methods.iter().position(|m| m == &rec.method).unwrap();
            let di = datasets.iter().position(|d| d == &rec.dataset).unwrap();
            let cell = sums.entry((mi, di)).or_insert((0.0, 0));
            cell.0 += metric;
            cell.1 += 1;
        }

        let mut cells: Vec<Vec<String>> = Vec::with_capacity(methods.len());
        for mi in 0..methods.len() {
            let mut row = Vec::with_capacity(datasets.len());
            for di in 0..datasets.len() {
                row.push(match sums.get(&(mi, di)) {
                    Some(&(total, n)) => format!("{:.1}", total / n as f64 * 100.0),
                    None => "-".to_string(),
                });
            }
            cells.push(row);
        }

        let name_width = methods
            .iter()
            .map(|m| m.len())
            .chain(std::iter::once("method".len()))
            .max()
            .unwrap();
        let col_widths: Vec<usize> = datasets
            .iter()
            .enumerate()
            .map(|(di, d)| {
                cells
                    .iter()
                    .map(|row| row[di].len())
                    .chain(std::iter::once(d.len()))
                    .max()
                    .unwrap()
            })
            .collect();

        out.push_str(&format!("{:<name_width$}", "method"));
        for (di, d) in datasets.iter().enumerate() {
            out.push_str(&format!("  {:>width$}", d, width = col_widths[di]));
        }
        out.push('\n');
        for (mi, m) in methods.iter().enumerate() {
            out.push_str(&format!("{:<name_width$}", m));
            for di in 0..datasets.len() {
                out.push_str(&format!("  {:>width$}", cells[mi][di], width = col_widths[di]));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Build the rank observation grid: ZSL records when any exist, otherwise
/// GZSL records scored by harmonic mean. One observation per (dataset, fold).
fn rank_grid(records: &[ResultsRecord]) -> Result<ObservationGrid> {
    let mode = if records.iter().any(|r| r.mode == "zsl") {
        "zsl"
    } else {
        "gzsl"
    };
    let mut methods = Vec::new();
    let mut cells = Vec::new();
    for rec in records.iter().filter(|r| r.mode == mode) {
        push_unique(&mut methods, &rec.method);
        let Some(metric) = mode_metric(rec) else {
            return Err(Error::invalid(
                "report",
                format!(
                    "record for {} on {} fold {} has no {} score",
                    rec.method, rec.dataset, rec.fold, mode
                ),
            ));
        };
        cells.push((
            rec.method.clone(),
            ObservationKey {
                dataset: rec.dataset.clone(),
                fold: rec.fold,
            },
            metric,
        ));
    }
    ObservationGrid::from_cells(&methods, &cells)
}

/// Count matrix plus mean ranks, methods ordered best (lowest mean rank)
/// first. Cell (i, j) counts how often method i placed j-th.
fn render_ranks(records: &[ResultsRecord]) -> Result<String> {
    let grid = rank_grid(records)?;
    let matrix = rank_matrix(&grid);
    let m = matrix.methods.len();

    let mut out = String::new();
    out.push_str(&format!(
        "# rank counts over {} observations (cell = times the method placed at that rank)\n",
        grid.observations().len()
    ));

    let name_width = matrix
        .methods
        .iter()
        .map(|s| s.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap();
    let headers: Vec<String> = (1..=m).map(|r| format!("r{r}")).collect();
    let mean_strs: Vec<String> = matrix.mean_ranks.iter().map(|v| format!("{v:.2}")).collect();
    let col_widths: Vec<usize> = (0..m)
        .map(|j| {
            (0..m)
                .map(|i| matrix.counts[[i, j]].to_string().len())
                .chain(std::iter::once(headers[j].len()))
                .max()
                .unwrap()
        })
        .collect();
    let mean_width = mean_strs
        .iter()
        .map(|s| s.len())
        .chain(std::iter::once("mean_rank".len()))
        .max()
        .unwrap();

    out.push_str(&format!("{:<name_width$}", "method"));
    for (j, h) in headers.iter().enumerate() {
        out.push_str(&format!("  {:>width$}", h, width = col_widths[j]));
    }
    out.push_str(&format!("  {:>mean_width$}\n", "mean_rank"));
    for (i, name) in matrix.methods.iter().enumerate() {
        out.push_str(&format!("{name:<name_width$}"));
        for (count, &width) in matrix.counts.row(i).iter().zip(&col_widths) {
            out.push_str(&format!("  {count:>width$}"));
        }
        out.push_str(&format!("  {:>mean_width$}\n", mean_strs[i]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(method: &str, dataset: &str, fold: usize, mode: &str, acc: f64) -> ResultsRecord {
        let (acc_seen, harmonic_mean) = if mode == "gzsl" {
            (Some(acc), Some(acc))
        } else {
            (None, None)
        };
        ResultsRecord {
            method: method.into(),
            dataset: dataset.into(),
            fold,
            mode: mode.into(),
            hyperparameters: json!({}),
            acc_unseen: acc,
            acc_seen,
            harmonic_mean,
            seconds: 0.0,
        }
    }

    #[test]
    fn empty_records_are_rejected() {
        for format in [ReportFormat::Table, ReportFormat::Ranks, ReportFormat::Raw] {
            assert!(render(&[], format).is_err());
        }
    }

    #[test]
    fn single_record_renders_one_by_one_grid() {
        let out = render(&[rec("DAP", "synth", 0, "zsl", 0.4567)], ReportFormat::Table).unwrap();
        assert!(out.contains("# mode: zsl"));
        assert!(out.contains("synth"));
        assert!(out.contains("45.7"), "{out}");
    }

    #[test]
    fn table_averages_over_folds_and_marks_missing_cells() {
        let records = vec![
            rec("A", "d1", 0, "zsl", 0.40),
            rec("A", "d1", 1, "zsl", 0.60),
            rec("B", "d1", 0, "zsl", 0.80),
            rec("B", "d2", 0, "zsl", 0.90),
        ];
        let out = render(&records, ReportFormat::Table).unwrap();
        let a_line = out.lines().find(|l| l.starts_with('A')).unwrap();
        assert!(a_line.contains("50.0"), "{a_line}");
        assert!(a_line.trim_end().ends_with('-'), "{a_line}");
        let b_line = out.lines().find(|l| l.starts_with('B')).unwrap();
        assert!(b_line.contains("80.0") && b_line.contains("90.0"), "{b_line}");
    }

    #[test]
    fn table_renders_each_requested_mode_once() {
        let records = vec![
            rec("A", "d1", 0, "zsl", 0.5),
            rec("A", "d1", 0, "gzsl", 0.25),
        ];
        let out = render(&records, ReportFormat::Table).unwrap();
        assert_eq!(out.matches("# mode: zsl").count(), 1);
        assert_eq!(out.matches("# mode: gzsl").count(), 1);
        assert!(out.contains("50.0") && out.contains("25.0"), "{out}");
    }

    #[test]
    fn ranks_prefer_zsl_records_and_order_by_mean_rank() {
        let records = vec![
            rec("weak", "d1", 0, "zsl", 0.2),
            rec("strong", "d1", 0, "zsl", 0.9),
            rec("weak", "d2", 0, "zsl", 0.1),
            rec("strong", "d2", 0, "zsl", 0.8),
            // A contradictory GZSL record that must be ignored.
            rec("weak", "d1", 0, "gzsl", 0.99),
            rec("strong", "d1", 0, "gzsl", 0.01),
        ];
        let out = render(&records, ReportFormat::Ranks).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].contains("2 observations"), "{out}");
        let strong_idx = lines.iter().position(|l| l.starts_with("strong")).unwrap();
        let weak_idx = lines.iter().position(|l| l.starts_with("weak")).unwrap();
        assert!(strong_idx < weak_idx, "{out}");
        assert!(lines[strong_idx].contains("1.00"), "{out}");
        assert!(lines[weak_idx].contains("2.00"), "{out}");
    }

    #[test]
    fn ranks_fall_back_to_gzsl_harmonic_mean() {
        let records = vec![
            rec("a", "d1", 0, "gzsl", 0.3),
            rec("b", "d1", 0, "gzsl", 0.6),
        ];
        let out = render(&records, ReportFormat::Ranks).unwrap();
        let first = out.lines().nth(1).unwrap();
        assert!(first.contains("method"), "{out}");
        assert!(out.lines().nth(2).unwrap().starts_with('b'), "{out}");
    }

    #[test]
    fn raw_round_trips_records_exactly() {
        let records = vec![
            rec("A", "d1", 0, "zsl", 0.123456789),
            rec("A", "d1", 0, "gzsl", 0.5),
        ];
        let text = render(&records, ReportFormat::Raw).unwrap();
        let parsed = crate::runner::parse_records(&text).unwrap();
        assert_eq!(parsed, records);
    }
}
