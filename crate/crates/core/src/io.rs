//! Dataset directory loading and saving.
//!
//! Layout: `features.csv` (N×d, no header), `labels.csv` (one id per line),
//! `class_embeddings.csv` (C×a), `splits.json`, optional `class_names.txt`
//! (one name per line, aligned with class ids). Floats use '.' radix and are
//! written in shortest round-trip form, so save → load is bit-exact.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::datamodel::{
    ClassEmbeddingTable, DatasetBundle, FeatureMatrix, LabelVector, SplitSpec,
};
use crate::error::{Error, Result};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_float_csv(path: &Path) -> Result<Array2<f64>> {
    let file = path.display().to_string();
    let text = read_to_string(path)?;
    let mut rows: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut n_rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            return Err(Error::parse(&file, i + 1, "empty line"));
        }
        let mut count = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(&file, i + 1, format!("invalid float {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(&file, i + 1, format!("non-finite value {v}")));
            }
            rows.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::parse(
                    &file,
                    i + 1,
                    format!("ragged row: expected {w} columns, got {count}"),
                ));
            }
            _ => {}
        }
        n_rows += 1;
    }
    let width = width.ok_or_else(|| Error::parse(&file, 0, "file is empty"))?;
    Array2::from_shape_vec((n_rows, width), rows)
        .map_err(|e| Error::parse(&file, 0, e.to_string()))
}

fn parse_labels(path: &Path, n_classes: usize) -> Result<Vec<usize>> {
    let file = path.display().to_string();
    let text = read_to_string(path)?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let id: usize = line
            .parse()
            .map_err(|_| Error::parse(&file, i + 1, format!("invalid class id {line:?}")))?;
        if id >= n_classes {
            return Err(Error::LabelOutOfRange {
                file: file.clone(),
                line: i + 1,
                id,
                n_classes,
            });
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(Error::parse(&file, 0, "file is empty"));
    }
    Ok(ids)
}

/// Load and fully validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let features = FeatureMatrix::new(parse_float_csv(&dir.join("features.csv"))?)?;
    let class_embeddings =
        ClassEmbeddingTable::new(parse_float_csv(&dir.join("class_embeddings.csv"))?)?;
    let labels = LabelVector::new(parse_labels(
        &dir.join("labels.csv"),
        class_embeddings.n_classes(),
    )?)?;
    let split_path = dir.join("splits.json");
    let split_text = read_to_string(&split_path)?;
    let split: SplitSpec = serde_json::from_str(&split_text)?;
    let names_path = dir.join("class_names.txt");
    let class_names = if names_path.exists() {
        let text = read_to_string(&names_path)?;
        Some(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    } else {
        None
    };
    DatasetBundle::new(features, labels, class_embeddings, split, class_names)
}

fn render_float_csv(data: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in data.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write a bundle back out in the canonical textual rendering.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_file(&dir.join("features.csv"), &render_float_csv(bundle.features().as_array()))?;
    let mut labels = String::new();
    for &id in bundle.labels().as_slice() {
        labels.push_str(&format!("{id}\n"));
    }
    write_file(&dir.join("labels.csv"), &labels)?;
    write_file(
        &dir.join("class_embeddings.csv"),
        &render_float_csv(bundle.class_embeddings().as_array()),
    )?;
    let mut split_json = serde_json::to_string_pretty(bundle.split())?;
    split_json.push('\n');
    write_file(&dir.join("splits.json"), &split_json)?;
    if let Some(names) = bundle.class_names() {
        let mut text = String::new();
        for name in names {
            text.push_str(name);
            text.push('\n');
        }
        write_file(&dir.join("class_names.txt"), &text)?;
    }
    Ok(())
}
