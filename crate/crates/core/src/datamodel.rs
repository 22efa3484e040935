//! Core types: features, labels, class embeddings, splits, and the bundle
//! tying them together. Everything is immutable after construction and all
//! invariants are checked at the constructor boundary.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Dense class identifier: row index into the class-embedding table.
pub type ClassId = usize;

/// N×d matrix of image embeddings; row i belongs to label entry i.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(
                "feature matrix",
                format!("needs N ≥ 1 and d ≥ 1, got {}×{}", data.nrows(), data.ncols()),
            ));
        }
        if !linalg::all_finite(data.view()) {
            return Err(Error::invalid("feature matrix", "non-finite entry"));
        }
        Ok(Self { data })
    }

    pub fn n_images(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Per-image class ids, aligned with the feature matrix rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    ids: Vec<ClassId>,
}

impl LabelVector {
    pub fn new(ids: Vec<ClassId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("label vector", "must not be empty"));
        }
        Ok(Self { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize) -> ClassId {
        self.ids[i]
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.ids
    }
}

/// C×a table of per-class attribute or word vectors; class id = row index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    data: Array2<f64>,
}

impl ClassEmbeddingTable {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(
                "class embedding table",
                format!("needs C ≥ 1 and a ≥ 1, got {}×{}", data.nrows(), data.ncols()),
            ));
        }
        if !linalg::all_finite(data.view()) {
            return Err(Error::invalid("class embedding table", "non-finite entry"));
        }
        Ok(Self { data })
    }

    pub fn n_classes(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Embedding row for a validated id; errors on unknown ids.
    pub fn embedding(&self, id: ClassId) -> Result<ArrayView1<'_, f64>> {
        if id >= self.n_classes() {
            return Err(Error::UnknownClass {
                id,
                n_classes: self.n_classes(),
            });
        }
        Ok(self.data.row(id))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    /// View of exactly the requested class rows, preserving id association.
    pub fn restrict(&self, class_set: &[ClassId]) -> Result<CandidateSet<'_>> {
        CandidateSet::new(self, class_set)
    }
}

/// Subset view over a class-embedding table: the candidate classes a
/// prediction may choose among. Ids stay table ids; iteration order is
/// ascending id so argmax tie-breaking is reproducible.
#[derive(Debug, Clone)]
pub struct CandidateSet<'a> {
    ids: Vec<ClassId>,
    table: &'a ClassEmbeddingTable,
}

impl<'a> CandidateSet<'a> {
    fn new(table: &'a ClassEmbeddingTable, class_set: &[ClassId]) -> Result<Self> {
        if class_set.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut ids: Vec<ClassId> = class_set.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if let Some(&bad) = ids.iter().find(|&&id| id >= table.n_classes()) {
            return Err(Error::UnknownClass {
                id: bad,
                n_classes: table.n_classes(),
            });
        }
        Ok(Self { ids, table })
    }

    pub fn ids(&self) -> &[ClassId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn table(&self) -> &'a ClassEmbeddingTable {
        self.table
    }

    pub fn embedding_dim(&self) -> usize {
        self.table.dim()
    }

    /// Embedding of a member class. Panics on non-members: membership is
    /// established at construction and predictors only iterate `ids()`.
    pub fn embedding(&self, id: ClassId) -> ArrayView1<'a, f64> {
        debug_assert!(self.contains(id), "class {id} not in candidate set");
        self.table.as_array().row(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, ArrayView1<'a, f64>)> + '_ {
        self.ids.iter().map(|&id| (id, self.table.as_array().row(id)))
    }

    /// Further restriction; equals restricting the table by the intersection.
    pub fn restrict(&self, class_set: &[ClassId]) -> Result<CandidateSet<'a>> {
        if let Some(&bad) = class_set.iter().find(|&&id| id >= self.table.n_classes()) {
            return Err(Error::UnknownClass {
                id: bad,
                n_classes: self.table.n_classes(),
            });
        }
        let keep: BTreeSet<ClassId> = class_set.iter().copied().collect();
        let ids: Vec<ClassId> = self.ids.iter().copied().filter(|id| keep.contains(id)).collect();
        if ids.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        Ok(Self {
            ids,
            table: self.table,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawSplitSpec {
    train_classes: Vec<ClassId>,
    val_classes: Vec<ClassId>,
    test_unseen_classes: Vec<ClassId>,
    test_seen_image_indices: Vec<usize>,
    name: String,
}

/// Disjoint train / val / test-unseen class sets plus held-out seen-class
/// image indices for generalized evaluation. Class lists are kept sorted and
/// deduplicated so serialization is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSplitSpec")]
pub struct SplitSpec {
    train_classes: Vec<ClassId>,
    val_classes: Vec<ClassId>,
    test_unseen_classes: Vec<ClassId>,
    test_seen_image_indices: Vec<usize>,
    name: String,
}

impl TryFrom<RawSplitSpec> for SplitSpec {
    type Error = Error;

    fn try_from(raw: RawSplitSpec) -> Result<Self> {
        SplitSpec::new(
            raw.train_classes,
            raw.val_classes,
            raw.test_unseen_classes,
            raw.test_seen_image_indices,
            raw.name,
        )
    }
}

impl SplitSpec {
    pub fn new(
        train_classes: Vec<ClassId>,
        val_classes: Vec<ClassId>,
        test_unseen_classes: Vec<ClassId>,
        test_seen_image_indices: Vec<usize>,
        name: impl Into<String>,
    ) -> Result<Self> {
        let canon = |mut v: Vec<ClassId>| {
            v.sort_unstable();
            v.dedup();
            v
        };
        let train_classes = canon(train_classes);
        let val_classes = canon(val_classes);
        let test_unseen_classes = canon(test_unseen_classes);
        let mut owner: BTreeMap<ClassId, &str> = BTreeMap::new();
        for (set, label) in [
            (&train_classes, "train_classes"),
            (&val_classes, "val_classes"),
            (&test_unseen_classes, "test_unseen_classes"),
        ] {
            for &id in set.iter() {
                if let Some(prev) = owner.insert(id, label) {
                    return Err(Error::invalid(
                        "split",
                        format!("class {id} appears in both {prev} and {label}"),
                    ));
                }
            }
        }
        let mut test_seen_image_indices = test_seen_image_indices;
        test_seen_image_indices.sort_unstable();
        test_seen_image_indices.dedup();
        Ok(Self {
            train_classes,
            val_classes,
            test_unseen_classes,
            test_seen_image_indices,
            name: name.into(),
        })
    }

    pub fn train_classes(&self) -> &[ClassId] {
        &self.train_classes
    }

    pub fn val_classes(&self) -> &[ClassId] {
        &self.val_classes
    }

    pub fn test_unseen_classes(&self) -> &[ClassId] {
        &self.test_unseen_classes
    }

    pub fn test_seen_image_indices(&self) -> &[usize] {
        &self.test_seen_image_indices
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Train ∪ val, sorted: the classes with training images available.
    pub fn seen_classes(&self) -> Vec<ClassId> {
        let mut v: Vec<ClassId> = self
            .train_classes
            .iter()
            .chain(self.val_classes.iter())
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    /// All classes referenced by the split, sorted.
    pub fn all_classes(&self) -> Vec<ClassId> {
        let mut v: Vec<ClassId> = self
            .train_classes
            .iter()
            .chain(self.val_classes.iter())
            .chain(self.test_unseen_classes.iter())
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// A complete benchmark dataset: features + labels + class embeddings +
/// split (+ optional class names), cross-validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    features: FeatureMatrix,
    labels: LabelVector,
    class_embeddings: ClassEmbeddingTable,
    split: SplitSpec,
    class_names: Option<Vec<String>>,
}

impl DatasetBundle {
    pub fn new(
        features: FeatureMatrix,
        labels: LabelVector,
        class_embeddings: ClassEmbeddingTable,
        split: SplitSpec,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = features.n_images();
        let c = class_embeddings.n_classes();
        if labels.len() != n {
            return Err(Error::Dimension {
                context: "labels.csv rows vs features.csv rows".into(),
                expected: n,
                got: labels.len(),
            });
        }
        if let Some((i, &id)) = labels.as_slice().iter().enumerate().find(|(_, &id)| id >= c) {
            return Err(Error::invalid(
                "labels",
                format!("label id {id} at row {i} out of range for {c} classes"),
            ));
        }
        if let Some(&bad) = split.all_classes().iter().find(|&&id| id >= c) {
            return Err(Error::UnknownClass { id: bad, n_classes: c });
        }
        let seen: BTreeSet<ClassId> = split.seen_classes().into_iter().collect();
        for &idx in split.test_seen_image_indices() {
            if idx >= n {
                return Err(Error::invalid(
                    "split",
                    format!("test_seen_image_indices entry {idx} out of range for {n} images"),
                ));
            }
            let label = labels.get(idx);
            if !seen.contains(&label) {
                return Err(Error::invalid(
                    "split",
                    format!(
                        "test_seen_image_indices entry {idx} has label {label}, not a train/val class"
                    ),
                ));
            }
        }
        if let Some(names) = &class_names {
            if names.len() != c {
                return Err(Error::Dimension {
                    context: "class names vs embedding rows".into(),
                    expected: c,
                    got: names.len(),
                });
            }
        }
        // Identical embeddings inside one candidate set make the argmax
        // structurally ambiguous; reject at load.
        let candidates = split.all_classes();
        for (i, &a) in candidates.iter().enumerate() {
            for &b in candidates.iter().skip(i + 1) {
                if class_embeddings.as_array().row(a) == class_embeddings.as_array().row(b) {
                    return Err(Error::DuplicateEmbedding { a, b });
                }
            }
        }
        Ok(Self {
            features,
            labels,
            class_embeddings,
            split,
            class_names,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn class_embeddings(&self) -> &ClassEmbeddingTable {
        &self.class_embeddings
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn n_images(&self) -> usize {
        self.features.n_images()
    }

    /// Rows a trainer may touch: labeled with a train class and not held out
    /// as seen-class test images.
    pub fn training_rows(&self) -> Vec<usize> {
        let train: BTreeSet<ClassId> = self.split.train_classes().iter().copied().collect();
        let held = self.split.test_seen_image_indices();
        (0..self.n_images())
            .filter(|&i| train.contains(&self.labels.get(i)) && held.binary_search(&i).is_err())
            .collect()
    }

    /// All rows whose label lies in `classes`, in index order.
    pub fn rows_labeled_in(&self, classes: &[ClassId]) -> Vec<usize> {
        let set: BTreeSet<ClassId> = classes.iter().copied().collect();
        (0..self.n_images())
            .filter(|&i| set.contains(&self.labels.get(i)))
            .collect()
    }

    pub fn restrict_candidates(&self, class_set: &[ClassId]) -> Result<CandidateSet<'_>> {
        self.class_embeddings.restrict(class_set)
    }

    /// Same data under a different split (re-validated).
    pub fn with_split(&self, split: SplitSpec) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.labels.clone(),
            self.class_embeddings.clone(),
            split,
            self.class_names.clone(),
        )
    }

    /// Physical row subset: features and labels keep only `rows` (in the
    /// given order), the class table stays whole. Indices in the new split
    /// refer to positions within `rows`.
    pub fn subset_rows(&self, rows: &[usize], split: SplitSpec) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("row subset", "must keep at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_images()) {
            return Err(Error::invalid(
                "row subset",
                format!("row index {bad} out of range for {} images", self.n_images()),
            ));
        }
        let d = self.features.dim();
        let mut data = Array2::<f64>::zeros((rows.len(), d));
        let mut ids = Vec::with_capacity(rows.len());
        for (new_i, &old_i) in rows.iter().enumerate() {
            data.row_mut(new_i).assign(&self.features.row(old_i));
            ids.push(self.labels.get(old_i));
        }
        Self::new(
            FeatureMatrix::new(data)?,
            LabelVector::new(ids)?,
            self.class_embeddings.clone(),
            split,
            self.class_names.clone(),
        )
    }
}

/// Feature preprocessing switch. Defaults to `none`: raw pooled features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    #[default]
    None,
    L2Rows,
}

/// `none` is the identity; `l2_rows` rescales each nonzero row to unit
/// Euclidean norm and leaves zero rows unchanged.
pub fn normalize_features(fm: &FeatureMatrix, mode: NormalizeMode) -> FeatureMatrix {
    match mode {
        NormalizeMode::None => fm.clone(),
        NormalizeMode::L2Rows => {
            let mut data = fm.as_array().clone();
            for mut row in data.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
            FeatureMatrix { data }
        }
    }
}
