//! Split construction and auditing: pretraining-leakage checks, proposed
//! splits whose test classes avoid the feature extractor's pretraining
//! classes, validation fold generation, and seeded synthetic datasets for
//! desk-scale verification.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    ClassEmbeddingTable, ClassId, DatasetBundle, FeatureMatrix, LabelVector, SplitSpec,
};
use crate::error::{Error, Result};

/// Lowercase and collapse whitespace/underscore runs to single spaces, so
/// "Persian_Cat" and "persian cat" compare equal.
pub fn normalize_class_name(name: &str) -> String {
    name.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Class names used to pre-train the feature extractor, held normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PretrainClassList {
    names: BTreeSet<String>,
}

impl PretrainClassList {
    pub fn from_names<I: IntoIterator<Item = S>, S: AsRef<str>>(names: I) -> Self {
        Self {
            names: names
                .into_iter()
                .map(|n| normalize_class_name(n.as_ref()))
                .filter(|n| !n.is_empty())
                .collect(),
        }
    }

    /// Plain text, one class name per line, UTF-8.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(Self::from_names(text.lines()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(&normalize_class_name(name))
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }
}

/// A problem found by the split audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditViolation {
    /// A test class's name appears in the pretraining list.
    PretrainLeakage { class: ClassId, name: String },
    /// A class id appears in two split groups at once.
    GroupOverlap { class: ClassId, groups: [&'static str; 2] },
}

impl fmt::Display for AuditViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PretrainLeakage { class, name } => {
                write!(f, "test class {class} ({name}) appears in the pretraining list")
            }
            Self::GroupOverlap { class, groups } => {
                write!(f, "class {class} appears in both {} and {} groups", groups[0], groups[1])
            }
        }
    }
}

/// Audit raw split groups: report test classes leaked into the pretraining
/// list plus any overlap between the groups. Names must cover every class
/// mentioned by the split whenever a pretraining list is given.
pub fn audit_overlap_parts(
    train: &[ClassId],
    val: &[ClassId],
    test: &[ClassId],
    names: &[String],
    pretrain: &PretrainClassList,
) -> Result<Vec<AuditViolation>> {
    let mut violations = Vec::new();
    let pairs: [(&[ClassId], &[ClassId], [&'static str; 2]); 3] = [
        (train, val, ["train", "val"]),
        (train, test, ["train", "test"]),
        (val, test, ["val", "test"]),
    ];
    for (a, b, groups) in pairs {
        let set: BTreeSet<ClassId> = a.iter().copied().collect();
        for &c in b {
            if set.contains(&c) {
                violations.push(AuditViolation::GroupOverlap { class: c, groups });
            }
        }
    }
    if !pretrain.is_empty() {
        for &c in train.iter().chain(val).chain(test) {
            if c >= names.len() {
                return Err(Error::MissingClassName {
                    id: c,
                    n_names: names.len(),
                });
            }
        }
        for &c in test {
            if pretrain.contains(&names[c]) {
                violations.push(AuditViolation::PretrainLeakage {
                    class: c,
                    name: normalize_class_name(&names[c]),
                });
            }
        }
    }
    Ok(violations)
}

/// Audit a validated split (group overlap is impossible by construction but
/// is re-checked for uniformity with the raw path).
pub fn audit_overlap(
    split: &SplitSpec,
    names: &[String],
    pretrain: &PretrainClassList,
) -> Result<Vec<AuditViolation>> {
    audit_overlap_parts(
        split.train_classes(),
        split.val_classes(),
        split.test_unseen_classes(),
        names,
        pretrain,
    )
}

/// Fractions governing a proposed split.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    /// Fraction of all classes reserved as unseen test classes.
    pub test_classes: f64,
    /// Fraction of the remaining classes reserved for validation.
    pub val_classes: f64,
    /// Per-train-class fraction of images held out for GZSL seen-side tests.
    pub seen_holdout: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            test_classes: 0.375,
            val_classes: 0.25,
            seen_holdout: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("test_classes", self.test_classes),
            ("val_classes", self.val_classes),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid("split ratios", format!("{name} must be in (0,1), got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.seen_holdout) {
            return Err(Error::invalid(
                "split ratios",
                format!("seen_holdout must be in [0,1), got {}", self.seen_holdout),
            ));
        }
        Ok(())
    }
}

fn holdout_count(n_images: usize, fraction: f64) -> usize {
    if n_images < 2 || fraction == 0.0 {
        return 0;
    }
    ((n_images as f64 * fraction).round() as usize).clamp(1, n_images - 1)
}

/// Build a proposed split: test classes are drawn only from classes absent
/// from the pretraining list, train/val partition the remainder, and a
/// seeded fraction of each train class's images is reserved for GZSL
/// seen-side evaluation. Deterministic given the seed.
pub fn propose_split(
    labels: &LabelVector,
    n_classes: usize,
    names: &[String],
    pretrain: &PretrainClassList,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitSpec> {
    ratios.validate()?;
    if n_classes < 3 {
        return Err(Error::invalid("propose split", "needs at least 3 classes"));
    }
    if !pretrain.is_empty() {
        if let Some(id) = (0..n_classes).find(|&c| c >= names.len()) {
            return Err(Error::MissingClassName {
                id,
                n_names: names.len(),
            });
        }
    }
    let clean: Vec<ClassId> = (0..n_classes)
        .filter(|&c| pretrain.is_empty() || !pretrain.contains(&names[c]))
        .collect();
    let n_test = ((n_classes as f64 * ratios.test_classes).round() as usize).clamp(1, n_classes - 2);
    if clean.len() < n_test {
        return Err(Error::invalid(
            "propose split",
            format!(
                "need {n_test} test classes outside the pretraining list, only {} available",
                clean.len()
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = clean;
    pool.shuffle(&mut rng);
    let mut test: Vec<ClassId> = pool[..n_test].to_vec();
    test.sort_unstable();
    let mut rest: Vec<ClassId> = (0..n_classes).filter(|c| !test.contains(c)).collect();
    rest.shuffle(&mut rng);
    let n_val = ((rest.len() as f64 * ratios.val_classes).round() as usize).clamp(1, rest.len() - 1);
    let mut val: Vec<ClassId> = rest[..n_val].to_vec();
    val.sort_unstable();
    let mut train: Vec<ClassId> = rest[n_val..].to_vec();
    train.sort_unstable();

    let mut test_seen = Vec::new();
    for &c in &train {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels.get(i) == c).collect();
        let h = holdout_count(rows.len(), ratios.seen_holdout);
        rows.shuffle(&mut rng);
        let mut held: Vec<usize> = rows[..h].to_vec();
        held.sort_unstable();
        test_seen.extend(held);
    }
    test_seen.sort_unstable();
    SplitSpec::new(train, val, test, test_seen, "PS")
}

/// Repartition train∪val into k disjoint-validation folds; the test side of
/// the split never moves. Deterministic given the seed.
pub fn make_validation_folds(split: &SplitSpec, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if k < 2 {
        return Err(Error::invalid("validation folds", format!("k must be ≥ 2, got {k}")));
    }
    let v = split.val_classes().len();
    if v == 0 {
        return Err(Error::invalid("validation folds", "split has no validation classes"));
    }
    let mut pool = split.seen_classes();
    if k * v > pool.len() {
        return Err(Error::invalid(
            "validation folds",
            format!("k·|val| = {} exceeds the {} train∪val classes", k * v, pool.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let mut val: Vec<ClassId> = pool[i * v..(i + 1) * v].to_vec();
        val.sort_unstable();
        let mut train: Vec<ClassId> = pool
            .iter()
            .copied()
            .filter(|c| val.binary_search(c).is_err())
            .collect();
        train.sort_unstable();
        folds.push(SplitSpec::new(
            train,
            val,
            split.test_unseen_classes().to_vec(),
            split.test_seen_image_indices().to_vec(),
            format!("{}-fold{}", split.name(), i),
        )?);
    }
    Ok(folds)
}

/// Shape of a generated verification dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_train_classes: usize,
    pub n_val_classes: usize,
    pub n_test_classes: usize,
    pub attr_dim: usize,
    pub feat_dim: usize,
    pub images_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_classes + self.n_val_classes + self.n_test_classes != self.n_classes {
            return Err(Error::invalid(
                "synthetic config",
                format!(
                    "train+val+test classes ({}+{}+{}) must equal n_classes ({})",
                    self.n_train_classes, self.n_val_classes, self.n_test_classes, self.n_classes
                ),
            ));
        }
        if self.n_train_classes == 0 || self.n_test_classes == 0 {
            return Err(Error::invalid("synthetic config", "needs ≥1 train and ≥1 test class"));
        }
        if self.attr_dim == 0 || self.feat_dim == 0 || self.images_per_class == 0 {
            return Err(Error::invalid("synthetic config", "dims and images_per_class must be ≥ 1"));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(
                "synthetic config",
                format!("noise_sigma must be finite and ≥ 0, got {}", self.noise_sigma),
            ));
        }
        Ok(())
    }
}

const ATTRIBUTE_DRAW_ATTEMPTS: usize = 20;
const MAX_PAIRWISE_COSINE: f64 = 0.95;

/// Draw unit-norm sign-vector attributes (entries ±1/√a). Rows must be
/// pairwise separated in cosine; every attribute column must carry both
/// signs inside the train group and, with enough margin, inside train∪val
/// so any validation refold keeps both polarities trainable.
fn draw_attributes(
    rng: &mut ChaCha8Rng,
    order: &[ClassId],
    cfg: &SyntheticConfig,
) -> Result<Array2<f64>> {
    let c = cfg.n_classes;
    let a = cfg.attr_dim;
    let scale = 1.0 / (a as f64).sqrt();
    let seen = cfg.n_train_classes + cfg.n_val_classes;
    'attempt: for _ in 0..ATTRIBUTE_DRAW_ATTEMPTS {
        let mut m = Array2::<f64>::zeros((c, a));
        for i in 0..c {
            for j in 0..a {
                m[(i, j)] = if rng.random::<bool>() { scale } else { -scale };
            }
        }
        for i in 0..c {
            for j in (i + 1)..c {
                if m.row(i).dot(&m.row(j)) >= MAX_PAIRWISE_COSINE {
                    continue 'attempt;
                }
            }
        }
        for j in 0..a {
            let train_pos = order[..cfg.n_train_classes].iter().filter(|&&cl| m[(cl, j)] > 0.0).count();
            if train_pos == 0 || train_pos == cfg.n_train_classes {
                continue 'attempt;
            }
            if cfg.n_val_classes > 0 {
                let seen_pos = order[..seen].iter().filter(|&&cl| m[(cl, j)] > 0.0).count();
                // A refold moves up to n_val classes out of the train side;
                // both signs must survive any such removal.
                if seen_pos <= cfg.n_val_classes || seen - seen_pos <= cfg.n_val_classes {
                    continue 'attempt;
                }
            }
        }
        return Ok(m);
    }
    Err(Error::Synthetic(format!(
        "could not draw attribute vectors meeting cosine < {MAX_PAIRWISE_COSINE} and \
         column-polarity constraints in {ATTRIBUTE_DRAW_ATTEMPTS} attempts"
    )))
}

/// Generate a seeded synthetic dataset: unit-norm class attributes, a
/// ground-truth linear map M*, features M*·φ(class) + Gaussian noise, and a
/// proposed-style split with a 20% seen-image holdout.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.n_classes;

    // Class roles are decided up front so attribute polarity constraints can
    // reference the train/val groups.
    let mut order: Vec<ClassId> = (0..c).collect();
    order.shuffle(&mut rng);
    let attributes = draw_attributes(&mut rng, &order, cfg)?;

    let mstar = Array2::<f64>::from_shape_fn((cfg.feat_dim, cfg.attr_dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });

    let n = c * cfg.images_per_class;
    let mut feats = Array2::<f64>::zeros((n, cfg.feat_dim));
    let mut labels = Vec::with_capacity(n);
    for class in 0..c {
        let mean = mstar.dot(&attributes.row(class));
        for img in 0..cfg.images_per_class {
            let row = class * cfg.images_per_class + img;
            let noise = Array1::<f64>::from_shape_fn(cfg.feat_dim, |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            feats.row_mut(row).assign(&(&mean + &(cfg.noise_sigma * noise)));
            labels.push(class);
        }
    }

    let mut train: Vec<ClassId> = order[..cfg.n_train_classes].to_vec();
    let mut val: Vec<ClassId> = order[cfg.n_train_classes..cfg.n_train_classes + cfg.n_val_classes].to_vec();
    let mut test: Vec<ClassId> = order[cfg.n_train_classes + cfg.n_val_classes..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let mut test_seen = Vec::new();
    for &cl in &train {
        let mut rows: Vec<usize> =
            (cl * cfg.images_per_class..(cl + 1) * cfg.images_per_class).collect();
        let h = holdout_count(rows.len(), 0.2);
        rows.shuffle(&mut rng);
        let mut held = rows[..h].to_vec();
        held.sort_unstable();
        test_seen.extend(held);
    }
    test_seen.sort_unstable();

    let names = (0..c).map(|i| format!("synthetic_class_{i}")).collect();
    DatasetBundle::new(
        FeatureMatrix::new(feats)?,
        LabelVector::new(labels)?,
        ClassEmbeddingTable::new(attributes)?,
        SplitSpec::new(train, val, test, test_seen, "PS")?,
        Some(names),
    )
}
