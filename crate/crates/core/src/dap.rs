//! DAP: per-attribute probabilistic classifiers combined through the
//! prior-normalized posterior product, evaluated in log space.

use ndarray::{Array1, Array2, ArrayView1};

use crate::datamodel::{CandidateSet, ClassEmbeddingTable, ClassId, DatasetBundle};
use crate::error::{Error, Result};
use crate::logistic::fit_binary_logistic;
use crate::method::{argmax_by_score, TrainedMethod};

/// Probability clamp keeping every factor strictly inside (0, 1).
pub const PROB_CLAMP: f64 = 1e-6;

const BANK_GD_ITERS: usize = 500;

/// C×M binary attribute signatures, one row per class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSignatureTable {
    bits: Array2<u8>,
}

impl AttributeSignatureTable {
    pub fn n_classes(&self) -> usize {
        self.bits.nrows()
    }

    pub fn n_attributes(&self) -> usize {
        self.bits.ncols()
    }

    pub fn bit(&self, class: ClassId, attribute: usize) -> bool {
        self.bits[(class, attribute)] == 1
    }

    pub fn row(&self, class: ClassId) -> Vec<bool> {
        self.bits.row(class).iter().map(|&b| b == 1).collect()
    }
}

/// Threshold each attribute at its mean across classes: entry = 1 iff value
/// ≥ column mean. Constant columns are uninformative and rejected; identical
/// signature rows make the posterior argmax ambiguous and are rejected.
pub fn binarize_attributes(table: &ClassEmbeddingTable) -> Result<AttributeSignatureTable> {
    let data = table.as_array();
    let c = data.nrows();
    let m = data.ncols();
    let mut bits = Array2::<u8>::zeros((c, m));
    for j in 0..m {
        let col = data.column(j);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sum = 0.0;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        if lo == hi {
            return Err(Error::ConstantAttribute { attribute: j });
        }
        let mean = sum / c as f64;
        for i in 0..c {
            bits[(i, j)] = u8::from(col[i] >= mean);
        }
    }
    for a in 0..c {
        for b in (a + 1)..c {
            if bits.row(a) == bits.row(b) {
                return Err(Error::DuplicateSignature { a, b });
            }
        }
    }
    Ok(AttributeSignatureTable { bits })
}

/// M independent binary attribute classifiers (logistic, linear with
/// unregularized intercept) plus the attribute priors of the posterior rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeClassifierBank {
    weights: Array2<f64>,
    biases: Array1<f64>,
    priors: Array1<f64>,
}

impl AttributeClassifierBank {
    /// Assemble a bank from linear parts: row m of `weights` and `biases[m]`
    /// define attribute m's classifier; priors must lie strictly in (0,1).
    pub fn from_linear(weights: Array2<f64>, biases: Array1<f64>, priors: Array1<f64>) -> Result<Self> {
        let m = weights.nrows();
        if biases.len() != m || priors.len() != m {
            return Err(Error::Dimension {
                context: "attribute bank parts".into(),
                expected: m,
                got: biases.len().min(priors.len()),
            });
        }
        if priors.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid("attribute priors", "must lie strictly in (0,1)"));
        }
        Ok(Self {
            weights,
            biases,
            priors,
        })
    }

    pub fn n_attributes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn priors(&self) -> &Array1<f64> {
        &self.priors
    }

    /// p(a_m = 1 | x) per attribute, clamped to [ε, 1−ε].
    pub fn attribute_probs(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let z = self.weights.dot(&x) + &self.biases;
        z.mapv(|v| {
            let p = 1.0 / (1.0 + (-v).exp());
            p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        })
    }
}

/// One-vs-rest logistic attribute classifiers on the training images, each
/// labeled by its class's signature bit. Every attribute needs both positive
/// and negative training classes.
pub fn train_attribute_bank(
    bundle: &DatasetBundle,
    sig: &AttributeSignatureTable,
    reg: f64,
) -> Result<AttributeClassifierBank> {
    if reg <= 0.0 || !reg.is_finite() {
        return Err(Error::invalid("attribute bank", format!("reg must be positive, got {reg}")));
    }
    if sig.n_classes() != bundle.class_embeddings().n_classes() {
        return Err(Error::Dimension {
            context: "signature rows vs classes".into(),
            expected: bundle.class_embeddings().n_classes(),
            got: sig.n_classes(),
        });
    }
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("training set", "no training rows in bundle"));
    }
    let train = bundle.split().train_classes();
    let m = sig.n_attributes();
    for j in 0..m {
        let pos = train.iter().any(|&c| sig.bit(c, j));
        let neg = train.iter().any(|&c| !sig.bit(c, j));
        if !pos || !neg {
            return Err(Error::invalid(
                "attribute bank",
                format!("attribute {j} has single-polarity training data"),
            ));
        }
    }
    let d = bundle.features().dim();
    let mut x = Array2::<f64>::zeros((rows.len(), d));
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&bundle.features().row(i));
    }
    let mut weights = Array2::<f64>::zeros((m, d));
    let mut biases = Array1::<f64>::zeros(m);
    let mut targets = vec![0.0; rows.len()];
    for j in 0..m {
        for (r, &i) in rows.iter().enumerate() {
            targets[r] = if sig.bit(bundle.labels().get(i), j) { 1.0 } else { -1.0 };
        }
        let fit = fit_binary_logistic(x.view(), &targets, reg, BANK_GD_ITERS);
        weights.row_mut(j).assign(&fit.w);
        biases[j] = fit.b;
    }
    let priors = Array1::from_elem(m, 0.5);
    AttributeClassifierBank::from_linear(weights, biases, priors)
}

fn log_posterior(
    probs: &Array1<f64>,
    priors: &Array1<f64>,
    sig: &AttributeSignatureTable,
    class: ClassId,
) -> f64 {
    let mut acc = 0.0;
    for m in 0..sig.n_attributes() {
        let (p, prior) = (probs[m], priors[m]);
        if sig.bit(class, m) {
            acc += p.ln() - prior.ln();
        } else {
            acc += (1.0 - p).ln() - (1.0 - prior).ln();
        }
    }
    acc
}

/// Posterior score per candidate: Π_m p_m^{a} (1−p_m)^{1−a} / prior terms,
/// accumulated in log space and exponentiated. Scores align with
/// `candidates.ids()`.
pub fn dap_posterior(
    bank: &AttributeClassifierBank,
    sig: &AttributeSignatureTable,
    x: ArrayView1<'_, f64>,
    candidates: &CandidateSet<'_>,
) -> Vec<(ClassId, f64)> {
    let probs = bank.attribute_probs(x);
    candidates
        .ids()
        .iter()
        .map(|&c| (c, log_posterior(&probs, bank.priors(), sig, c).exp()))
        .collect()
}

/// DAP as a TrainedMethod; scores are log posteriors (argmax-equivalent to
/// the product form and immune to overflow for large attribute counts).
#[derive(Debug, Clone)]
pub struct DapMethod {
    bank: AttributeClassifierBank,
    sig: AttributeSignatureTable,
}

impl DapMethod {
    pub fn new(bank: AttributeClassifierBank, sig: AttributeSignatureTable) -> Result<Self> {
        if bank.n_attributes() != sig.n_attributes() {
            return Err(Error::Dimension {
                context: "bank attributes vs signature columns".into(),
                expected: sig.n_attributes(),
                got: bank.n_attributes(),
            });
        }
        Ok(Self { bank, sig })
    }

    pub fn bank(&self) -> &AttributeClassifierBank {
        &self.bank
    }

    pub fn signatures(&self) -> &AttributeSignatureTable {
        &self.sig
    }
}

impl TrainedMethod for DapMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, _candidates: &CandidateSet<'_>) -> f64 {
        let probs = self.bank.attribute_probs(x);
        log_posterior(&probs, self.bank.priors(), &self.sig, class)
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let probs = self.bank.attribute_probs(x);
        argmax_by_score(candidates, |class| {
            log_posterior(&probs, self.bank.priors(), &self.sig, class)
        })
    }
}

/// Build signatures from the bundle's full class table (the usual training
/// entry point for DAP).
pub fn train_dap(bundle: &DatasetBundle, reg: f64) -> Result<DapMethod> {
    let sig = binarize_attributes(bundle.class_embeddings())?;
    let bank = train_attribute_bank(bundle, &sig, reg)?;
    DapMethod::new(bank, sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{FeatureMatrix, LabelVector, SplitSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binarize_thresholds_at_column_mean() {
        let t = ClassEmbeddingTable::new(array![[0.2, 0.0], [0.8, 1.0]]).unwrap();
        let sig = binarize_attributes(&t).unwrap();
        assert!(!sig.bit(0, 0) && sig.bit(1, 0));
        // Already-binary column stays as is.
        assert!(!sig.bit(0, 1) && sig.bit(1, 1));
    }

    #[test]
    fn binarize_rejects_constant_column() {
        let t = ClassEmbeddingTable::new(array![[0.7, 0.1], [0.7, 0.9]]).unwrap();
        assert!(matches!(
            binarize_attributes(&t),
            Err(Error::ConstantAttribute { attribute: 0 })
        ));
    }

    #[test]
    fn binarize_rejects_identical_signatures() {
        // Rows 0 and 1 binarize identically (both below/above means together).
        let t = ClassEmbeddingTable::new(array![[0.1, 0.2], [0.2, 0.3], [0.9, 0.9]]).unwrap();
        assert!(matches!(
            binarize_attributes(&t),
            Err(Error::DuplicateSignature { a: 0, b: 1 })
        ));
    }

    fn fixed_prob_bank(probs: &[f64]) -> AttributeClassifierBank {
        // Zero weights; bias = logit(p) forces a constant output probability.
        let m = probs.len();
        let weights = Array2::zeros((m, 2));
        let biases = Array1::from_iter(probs.iter().map(|&p| (p / (1.0 - p)).ln()));
        AttributeClassifierBank::from_linear(weights, biases, Array1::from_elem(m, 0.5)).unwrap()
    }

    #[test]
    fn posterior_matches_single_attribute_hand_example() {
        let bank = fixed_prob_bank(&[0.8]);
        let table = ClassEmbeddingTable::new(array![[1.0], [0.0]]).unwrap();
        let sig = binarize_attributes(&table).unwrap();
        let view = table.restrict(&[0, 1]).unwrap();
        let x = array![0.0, 0.0];
        let scores = dap_posterior(&bank, &sig, x.view(), &view);
        assert_eq!(scores[0].0, 0);
        assert_abs_diff_eq!(scores[0].1, 1.6, epsilon = 1e-9);
        assert_abs_diff_eq!(scores[1].1, 0.4, epsilon = 1e-9);
        let method = DapMethod::new(bank, sig).unwrap();
        assert_eq!(method.predict(x.view(), &view), 0);
    }

    #[test]
    fn log_space_equals_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let probs = [rng.random::<f64>().clamp(0.05, 0.95), rng.random::<f64>().clamp(0.05, 0.95)];
            let bank = fixed_prob_bank(&probs);
            let table = ClassEmbeddingTable::new(array![[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
            let sig = binarize_attributes(&table).unwrap();
            let view = table.restrict(&[0, 1, 2]).unwrap();
            let x = array![0.0, 0.0];
            let fast = dap_posterior(&bank, &sig, x.view(), &view);
            for (c, got) in fast {
                let mut direct = 1.0;
                for (m, &raw) in probs.iter().enumerate() {
                    let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    direct *= if sig.bit(c, m) { p / 0.5 } else { (1.0 - p) / 0.5 };
                }
                assert_abs_diff_eq!(got, direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn shared_attribute_does_not_change_argmax() {
        // Attribute 2 has the same bit for both candidates; dropping it (or
        // any positive rescale of scores) keeps the winner.
        let bank3 = fixed_prob_bank(&[0.9, 0.3, 0.7]);
        let bank2 = fixed_prob_bank(&[0.9, 0.3]);
        let table3 = ClassEmbeddingTable::new(array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        let table2 = ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let sig3 = binarize_attributes(&table3).unwrap();
        let sig2 = binarize_attributes(&table2).unwrap();
        let x = array![0.0, 0.0];
        let view3 = table3.restrict(&[0, 1]).unwrap();
        let view2 = table2.restrict(&[0, 1]).unwrap();
        let m3 = DapMethod::new(bank3, sig3).unwrap();
        let m2 = DapMethod::new(bank2, sig2).unwrap();
        assert_eq!(m3.predict(x.view(), &view3), m2.predict(x.view(), &view2));
    }

    #[test]
    fn calibrated_predictions_put_true_class_on_top() {
        let table = ClassEmbeddingTable::new(array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        let sig = binarize_attributes(&table).unwrap();
        let view = table.restrict(&[0, 1, 2]).unwrap();
        for truth in 0..3 {
            let probs: Vec<f64> = (0..3)
                .map(|m| if sig.bit(truth, m) { 0.99 } else { 0.01 })
                .collect();
            let bank = fixed_prob_bank(&probs);
            let method = DapMethod::new(bank, sig.clone()).unwrap();
            assert_eq!(method.predict(array![0.0, 0.0].view(), &view), truth);
        }
    }

    fn attribute_aligned_bundle() -> DatasetBundle {
        // Feature coordinate 0 carries attribute 0; coordinate 1 carries
        // attribute 1. Classes: (1,0), (0,1), (1,1), (0,0) patterns.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patterns = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (c, pat) in patterns.iter().enumerate() {
            for _ in 0..15 {
                feats.push([
                    pat[0] * 2.0 - 1.0 + rng.random::<f64>() * 0.2,
                    pat[1] * 2.0 - 1.0 + rng.random::<f64>() * 0.2,
                ]);
                labels.push(c);
            }
        }
        let n = feats.len();
        let flat: Vec<f64> = feats.into_iter().flatten().collect();
        let embeds = ClassEmbeddingTable::new(array![
            [0.9, 0.1],
            [0.1, 0.9],
            [0.9, 0.9],
            [0.1, 0.1]
        ])
        .unwrap();
        DatasetBundle::new(
            FeatureMatrix::new(Array2::from_shape_vec((n, 2), flat).unwrap()).unwrap(),
            LabelVector::new(labels).unwrap(),
            embeds,
            SplitSpec::new(vec![0, 1, 3], vec![], vec![2], vec![], "t").unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn aligned_attribute_classifier_is_confident_on_positives() {
        let bundle = attribute_aligned_bundle();
        let sig = binarize_attributes(bundle.class_embeddings()).unwrap();
        let bank = train_attribute_bank(&bundle, &sig, 0.01).unwrap();
        // Held-out images of the unseen class (2) are positive for both
        // attributes; the bank never saw them.
        for &i in &bundle.rows_labeled_in(&[2]) {
            let probs = bank.attribute_probs(bundle.features().row(i));
            assert!(probs[0] > 0.9, "attribute 0 prob {}", probs[0]);
            assert!(probs[1] > 0.9, "attribute 1 prob {}", probs[1]);
        }
    }

    #[test]
    fn huge_regularization_collapses_to_bias_only() {
        let bundle = attribute_aligned_bundle();
        let sig = binarize_attributes(bundle.class_embeddings()).unwrap();
        let bank = train_attribute_bank(&bundle, &sig, 1e6).unwrap();
        // Outputs barely depend on x once weights vanish.
        let p1 = bank.attribute_probs(bundle.features().row(0));
        let p2 = bank.attribute_probs(bundle.features().row(20));
        for m in 0..sig.n_attributes() {
            assert_abs_diff_eq!(p1[m], p2[m], epsilon = 1e-3);
        }
    }

    #[test]
    fn bank_training_is_deterministic() {
        let bundle = attribute_aligned_bundle();
        let sig = binarize_attributes(bundle.class_embeddings()).unwrap();
        let a = train_attribute_bank(&bundle, &sig, 0.05).unwrap();
        let b = train_attribute_bank(&bundle, &sig, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_polarity_attribute_is_rejected() {
        // Among train classes {0,1} attribute 1 is always 0 (class 2 carries
        // the only positive), so it cannot be trained.
        let embeds = ClassEmbeddingTable::new(array![
            [0.9, 0.1, 0.8],
            [0.1, 0.2, 0.1],
            [0.5, 0.9, 0.9]
        ])
        .unwrap();
        let bundle = DatasetBundle::new(
            FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            LabelVector::new(vec![0, 1]).unwrap(),
            embeds,
            SplitSpec::new(vec![0, 1], vec![], vec![2], vec![], "t").unwrap(),
            None,
        )
        .unwrap();
        let sig = binarize_attributes(bundle.class_embeddings()).unwrap();
        let err = train_attribute_bank(&bundle, &sig, 0.1).unwrap_err();
        assert!(err.to_string().contains("single-polarity"), "{err}");
    }
}
