//! Evaluation criteria: average per-class top-1 accuracy, ZSL and GZSL
//! protocols, and the seen/unseen harmonic mean.

use std::collections::BTreeMap;

use crate::datamodel::{ClassId, DatasetBundle};
use crate::error::{Error, Result};
use crate::method::TrainedMethod;

/// Accuracy report for one evaluation. `acc_seen` and `harmonic_mean` are
/// present together (GZSL) or absent together (pure ZSL).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acc_unseen: f64,
    pub acc_seen: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub per_class_breakdown: BTreeMap<ClassId, f64>,
}

/// Per-class correct/total tally. Every class must have at least one truth
/// instance; silent skipping would corrupt the average.
pub fn per_class_tally(
    predictions: &[ClassId],
    truths: &[ClassId],
    classes: &[ClassId],
) -> Result<BTreeMap<ClassId, f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            context: "predictions vs truths".into(),
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    let mut correct: BTreeMap<ClassId, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &t) in predictions.iter().zip(truths) {
        let entry = correct
            .get_mut(&t)
            .ok_or_else(|| Error::invalid("per-class accuracy", format!("truth label {t} not in class set")))?;
        entry.1 += 1;
        if p == t {
            entry.0 += 1;
        }
    }
    let mut out = BTreeMap::new();
    for (&c, &(hits, total)) in &correct {
        if total == 0 {
            return Err(Error::ClassWithoutImages {
                id: c,
                context: "per-class accuracy".into(),
            });
        }
        out.insert(c, hits as f64 / total as f64);
    }
    Ok(out)
}

/// Mean over classes of within-class top-1 accuracy.
pub fn per_class_top1(predictions: &[ClassId], truths: &[ClassId], classes: &[ClassId]) -> Result<f64> {
    let tally = per_class_tally(predictions, truths, classes)?;
    Ok(tally.values().sum::<f64>() / tally.len() as f64)
}

/// 2·tr·ts/(tr+ts), defined as 0 when both accuracies are 0.
pub fn harmonic_mean(acc_tr: f64, acc_ts: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&acc_tr), "acc_tr {acc_tr}");
    debug_assert!((0.0..=1.0).contains(&acc_ts), "acc_ts {acc_ts}");
    if acc_tr == 0.0 && acc_ts == 0.0 {
        return 0.0;
    }
    2.0 * acc_tr * acc_ts / (acc_tr + acc_ts)
}

fn predict_rows(
    method: &dyn TrainedMethod,
    bundle: &DatasetBundle,
    rows: &[usize],
    candidates: &crate::datamodel::CandidateSet<'_>,
) -> (Vec<ClassId>, Vec<ClassId>) {
    let mut preds = Vec::with_capacity(rows.len());
    let mut truths = Vec::with_capacity(rows.len());
    for &i in rows {
        preds.push(method.predict(bundle.features().row(i), candidates));
        truths.push(bundle.labels().get(i));
    }
    (preds, truths)
}

/// ZSL evaluation: predictions restricted to `target_classes`, accuracy
/// averaged per class over all images labeled with those classes.
pub fn evaluate_zsl(
    method: &dyn TrainedMethod,
    bundle: &DatasetBundle,
    target_classes: &[ClassId],
) -> Result<EvalReport> {
    if target_classes.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let candidates = bundle.restrict_candidates(target_classes)?;
    let rows = bundle.rows_labeled_in(target_classes);
    let (preds, truths) = predict_rows(method, bundle, &rows, &candidates);
    let per_class = per_class_tally(&preds, &truths, candidates.ids())?;
    let acc = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        acc_unseen: acc,
        acc_seen: None,
        harmonic_mean: None,
        per_class_breakdown: per_class,
    })
}

/// GZSL evaluation: every prediction chooses among seen ∪ unseen classes;
/// acc_unseen averages over the unseen-class images, acc_seen over the
/// held-out seen-class images listed in the split.
pub fn evaluate_gzsl(method: &dyn TrainedMethod, bundle: &DatasetBundle) -> Result<EvalReport> {
    let split = bundle.split();
    let unseen = split.test_unseen_classes().to_vec();
    if unseen.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let seen_rows = split.test_seen_image_indices();
    if seen_rows.is_empty() {
        return Err(Error::invalid(
            "gzsl evaluation",
            "split has no held-out seen-class test images",
        ));
    }
    let mut all: Vec<ClassId> = split.seen_classes();
    all.extend_from_slice(&unseen);
    all.sort_unstable();
    let candidates = bundle.restrict_candidates(&all)?;

    let unseen_rows = bundle.rows_labeled_in(&unseen);
    let (u_preds, u_truths) = predict_rows(method, bundle, &unseen_rows, &candidates);
    let u_tally = per_class_tally(&u_preds, &u_truths, &unseen)?;
    let acc_ts = u_tally.values().sum::<f64>() / u_tally.len() as f64;

    // Seen-side accuracy averages over the classes actually present in the
    // held-out images (a seen class may legitimately hold out nothing).
    let (s_preds, s_truths) = predict_rows(method, bundle, seen_rows, &candidates);
    let mut seen_present: Vec<ClassId> = s_truths.clone();
    seen_present.sort_unstable();
    seen_present.dedup();
    let s_tally = per_class_tally(&s_preds, &s_truths, &seen_present)?;
    let acc_tr = s_tally.values().sum::<f64>() / s_tally.len() as f64;

    let mut breakdown = u_tally;
    breakdown.extend(s_tally);
    Ok(EvalReport {
        acc_unseen: acc_ts,
        acc_seen: Some(acc_tr),
        harmonic_mean: Some(harmonic_mean(acc_tr, acc_ts)),
        per_class_breakdown: breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{
        CandidateSet, ClassEmbeddingTable, FeatureMatrix, LabelVector, SplitSpec,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2, ArrayView1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn per_class_average_differs_from_per_sample() {
        // Class 0: 3/3 correct; class 1: 0/1. Per-class 0.5, per-sample 0.75.
        let preds = [0, 0, 0, 0];
        let truths = [0, 0, 0, 1];
        let acc = per_class_top1(&preds, &truths, &[0, 1]).unwrap();
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
        let per_sample = preds.iter().zip(&truths).filter(|(p, t)| p == t).count() as f64 / 4.0;
        assert_abs_diff_eq!(per_sample, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn all_correct_is_one() {
        let labels = [2, 5, 5, 9];
        assert_abs_diff_eq!(
            per_class_top1(&labels, &labels, &[2, 5, 9]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn matches_independent_tally_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let classes = [0usize, 1, 2, 3];
            let truths: Vec<usize> = (0..40).map(|i| i % 4).collect();
            let preds: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
            let got = per_class_top1(&preds, &truths, &classes).unwrap();
            // Oracle: straightforward per-class filter and count.
            let mut acc_sum = 0.0;
            for &c in &classes {
                let idx: Vec<usize> = (0..40).filter(|&i| truths[i] == c).collect();
                let hits = idx.iter().filter(|&&i| preds[i] == c).count();
                acc_sum += hits as f64 / idx.len() as f64;
            }
            assert_abs_diff_eq!(got, acc_sum / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_instance_class_is_an_error() {
        let err = per_class_top1(&[0, 0], &[0, 0], &[0, 1]).unwrap_err();
        assert!(matches!(err, Error::ClassWithoutImages { id: 1, .. }));
    }

    #[test]
    fn truth_outside_class_set_is_an_error() {
        assert!(per_class_top1(&[0, 1], &[0, 7], &[0, 1]).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(per_class_top1(&[0], &[0, 1], &[0, 1]).is_err());
    }

    #[test]
    fn duplicating_one_class_leaves_accuracy_unchanged() {
        let preds = [0, 1, 2, 1];
        let truths = [0, 1, 2, 2];
        let base = per_class_top1(&preds, &truths, &[0, 1, 2]).unwrap();
        // Duplicate every class-2 image (with its deterministic prediction).
        let preds2 = [0, 1, 2, 1, 2, 1];
        let truths2 = [0, 1, 2, 2, 2, 2];
        let doubled = per_class_top1(&preds2, &truths2, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(base, doubled, epsilon = 1e-12);
    }

    #[test]
    fn harmonic_mean_reproduces_published_rows() {
        // ts/tr/H rows as printed (percent, one decimal).
        assert_abs_diff_eq!(harmonic_mean(0.331, 0.218), 0.263, epsilon = 5e-4);
        assert_abs_diff_eq!(harmonic_mean(0.869, 0.084), 0.153, epsilon = 5e-4);
        assert_eq!(harmonic_mean(0.887, 0.0), 0.0);
    }

    #[test]
    fn harmonic_mean_equal_arguments_identity() {
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert_abs_diff_eq!(harmonic_mean(x, x), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn harmonic_mean_zero_law_and_bounds() {
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.7), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = rng.random::<f64>();
            let b = rng.random::<f64>();
            let h = harmonic_mean(a, b);
            assert!(h <= (a + b) / 2.0 + 1e-12);
            assert!(h <= 2.0 * a.min(b) + 1e-12);
            assert!(h >= 0.0);
            if a > 0.0 && b > 0.0 {
                assert!(h > 0.0);
            }
        }
    }

    /// Scores classes by closeness of the class id to the first feature
    /// coordinate; with features equal to the label this is an oracle.
    struct AffinityScorer {
        offset: f64,
    }

    impl TrainedMethod for AffinityScorer {
        fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, _c: &CandidateSet<'_>) -> f64 {
            -(x[0] + self.offset - class as f64).powi(2)
        }
    }

    /// Always prefers one fixed class; everything else ties at zero.
    struct ConstantScorer {
        favorite: ClassId,
    }

    impl TrainedMethod for ConstantScorer {
        fn score(&self, _x: ArrayView1<'_, f64>, class: ClassId, _c: &CandidateSet<'_>) -> f64 {
            if class == self.favorite {
                1.0
            } else {
                0.0
            }
        }
    }

    fn eval_bundle() -> DatasetBundle {
        // 4 classes, features equal to labels; classes {2,3} unseen.
        // Two images per class; one image of each seen class held out.
        let feats = array![
            [0.0],
            [0.0],
            [1.0],
            [1.0],
            [2.0],
            [2.0],
            [3.0],
            [3.0]
        ];
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        DatasetBundle::new(
            FeatureMatrix::new(feats).unwrap(),
            LabelVector::new(labels).unwrap(),
            ClassEmbeddingTable::new(array![[0.0], [1.0], [2.0], [3.0]]).unwrap(),
            SplitSpec::new(vec![0, 1], vec![], vec![2, 3], vec![1, 3], "t").unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn zsl_oracle_reaches_one() {
        let bundle = eval_bundle();
        let report = evaluate_zsl(&AffinityScorer { offset: 0.0 }, &bundle, &[2, 3]).unwrap();
        assert_eq!(report.acc_unseen, 1.0);
        assert!(report.acc_seen.is_none() && report.harmonic_mean.is_none());
        assert_eq!(report.per_class_breakdown[&2], 1.0);
        assert_eq!(report.per_class_breakdown[&3], 1.0);
    }

    #[test]
    fn zsl_constant_scorer_gets_one_class_only() {
        let bundle = eval_bundle();
        let report = evaluate_zsl(&ConstantScorer { favorite: 2 }, &bundle, &[2, 3]).unwrap();
        assert_abs_diff_eq!(report.acc_unseen, 0.5, epsilon = 1e-12);
        assert_eq!(report.per_class_breakdown[&2], 1.0);
        assert_eq!(report.per_class_breakdown[&3], 0.0);
    }

    #[test]
    fn zsl_matches_hand_tally_on_small_fixture() {
        // Offset 0.6 shifts every image's affinity toward the next class id:
        // images of class 2 (x=2) score best at class 3 (2.6 vs 2), images of
        // class 3 (x=3) stay at 3 (3.6 rounds to 3 among {2,3}).
        let bundle = eval_bundle();
        let report = evaluate_zsl(&AffinityScorer { offset: 0.6 }, &bundle, &[2, 3]).unwrap();
        assert_eq!(report.per_class_breakdown[&2], 0.0);
        assert_eq!(report.per_class_breakdown[&3], 1.0);
        assert_abs_diff_eq!(report.acc_unseen, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zsl_empty_target_set_is_an_error() {
        let bundle = eval_bundle();
        assert!(matches!(
            evaluate_zsl(&AffinityScorer { offset: 0.0 }, &bundle, &[]),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn gzsl_oracle_reaches_one_everywhere() {
        let bundle = eval_bundle();
        let report = evaluate_gzsl(&AffinityScorer { offset: 0.0 }, &bundle).unwrap();
        assert_eq!(report.acc_unseen, 1.0);
        assert_eq!(report.acc_seen, Some(1.0));
        assert_eq!(report.harmonic_mean, Some(1.0));
    }

    #[test]
    fn gzsl_seen_bias_zeroes_the_harmonic_mean() {
        let bundle = eval_bundle();
        let report = evaluate_gzsl(&ConstantScorer { favorite: 0 }, &bundle).unwrap();
        assert_eq!(report.acc_unseen, 0.0);
        assert_eq!(report.harmonic_mean, Some(0.0));
    }

    #[test]
    fn gzsl_requires_seen_test_images() {
        let bundle = eval_bundle();
        let stripped = bundle
            .with_split(SplitSpec::new(vec![0, 1], vec![], vec![2, 3], vec![], "t").unwrap())
            .unwrap();
        let err = evaluate_gzsl(&AffinityScorer { offset: 0.0 }, &stripped).unwrap_err();
        assert!(err.to_string().contains("seen-class test images"), "{err}");
    }

    /// Deterministic but arbitrary scorer used for the monotonicity check.
    struct PseudoRandomScorer;

    impl TrainedMethod for PseudoRandomScorer {
        fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, _c: &CandidateSet<'_>) -> f64 {
            ((x[0] + 1.3) * (class as f64 * 2.7 + 1.1)).sin()
        }
    }

    #[test]
    fn gzsl_unseen_accuracy_never_exceeds_zsl() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            // Random features, 4 classes, 3 images per class.
            let feats = Array2::from_shape_fn((12, 1), |_| rng.random::<f64>() * 4.0);
            let labels: Vec<usize> = (0..12).map(|i| i / 3).collect();
            let bundle = DatasetBundle::new(
                FeatureMatrix::new(feats).unwrap(),
                LabelVector::new(labels).unwrap(),
                ClassEmbeddingTable::new(array![[0.0], [1.0], [2.0], [3.0]]).unwrap(),
                SplitSpec::new(vec![0, 1], vec![], vec![2, 3], vec![0, 3], "t").unwrap(),
                None,
            )
            .unwrap();
            let method = PseudoRandomScorer;
            let zsl = evaluate_zsl(&method, &bundle, &[2, 3]).unwrap();
            let gzsl = evaluate_gzsl(&method, &bundle).unwrap();
            assert!(
                gzsl.acc_unseen <= zsl.acc_unseen + 1e-12,
                "trial {trial}: gzsl {} > zsl {}",
                gzsl.acc_unseen,
                zsl.acc_unseen
            );
            // Per-image implication: a correct GZSL prediction is correct
            // under the restricted candidate set as well.
            let unseen_rows = bundle.rows_labeled_in(&[2, 3]);
            let all = bundle.restrict_candidates(&[0, 1, 2, 3]).unwrap();
            let sub = bundle.restrict_candidates(&[2, 3]).unwrap();
            for &i in &unseen_rows {
                let x = bundle.features().row(i);
                let truth = bundle.labels().get(i);
                if method.predict(x, &all) == truth {
                    assert_eq!(method.predict(x, &sub), truth);
                }
            }
        }
    }
}
