//! Methods that express classes or images as mixtures of seen-class
//! quantities: CONSE (convex combination of top seen embeddings), a
//! simplified SSE (simplex-coded classes matched against seen-class
//! posteriors), and SYNC (classifiers synthesized from phantom classifiers
//! aligned with the seen classes).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::datamodel::{CandidateSet, ClassEmbeddingTable, ClassId, DatasetBundle};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, spectral_bound};
use crate::logistic::{fit_multinomial_logistic, softmax_into};
use crate::method::{argmax_by_score, TrainedMethod};

const SEEN_CLF_ITERS: usize = 500;

/// Multinomial probabilistic classifier over the train classes. Linear
/// (no intercept), so infinite regularization collapses to the uniform
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenClassifier {
    weights: Array2<f64>,
    class_ids: Vec<ClassId>,
}

impl SeenClassifier {
    pub fn new(weights: Array2<f64>, class_ids: Vec<ClassId>) -> Result<Self> {
        if weights.nrows() != class_ids.len() {
            return Err(Error::Dimension {
                context: "seen classifier rows vs class ids".into(),
                expected: class_ids.len(),
                got: weights.nrows(),
            });
        }
        if class_ids.is_empty() {
            return Err(Error::invalid("seen classifier", "needs at least one class"));
        }
        if class_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("seen classifier", "class ids must be sorted and distinct"));
        }
        Ok(Self { weights, class_ids })
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// p_tr(·|x) aligned with `class_ids`; nonnegative, sums to 1.
    pub fn probs(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let scores = self.weights.dot(&x);
        let mut out = Array1::zeros(scores.len());
        softmax_into(scores.view(), &mut out);
        out
    }
}

/// Multinomial logistic regression on the training images over the train
/// classes. Every train class must contribute at least one image.
pub fn train_seen_classifier(bundle: &DatasetBundle, reg: f64) -> Result<SeenClassifier> {
    if reg <= 0.0 || !reg.is_finite() {
        return Err(Error::invalid("seen classifier", format!("reg must be positive, got {reg}")));
    }
    let train = bundle.split().train_classes().to_vec();
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("seen classifier", "no training rows in bundle"));
    }
    let d = bundle.features().dim();
    let mut x = Array2::<f64>::zeros((rows.len(), d));
    let mut class_idx = vec![0usize; rows.len()];
    let mut counts = vec![0usize; train.len()];
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&bundle.features().row(i));
        let label = bundle.labels().get(i);
        let k = train
            .binary_search(&label)
            .expect("training row label is a train class");
        class_idx[r] = k;
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ClassWithoutImages {
            id: train[k],
            context: "seen classifier training".into(),
        });
    }
    let weights = fit_multinomial_logistic(x.view(), &class_idx, train.len(), reg, SEEN_CLF_ITERS);
    SeenClassifier::new(weights, train)
}

/// Ranks of the T most probable train classes, probability ties broken by
/// smaller class id (stable sort over ascending ids).
fn top_t_indices(probs: &Array1<f64>, t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).expect("finite probabilities"));
    order.truncate(t);
    order
}

/// Convex combination of the T most probable train classes' embeddings,
/// weighted by their renormalized probabilities.
pub fn conse_embed(
    clf: &SeenClassifier,
    class_embeds: &ClassEmbeddingTable,
    x: ArrayView1<'_, f64>,
    top_t: usize,
) -> Result<Array1<f64>> {
    if top_t == 0 || top_t > clf.n_classes() {
        return Err(Error::invalid(
            "conse top_t",
            format!("must be in 1..={}, got {top_t}", clf.n_classes()),
        ));
    }
    let probs = clf.probs(x);
    let top = top_t_indices(&probs, top_t);
    let z: f64 = top.iter().map(|&k| probs[k]).sum();
    let mut out = Array1::<f64>::zeros(class_embeds.dim());
    for &k in &top {
        let phi = class_embeds.embedding(clf.class_ids()[k])?;
        out.scaled_add(probs[k] / z, &phi);
    }
    Ok(out)
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.dot(&b) / (na * nb))
}

/// Nearest candidate to the combined embedding by cosine similarity.
/// Zero-norm embeddings (combined or candidate) are an error.
pub fn conse_predict(
    clf: &SeenClassifier,
    class_embeds: &ClassEmbeddingTable,
    x: ArrayView1<'_, f64>,
    top_t: usize,
    candidates: &CandidateSet<'_>,
) -> Result<ClassId> {
    let z = conse_embed(clf, class_embeds, x, top_t)?;
    let mut best: Option<(ClassId, f64)> = None;
    for (id, phi) in candidates.iter() {
        let sim = cosine(z.view(), phi)
            .ok_or_else(|| Error::invalid("conse predict", "zero-norm embedding"))?;
        match best {
            Some((_, s)) if sim <= s => {}
            _ => best = Some((id, sim)),
        }
    }
    Ok(best.expect("candidate sets are nonempty").0)
}

/// CONSE as a TrainedMethod. `score` is the cosine similarity between the
/// combined embedding and the candidate class; degenerate zero-norm inputs
/// score 0 (construction rejects zero-norm split-class embeddings, so this
/// only arises if the convex combination cancels exactly).
#[derive(Debug, Clone)]
pub struct ConseMethod {
    clf: SeenClassifier,
    table: ClassEmbeddingTable,
    top_t: usize,
}

impl ConseMethod {
    pub fn new(clf: SeenClassifier, table: ClassEmbeddingTable, top_t: usize) -> Result<Self> {
        if top_t == 0 || top_t > clf.n_classes() {
            return Err(Error::invalid(
                "conse top_t",
                format!("must be in 1..={}, got {top_t}", clf.n_classes()),
            ));
        }
        for &id in clf.class_ids() {
            let phi = table.embedding(id)?;
            if phi.dot(&phi) == 0.0 {
                return Err(Error::invalid("conse", format!("class {id} has a zero-norm embedding")));
            }
        }
        Ok(Self { clf, table, top_t })
    }

    pub fn top_t(&self) -> usize {
        self.top_t
    }
}

/// Train CONSE: seen classifier plus the class-embedding table.
pub fn train_conse(bundle: &DatasetBundle, reg: f64, top_t: usize) -> Result<ConseMethod> {
    let clf = train_seen_classifier(bundle, reg)?;
    ConseMethod::new(clf, bundle.class_embeddings().clone(), top_t)
}

impl TrainedMethod for ConseMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, _candidates: &CandidateSet<'_>) -> f64 {
        let z = conse_embed(&self.clf, &self.table, x, self.top_t).expect("validated at construction");
        match self.table.embedding(class) {
            Ok(phi) => cosine(z.view(), phi).unwrap_or(0.0),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let z = conse_embed(&self.clf, &self.table, x, self.top_t).expect("validated at construction");
        argmax_by_score(candidates, |c| {
            cosine(z.view(), candidates.embedding(c)).unwrap_or(0.0)
        })
    }
}

/// Displacement below which the projected-gradient iterate is accepted as a
/// fixed point. Looser than machine precision because plain projected
/// gradient converges sublinearly on rank-deficient systems.
pub const SSE_FIXED_POINT_TOL: f64 = 1e-4;

const SSE_PGD_ITERS: usize = 500;

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &Array1<f64>) -> Array1<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut css = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let cand = (css - 1.0) / (j + 1) as f64;
        if uj - cand > 0.0 {
            tau = cand;
        }
    }
    v.mapv(|x| (x - tau).max(0.0))
}

/// Simplex-constrained least squares: argmin_{ψ ∈ Δ} ‖columns·ψ − target‖²
/// by projected gradient from the uniform vector, fixed iteration count.
/// Returns the weights and the final reconstruction residual ‖Bψ − t‖.
/// A terminal projected-gradient displacement above the fixed-point
/// tolerance is reported as non-convergence.
pub fn fit_mixture(columns: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>) -> Result<(Array1<f64>, f64)> {
    let k = columns.ncols();
    if columns.nrows() != target.len() {
        return Err(Error::Dimension {
            context: "mixture target length".into(),
            expected: columns.nrows(),
            got: target.len(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("mixture fit", "needs at least one column"));
    }
    let gram = columns.t().dot(&columns);
    let lip = 2.0 * spectral_bound(gram.view(), 50).max(f64::MIN_POSITIVE);
    let step = 1.0 / lip;
    let bt_t = columns.t().dot(&target);
    let mut psi = Array1::from_elem(k, 1.0 / k as f64);
    let pgd_step = |psi: &Array1<f64>| {
        let grad = 2.0 * (gram.dot(psi) - &bt_t);
        project_simplex(&(psi - step * grad))
    };
    for _ in 0..SSE_PGD_ITERS {
        psi = pgd_step(&psi);
    }
    let moved = pgd_step(&psi) - &psi;
    let displacement = moved.dot(&moved).sqrt();
    if displacement > SSE_FIXED_POINT_TOL {
        return Err(Error::NotConverged {
            residual: displacement,
            iters: SSE_PGD_ITERS,
        });
    }
    let recon = columns.dot(&psi) - target;
    Ok((psi, recon.dot(&recon).sqrt()))
}

/// SSE model: per-class simplex mixtures over train classes (ψ) and the
/// seen classifier whose softmax output encodes images (π).
#[derive(Debug, Clone)]
pub struct SseModel {
    mixtures: Array2<f64>,
    clf: SeenClassifier,
}

impl SseModel {
    /// ψ(φ(class)): simplex weights over the train classes.
    pub fn class_mixture(&self, class: ClassId) -> Result<ArrayView1<'_, f64>> {
        if class >= self.mixtures.nrows() {
            return Err(Error::UnknownClass {
                id: class,
                n_classes: self.mixtures.nrows(),
            });
        }
        Ok(self.mixtures.row(class))
    }

    /// π(θ(x)): the seen classifier's posterior, already on the simplex.
    pub fn image_mixture(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.clf.probs(x)
    }

    pub fn classifier(&self) -> &SeenClassifier {
        &self.clf
    }
}

/// Fit the simplified SSE: every class embedding is reconstructed as a
/// simplex mixture of the train-class embeddings; images are encoded by a
/// multinomial seen classifier with regularization `reg`.
pub fn sse_fit(bundle: &DatasetBundle, reg: f64) -> Result<SseModel> {
    let clf = train_seen_classifier(bundle, reg)?;
    let train = clf.class_ids().to_vec();
    let table = bundle.class_embeddings();
    let a = table.dim();
    let mut columns = Array2::<f64>::zeros((a, train.len()));
    for (j, &c) in train.iter().enumerate() {
        columns.column_mut(j).assign(&table.embedding(c)?);
    }
    let c_total = table.n_classes();
    let mut mixtures = Array2::<f64>::zeros((c_total, train.len()));
    for c in 0..c_total {
        let (psi, _residual) = fit_mixture(columns.view(), table.embedding(c)?)?;
        mixtures.row_mut(c).assign(&psi);
    }
    Ok(SseModel { mixtures, clf })
}

/// SSE as a TrainedMethod: score(x, u) = π(θ(x))·ψ(φ(u)).
#[derive(Debug, Clone)]
pub struct SseMethod {
    model: SseModel,
}

impl SseMethod {
    pub fn new(model: SseModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &SseModel {
        &self.model
    }
}

pub fn train_sse(bundle: &DatasetBundle, reg: f64) -> Result<SseMethod> {
    Ok(SseMethod::new(sse_fit(bundle, reg)?))
}

impl TrainedMethod for SseMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, _candidates: &CandidateSet<'_>) -> f64 {
        let probs = self.model.image_mixture(x);
        match self.model.class_mixture(class) {
            Ok(psi) => probs.dot(&psi),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let probs = self.model.image_mixture(x);
        argmax_by_score(candidates, |c| {
            self.model.class_mixture(c).map(|psi| probs.dot(&psi)).unwrap_or(f64::NEG_INFINITY)
        })
    }
}

/// Softmax alignment between a class embedding and the phantom embeddings:
/// s_r ∝ exp(−‖φ(c) − b_r‖² / (2σ²)), normalized to sum 1.
pub fn sync_alignment_weights(
    class_embed: ArrayView1<'_, f64>,
    phantom_embeds: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<Array1<f64>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::invalid("sync bandwidth", format!("sigma must be positive, got {sigma}")));
    }
    if phantom_embeds.ncols() != class_embed.len() {
        return Err(Error::Dimension {
            context: "phantom embedding dim".into(),
            expected: class_embed.len(),
            got: phantom_embeds.ncols(),
        });
    }
    let r = phantom_embeds.nrows();
    let mut scores = Array1::<f64>::zeros(r);
    for i in 0..r {
        let diff = &class_embed - &phantom_embeds.row(i);
        scores[i] = -diff.dot(&diff) / (2.0 * sigma * sigma);
    }
    let mut out = Array1::zeros(r);
    softmax_into(scores.view(), &mut out);
    Ok(out)
}

/// SYNC model: phantom classifiers pinned one-per-train-class, their
/// embeddings fixed to the train-class embeddings.
#[derive(Debug, Clone)]
pub struct SyncModel {
    phantom_classifiers: Array2<f64>,
    phantom_embeds: Array2<f64>,
    seen_classifiers: Array2<f64>,
    train_classes: Vec<ClassId>,
    sigma: f64,
}

impl SyncModel {
    pub fn phantom_classifiers(&self) -> &Array2<f64> {
        &self.phantom_classifiers
    }

    pub fn phantom_embeds(&self) -> &Array2<f64> {
        &self.phantom_embeds
    }

    pub fn seen_classifiers(&self) -> &Array2<f64> {
        &self.seen_classifiers
    }

    pub fn train_classes(&self) -> &[ClassId] {
        &self.train_classes
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Squared-Frobenius distortion ‖S·V − W‖² between the aligned phantom
/// classifiers and the target classifiers.
pub fn sync_distortion(s: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> f64 {
    let diff = s.dot(&v) - w;
    diff.iter().map(|&e| e * e).sum()
}

/// Train SYNC. The phantom count is pinned to the number of train classes
/// with b_r = φ(r). Seen classifiers solve a ridge one-vs-rest square loss
/// (targets ±1) with regularization `reg`; phantom classifiers then minimize
/// the distortion ‖S·V − W‖² exactly (normal equations, no extra ridge, so
/// indicator alignment weights reproduce W bit for bit).
pub fn sync_train(bundle: &DatasetBundle, sigma: f64, reg: f64) -> Result<SyncModel> {
    if reg <= 0.0 || !reg.is_finite() {
        return Err(Error::invalid("sync", format!("reg must be positive, got {reg}")));
    }
    let train = bundle.split().train_classes().to_vec();
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("sync", "no training rows in bundle"));
    }
    let d = bundle.features().dim();
    let a = bundle.class_embeddings().dim();
    let k = train.len();
    let mut x = Array2::<f64>::zeros((rows.len(), d));
    let mut t = Array2::<f64>::from_elem((rows.len(), k), -1.0);
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&bundle.features().row(i));
        let ki = train
            .binary_search(&bundle.labels().get(i))
            .expect("training row label is a train class");
        t[(r, ki)] = 1.0;
    }
    let mut gram = x.t().dot(&x);
    for i in 0..d {
        gram[(i, i)] += reg;
    }
    let xtt = x.t().dot(&t);
    let w = solve_spd(gram.view(), xtt.view(), "sync seen-classifier solve")?
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    let mut phantom_embeds = Array2::<f64>::zeros((k, a));
    for (i, &c) in train.iter().enumerate() {
        phantom_embeds.row_mut(i).assign(&bundle.class_embeddings().embedding(c)?);
    }
    let mut s = Array2::<f64>::zeros((k, k));
    for (i, &c) in train.iter().enumerate() {
        let weights = sync_alignment_weights(
            bundle.class_embeddings().embedding(c)?,
            phantom_embeds.view(),
            sigma,
        )?;
        s.row_mut(i).assign(&weights);
    }
    let sts = s.t().dot(&s);
    let stw = s.t().dot(&w);
    let v = solve_spd(sts.view(), stw.view(), "sync alignment solve")?;
    Ok(SyncModel {
        phantom_classifiers: v,
        phantom_embeds,
        seen_classifiers: w,
        train_classes: train,
        sigma,
    })
}

/// Classifier for an arbitrary class embedding: convex combination of the
/// phantom classifiers with softmax alignment weights.
pub fn sync_synthesize(model: &SyncModel, embed: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let s = sync_alignment_weights(embed, model.phantom_embeds.view(), model.sigma)?;
    Ok(model.phantom_classifiers.t().dot(&s))
}

/// SYNC as a TrainedMethod: train classes keep their fitted classifiers,
/// every other class gets a synthesized one; score(x, c) = w_c·x.
#[derive(Debug, Clone)]
pub struct SyncMethod {
    classifiers: Array2<f64>,
}

impl SyncMethod {
    pub fn classifiers(&self) -> &Array2<f64> {
        &self.classifiers
    }
}

pub fn train_sync(bundle: &DatasetBundle, sigma: f64, reg: f64) -> Result<SyncMethod> {
    let model = sync_train(bundle, sigma, reg)?;
    let c_total = bundle.class_embeddings().n_classes();
    let d = bundle.features().dim();
    let mut classifiers = Array2::<f64>::zeros((c_total, d));
    for c in 0..c_total {
        match model.train_classes.binary_search(&c) {
            Ok(i) => classifiers.row_mut(c).assign(&model.seen_classifiers.row(i)),
            Err(_) => classifiers
                .row_mut(c)
                .assign(&sync_synthesize(&model, bundle.class_embeddings().embedding(c)?)?),
        }
    }
    Ok(SyncMethod { classifiers })
}

impl TrainedMethod for SyncMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, _candidates: &CandidateSet<'_>) -> f64 {
        if class >= self.classifiers.nrows() {
            return f64::NEG_INFINITY;
        }
        self.classifiers.row(class).dot(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{FeatureMatrix, LabelVector, SplitSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable_bundle() -> DatasetBundle {
        // Classes 0/1 separable along the first coordinate; class 2 unseen.
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..20 {
            let c = i % 2;
            let base = if c == 0 { -1.0 } else { 1.0 };
            feats.push([base + 0.1 * rng.random::<f64>(), rng.random::<f64>() - 0.5]);
            labels.push(c);
        }
        let flat: Vec<f64> = feats.into_iter().flatten().collect();
        DatasetBundle::new(
            FeatureMatrix::new(Array2::from_shape_vec((20, 2), flat).unwrap()).unwrap(),
            LabelVector::new(labels).unwrap(),
            ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.6]]).unwrap(),
            SplitSpec::new(vec![0, 1], vec![], vec![2], vec![], "t").unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn seen_classifier_fits_separable_data() {
        let bundle = separable_bundle();
        let clf = train_seen_classifier(&bundle, 1e-3).unwrap();
        let mut correct = 0;
        for i in 0..bundle.features().n_images() {
            let probs = clf.probs(bundle.features().row(i));
            let pred = if probs[0] > probs[1] { 0 } else { 1 };
            if pred == bundle.labels().get(i) {
                correct += 1;
            }
        }
        assert_eq!(correct, 20);
    }

    #[test]
    fn seen_classifier_outputs_sum_to_one() {
        let bundle = separable_bundle();
        let clf = train_seen_classifier(&bundle, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = array![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let p = clf.probs(x.view());
            assert!(p.iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_regularization_gives_uniform_output() {
        let bundle = separable_bundle();
        let clf = train_seen_classifier(&bundle, 1e6).unwrap();
        let p = clf.probs(bundle.features().row(0));
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-4);
    }

    #[test]
    fn train_class_without_images_is_rejected() {
        // Class 1 is a train class but every image is labeled 0.
        let bundle = DatasetBundle::new(
            FeatureMatrix::new(array![[1.0], [2.0]]).unwrap(),
            LabelVector::new(vec![0, 0]).unwrap(),
            ClassEmbeddingTable::new(array![[1.0], [2.0], [3.0]]).unwrap(),
            SplitSpec::new(vec![0, 1], vec![], vec![2], vec![], "t").unwrap(),
            None,
        )
        .unwrap();
        assert!(matches!(
            train_seen_classifier(&bundle, 0.1),
            Err(Error::ClassWithoutImages { id: 1, .. })
        ));
    }

    fn fixed_prob_classifier() -> SeenClassifier {
        // d=1: probs(x) = softmax([x, 0]); x = ln(1.5) gives (0.6, 0.4).
        SeenClassifier::new(array![[1.0], [0.0]], vec![0, 1]).unwrap()
    }

    #[test]
    fn conse_embed_top1_returns_top_class_embedding() {
        let clf = fixed_prob_classifier();
        let table = ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let z = conse_embed(&clf, &table, array![2.0].view(), 1).unwrap();
        assert_eq!(z, array![1.0, 0.0]);
    }

    #[test]
    fn conse_embed_combines_probability_weights() {
        let clf = fixed_prob_classifier();
        let table = ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let x = array![1.5f64.ln()];
        let z = conse_embed(&clf, &table, x.view(), 2).unwrap();
        assert_abs_diff_eq!(z[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn conse_uniform_probs_give_mean_embedding() {
        // Zero weights → uniform posterior; T = K → mean of all embeddings.
        let clf = SeenClassifier::new(Array2::zeros((3, 2)), vec![0, 1, 2]).unwrap();
        let table =
            ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let z = conse_embed(&clf, &table, array![0.3, -0.2].view(), 3).unwrap();
        assert_abs_diff_eq!(z[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn conse_probability_ties_prefer_smaller_class_id() {
        let clf = SeenClassifier::new(Array2::zeros((3, 2)), vec![0, 1, 2]).unwrap();
        let table =
            ClassEmbeddingTable::new(array![[4.0, 0.0], [0.0, 4.0], [2.0, 2.0]]).unwrap();
        // Uniform probs, T=1: the tie must resolve to class 0.
        let z = conse_embed(&clf, &table, array![0.0, 0.0].view(), 1).unwrap();
        assert_eq!(z, array![4.0, 0.0]);
    }

    #[test]
    fn conse_weights_stay_on_simplex() {
        let bundle = separable_bundle();
        let clf = train_seen_classifier(&bundle, 0.05).unwrap();
        let table = bundle.class_embeddings();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 1..=2 {
            for _ in 0..25 {
                let x = array![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>()];
                let z = conse_embed(&clf, table, x.view(), t).unwrap();
                // Embeddings are e0, e1: combination coordinates are the
                // weights themselves, so they must be nonneg and sum to 1.
                assert!(z[0] >= 0.0 && z[1] >= 0.0);
                assert_abs_diff_eq!(z.sum(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn conse_predict_matches_exact_candidate() {
        let clf = fixed_prob_classifier();
        let table = ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0001]]).unwrap();
        // T=1 at large x → embedding exactly [1,0]; candidate 0 matches it.
        let view = table.restrict(&[0, 1]).unwrap();
        let pred = conse_predict(&clf, &table, array![3.0].view(), 1, &view).unwrap();
        assert_eq!(pred, 0);
    }

    #[test]
    fn conse_predict_prefers_aligned_orthonormal_axis() {
        let clf = fixed_prob_classifier();
        let table = ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let view = table.restrict(&[0, 1]).unwrap();
        // Combined embedding [0.6, 0.4] is closer in angle to e0.
        let pred = conse_predict(&clf, &table, array![1.5f64.ln()].view(), 2, &view).unwrap();
        assert_eq!(pred, 0);
    }

    #[test]
    fn conse_predict_agrees_with_brute_force_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<f64> = (0..10).map(|_| rng.random::<f64>() + 0.1).collect();
        let table = ClassEmbeddingTable::new(Array2::from_shape_vec((5, 2), rows).unwrap()).unwrap();
        let clf = SeenClassifier::new(array![[0.7, -0.3], [0.2, 0.9]], vec![0, 1]).unwrap();
        let view = table.restrict(&[0, 1, 2, 3, 4]).unwrap();
        for _ in 0..50 {
            let x = array![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            let z = conse_embed(&clf, &table, x.view(), 2).unwrap();
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for id in 0..5 {
                let sim = cosine(z.view(), table.embedding(id).unwrap()).unwrap();
                if sim > best.1 {
                    best = (id, sim);
                }
            }
            let pred = conse_predict(&clf, &table, x.view(), 2, &view).unwrap();
            assert_eq!(pred, best.0);
        }
    }

    #[test]
    fn conse_predict_rejects_zero_norm_candidate() {
        let clf = fixed_prob_classifier();
        let table = ClassEmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let view = table.restrict(&[0, 2]).unwrap();
        let err = conse_predict(&clf, &table, array![1.0].view(), 1, &view).unwrap_err();
        assert!(err.to_string().contains("zero-norm"), "{err}");
    }

    #[test]
    fn conse_method_agrees_with_standalone_predict() {
        let bundle = separable_bundle();
        let method = train_conse(&bundle, 0.05, 2).unwrap();
        let view = bundle.restrict_candidates(&[0, 1, 2]).unwrap();
        for i in 0..bundle.features().n_images() {
            let x = bundle.features().row(i);
            let standalone =
                conse_predict(&method.clf, bundle.class_embeddings(), x, 2, &view).unwrap();
            assert_eq!(method.predict(x, &view), standalone);
        }
    }

    #[test]
    fn simplex_projection_known_cases() {
        assert_eq!(project_simplex(&array![0.3, 0.3, 0.4]), array![0.3, 0.3, 0.4]);
        let p = project_simplex(&array![2.0, 0.0]);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
        let q = project_simplex(&array![0.6, 0.6]);
        assert_abs_diff_eq!(q[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mixture_of_duplicate_column_is_one_hot() {
        let cols = array![[1.0, 0.0, 0.3], [0.0, 1.0, 0.2], [0.0, 0.0, 0.9]];
        let target = array![0.0, 1.0, 0.0];
        let (psi, residual) = fit_mixture(cols.view(), target.view()).unwrap();
        assert_abs_diff_eq!(psi[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(psi[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(psi[2], 0.0, epsilon = 1e-9);
        assert!(residual < 1e-9, "residual {residual}");
    }

    #[test]
    fn mixture_of_orthogonal_halves_matches_grid_oracle() {
        let cols = array![[2.0, 0.0], [0.0, 2.0]];
        let target = array![1.0, 1.0];
        let (psi, _) = fit_mixture(cols.view(), target.view()).unwrap();
        // Independent oracle: exhaustive grid over the 1-D simplex.
        let objective = |w0: f64| {
            let w1 = 1.0 - w0;
            let r0 = 2.0 * w0 - 1.0;
            let r1 = 2.0 * w1 - 1.0;
            r0 * r0 + r1 * r1
        };
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=10_000 {
            let w0 = i as f64 / 10_000.0;
            let val = objective(w0);
            if val < best.1 {
                best = (w0, val);
            }
        }
        assert_abs_diff_eq!(psi[0], best.0, epsilon = 1e-3);
        assert_abs_diff_eq!(psi[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(psi[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn mixtures_stay_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let cols = Array2::from_shape_fn((4, 6), |_| rng.random::<f64>() * 2.0 - 1.0);
            let target = Array1::from_shape_fn(4, |_| rng.random::<f64>() * 2.0 - 1.0);
            let (psi, _) = fit_mixture(cols.view(), target.view()).unwrap();
            assert!(psi.iter().all(|&w| w >= 0.0));
            assert_abs_diff_eq!(psi.sum(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn sse_scores_favor_matching_mixture() {
        let bundle = separable_bundle();
        let method = train_sse(&bundle, 1e-3).unwrap();
        // Unseen class 2 embeds as 0.6·(e0+e1): its mixture is {0.5, 0.5}.
        let psi = method.model().class_mixture(2).unwrap();
        assert_abs_diff_eq!(psi[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(psi[1], 0.5, epsilon = 1e-6);
        // A confident class-0 image scores higher on class 0 than class 2.
        let view = bundle.restrict_candidates(&[0, 1, 2]).unwrap();
        let x = bundle.features().row(0);
        let s0 = method.score(x, 0, &view);
        let s2 = method.score(x, 2, &view);
        assert!(s0 > s2, "{s0} vs {s2}");
    }

    #[test]
    fn alignment_weights_uniform_when_equidistant() {
        let phantoms = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let w = sync_alignment_weights(array![0.0, 0.0].view(), phantoms.view(), 0.7).unwrap();
        for &v in w.iter() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn alignment_weights_match_direct_substitution() {
        // Distances² {0, 2σ²} → weights {1, e⁻¹}/(1+e⁻¹).
        let sigma = 0.5f64;
        let gap = (2.0 * sigma * sigma).sqrt();
        let phantoms = array![[0.0], [gap]];
        let w = sync_alignment_weights(array![0.0].view(), phantoms.view(), sigma).unwrap();
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(w[0], 1.0 / (1.0 + e1), epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], e1 / (1.0 + e1), epsilon = 1e-12);
    }

    #[test]
    fn alignment_weights_become_one_hot_as_sigma_shrinks() {
        let phantoms = array![[1.0, 0.0], [0.0, 1.0]];
        let w = sync_alignment_weights(array![1.0, 0.0].view(), phantoms.view(), 1e-9).unwrap();
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn tiny_sigma_makes_phantoms_equal_seen_classifiers() {
        let bundle = separable_bundle();
        let model = sync_train(&bundle, 1e-9, 0.1).unwrap();
        assert_eq!(model.phantom_classifiers(), model.seen_classifiers());
        // Synthesizing at a train-class embedding reproduces its phantom.
        let w = sync_synthesize(&model, bundle.class_embeddings().embedding(1).unwrap()).unwrap();
        assert_eq!(w, model.phantom_classifiers().row(1).to_owned());
    }

    #[test]
    fn solved_distortion_beats_zero_and_matches_gd_oracle() {
        let bundle = separable_bundle();
        let model = sync_train(&bundle, 0.8, 0.1).unwrap();
        let k = model.train_classes().len();
        let mut s = Array2::<f64>::zeros((k, k));
        for (i, &c) in model.train_classes().iter().enumerate() {
            let w = sync_alignment_weights(
                bundle.class_embeddings().embedding(c).unwrap(),
                model.phantom_embeds().view(),
                model.sigma(),
            )
            .unwrap();
            s.row_mut(i).assign(&w);
        }
        let solved = sync_distortion(
            s.view(),
            model.phantom_classifiers().view(),
            model.seen_classifiers().view(),
        );
        let zero = Array2::<f64>::zeros(model.phantom_classifiers().dim());
        let at_zero = sync_distortion(s.view(), zero.view(), model.seen_classifiers().view());
        assert!(solved <= at_zero);
        // Plain gradient descent on ‖SV−W‖² from V=0, 1000 steps.
        let sts = s.t().dot(&s);
        let lip = 2.0 * spectral_bound(sts.view(), 60);
        let step = 1.0 / lip;
        let mut v = zero;
        for _ in 0..1000 {
            let grad = 2.0 * s.t().dot(&(s.dot(&v) - model.seen_classifiers()));
            v -= &(step * grad);
        }
        let gd = sync_distortion(s.view(), v.view(), model.seen_classifiers().view());
        assert!(solved <= gd + 1e-6, "solved {solved} vs gd {gd}");
    }

    #[test]
    fn synthesized_classifier_stays_in_phantom_hull() {
        let bundle = separable_bundle();
        let model = sync_train(&bundle, 0.8, 0.1).unwrap();
        let w = sync_synthesize(&model, array![0.4, 0.7].view()).unwrap();
        for j in 0..w.len() {
            let col = model.phantom_classifiers().column(j);
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
            assert!(w[j] >= lo - 1e-12 && w[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn synthesis_is_continuous_in_the_embedding() {
        let bundle = separable_bundle();
        let model = sync_train(&bundle, 0.8, 0.1).unwrap();
        let base = array![0.3, 0.5];
        let w0 = sync_synthesize(&model, base.view()).unwrap();
        // Instance-measured Lipschitz estimate at a coarse perturbation.
        let coarse = 1e-3;
        let wc = sync_synthesize(&model, array![0.3 + coarse, 0.5].view()).unwrap();
        let k_est = (&wc - &w0).mapv(f64::abs).sum() / coarse;
        let fine = 1e-6;
        let wf = sync_synthesize(&model, array![0.3 + fine, 0.5].view()).unwrap();
        let change = (&wf - &w0).mapv(f64::abs).sum();
        assert!(change <= 10.0 * k_est.max(1e-9) * fine, "change {change}, K {k_est}");
    }

    #[test]
    fn sync_method_is_deterministic_and_consistent() {
        let bundle = separable_bundle();
        let m1 = train_sync(&bundle, 0.8, 0.1).unwrap();
        let m2 = train_sync(&bundle, 0.8, 0.1).unwrap();
        assert_eq!(m1.classifiers(), m2.classifiers());
        let view = bundle.restrict_candidates(&[0, 1, 2]).unwrap();
        let x = bundle.features().row(3);
        let pred = m1.predict(x, &view);
        let best = [0usize, 1, 2]
            .into_iter()
            .max_by(|&a, &b| {
                m1.score(x, a, &view)
                    .partial_cmp(&m1.score(x, b, &view))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(pred, best);
    }
}
