//! Nonlinear compatibility methods: LATEM (piecewise-linear, K latent
//! bilinear maps with max selection) and CMT (two-layer tanh mapping into the
//! class-embedding space) plus CMT*, the novelty-detection routing variant.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{CandidateSet, ClassId, DatasetBundle};
use crate::error::{Error, Result};
use crate::linalg;
use crate::linear::apply_rank_update;
use crate::method::{argmax_by_score, TrainedMethod};
use crate::sgd::{epoch_shuffle, MarginCost, SgdConfig};

/// K bilinear maps of equal shape; compatibility takes the max over them.
#[derive(Debug, Clone, PartialEq)]
pub struct LatemModel {
    mats: Vec<Array2<f64>>,
}

impl LatemModel {
    pub fn new(mats: Vec<Array2<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::invalid("latem model", "K must be ≥ 1"));
        }
        let shape = mats[0].raw_dim();
        for m in &mats {
            if m.raw_dim() != shape {
                return Err(Error::invalid("latem model", "latent matrices differ in shape"));
            }
            if !linalg::all_finite(m.view()) {
                return Err(Error::invalid("latem model", "non-finite weight"));
            }
        }
        Ok(Self { mats })
    }

    pub fn k(&self) -> usize {
        self.mats.len()
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.mats
    }

    pub fn feature_dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.mats[0].ncols()
    }
}

/// max_i θ(x)ᵀ W_i φ(y): the piecewise-linear compatibility.
pub fn latem_compatibility(
    model: &LatemModel,
    x_embed: ArrayView1<'_, f64>,
    y_embed: ArrayView1<'_, f64>,
) -> Result<f64> {
    if x_embed.len() != model.feature_dim() {
        return Err(Error::Dimension {
            context: "latem image embedding".into(),
            expected: model.feature_dim(),
            got: x_embed.len(),
        });
    }
    if y_embed.len() != model.embed_dim() {
        return Err(Error::Dimension {
            context: "latem class embedding".into(),
            expected: model.embed_dim(),
            got: y_embed.len(),
        });
    }
    let (_, score) = latent_argmax_scores(
        &model.mats.iter().map(|w| x_embed.dot(w)).collect::<Vec<_>>(),
        y_embed,
    );
    Ok(score)
}

/// Index and value of the best latent map for a class; ties break toward the
/// smallest index so the K=1 reduction and step-0 behavior are exact.
fn latent_argmax_scores(vs: &[Array1<f64>], phi: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best_i = 0;
    let mut best = vs[0].dot(&phi);
    for (i, v) in vs.iter().enumerate().skip(1) {
        let s = v.dot(&phi);
        if s > best {
            best = s;
            best_i = i;
        }
    }
    (best_i, best)
}

/// Per-sample ranking loss over the latent maxes:
/// Σ_{y≠label} [Δ(label,y) + s(y) − s(label)]₊ with s(y) = max_i θᵀ Wᵢ φ(y).
pub fn latem_loss(
    model: &LatemModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> f64 {
    let vs: Vec<Array1<f64>> = model.mats.iter().map(|w| x.dot(w)).collect();
    let (_, s_true) = latent_argmax_scores(&vs, classes.embedding(label));
    let mut loss = 0.0;
    for &y in classes.ids() {
        if y == label {
            continue;
        }
        let (_, s_y) = latent_argmax_scores(&vs, classes.embedding(y));
        let h = margin.delta(label, y) + s_y - s_true;
        if h > 0.0 {
            loss += h;
        }
    }
    loss
}

/// Subgradient of `latem_loss` per latent matrix at a non-kink point (each
/// class's best latent index locally unique). Entry k pairs with
/// `model.matrices()[k]`; the trainer's step is exactly −lr times this.
pub fn latem_grad(
    model: &LatemModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> Vec<Array2<f64>> {
    let vs: Vec<Array1<f64>> = model.mats.iter().map(|w| x.dot(w)).collect();
    let phi_true = classes.embedding(label);
    let (i_true, s_true) = latent_argmax_scores(&vs, phi_true);
    let a = model.embed_dim();
    let mut e: Vec<Array1<f64>> = (0..model.k()).map(|_| Array1::zeros(a)).collect();
    for &y in classes.ids() {
        if y == label {
            continue;
        }
        let phi_y = classes.embedding(y);
        let (i_y, s_y) = latent_argmax_scores(&vs, phi_y);
        if margin.delta(label, y) + s_y - s_true > 0.0 {
            e[i_y] += &phi_y;
            e[i_true] -= &phi_true;
        }
    }
    e.iter().map(|ek| linalg::outer(x, ek.view())).collect()
}

/// SGD on the pairwise ranking loss where each violation updates only the
/// latent matrix attaining the max for the class involved. Zero-init; K=1 is
/// bit-identical to `train_sgd(devise)`.
pub fn train_latem(bundle: &DatasetBundle, cfg: &SgdConfig, k: usize) -> Result<LatemModel> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("latem", "K must be ≥ 1"));
    }
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("training set", "no training rows in bundle"));
    }
    let classes = bundle.restrict_candidates(bundle.split().train_classes())?;
    let d = bundle.features().dim();
    let a = bundle.class_embeddings().dim();
    let mut mats: Vec<Array2<f64>> = (0..k).map(|_| Array2::zeros((d, a))).collect();
    let mut e: Vec<Array1<f64>> = (0..k).map(|_| Array1::zeros(a)).collect();
    let mut touched = vec![false; k];
    for epoch in 0..cfg.epochs {
        for &slot in &epoch_shuffle(rows.len(), cfg.seed, epoch) {
            let i = rows[slot];
            let theta = bundle.features().row(i);
            let label = bundle.labels().get(i);
            let vs: Vec<Array1<f64>> = mats.iter().map(|w| theta.dot(w)).collect();
            let phi_true = classes.embedding(label);
            let (i_true, s_true) = latent_argmax_scores(&vs, phi_true);
            for buf in e.iter_mut() {
                buf.fill(0.0);
            }
            touched.fill(false);
            for &y in classes.ids() {
                if y == label {
                    continue;
                }
                let phi_y = classes.embedding(y);
                let (i_y, s_y) = latent_argmax_scores(&vs, phi_y);
                if cfg.margin_cost.delta(label, y) + s_y - s_true > 0.0 {
                    e[i_y] += &phi_y;
                    e[i_true] -= &phi_true;
                    touched[i_y] = true;
                    touched[i_true] = true;
                }
            }
            for idx in 0..k {
                if touched[idx] {
                    apply_rank_update(&mut mats[idx], cfg.learning_rate, theta, &e[idx]);
                }
            }
        }
        if mats.iter().any(|m| !linalg::all_finite(m.view())) {
            return Err(Error::Diverged {
                method: "latem".into(),
                epoch,
            });
        }
    }
    LatemModel::new(mats)
}

#[derive(Debug, Clone)]
pub struct LatemMethod {
    model: LatemModel,
}

impl LatemMethod {
    pub fn new(model: LatemModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &LatemModel {
        &self.model
    }
}

impl TrainedMethod for LatemMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, candidates: &CandidateSet<'_>) -> f64 {
        latem_compatibility(&self.model, x, candidates.embedding(class))
            .expect("candidate dimensions validated at construction")
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let vs: Vec<Array1<f64>> = self.model.mats.iter().map(|w| x.dot(w)).collect();
        argmax_by_score(candidates, |class| {
            latent_argmax_scores(&vs, candidates.embedding(class)).1
        })
    }
}

/// Two-layer semantic mapping x ↦ W1·tanh(W2·x) ∈ ℝ^a.
#[derive(Debug, Clone, PartialEq)]
pub struct CmtModel {
    w1: Array2<f64>,
    w2: Array2<f64>,
}

impl CmtModel {
    pub fn new(w1: Array2<f64>, w2: Array2<f64>) -> Result<Self> {
        if w1.ncols() != w2.nrows() {
            return Err(Error::Dimension {
                context: "cmt hidden layer".into(),
                expected: w1.ncols(),
                got: w2.nrows(),
            });
        }
        if !linalg::all_finite(w1.view()) || !linalg::all_finite(w2.view()) {
            return Err(Error::invalid("cmt model", "non-finite weight"));
        }
        Ok(Self { w1, w2 })
    }

    /// Seeded Gaussian initialization scaled by 1/√fan_in. Zero init is a
    /// stationary point of the loss, so training must start off it.
    pub fn init(d: usize, a: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        };
        let w1 = draw(a, h, 1.0 / (h as f64).sqrt());
        let w2 = draw(h, d, 1.0 / (d as f64).sqrt());
        Self { w1, w2 }
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w1.nrows()
    }
}

/// W1 · tanh(W2 · x).
pub fn cmt_map(model: &CmtModel, x_embed: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x_embed.len() != model.feature_dim() {
        return Err(Error::Dimension {
            context: "cmt image embedding".into(),
            expected: model.feature_dim(),
            got: x_embed.len(),
        });
    }
    Ok(cmt_map_fast(model, x_embed))
}

fn cmt_map_fast(model: &CmtModel, x: ArrayView1<'_, f64>) -> Array1<f64> {
    let t = model.w2.dot(&x).mapv(f64::tanh);
    model.w1.dot(&t)
}

/// Per-sample squared-distance loss ‖target − W1·tanh(W2·x)‖² and its exact
/// gradients in (W1, W2).
pub fn cmt_sample_grad(
    model: &CmtModel,
    x: ArrayView1<'_, f64>,
    target: ArrayView1<'_, f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let t = model.w2.dot(&x).mapv(f64::tanh);
    let v = model.w1.dot(&t);
    let e = &v - &target;
    let loss = e.dot(&e);
    let d_w1 = linalg::outer(e.view(), t.view()) * 2.0;
    let back = model.w1.t().dot(&e) * 2.0;
    let dz = &back * &t.mapv(|ti| 1.0 - ti * ti);
    let d_w2 = linalg::outer(dz.view(), x);
    (loss, d_w1, d_w2)
}

/// SGD on the squared mapping loss from a given starting model.
pub fn train_cmt_from(
    mut model: CmtModel,
    bundle: &DatasetBundle,
    cfg: &SgdConfig,
) -> Result<CmtModel> {
    cfg.validate()?;
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("training set", "no training rows in bundle"));
    }
    for epoch in 0..cfg.epochs {
        for &slot in &epoch_shuffle(rows.len(), cfg.seed, epoch) {
            let i = rows[slot];
            let x = bundle.features().row(i);
            let target = bundle
                .class_embeddings()
                .as_array()
                .row(bundle.labels().get(i));
            let (_, d_w1, d_w2) = cmt_sample_grad(&model, x, target);
            model.w1.scaled_add(-cfg.learning_rate, &d_w1);
            model.w2.scaled_add(-cfg.learning_rate, &d_w2);
        }
        if !linalg::all_finite(model.w1.view()) || !linalg::all_finite(model.w2.view()) {
            return Err(Error::Diverged {
                method: "cmt".into(),
                epoch,
            });
        }
    }
    Ok(model)
}

/// Train from the seeded Gaussian initialization with hidden width `h`.
pub fn train_cmt(bundle: &DatasetBundle, cfg: &SgdConfig, h: usize) -> Result<CmtModel> {
    if h == 0 {
        return Err(Error::invalid("cmt", "hidden width must be ≥ 1"));
    }
    let model = CmtModel::init(
        bundle.features().dim(),
        bundle.class_embeddings().dim(),
        h,
        cfg.seed,
    );
    train_cmt_from(model, bundle, cfg)
}

/// Per-seen-class distance thresholds for novelty routing.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyDetector {
    thresholds: BTreeMap<ClassId, f64>,
    strategy: NoveltyStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoveltyStrategy {
    Threshold,
}

impl NoveltyDetector {
    pub fn thresholds(&self) -> &BTreeMap<ClassId, f64> {
        &self.thresholds
    }

    pub fn threshold(&self, class: ClassId) -> Option<f64> {
        self.thresholds.get(&class).copied()
    }
}

/// Threshold per train class: the `quantile` empirical quantile (lower
/// convention: sorted index ⌈q·n⌉−1) of distances between the class's mapped
/// training images and its embedding.
pub fn fit_novelty(
    model: &CmtModel,
    bundle: &DatasetBundle,
    quantile: f64,
) -> Result<NoveltyDetector> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid(
            "novelty quantile",
            format!("must lie in (0,1), got {quantile}"),
        ));
    }
    let rows = bundle.training_rows();
    let mut by_class: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for &c in bundle.split().train_classes() {
        by_class.insert(c, Vec::new());
    }
    for &i in &rows {
        let label = bundle.labels().get(i);
        let mapped = cmt_map_fast(model, bundle.features().row(i));
        let diff = &mapped - &bundle.class_embeddings().as_array().row(label);
        by_class
            .get_mut(&label)
            .expect("training row label is a train class")
            .push(diff.dot(&diff).sqrt());
    }
    let mut thresholds = BTreeMap::new();
    for (c, mut dists) in by_class {
        if dists.is_empty() {
            return Err(Error::ClassWithoutImages {
                id: c,
                context: "novelty threshold fitting".into(),
            });
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = dists.len();
        let idx = ((quantile * n as f64).ceil() as usize).clamp(1, n) - 1;
        thresholds.insert(c, dists[idx]);
    }
    Ok(NoveltyDetector {
        thresholds,
        strategy: NoveltyStrategy::Threshold,
    })
}

fn nearest_seen(
    mapped: &Array1<f64>,
    seen: &CandidateSet<'_>,
) -> (ClassId, f64) {
    let mut best_id = seen.ids()[0];
    let mut best = f64::INFINITY;
    for (id, phi) in seen.iter() {
        let diff = mapped - &phi;
        let dist = diff.dot(&diff).sqrt();
        if dist < best {
            best = dist;
            best_id = id;
        }
    }
    (best_id, best)
}

fn nearest_by_distance(mapped: &Array1<f64>, candidates: &CandidateSet<'_>) -> ClassId {
    argmax_by_score(candidates, |class| {
        let diff = mapped - &candidates.embedding(class);
        -diff.dot(&diff)
    })
}

/// Novelty-routed prediction: if the nearest seen class is farther than its
/// own threshold the image is treated as novel and classified among unseen
/// classes only; otherwise among seen classes only.
pub fn cmt_star_predict(
    model: &CmtModel,
    detector: &NoveltyDetector,
    x_embed: ArrayView1<'_, f64>,
    seen: &CandidateSet<'_>,
    unseen: &CandidateSet<'_>,
) -> ClassId {
    let mapped = cmt_map_fast(model, x_embed);
    let (nearest, dist) = nearest_seen(&mapped, seen);
    let threshold = detector
        .threshold(nearest)
        .expect("detector fitted for every seen candidate");
    let novel = dist > threshold;
    let pick = if novel {
        nearest_by_distance(&mapped, unseen)
    } else {
        nearest_by_distance(&mapped, seen)
    };
    debug_assert!(
        if novel { unseen.contains(pick) } else { seen.contains(pick) },
        "routing and candidate restriction out of sync"
    );
    pick
}

/// Plain CMT as a TrainedMethod: nearest class embedding to the mapped image
/// (score = negated squared distance).
#[derive(Debug, Clone)]
pub struct CmtMethod {
    model: CmtModel,
}

impl CmtMethod {
    pub fn new(model: CmtModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &CmtModel {
        &self.model
    }
}

impl TrainedMethod for CmtMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, candidates: &CandidateSet<'_>) -> f64 {
        let mapped = cmt_map_fast(&self.model, x);
        let diff = &mapped - &candidates.embedding(class);
        -diff.dot(&diff)
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let mapped = cmt_map_fast(&self.model, x);
        nearest_by_distance(&mapped, candidates)
    }
}

/// CMT*: CMT plus novelty routing. When the candidate set contains no seen
/// class (pure ZSL) routing is moot and prediction equals plain CMT.
#[derive(Debug, Clone)]
pub struct CmtStarMethod {
    model: CmtModel,
    detector: NoveltyDetector,
    seen_ids: Vec<ClassId>,
}

impl CmtStarMethod {
    pub fn new(model: CmtModel, detector: NoveltyDetector, seen_ids: Vec<ClassId>) -> Result<Self> {
        let mut seen_ids = seen_ids;
        seen_ids.sort_unstable();
        seen_ids.dedup();
        for &id in &seen_ids {
            if detector.threshold(id).is_none() {
                return Err(Error::invalid(
                    "cmt* method",
                    format!("no novelty threshold fitted for seen class {id}"),
                ));
            }
        }
        Ok(Self {
            model,
            detector,
            seen_ids,
        })
    }
}

impl TrainedMethod for CmtStarMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, candidates: &CandidateSet<'_>) -> f64 {
        let mapped = cmt_map_fast(&self.model, x);
        let diff = &mapped - &candidates.embedding(class);
        -diff.dot(&diff)
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let seen_view = candidates.restrict(&self.seen_ids).ok();
        let unseen_ids: Vec<ClassId> = candidates
            .ids()
            .iter()
            .copied()
            .filter(|id| self.seen_ids.binary_search(id).is_err())
            .collect();
        match seen_view {
            None => {
                // No seen candidates: routing cannot apply.
                let mapped = cmt_map_fast(&self.model, x);
                nearest_by_distance(&mapped, candidates)
            }
            Some(seen) if unseen_ids.is_empty() => {
                let mapped = cmt_map_fast(&self.model, x);
                nearest_by_distance(&mapped, &seen)
            }
            Some(seen) => {
                let unseen = candidates
                    .restrict(&unseen_ids)
                    .expect("nonempty unseen candidate ids");
                cmt_star_predict(&self.model, &self.detector, x, &seen, &unseen)
            }
        }
    }
}
