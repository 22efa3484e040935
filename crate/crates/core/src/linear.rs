//! Bilinear compatibility F(x,y) = θ(x)ᵀ W φ(y) and the four linear methods:
//! DEVISE, ALE, SJE (per-sample subgradient SGD on ranking losses, zero-init,
//! no regularizer) and ESZSL (regularized square loss in closed form).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::datamodel::{CandidateSet, ClassId, DatasetBundle};
use crate::error::{Error, Result};
use crate::linalg;
use crate::method::{argmax_by_score, TrainedMethod};
use crate::sgd::{epoch_shuffle, MarginCost, SgdConfig};

/// The d×a bilinear map W.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearModel {
    w: Array2<f64>,
}

impl BilinearModel {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::invalid("bilinear model", "empty weight matrix"));
        }
        if !linalg::all_finite(w.view()) {
            return Err(Error::invalid("bilinear model", "non-finite weight"));
        }
        Ok(Self { w })
    }

    pub fn zeros(d: usize, a: usize) -> Self {
        Self {
            w: Array2::zeros((d, a)),
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn feature_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// θ(x)ᵀ W φ(y).
pub fn compatibility(
    model: &BilinearModel,
    x_embed: ArrayView1<'_, f64>,
    y_embed: ArrayView1<'_, f64>,
) -> Result<f64> {
    if x_embed.len() != model.feature_dim() {
        return Err(Error::Dimension {
            context: "compatibility image embedding".into(),
            expected: model.feature_dim(),
            got: x_embed.len(),
        });
    }
    if y_embed.len() != model.embed_dim() {
        return Err(Error::Dimension {
            context: "compatibility class embedding".into(),
            expected: model.embed_dim(),
            got: y_embed.len(),
        });
    }
    Ok(x_embed.dot(&model.w).dot(&y_embed))
}

/// Which ranking loss drives the SGD trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingLoss {
    Devise,
    Ale,
    Sje,
}

impl RankingLoss {
    pub fn name(self) -> &'static str {
        match self {
            RankingLoss::Devise => "devise",
            RankingLoss::Ale => "ale",
            RankingLoss::Sje => "sje",
        }
    }
}

/// l_k = Σ_{i=1..k} 1/i, with l_0 = 0. Weights violations by how deep the
/// true class was pushed down the ranking.
pub fn ale_rank_weight(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

fn class_scores(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    classes: &CandidateSet<'_>,
) -> (Array1<f64>, Vec<f64>) {
    let v = x.dot(&model.w);
    let scores: Vec<f64> = classes.ids().iter().map(|&c| v.dot(&classes.embedding(c))).collect();
    (v, scores)
}

fn truth_position(classes: &CandidateSet<'_>, label: ClassId) -> usize {
    classes
        .ids()
        .binary_search(&label)
        .unwrap_or_else(|_| panic!("label {label} not among training classes"))
}

/// The unweighted pairwise ranking loss
/// Σ_{y≠y_n} [Δ(y_n,y) + F(x,y) − F(x,y_n)]₊.
pub fn devise_loss(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> f64 {
    let (_, scores) = class_scores(model, x, classes);
    let s_true = scores[truth_position(classes, label)];
    let mut loss = 0.0;
    for (pos, &y) in classes.ids().iter().enumerate() {
        if y == label {
            continue;
        }
        let h = margin.delta(label, y) + scores[pos] - s_true;
        if h > 0.0 {
            loss += h;
        }
    }
    loss
}

/// Subgradient of `devise_loss` in W at a non-kink point.
pub fn devise_grad(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> Array2<f64> {
    let (_, scores) = class_scores(model, x, classes);
    let pos_true = truth_position(classes, label);
    let s_true = scores[pos_true];
    let phi_true = classes.embedding(label);
    let mut e = Array1::<f64>::zeros(model.embed_dim());
    for (pos, &y) in classes.ids().iter().enumerate() {
        if y == label {
            continue;
        }
        if margin.delta(label, y) + scores[pos] - s_true > 0.0 {
            e += &classes.embedding(y);
            e -= &phi_true;
        }
    }
    linalg::outer(x, e.view())
}

/// Rank of the true class: the number of wrong classes whose
/// margin-augmented score reaches the true score.
fn ale_rank(scores: &[f64], ids: &[ClassId], label: ClassId, s_true: f64, margin: MarginCost) -> usize {
    ids.iter()
        .zip(scores)
        .filter(|&(&y, &s)| y != label && margin.delta(label, y) + s >= s_true)
        .count()
}

/// (l_r / r) · Σ_y [Δ + F(x,y) − F(x,y_n)]₊, zero when r = 0.
pub fn ale_loss(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> f64 {
    let (_, scores) = class_scores(model, x, classes);
    let s_true = scores[truth_position(classes, label)];
    let r = ale_rank(&scores, classes.ids(), label, s_true, margin);
    if r == 0 {
        return 0.0;
    }
    let weight = ale_rank_weight(r) / r as f64;
    let mut hinge_sum = 0.0;
    for (pos, &y) in classes.ids().iter().enumerate() {
        if y == label {
            continue;
        }
        let h = margin.delta(label, y) + scores[pos] - s_true;
        if h > 0.0 {
            hinge_sum += h;
        }
    }
    weight * hinge_sum
}

/// Subgradient of `ale_loss` at a non-kink point (rank locally constant).
pub fn ale_grad(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> Array2<f64> {
    let (_, scores) = class_scores(model, x, classes);
    let s_true = scores[truth_position(classes, label)];
    let r = ale_rank(&scores, classes.ids(), label, s_true, margin);
    if r == 0 {
        return Array2::zeros((model.feature_dim(), model.embed_dim()));
    }
    let weight = ale_rank_weight(r) / r as f64;
    let phi_true = classes.embedding(label);
    let mut e = Array1::<f64>::zeros(model.embed_dim());
    for (pos, &y) in classes.ids().iter().enumerate() {
        if y == label {
            continue;
        }
        if margin.delta(label, y) + scores[pos] - s_true > 0.0 {
            e += &classes.embedding(y);
            e -= &phi_true;
        }
    }
    linalg::outer(x, e.view()) * weight
}

/// [max_y (Δ(y_n,y) + F(x,y)) − F(x,y_n)]₊ where the max includes y_n with
/// Δ = 0, so the loss is never negative.
pub fn sje_loss(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> f64 {
    let (_, scores) = class_scores(model, x, classes);
    let s_true = scores[truth_position(classes, label)];
    let mut best = f64::NEG_INFINITY;
    for (pos, &y) in classes.ids().iter().enumerate() {
        let v = margin.delta(label, y) + scores[pos];
        if v > best {
            best = v;
        }
    }
    (best - s_true).max(0.0)
}

/// Subgradient of `sje_loss` at a non-kink point (unique max).
pub fn sje_grad(
    model: &BilinearModel,
    x: ArrayView1<'_, f64>,
    label: ClassId,
    classes: &CandidateSet<'_>,
    margin: MarginCost,
) -> Array2<f64> {
    let (_, scores) = class_scores(model, x, classes);
    let s_true = scores[truth_position(classes, label)];
    let mut best = f64::NEG_INFINITY;
    let mut best_id = classes.ids()[0];
    for (pos, &y) in classes.ids().iter().enumerate() {
        let v = margin.delta(label, y) + scores[pos];
        if v > best {
            best = v;
            best_id = y;
        }
    }
    if best_id == label || best - s_true <= 0.0 {
        return Array2::zeros((model.feature_dim(), model.embed_dim()));
    }
    let mut e = classes.embedding(best_id).to_owned();
    e -= &classes.embedding(label);
    linalg::outer(x, e.view())
}

pub(crate) fn apply_rank_update(
    w: &mut Array2<f64>,
    learning_rate: f64,
    theta: ArrayView1<'_, f64>,
    e: &Array1<f64>,
) {
    let g = linalg::outer(theta, e.view());
    w.scaled_add(-learning_rate, &g);
}

/// Per-sample subgradient SGD with zero initialization over shuffled
/// training images. No regularizer; fixed learning rate; deterministic given
/// the config seed.
pub fn train_sgd(
    loss: RankingLoss,
    bundle: &DatasetBundle,
    cfg: &SgdConfig,
) -> Result<BilinearModel> {
    cfg.validate()?;
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("training set", "no training rows in bundle"));
    }
    let classes = bundle.restrict_candidates(bundle.split().train_classes())?;
    let d = bundle.features().dim();
    let a = bundle.class_embeddings().dim();
    let mut w = Array2::<f64>::zeros((d, a));
    let mut e = Array1::<f64>::zeros(a);
    for epoch in 0..cfg.epochs {
        for &slot in &epoch_shuffle(rows.len(), cfg.seed, epoch) {
            let i = rows[slot];
            let theta = bundle.features().row(i);
            let label = bundle.labels().get(i);
            let v = theta.dot(&w);
            let scores: Vec<f64> =
                classes.ids().iter().map(|&c| v.dot(&classes.embedding(c))).collect();
            let pos_true = truth_position(&classes, label);
            let s_true = scores[pos_true];
            let phi_true = classes.embedding(label);
            match loss {
                RankingLoss::Devise => {
                    e.fill(0.0);
                    let mut any = false;
                    for (pos, &y) in classes.ids().iter().enumerate() {
                        if y == label {
                            continue;
                        }
                        if cfg.margin_cost.delta(label, y) + scores[pos] - s_true > 0.0 {
                            e += &classes.embedding(y);
                            e -= &phi_true;
                            any = true;
                        }
                    }
                    if any {
                        apply_rank_update(&mut w, cfg.learning_rate, theta, &e);
                    }
                }
                RankingLoss::Ale => {
                    let r = ale_rank(&scores, classes.ids(), label, s_true, cfg.margin_cost);
                    if r == 0 {
                        continue;
                    }
                    e.fill(0.0);
                    let mut any = false;
                    for (pos, &y) in classes.ids().iter().enumerate() {
                        if y == label {
                            continue;
                        }
                        if cfg.margin_cost.delta(label, y) + scores[pos] - s_true > 0.0 {
                            e += &classes.embedding(y);
                            e -= &phi_true;
                            any = true;
                        }
                    }
                    if any {
                        let step = cfg.learning_rate * ale_rank_weight(r) / r as f64;
                        apply_rank_update(&mut w, step, theta, &e);
                    }
                }
                RankingLoss::Sje => {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_id = classes.ids()[0];
                    for (pos, &y) in classes.ids().iter().enumerate() {
                        let val = cfg.margin_cost.delta(label, y) + scores[pos];
                        if val > best {
                            best = val;
                            best_id = y;
                        }
                    }
                    if best_id != label && best - s_true > 0.0 {
                        e.fill(0.0);
                        e += &classes.embedding(best_id);
                        e -= &phi_true;
                        apply_rank_update(&mut w, cfg.learning_rate, theta, &e);
                    }
                }
            }
        }
        if !linalg::all_finite(w.view()) {
            return Err(Error::Diverged {
                method: loss.name().to_string(),
                epoch,
            });
        }
    }
    BilinearModel::new(w)
}

/// ESZSL regularization strengths. β is tied to γλ so the regularized square
/// loss factorizes into the closed form; the constructor enforces the tie.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EszslConfig {
    gamma: f64,
    lambda: f64,
    beta: f64,
}

impl EszslConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if gamma < 0.0 || !gamma.is_finite() || lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::invalid(
                "eszsl config",
                format!("gamma and lambda must be nonnegative and finite, got γ={gamma}, λ={lambda}"),
            ));
        }
        Ok(Self {
            gamma,
            lambda,
            beta: gamma * lambda,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// The regularized square-loss objective the closed form minimizes:
/// ‖XWΦᵀ − Y‖² + γ‖WΦᵀ‖² + λ‖XW‖² + β‖W‖² with β = γλ.
pub fn eszsl_objective(
    w: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    y_onehot: ArrayView2<'_, f64>,
    phi: ArrayView2<'_, f64>,
    cfg: &EszslConfig,
) -> f64 {
    let xw = x.dot(&w);
    let fit = &xw.dot(&phi.t()) - &y_onehot;
    let sq = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
    let wphit = w.dot(&phi.t());
    sq(&fit) + cfg.gamma * sq(&wphit) + cfg.lambda * sq(&xw) + cfg.beta * w.iter().map(|v| v * v).sum::<f64>()
}

/// Closed-form minimizer W = (XᵀX + γI)⁻¹ XᵀYΦ (ΦᵀΦ + λI)⁻¹ over raw
/// matrices: X is N×d, Y is N×C one-hot over training classes, Φ is C×a.
pub fn eszsl_solve(
    x: ArrayView2<'_, f64>,
    y_onehot: ArrayView2<'_, f64>,
    phi: ArrayView2<'_, f64>,
    cfg: &EszslConfig,
) -> Result<BilinearModel> {
    let d = x.ncols();
    let a = phi.ncols();
    let mut feat_gram = x.t().dot(&x);
    for i in 0..d {
        feat_gram[(i, i)] += cfg.gamma;
    }
    let mut embed_gram = phi.t().dot(&phi);
    for j in 0..a {
        embed_gram[(j, j)] += cfg.lambda;
    }
    let cross = x.t().dot(&y_onehot).dot(&phi);
    let z = linalg::solve_spd(feat_gram.view(), cross.view(), "eszsl feature gram")?;
    let wt = linalg::solve_spd(embed_gram.view(), z.t(), "eszsl embedding gram")?;
    BilinearModel::new(wt.reversed_axes().as_standard_layout().to_owned())
}

/// Design matrices for ESZSL from a bundle: training-row features, 0/1
/// one-hot targets over train classes, and the train-class embedding block.
pub fn eszsl_design(bundle: &DatasetBundle) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let rows = bundle.training_rows();
    if rows.is_empty() {
        return Err(Error::invalid("training set", "no training rows in bundle"));
    }
    let train = bundle.split().train_classes();
    let d = bundle.features().dim();
    let a = bundle.class_embeddings().dim();
    let mut x = Array2::<f64>::zeros((rows.len(), d));
    let mut y = Array2::<f64>::zeros((rows.len(), train.len()));
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&bundle.features().row(i));
        let label = bundle.labels().get(i);
        let col = train.binary_search(&label).expect("training row label in train set");
        y[(r, col)] = 1.0;
    }
    let mut phi = Array2::<f64>::zeros((train.len(), a));
    for (r, &c) in train.iter().enumerate() {
        phi.row_mut(r).assign(&bundle.class_embeddings().as_array().row(c));
    }
    Ok((x, y, phi))
}

/// Exact minimizer of the regularized square loss on the bundle's training
/// rows (see `eszsl_objective`).
pub fn train_eszsl(bundle: &DatasetBundle, cfg: &EszslConfig) -> Result<BilinearModel> {
    let (x, y, phi) = eszsl_design(bundle)?;
    eszsl_solve(x.view(), y.view(), phi.view(), cfg)
}

/// TrainedMethod wrapper around a bilinear map.
#[derive(Debug, Clone)]
pub struct BilinearMethod {
    model: BilinearModel,
}

impl BilinearMethod {
    pub fn new(model: BilinearModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &BilinearModel {
        &self.model
    }
}

impl TrainedMethod for BilinearMethod {
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, candidates: &CandidateSet<'_>) -> f64 {
        x.dot(&self.model.w).dot(&candidates.embedding(class))
    }

    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        let v = x.dot(&self.model.w);
        argmax_by_score(candidates, |class| v.dot(&candidates.embedding(class)))
    }
}
