//! Deterministic logistic-regression fits shared by the attribute bank and
//! the seen-class classifier: full-batch gradient descent, zero init, fixed
//! iteration count, step size from a power-iteration Lipschitz bound.

use ndarray::{Array1, Array2, ArrayView2};

use crate::linalg;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BinaryFit {
    pub w: Array1<f64>,
    pub b: f64,
}

impl BinaryFit {
    #[cfg(test)]
    pub fn prob(&self, x: ndarray::ArrayView1<'_, f64>) -> f64 {
        sigmoid(self.w.dot(&x) + self.b)
    }
}

/// Binary logistic regression with quadratic penalty on the weights only;
/// the intercept stays unregularized so at reg → ∞ the output tends to
/// sigmoid(bias), the empirical base rate. `targets` are ±1.
pub(crate) fn fit_binary_logistic(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    reg: f64,
    iters: usize,
) -> BinaryFit {
    let n = x.nrows();
    let d = x.ncols();
    debug_assert_eq!(targets.len(), n);
    let gram = x.t().dot(&x);
    // Hessian ≤ 0.25·λmax([X 1]ᵀ[X 1]) + reg; bound the augmented Gram by
    // λmax(XᵀX) + n (Weyl on the rank-one bias block).
    let lip = 0.25 * (linalg::spectral_bound(gram.view(), 60) + n as f64) + reg;
    let step = 1.0 / lip.max(1e-12);
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    for _ in 0..iters {
        let mut gw = &w * reg;
        let mut gb = 0.0;
        let f = x.dot(&w);
        for i in 0..n {
            let margin = targets[i] * (f[i] + b);
            let coef = -targets[i] * sigmoid(-margin);
            gw.scaled_add(coef, &x.row(i));
            gb += coef;
        }
        w.scaled_add(-step, &gw);
        b -= step * gb;
    }
    // The shared step shrinks like 1/reg, so at large reg the unregularized
    // intercept barely moves; finish it with an exact 1-D solve given w.
    b = solve_bias(&x.dot(&w), targets, b);
    BinaryFit { w, b }
}

/// Root of the bias derivative Σ −tᵢ·σ(−tᵢ(zᵢ+b)) by bisection. The
/// derivative is nondecreasing in b, negative at −BOUND and positive at
/// +BOUND whenever both target signs appear (callers guarantee that).
fn solve_bias(scores: &Array1<f64>, targets: &[f64], init: f64) -> f64 {
    const BOUND: f64 = 30.0;
    let grad = |b: f64| -> f64 {
        scores
            .iter()
            .zip(targets)
            .map(|(&z, &t)| -t * sigmoid(-t * (z + b)))
            .sum()
    };
    let (mut lo, mut hi) = (-BOUND, BOUND);
    if grad(lo) >= 0.0 || grad(hi) <= 0.0 {
        return init;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if grad(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Multinomial logistic regression without intercepts (so at reg → ∞ the
/// softmax output tends to exactly uniform). `class_idx[i] ∈ 0..k` indexes
/// the rows of the returned k×d weight matrix.
pub(crate) fn fit_multinomial_logistic(
    x: ArrayView2<'_, f64>,
    class_idx: &[usize],
    k: usize,
    reg: f64,
    iters: usize,
) -> Array2<f64> {
    let n = x.nrows();
    let d = x.ncols();
    debug_assert_eq!(class_idx.len(), n);
    let gram = x.t().dot(&x);
    let lip = 0.5 * linalg::spectral_bound(gram.view(), 60) + reg;
    let step = 1.0 / lip.max(1e-12);
    let mut w = Array2::<f64>::zeros((k, d));
    let mut probs = Array1::<f64>::zeros(k);
    for _ in 0..iters {
        let mut grad = &w * reg;
        let scores = x.dot(&w.t());
        for i in 0..n {
            softmax_into(scores.row(i), &mut probs);
            probs[class_idx[i]] -= 1.0;
            for c in 0..k {
                grad.row_mut(c).scaled_add(probs[c], &x.row(i));
            }
        }
        w.scaled_add(-step, &grad);
    }
    w
}

/// Numerically stable softmax (subtract max before exponentiating).
pub(crate) fn softmax_into(scores: ndarray::ArrayView1<'_, f64>, out: &mut Array1<f64>) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores.iter()) {
        let e = (s - max).exp();
        *o = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn binary_fit_separates_separable_data() {
        let x = array![[2.0, 0.1], [1.5, -0.2], [-1.8, 0.3], [-2.2, 0.0]];
        let y = [1.0, 1.0, -1.0, -1.0];
        let fit = fit_binary_logistic(x.view(), &y, 0.01, 800);
        for (i, &yi) in y.iter().enumerate() {
            let p = fit.prob(x.row(i));
            if yi > 0.0 {
                assert!(p > 0.9, "positive row {i} got {p}");
            } else {
                assert!(p < 0.1, "negative row {i} got {p}");
            }
        }
    }

    #[test]
    fn binary_fit_huge_reg_collapses_to_base_rate() {
        // 3 positives, 1 negative: base rate 0.75.
        let x = array![[1.0, 0.5], [0.2, -1.0], [-0.7, 0.3], [0.4, 0.9]];
        let y = [1.0, 1.0, 1.0, -1.0];
        let fit = fit_binary_logistic(x.view(), &y, 1e6, 4000);
        let wnorm = fit.w.dot(&fit.w).sqrt();
        assert!(wnorm < 1e-4, "weights should vanish, got ‖w‖={wnorm}");
        assert_abs_diff_eq!(sigmoid(fit.b), 0.75, epsilon = 1e-2);
    }

    #[test]
    fn multinomial_huge_reg_gives_uniform() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.3, -0.8]];
        let idx = [0usize, 1, 2, 0];
        let w = fit_multinomial_logistic(x.view(), &idx, 3, 1e6, 2000);
        let mut probs = Array1::zeros(3);
        softmax_into(x.dot(&w.t()).row(0), &mut probs);
        for &p in probs.iter() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn multinomial_fits_separable_three_class_problem() {
        let x = array![
            [3.0, 0.0],
            [2.5, 0.4],
            [0.0, 3.0],
            [-0.3, 2.6],
            [-3.0, -3.0],
            [-2.5, -2.8]
        ];
        let idx = [0usize, 0, 1, 1, 2, 2];
        let w = fit_multinomial_logistic(x.view(), &idx, 3, 0.01, 1500);
        let mut probs = Array1::zeros(3);
        for (i, &truth) in idx.iter().enumerate() {
            softmax_into(x.dot(&w.t()).row(i), &mut probs);
            let argmax = (0..3).max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap()).unwrap();
            assert_eq!(argmax, truth, "row {i} misclassified: {probs:?}");
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_stable() {
        let mut out = Array1::zeros(3);
        softmax_into(array![1000.0, 1001.0, 999.0].view(), &mut out);
        assert_abs_diff_eq!(out.sum(), 1.0, epsilon = 1e-12);
        assert!(out.iter().all(|&p| p.is_finite() && p >= 0.0));
    }
}
