//! Smooth losses, gradients, and Lipschitz-constant bounds.
//!
//! Three formulations: squared loss for regression, one-versus-all squared /
//! logistic losses over a +-1 indicator response, and the multinomial
//! logistic loss. All values and gradients are normalized by the sample
//! count and guarded for numerical stability at extreme margins.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Targets of a dataset: real responses or class labels `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Array1<f64>),
    Labels { y: Vec<usize>, n_classes: usize },
}

/// A design matrix with targets and optional per-sample group ids
/// (used for leave-one-group-out splitting).
#[derive(Debug, Clone)]
pub struct Dataset {
    design: Array2<f64>,
    targets: Targets,
    group_id: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(design: Array2<f64>, targets: Targets, group_id: Option<Vec<usize>>) -> Result<Self> {
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "design matrix" });
        }
        let n = design.nrows();
        match &targets {
            Targets::Real(y) => {
                if y.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "targets vs samples",
                        left: y.len(),
                        right: n,
                    });
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { context: "targets" });
                }
            }
            Targets::Labels { y, n_classes } => {
                if y.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "labels vs samples",
                        left: y.len(),
                        right: n,
                    });
                }
                if *n_classes < 2 {
                    return Err(Error::BadModelSpec("need at least 2 classes".into()));
                }
                if let Some(&bad) = y.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::LabelOutOfRange {
                        label: bad + 1,
                        n_classes: *n_classes,
                    });
                }
            }
        }
        if let Some(g) = &group_id {
            if g.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "group ids vs samples",
                    left: g.len(),
                    right: n,
                });
            }
        }
        Ok(Dataset { design, targets, group_id })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn group_id(&self) -> Option<&[usize]> {
        self.group_id.as_deref()
    }

    /// Targets as real values (labels cast to their numeric value).
    pub fn targets_as_real(&self) -> Array1<f64> {
        match &self.targets {
            Targets::Real(y) => y.clone(),
            Targets::Labels { y, .. } => Array1::from_iter(y.iter().map(|&l| l as f64)),
        }
    }

    pub fn labels(&self) -> Result<(&[usize], usize)> {
        match &self.targets {
            Targets::Labels { y, n_classes } => Ok((y, *n_classes)),
            Targets::Real(_) => Err(Error::BadModelSpec(
                "classification loss requires class labels".into(),
            )),
        }
    }

    /// Row subset, preserving target kind and group ids.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let design = self.design.select(Axis(0), rows);
        let targets = match &self.targets {
            Targets::Real(y) => Targets::Real(rows.iter().map(|&i| y[i]).collect()),
            Targets::Labels { y, n_classes } => Targets::Labels {
                y: rows.iter().map(|&i| y[i]).collect(),
                n_classes: *n_classes,
            },
        };
        let group_id = self
            .group_id
            .as_ref()
            .map(|g| rows.iter().map(|&i| g[i]).collect());
        Dataset { design, targets, group_id }
    }

    /// Same targets and groups over a different design (e.g. augmented).
    pub fn with_design(&self, design: Array2<f64>) -> Result<Dataset> {
        Dataset::new(design, self.targets.clone(), self.group_id.clone())
    }
}

/// The +-1 indicator response of a label vector: row `i` is +1 exactly in
/// column `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorResponse(pub Array2<f64>);

impl IndicatorResponse {
    pub fn from_labels(y: &[usize], n_classes: usize) -> Result<Self> {
        if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange { label: bad + 1, n_classes });
        }
        let mut m = Array2::from_elem((y.len(), n_classes), -1.0);
        for (i, &l) in y.iter().enumerate() {
            m[[i, l]] = 1.0;
        }
        Ok(IndicatorResponse(m))
    }
}

/// Squared loss `1/(2n) ||y - X w||^2` and its gradient `-1/n X^T (y - Xw)`.
pub fn squared_value_grad(
    w: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<(f64, Array1<f64>)> {
    if x.ncols() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "design columns vs weights",
            left: x.ncols(),
            right: w.len(),
        });
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "design rows vs targets",
            left: x.nrows(),
            right: y.len(),
        });
    }
    let n = x.nrows() as f64;
    let residual = &y - &x.dot(&w);
    let value = residual.mapv(|r| r * r).sum() / (2.0 * n);
    let grad = x.t().dot(&residual) * (-1.0 / n);
    Ok((value, grad))
}

/// `log(1 + exp(-m))`, stable for margins of any sign and size.
pub(crate) fn log1p_exp_neg(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Logistic sigmoid, evaluated without overflow.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One-versus-all logistic loss
/// `1/n sum_i sum_k log(1 + exp(-Ybar_ik (x_i . w^k + b_k)))`
/// with gradients for the weight matrix (`d x c`) and intercepts.
pub fn logistic_ova_value_grad(
    w: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    ybar: &IndicatorResponse,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let (n, d) = (x.nrows(), x.ncols());
    let c = w.ncols();
    if w.nrows() != d {
        return Err(Error::DimensionMismatch {
            context: "weight rows vs design columns",
            left: w.nrows(),
            right: d,
        });
    }
    if b.len() != c || ybar.0.nrows() != n || ybar.0.ncols() != c {
        return Err(Error::DimensionMismatch {
            context: "indicator response shape",
            left: ybar.0.nrows(),
            right: n,
        });
    }
    let nf = n as f64;
    let scores = x.dot(&w); // n x c
    let mut value = 0.0;
    // d loss / d score_ik = -ybar_ik * sigmoid(-margin_ik) / n
    let mut score_grad = Array2::zeros((n, c));
    for i in 0..n {
        for k in 0..c {
            let yk = ybar.0[[i, k]];
            let margin = yk * (scores[[i, k]] + b[k]);
            value += log1p_exp_neg(margin);
            score_grad[[i, k]] = -yk * sigmoid(-margin) / nf;
        }
    }
    value /= nf;
    let grad_w = x.t().dot(&score_grad);
    let grad_b = score_grad.sum_axis(Axis(0));
    Ok((value, grad_w, grad_b))
}

/// Multinomial logistic loss (negative normalized log-likelihood of the
/// softmax model) with gradients; softmax is computed with a max shift.
pub fn multinomial_value_grad(
    w: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let (n, d) = (x.nrows(), x.ncols());
    let c = n_classes;
    if w.nrows() != d || w.ncols() != c || b.len() != c {
        return Err(Error::DimensionMismatch {
            context: "multinomial parameter shape",
            left: w.nrows(),
            right: d,
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad + 1, n_classes: c });
    }
    let nf = n as f64;
    let scores = x.dot(&w); // n x c
    let mut value = 0.0;
    let mut score_grad = Array2::zeros((n, c));
    for i in 0..n {
        let row: Vec<f64> = (0..c).map(|k| scores[[i, k]] + b[k]).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&s| (s - max).exp()).sum();
        value += max + sum_exp.ln() - row[y[i]];
        for k in 0..c {
            let p = (row[k] - max).exp() / sum_exp;
            score_grad[[i, k]] = (p - if k == y[i] { 1.0 } else { 0.0 }) / nf;
        }
    }
    value /= nf;
    let grad_w = x.t().dot(&score_grad);
    let grad_b = score_grad.sum_axis(Axis(0));
    Ok((value, grad_w, grad_b))
}

/// Class-conditional softmax probabilities of the multinomial model.
pub fn multinomial_probabilities(
    w: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let scores = x.dot(&w);
    let (n, c) = (scores.nrows(), scores.ncols());
    let mut probs = Array2::zeros((n, c));
    for i in 0..n {
        let row: Vec<f64> = (0..c).map(|k| scores[[i, k]] + b[k]).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&s| (s - max).exp()).sum();
        for k in 0..c {
            probs[[i, k]] = (row[k] - max).exp() / sum_exp;
        }
    }
    probs
}

/// Loss family, for Lipschitz factors and harness metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    /// `1/(2n) ||y - Xw||^2` (regression).
    Squared,
    /// One-versus-all squared loss on the +-1 indicator response.
    SquaredOva,
    /// One-versus-all logistic loss.
    LogisticOva,
    /// Multinomial logistic loss.
    Multinomial,
}

impl LossKind {
    pub fn is_classification(self) -> bool {
        !matches!(self, LossKind::Squared)
    }
}

/// Upper bound on the Lipschitz constant of the loss gradient:
/// `sigma_max(X)^2 / n` for squared losses, `/ (4n)` for OVA logistic,
/// `/ (2n)` for multinomial. The spectral norm is estimated by power
/// iteration to 1e-6 relative tolerance and inflated by 1%.
pub fn lipschitz_bound(x: ArrayView2<'_, f64>, kind: LossKind, seed: u64) -> f64 {
    let sigma_sq = spectral_norm_sq(x, seed);
    let n = x.nrows() as f64;
    let factor = match kind {
        LossKind::Squared | LossKind::SquaredOva => 1.0,
        LossKind::LogisticOva => 0.25,
        LossKind::Multinomial => 0.5,
    };
    1.01 * factor * sigma_sq / n
}

/// Largest squared singular value of `x` by power iteration on `X^T X`.
fn spectral_norm_sq(x: ArrayView2<'_, f64>, seed: u64) -> f64 {
    let d = x.ncols();
    if d == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let mut rng = crate::rng::stream(seed, "power-iteration");
    let mut v = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0f64));
    let norm0 = v.mapv(|t| t * t).sum().sqrt();
    if norm0 == 0.0 {
        v.fill(1.0);
    } else {
        v /= norm0;
    }
    let mut sigma_sq = 0.0;
    for _ in 0..10_000 {
        let xv = x.dot(&v);
        let mut next = x.t().dot(&xv);
        let rayleigh = next.dot(&v); // = ||Xv||^2 for unit v
        let norm = next.mapv(|t| t * t).sum().sqrt();
        if norm == 0.0 {
            return 0.0; // zero matrix
        }
        next /= norm;
        v = next;
        if (rayleigh - sigma_sq).abs() <= 1e-6 * rayleigh.abs().max(1e-300) {
            return rayleigh;
        }
        sigma_sq = rayleigh;
    }
    sigma_sq
}

/// Mean-center the columns of `x` and entries of `y`; returns the centered
/// copies plus the column means and target mean for intercept recovery.
pub fn center_columns(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>, f64) {
    let col_means = x
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()));
    let y_mean = y.mean().unwrap_or(0.0);
    let mut xc = x.to_owned();
    for mut row in xc.rows_mut() {
        row -= &col_means;
    }
    let yc = y.mapv(|v| v - y_mean);
    (xc, yc, col_means, y_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn squared_loss_at_exact_fit_is_zero() {
        let x = arr2(&[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]);
        let w = arr1(&[0.5, -1.0]);
        let y = x.dot(&w);
        let (v, g) = squared_value_grad(w.view(), x.view(), y.view()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        assert!(g.iter().all(|&gi| gi.abs() < 1e-15));
    }

    #[test]
    fn squared_loss_scalar_case() {
        let x = arr2(&[[1.0]]);
        let (v, g) = squared_value_grad(arr1(&[2.0]).view(), x.view(), arr1(&[0.0]).view()).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn squared_loss_rejects_bad_shapes() {
        let x = arr2(&[[1.0, 2.0]]);
        let e = squared_value_grad(arr1(&[1.0]).view(), x.view(), arr1(&[0.0]).view());
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ova_logistic_at_zero_is_c_log_two() {
        let x = arr2(&[[0.3, -1.0], [2.0, 0.5], [0.0, 0.0]]);
        let ybar = IndicatorResponse::from_labels(&[0, 1, 2], 3).unwrap();
        let w = Array2::zeros((2, 3));
        let b = Array1::zeros(3);
        let (v, _, _) = logistic_ova_value_grad(w.view(), b.view(), x.view(), &ybar).unwrap();
        assert_abs_diff_eq!(v, 3.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn ova_logistic_vanishes_at_huge_correct_margins() {
        let x = arr2(&[[1.0], [-1.0]]);
        let ybar = IndicatorResponse::from_labels(&[0, 1], 2).unwrap();
        // Class 0 responds +1 to positive x, class 1 to negative x.
        let w = arr2(&[[1e4, -1e4]]);
        let b = Array1::zeros(2);
        let (v, gw, gb) = logistic_ova_value_grad(w.view(), b.view(), x.view(), &ybar).unwrap();
        assert!(v.is_finite() && v < 1e-8);
        assert!(gw.iter().all(|g| g.is_finite()));
        assert!(gb.iter().all(|g| g.is_finite()));
        // Wrong side of a huge margin stays finite too.
        let w = arr2(&[[-1e4, 1e4]]);
        let (v, _, _) = logistic_ova_value_grad(w.view(), b.view(), x.view(), &ybar).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn multinomial_at_zero_is_log_c_with_uniform_probabilities() {
        let x = arr2(&[[0.3, -1.0], [2.0, 0.5]]);
        let w = Array2::zeros((2, 3));
        let b = Array1::zeros(3);
        let (v, _, _) = multinomial_value_grad(w.view(), b.view(), x.view(), &[0, 2], 3).unwrap();
        assert_abs_diff_eq!(v, 3.0f64.ln(), epsilon = 1e-12);
        let probs = multinomial_probabilities(w.view(), b.view(), x.view());
        for p in probs.iter() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn multinomial_probabilities_sum_to_one() {
        let mut rng = crate::rng::stream(41, "multi-probs");
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let probs = multinomial_probabilities(w.view(), b.view(), x.view());
        for i in 0..6 {
            let s: f64 = (0..3).map(|k| probs[[i, k]]).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn multinomial_rejects_label_out_of_range() {
        let x = arr2(&[[1.0]]);
        let w = Array2::zeros((1, 2));
        let b = Array1::zeros(2);
        let e = multinomial_value_grad(w.view(), b.view(), x.view(), &[2], 2);
        assert!(matches!(e, Err(Error::LabelOutOfRange { .. })));
    }

    /// Central finite differences on all parameters, for any of the three
    /// losses, with step h = 1e-6. Used again by the acceptance suite.
    fn finite_diff_check(seed: u64, kind: LossKind) {
        let mut rng = crate::rng::stream(seed, "fd-check");
        let n = rng.random_range(3..=8);
        let d = rng.random_range(1..=5);
        let c = rng.random_range(2..=4);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let h = 1e-6;

        match kind {
            LossKind::Squared => {
                let w = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
                let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
                let (_, g) = squared_value_grad(w.view(), x.view(), y.view()).unwrap();
                let mut g_fd = Array1::zeros(d);
                for j in 0..d {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[j] += h;
                    wm[j] -= h;
                    let (vp, _) = squared_value_grad(wp.view(), x.view(), y.view()).unwrap();
                    let (vm, _) = squared_value_grad(wm.view(), x.view(), y.view()).unwrap();
                    g_fd[j] = (vp - vm) / (2.0 * h);
                }
                let err = (&g - &g_fd).mapv(|v| v * v).sum().sqrt();
                let scale = g_fd.mapv(|v| v * v).sum().sqrt().max(1e-8);
                assert!(err / scale <= 1e-5, "rel err {}", err / scale);
            }
            LossKind::LogisticOva | LossKind::Multinomial => {
                let ybar = IndicatorResponse::from_labels(&labels, c).unwrap();
                let w = Array2::from_shape_fn((d, c), |_| rng.random_range(-1.0..1.0));
                let b = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
                let eval = |w: &Array2<f64>, b: &Array1<f64>| -> f64 {
                    match kind {
                        LossKind::LogisticOva => {
                            logistic_ova_value_grad(w.view(), b.view(), x.view(), &ybar)
                                .unwrap()
                                .0
                        }
                        _ => multinomial_value_grad(w.view(), b.view(), x.view(), &labels, c)
                            .unwrap()
                            .0,
                    }
                };
                let (gw, gb) = match kind {
                    LossKind::LogisticOva => {
                        let (_, gw, gb) =
                            logistic_ova_value_grad(w.view(), b.view(), x.view(), &ybar).unwrap();
                        (gw, gb)
                    }
                    _ => {
                        let (_, gw, gb) =
                            multinomial_value_grad(w.view(), b.view(), x.view(), &labels, c)
                                .unwrap();
                        (gw, gb)
                    }
                };
                let mut err = 0.0;
                let mut scale = 0.0;
                for j in 0..d {
                    for k in 0..c {
                        let mut wp = w.clone();
                        let mut wm = w.clone();
                        wp[[j, k]] += h;
                        wm[[j, k]] -= h;
                        let fd = (eval(&wp, &b) - eval(&wm, &b)) / (2.0 * h);
                        err += (gw[[j, k]] - fd) * (gw[[j, k]] - fd);
                        scale += fd * fd;
                    }
                }
                for k in 0..c {
                    let mut bp = b.clone();
                    let mut bm = b.clone();
                    bp[k] += h;
                    bm[k] -= h;
                    let fd = (eval(&w, &bp) - eval(&w, &bm)) / (2.0 * h);
                    err += (gb[k] - fd) * (gb[k] - fd);
                    scale += fd * fd;
                }
                assert!(
                    err.sqrt() / scale.sqrt().max(1e-8) <= 1e-5,
                    "rel err {}",
                    err.sqrt() / scale.sqrt()
                );
            }
            LossKind::SquaredOva => unreachable!(),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for s in 0..5 {
            finite_diff_check(100 + s, LossKind::Squared);
            finite_diff_check(200 + s, LossKind::LogisticOva);
            finite_diff_check(300 + s, LossKind::Multinomial);
        }
    }

    #[test]
    fn lipschitz_of_identity_design() {
        let n = 4;
        let x = Array2::eye(n);
        let l = lipschitz_bound(x.view(), LossKind::Squared, 0);
        // sigma_max = 1, so L = 1/n within the 1% inflation.
        assert!(l >= 1.0 / n as f64 && l <= 1.02 / n as f64, "L = {l}");
    }

    #[test]
    fn lipschitz_scales_quadratically_with_the_signal() {
        let x = arr2(&[[1.0], [2.0], [-0.5]]);
        let x10 = &x * 10.0;
        let l1 = lipschitz_bound(x.view(), LossKind::Squared, 0);
        let l100 = lipschitz_bound(x10.view(), LossKind::Squared, 0);
        assert_abs_diff_eq!(l100 / l1, 100.0, epsilon = 1e-6);
    }

    /// Jacobi eigenvalue sweep on X^T X: an SVD oracle for small matrices.
    fn sigma_max_sq_jacobi(x: ArrayView2<'_, f64>) -> f64 {
        let d = x.ncols();
        let mut a = x.t().dot(&x);
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..d {
                for q in (p + 1)..d {
                    off += a[[p, q]] * a[[p, q]];
                    if a[[p, q]].abs() < 1e-14 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * a[[p, q]]).atan2(a[[p, p]] - a[[q, q]]);
                    let (c, s) = (theta.cos(), theta.sin());
                    for k in 0..d {
                        let (akp, akq) = (a[[k, p]], a[[k, q]]);
                        a[[k, p]] = c * akp + s * akq;
                        a[[k, q]] = -s * akp + c * akq;
                    }
                    for k in 0..d {
                        let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                        a[[p, k]] = c * apk + s * aqk;
                        a[[q, k]] = -s * apk + c * aqk;
                    }
                }
            }
            if off < 1e-26 {
                break;
            }
        }
        (0..d).map(|k| a[[k, k]]).fold(0.0f64, f64::max)
    }

    #[test]
    fn power_iteration_matches_jacobi_svd_oracle() {
        let mut rng = crate::rng::stream(42, "power-vs-jacobi");
        for _ in 0..20 {
            let n = rng.random_range(2..=8);
            let d = rng.random_range(1..=6);
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let power = spectral_norm_sq(x.view(), 7);
            let oracle = sigma_max_sq_jacobi(x.view());
            assert_abs_diff_eq!(power / oracle, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn descent_lemma_holds_for_all_losses() {
        let mut rng = crate::rng::stream(43, "descent-lemma");
        let n = 6;
        let d = 4;
        let c = 3;
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let ybar = IndicatorResponse::from_labels(&labels, c).unwrap();
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        // Design with the intercept column appended, matching how the
        // solver bounds the joint (W, b) gradient.
        let mut x1 = Array2::ones((n, d + 1));
        x1.slice_mut(ndarray::s![.., ..d]).assign(&x);

        for _ in 0..30 {
            // Squared, weights only.
            let l = lipschitz_bound(x.view(), LossKind::Squared, 1);
            let u = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let v = Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0));
            let (fv, gv) = squared_value_grad(v.view(), x.view(), y.view()).unwrap();
            let (fu, _) = squared_value_grad(u.view(), x.view(), y.view()).unwrap();
            let diff = &u - &v;
            let bound = fv + gv.dot(&diff) + 0.5 * l * diff.mapv(|t| t * t).sum();
            assert!(fu <= bound + 1e-10);

            // Logistic OVA and multinomial, joint (W, b).
            for kind in [LossKind::LogisticOva, LossKind::Multinomial] {
                let l = lipschitz_bound(x1.view(), kind, 1);
                let wu = Array2::from_shape_fn((d, c), |_| rng.random_range(-1.0..1.0));
                let bu = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
                let wv = Array2::from_shape_fn((d, c), |_| rng.random_range(-1.0..1.0));
                let bv = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
                let (fv, gw, gb) = match kind {
                    LossKind::LogisticOva => {
                        logistic_ova_value_grad(wv.view(), bv.view(), x.view(), &ybar).unwrap()
                    }
                    _ => multinomial_value_grad(wv.view(), bv.view(), x.view(), &labels, c)
                        .unwrap(),
                };
                let fu = match kind {
                    LossKind::LogisticOva => {
                        logistic_ova_value_grad(wu.view(), bu.view(), x.view(), &ybar)
                            .unwrap()
                            .0
                    }
                    _ => multinomial_value_grad(wu.view(), bu.view(), x.view(), &labels, c)
                        .unwrap()
                        .0,
                };
                let dw = &wu - &wv;
                let db = &bu - &bv;
                let inner = (&gw * &dw).sum() + gb.dot(&db);
                let dist_sq = dw.mapv(|t| t * t).sum() + db.mapv(|t| t * t).sum();
                assert!(fu <= fv + inner + 0.5 * l * dist_sq + 1e-10);
            }
        }
    }

    #[test]
    fn dataset_validation() {
        let x = arr2(&[[1.0], [2.0]]);
        assert!(Dataset::new(x.clone(), Targets::Real(arr1(&[0.0, f64::INFINITY])), None).is_err());
        assert!(Dataset::new(
            x.clone(),
            Targets::Labels { y: vec![0, 2], n_classes: 2 },
            None
        )
        .is_err());
        assert!(Dataset::new(
            x.clone(),
            Targets::Labels { y: vec![0, 1], n_classes: 1 },
            None
        )
        .is_err());
        let ds = Dataset::new(x, Targets::Labels { y: vec![0, 1], n_classes: 2 }, Some(vec![1, 1]))
            .unwrap();
        assert_eq!(ds.n(), 2);
        let sub = ds.subset(&[1]);
        assert_eq!(sub.n(), 1);
        assert_eq!(sub.labels().unwrap().0, &[1]);
    }

    #[test]
    fn indicator_response_structure() {
        let ybar = IndicatorResponse::from_labels(&[1, 0], 3).unwrap();
        assert_eq!(ybar.0, arr2(&[[-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]]));
    }
}
