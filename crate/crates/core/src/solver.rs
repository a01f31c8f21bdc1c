//! Accelerated forward-backward splitting and the model dispatcher.
//!
//! [`fista`] iterates `w <- prox_{lambda/L}(y - grad(y)/L)` on a momentum
//! sequence with the classical `t`-update; [`ista`] is the same loop without
//! momentum and is monotone. [`fit_model`] wires every loss x penalty
//! combination onto that engine: tree penalties fit in the augmented space,
//! multi-task penalties couple the class columns, squared losses are fit on
//! centered data with the intercept recovered afterward, and logistic losses
//! carry unregularized intercept coordinates updated by plain gradient steps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};
use crate::feature::augment;
use crate::loss::{
    center_columns, lipschitz_bound, multinomial_value_grad, logistic_ova_value_grad,
    Dataset, IndicatorResponse, LossKind,
};
use crate::penalty::{
    prox_elastic_net, prox_l1, prox_multitask, prox_tree, prox_weighted_l1, GroupStructure,
    NormFlavor,
};

/// Solver settings.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Maximum number of proximal-gradient iterations.
    pub max_iter: usize,
    /// Convergence: relative objective change below this for 5 consecutive
    /// iterations.
    pub rel_tol: f64,
    /// Use the momentum sequence (FISTA); plain forward-backward otherwise.
    pub accelerated: bool,
    /// Override the Lipschitz bound instead of estimating it.
    pub l_override: Option<f64>,
    /// Seed for the spectral-norm estimator.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 5000,
            rel_tol: 1e-7,
            accelerated: true,
            l_override: None,
            seed: 0,
        }
    }
}

const CONVERGED_STREAK: usize = 5;

/// Smooth part of the objective.
pub trait ObjectiveOracle {
    fn dim(&self) -> usize;
    fn value(&self, w: &ArrayView1<'_, f64>) -> f64;
    /// Write the gradient into `g` and return the value.
    fn value_grad(&self, w: &ArrayView1<'_, f64>, g: &mut Array1<f64>) -> f64;
}

/// Non-smooth part: proximal operator of `tau * P` plus the value of `P`.
/// `P` already includes the regularization strength.
pub trait PenaltyOracle {
    fn prox(&self, w: &mut Array1<f64>, tau: f64);
    fn value(&self, w: &ArrayView1<'_, f64>) -> f64;
}

/// Raw output of a solve: the flat parameter vector plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub params: Array1<f64>,
    /// Objective values `F(w_0), F(w_1), ...`; length is `iterations + 1`.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn forward_backward<O: ObjectiveOracle, P: PenaltyOracle>(
    loss: &O,
    penalty: &P,
    init: Array1<f64>,
    l: f64,
    cfg: &SolverConfig,
    accelerated: bool,
) -> Result<SolveResult> {
    assert!(l > 0.0, "Lipschitz bound must be positive");
    let step = 1.0 / l;
    let mut w = init;
    let mut y = w.clone();
    let mut t: f64 = 1.0;
    let mut grad = Array1::zeros(loss.dim());
    let mut objective = Vec::with_capacity(cfg.max_iter.min(1024) + 1);
    objective.push(loss.value(&w.view()) + penalty.value(&w.view()));
    let mut converged = false;
    let mut streak = 0;

    for k in 0..cfg.max_iter {
        loss.value_grad(&y.view(), &mut grad);
        let mut next = &y - &(&grad * step);
        penalty.prox(&mut next, step);

        if accelerated {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = &next + &((&next - &w) * beta);
            t = t_next;
        } else {
            y = next.clone();
        }
        w = next;

        let f = loss.value(&w.view()) + penalty.value(&w.view());
        if !f.is_finite() {
            return Err(Error::Diverged { iteration: k + 1 });
        }
        let prev = *objective.last().expect("non-empty trace");
        objective.push(f);
        let rel = (f - prev).abs() / prev.abs().max(1e-10);
        if rel < cfg.rel_tol {
            streak += 1;
            if streak >= CONVERGED_STREAK {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    let iterations = objective.len() - 1;
    Ok(SolveResult {
        params: w,
        objective,
        iterations,
        converged,
    })
}

/// Accelerated proximal-gradient descent with the FISTA momentum sequence.
pub fn fista<O: ObjectiveOracle, P: PenaltyOracle>(
    loss: &O,
    penalty: &P,
    init: Array1<f64>,
    l: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    forward_backward(loss, penalty, init, l, cfg, true)
}

/// One-step forward-backward splitting; the objective trace is monotone.
pub fn ista<O: ObjectiveOracle, P: PenaltyOracle>(
    loss: &O,
    penalty: &P,
    init: Array1<f64>,
    l: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    forward_backward(loss, penalty, init, l, cfg, false)
}

/// Multi-stage reweighted l1: stage 1 is a plain lasso fit, later stages
/// re-solve with per-coordinate weights `1 / (|w_j| + eps)` taken from the
/// previous stage. Objective traces of all stages are concatenated.
pub fn reweighted_l1<O: ObjectiveOracle>(
    loss: &O,
    lambda: f64,
    l: f64,
    cfg: &SolverConfig,
    stages: usize,
    eps: f64,
) -> Result<SolveResult> {
    assert!(stages >= 1);
    let dim = loss.dim();
    let mut eta = vec![1.0; dim];
    let mut w = Array1::zeros(dim);
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for stage in 0..stages {
        let penalty = FlatPenalty {
            op: PenaltyOp::WeightedL1 { eta: eta.clone() },
            lambda,
            coef_len: dim,
            cols: 1,
        };
        let run = if cfg.accelerated {
            fista(loss, &penalty, w, l, cfg)?
        } else {
            ista(loss, &penalty, w, l, cfg)?
        };
        w = run.params;
        iterations += run.iterations;
        converged = run.converged;
        if stage == 0 {
            objective.extend(run.objective);
        } else {
            // Stage boundaries share the iterate; skip the duplicate head.
            objective.extend(run.objective.into_iter().skip(1));
        }
        eta = w.iter().map(|&x| 1.0 / (x.abs() + eps)).collect();
    }
    Ok(SolveResult {
        params: w,
        objective,
        iterations,
        converged,
    })
}

/// Penalty families of the model comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum PenaltyKind {
    /// Squared l2 penalty `lambda ||w||^2`.
    Ridge,
    /// Plain l1; `augmented` fits it over the tree feature space.
    L1 { augmented: bool },
    /// `lambda ||w||_1 + alpha lambda ||w||^2`.
    ElasticNet { alpha: f64 },
    /// l1 with per-node weights `rho^depth(j)` over the augmented space.
    WeightedL1 { rho: f64 },
    /// Multi-stage relaxation of a concave penalty (voxel space).
    ReweightedL1 { stages: usize, eps: f64 },
    /// Hierarchical group norm over descendant groups, l2 flavor.
    TreeL2 { rho: f64 },
    /// Hierarchical group norm, max-norm flavor.
    TreeLInf { rho: f64 },
    /// Row-wise l2 coupling across classes.
    MultiTaskL2,
    /// Row-wise max-norm coupling across classes.
    MultiTaskLInf,
}

impl PenaltyKind {
    /// Whether fitting happens in the augmented (tree) feature space.
    pub fn needs_tree(&self) -> bool {
        matches!(
            self,
            PenaltyKind::L1 { augmented: true }
                | PenaltyKind::WeightedL1 { .. }
                | PenaltyKind::TreeL2 { .. }
                | PenaltyKind::TreeLInf { .. }
        )
    }

    pub fn descriptor(&self) -> String {
        match self {
            PenaltyKind::Ridge => "ridge".into(),
            PenaltyKind::L1 { augmented: false } => "l1".into(),
            PenaltyKind::L1 { augmented: true } => "l1-aug".into(),
            PenaltyKind::ElasticNet { alpha } => format!("enet(alpha={alpha})"),
            PenaltyKind::WeightedL1 { rho } => format!("l1-tree-weights(rho={rho})"),
            PenaltyKind::ReweightedL1 { stages, .. } => format!("rw-l1(stages={stages})"),
            PenaltyKind::TreeL2 { rho } => format!("tree-l2(rho={rho})"),
            PenaltyKind::TreeLInf { rho } => format!("tree-linf(rho={rho})"),
            PenaltyKind::MultiTaskL2 => "mt-l2".into(),
            PenaltyKind::MultiTaskLInf => "mt-linf".into(),
        }
    }
}

/// A loss, a penalty, and a regularization strength.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    pub lambda: f64,
}

impl ModelSpec {
    pub fn descriptor(&self) -> String {
        let loss = match self.loss {
            LossKind::Squared => "squared",
            LossKind::SquaredOva => "squared-ova",
            LossKind::LogisticOva => "logistic-ova",
            LossKind::Multinomial => "multinomial",
        };
        format!("{}+{}", loss, self.penalty.descriptor())
    }
}

/// A fitted model: weight matrix (`d x c`, `c = 1` for regression),
/// intercepts, and solve diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: Array2<f64>,
    pub intercept: Array1<f64>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
    pub penalty: String,
    pub loss: LossKind,
    /// True when `weights` lives in the augmented (tree) space.
    pub augmented: bool,
}

impl FitResult {
    /// Fraction of nonzero weight entries, in percent.
    pub fn nonzero_percent(&self) -> f64 {
        let total = self.weights.len();
        if total == 0 {
            return 0.0;
        }
        let nnz = self.weights.iter().filter(|&&x| x != 0.0).count();
        100.0 * nnz as f64 / total as f64
    }
}

// ---------------------------------------------------------------------------
// Concrete oracles over the flat parameter layout
// [w^1 (coef_len) | ... | w^c (coef_len) | b (c, if present)].
// ---------------------------------------------------------------------------

enum SmoothLoss {
    Squared {
        x: Array2<f64>,
        y: Array1<f64>,
    },
    SquaredOva {
        x: Array2<f64>,
        ybar: Array2<f64>,
    },
    LogisticOva {
        x: Array2<f64>,
        ybar: IndicatorResponse,
    },
    Multinomial {
        x: Array2<f64>,
        y: Vec<usize>,
        c: usize,
    },
}

impl SmoothLoss {
    fn coef_len(&self) -> usize {
        match self {
            SmoothLoss::Squared { x, .. }
            | SmoothLoss::SquaredOva { x, .. }
            | SmoothLoss::LogisticOva { x, .. }
            | SmoothLoss::Multinomial { x, .. } => x.ncols(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            SmoothLoss::Squared { .. } => 1,
            SmoothLoss::SquaredOva { ybar, .. } => ybar.ncols(),
            SmoothLoss::LogisticOva { ybar, .. } => ybar.0.ncols(),
            SmoothLoss::Multinomial { c, .. } => *c,
        }
    }

    fn has_intercept(&self) -> bool {
        matches!(
            self,
            SmoothLoss::LogisticOva { .. } | SmoothLoss::Multinomial { .. }
        )
    }

    fn weights_view<'a>(&self, w: &'a ArrayView1<'_, f64>) -> ArrayView2<'a, f64> {
        let (d, c) = (self.coef_len(), self.cols());
        ArrayView2::from_shape((c, d), &w.as_slice().expect("contiguous params")[..c * d])
            .expect("layout")
            .reversed_axes()
    }
}

impl ObjectiveOracle for SmoothLoss {
    fn dim(&self) -> usize {
        self.coef_len() * self.cols() + if self.has_intercept() { self.cols() } else { 0 }
    }

    fn value(&self, w: &ArrayView1<'_, f64>) -> f64 {
        let (d, c) = (self.coef_len(), self.cols());
        match self {
            SmoothLoss::Squared { x, y } => {
                let n = x.nrows() as f64;
                let residual = &y.view() - &x.dot(&w.slice(ndarray::s![..d]));
                residual.mapv(|r| r * r).sum() / (2.0 * n)
            }
            SmoothLoss::SquaredOva { x, ybar } => {
                let n = x.nrows() as f64;
                let residual = ybar - &x.dot(&self.weights_view(w));
                residual.mapv(|r| r * r).sum() / (2.0 * n)
            }
            SmoothLoss::LogisticOva { x, ybar } => {
                let n = x.nrows();
                let scores = x.dot(&self.weights_view(w));
                let b = w.slice(ndarray::s![c * d..]);
                let mut value = 0.0;
                for i in 0..n {
                    for k in 0..c {
                        let margin = ybar.0[[i, k]] * (scores[[i, k]] + b[k]);
                        value += crate::loss::log1p_exp_neg(margin);
                    }
                }
                value / n as f64
            }
            SmoothLoss::Multinomial { x, y, .. } => {
                let n = x.nrows();
                let scores = x.dot(&self.weights_view(w));
                let b = w.slice(ndarray::s![c * d..]);
                let mut value = 0.0;
                for i in 0..n {
                    let row: Vec<f64> = (0..c).map(|k| scores[[i, k]] + b[k]).collect();
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = row.iter().map(|&s| (s - max).exp()).sum();
                    value += max + sum_exp.ln() - row[y[i]];
                }
                value / n as f64
            }
        }
    }

    fn value_grad(&self, w: &ArrayView1<'_, f64>, g: &mut Array1<f64>) -> f64 {
        let (d, c) = (self.coef_len(), self.cols());
        match self {
            SmoothLoss::Squared { x, y } => {
                let n = x.nrows() as f64;
                let residual = &y.view() - &x.dot(&w.slice(ndarray::s![..d]));
                let value = residual.mapv(|r| r * r).sum() / (2.0 * n);
                let gw = x.t().dot(&residual) * (-1.0 / n);
                g.assign(&gw);
                value
            }
            SmoothLoss::SquaredOva { x, ybar } => {
                let n = x.nrows() as f64;
                let wm = self.weights_view(w);
                let residual = ybar - &x.dot(&wm);
                let value = residual.mapv(|r| r * r).sum() / (2.0 * n);
                let gw = x.t().dot(&residual) * (-1.0 / n);
                let gs = g.as_slice_mut().expect("contiguous grad");
                for k in 0..c {
                    for j in 0..d {
                        gs[k * d + j] = gw[[j, k]];
                    }
                }
                value
            }
            SmoothLoss::LogisticOva { x, ybar } => {
                let wm = self.weights_view(w);
                let b = w.slice(ndarray::s![c * d..]);
                let (value, gw, gb) =
                    logistic_ova_value_grad(wm, b, x.view(), ybar).expect("validated shapes");
                write_matrix_grad(g, &gw, &gb, d, c);
                value
            }
            SmoothLoss::Multinomial { x, y, c: nc } => {
                let wm = self.weights_view(w);
                let b = w.slice(ndarray::s![c * d..]);
                let (value, gw, gb) = multinomial_value_grad(wm, b, x.view(), y, *nc)
                    .expect("validated shapes");
                write_matrix_grad(g, &gw, &gb, d, c);
                value
            }
        }
    }
}

fn write_matrix_grad(g: &mut Array1<f64>, gw: &Array2<f64>, gb: &Array1<f64>, d: usize, c: usize) {
    let gs = g.as_slice_mut().expect("contiguous grad");
    for k in 0..c {
        for j in 0..d {
            gs[k * d + j] = gw[[j, k]];
        }
    }
    for k in 0..c {
        gs[c * d + k] = gb[k];
    }
}

enum PenaltyOp {
    Ridge,
    L1,
    ElasticNet { alpha: f64 },
    WeightedL1 { eta: Vec<f64> },
    Tree { gs: GroupStructure },
    MultiTask { flavor: NormFlavor },
}

/// Applies a penalty column-wise (or row-wise for multi-task) over the flat
/// layout, never touching intercept coordinates beyond `coef_len * cols`.
struct FlatPenalty {
    op: PenaltyOp,
    lambda: f64,
    coef_len: usize,
    cols: usize,
}

impl PenaltyOracle for FlatPenalty {
    fn prox(&self, w: &mut Array1<f64>, tau: f64) {
        let t = self.lambda * tau;
        if t == 0.0 {
            return;
        }
        let d = self.coef_len;
        let ws = w.as_slice_mut().expect("contiguous params");
        match &self.op {
            PenaltyOp::MultiTask { flavor } => {
                prox_multitask(&mut ws[..d * self.cols], d, self.cols, t, *flavor);
            }
            op => {
                for k in 0..self.cols {
                    let col = &mut ws[k * d..(k + 1) * d];
                    match op {
                        PenaltyOp::Ridge => {
                            let scale = 1.0 / (1.0 + 2.0 * t);
                            for x in col.iter_mut() {
                                *x *= scale;
                            }
                        }
                        PenaltyOp::L1 => prox_l1(col, t),
                        PenaltyOp::ElasticNet { alpha } => prox_elastic_net(col, t, alpha * t),
                        PenaltyOp::WeightedL1 { eta } => prox_weighted_l1(col, t, eta),
                        PenaltyOp::Tree { gs } => prox_tree(col, t, gs),
                        PenaltyOp::MultiTask { .. } => unreachable!(),
                    }
                }
            }
        }
    }

    fn value(&self, w: &ArrayView1<'_, f64>) -> f64 {
        let d = self.coef_len;
        let ws = w.as_slice().expect("contiguous params");
        let mut total = 0.0;
        match &self.op {
            PenaltyOp::MultiTask { flavor } => {
                for j in 0..d {
                    let row: Vec<f64> = (0..self.cols).map(|k| ws[k * d + j]).collect();
                    total += match flavor {
                        NormFlavor::L2 => row.iter().map(|x| x * x).sum::<f64>().sqrt(),
                        NormFlavor::LInf => row.iter().map(|x| x.abs()).fold(0.0, f64::max),
                    };
                }
            }
            op => {
                for k in 0..self.cols {
                    let col = &ws[k * d..(k + 1) * d];
                    total += match op {
                        PenaltyOp::Ridge => col.iter().map(|x| x * x).sum::<f64>(),
                        PenaltyOp::L1 => col.iter().map(|x| x.abs()).sum::<f64>(),
                        PenaltyOp::ElasticNet { alpha } => {
                            col.iter().map(|x| x.abs() + alpha * x * x).sum::<f64>()
                        }
                        PenaltyOp::WeightedL1 { eta } => col
                            .iter()
                            .zip(eta)
                            .map(|(x, e)| e * x.abs())
                            .sum::<f64>(),
                        PenaltyOp::Tree { gs } => gs.norm_value(col),
                        PenaltyOp::MultiTask { .. } => unreachable!(),
                    };
                }
            }
        }
        self.lambda * total
    }
}

/// Per-node weights `rho^depth(j)` over all tree nodes, in node order.
fn tree_depth_weights(tree: &ClusterTree, rho: f64) -> Vec<f64> {
    (0..tree.q())
        .map(|j| rho.powi(tree.node(j).expect("valid").depth as i32))
        .collect()
}

fn build_penalty_op(
    spec: &ModelSpec,
    tree: Option<&ClusterTree>,
) -> Result<Option<PenaltyOp>> {
    let op = match &spec.penalty {
        PenaltyKind::Ridge => PenaltyOp::Ridge,
        PenaltyKind::L1 { .. } => PenaltyOp::L1,
        PenaltyKind::ElasticNet { alpha } => {
            if *alpha < 0.0 {
                return Err(Error::BadModelSpec("elastic-net alpha must be >= 0".into()));
            }
            PenaltyOp::ElasticNet { alpha: *alpha }
        }
        PenaltyKind::WeightedL1 { rho } => PenaltyOp::WeightedL1 {
            eta: tree_depth_weights(tree.expect("checked"), *rho),
        },
        PenaltyKind::ReweightedL1 { .. } => return Ok(None),
        PenaltyKind::TreeL2 { rho } => PenaltyOp::Tree {
            gs: GroupStructure::tree_groups(tree.expect("checked"), *rho, NormFlavor::L2)?,
        },
        PenaltyKind::TreeLInf { rho } => PenaltyOp::Tree {
            gs: GroupStructure::tree_groups(tree.expect("checked"), *rho, NormFlavor::LInf)?,
        },
        PenaltyKind::MultiTaskL2 => PenaltyOp::MultiTask {
            flavor: NormFlavor::L2,
        },
        PenaltyKind::MultiTaskLInf => PenaltyOp::MultiTask {
            flavor: NormFlavor::LInf,
        },
    };
    Ok(Some(op))
}

/// Append a column of ones; used to bound the joint (W, b) gradient.
fn with_ones_column(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = Array2::ones((n, d + 1));
    out.slice_mut(ndarray::s![.., ..d]).assign(&x);
    out
}

/// Fit a model on a dataset.
///
/// Tree-space penalties receive the design augmented with parcel averages;
/// classification losses require label targets. `warm` seeds the solver with
/// a previous solution of matching shape (used along λ grids).
pub fn fit_model(
    ds: &Dataset,
    spec: &ModelSpec,
    tree: Option<&ClusterTree>,
    cfg: &SolverConfig,
    warm: Option<&FitResult>,
) -> Result<FitResult> {
    if spec.lambda < 0.0 || !spec.lambda.is_finite() {
        return Err(Error::BadModelSpec(format!(
            "lambda must be finite and >= 0, got {}",
            spec.lambda
        )));
    }
    if spec.penalty.needs_tree() && tree.is_none() {
        return Err(Error::BadModelSpec(format!(
            "penalty {} requires a cluster tree",
            spec.penalty.descriptor()
        )));
    }
    if matches!(
        spec.penalty,
        PenaltyKind::MultiTaskL2 | PenaltyKind::MultiTaskLInf
    ) && !spec.loss.is_classification()
    {
        return Err(Error::BadModelSpec(
            "multi-task penalties need a classification loss".into(),
        ));
    }
    if let Some(t) = tree {
        if spec.penalty.needs_tree() && t.p() != ds.d() {
            return Err(Error::DimensionMismatch {
                context: "tree leaves vs design columns",
                left: t.p(),
                right: ds.d(),
            });
        }
    }

    let design: Array2<f64> = if spec.penalty.needs_tree() {
        augment(ds.design(), tree.expect("checked"))?
    } else {
        ds.design().to_owned()
    };
    let d = design.ncols();

    // Assemble the smooth loss over the flat layout, centering where the
    // intercept is handled analytically.
    let (loss, col_means, target_means): (SmoothLoss, Option<Array1<f64>>, Option<Array1<f64>>) =
        match spec.loss {
            LossKind::Squared => {
                let y = ds.targets_as_real();
                let (xc, yc, means, y_mean) = center_columns(design.view(), y.view());
                (
                    SmoothLoss::Squared { x: xc, y: yc },
                    Some(means),
                    Some(Array1::from_elem(1, y_mean)),
                )
            }
            LossKind::SquaredOva => {
                let (labels, c) = ds.labels()?;
                let ybar = IndicatorResponse::from_labels(labels, c)?.0;
                let means = design
                    .mean_axis(Axis(0))
                    .unwrap_or_else(|| Array1::zeros(d));
                let mut xc = design.clone();
                for mut row in xc.rows_mut() {
                    row -= &means;
                }
                let ybar_means = ybar
                    .mean_axis(Axis(0))
                    .unwrap_or_else(|| Array1::zeros(c));
                let mut ybar_c = ybar;
                for mut row in ybar_c.rows_mut() {
                    row -= &ybar_means;
                }
                (
                    SmoothLoss::SquaredOva { x: xc, ybar: ybar_c },
                    Some(means),
                    Some(ybar_means),
                )
            }
            LossKind::LogisticOva => {
                let (labels, c) = ds.labels()?;
                let ybar = IndicatorResponse::from_labels(labels, c)?;
                (
                    SmoothLoss::LogisticOva {
                        x: design.clone(),
                        ybar,
                    },
                    None,
                    None,
                )
            }
            LossKind::Multinomial => {
                let (labels, c) = ds.labels()?;
                (
                    SmoothLoss::Multinomial {
                        x: design.clone(),
                        y: labels.to_vec(),
                        c,
                    },
                    None,
                    None,
                )
            }
        };

    let c = loss.cols();
    let l = cfg.l_override.unwrap_or_else(|| {
        let x = match &loss {
            SmoothLoss::Squared { x, .. }
            | SmoothLoss::SquaredOva { x, .. }
            | SmoothLoss::LogisticOva { x, .. }
            | SmoothLoss::Multinomial { x, .. } => x,
        };
        if loss.has_intercept() {
            lipschitz_bound(with_ones_column(x.view()).view(), spec.loss, cfg.seed)
        } else {
            lipschitz_bound(x.view(), spec.loss, cfg.seed)
        }
    });

    let init = match warm {
        Some(prev) if prev.weights.nrows() == d && prev.weights.ncols() == c => {
            let mut flat = Array1::zeros(loss.dim());
            for k in 0..c {
                for j in 0..d {
                    flat[k * d + j] = prev.weights[[j, k]];
                }
            }
            if loss.has_intercept() {
                for k in 0..c {
                    flat[c * d + k] = prev.intercept[k];
                }
            }
            flat
        }
        _ => Array1::zeros(loss.dim()),
    };

    let run = match (&spec.penalty, build_penalty_op(spec, tree)?) {
        (PenaltyKind::ReweightedL1 { stages, eps }, None) => {
            reweighted_l1(&loss, spec.lambda, l, cfg, *stages, *eps)?
        }
        (_, Some(op)) => {
            let penalty = FlatPenalty {
                op,
                lambda: spec.lambda,
                coef_len: d,
                cols: c,
            };
            if cfg.accelerated {
                fista(&loss, &penalty, init, l, cfg)?
            } else {
                ista(&loss, &penalty, init, l, cfg)?
            }
        }
        _ => unreachable!(),
    };

    // Unpack the flat solution into (weights, intercepts).
    let mut weights = Array2::zeros((d, c));
    for k in 0..c {
        for j in 0..d {
            weights[[j, k]] = run.params[k * d + j];
        }
    }
    let intercept = if loss.has_intercept() {
        Array1::from_iter((0..c).map(|k| run.params[c * d + k]))
    } else {
        // Centered squared-loss paths: b_k = mean(y_k) - col_means . w^k.
        let means = col_means.expect("centered path");
        let tm = target_means.expect("centered path");
        Array1::from_iter((0..c).map(|k| tm[k] - means.dot(&weights.column(k))))
    };

    Ok(FitResult {
        weights,
        intercept,
        objective: run.objective,
        iterations: run.iterations,
        converged: run.converged,
        lambda: spec.lambda,
        penalty: spec.penalty.descriptor(),
        loss: spec.loss,
        augmented: spec.penalty.needs_tree(),
    })
}

/// Model output on new data: real responses or predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Real(Array1<f64>),
    Labels(Vec<usize>),
}

impl Prediction {
    pub fn as_real(&self) -> Option<&Array1<f64>> {
        match self {
            Prediction::Real(y) => Some(y),
            Prediction::Labels(_) => None,
        }
    }

    pub fn as_labels(&self) -> Option<&[usize]> {
        match self {
            Prediction::Labels(y) => Some(y),
            Prediction::Real(_) => None,
        }
    }
}

/// Predict targets for `x`, augmenting internally when the model was fit in
/// the tree space and `x` is in voxel space. Classification ties break
/// toward the lowest class index.
pub fn predict(
    result: &FitResult,
    x: ArrayView2<'_, f64>,
    tree: Option<&ClusterTree>,
) -> Result<Prediction> {
    let d = result.weights.nrows();
    let scores = if x.ncols() == d {
        x.dot(&result.weights)
    } else if result.augmented {
        let tree = tree.ok_or_else(|| {
            Error::BadModelSpec("tree-space model needs a tree to predict on raw input".into())
        })?;
        if tree.q() != d || tree.p() != x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "input columns vs model space",
                left: x.ncols(),
                right: d,
            });
        }
        augment(x, tree)?.dot(&result.weights)
    } else {
        return Err(Error::DimensionMismatch {
            context: "input columns vs model space",
            left: x.ncols(),
            right: d,
        });
    };
    let scores = scores + &result.intercept;
    if result.loss.is_classification() {
        let labels = scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Ok(Prediction::Labels(labels))
    } else {
        Ok(Prediction::Real(scores.column(0).to_owned()))
    }
}
