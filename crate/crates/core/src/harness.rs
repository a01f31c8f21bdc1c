//! Cross-validation, λ-grid model selection, evaluation metrics, and paired
//! significance testing.
//!
//! Grids come in two presets: the fixed logarithmic simulation grid and a
//! per-model-family grid anchored at a λ that provably zeroes the fit.
//! Selection always breaks error ties toward the larger λ (the sparser
//! model).

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};
use crate::feature::augment;
use crate::loss::{center_columns, Dataset, IndicatorResponse, LossKind};
use crate::solver::{fit_model, predict, FitResult, ModelSpec, PenaltyKind, Prediction, SolverConfig};

/// How samples are split into folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitKind {
    KFold { k: usize },
    LeaveOneGroupOut,
}

/// A deterministic fold assignment; optionally nested (per-outer-fold λ
/// selection by an inner split of the training part).
#[derive(Debug, Clone)]
pub struct CVPlan {
    pub kind: SplitKind,
    /// Sample indices per fold; the folds partition `0..n`.
    pub folds: Vec<Vec<usize>>,
    pub nested: bool,
    seed: u64,
}

impl CVPlan {
    /// Seeded k-fold split of `n` samples.
    pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > n {
            return Err(Error::BadPlan(format!("k = {k} folds over {n} samples")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = crate::rng::stream(seed, "cv-plan");
        order.shuffle(&mut rng);
        let mut folds = vec![Vec::new(); k];
        for (i, s) in order.into_iter().enumerate() {
            folds[i % k].push(s);
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(CVPlan {
            kind: SplitKind::KFold { k },
            folds,
            nested: false,
            seed,
        })
    }

    /// One fold per distinct group id; a group is never split.
    pub fn leave_one_group_out(groups: &[usize]) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::BadPlan("no samples".into()));
        }
        let mut ids: Vec<usize> = groups.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::BadPlan("need at least two groups".into()));
        }
        let folds = ids
            .iter()
            .map(|&g| {
                (0..groups.len())
                    .filter(|&i| groups[i] == g)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(CVPlan {
            kind: SplitKind::LeaveOneGroupOut,
            folds,
            nested: false,
            seed: 0,
        })
    }

    pub fn with_nested(mut self, nested: bool) -> Self {
        self.nested = nested;
        self
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for fold in &self.folds {
            if fold.is_empty() {
                return Err(Error::BadPlan("empty fold".into()));
            }
            for &i in fold {
                if i >= n || seen[i] {
                    return Err(Error::BadPlan(format!("bad or repeated sample index {i}")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::BadPlan("folds do not cover all samples".into()));
        }
        Ok(())
    }

    /// Inner plan over a training subset, of the same kind, for nested
    /// selection. Indices are local to the subset.
    fn inner_plan(&self, train: &[usize], ds: &Dataset, outer_fold: usize) -> Result<CVPlan> {
        match self.kind {
            SplitKind::KFold { k } => {
                let k = k.min(train.len());
                CVPlan::kfold(train.len(), k, self.seed ^ (outer_fold as u64 + 1))
            }
            SplitKind::LeaveOneGroupOut => {
                let groups = ds
                    .group_id()
                    .ok_or_else(|| Error::BadPlan("group-out plan needs group ids".into()))?;
                let local: Vec<usize> = train.iter().map(|&i| groups[i]).collect();
                CVPlan::leave_one_group_out(&local)
            }
        }
    }
}

/// The fixed simulation grid: `count` log-spaced values from `hi` down to `lo`.
pub fn lambda_grid_log(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && hi > lo && lo > 0.0);
    let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
    let mut out = Vec::with_capacity(count);
    let mut v = hi;
    for _ in 0..count {
        out.push(v);
        v *= ratio;
    }
    out
}

/// Per-model grid `lambda_max * 2^0, 2^-1, ..., 2^-(count-1)`, with
/// `lambda_max` large enough that the head fit has all-zero coefficients
/// (for the sparsity-inducing penalties).
pub fn lambda_grid(spec: &ModelSpec, ds: &Dataset, tree: Option<&ClusterTree>, count: usize) -> Result<Vec<f64>> {
    assert!(count >= 2);
    let lmax = lambda_max(spec, ds, tree)?;
    Ok((0..count).map(|k| lmax * 0.5f64.powi(k as i32)).collect())
}

/// A λ at which the penalized fit keeps every coefficient at zero
/// (excluding intercepts), derived from a bound on the loss gradient at the
/// zero weights.
pub fn lambda_max(spec: &ModelSpec, ds: &Dataset, tree: Option<&ClusterTree>) -> Result<f64> {
    if spec.penalty.needs_tree() && tree.is_none() {
        return Err(Error::BadModelSpec(format!(
            "penalty {} requires a cluster tree",
            spec.penalty.descriptor()
        )));
    }
    let design: Array2<f64> = if spec.penalty.needs_tree() {
        augment(ds.design(), tree.expect("checked"))?
    } else {
        ds.design().to_owned()
    };
    let n = design.nrows() as f64;
    let d = design.ncols();

    // Entrywise upper bound `u` (d x c) on |grad| at zero weights, valid for
    // every intercept value the solver can visit.
    let u: Array2<f64> = match spec.loss {
        LossKind::Squared => {
            let y = ds.targets_as_real();
            let (xc, yc, _, _) = center_columns(design.view(), y.view());
            let g = xc.t().dot(&yc) / n;
            let mut u = Array2::zeros((d, 1));
            u.column_mut(0).assign(&g.mapv(f64::abs));
            u
        }
        LossKind::SquaredOva => {
            let (labels, c) = ds.labels()?;
            let ybar = IndicatorResponse::from_labels(labels, c)?.0;
            let means = design.mean_axis(Axis(0)).unwrap();
            let mut xc = design.clone();
            for mut row in xc.rows_mut() {
                row -= &means;
            }
            let ymeans = ybar.mean_axis(Axis(0)).unwrap();
            let mut yc = ybar;
            for mut row in yc.rows_mut() {
                row -= &ymeans;
            }
            (xc.t().dot(&yc) / n).mapv(f64::abs)
        }
        LossKind::LogisticOva | LossKind::Multinomial => {
            // Per-sample gradient factors are bounded by 1 in magnitude, so
            // |grad_jk| <= ||X_.j||_1 / n regardless of the intercepts.
            let (_, c) = ds.labels()?;
            let col_l1 = design.map_axis(Axis(0), |col| col.iter().map(|v| v.abs()).sum::<f64>());
            let mut u = Array2::zeros((d, c));
            for k in 0..c {
                u.column_mut(k).assign(&(&col_l1 / n));
            }
            u
        }
    };

    let lmax = match &spec.penalty {
        PenaltyKind::Ridge
        | PenaltyKind::L1 { .. }
        | PenaltyKind::ElasticNet { .. }
        | PenaltyKind::ReweightedL1 { .. } => u.iter().copied().fold(0.0, f64::max),
        PenaltyKind::WeightedL1 { rho } => {
            let tree = tree.expect("checked");
            let mut best = 0.0f64;
            for j in 0..d {
                let eta = rho.powi(tree.node(j)?.depth as i32);
                for k in 0..u.ncols() {
                    best = best.max(u[[j, k]] / eta);
                }
            }
            best
        }
        // Covering the zero-gradient condition with the root group alone:
        // the dual ball of l2 is l2, of the max norm it is l1.
        PenaltyKind::TreeL2 { .. } => (0..u.ncols())
            .map(|k| u.column(k).mapv(|v| v * v).sum().sqrt())
            .fold(0.0, f64::max),
        PenaltyKind::TreeLInf { .. } => (0..u.ncols())
            .map(|k| u.column(k).sum())
            .fold(0.0, f64::max),
        PenaltyKind::MultiTaskL2 => (0..d)
            .map(|j| u.row(j).mapv(|v| v * v).sum().sqrt())
            .fold(0.0, f64::max),
        PenaltyKind::MultiTaskLInf => (0..d).map(|j| u.row(j).sum()).fold(0.0, f64::max),
    };
    // Nudge past float-boundary ties between the prox threshold and the
    // gradient so the head fit is zero, not one ulp away from it.
    Ok((lmax * (1.0 + 1e-9)).max(1e-12))
}

/// Per-fold errors and summary statistics of a cross-validated model.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model: String,
    pub fold_errors: Vec<f64>,
    pub chosen_lambda: Vec<f64>,
    pub mean_error: f64,
    pub std_error: f64,
    /// Median over folds of the nonzero-coefficient fraction, in percent,
    /// counted in the fitting space (augmented where applicable).
    pub median_nonzero_pct: f64,
    pub wall_s: f64,
    /// Refit on all samples at the consensus λ.
    pub final_fit: Option<FitResult>,
}

impl EvalReport {
    pub fn n_folds(&self) -> usize {
        self.fold_errors.len()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Held-out error: mean squared error for regression, misclassification
/// percentage for classification.
fn test_error(fit: &FitResult, test: &Dataset, tree: Option<&ClusterTree>) -> Result<f64> {
    let pred = predict(fit, test.design(), tree)?;
    match pred {
        Prediction::Real(yhat) => {
            let y = test.targets_as_real();
            Ok((&yhat - &y).mapv(|e| e * e).mean().unwrap_or(0.0))
        }
        Prediction::Labels(yhat) => {
            let (y, _) = test.labels()?;
            let wrong = yhat.iter().zip(y).filter(|(a, b)| a != b).count();
            Ok(100.0 * wrong as f64 / y.len() as f64)
        }
    }
}

/// Fit the λ path (descending), warm-starting each fit from the previous.
fn fit_path(
    ds: &Dataset,
    spec: &ModelSpec,
    tree: Option<&ClusterTree>,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<FitResult>> {
    let mut fits = Vec::with_capacity(grid.len());
    let mut prev: Option<FitResult> = None;
    for &lambda in grid {
        let s = ModelSpec { lambda, ..spec.clone() };
        let fit = fit_model(ds, &s, tree, cfg, prev.as_ref())?;
        prev = Some(fit.clone());
        fits.push(fit);
    }
    Ok(fits)
}

/// Mean inner-CV error per grid λ over the given plan (not nested).
fn grid_errors(
    ds: &Dataset,
    plan: &CVPlan,
    spec: &ModelSpec,
    tree: Option<&ClusterTree>,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    plan.folds
        .iter()
        .map(|fold| {
            let train: Vec<usize> = (0..ds.n()).filter(|i| !fold.contains(i)).collect();
            let train_ds = ds.subset(&train);
            let test_ds = ds.subset(fold);
            let fits = fit_path(&train_ds, spec, tree, grid, cfg)?;
            fits.iter().map(|f| test_error(f, &test_ds, tree)).collect()
        })
        .collect()
}

/// Index of the best λ: lowest mean error, ties toward the larger λ
/// (the grid is descending, so the smaller index).
fn select_lambda(errors_per_fold: &[Vec<f64>], grid_len: usize) -> usize {
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for i in 0..grid_len {
        let m = mean(&errors_per_fold.iter().map(|e| e[i]).collect::<Vec<_>>());
        if m < best_err {
            best_err = m;
            best = i;
        }
    }
    best
}

/// Cross-validate a model family over a λ grid.
///
/// Plain plans select one λ on the outer folds themselves; nested plans run
/// an inner split of each training part to pick a per-fold λ, then refit on
/// the full training part. The returned report carries per-fold test errors
/// and a refit on all samples at the consensus λ.
pub fn cross_validate(
    ds: &Dataset,
    plan: &CVPlan,
    spec: &ModelSpec,
    tree: Option<&ClusterTree>,
    grid: &[f64],
    cfg: &SolverConfig,
    jobs: usize,
) -> Result<EvalReport> {
    plan.validate(ds.n())?;
    if grid.is_empty() {
        return Err(Error::BadPlan("empty lambda grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let started = Instant::now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if jobs == 0 { plan.n_folds().min(8) } else { jobs })
        .build()
        .map_err(|e| Error::BadPlan(format!("thread pool: {e}")))?;

    let (fold_errors, chosen_lambda, fold_nnz): (Vec<f64>, Vec<f64>, Vec<f64>) = if plan.nested {
        // Per-fold inner selection.
        let per_fold: Vec<Result<(f64, f64, f64)>> = pool.install(|| {
            plan.folds
                .par_iter()
                .enumerate()
                .map(|(fi, fold)| {
                    let train: Vec<usize> =
                        (0..ds.n()).filter(|i| !fold.contains(i)).collect();
                    let train_ds = ds.subset(&train);
                    let inner = plan.inner_plan(&train, ds, fi)?;
                    let inner_errors =
                        grid_errors(&train_ds, &inner, spec, tree, &grid, cfg)?;
                    let best = select_lambda(&inner_errors, grid.len());
                    let s = ModelSpec { lambda: grid[best], ..spec.clone() };
                    let fit = fit_model(&train_ds, &s, tree, cfg, None)?;
                    let err = test_error(&fit, &ds.subset(fold), tree)?;
                    Ok((err, grid[best], fit.nonzero_percent()))
                })
                .collect()
        });
        let mut errs = Vec::new();
        let mut lams = Vec::new();
        let mut nnz = Vec::new();
        for r in per_fold {
            let (e, l, z) = r?;
            errs.push(e);
            lams.push(l);
            nnz.push(z);
        }
        (errs, lams, nnz)
    } else {
        // One λ selected on the outer folds directly.
        let per_fold: Vec<Result<(Vec<f64>, Vec<f64>)>> = pool.install(|| {
            plan.folds
                .par_iter()
                .map(|fold| {
                    let train: Vec<usize> =
                        (0..ds.n()).filter(|i| !fold.contains(i)).collect();
                    let train_ds = ds.subset(&train);
                    let test_ds = ds.subset(fold);
                    let fits = fit_path(&train_ds, spec, tree, &grid, cfg)?;
                    let errs = fits
                        .iter()
                        .map(|f| test_error(f, &test_ds, tree))
                        .collect::<Result<Vec<f64>>>()?;
                    let nnz = fits.iter().map(|f| f.nonzero_percent()).collect();
                    Ok((errs, nnz))
                })
                .collect()
        });
        let mut errors_per_fold = Vec::new();
        let mut nnz_per_fold = Vec::new();
        for r in per_fold {
            let (e, z) = r?;
            errors_per_fold.push(e);
            nnz_per_fold.push(z);
        }
        let best = select_lambda(&errors_per_fold, grid.len());
        let errs: Vec<f64> = errors_per_fold.iter().map(|e| e[best]).collect();
        let nnz: Vec<f64> = nnz_per_fold.iter().map(|z| z[best]).collect();
        let lams = vec![grid[best]; plan.n_folds()];
        (errs, lams, nnz)
    };

    // Consensus λ: the most frequently chosen, ties toward the larger.
    let consensus = {
        let mut best = chosen_lambda[0];
        let mut best_count = 0;
        for &l in &chosen_lambda {
            let count = chosen_lambda.iter().filter(|&&x| x == l).count();
            if count > best_count || (count == best_count && l > best) {
                best = l;
                best_count = count;
            }
        }
        best
    };
    let final_spec = ModelSpec { lambda: consensus, ..spec.clone() };
    let final_fit = fit_model(ds, &final_spec, tree, cfg, None)?;

    Ok(EvalReport {
        model: spec.descriptor(),
        mean_error: mean(&fold_errors),
        std_error: sample_std(&fold_errors),
        median_nonzero_pct: median(&fold_nnz),
        fold_errors,
        chosen_lambda,
        wall_s: started.elapsed().as_secs_f64(),
        final_fit: Some(final_fit),
    })
}

/// Two-sided Wilcoxon paired signed-rank test.
///
/// Zero differences are dropped; ties share averaged ranks. Exact
/// enumeration of all sign patterns for n <= 12, normal approximation with
/// continuity and tie corrections above. All differences zero gives p = 1.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "paired samples",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 5 {
        return Err(Error::BadPlan(format!(
            "need at least 5 pairs for the signed-rank test, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(1.0);
    }
    // Average ranks of |d|.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let t_lo = w_plus.min(total - w_plus);
    let t_hi = w_plus.max(total - w_plus);

    if n <= 12 {
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|k| mask & (1 << k) != 0).map(|k| ranks[k]).sum();
            if w <= t_lo || w >= t_hi {
                extreme += 1;
            }
        }
        Ok((extreme as f64 / (1u64 << n) as f64).min(1.0))
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        // Tie correction over groups of equal |d|.
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            return Ok(1.0);
        }
        let dev = w_plus - mu;
        let z = (dev - 0.5 * dev.signum()) / var.sqrt();
        Ok((2.0 * normal_cdf(-z.abs())).min(1.0))
    }
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error below 1.5e-7).
fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let erf = {
        let sign = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        sign * (1.0 - poly * (-x * x).exp())
    };
    0.5 * (1.0 + erf)
}

/// Head-to-head rows for a merged model-comparison table: each model paired
/// against the reference (lowest mean error) by the signed-rank test.
pub fn pairwise_against_best(reports: &[EvalReport]) -> Result<Vec<(String, Option<f64>)>> {
    let reference = reports
        .iter()
        .min_by(|a, b| a.mean_error.total_cmp(&b.mean_error))
        .ok_or_else(|| Error::BadPlan("no reports to merge".into()))?;
    reports
        .iter()
        .map(|r| {
            if std::ptr::eq(r, reference) {
                return Ok((r.model.clone(), None));
            }
            let p = wilcoxon_signed_rank(&r.fold_errors, &reference.fold_errors)?;
            Ok((r.model.clone(), Some(p)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn simulation_grid_endpoints_and_ratio() {
        let g = lambda_grid_log(1e3, 1e-3, 30);
        assert_eq!(g.len(), 30);
        assert_abs_diff_eq!(g[0], 1e3, epsilon = 1e-9);
        assert_abs_diff_eq!(g[29], 1e-3, epsilon = 1e-12);
        let r0 = g[1] / g[0];
        for w in g.windows(2) {
            assert_abs_diff_eq!(w[1] / w[0], r0, epsilon = 1e-12);
        }
        let two = lambda_grid_log(10.0, 0.1, 2);
        assert_eq!(two, vec![10.0, 0.1]);
    }

    #[test]
    fn kfold_partitions_all_samples() {
        let plan = CVPlan::kfold(11, 3, 9).unwrap();
        assert_eq!(plan.n_folds(), 3);
        plan.validate(11).unwrap();
        let total: usize = plan.folds.iter().map(|f| f.len()).sum();
        assert_eq!(total, 11);
        // Deterministic for the same inputs.
        let again = CVPlan::kfold(11, 3, 9).unwrap();
        assert_eq!(plan.folds, again.folds);
        let different = CVPlan::kfold(11, 3, 10).unwrap();
        assert_ne!(plan.folds, different.folds);
    }

    #[test]
    fn group_out_never_splits_a_group() {
        let groups = vec![2, 0, 1, 0, 2, 1, 0];
        let plan = CVPlan::leave_one_group_out(&groups).unwrap();
        assert_eq!(plan.n_folds(), 3);
        for fold in &plan.folds {
            let ids: std::collections::HashSet<usize> =
                fold.iter().map(|&i| groups[i]).collect();
            assert_eq!(ids.len(), 1);
        }
        plan.validate(7).unwrap();
    }

    #[test]
    fn wilcoxon_identical_samples_give_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn wilcoxon_strict_dominance_on_ten_folds() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.5 + x * 0.01).collect();
        let p = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_abs_diff_eq!(p, 2.0 / 1024.0, epsilon = 1e-12);
    }

    #[test]
    fn wilcoxon_textbook_example() {
        // Classic paired sample (n = 10, one zero difference dropped).
        let before = [125.0, 115.0, 130.0, 140.0, 140.0, 115.0, 140.0, 125.0, 140.0, 135.0];
        let after = [110.0, 122.0, 125.0, 120.0, 140.0, 124.0, 123.0, 137.0, 135.0, 145.0];
        let p = wilcoxon_signed_rank(&before, &after).unwrap();
        // Exact enumeration oracle over the 9 nonzero differences.
        let diffs: Vec<f64> = before
            .iter()
            .zip(&after)
            .map(|(a, b)| a - b)
            .filter(|d| *d != 0.0)
            .collect();
        let n = diffs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
                j += 1;
            }
            for &k in &order[i..=j] {
                ranks[k] = (i + j + 2) as f64 / 2.0;
            }
            i = j + 1;
        }
        let w_plus: f64 = diffs
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| r)
            .sum();
        let total: f64 = ranks.iter().sum();
        let (t_lo, t_hi) = (w_plus.min(total - w_plus), w_plus.max(total - w_plus));
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|k| mask & (1 << k) != 0).map(|k| ranks[k]).sum();
            if w <= t_lo || w >= t_hi {
                extreme += 1;
            }
        }
        let oracle = extreme as f64 / (1u64 << n) as f64;
        assert_abs_diff_eq!(p, oracle, epsilon = 1e-12);
    }

    #[test]
    fn wilcoxon_rejects_short_or_mismatched_input() {
        assert!(wilcoxon_signed_rank(&[1.0; 4], &[2.0; 4]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0; 6], &[2.0; 5]).is_err());
    }

    #[test]
    fn normal_approximation_is_sane() {
        let mut rng = crate::rng::stream(61, "wilcoxon-normal");
        let a: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!((0.0..=1.0).contains(&p));
        // Strong one-sided dominance should be highly significant.
        let c: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + 1.0 + i as f64 * 0.01).collect();
        let p = wilcoxon_signed_rank(&a, &c).unwrap();
        assert!(p < 0.001, "p = {p}");
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_cdf(1.959964), 0.975, epsilon = 1e-6);
        assert_abs_diff_eq!(normal_cdf(-1.0), 0.15865525, epsilon = 1e-6);
    }
}
