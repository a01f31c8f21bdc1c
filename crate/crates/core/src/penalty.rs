//! Group structures, hierarchical norms, and exact proximal operators.
//!
//! The tree penalty is `Omega(w) = sum_g eta_g * ||w_g||` over the laminar
//! family of descendant groups of a cluster tree, with either the l2 or the
//! max norm per group. Its proximal operator is computed exactly by applying
//! the single-group operators in one pass from the deepest groups up to the
//! root; the test suite checks that composition against a generic convex
//! solver of the prox problem.

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};

/// Per-group norm used inside the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormFlavor {
    L2,
    LInf,
}

/// One group: a set of coordinate indices with a positive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// Sorted coordinate indices into `0..dim`.
    pub indices: Vec<usize>,
    /// Strictly positive weight `eta_g`.
    pub weight: f64,
    /// Nesting depth: number of groups strictly containing this one.
    pub depth: usize,
}

/// A laminar family of weighted groups covering `0..dim`.
///
/// Groups are stored in processing order for the proximal pass:
/// non-increasing depth, so children always precede their ancestors.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    dim: usize,
    flavor: NormFlavor,
    groups: Vec<Group>,
}

impl GroupStructure {
    /// Validate and build a structure from `(indices, weight)` pairs.
    ///
    /// Fails if any two groups overlap without nesting, if some index in
    /// `0..dim` is uncovered, or if a weight is not strictly positive.
    /// Nesting depths are derived from the family itself.
    pub fn new(
        dim: usize,
        flavor: NormFlavor,
        groups: Vec<(Vec<usize>, f64)>,
    ) -> Result<Self> {
        let mut sorted: Vec<(Vec<usize>, f64)> = Vec::with_capacity(groups.len());
        for (mut idx, weight) in groups {
            if weight <= 0.0 || !weight.is_finite() {
                return Err(Error::NonPositiveWeight(weight));
            }
            idx.sort_unstable();
            idx.dedup();
            if let Some(&max) = idx.last() {
                if max >= dim {
                    return Err(Error::UncoveredIndex { index: max });
                }
            }
            sorted.push((idx, weight));
        }
        // Laminarity: every pair disjoint or nested.
        for a in 0..sorted.len() {
            for b in (a + 1)..sorted.len() {
                if !disjoint_or_nested(&sorted[a].0, &sorted[b].0) {
                    return Err(Error::NotLaminar { a, b });
                }
            }
        }
        // Coverage of all indices.
        let mut covered = vec![false; dim];
        for (idx, _) in &sorted {
            for &i in idx {
                covered[i] = true;
            }
        }
        if let Some(index) = covered.iter().position(|c| !c) {
            return Err(Error::UncoveredIndex { index });
        }
        // Depth = number of strict supersets.
        let mut with_depth: Vec<Group> = sorted
            .iter()
            .map(|(idx, weight)| {
                let depth = sorted
                    .iter()
                    .filter(|(other, _)| other.len() > idx.len() && contains(other, idx))
                    .count();
                Group {
                    indices: idx.clone(),
                    weight: *weight,
                    depth,
                }
            })
            .collect();
        with_depth.sort_by(|x, y| y.depth.cmp(&x.depth));
        Ok(GroupStructure {
            dim,
            flavor,
            groups: with_depth,
        })
    }

    /// The descendant-group family of a cluster tree with weights
    /// `eta_g = rho ^ depth(g)`.
    ///
    /// One group per node, containing the node's whole subtree; laminarity
    /// and coverage hold by construction. Requires `rho > 0`.
    pub fn tree_groups(tree: &ClusterTree, rho: f64, flavor: NormFlavor) -> Result<Self> {
        if rho <= 0.0 || !rho.is_finite() {
            return Err(Error::NonPositiveWeight(rho));
        }
        let q = tree.q();
        let mut groups: Vec<Group> = (0..q)
            .map(|j| {
                let depth = tree.node_depth(j).expect("valid node");
                Group {
                    indices: tree.descendants(j).expect("valid node"),
                    weight: rho.powi(depth as i32),
                    depth,
                }
            })
            .collect();
        groups.sort_by(|x, y| y.depth.cmp(&x.depth));
        Ok(GroupStructure {
            dim: q,
            flavor,
            groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flavor(&self) -> NormFlavor {
        self.flavor
    }

    /// Groups in processing order (deepest first, root last).
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// `Omega(w) = sum_g eta_g ||w_g||` with the structure's flavor.
    pub fn norm_value(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.dim, "coefficient length vs group structure");
        let mut total = 0.0;
        for g in &self.groups {
            let gn = match self.flavor {
                NormFlavor::L2 => g.indices.iter().map(|&i| w[i] * w[i]).sum::<f64>().sqrt(),
                NormFlavor::LInf => g
                    .indices
                    .iter()
                    .map(|&i| w[i].abs())
                    .fold(0.0f64, f64::max),
            };
            total += g.weight * gn;
        }
        total
    }
}

fn contains(sup: &[usize], sub: &[usize]) -> bool {
    // Both sorted; subset test by merge walk.
    let mut it = sup.iter();
    'outer: for s in sub {
        for v in it.by_ref() {
            if v == s {
                continue 'outer;
            }
            if v > s {
                return false;
            }
        }
        return false;
    }
    true
}

fn disjoint_or_nested(a: &[usize], b: &[usize]) -> bool {
    let inter = intersection_size(a, b);
    inter == 0 || inter == a.len().min(b.len())
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Block soft-threshold: 0 if `||v||_2 <= tau`, else `(1 - tau/||v||_2) v`.
pub fn prox_group_l2(v: &mut [f64], tau: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= tau {
        v.fill(0.0);
    } else {
        let scale = 1.0 - tau / norm;
        for x in v.iter_mut() {
            *x *= scale;
        }
    }
}

/// Euclidean projection of `v` onto the l1 ball of the given radius,
/// by sorting magnitudes and scanning for the threshold pivot.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    assert!(radius >= 0.0, "l1 ball radius must be nonnegative");
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius == 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (k + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// Prox of `tau * ||.||_inf` via Moreau decomposition: subtract the
/// projection onto the l1 ball of radius `tau` (the dual-norm ball).
pub fn prox_group_linf(v: &mut [f64], tau: f64) {
    let proj = project_l1_ball(v, tau);
    for (x, p) in v.iter_mut().zip(proj) {
        *x -= p;
    }
}

fn prox_group(v: &mut [f64], tau: f64, flavor: NormFlavor) {
    match flavor {
        NormFlavor::L2 => prox_group_l2(v, tau),
        NormFlavor::LInf => prox_group_linf(v, tau),
    }
}

/// Exact proximal operator of `lambda * Omega` for a laminar structure,
/// in place.
///
/// Applies the single-group operator with threshold `lambda * eta_g` once
/// per group, children before ancestors. For laminar families this
/// composition solves the prox problem exactly.
pub fn prox_tree(w: &mut [f64], lambda: f64, gs: &GroupStructure) {
    assert_eq!(w.len(), gs.dim(), "coefficient length vs group structure");
    debug_assert!(lambda >= 0.0);
    let mut buf = Vec::new();
    for g in &gs.groups {
        buf.clear();
        buf.extend(g.indices.iter().map(|&i| w[i]));
        prox_group(&mut buf, lambda * g.weight, gs.flavor);
        for (&i, &val) in g.indices.iter().zip(buf.iter()) {
            w[i] = val;
        }
    }
}

/// Coordinate-wise soft-threshold by `lambda`.
pub fn prox_l1(w: &mut [f64], lambda: f64) {
    for x in w.iter_mut() {
        *x = soft(*x, lambda);
    }
}

/// Coordinate-wise soft-threshold by `lambda * eta_j`.
pub fn prox_weighted_l1(w: &mut [f64], lambda: f64, eta: &[f64]) {
    assert_eq!(w.len(), eta.len(), "weights length");
    for (x, &e) in w.iter_mut().zip(eta.iter()) {
        *x = soft(*x, lambda * e);
    }
}

/// Prox of `lambda1 ||.||_1 + lambda2 ||.||_2^2`: soft-threshold by
/// `lambda1`, then shrink by `1 / (1 + 2 lambda2)`.
pub fn prox_elastic_net(w: &mut [f64], lambda1: f64, lambda2: f64) {
    let scale = 1.0 / (1.0 + 2.0 * lambda2);
    for x in w.iter_mut() {
        *x = soft(*x, lambda1) * scale;
    }
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Row-wise group prox for the multi-task norm `sum_j ||W_j||`:
/// each row of `w` (`rows x tasks`) is thresholded independently.
pub fn prox_multitask(w: &mut [f64], rows: usize, tasks: usize, lambda: f64, flavor: NormFlavor) {
    assert_eq!(w.len(), rows * tasks, "flat matrix length");
    let mut buf = vec![0.0; tasks];
    for j in 0..rows {
        for k in 0..tasks {
            buf[k] = w[k * rows + j];
        }
        prox_group(&mut buf, lambda, flavor);
        for k in 0..tasks {
            w[k * rows + j] = buf[k];
        }
    }
}
