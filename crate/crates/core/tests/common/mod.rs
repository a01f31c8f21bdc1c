//! Shared brute-force oracles, independent of the library's fast paths.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use treesparse::cluster::ClusterTree;
use treesparse::grid::Adjacency;
use treesparse::penalty::NormFlavor;

/// Generic convex solver of the proximal problem
/// `min_v 1/2 ||v - w||^2 + lambda * sum_g eta_g ||v_g||`
/// by block-coordinate ascent on the dual: each group's dual block is
/// projected onto its dual-norm ball against the current residual, cycling
/// until the primal iterate stabilizes. Order-independent, unlike the
/// composed one-pass operator it is used to check.
pub fn prox_oracle_bcd(
    w: &[f64],
    groups: &[(Vec<usize>, f64)],
    flavor: NormFlavor,
    lambda: f64,
) -> Vec<f64> {
    let mut xi: Vec<Vec<f64>> = groups.iter().map(|(g, _)| vec![0.0; g.len()]).collect();
    let mut v = w.to_vec();
    for _sweep in 0..200_000 {
        let mut max_change = 0.0f64;
        for (gi, (indices, eta)) in groups.iter().enumerate() {
            let radius = lambda * eta;
            // Residual with this block removed.
            let r: Vec<f64> = indices
                .iter()
                .zip(&xi[gi])
                .map(|(&ix, &x)| v[ix] + x)
                .collect();
            let projected = match flavor {
                // Dual ball of the l2 norm is the l2 ball.
                NormFlavor::L2 => {
                    let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm <= radius {
                        r.clone()
                    } else {
                        r.iter().map(|x| x * radius / norm).collect()
                    }
                }
                // Dual ball of the max norm is the l1 ball; project by
                // bisecting the soft-threshold level.
                NormFlavor::LInf => project_l1_ball_bisect(&r, radius),
            };
            for ((&ix, old), new) in indices.iter().zip(&xi[gi]).zip(&projected) {
                let delta = old - new;
                v[ix] += delta;
                max_change = max_change.max(delta.abs());
            }
            xi[gi] = projected;
        }
        if max_change < 1e-13 {
            break;
        }
    }
    v
}

/// Euclidean projection onto the l1 ball by bisection on the shrinkage
/// level (independent of the sort-and-scan implementation).
pub fn project_l1_ball_bisect(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let shrunk_l1 = |t: f64| -> f64 { v.iter().map(|x| (x.abs() - t).max(0.0)).sum() };
    let mut lo = 0.0;
    let mut hi = v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shrunk_l1(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter()
        .map(|&x| x.signum() * (x.abs() - t).max(0.0))
        .collect()
}

/// The prox objective value, for certification.
pub fn prox_objective(
    v: &[f64],
    w: &[f64],
    groups: &[(Vec<usize>, f64)],
    flavor: NormFlavor,
    lambda: f64,
) -> f64 {
    let dist: f64 = v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut pen = 0.0;
    for (indices, eta) in groups {
        let gn = match flavor {
            NormFlavor::L2 => indices.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt(),
            NormFlavor::LInf => indices.iter().map(|&i| v[i].abs()).fold(0.0, f64::max),
        };
        pen += eta * gn;
    }
    0.5 * dist + lambda * pen
}

/// A uniformly random binary merge topology over `p` leaves (not a Ward
/// tree): repeatedly joins two random active clusters.
pub fn random_merge_tree(rng: &mut ChaCha20Rng, p: usize) -> ClusterTree {
    let q = 2 * p - 1;
    let mut children: Vec<Option<(usize, usize)>> = vec![None; p];
    let mut active: Vec<usize> = (0..p).collect();
    while children.len() < q {
        let i = rng.random_range(0..active.len());
        let a = active.swap_remove(i);
        let j = rng.random_range(0..active.len());
        let b = active.swap_remove(j);
        children.push(Some((a.min(b), a.max(b))));
        active.push(children.len() - 1);
    }
    ClusterTree::from_merges(p, children, vec![0.0; q]).expect("valid merge sequence")
}

/// Reference spatially-constrained Ward agglomerator: rescans every
/// admissible cluster pair at each step and evaluates the merge cost in its
/// first form (within-cluster inertia difference) directly from the data.
pub fn ward_rescan_oracle(x: ArrayView2<'_, f64>, adj: &Adjacency) -> ClusterTree {
    let p = adj.len();
    let q = 2 * p - 1;
    let mut members: Vec<Vec<usize>> = (0..p).map(|j| vec![j]).collect();
    let mut children: Vec<Option<(usize, usize)>> = vec![None; p];
    let mut deltas: Vec<f64> = vec![0.0; p];
    let mut active: Vec<usize> = (0..p).collect();

    let inertia = |cells: &[usize]| -> f64 {
        let n = x.nrows();
        let mut mean = Array1::<f64>::zeros(n);
        for &c in cells {
            mean += &x.column(c);
        }
        mean /= cells.len() as f64;
        cells
            .iter()
            .map(|&c| (&x.column(c) - &mean).mapv(|v| v * v).sum())
            .sum()
    };
    let touching = |a: &[usize], b: &[usize]| -> bool {
        a.iter()
            .any(|&u| adj.neighbors(u).iter().any(|v| b.contains(v)))
    };

    while children.len() < q {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..active.len() {
            for j in (i + 1)..active.len() {
                let (a, b) = (active[i].min(active[j]), active[i].max(active[j]));
                if !touching(&members[a], &members[b]) {
                    continue;
                }
                let mut union: Vec<usize> = members[a]
                    .iter()
                    .chain(members[b].iter())
                    .copied()
                    .collect();
                union.sort_unstable();
                let delta = inertia(&union) - inertia(&members[a]) - inertia(&members[b]);
                // Total order on (delta, lo, hi): the same tie rule the
                // implementation uses.
                let key = (delta, a, b);
                let better = match &best {
                    None => true,
                    Some((bd, ba, bb)) => match key.0.total_cmp(bd) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => (key.1, key.2) < (*ba, *bb),
                    },
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (delta, a, b) = best.expect("connected adjacency always has a pair");
        let mut union: Vec<usize> = members[a]
            .iter()
            .chain(members[b].iter())
            .copied()
            .collect();
        union.sort_unstable();
        members.push(union);
        children.push(Some((a, b)));
        deltas.push(delta);
        active.retain(|&c| c != a && c != b);
        active.push(children.len() - 1);
    }
    ClusterTree::from_merges(p, children, deltas).expect("valid merge sequence")
}

/// Max absolute difference between two slices.
pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random dense matrix helper.
pub fn random_matrix(rng: &mut ChaCha20Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-scale..scale))
}
