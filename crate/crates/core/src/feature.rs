//! Augmented feature space and coefficient back-projection.
//!
//! The augmented design appends one column per internal tree node holding the
//! mean signal of its parcel, giving `q = 2p - 1` columns ordered by node
//! creation. Fitted coefficients over that space map back to a voxel image
//! through the ancestor sum, or to per-depth "scale slices" for inspection.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};

/// Append parcel-average columns to `x` (`n x p`), one per internal node.
///
/// Column `j >= p` is the mean of the voxel columns of parcel `j`, computed
/// as the size-weighted mean of its children's columns.
pub fn augment(x: ArrayView2<'_, f64>, tree: &ClusterTree) -> Result<Array2<f64>> {
    let p = tree.p();
    if x.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "design columns vs tree leaves",
            left: x.ncols(),
            right: p,
        });
    }
    let q = tree.q();
    let mut out = Array2::zeros((x.nrows(), q));
    out.slice_mut(ndarray::s![.., ..p]).assign(&x);
    for j in p..q {
        let (a, b) = tree.node(j)?.children.expect("internal node");
        let (sa, sb) = (
            tree.node(a)?.size() as f64,
            tree.node(b)?.size() as f64,
        );
        let col = (&out.column(a) * sa + &out.column(b) * sb) / (sa + sb);
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}

/// Fold length-`q` coefficients down to a length-`p` voxel map.
///
/// Voxel `k` receives `sum over ancestors j of w_j / |P_j|`, so the returned
/// map `m` satisfies `m . x = w . augment(x)` for any single volume `x`.
pub fn project_to_voxels(w: ArrayView1<'_, f64>, tree: &ClusterTree) -> Result<Array1<f64>> {
    let q = tree.q();
    if w.len() != q {
        return Err(Error::DimensionMismatch {
            context: "coefficient length vs tree nodes",
            left: w.len(),
            right: q,
        });
    }
    let p = tree.p();
    let mut acc = vec![0.0; q];
    let root = tree.root();
    acc[root] = w[root] / tree.node(root)?.size() as f64;
    for j in (0..q).rev() {
        if let Some((a, b)) = tree.node(j)?.children {
            acc[a] = acc[j] + w[a] / tree.node(a)?.size() as f64;
            acc[b] = acc[j] + w[b] / tree.node(b)?.size() as f64;
        }
    }
    Ok(Array1::from_iter((0..p).map(|k| acc[k])))
}

/// Color each voxel by the coefficient of its ancestor at depth `d`.
///
/// A voxel whose leaf is shallower than `d` keeps the leaf's own
/// coefficient, so depths beyond the tree maximum yield the leaf map.
pub fn scale_slice(
    w: ArrayView1<'_, f64>,
    tree: &ClusterTree,
    depth: usize,
) -> Result<Array1<f64>> {
    let q = tree.q();
    if w.len() != q {
        return Err(Error::DimensionMismatch {
            context: "coefficient length vs tree nodes",
            left: w.len(),
            right: q,
        });
    }
    let mut out = Array1::zeros(tree.p());
    let mut stack = vec![tree.root()];
    while let Some(j) = stack.pop() {
        let node = tree.node(j)?;
        if node.depth == depth || node.is_leaf() {
            for &v in &node.members {
                out[v] = w[if node.depth <= depth { j } else { v }];
            }
            // Members below an exact-depth match are covered by this parcel.
            if node.depth == depth {
                continue;
            }
        }
        if let Some((a, b)) = node.children {
            stack.push(a);
            stack.push(b);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ward_cluster;
    use crate::grid::{Adjacency, GridMask};
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;
    use rand::Rng;

    fn line_tree(values: &[f64]) -> (Array2<f64>, ClusterTree) {
        let p = values.len();
        let adj = Adjacency::from_mask(&GridMask::full(p, 1, 1).unwrap()).unwrap();
        let x = Array2::from_shape_vec((1, p), values.to_vec()).unwrap();
        let tree = ward_cluster(x.view(), &adj).unwrap();
        (x, tree)
    }

    fn random_grid_tree(
        nx: usize,
        ny: usize,
        n: usize,
        seed: u64,
    ) -> (Array2<f64>, ClusterTree) {
        let mut rng = crate::rng::stream(seed, "feature-tests");
        let adj = Adjacency::from_mask(&GridMask::full(nx, ny, 1).unwrap()).unwrap();
        let x = Array2::from_shape_fn((n, nx * ny), |_| rng.random_range(-1.0..1.0));
        let tree = ward_cluster(x.view(), &adj).unwrap();
        (x, tree)
    }

    #[test]
    fn augment_of_single_voxel_is_identity() {
        let (x, tree) = line_tree(&[3.0]);
        let xa = augment(x.view(), &tree).unwrap();
        assert_eq!(xa, x);
    }

    #[test]
    fn internal_column_is_mean_of_children() {
        let (x, tree) = line_tree(&[0.0, 1.0, 10.0]);
        let xa = augment(x.view(), &tree).unwrap();
        let (a, b) = tree.node(3).unwrap().children.unwrap();
        let expect = (x.column(a).to_owned() + x.column(b)) / 2.0;
        assert_abs_diff_eq!(xa[[0, 3]], expect[0], epsilon = 1e-15);
        assert_eq!(xa.ncols(), 5);
    }

    #[test]
    fn augment_rejects_wrong_width() {
        let (_, tree) = line_tree(&[0.0, 1.0, 10.0]);
        let bad = Array2::zeros((2, 4));
        assert!(matches!(
            augment(bad.view(), &tree),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn internal_columns_match_direct_parcel_means() {
        let (x, tree) = random_grid_tree(5, 2, 4, 21);
        let xa = augment(x.view(), &tree).unwrap();
        for j in tree.p()..tree.q() {
            let members = &tree.node(j).unwrap().members;
            for i in 0..x.nrows() {
                let direct: f64 =
                    members.iter().map(|&v| x[[i, v]]).sum::<f64>() / members.len() as f64;
                assert_abs_diff_eq!(xa[[i, j]], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn root_only_weight_spreads_evenly() {
        let (_, tree) = line_tree(&[0.0, 1.0, 10.0]);
        let mut w = Array1::zeros(tree.q());
        w[tree.root()] = 6.0;
        let m = project_to_voxels(w.view(), &tree).unwrap();
        assert_eq!(m, arr1(&[2.0, 2.0, 2.0]));
    }

    #[test]
    fn leaf_only_weight_stays_on_its_voxel() {
        let (_, tree) = line_tree(&[0.0, 1.0, 10.0]);
        let mut w = Array1::zeros(tree.q());
        w[1] = -2.5;
        let m = project_to_voxels(w.view(), &tree).unwrap();
        assert_eq!(m, arr1(&[0.0, -2.5, 0.0]));
    }

    #[test]
    fn projection_reproduces_augmented_dot_products() {
        let (_, tree) = random_grid_tree(5, 1, 3, 22);
        let mut rng = crate::rng::stream(23, "feature-proj");
        let w = Array1::from_shape_fn(tree.q(), |_| rng.random_range(-1.0..1.0));
        let m = project_to_voxels(w.view(), &tree).unwrap();
        for _ in 0..10 {
            let x = Array2::from_shape_fn((1, tree.p()), |_| rng.random_range(-1.0..1.0));
            let xa = augment(x.view(), &tree).unwrap();
            let via_map = m.dot(&x.row(0));
            let via_aug = w.dot(&xa.row(0));
            assert_abs_diff_eq!(via_map, via_aug, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_is_linear() {
        let (_, tree) = random_grid_tree(4, 2, 3, 24);
        let mut rng = crate::rng::stream(25, "feature-linear");
        let u = Array1::from_shape_fn(tree.q(), |_| rng.random_range(-1.0..1.0));
        let v = Array1::from_shape_fn(tree.q(), |_| rng.random_range(-1.0..1.0));
        let (alpha, beta) = (0.7, -1.3);
        let combo = project_to_voxels((&u * alpha + &v * beta).view(), &tree).unwrap();
        let parts = project_to_voxels(u.view(), &tree).unwrap() * alpha
            + project_to_voxels(v.view(), &tree).unwrap() * beta;
        for k in 0..tree.p() {
            assert_abs_diff_eq!(combo[k], parts[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn slice_depth_zero_is_the_root_coefficient() {
        let (_, tree) = line_tree(&[0.0, 1.0, 10.0]);
        let mut rng = crate::rng::stream(26, "feature-slice");
        let w = Array1::from_shape_fn(tree.q(), |_| rng.random_range(-1.0..1.0));
        let s = scale_slice(w.view(), &tree, 0).unwrap();
        for k in 0..tree.p() {
            assert_eq!(s[k], w[tree.root()]);
        }
    }

    #[test]
    fn slice_at_max_depth_gives_leaf_coefficients_on_balanced_tree() {
        let (_, tree) = line_tree(&[0.0, 1.0, 10.0, 11.0]);
        let mut rng = crate::rng::stream(27, "feature-slice-max");
        let w = Array1::from_shape_fn(tree.q(), |_| rng.random_range(-1.0..1.0));
        let s = scale_slice(w.view(), &tree, tree.max_depth()).unwrap();
        for k in 0..tree.p() {
            assert_eq!(s[k], w[k]);
        }
        // Beyond the maximum depth the leaf map is returned as well.
        let s2 = scale_slice(w.view(), &tree, tree.max_depth() + 3).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn slice_depth_one_on_balanced_four_leaf_tree() {
        let (_, tree) = line_tree(&[0.0, 1.0, 10.0, 11.0]);
        let mut w = Array1::zeros(tree.q());
        w[4] = 2.0; // parcel {0,1}
        w[5] = -3.0; // parcel {2,3}
        let s = scale_slice(w.view(), &tree, 1).unwrap();
        assert_eq!(s, arr1(&[2.0, 2.0, -3.0, -3.0]));
    }
}
