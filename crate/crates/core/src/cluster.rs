//! Spatially-constrained variance-minimizing agglomerative clustering.
//!
//! Starting from singleton clusters, the pair of clusters joined by at least
//! one adjacency edge whose merge minimizes the inertia increase is merged,
//! until a single cluster remains. The result is a binary tree of
//! `q = 2p - 1` nodes whose every parcel induces a connected subgraph of the
//! grid.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::Adjacency;

/// One node of a [`ClusterTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Children in creation order (`lo < hi`); `None` for leaves.
    pub children: Option<(usize, usize)>,
    /// Parent node id; `None` for the root.
    pub parent: Option<usize>,
    /// Member voxel ids, sorted.
    pub members: Vec<usize>,
    /// Depth from the root (root = 0).
    pub depth: usize,
    /// Inertia increase at the merge that created this node; 0 for leaves.
    pub delta: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Binary merge tree over `p` voxels: leaves are nodes `0..p`, internal nodes
/// `p..2p-1` in merge-creation order, the last node is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    p: usize,
    nodes: Vec<Node>,
}

impl ClusterTree {
    /// Number of leaves (voxels).
    pub fn p(&self) -> usize {
        self.p
    }

    /// Total number of nodes, `2p - 1`.
    pub fn q(&self) -> usize {
        self.nodes.len()
    }

    /// Root node id (the last-created node).
    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, j: usize) -> Result<&Node> {
        self.nodes.get(j).ok_or(Error::NodeOutOfRange {
            id: j,
            q: self.q(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn is_leaf(&self, j: usize) -> bool {
        j < self.p
    }

    /// All nodes of the subtree rooted at `j`, including `j`, sorted.
    pub fn descendants(&self, j: usize) -> Result<Vec<usize>> {
        self.node(j)?;
        let mut out = Vec::new();
        let mut stack = vec![j];
        while let Some(k) = stack.pop() {
            out.push(k);
            if let Some((a, b)) = self.nodes[k].children {
                stack.push(a);
                stack.push(b);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Depth of node `j`; the root has depth 0.
    pub fn node_depth(&self, j: usize) -> Result<usize> {
        Ok(self.node(j)?.depth)
    }

    /// Maximum node depth (leaves included).
    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Assemble a tree from per-node children pairs and merge costs.
    ///
    /// `children[j]` must be `None` exactly for `j < p`, and internal nodes
    /// must be created in a valid bottom-up order. Used by the file reader
    /// and the reference agglomerator in tests.
    pub fn from_merges(p: usize, children: Vec<Option<(usize, usize)>>, deltas: Vec<f64>) -> Result<Self> {
        let q = children.len();
        if p == 0 || q != 2 * p - 1 || deltas.len() != q {
            return Err(Error::DimensionMismatch {
                context: "tree node count vs 2p-1",
                left: q,
                right: if p == 0 { 1 } else { 2 * p - 1 },
            });
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(q);
        for (j, ch) in children.iter().enumerate() {
            match ch {
                None => {
                    if j >= p {
                        return Err(Error::NodeOutOfRange { id: j, q });
                    }
                    nodes.push(Node {
                        children: None,
                        parent: None,
                        members: vec![j],
                        depth: 0,
                        delta: deltas[j],
                    });
                }
                Some((a, b)) => {
                    let (lo, hi) = (*a.min(b), *a.max(b));
                    if j < p || hi >= j || lo == hi {
                        return Err(Error::NodeOutOfRange { id: j, q });
                    }
                    if nodes[lo].parent.is_some() || nodes[hi].parent.is_some() {
                        return Err(Error::BadModelSpec(format!(
                            "node {lo} or {hi} has two parents"
                        )));
                    }
                    let mut members: Vec<usize> = nodes[lo]
                        .members
                        .iter()
                        .chain(nodes[hi].members.iter())
                        .copied()
                        .collect();
                    members.sort_unstable();
                    nodes[lo].parent = Some(j);
                    nodes[hi].parent = Some(j);
                    nodes.push(Node {
                        children: Some((lo, hi)),
                        parent: None,
                        members,
                        depth: 0,
                        delta: deltas[j],
                    });
                }
            }
        }
        let mut tree = ClusterTree { p, nodes };
        if tree.nodes[tree.root()].members.len() != p {
            return Err(Error::BadModelSpec(
                "root does not contain all voxels".into(),
            ));
        }
        tree.fill_depths();
        Ok(tree)
    }

    fn fill_depths(&mut self) {
        let root = self.root();
        self.nodes[root].depth = 0;
        // Walk top-down; parents are always created after children, so a
        // reverse scan visits parents first.
        for j in (0..self.nodes.len()).rev() {
            if let Some((a, b)) = self.nodes[j].children {
                let d = self.nodes[j].depth + 1;
                self.nodes[a].depth = d;
                self.nodes[b].depth = d;
            }
        }
    }
}

/// Ward merge cost between two clusters given their mean signals and sizes:
/// `|c1||c2| / (|c1| + |c2|) * || <X>_c1 - <X>_c2 ||^2`.
pub fn ward_delta(
    mean1: &Array1<f64>,
    size1: usize,
    mean2: &Array1<f64>,
    size2: usize,
) -> Result<f64> {
    if mean1.len() != mean2.len() {
        return Err(Error::DimensionMismatch {
            context: "cluster mean lengths",
            left: mean1.len(),
            right: mean2.len(),
        });
    }
    let (s1, s2) = (size1 as f64, size2 as f64);
    let mut sq = 0.0;
    for (a, b) in mean1.iter().zip(mean2.iter()) {
        let d = a - b;
        sq += d * d;
    }
    Ok(s1 * s2 / (s1 + s2) * sq)
}

/// Heap entry for a candidate merge; ordered so the smallest
/// `(delta, lo, hi)` pops first. Equal-cost ties therefore break toward the
/// lexicographically smallest pair of creation indices.
#[derive(Debug)]
struct Candidate {
    delta: f64,
    lo: usize,
    hi: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the minimum on top.
        other
            .delta
            .total_cmp(&self.delta)
            .then_with(|| other.lo.cmp(&self.lo))
            .then_with(|| other.hi.cmp(&self.hi))
    }
}

/// Spatially-constrained Ward clustering of the columns of `x` (`n x p`).
///
/// Only cluster pairs joined by at least one adjacency edge are candidates;
/// each merge picks the admissible pair with minimal [`ward_delta`]. The
/// adjacency must form a single connected component, otherwise no full tree
/// exists and an error reports the component count.
pub fn ward_cluster(x: ArrayView2<'_, f64>, adj: &Adjacency) -> Result<ClusterTree> {
    let p = adj.len();
    if x.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "design columns vs adjacency size",
            left: x.ncols(),
            right: p,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "clustering input matrix",
        });
    }
    let components = adj.components();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let q = 2 * p - 1;
    // Per-node cluster state while active.
    let mut means: Vec<Array1<f64>> = (0..p).map(|j| x.column(j).to_owned()).collect();
    means.reserve(q - p);
    let mut sizes: Vec<usize> = vec![1; p];
    sizes.reserve(q - p);
    let mut children: Vec<Option<(usize, usize)>> = vec![None; p];
    let mut deltas: Vec<f64> = vec![0.0; p];
    let mut active: Vec<bool> = vec![true; p];
    // Cluster-level neighbor sets, by node id.
    let mut nbrs: Vec<BTreeSet<usize>> = (0..p)
        .map(|v| adj.neighbors(v).iter().copied().collect())
        .collect();

    let mut heap = BinaryHeap::new();
    for u in 0..p {
        for &v in adj.neighbors(u) {
            if u < v {
                heap.push(Candidate {
                    delta: ward_delta(&means[u], 1, &means[v], 1)?,
                    lo: u,
                    hi: v,
                });
            }
        }
    }

    while children.len() < q {
        let cand = loop {
            match heap.pop() {
                Some(c) if active[c.lo] && active[c.hi] => break c,
                Some(_) => continue, // stale entry for a merged cluster
                None => {
                    // Unreachable for connected adjacency; kept as a guard.
                    return Err(Error::Disconnected { components: 2 });
                }
            }
        };
        let (a, b) = (cand.lo, cand.hi);
        let m = children.len();
        let (sa, sb) = (sizes[a] as f64, sizes[b] as f64);
        let mean = (&means[a] * sa + &means[b] * sb) / (sa + sb);
        means.push(mean);
        sizes.push(sizes[a] + sizes[b]);
        children.push(Some((a, b)));
        deltas.push(cand.delta);
        active[a] = false;
        active[b] = false;
        active.push(true);

        // The new cluster borders everything either child bordered.
        let mut merged: BTreeSet<usize> = nbrs[a].union(&nbrs[b]).copied().collect();
        merged.remove(&a);
        merged.remove(&b);
        merged.retain(|&c| active[c]);
        for &c in &merged {
            nbrs[c].remove(&a);
            nbrs[c].remove(&b);
            nbrs[c].insert(m);
            heap.push(Candidate {
                delta: ward_delta(&means[m], sizes[m], &means[c], sizes[c])?,
                lo: c.min(m),
                hi: c.max(m),
            });
        }
        nbrs[a].clear();
        nbrs[b].clear();
        nbrs.push(merged);
    }

    ClusterTree::from_merges(p, children, deltas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMask;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, Array2};
    use rand::Rng;

    fn line_adjacency(p: usize) -> Adjacency {
        Adjacency::from_mask(&GridMask::full(p, 1, 1).unwrap()).unwrap()
    }

    #[test]
    fn delta_of_separated_singletons() {
        let d = ward_delta(&arr1(&[0.0, 0.0]), 1, &arr1(&[2.0, 0.0]), 1).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn delta_of_identical_means_is_zero() {
        let m = arr1(&[1.5, -3.0, 2.0]);
        assert_eq!(ward_delta(&m, 4, &m, 7).unwrap(), 0.0);
    }

    #[test]
    fn delta_rejects_mismatched_means() {
        let e = ward_delta(&arr1(&[0.0]), 1, &arr1(&[0.0, 1.0]), 1);
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    /// Second form of the merge cost equals the within-cluster inertia
    /// difference computed directly from the columns.
    #[test]
    fn delta_matches_inertia_difference() {
        let mut rng = crate::rng::stream(11, "ward-delta-forms");
        for _ in 0..50 {
            let n = rng.random_range(1..=5);
            let p1 = rng.random_range(1..=4);
            let p2 = rng.random_range(1..=4);
            let col = |rng: &mut rand_chacha::ChaCha20Rng| {
                Array1::from_iter((0..n).map(|_| rng.random_range(-2.0..2.0)))
            };
            let c1: Vec<Array1<f64>> = (0..p1).map(|_| col(&mut rng)).collect();
            let c2: Vec<Array1<f64>> = (0..p2).map(|_| col(&mut rng)).collect();

            let mean_of = |cols: &[Array1<f64>]| {
                let mut m = Array1::zeros(n);
                for c in cols {
                    m += c;
                }
                m / cols.len() as f64
            };
            let inertia = |cols: &[Array1<f64>]| {
                let m = mean_of(cols);
                cols.iter()
                    .map(|c| (c - &m).mapv(|v| v * v).sum())
                    .sum::<f64>()
            };
            let both: Vec<Array1<f64>> = c1.iter().chain(c2.iter()).cloned().collect();
            let first_form = inertia(&both) - inertia(&c1) - inertia(&c2);
            let second_form = ward_delta(&mean_of(&c1), p1, &mean_of(&c2), p2).unwrap();
            assert_abs_diff_eq!(first_form, second_form, epsilon = 1e-10);
        }
    }

    #[test]
    fn single_voxel_tree_is_its_own_root() {
        let x = Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap();
        let tree = ward_cluster(x.view(), &line_adjacency(1)).unwrap();
        assert_eq!(tree.q(), 1);
        assert_eq!(tree.root(), 0);
        assert!(tree.is_leaf(0));
        assert_eq!(tree.node_depth(0).unwrap(), 0);
    }

    #[test]
    fn three_voxel_line_merges_cheapest_first() {
        // Values (0, 0, 10): admissible first merges are {0,1} at cost 0 and
        // {1,2} at cost 50; then the pair {0,1} joins {2} at 2/3 * 100.
        let x = Array2::from_shape_vec((1, 3), vec![0.0, 0.0, 10.0]).unwrap();
        let tree = ward_cluster(x.view(), &line_adjacency(3)).unwrap();
        assert_eq!(tree.node(3).unwrap().children, Some((0, 1)));
        assert_abs_diff_eq!(tree.node(3).unwrap().delta, 0.0, epsilon = 1e-12);
        assert_eq!(tree.node(4).unwrap().children, Some((2, 3)));
        assert_abs_diff_eq!(tree.node(4).unwrap().delta, 200.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn balanced_tree_on_paired_line_data() {
        // (0, 1, 10, 11): merges {0,1} and {2,3} (both cost 0.5, tie broken
        // toward the smaller pair), leaves end at depth 2.
        let x = Array2::from_shape_vec((1, 4), vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let tree = ward_cluster(x.view(), &line_adjacency(4)).unwrap();
        assert_eq!(tree.node(4).unwrap().children, Some((0, 1)));
        assert_eq!(tree.node(5).unwrap().children, Some((2, 3)));
        assert_eq!(tree.node(6).unwrap().children, Some((4, 5)));
        for leaf in 0..4 {
            assert_eq!(tree.node_depth(leaf).unwrap(), 2);
        }
        assert_eq!(tree.node_depth(tree.root()).unwrap(), 0);
        assert_eq!(tree.node_depth(4).unwrap(), 1);
    }

    #[test]
    fn descendants_of_leaf_and_root() {
        let x = Array2::from_shape_vec((1, 3), vec![0.0, 0.0, 10.0]).unwrap();
        let tree = ward_cluster(x.view(), &line_adjacency(3)).unwrap();
        assert_eq!(tree.descendants(1).unwrap(), vec![1]);
        assert_eq!(tree.descendants(tree.root()).unwrap(), vec![0, 1, 2, 3, 4]);
        // The parcel over voxels {0,1} carries exactly itself and those voxels.
        assert_eq!(tree.descendants(3).unwrap(), vec![0, 1, 3]);
        assert!(matches!(
            tree.descendants(9),
            Err(Error::NodeOutOfRange { id: 9, .. })
        ));
    }

    #[test]
    fn disconnected_adjacency_is_refused_with_component_count() {
        let mask = GridMask::new((3, 1, 1), vec![true, false, true]).unwrap();
        let adj = Adjacency::from_mask(&mask).unwrap();
        let x = Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            ward_cluster(x.view(), &adj),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn non_finite_input_is_refused() {
        let x = Array2::from_shape_vec((1, 2), vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(
            ward_cluster(x.view(), &line_adjacency(2)),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn identical_inputs_yield_identical_trees() {
        let mut rng = crate::rng::stream(3, "ward-determinism");
        let mask = GridMask::full(4, 4, 1).unwrap();
        let adj = Adjacency::from_mask(&mask).unwrap();
        let x = Array2::from_shape_fn((6, 16), |_| rng.random_range(-1.0..1.0));
        let t1 = ward_cluster(x.view(), &adj).unwrap();
        let t2 = ward_cluster(x.view(), &adj).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn merge_costs_replay_from_member_sets() {
        let mut rng = crate::rng::stream(5, "ward-replay");
        let mask = GridMask::full(5, 3, 1).unwrap();
        let adj = Adjacency::from_mask(&mask).unwrap();
        let x = Array2::from_shape_fn((4, 15), |_| rng.random_range(-1.0..1.0));
        let tree = ward_cluster(x.view(), &adj).unwrap();
        for j in tree.p()..tree.q() {
            let (a, b) = tree.node(j).unwrap().children.unwrap();
            let mean_of = |ids: &[usize]| {
                let mut m = Array1::zeros(x.nrows());
                for &v in ids {
                    m += &x.column(v);
                }
                m / ids.len() as f64
            };
            let na = tree.node(a).unwrap();
            let nb = tree.node(b).unwrap();
            let replayed = ward_delta(
                &mean_of(&na.members),
                na.size(),
                &mean_of(&nb.members),
                nb.size(),
            )
            .unwrap();
            assert_abs_diff_eq!(replayed, tree.node(j).unwrap().delta, epsilon = 1e-10);
        }
    }

    #[test]
    fn every_parcel_is_connected() {
        let mut rng = crate::rng::stream(9, "ward-parcels");
        for (nx, ny) in [(4, 4), (8, 8)] {
            let mask = GridMask::full(nx, ny, 1).unwrap();
            let adj = Adjacency::from_mask(&mask).unwrap();
            let x = Array2::from_shape_fn((5, nx * ny), |_| rng.random_range(-1.0..1.0));
            let tree = ward_cluster(x.view(), &adj).unwrap();
            for j in 0..tree.q() {
                let members = &tree.node(j).unwrap().members;
                let inside: std::collections::HashSet<usize> = members.iter().copied().collect();
                // BFS over adjacency restricted to the parcel.
                let mut seen = std::collections::HashSet::new();
                let mut stack = vec![members[0]];
                seen.insert(members[0]);
                while let Some(v) = stack.pop() {
                    for &u in adj.neighbors(v) {
                        if inside.contains(&u) && seen.insert(u) {
                            stack.push(u);
                        }
                    }
                }
                assert_eq!(seen.len(), members.len(), "parcel {j} disconnected");
            }
        }
    }
}
