//! Grid topology: masks over 2D/3D cell grids and axis-adjacency between
//! included cells.
//!
//! Connectivity is axis-only (4-connectivity in 2D, 6-connectivity in 3D);
//! diagonal neighbors are never connected. 2D grids are 3D grids with
//! `nz = 1`, so there is a single code path throughout.

use crate::error::{Error, Result};

/// A rectangular cell grid with a boolean inclusion mask.
///
/// Included cells are assigned voxel ids `0..p` in row-major order
/// (`x` fastest, then `y`, then `z`), which makes the id assignment
/// deterministic for a given mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMask {
    dims: [usize; 3],
    included: Vec<bool>,
    /// cell index -> voxel id for included cells
    cell_to_id: Vec<Option<usize>>,
    /// voxel id -> (x, y, z)
    coords: Vec<[usize; 3]>,
}

impl GridMask {
    /// Build a mask from explicit inclusion flags in row-major cell order.
    pub fn new(dims: (usize, usize, usize), included: Vec<bool>) -> Result<Self> {
        let (nx, ny, nz) = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::BadDims(nx, ny, nz));
        }
        if included.len() != nx * ny * nz {
            return Err(Error::DimensionMismatch {
                context: "mask length vs grid cells",
                left: included.len(),
                right: nx * ny * nz,
            });
        }
        let mut cell_to_id = vec![None; included.len()];
        let mut coords = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let cell = Self::cell_index_of([nx, ny, nz], x, y, z);
                    if included[cell] {
                        cell_to_id[cell] = Some(coords.len());
                        coords.push([x, y, z]);
                    }
                }
            }
        }
        Ok(GridMask {
            dims: [nx, ny, nz],
            included,
            cell_to_id,
            coords,
        })
    }

    /// A fully-included grid.
    pub fn full(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::new((nx, ny, nz), vec![true; nx * ny * nz])
    }

    fn cell_index_of(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
        (z * dims[1] + y) * dims[0] + x
    }

    /// Number of included cells (voxels).
    pub fn p(&self) -> usize {
        self.coords.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dims[0], self.dims[1], self.dims[2])
    }

    /// Inclusion flags in row-major cell order.
    pub fn included(&self) -> &[bool] {
        &self.included
    }

    /// Coordinates of a voxel id.
    pub fn coord(&self, v: usize) -> Result<[usize; 3]> {
        self.coords
            .get(v)
            .copied()
            .ok_or(Error::VoxelOutOfRange { id: v, p: self.p() })
    }

    /// Voxel id at a coordinate, if the cell is in range and included.
    pub fn id_at(&self, x: usize, y: usize, z: usize) -> Option<usize> {
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        self.cell_to_id[Self::cell_index_of(self.dims, x, y, z)]
    }

    /// Included axis-adjacent voxels of `v`, in increasing id order.
    pub fn neighbors(&self, v: usize) -> Result<Vec<usize>> {
        let [x, y, z] = self.coord(v)?;
        let mut out = Vec::with_capacity(6);
        let mut push = |ox: i64, oy: i64, oz: i64| {
            let (nx, ny, nz) = (x as i64 + ox, y as i64 + oy, z as i64 + oz);
            if nx >= 0 && ny >= 0 && nz >= 0 {
                if let Some(id) = self.id_at(nx as usize, ny as usize, nz as usize) {
                    out.push(id);
                }
            }
        };
        push(-1, 0, 0);
        push(1, 0, 0);
        push(0, -1, 0);
        push(0, 1, 0);
        push(0, 0, -1);
        push(0, 0, 1);
        out.sort_unstable();
        Ok(out)
    }
}

/// Sparse symmetric adjacency over voxel ids, with no self-edges.
#[derive(Debug, Clone)]
pub struct Adjacency {
    nbrs: Vec<Vec<usize>>,
    n_edges: usize,
}

impl Adjacency {
    /// Build the voxel adjacency of a mask.
    pub fn from_mask(mask: &GridMask) -> Result<Self> {
        if mask.p() == 0 {
            return Err(Error::EmptyMask);
        }
        let mut nbrs = Vec::with_capacity(mask.p());
        let mut twice_edges = 0;
        for v in 0..mask.p() {
            let ns = mask.neighbors(v)?;
            twice_edges += ns.len();
            nbrs.push(ns);
        }
        Ok(Adjacency {
            nbrs,
            n_edges: twice_edges / 2,
        })
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.nbrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nbrs.is_empty()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Neighbors of voxel `v`, in increasing id order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.nbrs[v]
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &u in &self.nbrs[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        count
    }
}
