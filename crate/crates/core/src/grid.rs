//! Tensor-product coarse and fine grids on the unit square.
//!
//! Fine nodes are numbered lexicographically by `(y, x)`: node `(ix, iy)` has
//! index `iy * (nx_fine + 1) + ix`. Fine cells and coarse nodes/cells follow
//! the same convention. Every coarse neighborhood and every coarse cell is an
//! axis-aligned block of fine cells, described by a [`Patch`].

use crate::error::{Error, Result};

/// Rectangular block of fine cells, addressed by its inclusive fine-node range.
///
/// Local node numbering inside a patch is lexicographic by `(y, x)` as well,
/// so local and global orderings agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    /// Number of fine cells per row of the whole domain.
    fine_cells_x: usize,
}

impl Patch {
    pub fn nodes_x(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn nodes_y(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_x() * self.nodes_y()
    }

    pub fn cells_x(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn cells_y(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn num_cells(&self) -> usize {
        self.cells_x() * self.cells_y()
    }

    /// Local index of the node with global lattice coordinates `(ix, iy)`.
    #[inline]
    pub fn local(&self, ix: usize, iy: usize) -> usize {
        (iy - self.y0) * self.nodes_x() + (ix - self.x0)
    }

    /// Global lattice coordinates of a local node.
    #[inline]
    pub fn coords(&self, local: usize) -> (usize, usize) {
        let nx = self.nodes_x();
        (self.x0 + local % nx, self.y0 + local / nx)
    }

    #[inline]
    pub fn global(&self, local: usize) -> usize {
        let (ix, iy) = self.coords(local);
        iy * (self.fine_cells_x + 1) + ix
    }

    pub fn local_of_global(&self, node: usize) -> Option<usize> {
        let stride = self.fine_cells_x + 1;
        let (ix, iy) = (node % stride, node / stride);
        self.contains(ix, iy).then(|| self.local(ix, iy))
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        (self.x0..=self.x1).contains(&ix) && (self.y0..=self.y1).contains(&iy)
    }

    pub fn global_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|l| self.global(l)).collect()
    }

    pub fn is_perimeter(&self, local: usize) -> bool {
        let (ix, iy) = self.coords(local);
        ix == self.x0 || ix == self.x1 || iy == self.y0 || iy == self.y1
    }

    /// Local indices of nodes on the patch boundary, in lexicographic order.
    pub fn perimeter_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&l| self.is_perimeter(l))
            .collect()
    }

    /// Local indices of nodes strictly inside the patch, in lexicographic order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&l| !self.is_perimeter(l))
            .collect()
    }

    /// Fine cells of the patch as `(global cell index, local SW node, cell x, cell y)`.
    pub fn cells(&self) -> impl Iterator<Item = PatchCell> + '_ {
        (self.y0..self.y1).flat_map(move |cy| {
            (self.x0..self.x1).map(move |cx| PatchCell {
                cell: cy * self.fine_cells_x + cx,
                sw: self.local(cx, cy),
                cx,
                cy,
            })
        })
    }

    /// Local node indices of a cell's corners in the order SW, SE, NE, NW.
    #[inline]
    pub fn cell_nodes(&self, cell: &PatchCell) -> [usize; 4] {
        let nx = self.nodes_x();
        [cell.sw, cell.sw + 1, cell.sw + nx + 1, cell.sw + nx]
    }

    pub fn intersection(&self, other: &Patch) -> Option<Patch> {
        let x0 = self.x0.max(other.x0);
        let x1 = self.x1.min(other.x1);
        let y0 = self.y0.max(other.y0);
        let y1 = self.y1.min(other.y1);
        (x0 <= x1 && y0 <= y1).then_some(Patch {
            x0,
            x1,
            y0,
            y1,
            fine_cells_x: self.fine_cells_x,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PatchCell {
    pub cell: usize,
    pub sw: usize,
    pub cx: usize,
    pub cy: usize,
}

/// Coarse-node neighborhood: all coarse cells having the node as a vertex.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub node: usize,
    /// Coarse cell indices in lexicographic order.
    pub coarse_cells: Vec<usize>,
    pub patch: Patch,
}

#[derive(Debug, Clone)]
pub struct StructuredGrids {
    pub nx_coarse: usize,
    pub ny_coarse: usize,
    pub nx_sub: usize,
    pub ny_sub: usize,
    neighborhoods: Vec<Neighborhood>,
}

impl StructuredGrids {
    pub fn new(nx_coarse: usize, ny_coarse: usize, nx_sub: usize, ny_sub: usize) -> Result<Self> {
        if nx_coarse == 0 || ny_coarse == 0 || nx_sub == 0 || ny_sub == 0 {
            return Err(Error::invalid(format!(
                "grid counts must be >= 1, got coarse {nx_coarse}x{ny_coarse}, sub {nx_sub}x{ny_sub}"
            )));
        }
        let mut grids = StructuredGrids {
            nx_coarse,
            ny_coarse,
            nx_sub,
            ny_sub,
            neighborhoods: Vec::new(),
        };
        grids.neighborhoods = (0..grids.num_coarse_nodes())
            .map(|i| grids.make_neighborhood(i))
            .collect();
        Ok(grids)
    }

    fn make_neighborhood(&self, node: usize) -> Neighborhood {
        let (ci, cj) = self.coarse_node_coords(node);
        let kx = ci.saturating_sub(1)..ci.min(self.nx_coarse - 1) + 1;
        let ky = cj.saturating_sub(1)..cj.min(self.ny_coarse - 1) + 1;
        let coarse_cells = ky
            .clone()
            .flat_map(|ky| kx.clone().map(move |kx| ky * self.nx_coarse + kx))
            .collect();
        let patch = Patch {
            x0: ci.saturating_sub(1) * self.nx_sub,
            x1: (ci + 1).min(self.nx_coarse) * self.nx_sub,
            y0: cj.saturating_sub(1) * self.ny_sub,
            y1: (cj + 1).min(self.ny_coarse) * self.ny_sub,
            fine_cells_x: self.fine_cells_x(),
        };
        Neighborhood {
            node,
            coarse_cells,
            patch,
        }
    }

    pub fn fine_cells_x(&self) -> usize {
        self.nx_coarse * self.nx_sub
    }

    pub fn fine_cells_y(&self) -> usize {
        self.ny_coarse * self.ny_sub
    }

    pub fn num_fine_cells(&self) -> usize {
        self.fine_cells_x() * self.fine_cells_y()
    }

    pub fn fine_nodes_x(&self) -> usize {
        self.fine_cells_x() + 1
    }

    pub fn fine_nodes_y(&self) -> usize {
        self.fine_cells_y() + 1
    }

    pub fn num_fine_nodes(&self) -> usize {
        self.fine_nodes_x() * self.fine_nodes_y()
    }

    pub fn coarse_nodes_x(&self) -> usize {
        self.nx_coarse + 1
    }

    pub fn coarse_nodes_y(&self) -> usize {
        self.ny_coarse + 1
    }

    pub fn num_coarse_nodes(&self) -> usize {
        self.coarse_nodes_x() * self.coarse_nodes_y()
    }

    pub fn num_coarse_cells(&self) -> usize {
        self.nx_coarse * self.ny_coarse
    }

    /// Coarse mesh sizes `(H_x, H_y)`.
    pub fn coarse_h(&self) -> (f64, f64) {
        (1.0 / self.nx_coarse as f64, 1.0 / self.ny_coarse as f64)
    }

    /// Fine mesh sizes `(h_x, h_y)`.
    pub fn fine_h(&self) -> (f64, f64) {
        (
            1.0 / self.fine_cells_x() as f64,
            1.0 / self.fine_cells_y() as f64,
        )
    }

    pub fn coarse_node_coords(&self, node: usize) -> (usize, usize) {
        (node % self.coarse_nodes_x(), node / self.coarse_nodes_x())
    }

    pub fn fine_node(&self, ix: usize, iy: usize) -> usize {
        iy * self.fine_nodes_x() + ix
    }

    pub fn fine_node_coords(&self, node: usize) -> (usize, usize) {
        (node % self.fine_nodes_x(), node / self.fine_nodes_x())
    }

    /// Physical position of a fine node.
    pub fn fine_node_position(&self, node: usize) -> (f64, f64) {
        let (ix, iy) = self.fine_node_coords(node);
        let (hx, hy) = self.fine_h();
        (ix as f64 * hx, iy as f64 * hy)
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (ix, iy) = self.fine_node_coords(node);
        ix == 0 || iy == 0 || ix == self.fine_cells_x() || iy == self.fine_cells_y()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_fine_nodes())
            .filter(|&p| self.is_boundary_node(p))
            .collect()
    }

    /// Block of fine cells `[x0, x1) x [y0, y1)` given by inclusive node ranges.
    pub fn patch(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> Result<Patch> {
        if x0 > x1 || y0 > y1 || x1 > self.fine_cells_x() || y1 > self.fine_cells_y() {
            return Err(Error::invalid(format!(
                "patch [{x0},{x1}]x[{y0},{y1}] outside the {}x{} fine grid",
                self.fine_cells_x(),
                self.fine_cells_y()
            )));
        }
        Ok(Patch {
            x0,
            x1,
            y0,
            y1,
            fine_cells_x: self.fine_cells_x(),
        })
    }

    /// The whole domain as a single patch.
    pub fn domain(&self) -> Patch {
        Patch {
            x0: 0,
            x1: self.fine_cells_x(),
            y0: 0,
            y1: self.fine_cells_y(),
            fine_cells_x: self.fine_cells_x(),
        }
    }

    pub fn coarse_cell_patch(&self, cell: usize) -> Patch {
        let (kx, ky) = (cell % self.nx_coarse, cell / self.nx_coarse);
        Patch {
            x0: kx * self.nx_sub,
            x1: (kx + 1) * self.nx_sub,
            y0: ky * self.ny_sub,
            y1: (ky + 1) * self.ny_sub,
            fine_cells_x: self.fine_cells_x(),
        }
    }

    /// Coarse node indices at the SW, SE, NE, NW corners of a coarse cell.
    pub fn coarse_cell_vertices(&self, cell: usize) -> [usize; 4] {
        let (kx, ky) = (cell % self.nx_coarse, cell / self.nx_coarse);
        let n = self.coarse_nodes_x();
        let sw = ky * n + kx;
        [sw, sw + 1, sw + n + 1, sw + n]
    }

    /// Coarse cell containing a fine cell.
    pub fn coarse_cell_of(&self, fine_cell: usize) -> usize {
        let (cx, cy) = (fine_cell % self.fine_cells_x(), fine_cell / self.fine_cells_x());
        (cy / self.ny_sub) * self.nx_coarse + cx / self.nx_sub
    }

    pub fn neighborhood(&self, node: usize) -> &Neighborhood {
        &self.neighborhoods[node]
    }

    pub fn neighborhoods(&self) -> &[Neighborhood] {
        &self.neighborhoods
    }

    /// Coarse nodes whose neighborhoods share at least one coarse cell with `node`'s.
    pub fn overlapping_nodes(&self, node: usize) -> Vec<usize> {
        let (ci, cj) = self.coarse_node_coords(node);
        let mut out = Vec::with_capacity(9);
        for j in cj.saturating_sub(1)..=(cj + 1).min(self.ny_coarse) {
            for i in ci.saturating_sub(1)..=(ci + 1).min(self.nx_coarse) {
                out.push(j * self.coarse_nodes_x() + i);
            }
        }
        out
    }
}

/// Global fine nodes of the closed neighborhood and of its interior.
pub fn neighborhood_fine_dofs(grids: &StructuredGrids, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if i >= grids.num_coarse_nodes() {
        return Err(Error::invalid(format!(
            "coarse node {i} out of range (N = {})",
            grids.num_coarse_nodes()
        )));
    }
    let patch = grids.neighborhood(i).patch;
    let all = patch.global_nodes();
    let interior = patch.interior_nodes().into_iter().map(|l| patch.global(l)).collect();
    Ok((all, interior))
}
