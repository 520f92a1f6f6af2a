//! Per-neighborhood constructions: multiscale partition of unity, snapshot
//! spaces, and the local spectral problem that orders snapshot combinations.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, assemble_weighted_mass, generalized_eig, Cholesky, CsrMatrix, DenseMatrix,
    EigenPairs,
};
use crate::field::CoefficientField;
use crate::grid::{Patch, StructuredGrids};

/// Dirichlet problem for `-div(kappa grad u) = 0` on a patch, boundary = patch perimeter.
///
/// The interior block is factored once so many boundary data can be extended.
#[derive(Debug, Clone)]
pub struct LocalDirichletSolver {
    n: usize,
    interior: Vec<usize>,
    perimeter: Vec<usize>,
    chol: Option<Cholesky>,
    a_ib: DenseMatrix,
}

impl LocalDirichletSolver {
    pub fn new(grids: &StructuredGrids, field: &CoefficientField, patch: &Patch) -> Result<Self> {
        let a = assemble_stiffness(grids, field, patch, &[])?;
        Self::from_stiffness(&a, patch)
    }

    pub fn from_stiffness(a: &CsrMatrix, patch: &Patch) -> Result<Self> {
        let interior = patch.interior_nodes();
        let perimeter = patch.perimeter_nodes();
        let chol = if interior.is_empty() {
            None
        } else {
            Some(Cholesky::factor_dense(&a.dense_block(&interior, &interior))?)
        };
        Ok(LocalDirichletSolver {
            n: patch.num_nodes(),
            a_ib: a.dense_block(&interior, &perimeter),
            interior,
            perimeter,
            chol,
        })
    }

    pub fn perimeter(&self) -> &[usize] {
        &self.perimeter
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Harmonic extension of values given on the perimeter (in perimeter order).
    pub fn extend(&self, boundary: &[f64]) -> Vec<f64> {
        assert_eq!(boundary.len(), self.perimeter.len());
        let mut out = vec![0.0; self.n];
        for (&p, &v) in self.perimeter.iter().zip(boundary) {
            out[p] = v;
        }
        if let Some(chol) = &self.chol {
            let rhs: Vec<f64> = self.a_ib.mul_vec(boundary).into_iter().map(|v| -v).collect();
            let x = chol.solve(&rhs);
            for (&p, v) in self.interior.iter().zip(x) {
                out[p] = v;
            }
        }
        out
    }
}

/// Multiscale partition of unity: one function per coarse node, stored on
/// the node's closed neighborhood in patch-local numbering.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    values: Vec<Vec<f64>>,
    patches: Vec<Patch>,
}

impl PartitionOfUnity {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn local(&self, node: usize) -> &[f64] {
        &self.values[node]
    }

    /// The function of coarse node `node` as a full fine-grid nodal vector.
    pub fn global(&self, grids: &StructuredGrids, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; grids.num_fine_nodes()];
        let patch = &self.patches[node];
        for (l, &v) in self.values[node].iter().enumerate() {
            out[patch.global(l)] = v;
        }
        out
    }
}

/// Bilinear hat of the coarse-cell vertex `corner` (SW, SE, NE, NW) at a patch node.
fn corner_hat(patch: &Patch, local: usize, corner: usize) -> f64 {
    let (ix, iy) = patch.coords(local);
    let xi = (ix - patch.x0) as f64 / patch.cells_x() as f64;
    let eta = (iy - patch.y0) as f64 / patch.cells_y() as f64;
    match corner {
        0 => (1.0 - xi) * (1.0 - eta),
        1 => xi * (1.0 - eta),
        2 => xi * eta,
        _ => (1.0 - xi) * eta,
    }
}

/// Solves the kappa-harmonic vertex problems on every coarse cell and stitches
/// them into one function per coarse node.
pub fn build_pou(grids: &StructuredGrids, field: &CoefficientField) -> Result<PartitionOfUnity> {
    let patches: Vec<Patch> = grids.neighborhoods().iter().map(|nb| nb.patch).collect();
    let mut values: Vec<Vec<f64>> = patches.iter().map(|p| vec![0.0; p.num_nodes()]).collect();

    let per_cell: Vec<[Vec<f64>; 4]> = (0..grids.num_coarse_cells())
        .into_par_iter()
        .map(|k| {
            let patch = grids.coarse_cell_patch(k);
            let solver = LocalDirichletSolver::new(grids, field, &patch)?;
            Ok(std::array::from_fn(|corner| {
                let data: Vec<f64> = solver
                    .perimeter()
                    .iter()
                    .map(|&l| corner_hat(&patch, l, corner))
                    .collect();
                solver.extend(&data)
            }))
        })
        .collect::<Result<_>>()?;

    for (k, solutions) in per_cell.into_iter().enumerate() {
        let cell_patch = grids.coarse_cell_patch(k);
        for (corner, node) in grids.coarse_cell_vertices(k).into_iter().enumerate() {
            let target = &patches[node];
            for (l, &v) in solutions[corner].iter().enumerate() {
                let (ix, iy) = cell_patch.coords(l);
                values[node][target.local(ix, iy)] = v;
            }
        }
    }
    Ok(PartitionOfUnity { values, patches })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    /// Kappa-harmonic extensions of fine boundary deltas on the neighborhood boundary.
    Harmonic,
    /// Fine-grid unit vectors of the neighborhood nodes not on the domain boundary.
    Nodal,
}

impl SnapshotKind {
    /// Initial number of eigenfunctions per neighborhood.
    pub fn default_initial_count(self) -> usize {
        match self {
            SnapshotKind::Harmonic => 4,
            SnapshotKind::Nodal => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SnapshotKind::Harmonic => "harmonic",
            SnapshotKind::Nodal => "nodal",
        }
    }
}

impl fmt::Display for SnapshotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SnapshotKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "harmonic" => Ok(SnapshotKind::Harmonic),
            "nodal" => Ok(SnapshotKind::Nodal),
            _ => Err(format!("unknown snapshot family `{s}` (expected harmonic or nodal)")),
        }
    }
}

/// Columns = harmonic extensions of each perimeter delta (patch-local numbering).
pub fn build_snapshots_harmonic(
    grids: &StructuredGrids,
    field: &CoefficientField,
    node: usize,
) -> Result<DenseMatrix> {
    check_node(grids, node)?;
    let patch = grids.neighborhood(node).patch;
    let solver = LocalDirichletSolver::new(grids, field, &patch)?;
    let w = solver.perimeter().len();
    let mut snaps = DenseMatrix::zeros(patch.num_nodes(), w);
    let mut data = vec![0.0; w];
    for j in 0..w {
        data[j] = 1.0;
        snaps.set_column(j, &solver.extend(&data));
        data[j] = 0.0;
    }
    Ok(snaps)
}

/// Columns = unit vectors of the neighborhood nodes not on the domain boundary.
pub fn build_snapshots_nodal(grids: &StructuredGrids, node: usize) -> Result<DenseMatrix> {
    check_node(grids, node)?;
    let patch = grids.neighborhood(node).patch;
    let free: Vec<usize> = (0..patch.num_nodes())
        .filter(|&l| !grids.is_boundary_node(patch.global(l)))
        .collect();
    let mut snaps = DenseMatrix::zeros(patch.num_nodes(), free.len());
    for (j, &l) in free.iter().enumerate() {
        snaps[(l, j)] = 1.0;
    }
    Ok(snaps)
}

pub fn build_snapshots(
    grids: &StructuredGrids,
    field: &CoefficientField,
    kind: SnapshotKind,
    node: usize,
) -> Result<DenseMatrix> {
    match kind {
        SnapshotKind::Harmonic => build_snapshots_harmonic(grids, field, node),
        SnapshotKind::Nodal => build_snapshots_nodal(grids, node),
    }
}

fn check_node(grids: &StructuredGrids, node: usize) -> Result<()> {
    if node >= grids.num_coarse_nodes() {
        return Err(Error::invalid(format!(
            "coarse node {node} out of range (N = {})",
            grids.num_coarse_nodes()
        )));
    }
    Ok(())
}

/// Snapshot space, local spectral decomposition and active eigenfunction count
/// of one coarse neighborhood.
#[derive(Debug, Clone)]
pub struct NeighborhoodSpace {
    pub node: usize,
    pub patch: Patch,
    pub snapshots: DenseMatrix,
    pub a_off: DenseMatrix,
    pub s_off: DenseMatrix,
    pub eig: EigenPairs,
    /// Eigenfunctions in patch-local fine coordinates, one per column.
    pub offline: DenseMatrix,
    active: usize,
}

impl NeighborhoodSpace {
    /// Snapshot count `W_i`, the maximum number of eigenfunctions.
    pub fn max_count(&self) -> usize {
        self.snapshots.cols()
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn saturated(&self) -> bool {
        self.active >= self.max_count()
    }

    /// The first unused eigenvalue, if any.
    pub fn next_eigenvalue(&self) -> Option<f64> {
        self.eig.values.get(self.active).copied()
    }

    /// Sets the active count, clamped to `[1, W_i]`.
    pub fn set_active(&mut self, count: usize) {
        self.active = count.clamp(1, self.max_count().max(1));
    }

    /// Adds `s` eigenfunctions; returns `true` if the request was clamped at `W_i`.
    pub fn enrich(&mut self, s: usize) -> bool {
        let wanted = self.active + s;
        self.active = wanted.min(self.max_count());
        wanted > self.max_count()
    }

    /// Smallest `s >= s_min` with `lambda_{l+s+1} / lambda_{l+1} >= gap_ratio`,
    /// or everything that is left when no eigenvalue qualifies.
    pub fn increment_for_gap(&self, s_min: usize, gap_ratio: f64) -> usize {
        let remaining = self.max_count() - self.active.min(self.max_count());
        let Some(base) = self.next_eigenvalue() else {
            return s_min;
        };
        if !(base > 0.0) {
            return s_min;
        }
        let values = &self.eig.values;
        (s_min..remaining)
            .find(|&s| values[self.active + s] / base >= gap_ratio)
            .unwrap_or(remaining.max(s_min))
    }
}

/// Assembles the local pair over the neighborhood, projects it onto the
/// snapshots and solves the spectral problem.
pub fn build_neighborhood_space(
    grids: &StructuredGrids,
    field: &CoefficientField,
    snapshots: DenseMatrix,
    node: usize,
    initial_count: usize,
) -> Result<NeighborhoodSpace> {
    check_node(grids, node)?;
    let patch = grids.neighborhood(node).patch;
    if snapshots.rows() != patch.num_nodes() || snapshots.cols() == 0 {
        return Err(Error::invalid(format!(
            "snapshot matrix is {}x{}, neighborhood {node} has {} nodes",
            snapshots.rows(),
            snapshots.cols(),
            patch.num_nodes()
        )));
    }
    let a_local = assemble_stiffness(grids, field, &patch, &[])?;
    let s_local = assemble_weighted_mass(grids, field, &patch)?;
    let a_off = a_local.project(&snapshots);
    let s_off = s_local.project(&snapshots);
    let eig = generalized_eig(&a_off, &s_off)?;
    let offline = snapshots.matmul(&eig.vectors);
    let mut space = NeighborhoodSpace {
        node,
        patch,
        snapshots,
        a_off,
        s_off,
        eig,
        offline,
        active: 0,
    };
    space.set_active(initial_count);
    Ok(space)
}

/// Neighborhood spaces for every coarse node, built in parallel.
pub fn build_all_spaces(
    grids: &StructuredGrids,
    field: &CoefficientField,
    kind: SnapshotKind,
    initial_count: usize,
) -> Result<Vec<NeighborhoodSpace>> {
    (0..grids.num_coarse_nodes())
        .into_par_iter()
        .map(|i| {
            let snaps = build_snapshots(grids, field, kind, i)?;
            build_neighborhood_space(grids, field, snaps, i, initial_count)
        })
        .collect()
}
