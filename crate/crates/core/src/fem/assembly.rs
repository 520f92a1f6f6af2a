//! Q1 element matrices and assembly over blocks of fine cells.
//!
//! Coefficients are constant per fine cell, so element integrals are taken in
//! closed form as tensor products of the 1D linear-element matrices.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::{Patch, StructuredGrids};

/// Corner offsets `(dx, dy)` in SW, SE, NE, NW order.
const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

fn stiffness_1d(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

fn mass_1d(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

/// Element stiffness of a unit-coefficient `hx x hy` cell, nodes SW, SE, NE, NW.
pub fn element_stiffness(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let (kx, ky, mx, my) = (stiffness_1d(hx), stiffness_1d(hy), mass_1d(hx), mass_1d(hy));
    let mut k = [[0.0; 4]; 4];
    for (a, &(ax, ay)) in CORNERS.iter().enumerate() {
        for (b, &(bx, by)) in CORNERS.iter().enumerate() {
            k[a][b] = kx[ax][bx] * my[ay][by] + mx[ax][bx] * ky[ay][by];
        }
    }
    k
}

/// Element mass of a unit-weight `hx x hy` cell, nodes SW, SE, NE, NW.
pub fn element_mass(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let (mx, my) = (mass_1d(hx), mass_1d(hy));
    let mut m = [[0.0; 4]; 4];
    for (a, &(ax, ay)) in CORNERS.iter().enumerate() {
        for (b, &(bx, by)) in CORNERS.iter().enumerate() {
            m[a][b] = mx[ax][bx] * my[ay][by];
        }
    }
    m
}

/// Assembles `sum_cells coeff[cell] * element` over `patch`, in patch-local numbering.
pub fn assemble_cellwise(
    patch: &Patch,
    coeff: &[f64],
    element: &[[f64; 4]; 4],
) -> Result<CsrMatrix> {
    if patch.num_cells() == 0 {
        return Err(Error::invalid("assembly over an empty cell block"));
    }
    let mut triplets = Vec::with_capacity(16 * patch.num_cells());
    for cell in patch.cells() {
        let c = coeff[cell.cell];
        let nodes = patch.cell_nodes(&cell);
        for a in 0..4 {
            for b in 0..4 {
                triplets.push((nodes[a], nodes[b], c * element[a][b]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(patch.num_nodes(), triplets))
}

/// Stiffness `int kappa grad phi_i . grad phi_j` over the cells of `patch`.
///
/// `dirichlet` lists patch-local nodes whose rows and columns are eliminated.
pub fn assemble_stiffness(
    grids: &StructuredGrids,
    field: &CoefficientField,
    patch: &Patch,
    dirichlet: &[usize],
) -> Result<CsrMatrix> {
    let (hx, hy) = grids.fine_h();
    let mut a = assemble_cellwise(patch, field.kappa(), &element_stiffness(hx, hy))?;
    if !dirichlet.is_empty() {
        a.eliminate_dirichlet(dirichlet);
    }
    Ok(a)
}

/// Weighted mass `int kappa_tilde phi_i phi_j` over the cells of `patch`.
pub fn assemble_weighted_mass(
    grids: &StructuredGrids,
    field: &CoefficientField,
    patch: &Patch,
) -> Result<CsrMatrix> {
    let weight = field.kappa_tilde()?;
    let (hx, hy) = grids.fine_h();
    assemble_cellwise(patch, weight, &element_mass(hx, hy))
}

/// Load vector `int f phi_i` for constant `f` over the cells of `patch`.
pub fn assemble_load(grids: &StructuredGrids, f: f64, patch: &Patch) -> Result<Vec<f64>> {
    if patch.num_cells() == 0 {
        return Err(Error::invalid("assembly over an empty cell block"));
    }
    let (hx, hy) = grids.fine_h();
    let quarter = 0.25 * f * hx * hy;
    let mut out = vec![0.0; patch.num_nodes()];
    for cell in patch.cells() {
        for n in patch.cell_nodes(&cell) {
            out[n] += quarter;
        }
    }
    Ok(out)
}
