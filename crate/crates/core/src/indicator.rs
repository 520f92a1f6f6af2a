//! Local a-posteriori error indicators, one value per coarse neighborhood.
//!
//! Everything that does not depend on the current offline space (local
//! factorizations, snapshot-space Gram matrices) lives in
//! [`IndicatorContext`] and is built once per problem.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, dot, symmetric_jacobi, Cholesky, CsrMatrix, DenseMatrix};
use crate::field::CoefficientField;
use crate::grid::{Patch, StructuredGrids};
use crate::localspaces::{NeighborhoodSpace, PartitionOfUnity};

/// Eigenvalues below this fraction of the largest one in a neighborhood are
/// floored to it before dividing.
pub const LAMBDA_FLOOR: f64 = 1e-14;

/// Relative eigenvalue cutoff of the snapshot-space Gram pseudo-inverse.
pub const GRAM_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndicatorKind {
    /// Weighted L2 residual.
    L2,
    /// Dual norm of the local residual in `H^1_0(omega_i)`.
    H1w,
    /// As `H1w`, with the local problem posed in the snapshot space.
    H1wSnap,
    /// Local energy of the true error.
    Exact,
}

impl IndicatorKind {
    pub fn name(self) -> &'static str {
        match self {
            IndicatorKind::L2 => "l2",
            IndicatorKind::H1w => "h1w",
            IndicatorKind::H1wSnap => "h1w-snap",
            IndicatorKind::Exact => "exact",
        }
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndicatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l2" => Ok(IndicatorKind::L2),
            "h1w" => Ok(IndicatorKind::H1w),
            "h1w-snap" => Ok(IndicatorKind::H1wSnap),
            "exact" => Ok(IndicatorKind::Exact),
            _ => Err(format!("unknown indicator `{s}` (expected l2, h1w, h1w-snap or exact)")),
        }
    }
}

/// Which residual the L2 indicator weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QFormula {
    /// `W_i (F - A u_off)`.
    #[default]
    Consistent,
    /// `W_i A u_off`, without the load term.
    Paper,
}

impl QFormula {
    pub fn name(self) -> &'static str {
        match self {
            QFormula::Consistent => "consistent",
            QFormula::Paper => "paper",
        }
    }
}

impl FromStr for QFormula {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "consistent" => Ok(QFormula::Consistent),
            "paper" => Ok(QFormula::Paper),
            _ => Err(format!("unknown q-formula `{s}` (expected paper or consistent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorReport {
    pub kind: IndicatorKind,
    /// `eta_i^2` per coarse node.
    pub values: Vec<f64>,
    /// `lambda_{l_i+1}` after flooring; `None` for saturated regions.
    pub lambdas: Vec<Option<f64>>,
    pub saturated: Vec<bool>,
}

impl IndicatorReport {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Snapshot-space trial functions of one neighborhood, restricted to its
/// interior nodes, with the spectral decomposition of their Gram matrix.
#[derive(Debug, Clone)]
struct SnapshotTrial {
    trial: DenseMatrix,
    gram_values: Vec<f64>,
    gram_vectors: DenseMatrix,
}

#[derive(Debug, Clone)]
struct LocalData {
    patch: Patch,
    /// Global ids of the patch interior nodes.
    interior: Vec<usize>,
    /// `chi_i` at every patch node.
    chi: Vec<f64>,
    stiffness: CsrMatrix,
    interior_factor: Cholesky,
    snapshot: Option<SnapshotTrial>,
    kappa_tilde_min: f64,
}

/// Space-independent per-neighborhood data for all indicators.
#[derive(Debug, Clone)]
pub struct IndicatorContext {
    locals: Vec<LocalData>,
    boundary: Vec<bool>,
}

impl IndicatorContext {
    /// `with_snapshot_space` also prepares the snapshot-space variant.
    pub fn new(
        grids: &StructuredGrids,
        field: &CoefficientField,
        pou: &PartitionOfUnity,
        spaces: &[NeighborhoodSpace],
        with_snapshot_space: bool,
    ) -> Result<Self> {
        let minima = field.kappa_tilde_min()?;
        let locals = spaces
            .par_iter()
            .map(|space| {
                let patch = space.patch;
                let stiffness = assemble_stiffness(grids, field, &patch, &[])?;
                let interior_local = patch.interior_nodes();
                let a_ii = stiffness.dense_block(&interior_local, &interior_local);
                let interior_factor = Cholesky::factor_dense(&a_ii)?;
                let chi = pou.local(space.node).to_vec();
                let snapshot = if with_snapshot_space {
                    Some(snapshot_trial(space, &chi, &interior_local, &a_ii))
                } else {
                    None
                };
                Ok(LocalData {
                    patch,
                    interior: interior_local.iter().map(|&l| patch.global(l)).collect(),
                    chi,
                    stiffness,
                    interior_factor,
                    snapshot,
                    kappa_tilde_min: minima[space.node],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut boundary = vec![false; grids.num_fine_nodes()];
        for p in grids.boundary_nodes() {
            boundary[p] = true;
        }
        Ok(IndicatorContext { locals, boundary })
    }

    pub fn has_snapshot_space(&self) -> bool {
        self.locals.iter().all(|l| l.snapshot.is_some())
    }

    /// `kappa_tilde_i` used by the L2 indicator.
    pub fn kappa_tilde_min(&self, node: usize) -> f64 {
        self.locals[node].kappa_tilde_min
    }

    /// `(u - u_off)^T A_{omega_i} (u - u_off)` over the cells of every neighborhood.
    pub fn local_energies(&self, error: &[f64]) -> Vec<f64> {
        self.locals
            .par_iter()
            .map(|loc| {
                let e: Vec<f64> = (0..loc.patch.num_nodes()).map(|l| error[loc.patch.global(l)]).collect();
                loc.stiffness.quadratic_form(&e).max(0.0)
            })
            .collect()
    }

    /// Indicator values for residual `r = F - A u_off` (fine, homogeneous part).
    ///
    /// `exact_error` is required for [`IndicatorKind::Exact`] and ignored otherwise.
    pub fn evaluate(
        &self,
        kind: IndicatorKind,
        spaces: &[NeighborhoodSpace],
        residual: &[f64],
        exact_error: Option<&[f64]>,
    ) -> Result<IndicatorReport> {
        if spaces.len() != self.locals.len() {
            return Err(Error::invalid("neighborhood spaces do not match the indicator context"));
        }
        if kind == IndicatorKind::H1wSnap && !self.has_snapshot_space() {
            return Err(Error::State("snapshot-space indicator was not prepared".into()));
        }
        let energies = match kind {
            IndicatorKind::Exact => {
                let e = exact_error.ok_or_else(|| Error::invalid("exact indicator needs the true error"))?;
                Some(self.local_energies(e))
            }
            _ => None,
        };
        let residual: Vec<f64> = residual
            .iter()
            .zip(&self.boundary)
            .map(|(&r, &b)| if b { 0.0 } else { r })
            .collect();

        let per_node: Vec<(f64, Option<f64>, bool)> = self
            .locals
            .par_iter()
            .zip(spaces)
            .enumerate()
            .map(|(i, (loc, space))| {
                if space.saturated() {
                    return (0.0, None, true);
                }
                let lambda = floored_lambda(space);
                let value = match kind {
                    IndicatorKind::L2 => loc.q_norm_sq(&residual) / (loc.kappa_tilde_min * lambda),
                    IndicatorKind::H1w => loc.r_norm_sq(&residual) / lambda,
                    IndicatorKind::H1wSnap => loc.r_norm_sq_snapshot(&residual) / lambda,
                    IndicatorKind::Exact => energies.as_ref().unwrap()[i],
                };
                (value.max(0.0), Some(lambda), false)
            })
            .collect();

        Ok(IndicatorReport {
            kind,
            values: per_node.iter().map(|t| t.0).collect(),
            lambdas: per_node.iter().map(|t| t.1).collect(),
            saturated: per_node.iter().map(|t| t.2).collect(),
        })
    }
}

impl LocalData {
    fn interior_residual(&self, residual: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&p| residual[p]).collect()
    }

    /// `||W_i r||_2^2`.
    fn q_norm_sq(&self, residual: &[f64]) -> f64 {
        (0..self.patch.num_nodes())
            .map(|l| {
                let v = self.chi[l] * residual[self.patch.global(l)];
                v * v
            })
            .sum()
    }

    /// `r_I^T A_II^{-1} r_I = z^T A_II z`.
    fn r_norm_sq(&self, residual: &[f64]) -> f64 {
        let r = self.interior_residual(residual);
        let z = self.interior_factor.solve(&r);
        dot(&r, &z)
    }

    /// `r_P^T G^+ r_P` with `r_P = T^T r_I`.
    fn r_norm_sq_snapshot(&self, residual: &[f64]) -> f64 {
        let snap = self.snapshot.as_ref().expect("snapshot trial space prepared");
        let r = self.interior_residual(residual);
        let rp = snap.trial.tr_mul_vec(&r);
        let top = snap.gram_values.iter().fold(0.0f64, |m, v| m.max(*v));
        snap.gram_values
            .iter()
            .enumerate()
            .filter(|(_, &mu)| mu > GRAM_CUTOFF * top)
            .map(|(k, &mu)| {
                let c = dot(&snap.gram_vectors.column(k), &rp);
                c * c / mu
            })
            .sum()
    }
}

fn snapshot_trial(space: &NeighborhoodSpace, chi: &[f64], interior: &[usize], a_ii: &DenseMatrix) -> SnapshotTrial {
    let w = space.snapshots.cols();
    let mut trial = DenseMatrix::zeros(interior.len(), w);
    for (r, &l) in interior.iter().enumerate() {
        for j in 0..w {
            trial[(r, j)] = chi[l] * space.snapshots[(l, j)];
        }
    }
    let mut gram = trial.transpose().matmul(&a_ii.matmul(&trial));
    gram.symmetrize();
    let (gram_values, gram_vectors) = symmetric_jacobi(&gram);
    SnapshotTrial {
        trial,
        gram_values,
        gram_vectors,
    }
}

/// `lambda_{l_i+1}`, floored relative to the largest eigenvalue of the neighborhood.
fn floored_lambda(space: &NeighborhoodSpace) -> f64 {
    let top = space.eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (LAMBDA_FLOOR * top).max(f64::MIN_POSITIVE);
    space.next_eigenvalue().unwrap_or(floor).max(floor)
}

/// Residual used by the L2 indicator under the chosen formula.
pub fn l2_residual(formula: QFormula, load: &[f64], a: &CsrMatrix, u_off: &[f64]) -> Vec<f64> {
    let au = a.mul_vec(u_off);
    match formula {
        QFormula::Consistent => load.iter().zip(&au).map(|(f, a)| f - a).collect(),
        QFormula::Paper => au.iter().map(|a| -a).collect(),
    }
}
