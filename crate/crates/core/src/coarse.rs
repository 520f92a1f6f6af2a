//! Global coupling of the multiscale basis: the fine reference problem, the
//! offline space `span{chi_i psi_k}`, the coarse Galerkin solve and the norms
//! used to report errors.
//!
//! Every basis function of coarse node `i` lives on the closed neighborhood
//! of `i` and vanishes on its boundary, so two basis functions interact only
//! when their neighborhoods share a coarse cell. [`CoarseBasis`] therefore
//! precomputes, once per neighborhood pair, the Galerkin block for the full
//! set of eigenfunctions; the coarse matrix for any active counts is a
//! sub-selection of these blocks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_stiffness, assemble_weighted_mass, dot, norm2, solve_spd, Cholesky,
    CsrMatrix,
    DenseMatrix, EnvelopeMatrix,
};
use crate::field::CoefficientField;
use crate::grid::{Patch, StructuredGrids};
use crate::localspaces::{NeighborhoodSpace, PartitionOfUnity};

/// Relative energy below which a coarse basis direction is treated as dependent and dropped.
pub const DROP_TOLERANCE: f64 = 1e-12;

/// Diagonal shift, relative to the largest diagonal entry, of the coarse preconditioner.
const COARSE_SHIFT: f64 = 1e-10;

/// Relative residual at which the coarse iteration stops.
const COARSE_SOLVER_TOL: f64 = 1e-14;

const COARSE_MAX_ITER: usize = 1000;

/// Corrections of the coarse solution against the fine-grid residual.
const REFINEMENT_STEPS: usize = 3;

/// Relative residual for the fine-grid reference solve.
pub const FINE_SOLVER_TOL: f64 = 1e-12;

/// Boundary data `g(x, y) = a + b x + c y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineLift {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AffineLift {
    pub fn is_zero(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.c == 0.0
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a + self.b * x + self.c * y
    }
}

/// Fine-grid discretization of `-div(kappa grad u) = f` with Dirichlet data.
///
/// `stiffness` and `load` describe the homogeneous problem for `u - lift`,
/// where `lift` carries the boundary values and is zero inside the domain.
#[derive(Debug, Clone)]
pub struct FineProblem {
    /// Stiffness with Dirichlet rows and columns eliminated.
    pub stiffness: CsrMatrix,
    /// Stiffness without elimination, used for norms of lifted solutions.
    pub stiffness_full: CsrMatrix,
    /// `kappa_tilde`-weighted mass matrix.
    pub mass: CsrMatrix,
    /// Load with boundary entries zeroed.
    pub load: Vec<f64>,
    pub lift: Vec<f64>,
    pub boundary: Vec<usize>,
}

impl FineProblem {
    pub fn new(
        grids: &StructuredGrids,
        field: &CoefficientField,
        f: f64,
        lift: AffineLift,
    ) -> Result<Self> {
        let domain = grids.domain();
        let boundary = grids.boundary_nodes();
        let stiffness_full = assemble_stiffness(grids, field, &domain, &[])?;
        let mut stiffness = stiffness_full.clone();
        stiffness.eliminate_dirichlet(&boundary);
        let mass = assemble_weighted_mass(grids, field, &domain)?;
        let mut load = assemble_load(grids, f, &domain)?;
        let mut g = vec![0.0; grids.num_fine_nodes()];
        if !lift.is_zero() {
            for &p in &boundary {
                let (x, y) = grids.fine_node_position(p);
                g[p] = lift.eval(x, y);
            }
            let ag = stiffness_full.mul_vec(&g);
            for (l, a) in load.iter_mut().zip(&ag) {
                *l -= a;
            }
        }
        for &p in &boundary {
            load[p] = 0.0;
        }
        Ok(FineProblem {
            stiffness,
            stiffness_full,
            mass,
            load,
            lift: g,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    /// Homogeneous part of the fine-grid solution.
    pub fn solve_fine(&self) -> Result<Vec<f64>> {
        solve_spd(&self.stiffness, &self.load, FINE_SOLVER_TOL, 50 * self.dim() + 1000)
    }

    /// Adds the boundary lifting to a homogeneous solution.
    pub fn with_lift(&self, u0: &[f64]) -> Vec<f64> {
        u0.iter().zip(&self.lift).map(|(u, g)| u + g).collect()
    }

    /// `F - A v` for a homogeneous-part vector `v`.
    pub fn residual(&self, v: &[f64]) -> Vec<f64> {
        let av = self.stiffness.mul_vec(v);
        self.load.iter().zip(&av).map(|(f, a)| f - a).collect()
    }
}

pub fn energy_norm(a: &CsrMatrix, v: &[f64]) -> f64 {
    a.quadratic_form(v).max(0.0).sqrt()
}

pub fn weighted_l2_norm(s: &CsrMatrix, v: &[f64]) -> f64 {
    s.quadratic_form(v).max(0.0).sqrt()
}

/// All products `chi_i psi_k^off` with their pairwise Galerkin blocks.
#[derive(Debug, Clone)]
pub struct CoarseBasis {
    patches: Vec<Patch>,
    products: Vec<DenseMatrix>,
    neighbors: Vec<Vec<usize>>,
    /// `blocks[i][n] = P_i^T A P_j` with `j = neighbors[i][n]`.
    blocks: Vec<Vec<DenseMatrix>>,
    loads: Vec<Vec<f64>>,
    stiffness: CsrMatrix,
    load: Vec<f64>,
    num_fine_nodes: usize,
}

impl CoarseBasis {
    pub fn new(
        grids: &StructuredGrids,
        field: &CoefficientField,
        pou: &PartitionOfUnity,
        spaces: &[NeighborhoodSpace],
        problem: &FineProblem,
    ) -> Result<Self> {
        if spaces.len() != grids.num_coarse_nodes() {
            return Err(Error::invalid(format!(
                "{} neighborhood spaces for {} coarse nodes",
                spaces.len(),
                grids.num_coarse_nodes()
            )));
        }
        let patches: Vec<Patch> = spaces.iter().map(|s| s.patch).collect();
        let products: Vec<DenseMatrix> = spaces
            .par_iter()
            .map(|space| {
                let chi = pou.local(space.node);
                let mut p = space.offline.clone();
                for l in 0..space.patch.num_nodes() {
                    let w = if grids.is_boundary_node(space.patch.global(l)) {
                        0.0
                    } else {
                        chi[l]
                    };
                    p.row_mut(l).iter_mut().for_each(|v| *v *= w);
                }
                p
            })
            .collect();

        // A P_i, supported on the closed neighborhood because P_i vanishes on its boundary.
        let applied: Vec<DenseMatrix> = spaces
            .par_iter()
            .zip(&products)
            .map(|(space, p)| {
                let a = assemble_stiffness(grids, field, &space.patch, &[])?;
                Ok(a.mul_dense(p))
            })
            .collect::<Result<_>>()?;

        let neighbors: Vec<Vec<usize>> = (0..spaces.len()).map(|i| grids.overlapping_nodes(i)).collect();
        let blocks: Vec<Vec<DenseMatrix>> = (0..spaces.len())
            .into_par_iter()
            .map(|i| {
                neighbors[i]
                    .iter()
                    .map(|&j| cross_block(&patches[i], &products[i], &patches[j], &applied[j]))
                    .collect()
            })
            .collect();

        let loads = products
            .iter()
            .zip(&patches)
            .map(|(p, patch)| {
                let f_local: Vec<f64> = (0..patch.num_nodes())
                    .map(|l| problem.load[patch.global(l)])
                    .collect();
                p.tr_mul_vec(&f_local)
            })
            .collect();

        Ok(CoarseBasis {
            patches,
            products,
            neighbors,
            blocks,
            loads,
            stiffness: problem.stiffness.clone(),
            load: problem.load.clone(),
            num_fine_nodes: grids.num_fine_nodes(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.patches.len()
    }

    pub fn max_counts(&self) -> Vec<usize> {
        self.products.iter().map(DenseMatrix::cols).collect()
    }

    /// Basis function `k` of coarse node `node` as a global fine vector.
    pub fn column(&self, node: usize, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_fine_nodes];
        let patch = &self.patches[node];
        for l in 0..patch.num_nodes() {
            out[patch.global(l)] = self.products[node][(l, k)];
        }
        out
    }

    /// `R_0^T U`: fine nodal values of a coarse coefficient vector.
    pub fn prolong(&self, space: &OfflineSpace, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), space.dim());
        let mut out = vec![0.0; self.num_fine_nodes];
        for (i, patch) in self.patches.iter().enumerate() {
            let c = &coeffs[space.offsets[i]..space.offsets[i] + space.counts[i]];
            let p = &self.products[i];
            for l in 0..patch.num_nodes() {
                out[patch.global(l)] += dot(&p.row(l)[..c.len()], c);
            }
        }
        out
    }

    /// `R_0 v`: inner products of a fine vector with every active basis function.
    /// `F - A v` for the fine problem the basis was built against.
    pub fn fine_residual(&self, v: &[f64]) -> Vec<f64> {
        let av = self.stiffness.mul_vec(v);
        self.load.iter().zip(&av).map(|(f, a)| f - a).collect()
    }

    pub fn restrict(&self, space: &OfflineSpace, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(space.dim());
        for (i, patch) in self.patches.iter().enumerate() {
            let local: Vec<f64> = (0..patch.num_nodes()).map(|l| v[patch.global(l)]).collect();
            let full = self.products[i].tr_mul_vec(&local);
            out.extend_from_slice(&full[..space.counts[i]]);
        }
        out
    }
}

/// `P_i^T (A P_j)` over the overlap of two neighborhood patches.
fn cross_block(pi: &Patch, prod_i: &DenseMatrix, pj: &Patch, applied_j: &DenseMatrix) -> DenseMatrix {
    let mut block = DenseMatrix::zeros(prod_i.cols(), applied_j.cols());
    let Some(overlap) = pi.intersection(pj) else {
        return block;
    };
    for l in 0..overlap.num_nodes() {
        let (ix, iy) = overlap.coords(l);
        let row_i = prod_i.row(pi.local(ix, iy));
        let row_j = applied_j.row(pj.local(ix, iy));
        for (k, &a) in row_i.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (b, &y) in block.row_mut(k).iter_mut().zip(row_j) {
                *b += a * y;
            }
        }
    }
    block
}

/// Active eigenfunction counts per coarse node; columns ordered by node, then index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineSpace {
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl OfflineSpace {
    pub fn with_counts(counts: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        OfflineSpace { counts, offsets }
    }

    /// Dimension `N_c = sum_i l_i`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `(coarse node, eigenfunction index)` of a global column.
    pub fn provenance(&self, column: usize) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= column) - 1;
        (i, column - self.offsets[i])
    }

    /// Whether every basis function of `self` is also in `other`.
    pub fn is_subspace_of(&self, other: &OfflineSpace) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a <= b)
    }
}

/// Offline space spanned by the currently active eigenfunctions.
pub fn build_offline_space(spaces: &[NeighborhoodSpace]) -> OfflineSpace {
    OfflineSpace::with_counts(spaces.iter().map(NeighborhoodSpace::active).collect())
}

/// Coarse solve result.
#[derive(Debug, Clone)]
pub struct CoarseSolution {
    /// Coefficients `U_0`.
    pub coeffs: Vec<f64>,
    /// `R_0^T U_0` on the fine grid (homogeneous part).
    pub u_off: Vec<f64>,
    /// Number of basis directions removed as numerically dependent.
    pub dropped: usize,
}

/// Coarse matrix `A_0 = R_0 A R_0^T` in envelope storage.
pub fn coarse_matrix(basis: &CoarseBasis, space: &OfflineSpace) -> EnvelopeMatrix {
    let n = basis.num_nodes();
    let mut first = vec![0usize; space.dim()];
    for i in 0..n {
        let j_min = basis.neighbors[i][0];
        for k in 0..space.counts[i] {
            first[space.offsets[i] + k] = space.offsets[j_min];
        }
    }
    let mut env = EnvelopeMatrix::zeros(first);
    for i in 0..n {
        for (slot, &j) in basis.neighbors[i].iter().enumerate() {
            if j > i {
                continue;
            }
            let block = &basis.blocks[i][slot];
            for k in 0..space.counts[i] {
                let m_end = if j == i { k + 1 } else { space.counts[j] };
                for m in 0..m_end {
                    env.add(space.offsets[i] + k, space.offsets[j] + m, block[(k, m)]);
                }
            }
        }
    }
    env
}

/// Coarse load `F_0 = R_0 F`.
pub fn coarse_load(basis: &CoarseBasis, space: &OfflineSpace) -> Vec<f64> {
    basis
        .loads
        .iter()
        .zip(&space.counts)
        .flat_map(|(f, &c)| f[..c].iter().copied())
        .collect()
}

/// Solver for a consistent symmetric semidefinite system `A x = b`.
///
/// An overcomplete basis makes `A` singular or nearly so, and eliminating
/// with pivot dropping loses all accuracy once a nearly dependent direction
/// survives. `A + shift I` is safely definite, so its Cholesky factor is
/// used to precondition CG on `A` itself. Components of `x` in the null
/// space of `A` prolong to zero on the fine grid and do not matter.
struct SemidefiniteSolver {
    a: EnvelopeMatrix,
    m: Cholesky,
}

impl SemidefiniteSolver {
    fn new(a: EnvelopeMatrix) -> Self {
        let n = a.dim();
        let top = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i)));
        let mut shifted = a.clone();
        for i in 0..n {
            shifted.add(i, i, COARSE_SHIFT * top);
        }
        let m = Cholesky::factor_dropping(shifted, DROP_TOLERANCE);
        SemidefiniteSolver { a, m }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (a, m) = (&self.a, &self.m);
        let b_norm = norm2(b);
        if b_norm == 0.0 {
            return vec![0.0; b.len()];
        }
        let residual = |x: &[f64]| -> Vec<f64> { b.iter().zip(a.mul_vec(x)).map(|(b, a)| b - a).collect() };
        let mut x = m.solve(b);
        let mut r = residual(&x);
        let mut r_norm = norm2(&r);
        let mut iterations = 0;
        // CG breaks down once rounding pushes the search direction into the
        // null space, so it is restarted from the best iterate with the true
        // residual for as long as restarts keep making progress.
        while r_norm > COARSE_SOLVER_TOL * b_norm && iterations < COARSE_MAX_ITER {
            let start = r_norm;
            let mut y = x.clone();
            let mut z = m.solve(&r);
            let mut p = z.clone();
            let mut rz = dot(&r, &z);
            while iterations < COARSE_MAX_ITER {
                iterations += 1;
                let q = a.mul_vec(&p);
                let pq = dot(&p, &q);
                if !(pq > 0.0) || !(rz > 0.0) {
                    break;
                }
                let alpha = rz / pq;
                for i in 0..p.len() {
                    y[i] += alpha * p[i];
                    r[i] -= alpha * q[i];
                }
                let rn = norm2(&r);
                if rn < r_norm {
                    r_norm = rn;
                    x.clone_from(&y);
                }
                if rn <= COARSE_SOLVER_TOL * b_norm {
                    break;
                }
                z = m.solve(&r);
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..p.len() {
                    p[i] = z[i] + beta * p[i];
                }
            }
            r = residual(&x);
            r_norm = norm2(&r);
            if r_norm >= 0.5 * start {
                break;
            }
        }
        x
    }
}

/// Galerkin solve in the offline space.
///
/// Each node's columns are scaled to unit energy and the coarse system goes
/// to a [`SemidefiniteSolver`]. The coarse matrix only carries the energy
/// of nearly dependent combinations to rounding accuracy, so the solution
/// is then corrected a few times against the residual evaluated on the fine
/// grid, which is what Galerkin orthogonality is measured by.
pub fn solve_coarse(basis: &CoarseBasis, space: &OfflineSpace) -> Result<CoarseSolution> {
    let n = basis.num_nodes();
    if space.counts.len() != n {
        return Err(Error::invalid("offline space does not match the coarse basis"));
    }
    let max = basis.max_counts();
    if let Some(i) = (0..n).find(|&i| space.counts[i] > max[i]) {
        return Err(Error::invalid(format!(
            "node {i} uses {} eigenfunctions but only {} exist",
            space.counts[i], max[i]
        )));
    }
    let own_slot = |i: usize| basis.neighbors[i].binary_search(&i).expect("a node overlaps itself");
    let scales: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let block = &basis.blocks[i][own_slot(i)];
            let top = (0..space.counts[i]).fold(0.0f64, |m, k| m.max(block[(k, k)]));
            (0..space.counts[i])
                .map(|k| {
                    let d = block[(k, k)];
                    if d > DROP_TOLERANCE * top {
                        1.0 / d.sqrt()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let dropped = scales.iter().flatten().filter(|&&s| s == 0.0).count();
    let scale: Vec<f64> = scales.concat();

    let env = coarse_matrix(basis, space);
    let mut first = Vec::with_capacity(space.dim());
    let mut matrix = {
        for r in 0..space.dim() {
            first.push(env.first(r));
        }
        EnvelopeMatrix::zeros(first)
    };
    for r in 0..space.dim() {
        let f = env.first(r);
        for (k, v) in env.row(r).iter().enumerate() {
            let c = f + k;
            let w = if r == c && scale[r] == 0.0 { 1.0 } else { v * scale[r] * scale[c] };
            matrix.add(r, c, w);
        }
    }
    let solver = SemidefiniteSolver::new(matrix);

    let mut coeffs = vec![0.0; space.dim()];
    let mut u_off = vec![0.0; basis.num_fine_nodes];
    let mut rhs: Vec<f64> = coarse_load(basis, space);
    let mut defect = f64::INFINITY;
    for _ in 0..=REFINEMENT_STEPS {
        let scaled: Vec<f64> = rhs.iter().zip(&scale).map(|(b, s)| b * s).collect();
        let y = solver.solve(&scaled);
        let candidate: Vec<f64> = coeffs.iter().zip(y.iter().zip(&scale)).map(|(c, (y, s))| c + y * s).collect();
        let u = basis.prolong(space, &candidate);
        let r = basis.fine_residual(&u);
        let restricted = basis.restrict(space, &r);
        let d = restricted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(d < defect) {
            break;
        }
        defect = d;
        coeffs = candidate;
        u_off = u;
        rhs = restricted;
    }
    Ok(CoarseSolution { coeffs, u_off, dropped })
}

/// `||R_0 (F - A u_off)||_inf / ||F||_inf`.
pub fn galerkin_defect(basis: &CoarseBasis, space: &OfflineSpace, problem: &FineProblem, u_off: &[f64]) -> f64 {
    let r = problem.residual(u_off);
    let rr = basis.restrict(space, &r);
    let fnorm = problem.load.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rnorm = rr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fnorm == 0.0 {
        rnorm
    } else {
        rnorm / fnorm
    }
}

/// Relative errors in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeErrors {
    pub l2_vs_u: f64,
    pub h1_vs_u: f64,
    pub l2_vs_snap: f64,
    pub h1_vs_snap: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        100.0 * num / den
    }
}

/// Weighted-L2 and energy errors of `u_off` against `u` and `u_snap`.
///
/// All three arguments are homogeneous parts; the lifting is added for the
/// reference norms in the denominators.
pub fn relative_errors(problem: &FineProblem, u: &[f64], u_snap: &[f64], u_off: &[f64]) -> RelativeErrors {
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let a = &problem.stiffness_full;
    let s = &problem.mass;
    let e_u = diff(u, u_off);
    let e_snap = diff(u_snap, u_off);
    let u_total = problem.with_lift(u);
    let snap_total = problem.with_lift(u_snap);
    RelativeErrors {
        l2_vs_u: ratio(weighted_l2_norm(s, &e_u), weighted_l2_norm(s, &u_total)),
        h1_vs_u: ratio(energy_norm(a, &e_u), energy_norm(a, &u_total)),
        l2_vs_snap: ratio(weighted_l2_norm(s, &e_snap), weighted_l2_norm(s, &snap_total)),
        h1_vs_snap: ratio(energy_norm(a, &e_snap), energy_norm(a, &snap_total)),
    }
}

/// Fine, snapshot and offline solutions (homogeneous parts) with the coarse coefficients.
#[derive(Debug, Clone)]
pub struct Solutions {
    pub u: Vec<f64>,
    pub u_snap: Vec<f64>,
    pub u_off: Vec<f64>,
    pub coeffs: Vec<f64>,
}

/// Snapshot solution: Galerkin solution with every eigenfunction of every neighborhood.
pub fn solve_snapshot(basis: &CoarseBasis) -> Result<CoarseSolution> {
    solve_coarse(basis, &OfflineSpace::with_counts(basis.max_counts()))
}
