//! Fixtures and independent dense oracles shared by the integration tests
//! and the acceptance harness.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gmsfem::adapt::{AdaptConfig, Setup, Termination};
use gmsfem::coarse::{solve_coarse, AffineLift, OfflineSpace};
use gmsfem::fem::{generalized_eig, DenseMatrix};
use gmsfem::field::{ChannelLayout, CoefficientField, FieldSpec};
use gmsfem::grid::StructuredGrids;
use gmsfem::indicator::IndicatorKind;
use gmsfem::localspaces::{build_pou, SnapshotKind};

/// Energy error target, in percent of `||u||_V`, shared by the desk runs.
pub const DESK_TARGET: f64 = 1.0;

pub fn desk_grids() -> StructuredGrids {
    StructuredGrids::new(10, 10, 5, 5).unwrap()
}

pub fn channels(contrast: f64) -> FieldSpec {
    FieldSpec::Channels {
        contrast,
        layout: ChannelLayout::Seeded(1),
    }
}

pub fn setup(grids: StructuredGrids, spec: &FieldSpec, snapshots: SnapshotKind) -> Setup {
    let field = CoefficientField::load(spec, &grids).unwrap();
    Setup::new(grids, field, snapshots, 1.0, AffineLift::default()).unwrap()
}

/// Deterministic adaptive configuration stopping at [`DESK_TARGET`].
pub fn desk_config(indicator: IndicatorKind, theta: f64) -> AdaptConfig {
    AdaptConfig {
        indicator,
        theta,
        termination: Termination::RelativeError(DESK_TARGET),
        timing: false,
        ..AdaptConfig::default()
    }
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)])
}

/// Bilinear coarse hat of `node` evaluated at fine node `fine`.
pub fn coarse_hat(grids: &StructuredGrids, node: usize, fine: usize) -> f64 {
    let (cx, cy) = grids.coarse_node_coords(node);
    let (hx, hy) = grids.coarse_h();
    let (x, y) = grids.fine_node_position(fine);
    let bump = |t: f64| (1.0 - t.abs()).max(0.0);
    bump((x - cx as f64 * hx) / hx) * bump((y - cy as f64 * hy) / hy)
}

/// Q1 stiffness for `kappa = 1` over all fine nodes, without boundary
/// conditions, assembled directly from the reference element.
pub fn unit_stiffness(grids: &StructuredGrids) -> DMatrix<f64> {
    let (hx, hy) = grids.fine_h();
    let (a, b) = (hy / hx, hx / hy);
    // vertex order SW, SE, NE, NW
    let k = [
        [(a + b) / 3.0, (b - 2.0 * a) / 6.0, -(a + b) / 6.0, (a - 2.0 * b) / 6.0],
        [(b - 2.0 * a) / 6.0, (a + b) / 3.0, (a - 2.0 * b) / 6.0, -(a + b) / 6.0],
        [-(a + b) / 6.0, (a - 2.0 * b) / 6.0, (a + b) / 3.0, (b - 2.0 * a) / 6.0],
        [(a - 2.0 * b) / 6.0, -(a + b) / 6.0, (b - 2.0 * a) / 6.0, (a + b) / 3.0],
    ];
    let n = grids.num_fine_nodes();
    let mut m = DMatrix::zeros(n, n);
    for cy in 0..grids.fine_cells_y() {
        for cx in 0..grids.fine_cells_x() {
            let v = [
                grids.fine_node(cx, cy),
                grids.fine_node(cx + 1, cy),
                grids.fine_node(cx + 1, cy + 1),
                grids.fine_node(cx, cy + 1),
            ];
            for r in 0..4 {
                for c in 0..4 {
                    m[(v[r], v[c])] += k[r][c];
                }
            }
        }
    }
    m
}

/// Q1 load for a constant source over all fine nodes.
pub fn constant_load(grids: &StructuredGrids, f: f64) -> DVector<f64> {
    let (hx, hy) = grids.fine_h();
    let mut v = DVector::zeros(grids.num_fine_nodes());
    for cy in 0..grids.fine_cells_y() {
        for cx in 0..grids.fine_cells_x() {
            for (x, y) in [(cx, cy), (cx + 1, cy), (cx + 1, cy + 1), (cx, cy + 1)] {
                v[grids.fine_node(x, y)] += f * hx * hy / 4.0;
            }
        }
    }
    v
}

/// Largest deviation of `sum_i chi_i` from one over interior fine nodes.
pub fn pou_sum_error(grids: &StructuredGrids, spec: &FieldSpec) -> f64 {
    let field = CoefficientField::load(spec, grids).unwrap();
    let pou = build_pou(grids, &field).unwrap();
    let mut sum = vec![0.0; grids.num_fine_nodes()];
    for i in 0..grids.num_coarse_nodes() {
        for (s, v) in sum.iter_mut().zip(pou.global(grids, i)) {
            *s += v;
        }
    }
    (0..grids.num_fine_nodes())
        .filter(|&n| !grids.is_boundary_node(n))
        .map(|n| (sum[n] - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of the `kappa = 1` partition of unity from bilinear hats.
pub fn pou_hat_error(grids: &StructuredGrids) -> f64 {
    let field = CoefficientField::load(&FieldSpec::Uniform, grids).unwrap();
    let pou = build_pou(grids, &field).unwrap();
    let mut worst = 0.0f64;
    for i in 0..grids.num_coarse_nodes() {
        for (n, v) in pou.global(grids, i).iter().enumerate() {
            worst = worst.max((v - coarse_hat(grids, i, n)).abs());
        }
    }
    worst
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DenseMatrix {
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut m = DenseMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let s: f64 = (0..n).map(|k| x[r][k] * x[c][k]).sum();
            m[(r, c)] = s + if r == c { shift } else { 0.0 };
        }
    }
    m
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EigenCheck {
    /// `max_k ||A psi_k - lambda_k S psi_k|| / ||A||_F`.
    pub residual: f64,
    /// `max |Psi^T S Psi - I|`.
    pub orthonormality: f64,
    pub ascending: bool,
    /// Largest relative gap to eigenvalues computed by nalgebra.
    pub reference: f64,
}

impl EigenCheck {
    pub fn merge(self, other: EigenCheck) -> EigenCheck {
        EigenCheck {
            residual: self.residual.max(other.residual),
            orthonormality: self.orthonormality.max(other.orthonormality),
            ascending: self.ascending && other.ascending,
            reference: self.reference.max(other.reference),
        }
    }
}

/// Solves `A psi = lambda S psi` with the library and measures it against
/// the definition and against `L^{-1} A L^{-T}` diagonalized by nalgebra.
pub fn check_eigenpairs(a: &DenseMatrix, s: &DenseMatrix) -> EigenCheck {
    let pairs = generalized_eig(a, s).unwrap();
    let (na, ns) = (to_na(a), to_na(s));
    let psi = to_na(&pairs.vectors);
    let lam = DVector::from_vec(pairs.values.clone());
    let residual = (&na * &psi - &ns * &psi * DMatrix::from_diagonal(&lam))
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
        / na.norm();
    let gram = psi.transpose() * &ns * &psi;
    let orthonormality = (gram - DMatrix::identity(a.rows(), a.rows())).amax();
    let ascending = pairs.values.windows(2).all(|w| w[0] <= w[1]);
    let l = ns.cholesky().unwrap().l();
    let linv = l.clone().try_inverse().unwrap();
    let c = &linv * &na * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut expected: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
    expected.sort_by(f64::total_cmp);
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let reference = expected
        .iter()
        .zip(&pairs.values)
        .map(|(e, v)| (e - v).abs() / scale)
        .fold(0.0, f64::max);
    EigenCheck {
        residual,
        orthonormality,
        ascending,
        reference,
    }
}

/// Checks on `count` random pairs of dimension at most `max_dim`.
pub fn random_eigen_suite(count: usize, max_dim: usize, seed: u64) -> EigenCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = EigenCheck {
        ascending: true,
        ..EigenCheck::default()
    };
    for _ in 0..count {
        let n = rng.gen_range(1..=max_dim);
        let a = random_spd(&mut rng, n, 1e-3);
        let s = random_spd(&mut rng, n, 1.0);
        total = total.merge(check_eigenpairs(&a, &s));
    }
    total
}

/// Largest relative mismatch between the library indicators and dense sup
/// computations on grids(2, 2, 2, 2) with `kappa = 1`, `f = 1` and one
/// eigenfunction per region, as `(l2, h1w)`.
pub fn indicator_oracle_mismatch() -> (f64, f64) {
    let grids = StructuredGrids::new(2, 2, 2, 2).unwrap();
    let s = setup(grids.clone(), &FieldSpec::Uniform, SnapshotKind::Harmonic);
    let mut spaces = s.spaces.clone();
    for sp in &mut spaces {
        sp.set_active(1);
    }
    let sol = solve_coarse(&s.basis, &OfflineSpace::with_counts(vec![1; spaces.len()])).unwrap();
    let residual = s.problem.residual(&sol.u_off);
    let l2 = s.indicators.evaluate(IndicatorKind::L2, &spaces, &residual, None).unwrap();
    let h1 = s.indicators.evaluate(IndicatorKind::H1w, &spaces, &residual, None).unwrap();

    let a = unit_stiffness(&grids);
    let f = constant_load(&grids, 1.0);
    let u = DVector::from_vec(sol.u_off.clone());
    let interior: Vec<usize> = (0..grids.num_fine_nodes()).filter(|&n| !grids.is_boundary_node(n)).collect();
    let r_full = f - &a * u;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);

    let (mut worst_l2, mut worst_h1) = (0.0f64, 0.0f64);
    for i in 0..grids.num_coarse_nodes() {
        let lambda = l2.lambdas[i].expect("one eigenfunction never saturates");
        // sup_v |sum_j chi_i(x_j) r_j v_j|^2 / |v|^2 over all interior nodal v
        let q = DVector::from_iterator(
            interior.len(),
            interior.iter().map(|&n| coarse_hat(&grids, i, n) * r_full[n]),
        );
        let sup_q = (&q * q.transpose()).symmetric_eigen().eigenvalues.max();
        let got_q = l2.values[i] * s.indicators.kappa_tilde_min(i) * lambda;
        worst_l2 = worst_l2.max(rel(got_q, sup_q));

        // sup_v |R_i(v)|^2 / (v^T A_w v) over v vanishing outside the open neighborhood
        let local: Vec<usize> = interior
            .iter()
            .copied()
            .filter(|&n| coarse_hat(&grids, i, n) > 0.0)
            .collect();
        let m = local.len();
        let aw = DMatrix::from_fn(m, m, |r, c| a[(local[r], local[c])]);
        let rw = DVector::from_iterator(m, local.iter().map(|&n| r_full[n]));
        let linv = aw.cholesky().unwrap().l().try_inverse().unwrap();
        let g = &linv * &rw;
        let sup_r = (&g * g.transpose()).symmetric_eigen().eigenvalues.max();
        let got_r = h1.values[i] * h1.lambdas[i].unwrap();
        worst_h1 = worst_h1.max(rel(got_r, sup_r));
    }
    (worst_l2, worst_h1)
}
