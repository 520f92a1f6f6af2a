//! Direct and iterative SPD solvers.
//!
//! [`EnvelopeMatrix`] stores the lower triangle of a symmetric matrix row by
//! row, from the first structurally nonzero column up to the diagonal. Its
//! Cholesky factor has the same envelope, so a dense matrix is simply the
//! special case where every row starts at column 0.

use super::dense::{dot, norm2, DenseMatrix};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Dimension up to which [`solve_spd`] falls back to a dense factorization.
pub const DENSE_FALLBACK_MAX_DIM: usize = 2000;

#[derive(Debug, Clone)]
pub struct EnvelopeMatrix {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeMatrix {
    /// Zero matrix whose row `i` stores columns `first[i]..=i`.
    pub fn zeros(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        offset.push(0);
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope row {i} starts after the diagonal");
            offset.push(offset[i] + (i - f + 1));
        }
        let len = *offset.last().unwrap();
        EnvelopeMatrix {
            first,
            offset,
            data: vec![0.0; len],
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        assert!(m.is_square());
        let n = m.rows();
        let mut env = Self::zeros(vec![0; n]);
        for i in 0..n {
            env.row_mut(i).copy_from_slice(&m.row(i)[..=i]);
        }
        env
    }

    pub fn from_csr(m: &CsrMatrix) -> Self {
        let n = m.dim();
        let first = (0..m.dim())
            .map(|i| {
                let (cols, _) = m.row(i);
                cols.first().map_or(i, |&c| c.min(i))
            })
            .collect();
        let mut env = Self::zeros(first);
        for i in 0..n {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    env.add(i, j, v);
                }
            }
        }
        env
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn first(&self, i: usize) -> usize {
        self.first[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[self.offset[i]..self.offset[i + 1]]
    }

    /// Entry `(i, j)` of the symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.data[self.offset[i] + j - self.first[i]]
        }
    }

    /// Adds to the lower-triangle entry `(i, j)`, `j <= i`, inside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && j >= self.first[i]);
        let k = self.offset[i] + j - self.first[i];
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.first[i];
            let row = self.row(i);
            y[i] += dot(row, &x[f..=i]);
            for (k, &v) in row[..row.len() - 1].iter().enumerate() {
                y[f + k] += v * x[i];
            }
        }
        y
    }
}

/// Cholesky factor `L` with `A = L L^T`, possibly with some pivots dropped.
///
/// A dropped pivot removes that unknown from the system: the corresponding
/// row and column of `L` are zero apart from a unit diagonal and the unknown
/// is pinned to zero in every solve.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: EnvelopeMatrix,
    dropped: Vec<bool>,
}

impl Cholesky {
    /// Strict factorization; fails on the first non-positive pivot.
    pub fn factor(a: EnvelopeMatrix) -> Result<Self> {
        Self::factor_impl(a, None)
    }

    pub fn factor_dense(a: &DenseMatrix) -> Result<Self> {
        Self::factor(EnvelopeMatrix::from_dense(a))
    }

    /// Factorization that drops every pivot whose value relative to the
    /// original diagonal entry falls below `rel_tol`.
    pub fn factor_dropping(a: EnvelopeMatrix, rel_tol: f64) -> Self {
        Self::factor_impl(a, Some(rel_tol)).expect("dropping factorization does not fail")
    }

    fn factor_impl(mut a: EnvelopeMatrix, drop_tol: Option<f64>) -> Result<Self> {
        let n = a.dim();
        let mut dropped = vec![false; n];
        for i in 0..n {
            let fi = a.first[i];
            let (head, tail) = a.data.split_at_mut(a.offset[i]);
            let row_i = &mut tail[..i - fi + 1];
            for j in fi..i {
                let pos = j - fi;
                if dropped[j] {
                    row_i[pos] = 0.0;
                    continue;
                }
                let fj = a.first[j];
                let start = fi.max(fj);
                let row_j = &head[a.offset[j]..a.offset[j + 1]];
                let s = dot(&row_i[start - fi..pos], &row_j[start - fj..j - fj]);
                row_i[pos] = (row_i[pos] - s) / row_j[j - fj];
            }
            let diag = row_i[i - fi];
            let d = diag - dot(&row_i[..i - fi], &row_i[..i - fi]);
            match drop_tol {
                Some(tol) if !(d > tol * diag.abs()) || !(diag > 0.0) => {
                    dropped[i] = true;
                    row_i.iter_mut().for_each(|v| *v = 0.0);
                    row_i[i - fi] = 1.0;
                }
                None if !(d > 0.0) || !d.is_finite() => {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: d });
                }
                _ => row_i[i - fi] = d.sqrt(),
            }
        }
        Ok(Cholesky { l: a, dropped })
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn dropped(&self) -> Vec<usize> {
        self.dropped
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| d.then_some(i))
            .collect()
    }

    pub fn is_dropped(&self, i: usize) -> bool {
        self.dropped[i]
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for i in 0..self.dim() {
            if self.dropped[i] {
                b[i] = 0.0;
                continue;
            }
            let f = self.l.first[i];
            let row = self.l.row(i);
            let s = dot(&row[..i - f], &b[f..i]);
            b[i] = (b[i] - s) / row[i - f];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward(&self, y: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            if self.dropped[i] {
                y[i] = 0.0;
                continue;
            }
            let f = self.l.first[i];
            let row = self.l.row(i);
            y[i] /= row[i - f];
            let xi = y[i];
            for (k, &v) in row[..i - f].iter().enumerate() {
                y[f + k] -= v * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// Entry `(i, j)` of the lower-triangular factor.
    pub fn l(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.l.get(i, j)
        }
    }

    /// `L^{-1} B` for a dense `B`.
    pub fn forward_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = b.clone();
        for j in 0..b.cols() {
            let mut col = b.column(j);
            self.forward(&mut col);
            out.set_column(j, &col);
        }
        out
    }

    /// `L^{-T} B` for a dense `B`.
    pub fn backward_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = b.clone();
        for j in 0..b.cols() {
            let mut col = b.column(j);
            self.backward(&mut col);
            out.set_column(j, &col);
        }
        out
    }
}

/// Outcome statistics of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients.
///
/// Returns the iterate and statistics, or a solver failure when the
/// iteration breaks down (non-positive curvature) or does not reach `tol`.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgStats)> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::SolverFailure {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok((
                x,
                CgStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual: rel,
    })
}

/// Solves an SPD system to relative residual `tol`.
///
/// Uses [`pcg`]; if it fails and the dimension is at most
/// [`DENSE_FALLBACK_MAX_DIM`], retries with a Cholesky factorization and
/// accepts that solution if it meets the same residual tolerance.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    match pcg(a, b, tol, max_iter) {
        Ok((x, _)) => Ok(x),
        Err(Error::SolverFailure {
            iterations,
            residual,
        }) => {
            let fail = Error::SolverFailure {
                iterations,
                residual,
            };
            if a.dim() > DENSE_FALLBACK_MAX_DIM {
                return Err(fail);
            }
            let chol = Cholesky::factor(EnvelopeMatrix::from_csr(a)).map_err(|_| fail)?;
            let x = chol.solve(b);
            let ax = a.mul_vec(&x);
            let res: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
            let rel = norm2(&res) / norm2(b);
            if rel <= tol {
                Ok(x)
            } else {
                Err(Error::SolverFailure {
                    iterations,
                    residual: rel,
                })
            }
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let mut b = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut a = b.transpose().matmul(&b);
        for i in 0..n {
            a[(i, i)] += n as f64 * 0.1;
        }
        a
    }

    fn dense_to_csr(a: &DenseMatrix) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        CsrMatrix::from_triplets(a.rows(), t)
    }

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.5];
        let x = solve_spd(&CsrMatrix::identity(3), &b, 1e-10, 10).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let x = solve_spd(&a, &[1.0, 1.0], 1e-12, 10).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12 && (x[1] - 1.0 / 3.0).abs() < 1e-12);
        let chol = Cholesky::factor(EnvelopeMatrix::from_csr(&a)).unwrap();
        let y = chol.solve(&[1.0, 1.0]);
        assert!((y[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_is_solver_failure() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        let err = solve_spd(&a, &[1.0, 1.0], 1e-10, 50).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }), "{err}");
        let err = Cholesky::factor(EnvelopeMatrix::from_csr(&a)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }));
    }

    #[test]
    fn fifty_random_spd_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.gen_range(1..=200);
            let a = random_spd(n, &mut rng);
            let csr = dense_to_csr(&a);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solve_spd(&csr, &b, 1e-10, 10 * n + 100).unwrap();
            let r: Vec<f64> = csr.mul_vec(&x).iter().zip(&b).map(|(ax, b)| ax - b).collect();
            assert!(norm2(&r) <= 1e-10 * norm2(&b) * 1.0001, "trial {trial}");
        }
    }

    #[test]
    fn dropping_removes_dependent_column() {
        // Gram matrix of columns (1,0), (0,1), (1,1): third is dependent.
        let g = DenseMatrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 2.0],
        ]);
        assert!(Cholesky::factor_dense(&g).is_err());
        let chol = Cholesky::factor_dropping(EnvelopeMatrix::from_dense(&g), 1e-12);
        assert_eq!(chol.dropped(), vec![2]);
        let x = chol.solve(&[1.0, 2.0, 3.0]);
        assert_eq!(x, vec![1.0, 2.0, 0.0]);
    }

    #[test]
    fn envelope_matches_dense_factorization() {
        // Banded SPD matrix: tridiagonal plus a long-range coupling.
        let n = 12;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
            if i + 5 < n {
                t.push((i, i + 5, -0.5));
                t.push((i + 5, i, -0.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, t);
        let env = EnvelopeMatrix::from_csr(&a);
        assert_eq!(env.first(7), 2);
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let y1 = env.mul_vec(&x);
        let y2 = a.mul_vec(&x);
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-14);
        }
        let sparse = Cholesky::factor(env).unwrap().solve(&y2);
        let dense = Cholesky::factor_dense(&a.to_dense()).unwrap().solve(&y2);
        for i in 0..n {
            assert!((sparse[i] - x[i]).abs() < 1e-12);
            assert!((dense[i] - x[i]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn cholesky_solve_reproduces_rhs(seed in 0u64..1000, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = Cholesky::factor_dense(&a).unwrap().solve(&b);
            let ax = a.mul_vec(&x);
            for i in 0..n {
                prop_assert!((ax[i] - b[i]).abs() <= 1e-9 * (1.0 + b[i].abs()));
            }
        }
    }
}
