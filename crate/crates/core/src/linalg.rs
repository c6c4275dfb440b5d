//! Compressed sparse rows, sparse direct factorizations, dense symmetric
//! pencils with deflation, and a Lanczos iteration for extreme eigenvalues.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt as SparseLlt, Lu as SparseLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("factorization is singular{}", pivot.map(|p| format!(" (pivot {p})")).unwrap_or_default())]
    Singular { pivot: Option<usize> },
    #[error("matrix construction failed: {0}")]
    Construction(String),
    #[error("deflation directions are linearly dependent")]
    DependentDeflation,
}

/// A sparse matrix in compressed row form with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.values.copy_from_slice(d);
        m
    }

    /// Sums duplicate entries in the order they appear in `triplets`.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    /// Builds an exactly symmetric matrix: each triplet is folded onto the lower
    /// triangle, summed there, and mirrored.
    pub fn symmetric_from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        let lower: Vec<(usize, usize, f64)> =
            triplets.into_iter().map(|(r, c, v)| if r >= c { (r, c, v) } else { (c, r, v) }).collect();
        let folded = Self::from_triplets(n, n, lower);
        let mut full = Vec::with_capacity(2 * folded.nnz());
        for (r, c, v) in folded.iter() {
            full.push((r, c, v));
            if r != c {
                full.push((c, r, v));
            }
        }
        Self::from_triplets(n, n, full)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        row.binary_search(&c).map(|k| self.values[self.indptr[r] + k]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| (self.indptr[r]..self.indptr[r + 1]).map(|k| self.values[k] * x[self.indices[k]]).sum())
            .collect()
    }

    /// `self^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, c, v) in self.iter() {
            y[c] += v * x[r];
        }
        y
    }

    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.iter().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    /// `sum_i alpha_i M_i` over matrices of equal shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Self {
        let (nrows, ncols) = (terms[0].1.nrows, terms[0].1.ncols);
        let mut trips = Vec::new();
        for &(alpha, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols));
            trips.extend(m.iter().map(|(r, c, v)| (r, c, alpha * v)));
        }
        Self::from_triplets(nrows, ncols, trips)
    }

    /// Rows `rows` and columns `cols` (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut trips = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let j = col_map[self.indices[k]];
                if j != usize::MAX {
                    trips.push((i, j, self.values[k]));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), trips)
    }

    /// `blockdiag(self, self)`.
    pub fn block_diag2(&self) -> Self {
        let mut trips: Vec<_> = self.iter().collect();
        trips.extend(self.iter().map(|(r, c, v)| (r + self.nrows, c + self.ncols, v)));
        Self::from_triplets(2 * self.nrows, 2 * self.ncols, trips)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |M - M^T|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>, LinalgError> {
        let trips: Vec<_> = self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| LinalgError::Construction(format!("{e:?}")))
    }

    /// Coordinate text: one `row col value` line per stored entry, values with 17 significant digits.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = format!("% {} {} {}\n", self.nrows, self.ncols, self.nnz());
        for (r, c, v) in self.iter() {
            s.push_str(&format!("{r} {c} {v:.16e}\n"));
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

fn vec_to_col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Sparse Cholesky factor of a symmetric positive definite matrix.
pub struct SpdSolver {
    n: usize,
    llt: SparseLlt<usize, f64>,
}

impl SpdSolver {
    pub fn new(m: &CsrMatrix) -> Result<Self, LinalgError> {
        if m.nrows == 0 {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let llt = m.to_faer()?.sp_cholesky(Side::Lower).map_err(|_| LinalgError::NotPositiveDefinite)?;
        Ok(Self { n: m.nrows, llt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        col_to_vec(&self.llt.solve(vec_to_col(rhs)))
    }

    pub fn solve_mat(&self, rhs: &Mat<f64>) -> Mat<f64> {
        self.llt.solve(rhs)
    }
}

/// Solves `G x = b` for a symmetric positive definite `G`.
pub fn solve_spd(g: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    Ok(SpdSolver::new(g)?.solve(rhs))
}

/// Sparse LU factor with partial pivoting, for symmetric indefinite systems.
pub struct LuSolver {
    lu: SparseLu<usize, f64>,
}

impl LuSolver {
    pub fn new(m: &CsrMatrix) -> Result<Self, LinalgError> {
        let lu = m.to_faer()?.sp_lu().map_err(|_| LinalgError::Singular { pivot: None })?;
        Ok(Self { lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        col_to_vec(&self.lu.solve(vec_to_col(rhs)))
    }
}

/// Orthonormal basis of the orthogonal complement of `range(d)`.
pub fn complement_basis(d: &Mat<f64>) -> Result<Mat<f64>, LinalgError> {
    let (n, k) = (d.nrows(), d.ncols());
    if k == 0 {
        return Ok(Mat::identity(n, n));
    }
    let qr = d.qr();
    let r = qr.R();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * scale) || scale == 0.0 {
        return Err(LinalgError::DependentDeflation);
    }
    let q = qr.compute_Q();
    Ok(q.subcols(k, n - k).to_owned())
}

fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenvalues (ascending) of the pencil `A x = lambda B x` with `B` positive definite.
pub fn generalized_eigenvalues(a: &Mat<f64>, b: &Mat<f64>) -> Result<Vec<f64>, LinalgError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut bs = b.clone();
    symmetrize(&mut bs);
    let llt = bs.llt(Side::Lower).map_err(|_| LinalgError::NotPositiveDefinite)?;
    let l = llt.L().to_owned();
    // C = L^{-1} A L^{-T}
    let mut x = a.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), x.as_mut(), faer::Par::Seq);
    let mut c = x.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), faer::Par::Seq);
    symmetrize(&mut c);
    c.self_adjoint_eigenvalues(Side::Lower).map_err(|_| LinalgError::Construction("eigensolver failed".into()))
}

/// As [`generalized_eigenvalues`] on the subspace orthogonal to the columns of `deflate`.
pub fn deflated_eigenvalues(a: &Mat<f64>, b: &Mat<f64>, deflate: &Mat<f64>) -> Result<Vec<f64>, LinalgError> {
    let z = complement_basis(deflate)?;
    if z.ncols() == 0 {
        return Ok(Vec::new());
    }
    let az = a * &z;
    let bz = b * &z;
    let zt = z.transpose();
    generalized_eigenvalues(&(zt * &az), &(zt * &bz))
}

/// Projects a dense matrix onto `Z^T M Z`.
pub fn project(m: &Mat<f64>, z: &Mat<f64>) -> Mat<f64> {
    let mz = m * z;
    z.transpose() * &mz
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosResult {
    pub min: f64,
    pub max: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Both,
    LargestMagnitude,
}

/// Extreme eigenvalues of an operator self-adjoint in the inner product of `w`,
/// by Lanczos with full reorthogonalization. `apply` maps `x` to `Op x`;
/// `w_mul` maps `x` to `W x`. The start vector is `apply` of a seeded random
/// vector, so it lies in the range of `Op`.
pub fn lanczos(
    n: usize,
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    w_mul: impl Fn(&[f64]) -> Vec<f64>,
    wanted: Extreme,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> LanczosResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut q = apply(&x0);
    let mut wq = w_mul(&q);
    let nrm = dot(&q, &wq).sqrt();
    if nrm == 0.0 || !nrm.is_finite() {
        return LanczosResult { min: 0.0, max: 0.0, iterations: 0, converged: true };
    }
    q.iter_mut().for_each(|v| *v /= nrm);
    wq.iter_mut().for_each(|v| *v /= nrm);
    let mut basis = vec![q];
    let mut wbasis = vec![wq];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_iter = max_iter.min(n);
    let mut result = LanczosResult { min: 0.0, max: 0.0, iterations: 0, converged: false };
    for j in 0..max_iter {
        let mut r = apply(&basis[j]);
        let mut a_j = 0.0;
        for _pass in 0..2 {
            for i in 0..=j {
                let c = dot(&wbasis[i], &r);
                if i == j {
                    a_j += c;
                }
                r.iter_mut().zip(&basis[i]).for_each(|(x, y)| *x -= c * y);
            }
        }
        alpha.push(a_j);
        let wr = w_mul(&r);
        let b = dot(&r, &wr).max(0.0).sqrt();
        let m = j + 1;
        let check = m == max_iter || m % 5 == 0 || m < 5 || b == 0.0;
        if check {
            let (theta, last) = tridiagonal_eigen(&alpha, &beta);
            let scale = theta.iter().fold(0.0_f64, |s, t| s.max(t.abs())).max(f64::MIN_POSITIVE);
            let res = |k: usize| b * last[k].abs();
            let ok = |k: usize| res(k) <= tol * theta[k].abs().max(1e-6 * scale);
            let (lo, hi) = (0, theta.len() - 1);
            let converged = match wanted {
                Extreme::Both => ok(lo) && ok(hi),
                Extreme::LargestMagnitude => {
                    if theta[lo].abs() >= theta[hi].abs() {
                        ok(lo)
                    } else {
                        ok(hi)
                    }
                }
            };
            result = LanczosResult { min: theta[lo], max: theta[hi], iterations: m, converged };
            if converged || b <= 1e-14 * scale {
                result.converged = true;
                return result;
            }
        }
        if m == max_iter {
            break;
        }
        beta.push(b);
        basis.push(r.iter().map(|v| v / b).collect());
        wbasis.push(wr.iter().map(|v| v / b).collect());
    }
    result
}

/// Eigenvalues (ascending) of the symmetric tridiagonal matrix and the last
/// component of each normalized eigenvector.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = alpha.len();
    let t = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let eig = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigensolver");
    let s = eig.S().column_vector().to_owned();
    let u = eig.U();
    ((0..m).map(|k| s[k]).collect(), (0..m).map(|k| u[(m - 1, k)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (0, 2, 2.5), (1, 0, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), 3.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 2.0]), vec![7.0, -1.0]);
        assert_eq!(m.tr_mul_vec(&[1.0, 2.0]), vec![-2.0, 0.0, 3.5]);
    }

    #[test]
    fn symmetric_builder_is_exact() {
        let trips = vec![(0, 1, 0.1), (1, 0, 0.2), (0, 1, 0.3), (1, 1, 1.0), (0, 0, 1.0)];
        let m = CsrMatrix::symmetric_from_triplets(2, trips);
        assert_eq!(m.asymmetry(), 0.0);
        assert_abs_diff_eq!(m.get(0, 1), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn select_and_block_diag() {
        let m = laplace_1d(4);
        let s = m.select(&[1, 2], &[1, 2]);
        assert_eq!(s.to_dense()[(0, 1)], -1.0);
        let b = m.block_diag2();
        assert_eq!((b.nrows, b.get(5, 4)), (8, -1.0));
        assert_eq!(b.get(3, 4), 0.0);
    }

    #[test]
    fn spd_solver_identity_and_failure() {
        let x = solve_spd(&CsrMatrix::identity(3), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
        let bad = CsrMatrix::diagonal(&[1.0, -1.0]);
        assert!(matches!(SpdSolver::new(&bad), Err(LinalgError::NotPositiveDefinite)));
    }

    #[test]
    fn lu_solver_indefinite() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        let x = LuSolver::new(&m).unwrap().solve(&[2.0, 3.0]);
        assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn deflation_removes_constants() {
        // Path-graph Laplacian against identity: nonzero eigenvalues 2 - 2cos(k pi / n).
        let n = 6;
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let l = CsrMatrix::from_triplets(n, n, t).to_dense();
        let ones = Mat::from_fn(n, 1, |_, _| 1.0);
        let ev = deflated_eigenvalues(&l, &Mat::identity(n, n), &ones).unwrap();
        assert_eq!(ev.len(), n - 1);
        let expected = 2.0 - 2.0 * (std::f64::consts::PI / n as f64).cos();
        assert_abs_diff_eq!(ev[0], expected, epsilon = 1e-13);
    }

    #[test]
    fn lanczos_matches_dense() {
        let n = 60;
        let a = laplace_1d(n);
        let w = CsrMatrix::diagonal(&(0..n).map(|i| 1.0 + 0.01 * i as f64).collect::<Vec<_>>());
        let w_solver = SpdSolver::new(&w).unwrap();
        let res = lanczos(n, |x| w_solver.solve(&a.mul_vec(x)), |x| w.mul_vec(x), Extreme::Both, 1e-10, n, 1);
        let dense = generalized_eigenvalues(&a.to_dense(), &w.to_dense()).unwrap();
        assert!(res.converged);
        assert_abs_diff_eq!(res.min, dense[0], epsilon = 1e-10 * dense[0]);
        assert_abs_diff_eq!(res.max, dense[n - 1], epsilon = 1e-10 * dense[n - 1]);
    }

    #[test]
    fn coordinate_dump_format() {
        let text = CsrMatrix::diagonal(&[0.1]).to_coordinate_text();
        assert_eq!(text, "% 1 1 1\n0 0 1.0000000000000001e-1\n");
    }
}
