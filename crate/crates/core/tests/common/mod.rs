//! Dense reference computations with nalgebra, independent of the faer paths.
#![allow(dead_code)]

use cutstokes::linalg::CsrMatrix;
use nalgebra::{DMatrix, DVector};

pub fn dense(m: &CsrMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows, m.ncols);
    for (r, c, v) in m.iter() {
        d[(r, c)] += v;
    }
    d
}

/// Ascending eigenvalues of `A x = lambda B x` for symmetric `A` and SPD `B`.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let l = b.clone().cholesky().expect("B must be positive definite").l();
    let x = l.solve_lower_triangular(a).unwrap();
    let c = l.solve_lower_triangular(&x.transpose()).unwrap();
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Orthonormal basis of the orthogonal complement of the columns of `d`, from
/// the eigenvectors of the projector `I - D (D^T D)^{-1} D^T`.
pub fn complement(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let dtd = d.transpose() * d;
    let p = DMatrix::identity(n, n) - d * dtd.try_inverse().unwrap() * d.transpose();
    let eig = p.symmetric_eigen();
    let cols: Vec<DVector<f64>> =
        (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

pub fn deflated(a: &DMatrix<f64>, b: &DMatrix<f64>, d: &DMatrix<f64>) -> Vec<f64> {
    let z = complement(d);
    generalized_eigenvalues(&(z.transpose() * a * &z), &(z.transpose() * b * &z))
}

/// `B G^{-1} B^T` through a dense Cholesky solve.
pub fn schur(b: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let chol = g.clone().cholesky().expect("G must be positive definite");
    let x = chol.solve(&b.transpose());
    let s = b * x;
    (&s + s.transpose()) * 0.5
}

pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn mask(m: &[bool]) -> Vec<usize> {
    (0..m.len()).filter(|&k| m[k]).collect()
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

pub struct DenseConstants {
    pub theta: f64,
    pub beta: f64,
    pub c0: f64,
}

/// Interior inf-sup constants (full H1 norm) and coercivity, for a connected interior region.
pub fn dense_constants(disc: &cutstokes::forms::Discretization, eta: f64) -> DenseConstants {
    let v = &disc.asm.velocity;
    let vi = mask(&disc.sys.velocity_interior_mask());
    let qi = mask(&disc.sys.pressure_interior);
    let n = disc.sys.velocity.n_dofs;
    let h1 = dense(&v.laplace_interior) + dense(&v.mass_interior);
    let mut g2 = DMatrix::zeros(2 * n, 2 * n);
    g2.view_mut((0, 0), (n, n)).copy_from(&h1);
    g2.view_mut((n, n), (n, n)).copy_from(&h1);
    let g = select(&g2, &vi, &vi);
    let bi = select(&dense(&disc.asm.b_interior), &qi, &vi);
    let s = schur(&bi, &g);
    let m = select(&dense(&disc.asm.pressure.mass_interior), &qi, &qi);
    let ni = select(&dense(&disc.asm.pressure.seminorm_interior), &qi, &qi);
    let ones = DMatrix::from_element(qi.len(), 1, 1.0);
    let theta = deflated(&s, &m, &(&m * &ones))[0].max(0.0).sqrt();
    let beta = deflated(&s, &ni, &ones)[0].max(0.0).sqrt();
    let params = cutstokes::forms::FormParams { eta, ..Default::default() };
    let c0 = generalized_eigenvalues(&dense(&v.a(&params)), &dense(&v.norm_gram()))[0];
    DenseConstants { theta, beta, c0 }
}
