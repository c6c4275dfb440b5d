//! Direct solution of the constrained saddle-point system.

use serde::Serialize;
use thiserror::Error;

use crate::forms::SaddleSystem;
use crate::linalg::{dot, norm2, CsrMatrix, LinalgError, LuSolver};

pub use crate::linalg::{solve_spd, SpdSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("solution contains non-finite values (singular system)")]
    NonFinite,
    #[error("relative residual {0:e} exceeds the tolerance")]
    Residual(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// `|K x - rhs| / |rhs|`, or the absolute residual when `rhs = 0`.
    pub relative_residual: f64,
    /// `c . p` relative to `|c| |p|`.
    pub interior_mean: f64,
    pub refinement_steps: usize,
    pub n_unknowns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Multiplier of the interior mean constraint.
    pub multiplier: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Residual tolerance enforced by [`solve`].
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Solves `[[A, B^T, 0], [B, -J, c], [0, c^T, 0]] [u; p; mu] = [f; 0; 0]` by
/// sparse LU with up to two steps of iterative refinement.
pub fn solve(sys: &SaddleSystem) -> Result<Solution, SolverError> {
    let k = sys.constrained_matrix();
    let rhs = sys.rhs(true);
    let lu = LuSolver::new(&k)?;
    let (x, relative_residual, refinement_steps) = refine(&k, &lu, &rhs)?;
    if relative_residual > RESIDUAL_TOLERANCE {
        return Err(SolverError::Residual(relative_residual));
    }
    let nu = sys.n_velocity();
    let np = sys.n_pressure();
    let pressure = x[nu..nu + np].to_vec();
    let scale = norm2(&sys.c) * norm2(&pressure);
    let interior_mean = if scale > 0.0 { dot(&sys.c, &pressure) / scale } else { 0.0 };
    Ok(Solution {
        velocity: x[..nu].to_vec(),
        pressure,
        multiplier: x[nu + np],
        diagnostics: SolveDiagnostics { relative_residual, interior_mean, refinement_steps, n_unknowns: k.nrows },
    })
}

fn refine(k: &CsrMatrix, lu: &LuSolver, rhs: &[f64]) -> Result<(Vec<f64>, f64, usize), SolverError> {
    let rhs_norm = norm2(rhs);
    let denom = if rhs_norm > 0.0 { rhs_norm } else { 1.0 };
    let mut x = lu.solve(rhs);
    let mut steps = 0;
    loop {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        let kx = k.mul_vec(&x);
        let r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, a)| b - a).collect();
        let rel = norm2(&r) / denom;
        if rel <= 1e-14 || steps == 2 {
            return Ok((x, rel, steps));
        }
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
        steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{Assembly, FormParams, QuadratureSet};
    use crate::geometry::{classify, Circle};
    use crate::mesh::{BoundingBox, UniformMeshParams};
    use crate::quadrature::CutMethod;
    use crate::spaces::{ElementPair, FeSystem};

    fn system(pair: ElementPair, load: f64, gamma_p: f64) -> SaddleSystem {
        let mesh = UniformMeshParams::new(BoundingBox::centered_square(1.5), 8).with_shift([0.0131, 0.0077]).build().unwrap();
        let phi = Circle::new([0.0, 0.0], 1.0);
        let cls = classify(&mesh, &phi).unwrap();
        let sys = FeSystem::build(&mesh, &cls, pair);
        let quad = QuadratureSet::for_pair(&mesh, &cls, &phi, CutMethod::CircleExact, pair.superspace_degree()).unwrap();
        let asm = Assembly::new(&mesh, &cls, &sys, &quad).unwrap();
        let f = vec![load; sys.n_velocity()];
        asm.saddle_system(FormParams { gamma_p, ..Default::default() }, f)
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let s = solve(&system(ElementPair::TaylorHood, 0.0, 1.0)).unwrap();
        assert!(s.velocity.iter().chain(&s.pressure).all(|&v| v == 0.0));
        assert_eq!(s.multiplier, 0.0);
    }

    #[test]
    fn residual_and_mean_constraint() {
        for pair in ElementPair::ALL {
            let sys = system(pair, 1.0, 1.0);
            let s = solve(&sys).unwrap();
            assert!(s.diagnostics.relative_residual <= 1e-10);
            assert!(dot(&sys.c, &s.pressure).abs() <= 1e-10 * norm2(&sys.c) * norm2(&s.pressure).max(1.0));
        }
    }

    #[test]
    fn spd_identity_returns_rhs() {
        let rhs = vec![1.0, -2.0, 3.5];
        assert_eq!(solve_spd(&CsrMatrix::identity(3), &rhs).unwrap(), rhs);
    }
}
