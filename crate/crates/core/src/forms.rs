//! Assembly of the bilinear forms, the load, and the norm Gram matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::sync::Arc;

use crate::geometry::{classify, CutClassification, GeometryError, LevelSet};
use crate::linalg::CsrMatrix;
use crate::mesh::{Mesh, Point};
use crate::quadrature::{cut_rules, face_rule, triangle_quadrature, CutMethod, QuadratureError, QuadratureRule};
use crate::spaces::{barycentric, evaluate_local, BasisEval, ElementPair, FeSystem, ScalarSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cut triangle {0} has no surface rule")]
    MissingSurfaceRule(usize),
}

/// Stabilization parameters: Nitsche `eta`, velocity ghost penalty `gamma_g`, pressure penalty `gamma_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormParams {
    pub eta: f64,
    pub gamma_g: f64,
    pub gamma_p: f64,
}

impl Default for FormParams {
    fn default() -> Self {
        Self { eta: 20.0, gamma_g: 1.0, gamma_p: 1.0 }
    }
}

/// Volume rules on `T ∩ Omega` for every active triangle and surface rules on
/// `T ∩ Gamma` for every cut triangle.
#[derive(Debug, Clone)]
pub struct QuadratureSet {
    pub volume: Vec<QuadratureRule>,
    pub surface: Vec<QuadratureRule>,
    pub volume_degree: usize,
    pub surface_degree: usize,
    pub face_degree: usize,
}

impl QuadratureSet {
    /// Degrees `2s` (volume and faces) and `2s + 2` (surface).
    pub fn for_pair(
        mesh: &Mesh,
        cls: &CutClassification,
        phi: &dyn LevelSet,
        method: CutMethod,
        s: usize,
    ) -> Result<Self, FormError> {
        Self::build(mesh, cls, phi, method, 2 * s, 2 * s + 2, 2 * s)
    }

    pub fn build(
        mesh: &Mesh,
        cls: &CutClassification,
        phi: &dyn LevelSet,
        method: CutMethod,
        volume_degree: usize,
        surface_degree: usize,
        face_degree: usize,
    ) -> Result<Self, FormError> {
        let rules: Vec<(QuadratureRule, QuadratureRule)> = (0..mesh.num_triangles())
            .into_par_iter()
            .map(|t| -> Result<_, FormError> {
                if cls.is_interior(t) {
                    Ok((triangle_quadrature(&mesh.triangle_points(t), volume_degree), QuadratureRule::default()))
                } else if cls.is_cut(t) {
                    let r = cut_rules(mesh, t, phi, method, volume_degree.max(surface_degree))?;
                    Ok((r.volume, r.surface))
                } else {
                    Ok(Default::default())
                }
            })
            .collect::<Result<_, _>>()?;
        let (volume, surface) = rules.into_iter().unzip();
        Ok(Self { volume, surface, volume_degree, surface_degree, face_degree })
    }

    /// Total measure of `Omega` seen by the volume rules.
    pub fn domain_measure(&self) -> f64 {
        self.volume.iter().map(|r| r.measure()).sum()
    }
}

fn eval(space: &ScalarSpace, mesh: &Mesh, t: usize, p: Point, order: usize) -> BasisEval {
    let tri = mesh.triangle_points(t);
    evaluate_local(space.element, &tri, barycentric(&tri, p), order).expect("derivative order within range")
}

type Triplets = Vec<(usize, usize, f64)>;

fn gather<T: Sync>(items: &[T], local: impl Fn(&T) -> Triplets + Sync + Send) -> Triplets {
    let chunks: Vec<Triplets> = items.par_iter().map(local).collect();
    chunks.concat()
}

/// Lower-triangle triplets of a dense local matrix for
/// [`CsrMatrix::symmetric_from_triplets`]; an off-diagonal local pair that lands
/// on a global diagonal entry is counted twice.
fn lower_triplets(dofs: &[usize], local: &[f64]) -> Triplets {
    let n = dofs.len();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            let v = local[i * n + j];
            out.push((dofs[i], dofs[j], if i != j && dofs[i] == dofs[j] { 2.0 * v } else { v }));
        }
    }
    out
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `sum_T int w(x) k(i, j, x)` over `cells` with the given rule, symmetric in (i, j).
fn cell_form(
    space: &ScalarSpace,
    mesh: &Mesh,
    cells: &[usize],
    rule: impl Fn(usize) -> QuadratureRule + Sync + Send,
    order: usize,
    kernel: impl Fn(&BasisEval, usize, usize, usize) -> f64 + Sync + Send,
) -> CsrMatrix {
    let trips = gather(cells, |&t| {
        let dofs = &space.cell_dofs[t];
        let n = dofs.len();
        let mut local = vec![0.0; n * n];
        let r = rule(t);
        for (&p, &w) in r.points.iter().zip(&r.weights) {
            let b = eval(space, mesh, t, p, order);
            for i in 0..n {
                for j in 0..=i {
                    local[i * n + j] += w * kernel(&b, i, j, t);
                }
            }
        }
        lower_triplets(dofs, &local)
    });
    CsrMatrix::symmetric_from_triplets(space.n_dofs, trips)
}

fn surface_form(
    space: &ScalarSpace,
    mesh: &Mesh,
    quad: &QuadratureSet,
    cut: &[usize],
    kernel: impl Fn(&BasisEval, usize, usize, Point, usize) -> f64 + Sync + Send,
) -> CsrMatrix {
    let trips = gather(cut, |&t| {
        let dofs = &space.cell_dofs[t];
        let n = dofs.len();
        let r = &quad.surface[t];
        let mut local = vec![0.0; n * n];
        for ((&p, &w), &nrm) in r.points.iter().zip(&r.weights).zip(&r.normals) {
            let b = eval(space, mesh, t, p, 1);
            for i in 0..n {
                for j in 0..=i {
                    local[i * n + j] += w * kernel(&b, i, j, nrm, t);
                }
            }
        }
        lower_triplets(dofs, &local)
    });
    CsrMatrix::symmetric_from_triplets(space.n_dofs, trips)
}

/// `sum_F sum_{l in orders} scale(l, h_F) int_F [d_n^l u][d_n^l v]` over interior faces `faces`.
///
/// The jump is taken as the value from `edge.triangles[0]` minus the value from
/// `edge.triangles[1]`, with derivatives along the canonical edge normal.
pub fn face_jump_form(
    space: &ScalarSpace,
    mesh: &Mesh,
    faces: &[usize],
    orders: std::ops::RangeInclusive<usize>,
    degree: usize,
    scale: impl Fn(usize, f64) -> f64 + Sync + Send,
) -> Result<CsrMatrix, FormError> {
    let max_order = *orders.end();
    let chunks: Vec<Result<Triplets, FormError>> = faces
        .par_iter()
        .map(|&e| {
            let edge = &mesh.edges[e];
            let [Some(t1), Some(t2)] = edge.triangles else {
                panic!("face {e} is a boundary edge and cannot carry a jump");
            };
            let rule = face_rule(mesh, e, degree)?;
            let nrm = edge.normal;
            let dofs: Vec<usize> = space.cell_dofs[t1].iter().chain(&space.cell_dofs[t2]).copied().collect();
            let n1 = space.cell_dofs[t1].len();
            let n = dofs.len();
            let mut local = vec![0.0; n * n];
            let mut jump = vec![0.0; n];
            for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                let b1 = eval(space, mesh, t1, p, max_order);
                let b2 = eval(space, mesh, t2, p, max_order);
                for l in orders.clone() {
                    let coef = w * scale(l, edge.length);
                    let dn = |b: &BasisEval, i: usize| match l {
                        0 => b.values[i],
                        1 => dot2(b.grads[i], nrm),
                        _ => {
                            let h = b.hessians[i];
                            nrm[0] * (h[0][0] * nrm[0] + h[0][1] * nrm[1]) + nrm[1] * (h[1][0] * nrm[0] + h[1][1] * nrm[1])
                        }
                    };
                    for i in 0..n1 {
                        jump[i] = dn(&b1, i);
                    }
                    for i in n1..n {
                        jump[i] = -dn(&b2, i - n1);
                    }
                    for i in 0..n {
                        for j in 0..=i {
                            local[i * n + j] += coef * jump[i] * jump[j];
                        }
                    }
                }
            }
            Ok(lower_triplets(&dofs, &local))
        })
        .collect();
    let mut trips = Vec::new();
    for c in chunks {
        trips.extend(c?);
    }
    Ok(CsrMatrix::symmetric_from_triplets(space.n_dofs, trips))
}

/// `sum_{T in cells} h_T^2 int_T grad p . grad q + sum_{F in faces} h_F int_F [p][q]`.
pub fn scaled_seminorm(
    space: &ScalarSpace,
    mesh: &Mesh,
    cells: &[usize],
    faces: &[usize],
    degree: usize,
) -> Result<CsrMatrix, FormError> {
    let vol = cell_form(
        space,
        mesh,
        cells,
        |t| triangle_quadrature(&mesh.triangle_points(t), degree),
        1,
        |b, i, j, t| mesh.diameters[t].powi(2) * dot2(b.grads[i], b.grads[j]),
    );
    if space.element.is_continuous() {
        return Ok(vol);
    }
    let jumps = face_jump_form(space, mesh, faces, 0..=0, degree, |_, h| h)?;
    Ok(CsrMatrix::linear_combination(&[(1.0, &vol), (1.0, &jumps)]))
}

/// Mass matrix over full triangles `cells`.
pub fn full_mass(space: &ScalarSpace, mesh: &Mesh, cells: &[usize], degree: usize) -> CsrMatrix {
    cell_form(space, mesh, cells, |t| triangle_quadrature(&mesh.triangle_points(t), degree), 0, |b, i, j, _| {
        b.values[i] * b.values[j]
    })
}

/// Scalar blocks of the velocity forms; each velocity matrix is `blockdiag(X, X)`.
#[derive(Debug, Clone)]
pub struct VelocityBlocks {
    /// `(grad u, grad v)_Omega`.
    pub laplace: CsrMatrix,
    /// `(u, v)_Omega`.
    pub mass: CsrMatrix,
    /// `-int_Gamma (n.grad u) v + (n.grad v) u`.
    pub nitsche: CsrMatrix,
    /// `sum_T h_T^{-1} int_{T_Gamma} u v`.
    pub boundary_penalty: CsrMatrix,
    /// Ghost penalty on the faces of cut triangles, orders `1..=penalty_order`.
    pub ghost: CsrMatrix,
    /// `(grad u, grad v)` over the full active triangles.
    pub laplace_active: CsrMatrix,
    /// `(grad u, grad v)` over the interior triangles.
    pub laplace_interior: CsrMatrix,
    /// `(u, v)` over the interior triangles.
    pub mass_interior: CsrMatrix,
}

impl VelocityBlocks {
    pub fn a(&self, params: &FormParams) -> CsrMatrix {
        CsrMatrix::linear_combination(&[
            (1.0, &self.laplace),
            (1.0, &self.nitsche),
            (params.gamma_g, &self.ghost),
            (params.eta, &self.boundary_penalty),
        ])
    }

    /// Full `H1` inner product over the interior triangles.
    pub fn h1_interior(&self) -> CsrMatrix {
        CsrMatrix::linear_combination(&[(1.0, &self.laplace_interior), (1.0, &self.mass_interior)])
    }

    /// Gram of `|v|^2_{H1(Omega)} + j_h(v, v) + ghost(v, v)`.
    pub fn norm_gram(&self) -> CsrMatrix {
        CsrMatrix::linear_combination(&[(1.0, &self.laplace), (1.0, &self.boundary_penalty), (1.0, &self.ghost)])
    }
}

#[derive(Debug, Clone)]
pub struct PressureBlocks {
    /// L2(Omega) mass.
    pub mass_omega: CsrMatrix,
    /// L2 mass over the interior triangles.
    pub mass_interior: CsrMatrix,
    /// Scaled H1 seminorm over interior triangles and faces.
    pub seminorm_interior: CsrMatrix,
    /// Scaled H1 seminorm over active triangles and faces.
    pub seminorm_active: CsrMatrix,
    /// Pressure penalty without the `gamma_p` factor, orders `0..=k_p`.
    pub jump: CsrMatrix,
    /// `int_{interior} psi_i`.
    pub interior_mean: Vec<f64>,
}

/// Everything assembled for one mesh, classification and element pair.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub velocity: VelocityBlocks,
    pub pressure: PressureBlocks,
    /// `b_h(p, v) = -(p, div v)_Omega + int_Gamma p v.n`; rows pressure, columns velocity.
    pub b: CsrMatrix,
    /// `-(p, div v)` over the interior triangles.
    pub b_interior: CsrMatrix,
}

impl Assembly {
    pub fn new(mesh: &Mesh, cls: &CutClassification, sys: &FeSystem, quad: &QuadratureSet) -> Result<Self, FormError> {
        for &t in &cls.cut {
            if quad.surface[t].normals.len() != quad.surface[t].len() {
                return Err(FormError::MissingSurfaceRule(t));
            }
        }
        let vs = &sys.velocity;
        let ps = &sys.pressure;
        let vol = |t: usize| quad.volume[t].clone();
        let full_deg = quad.volume_degree;
        let full = |t: usize| triangle_quadrature(&mesh.triangle_points(t), full_deg);

        let laplace = cell_form(vs, mesh, &cls.active, vol, 1, |b, i, j, _| dot2(b.grads[i], b.grads[j]));
        let mass = cell_form(vs, mesh, &cls.active, vol, 0, |b, i, j, _| b.values[i] * b.values[j]);
        let nitsche = surface_form(vs, mesh, quad, &cls.cut, |b, i, j, n, _| {
            -(dot2(n, b.grads[i]) * b.values[j] + dot2(n, b.grads[j]) * b.values[i])
        });
        let boundary_penalty =
            surface_form(vs, mesh, quad, &cls.cut, |b, i, j, _, t| b.values[i] * b.values[j] / mesh.diameters[t]);
        let s = sys.pair.penalty_order();
        let ghost = face_jump_form(vs, mesh, &cls.ghost_faces, 1..=s, quad.face_degree, |l, h| h.powi(2 * l as i32 - 1))?;
        let laplace_active = cell_form(vs, mesh, &cls.active, full, 1, |b, i, j, _| dot2(b.grads[i], b.grads[j]));
        let laplace_interior = cell_form(vs, mesh, &cls.interior, full, 1, |b, i, j, _| dot2(b.grads[i], b.grads[j]));
        let mass_interior = cell_form(vs, mesh, &cls.interior, full, 0, |b, i, j, _| b.values[i] * b.values[j]);

        let kp = sys.pair.pressure_degree();
        let pressure = PressureBlocks {
            mass_omega: cell_form(ps, mesh, &cls.active, vol, 0, |b, i, j, _| b.values[i] * b.values[j]),
            mass_interior: full_mass(ps, mesh, &cls.interior, full_deg),
            seminorm_interior: scaled_seminorm(ps, mesh, &cls.interior, &cls.interior_faces, full_deg)?,
            seminorm_active: scaled_seminorm(ps, mesh, &cls.active, &cls.active_faces, full_deg)?,
            jump: face_jump_form(ps, mesh, &cls.ghost_faces, 0..=kp, quad.face_degree, |l, h| {
                h.powi(1 + 2 * l as i32)
            })?,
            interior_mean: {
                let mut c = vec![0.0; ps.n_dofs];
                for &t in &cls.interior {
                    let r = full(t);
                    for (&p, &w) in r.points.iter().zip(&r.weights) {
                        let b = eval(ps, mesh, t, p, 0);
                        for (i, &d) in ps.cell_dofs[t].iter().enumerate() {
                            c[d] += w * b.values[i];
                        }
                    }
                }
                c
            },
        };

        let b = coupling(sys, mesh, &cls.active, &vol, Some(quad));
        let b_interior = coupling(sys, mesh, &cls.interior, &full, None);
        Ok(Self {
            velocity: VelocityBlocks {
                laplace,
                mass,
                nitsche,
                boundary_penalty,
                ghost,
                laplace_active,
                laplace_interior,
                mass_interior,
            },
            pressure,
            b,
            b_interior,
        })
    }

    /// The saddle-point system for `params` and velocity load `f`.
    pub fn saddle_system(&self, params: FormParams, f: Vec<f64>) -> SaddleSystem {
        SaddleSystem {
            a: self.velocity.a(&params).block_diag2(),
            b: self.b.clone(),
            j: self.pressure.jump.scaled(params.gamma_p),
            f,
            c: self.pressure.interior_mean.clone(),
            params,
        }
    }

    pub fn norm_grams(&self, sys: &FeSystem) -> NormGrams {
        let mask = sys.velocity_interior_mask();
        let vi: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
        NormGrams {
            g_v: self.velocity.norm_gram().block_diag2(),
            g_h1i: self.velocity.h1_interior().block_diag2().select(&vi, &vi),
            m_omega: self.pressure.mass_omega.clone(),
            m_i: self.pressure.mass_interior.clone(),
            n_i: self.pressure.seminorm_interior.clone(),
            n_e: self.pressure.seminorm_active.clone(),
        }
    }
}

fn coupling(
    sys: &FeSystem,
    mesh: &Mesh,
    cells: &[usize],
    rule: &(impl Fn(usize) -> QuadratureRule + Sync),
    surface: Option<&QuadratureSet>,
) -> CsrMatrix {
    let (vs, ps) = (&sys.velocity, &sys.pressure);
    let nv = vs.n_dofs;
    let trips = gather(cells, |&t| {
        let mut out = Vec::new();
        let vd = &vs.cell_dofs[t];
        let pd = &ps.cell_dofs[t];
        let r = rule(t);
        for (&p, &w) in r.points.iter().zip(&r.weights) {
            let bv = eval(vs, mesh, t, p, 1);
            let bp = eval(ps, mesh, t, p, 0);
            for (i, &pi) in pd.iter().enumerate() {
                for (j, &vj) in vd.iter().enumerate() {
                    for c in 0..2 {
                        out.push((pi, c * nv + vj, -w * bp.values[i] * bv.grads[j][c]));
                    }
                }
            }
        }
        if let Some(q) = surface {
            let s = &q.surface[t];
            for ((&p, &w), &n) in s.points.iter().zip(&s.weights).zip(&s.normals) {
                let bv = eval(vs, mesh, t, p, 0);
                let bp = eval(ps, mesh, t, p, 0);
                for (i, &pi) in pd.iter().enumerate() {
                    for (j, &vj) in vd.iter().enumerate() {
                        for c in 0..2 {
                            out.push((pi, c * nv + vj, w * bp.values[i] * bv.values[j] * n[c]));
                        }
                    }
                }
            }
        }
        out
    });
    CsrMatrix::from_triplets(ps.n_dofs, 2 * nv, trips)
}

/// `(f, v)_Omega` for a vector load, with the cut volume rules.
pub fn assemble_load(
    mesh: &Mesh,
    cls: &CutClassification,
    sys: &FeSystem,
    quad: &QuadratureSet,
    f: &(dyn Fn(Point) -> [f64; 2] + Sync),
) -> Vec<f64> {
    let vs = &sys.velocity;
    let nv = vs.n_dofs;
    let parts: Vec<Vec<(usize, f64)>> = cls
        .active
        .par_iter()
        .map(|&t| {
            let mut out = Vec::new();
            let r = &quad.volume[t];
            for (&p, &w) in r.points.iter().zip(&r.weights) {
                let b = eval(vs, mesh, t, p, 0);
                let fv = f(p);
                for (j, &d) in vs.cell_dofs[t].iter().enumerate() {
                    out.push((d, w * fv[0] * b.values[j]));
                    out.push((nv + d, w * fv[1] * b.values[j]));
                }
            }
            out
        })
        .collect();
    let mut rhs = vec![0.0; 2 * nv];
    for part in parts {
        for (d, v) in part {
            rhs[d] += v;
        }
    }
    rhs
}

/// `[[A, B^T], [B, -J]]` with the pressure-mean constraint row `c`.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub j: CsrMatrix,
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub params: FormParams,
}

impl SaddleSystem {
    pub fn n_velocity(&self) -> usize {
        self.a.nrows
    }

    pub fn n_pressure(&self) -> usize {
        self.j.nrows
    }

    /// `K = [[A, B^T], [B, -J]]`.
    pub fn matrix(&self) -> CsrMatrix {
        self.bordered(false)
    }

    /// `K` bordered by the constraint: `[[A, B^T, 0], [B, -J, c], [0, c^T, 0]]`.
    pub fn constrained_matrix(&self) -> CsrMatrix {
        self.bordered(true)
    }

    fn bordered(&self, with_constraint: bool) -> CsrMatrix {
        let nu = self.n_velocity();
        let np = self.n_pressure();
        let mut trips: Vec<(usize, usize, f64)> = self.a.iter().collect();
        for (r, c, v) in self.b.iter() {
            trips.push((nu + r, c, v));
            trips.push((c, nu + r, v));
        }
        trips.extend(self.j.iter().map(|(r, c, v)| (nu + r, nu + c, -v)));
        let mut n = nu + np;
        if with_constraint {
            for (i, &ci) in self.c.iter().enumerate() {
                if ci != 0.0 {
                    trips.push((nu + i, n, ci));
                    trips.push((n, nu + i, ci));
                }
            }
            n += 1;
        }
        CsrMatrix::from_triplets(n, n, trips)
    }

    pub fn rhs(&self, with_constraint: bool) -> Vec<f64> {
        let mut r = self.f.clone();
        r.resize(self.n_velocity() + self.n_pressure() + usize::from(with_constraint), 0.0);
        r
    }
}

/// Gram matrices of the norms used by the stability constants.
#[derive(Debug, Clone)]
pub struct NormGrams {
    /// `|v|^2_{H1(Omega)} + j_h + ghost`, full velocity space.
    pub g_v: CsrMatrix,
    /// Full `H1` norm on the interior triangles, restricted to the interior velocity DOFs.
    pub g_h1i: CsrMatrix,
    pub m_omega: CsrMatrix,
    pub m_i: CsrMatrix,
    pub n_i: CsrMatrix,
    pub n_e: CsrMatrix,
}

/// Mesh, geometry, spaces, rules and assembled forms of one configuration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub phi: Arc<dyn LevelSet>,
    pub cls: CutClassification,
    pub sys: FeSystem,
    pub method: CutMethod,
    pub quad: QuadratureSet,
    pub asm: Assembly,
}

impl Discretization {
    pub fn new(mesh: Mesh, phi: Arc<dyn LevelSet>, pair: ElementPair, method: CutMethod) -> Result<Self, FormError> {
        let cls = classify(&mesh, phi.as_ref())?;
        let sys = FeSystem::build(&mesh, &cls, pair);
        let quad = QuadratureSet::for_pair(&mesh, &cls, phi.as_ref(), method, pair.superspace_degree())?;
        let asm = Assembly::new(&mesh, &cls, &sys, &quad)?;
        Ok(Self { mesh, phi, cls, sys, method, quad, asm })
    }

    pub fn pair(&self) -> ElementPair {
        self.sys.pair
    }

    pub fn load(&self, f: &(dyn Fn(Point) -> [f64; 2] + Sync)) -> Vec<f64> {
        assemble_load(&self.mesh, &self.cls, &self.sys, &self.quad, f)
    }

    pub fn saddle_system(&self, params: FormParams, f: &(dyn Fn(Point) -> [f64; 2] + Sync)) -> SaddleSystem {
        self.asm.saddle_system(params, self.load(f))
    }

    pub fn norm_grams(&self) -> NormGrams {
        self.asm.norm_grams(&self.sys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify, Circle};
    use crate::mesh::{BoundingBox, UniformMeshParams};
    use crate::spaces::ElementPair;
    use approx::assert_abs_diff_eq;

    struct Setup {
        mesh: Mesh,
        cls: CutClassification,
        sys: FeSystem,
        quad: QuadratureSet,
        asm: Assembly,
    }

    fn setup(n: usize, pair: ElementPair, radius: f64) -> Setup {
        let mesh = UniformMeshParams::new(BoundingBox::centered_square(1.5), n).with_shift([0.0131, 0.0077]).build().unwrap();
        let phi = Circle::new([0.0, 0.0], radius);
        let cls = classify(&mesh, &phi).unwrap();
        let sys = FeSystem::build(&mesh, &cls, pair);
        let quad = QuadratureSet::for_pair(&mesh, &cls, &phi, CutMethod::CircleExact, pair.superspace_degree()).unwrap();
        let asm = Assembly::new(&mesh, &cls, &sys, &quad).unwrap();
        Setup { mesh, cls, sys, quad, asm }
    }

    #[test]
    fn linear_field_energy_on_interior_triangle() {
        let s = setup(8, ElementPair::TaylorHood, 1.0);
        let u = s.sys.velocity.interpolate(&s.mesh, |p| 1.0 + 2.0 * p[0] - 3.0 * p[1]);
        let t = s.cls.interior[0];
        let one = cell_form(&s.sys.velocity, &s.mesh, &[t], |t| s.quad.volume[t].clone(), 1, |b, i, j, _| {
            dot2(b.grads[i], b.grads[j])
        });
        assert_abs_diff_eq!(one.quad_form(&u, &u), 13.0 * s.mesh.areas[t], epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_divergence_free_in_the_volume_term() {
        let s = setup(8, ElementPair::TaylorHood, 1.0);
        let rot = s.sys.interpolate_velocity(&s.mesh, |p| [-p[1], p[0]]);
        let bi = s.asm.b_interior.mul_vec(&rot);
        assert!(bi.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn divergence_theorem_for_the_boundary_term() {
        // r_h(1, v) = int_Gamma v.n = int_Omega div v for v = (x^2, x y).
        let s = setup(8, ElementPair::TaylorHood, 1.0);
        let v = s.sys.interpolate_velocity(&s.mesh, |p| [p[0] * p[0], p[0] * p[1]]);
        let ones = vec![1.0; s.sys.n_pressure()];
        let bv = s.asm.b.mul_vec(&v);
        // b_h(1, v) = -int div v + int_Gamma v.n = 0.
        assert_abs_diff_eq!(linalg_dot(&ones, &bv), 0.0, epsilon = 1e-12);
    }

    fn linalg_dot(a: &[f64], b: &[f64]) -> f64 {
        crate::linalg::dot(a, b)
    }

    #[test]
    fn boundary_penalty_of_constants() {
        let s = setup(8, ElementPair::TaylorHood, 1.0);
        let ones = vec![1.0; s.sys.velocity.n_dofs];
        let expected: f64 = s.cls.cut.iter().map(|&t| s.quad.surface[t].measure() / s.mesh.diameters[t]).sum();
        assert_abs_diff_eq!(s.asm.velocity.boundary_penalty.quad_form(&ones, &ones), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(s.asm.velocity.nitsche.quad_form(&ones, &ones), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn jumps_vanish_for_global_polynomials() {
        for pair in ElementPair::ALL {
            let s = setup(8, pair, 1.0);
            let q = s.sys.velocity.interpolate(&s.mesh, |p| 0.3 + p[0] * p[1] - 2.0 * p[1] * p[1]);
            if pair != ElementPair::Mini {
                let g = s.asm.velocity.ghost.quad_form(&q, &q);
                let scale = s.asm.velocity.ghost.max_abs() * crate::linalg::dot(&q, &q);
                assert!(g <= 1e-14 * scale, "{pair}: {g} vs {scale}");
            }
            let ones = vec![1.0; s.sys.n_pressure()];
            let jc = s.asm.pressure.jump.mul_vec(&ones);
            assert!(jc.iter().all(|v| v.abs() <= 1e-14 * s.asm.pressure.jump.max_abs()));
        }
    }

    #[test]
    fn saddle_matrix_is_symmetric() {
        let s = setup(8, ElementPair::TaylorHood, 1.0);
        let f = vec![0.0; s.sys.n_velocity()];
        let k = s.asm.saddle_system(FormParams::default(), f).constrained_matrix();
        assert!(k.asymmetry() <= 1e-13 * k.max_abs());
    }

    #[test]
    fn pressure_masses() {
        let s = setup(16, ElementPair::TaylorHood, 1.0);
        let ones = vec![1.0; s.sys.n_pressure()];
        assert_abs_diff_eq!(s.asm.pressure.mass_omega.quad_form(&ones, &ones), std::f64::consts::PI, epsilon = 1e-10);
        let interior_area: f64 = s.cls.interior.iter().map(|&t| s.mesh.areas[t]).sum();
        assert_abs_diff_eq!(s.asm.pressure.mass_interior.quad_form(&ones, &ones), interior_area, epsilon = 1e-12);
        assert!(s.asm.pressure.seminorm_interior.mul_vec(&ones).iter().all(|v| v.abs() < 1e-13));
    }
}
