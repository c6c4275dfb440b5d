//! Stability constants as generalized eigenvalue problems, the extension and
//! decomposition constructions, and parameter sweeps over mesh positions.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::fmt_float;
use crate::forms::{scaled_seminorm, Discretization, FormError, FormParams};
use crate::geometry::{check_assumptions, GeometryError, LevelSet, DEFAULT_MAX_PATH};
use crate::linalg::{
    complement_basis, deflated_eigenvalues, dot, generalized_eigenvalues, project, lanczos, CsrMatrix, Extreme, LinalgError, LuSolver,
    SpdSolver,
};
use crate::mesh::{BoundingBox, Mesh, MeshError, Point, UniformMeshParams};
use crate::quadrature::{face_rule, triangle_quadrature, CutMethod};
use crate::spaces::{barycentric, evaluate_local, DofEntity, ElementPair, ScalarElement, ScalarSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("no interior velocity degrees of freedom (mesh too coarse for the domain)")]
    EmptyInteriorVelocity,
    #[error("no interior pressure degrees of freedom (mesh too coarse for the domain)")]
    EmptyInteriorPressure,
    #[error("the decomposition needs a continuous P1 space, got {0:?}")]
    NotP1(ScalarElement),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Velocity norm on the interior space used by the interior inf-sup quotients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteriorNorm {
    /// `|v|^2_{H1} + |v|^2_{L2}`.
    #[default]
    Full,
    /// `|v|^2_{H1}`; makes the quotients invariant under scaling of the geometry.
    Seminorm,
}

/// Lanczos residual tolerance for the velocity-sized problems.
const LANCZOS_TOL: f64 = 1e-11;
const LANCZOS_SEED: u64 = 0x5eed;

fn indices(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&k| mask[k]).collect()
}

fn sym_dense(m: &CsrMatrix) -> Mat<f64> {
    m.to_dense()
}

fn lambda_min(evs: &[f64]) -> Option<f64> {
    evs.first().copied()
}

fn lambda_max(evs: &[f64]) -> Option<f64> {
    evs.last().copied()
}

/// `B G^{-1} B^T` as a dense matrix.
fn schur(b: &CsrMatrix, g: &SpdSolver) -> Mat<f64> {
    let bt = b.transpose().to_dense();
    let x = g.solve_mat(&bt);
    let bd = b.to_dense();
    let mut s = &bd * &x;
    let n = s.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Interior pressure DOFs, the interior Schur complement on them, and one
/// indicator column per connected component of the interior region.
#[derive(Debug, Clone)]
pub struct InteriorSchur {
    pub pressure_dofs: Vec<usize>,
    pub schur: Mat<f64>,
    pub indicators: Mat<f64>,
    pub components: usize,
}

impl InteriorSchur {
    pub fn new(disc: &Discretization, norm: InteriorNorm) -> Result<Self, StabilityError> {
        let vi = indices(&disc.sys.velocity_interior_mask());
        if vi.is_empty() {
            return Err(StabilityError::EmptyInteriorVelocity);
        }
        let qi = indices(&disc.sys.pressure_interior);
        if qi.is_empty() {
            return Err(StabilityError::EmptyInteriorPressure);
        }
        let v = &disc.asm.velocity;
        let scalar = match norm {
            InteriorNorm::Full => v.h1_interior(),
            InteriorNorm::Seminorm => v.laplace_interior.clone(),
        };
        let g = scalar.block_diag2().select(&vi, &vi);
        let bi = disc.asm.b_interior.select(&qi, &vi);
        let s = schur(&bi, &SpdSolver::new(&g)?);
        let (indicators, components) = component_indicators(disc, &qi);
        Ok(Self { pressure_dofs: qi, schur: s, indicators, components })
    }
}

fn component_indicators(disc: &Discretization, qi: &[usize]) -> (Mat<f64>, usize) {
    let (comp, count) = disc.cls.interior_components(&disc.mesh);
    let mut ind = Mat::<f64>::zeros(qi.len(), count);
    for (r, &d) in qi.iter().enumerate() {
        let tris: Vec<usize> = match disc.sys.pressure.entities[d] {
            DofEntity::Vertex(v) => disc.mesh.vertex_triangles[v].clone(),
            DofEntity::Cell(t) => vec![t],
            DofEntity::Edge(e) => disc.mesh.edges[e].triangles.iter().flatten().copied().collect(),
        };
        for t in tris {
            if comp[t] != usize::MAX {
                ind[(r, comp[t])] = 1.0;
            }
        }
    }
    (ind, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfSup {
    /// `+inf` when the mean-free interior pressure space is trivial.
    pub value: f64,
    pub components: usize,
}

/// Interior inf-sup constant: `sqrt` of the smallest eigenvalue of
/// `B_i G^{-1} B_i^T` against the interior pressure mass on mean-free pressures.
pub fn compute_theta(disc: &Discretization, norm: InteriorNorm) -> Result<InfSup, StabilityError> {
    let is = InteriorSchur::new(disc, norm)?;
    theta_from(disc, &is)
}

pub fn theta_from(disc: &Discretization, is: &InteriorSchur) -> Result<InfSup, StabilityError> {
    let m = sym_dense(&disc.asm.pressure.mass_interior.select(&is.pressure_dofs, &is.pressure_dofs));
    let d = &m * &is.indicators;
    let evs = deflated_eigenvalues(&is.schur, &m, &d)?;
    Ok(InfSup { value: lambda_min(&evs).map_or(f64::INFINITY, |l| l.max(0.0).sqrt()), components: is.components })
}

/// Constant of the interior inf-sup bound against the scaled pressure seminorm;
/// the per-component constants are deflated.
pub fn compute_beta(disc: &Discretization, norm: InteriorNorm) -> Result<InfSup, StabilityError> {
    let is = InteriorSchur::new(disc, norm)?;
    beta_from(disc, &is)
}

pub fn beta_from(disc: &Discretization, is: &InteriorSchur) -> Result<InfSup, StabilityError> {
    let n = sym_dense(&disc.asm.pressure.seminorm_interior.select(&is.pressure_dofs, &is.pressure_dofs));
    let evs = deflated_eigenvalues(&is.schur, &n, &is.indicators)?;
    Ok(InfSup { value: lambda_min(&evs).map_or(f64::INFINITY, |l| l.max(0.0).sqrt()), components: is.components })
}

/// Signed coercivity constant `lambda_min(A, G_V)`, by Lanczos on one velocity component.
pub fn compute_c0(disc: &Discretization, params: &FormParams) -> Result<f64, StabilityError> {
    let a = disc.asm.velocity.a(params);
    let g = disc.asm.velocity.norm_gram();
    let gs = SpdSolver::new(&g)?;
    let r = lanczos(
        g.nrows,
        |x| gs.solve(&a.mul_vec(x)),
        |x| g.mul_vec(x),
        Extreme::Both,
        LANCZOS_TOL,
        g.nrows,
        LANCZOS_SEED,
    );
    Ok(r.min)
}

/// Dense reference for [`compute_c0`].
pub fn compute_c0_dense(disc: &Discretization, params: &FormParams) -> Result<f64, StabilityError> {
    let a = disc.asm.velocity.a(params).to_dense();
    let g = disc.asm.velocity.norm_gram().to_dense();
    Ok(generalized_eigenvalues(&a, &g)?[0])
}

/// `sum_c B_c G^{-1} B_c^T` with `G` the scalar block of the velocity norm.
fn velocity_schur(disc: &Discretization) -> Result<Mat<f64>, StabilityError> {
    let g = SpdSolver::new(&disc.asm.velocity.norm_gram())?;
    let nv = disc.sys.velocity.n_dofs;
    let rows: Vec<usize> = (0..disc.sys.n_pressure()).collect();
    let mut s = Mat::<f64>::zeros(rows.len(), rows.len());
    for c in 0..2 {
        let cols: Vec<usize> = (c * nv..(c + 1) * nv).collect();
        s += schur(&disc.asm.b.select(&rows, &cols), &g);
    }
    Ok(s)
}

/// Lower bound `sqrt(lambda_min(B G_V^{-1} B^T + J, M_Omega))` on pressures
/// with zero interior mean, computed as `1 / sqrt(lambda_max(M_Omega, S + J))`
/// so that a nearly singular cut mass matrix is never factored. Returns 0 when
/// `S + J` is singular on the constrained space.
pub fn compute_cb_lower(disc: &Discretization, params: &FormParams) -> Result<f64, StabilityError> {
    let mut s = velocity_schur(disc)?;
    s += disc.asm.pressure.jump.scaled(params.gamma_p).to_dense();
    let m = sym_dense(&disc.asm.pressure.mass_omega);
    let c = &disc.asm.pressure.interior_mean;
    let z = complement_basis(&Mat::from_fn(c.len(), 1, |i, _| c[i]))?;
    if z.ncols() == 0 {
        return Ok(f64::INFINITY);
    }
    match generalized_eigenvalues(&project(&m, &z), &project(&s, &z)) {
        Ok(evs) => Ok(lambda_max(&evs).map_or(f64::INFINITY, |mu| if mu > 0.0 { mu.sqrt().recip() } else { f64::INFINITY })),
        Err(LinalgError::NotPositiveDefinite) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

/// Smallest `|lambda|` of `K x = lambda G x` on the mean-constrained space,
/// with `G = blockdiag(G_V, M_Omega + J)`.
pub fn compute_cs(disc: &Discretization, params: &FormParams) -> Result<f64, StabilityError> {
    let saddle = disc.asm.saddle_system(*params, vec![0.0; disc.sys.n_velocity()]);
    let k = saddle.constrained_matrix();
    let lu = LuSolver::new(&k)?;
    let w = product_gram(disc, params);
    let n = w.nrows;
    let r = lanczos(
        n,
        |x| {
            let mut rhs = w.mul_vec(x);
            rhs.push(0.0);
            let mut y = lu.solve(&rhs);
            y.truncate(n);
            y
        },
        |x| w.mul_vec(x),
        Extreme::LargestMagnitude,
        LANCZOS_TOL,
        n,
        LANCZOS_SEED,
    );
    let largest = r.min.abs().max(r.max.abs());
    Ok(if largest > 0.0 { 1.0 / largest } else { f64::INFINITY })
}

/// Gram of the product norm `|v|^2_V + |q|^2_{L2(Omega)} + J(q, q)`.
pub fn product_gram(disc: &Discretization, params: &FormParams) -> CsrMatrix {
    let gv = disc.asm.velocity.norm_gram().block_diag2();
    let qp = CsrMatrix::linear_combination(&[
        (1.0, &disc.asm.pressure.mass_omega),
        (params.gamma_p, &disc.asm.pressure.jump),
    ]);
    let nu = gv.nrows;
    let mut trips: Vec<(usize, usize, f64)> = gv.iter().collect();
    trips.extend(qp.iter().map(|(r, c, v)| (nu + r, nu + c, v)));
    let n = nu + qp.nrows;
    CsrMatrix::from_triplets(n, n, trips)
}

/// Polynomial extension from the interior pressure space into the broken
/// space of the same degree on the active triangles: the pressure on each cut
/// triangle is the polynomial of its assigned interior triangle.
#[derive(Debug, Clone)]
pub struct ExtensionOperator {
    /// Broken target space on the active triangles.
    pub target: ScalarSpace,
    /// Interior pressure DOFs, the columns of `matrix`.
    pub source_dofs: Vec<usize>,
    pub matrix: CsrMatrix,
    /// Scaled seminorm of the target space over active triangles and faces.
    pub target_seminorm: CsrMatrix,
}

impl ExtensionOperator {
    pub fn build(disc: &Discretization) -> Result<Self, StabilityError> {
        let mesh = &disc.mesh;
        let mut cls = disc.cls.clone();
        cls.assign_kt(mesh)?;
        let source = &disc.sys.pressure;
        let element = match source.element {
            ScalarElement::P0 => ScalarElement::P0,
            _ => ScalarElement::P1Disc,
        };
        let active: Vec<bool> = (0..mesh.num_triangles()).map(|t| cls.is_active(t)).collect();
        let target = ScalarSpace::build(mesh, &active, element);
        let source_dofs = indices(&disc.sys.pressure_interior);
        if source_dofs.is_empty() {
            return Err(StabilityError::EmptyInteriorPressure);
        }
        let local: HashMap<usize, usize> = source_dofs.iter().enumerate().map(|(k, &d)| (d, k)).collect();
        let mut trips = Vec::new();
        for &t in &cls.active {
            let k = cls.kt[t].as_ref().map(|a| a.target).ok_or(GeometryError::UnreachableInterior(t))?;
            let tri_k = mesh.triangle_points(k);
            for &row in &target.cell_dofs[t] {
                let lam = barycentric(&tri_k, target.nodes[row]);
                let b = evaluate_local(source.element, &tri_k, lam, 0).expect("order 0");
                for (j, &d) in source.cell_dofs[k].iter().enumerate() {
                    let col = *local.get(&d).expect("DOFs of interior triangles are interior DOFs");
                    trips.push((row, col, b.values[j]));
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(target.n_dofs, source_dofs.len(), trips);
        let degree = 2 * disc.pair().superspace_degree();
        let target_seminorm = scaled_seminorm(&target, mesh, &cls.active, &cls.active_faces, degree)
            .map_err(|e| match e {
                FormError::Geometry(g) => StabilityError::Geometry(g),
                other => StabilityError::Linalg(LinalgError::Construction(other.to_string())),
            })?;
        Ok(Self { target, source_dofs, matrix, target_seminorm })
    }

    /// Extension of interior pressure coefficients (indexed like `source_dofs`).
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(q)
    }

    /// `|E q|_{h,e} / |q|_{h,i}`; `+inf` for a nonzero extension of a zero-seminorm `q`.
    pub fn ratio(&self, disc: &Discretization, q: &[f64]) -> f64 {
        let eq = self.apply(q);
        let num = self.target_seminorm.quad_form(&eq, &eq);
        let ni = disc.asm.pressure.seminorm_interior.select(&self.source_dofs, &self.source_dofs);
        let den = ni.quad_form(q, q);
        if den <= 1e-14 * num.max(f64::MIN_POSITIVE) {
            if num <= 1e-24 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (num / den).sqrt()
        }
    }

    /// `sup_q |E q|_{h,e} / |q|_{h,i}` over interior pressures modulo constants.
    pub fn constant(&self, disc: &Discretization) -> Result<f64, StabilityError> {
        let e = self.matrix.to_dense();
        let ne = self.target_seminorm.to_dense();
        let a = e.transpose() * (&ne * &e);
        let ni = sym_dense(&disc.asm.pressure.seminorm_interior.select(&self.source_dofs, &self.source_dofs));
        let (ind, _) = component_indicators(disc, &self.source_dofs);
        let evs = deflated_eigenvalues(&a, &ni, &ind)?;
        Ok(lambda_max(&evs).map_or(0.0, |l| l.max(0.0).sqrt()))
    }
}

/// Vertices of the cut triangles.
pub fn cut_vertices(mesh: &Mesh, cut: &[usize]) -> BTreeSet<usize> {
    cut.iter().flat_map(|&t| mesh.triangles[t]).collect()
}

/// Splits continuous P1 coefficients `v` into `(v - pi2 v, pi2 v)`, where
/// `pi2 v` keeps the nodal values at the vertices of the cut triangles.
pub fn decomposition(
    disc: &Discretization,
    space: &ScalarSpace,
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), StabilityError> {
    if space.element != ScalarElement::P1 {
        return Err(StabilityError::NotP1(space.element));
    }
    let keep = cut_vertices(&disc.mesh, &disc.cls.cut);
    let pi2: Vec<f64> = space
        .entities
        .iter()
        .zip(v)
        .map(|(e, &x)| match e {
            DofEntity::Vertex(k) if keep.contains(k) => x,
            _ => 0.0,
        })
        .collect();
    let pi1 = v.iter().zip(&pi2).map(|(a, b)| a - b).collect();
    Ok((pi1, pi2))
}

fn p1_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// `sup_v sum_{T near the cut} h_T^-2 |pi2 v|^2_T / sum_{T cut} h_T^-2 |v|^2_T` for P1 `v`.
pub fn decomposition_constant(disc: &Discretization) -> Result<f64, StabilityError> {
    let mesh = &disc.mesh;
    let verts: Vec<usize> = cut_vertices(mesh, &disc.cls.cut).into_iter().collect();
    if verts.is_empty() {
        return Ok(0.0);
    }
    let local: HashMap<usize, usize> = verts.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let n = verts.len();
    let assemble = |cells: &[usize]| {
        let mut m = Mat::<f64>::zeros(n, n);
        for &t in cells {
            let w = p1_mass(mesh.areas[t]);
            let s = mesh.diameters[t].powi(-2);
            let tri = mesh.triangles[t];
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(&i), Some(&j)) = (local.get(&tri[a]), local.get(&tri[b])) {
                        m[(i, j)] += s * w[a][b];
                    }
                }
            }
        }
        m
    };
    let num = assemble(&disc.cls.extended_cut);
    let den = assemble(&disc.cls.cut);
    Ok(lambda_max(&generalized_eigenvalues(&num, &den)?).unwrap_or(0.0))
}

/// Monomials `((x - c_x)/h)^a ((y - c_y)/h)^b` with `a + b <= degree`.
#[derive(Debug, Clone)]
pub struct Monomials {
    pub center: Point,
    pub scale: f64,
    pub exponents: Vec<(usize, usize)>,
}

fn falling(a: usize, i: usize) -> f64 {
    if i > a {
        return 0.0;
    }
    (0..i).map(|k| (a - k) as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    falling(n, k) / falling(k, k)
}

impl Monomials {
    pub fn new(center: Point, scale: f64, degree: usize) -> Self {
        let exponents = (0..=degree).flat_map(|d| (0..=d).map(move |b| (d - b, b))).collect();
        Self { center, scale, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// `d^i/dx^i d^j/dy^j` of every monomial at `p`.
    pub fn derivative(&self, p: Point, i: usize, j: usize) -> Vec<f64> {
        let xi = (p[0] - self.center[0]) / self.scale;
        let eta = (p[1] - self.center[1]) / self.scale;
        let f = self.scale.powi(-((i + j) as i32));
        self.exponents
            .iter()
            .map(|&(a, b)| {
                if i > a || j > b {
                    0.0
                } else {
                    f * falling(a, i) * falling(b, j) * xi.powi((a - i) as i32) * eta.powi((b - j) as i32)
                }
            })
            .collect()
    }

    /// `(n . grad)^l` of every monomial at `p`.
    pub fn normal_derivative(&self, p: Point, n: Point, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for i in 0..=l {
            let c = binomial(l, i) * n[0].powi(i as i32) * n[1].powi((l - i) as i32);
            if c == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(self.derivative(p, i, l - i)) {
                *o += c * d;
            }
        }
        out
    }
}

fn outer_add(m: &mut Mat<f64>, offset: (usize, usize), u: &[f64], v: &[f64], w: f64) {
    for (i, &a) in u.iter().enumerate() {
        for (j, &b) in v.iter().enumerate() {
            m[(offset.0 + i, offset.1 + j)] += w * a * b;
        }
    }
}

/// Surface mass and `h^-1 M_T + h K_T` of the degree-`degree` polynomials on cut triangle `t`.
fn trace_pencil(disc: &Discretization, t: usize, degree: usize) -> (Mat<f64>, Mat<f64>) {
    let mesh = &disc.mesh;
    let h = mesh.diameters[t];
    let basis = Monomials::new(mesh.centroid(t), h, degree);
    let n = basis.len();
    let mut surf = Mat::<f64>::zeros(n, n);
    let r = &disc.quad.surface[t];
    for (&p, &w) in r.points.iter().zip(&r.weights) {
        let v = basis.derivative(p, 0, 0);
        outer_add(&mut surf, (0, 0), &v, &v, w);
    }
    let mut vol = Mat::<f64>::zeros(n, n);
    let full = triangle_quadrature(&mesh.triangle_points(t), 2 * degree);
    for (&p, &w) in full.points.iter().zip(&full.weights) {
        let v = basis.derivative(p, 0, 0);
        let dx = basis.derivative(p, 1, 0);
        let dy = basis.derivative(p, 0, 1);
        outer_add(&mut vol, (0, 0), &v, &v, w / h);
        outer_add(&mut vol, (0, 0), &dx, &dx, w * h);
        outer_add(&mut vol, (0, 0), &dy, &dy, w * h);
    }
    (surf, vol)
}

/// `max_T sup_v |v|_{T ∩ Gamma} / (h^-1 |v|^2_T + h |grad v|^2_T)^{1/2}` over
/// polynomials of the superspace degree.
pub fn trace_constant(disc: &Discretization) -> Result<f64, StabilityError> {
    let s = disc.pair().superspace_degree();
    let per: Vec<f64> = disc
        .cls
        .cut
        .par_iter()
        .map(|&t| -> Result<f64, StabilityError> {
            let (a, b) = trace_pencil(disc, t, s);
            Ok(lambda_max(&generalized_eigenvalues(&a, &b)?).unwrap_or(0.0))
        })
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().fold(0.0, f64::max).max(0.0).sqrt())
}

/// Sampling estimate of [`trace_constant`] with `samples` random polynomials per cut triangle.
pub fn trace_constant_sampled(disc: &Discretization, samples: usize, seed: u64) -> f64 {
    let s = disc.pair().superspace_degree();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for &t in &disc.cls.cut {
        let (a, b) = trace_pencil(disc, t, s);
        let n = a.nrows();
        for _ in 0..samples {
            let c = Mat::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
            let num = (c.transpose() * (&a * &c))[(0, 0)];
            let den = (c.transpose() * (&b * &c))[(0, 0)];
            if den > 0.0 {
                best = best.max(num / den);
            }
        }
    }
    best.sqrt()
}

/// Ghost faces with two cut neighbours.
pub fn cut_cut_faces(disc: &Discretization) -> Vec<usize> {
    disc.cls
        .ghost_faces
        .iter()
        .copied()
        .filter(|&e| disc.mesh.edges[e].triangles.iter().flatten().all(|&t| disc.cls.is_cut(t)))
        .collect()
}

/// Pencil of the face transfer inequality on face `e` for broken polynomials of
/// degree `m`: `|q|^2_{T1}` against `|q|^2_{T2} + sum_l h^{1+2l} int_F [d_n^l q]^2`.
pub fn face_transfer_pencil(mesh: &Mesh, e: usize, m: usize, swap: bool) -> (Mat<f64>, Mat<f64>) {
    let edge = &mesh.edges[e];
    let [Some(a), Some(b)] = edge.triangles else { panic!("face {e} is a boundary edge") };
    let (t1, t2) = if swap { (b, a) } else { (a, b) };
    let h = edge.length;
    let basis = Monomials::new(edge.midpoint(mesh), h, m);
    let k = basis.len();
    let mass = |t: usize| {
        let mut mm = Mat::<f64>::zeros(k, k);
        let r = triangle_quadrature(&mesh.triangle_points(t), 2 * m);
        for (&p, &w) in r.points.iter().zip(&r.weights) {
            let v = basis.derivative(p, 0, 0);
            outer_add(&mut mm, (0, 0), &v, &v, w);
        }
        mm
    };
    let mut num = Mat::<f64>::zeros(2 * k, 2 * k);
    let m1 = mass(t1);
    for i in 0..k {
        for j in 0..k {
            num[(i, j)] = m1[(i, j)];
        }
    }
    let mut den = Mat::<f64>::zeros(2 * k, 2 * k);
    let m2 = mass(t2);
    for i in 0..k {
        for j in 0..k {
            den[(k + i, k + j)] = m2[(i, j)];
        }
    }
    let rule = face_rule(mesh, e, 2 * m).expect("mesh edges have positive length");
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        for l in 0..=m {
            let d = basis.normal_derivative(p, edge.normal, l);
            let c = w * h.powi(1 + 2 * l as i32);
            let mut jump = d.clone();
            jump.extend(d.iter().map(|x| -x));
            outer_add(&mut den, (0, 0), &jump, &jump, c);
        }
    }
    (num, den)
}

/// Largest face transfer constant over faces between two cut triangles, both orientations.
pub fn aux6a_constant(disc: &Discretization) -> Result<f64, StabilityError> {
    let m = disc.pair().superspace_degree();
    let faces = cut_cut_faces(disc);
    let per: Vec<f64> = faces
        .par_iter()
        .map(|&e| -> Result<f64, StabilityError> {
            let mut best: f64 = 0.0;
            for swap in [false, true] {
                let (a, b) = face_transfer_pencil(&disc.mesh, e, m, swap);
                best = best.max(lambda_max(&generalized_eigenvalues(&a, &b)?).unwrap_or(0.0));
            }
            Ok(best)
        })
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

/// `sup_v |grad v|^2 over the active triangles / (|grad v|^2_Omega + ghost(v, v))` for one velocity component.
pub fn aux7_constant(disc: &Discretization) -> Result<f64, StabilityError> {
    let v = &disc.asm.velocity;
    let d0 = CsrMatrix::linear_combination(&[(1.0, &v.laplace), (1.0, &v.ghost)]);
    let c = d0.max_abs();
    // A rank-one term on one DOF removes the constants from both forms.
    let d = CsrMatrix::linear_combination(&[(1.0, &d0), (c, &CsrMatrix::from_triplets(d0.nrows, d0.ncols, vec![(0, 0, 1.0)]))]);
    let ds = SpdSolver::new(&d)?;
    let le = &v.laplace_active;
    let r = lanczos(d.nrows, |x| ds.solve(&le.mul_vec(x)), |x| d.mul_vec(x), Extreme::Both, LANCZOS_TOL, d.nrows, LANCZOS_SEED);
    Ok(r.max)
}

/// Which constants a sweep computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quantities {
    pub theta: bool,
    pub beta: bool,
    pub c0: bool,
    pub cb_lower: bool,
    pub cs: bool,
    pub trace: bool,
    pub extension: bool,
    pub decomposition: bool,
    pub aux6a: bool,
    pub aux7: bool,
}

impl Default for Quantities {
    fn default() -> Self {
        Self::all()
    }
}

impl Quantities {
    pub fn all() -> Self {
        Self {
            theta: true,
            beta: true,
            c0: true,
            cb_lower: true,
            cs: true,
            trace: true,
            extension: true,
            decomposition: true,
            aux6a: true,
            aux7: true,
        }
    }

    pub fn none() -> Self {
        Self {
            theta: false,
            beta: false,
            c0: false,
            cb_lower: false,
            cs: false,
            trace: false,
            extension: false,
            decomposition: false,
            aux6a: false,
            aux7: false,
        }
    }
}

/// One configuration at one `eta`. Constants that were not requested are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub pair: ElementPair,
    pub n: usize,
    pub h: f64,
    pub shift: Point,
    /// Radial distance of the sliver vertex from the circle, for sliver configurations.
    pub sliver_offset: Option<f64>,
    pub eta: f64,
    pub gamma_g: f64,
    pub gamma_p: f64,
    pub interior_norm: InteriorNorm,
    pub assumptions_passed: bool,
    pub components: Option<usize>,
    pub theta_h: Option<f64>,
    pub beta: Option<f64>,
    pub c0: Option<f64>,
    pub cb_lower: Option<f64>,
    pub cs: Option<f64>,
    pub trace_c: Option<f64>,
    pub ext_c: Option<f64>,
    pub decomp_c: Option<f64>,
    pub aux6a_c: Option<f64>,
    pub aux7_c: Option<f64>,
    /// First failure met while computing this row.
    pub error: Option<String>,
}

impl StabilityReport {
    pub const CSV_HEADER: &'static str =
        "pair,n,shift_x,shift_y,eta,theta_h,beta,c0,cb_lower,Cs,trace_c,ext_c,decomp_c,aux6a_c,aux7_c";

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        [
            self.pair.name().to_string(),
            self.n.to_string(),
            fmt_float(self.shift[0]),
            fmt_float(self.shift[1]),
            fmt_float(self.eta),
            o(self.theta_h),
            o(self.beta),
            o(self.c0),
            o(self.cb_lower),
            o(self.cs),
            o(self.trace_c),
            o(self.ext_c),
            o(self.decomp_c),
            o(self.aux6a_c),
            o(self.aux7_c),
        ]
        .join(",")
    }
}

pub fn reports_to_csv(reports: &[StabilityReport]) -> String {
    let mut out = String::from(StabilityReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Mesh position of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Placement {
    pub n: usize,
    pub shift: Point,
    pub sliver_offset: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub domain: Arc<dyn LevelSet>,
    pub bbox: BoundingBox,
    pub pairs: Vec<ElementPair>,
    pub ns: Vec<usize>,
    /// Shifts used at every level.
    pub shifts: Vec<Point>,
    /// Additional seeded random shifts per level, uniform in `[-h/2, h/2]^2`.
    pub random_shifts: usize,
    pub seed: u64,
    /// Radial offsets of sliver configurations built from the first shift (circle domains only).
    pub sliver_offsets: Vec<f64>,
    pub etas: Vec<f64>,
    pub gamma_g: f64,
    pub gamma_p: f64,
    pub method: CutMethod,
    pub max_path: usize,
    pub quantities: Quantities,
    pub interior_norm: InteriorNorm,
}

impl SweepConfig {
    pub fn new(domain: Arc<dyn LevelSet>) -> Self {
        Self {
            domain,
            bbox: BoundingBox::centered_square(1.5),
            pairs: ElementPair::ALL.to_vec(),
            ns: vec![8, 16, 32],
            shifts: vec![[0.0131, 0.0077]],
            random_shifts: 0,
            seed: 1,
            sliver_offsets: Vec::new(),
            etas: vec![20.0],
            gamma_g: 1.0,
            gamma_p: 1.0,
            method: CutMethod::CircleExact,
            max_path: DEFAULT_MAX_PATH,
            quantities: Quantities::all(),
            interior_norm: InteriorNorm::Full,
        }
    }

    /// All mesh placements, in a fixed order.
    pub fn placements(&self) -> Result<Vec<Placement>, MeshError> {
        let mut out = Vec::new();
        for &n in &self.ns {
            let h = (self.bbox.max[0] - self.bbox.min[0]) / n as f64;
            for &shift in &self.shifts {
                out.push(Placement { n, shift, sliver_offset: None });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            for _ in 0..self.random_shifts {
                let shift = [h * rng.random_range(-0.5..0.5), h * rng.random_range(-0.5..0.5)];
                out.push(Placement { n, shift, sliver_offset: None });
            }
            if let (Some(circle), Some(&base)) = (self.domain.as_circle(), self.shifts.first()) {
                for &offset in &self.sliver_offsets {
                    let mesh = UniformMeshParams::new(self.bbox, n).with_shift(base).build()?;
                    let shift = sliver_shift(&mesh, base, circle.center, circle.radius, offset);
                    out.push(Placement { n, shift, sliver_offset: Some(offset) });
                }
            }
        }
        Ok(out)
    }
}

/// Shift that moves the mesh vertex closest to the circle (along `x`) onto the
/// circle, then outward by `offset` in the radial direction.
pub fn sliver_shift(mesh: &Mesh, base: Point, center: Point, radius: f64, offset: f64) -> Point {
    let mut best: Option<(f64, f64)> = None;
    for p in &mesh.vertices {
        let (px, py) = (p[0] - center[0], p[1] - center[1]);
        if py.abs() >= 0.9 * radius {
            continue;
        }
        let x = px.signum() * (radius * radius - py * py).sqrt();
        let dx = x - px;
        if best.is_none_or(|(b, _)| dx.abs() < b.abs()) {
            best = Some((dx, x));
        }
    }
    let (dx, x) = best.expect("the mesh has vertices near the circle");
    [base[0] + dx + offset * radius / x, base[1]]
}

fn run_placement(cfg: &SweepConfig, pair: ElementPair, pl: &Placement) -> Vec<StabilityReport> {
    let template = |eta: f64| StabilityReport {
        pair,
        n: pl.n,
        h: 0.0,
        shift: pl.shift,
        sliver_offset: pl.sliver_offset,
        eta,
        gamma_g: cfg.gamma_g,
        gamma_p: cfg.gamma_p,
        interior_norm: cfg.interior_norm,
        assumptions_passed: false,
        components: None,
        theta_h: None,
        beta: None,
        c0: None,
        cb_lower: None,
        cs: None,
        trace_c: None,
        ext_c: None,
        decomp_c: None,
        aux6a_c: None,
        aux7_c: None,
        error: None,
    };
    let fail = |msg: String| {
        cfg.etas
            .iter()
            .map(|&eta| StabilityReport { error: Some(msg.clone()), ..template(eta) })
            .collect::<Vec<_>>()
    };
    let mesh = match UniformMeshParams::new(cfg.bbox, pl.n).with_shift(pl.shift).build() {
        Ok(m) => m,
        Err(e) => return fail(e.to_string()),
    };
    let disc = match Discretization::new(mesh, cfg.domain.clone(), pair, cfg.method) {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    let q = cfg.quantities;
    let mut base = template(cfg.etas.first().copied().unwrap_or(20.0));
    base.h = disc.mesh.h;
    base.assumptions_passed = check_assumptions(&disc.mesh, &disc.cls, cfg.max_path).passed();
    let mut error: Option<String> = None;
    let mut keep = |r: Result<f64, StabilityError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            error.get_or_insert(e.to_string());
            None
        }
    };
    let params = |eta: f64| FormParams { eta, gamma_g: cfg.gamma_g, gamma_p: cfg.gamma_p };
    if q.theta || q.beta {
        match InteriorSchur::new(&disc, cfg.interior_norm) {
            Ok(is) => {
                base.components = Some(is.components);
                if q.theta {
                    base.theta_h = keep(theta_from(&disc, &is).map(|r| r.value));
                }
                if q.beta {
                    base.beta = keep(beta_from(&disc, &is).map(|r| r.value));
                }
            }
            Err(e) => {
                keep(Err(e));
            }
        }
    }
    if q.cb_lower {
        base.cb_lower = keep(compute_cb_lower(&disc, &params(20.0)));
    }
    if q.trace {
        base.trace_c = keep(trace_constant(&disc));
    }
    if q.extension {
        base.ext_c = keep(ExtensionOperator::build(&disc).and_then(|e| e.constant(&disc)));
    }
    if q.decomposition {
        base.decomp_c = keep(decomposition_constant(&disc));
    }
    if q.aux6a {
        base.aux6a_c = keep(aux6a_constant(&disc));
    }
    if q.aux7 {
        base.aux7_c = keep(aux7_constant(&disc));
    }
    let mut rows = Vec::with_capacity(cfg.etas.len());
    for &eta in &cfg.etas {
        let mut row = StabilityReport { eta, ..base.clone() };
        if q.c0 {
            row.c0 = keep(compute_c0(&disc, &params(eta)));
        }
        if q.cs {
            row.cs = keep(compute_cs(&disc, &params(eta)));
        }
        rows.push(row);
    }
    if let Some(e) = error {
        rows.iter_mut().for_each(|r| r.error = Some(e.clone()));
    }
    rows
}

/// Runs every (pair, placement) configuration on a pool of `jobs` threads.
/// Rows come out in configuration order, one per `eta`.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize) -> Result<Vec<StabilityReport>, MeshError> {
    let placements = cfg.placements()?;
    let work: Vec<(ElementPair, Placement)> =
        cfg.pairs.iter().flat_map(|&p| placements.iter().map(move |&pl| (p, pl))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    let rows: Vec<Vec<StabilityReport>> =
        pool.install(|| work.par_iter().map(|(pair, pl)| run_placement(cfg, *pair, pl)).collect());
    Ok(rows.concat())
}

/// Largest `h` among configurations of `pair` whose mesh assumptions pass.
pub fn effective_h0(reports: &[StabilityReport], pair: ElementPair) -> Option<f64> {
    reports.iter().filter(|r| r.pair == pair && r.assumptions_passed).map(|r| r.h).fold(None, |a, h| {
        Some(a.map_or(h, |a: f64| a.max(h)))
    })
}

/// Median of the finite values.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Rayleigh quotient `q^T A q / q^T B q`.
pub fn rayleigh(a: &Mat<f64>, b: &Mat<f64>, q: &[f64]) -> f64 {
    let aq: Vec<f64> = (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * q[j]).sum()).collect();
    let bq: Vec<f64> = (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[(i, j)] * q[j]).sum()).collect();
    dot(q, &aq) / dot(q, &bq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;
    use approx::assert_abs_diff_eq;

    fn disc(n: usize, pair: ElementPair) -> Discretization {
        let mesh = UniformMeshParams::new(BoundingBox::centered_square(1.5), n).with_shift([0.0131, 0.0077]).build().unwrap();
        Discretization::new(mesh, Arc::new(Circle::new([0.0, 0.0], 1.0)), pair, CutMethod::CircleExact).unwrap()
    }

    #[test]
    fn monomial_derivatives_match_finite_differences() {
        let m = Monomials::new([0.1, -0.2], 0.3, 3);
        let p = [0.25, 0.05];
        let n = [0.6, 0.8];
        let eps = 1e-5;
        let f = |q: Point| m.derivative(q, 0, 0);
        let d1 = m.normal_derivative(p, n, 1);
        let plus = f([p[0] + eps * n[0], p[1] + eps * n[1]]);
        let minus = f([p[0] - eps * n[0], p[1] - eps * n[1]]);
        for k in 0..m.len() {
            assert_abs_diff_eq!(d1[k], (plus[k] - minus[k]) / (2.0 * eps), epsilon = 1e-6);
        }
        let d2 = m.normal_derivative(p, n, 2);
        let mid = f(p);
        for k in 0..m.len() {
            assert_abs_diff_eq!(d2[k], (plus[k] - 2.0 * mid[k] + minus[k]) / (eps * eps), epsilon = 1e-3);
        }
    }

    #[test]
    fn trace_pencil_for_constants() {
        let d = disc(8, ElementPair::TaylorHood);
        let t = d.cls.cut[0];
        let (a, b) = trace_pencil(&d, t, 2);
        let mut e = vec![0.0; a.nrows()];
        e[0] = 1.0;
        let expected = d.quad.surface[t].measure() / (d.mesh.areas[t] / d.mesh.diameters[t]);
        assert_abs_diff_eq!(rayleigh(&a, &b, &e), expected, epsilon = 1e-12);
    }

    #[test]
    fn decomposition_sums_back() {
        let d = disc(8, ElementPair::Mini);
        let active: Vec<bool> = (0..d.mesh.num_triangles()).map(|t| d.cls.is_active(t)).collect();
        let p1 = ScalarSpace::build(&d.mesh, &active, ScalarElement::P1);
        let ones = vec![1.0; p1.n_dofs];
        let (a, b) = decomposition(&d, &p1, &ones).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x + y == 1.0));
        assert!(matches!(decomposition(&d, &d.sys.velocity, &ones), Err(StabilityError::NotP1(_))));
    }

    #[test]
    fn extension_reproduces_polynomials() {
        let d = disc(8, ElementPair::TaylorHood);
        let e = ExtensionOperator::build(&d).unwrap();
        let q: Vec<f64> = e.source_dofs.iter().map(|&k| 2.0 * d.sys.pressure.nodes[k][0] - 1.0).collect();
        let eq = e.apply(&q);
        for (k, v) in eq.iter().enumerate() {
            assert_abs_diff_eq!(*v, 2.0 * e.target.nodes[k][0] - 1.0, epsilon = 1e-12);
        }
        let ones = vec![1.0; q.len()];
        assert_eq!(e.ratio(&d, &ones), 0.0);
        assert!(e.ratio(&d, &q).is_finite());
    }

    #[test]
    fn beta_is_invariant_under_constant_shifts() {
        let d = disc(8, ElementPair::TaylorHood);
        let is = InteriorSchur::new(&d, InteriorNorm::Full).unwrap();
        let n = sym_dense(&d.asm.pressure.seminorm_interior.select(&is.pressure_dofs, &is.pressure_dofs));
        let q: Vec<f64> = (0..is.pressure_dofs.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let shifted: Vec<f64> = q.iter().map(|v| v + 3.0).collect();
        let r1 = rayleigh(&is.schur, &n, &q);
        let r2 = rayleigh(&is.schur, &n, &shifted);
        assert!((r1 - r2).abs() <= 1e-10 * r1.abs());
    }
}
