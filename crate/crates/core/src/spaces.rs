//! Lagrange spaces on the active mesh, element pairs, and interior subspaces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CutClassification;
use crate::mesh::{Mesh, Point};
use crate::quadrature::triangle_quadrature;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("derivative order {order} exceeds the supported maximum {max}")]
    DerivativeOrder { order: usize, max: usize },
    #[error("triangle {0} carries no degrees of freedom")]
    InactiveTriangle(usize),
    #[error("unknown element pair `{0}` (expected taylor-hood-p2p1, mini-p1bp1 or p2p0disc)")]
    UnknownPair(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementPair {
    #[serde(rename = "taylor-hood-p2p1")]
    TaylorHood,
    #[serde(rename = "mini-p1bp1")]
    Mini,
    #[serde(rename = "p2p0disc")]
    P2P0,
}

impl ElementPair {
    pub const ALL: [ElementPair; 3] = [ElementPair::TaylorHood, ElementPair::Mini, ElementPair::P2P0];

    pub fn name(self) -> &'static str {
        match self {
            ElementPair::TaylorHood => "taylor-hood-p2p1",
            ElementPair::Mini => "mini-p1bp1",
            ElementPair::P2P0 => "p2p0disc",
        }
    }

    /// `k_u`: the complete polynomial degree contained in the velocity space.
    pub fn velocity_degree(self) -> usize {
        match self {
            ElementPair::TaylorHood | ElementPair::P2P0 => 2,
            ElementPair::Mini => 1,
        }
    }

    /// `s`: the polynomial degree of the smallest Lagrange space containing the velocity space.
    pub fn superspace_degree(self) -> usize {
        match self {
            ElementPair::TaylorHood | ElementPair::P2P0 => 2,
            ElementPair::Mini => 3,
        }
    }

    /// Highest normal-derivative order penalised by the velocity ghost penalty.
    pub fn penalty_order(self) -> usize {
        match self {
            ElementPair::TaylorHood | ElementPair::P2P0 => 2,
            ElementPair::Mini => 1,
        }
    }

    /// `k_p`.
    pub fn pressure_degree(self) -> usize {
        match self {
            ElementPair::TaylorHood | ElementPair::Mini => 1,
            ElementPair::P2P0 => 0,
        }
    }

    pub fn pressure_continuous(self) -> bool {
        self != ElementPair::P2P0
    }

    pub fn velocity_element(self) -> ScalarElement {
        match self {
            ElementPair::TaylorHood | ElementPair::P2P0 => ScalarElement::P2,
            ElementPair::Mini => ScalarElement::P1Bubble,
        }
    }

    pub fn pressure_element(self) -> ScalarElement {
        match self {
            ElementPair::TaylorHood | ElementPair::Mini => ScalarElement::P1,
            ElementPair::P2P0 => ScalarElement::P0,
        }
    }
}

impl fmt::Display for ElementPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementPair {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElementPair::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| SpaceError::UnknownPair(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScalarElement {
    /// Piecewise constants, discontinuous.
    P0,
    P1,
    P2,
    /// Piecewise linears without continuity, three vertex DOFs per triangle.
    P1Disc,
    /// P1 enriched by the cubic bubble `27 λ0 λ1 λ2`.
    P1Bubble,
}

impl ScalarElement {
    pub fn local_dofs(self) -> usize {
        match self {
            ScalarElement::P0 => 1,
            ScalarElement::P1 | ScalarElement::P1Disc => 3,
            ScalarElement::P2 => 6,
            ScalarElement::P1Bubble => 4,
        }
    }

    pub fn is_continuous(self) -> bool {
        !matches!(self, ScalarElement::P0 | ScalarElement::P1Disc)
    }
}

/// Highest supported derivative order in [`evaluate_local`].
pub const MAX_DERIVATIVE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DofEntity {
    Vertex(usize),
    Edge(usize),
    Cell(usize),
}

/// Shape function values and physical derivatives at one point, one entry per local DOF.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    /// Empty when derivatives were not requested.
    pub grads: Vec<[f64; 2]>,
    pub hessians: Vec<[[f64; 2]; 2]>,
}

/// Gradients of the barycentric coordinates of a counter-clockwise triangle.
pub fn barycentric_gradients(tri: &[Point; 3]) -> [[f64; 2]; 3] {
    let [p0, p1, p2] = *tri;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    [
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
    ]
}

/// Barycentric coordinates of `p` with respect to `tri`; may be negative outside the triangle.
pub fn barycentric(tri: &[Point; 3], p: Point) -> [f64; 3] {
    let g = barycentric_gradients(tri);
    let l1 = g[1][0] * (p[0] - tri[0][0]) + g[1][1] * (p[1] - tri[0][1]);
    let l2 = g[2][0] * (p[0] - tri[0][0]) + g[2][1] * (p[1] - tri[0][1]);
    [1.0 - l1 - l2, l1, l2]
}

/// Evaluates the local shape functions of `element` on `tri` at barycentric
/// coordinates `lam`. Local order: vertices, then edges opposite vertex 0, 1, 2
/// (P2), then the bubble (P1Bubble).
pub fn evaluate_local(
    element: ScalarElement,
    tri: &[Point; 3],
    lam: [f64; 3],
    order: usize,
) -> Result<BasisEval, SpaceError> {
    if order > MAX_DERIVATIVE {
        return Err(SpaceError::DerivativeOrder { order, max: MAX_DERIVATIVE });
    }
    // Each function: value, derivatives in lambda, second derivatives in lambda.
    let mut funcs: Vec<(f64, [f64; 3], [[f64; 3]; 3])> = Vec::with_capacity(element.local_dofs());
    let zero3 = [[0.0; 3]; 3];
    match element {
        ScalarElement::P0 => funcs.push((1.0, [0.0; 3], zero3)),
        ScalarElement::P1 | ScalarElement::P1Disc | ScalarElement::P1Bubble => {
            for k in 0..3 {
                let mut d = [0.0; 3];
                d[k] = 1.0;
                funcs.push((lam[k], d, zero3));
            }
            if element == ScalarElement::P1Bubble {
                let [a, b, c] = lam;
                let mut h = zero3;
                h[0][1] = 27.0 * c;
                h[1][0] = 27.0 * c;
                h[0][2] = 27.0 * b;
                h[2][0] = 27.0 * b;
                h[1][2] = 27.0 * a;
                h[2][1] = 27.0 * a;
                funcs.push((27.0 * a * b * c, [27.0 * b * c, 27.0 * a * c, 27.0 * a * b], h));
            }
        }
        ScalarElement::P2 => {
            for k in 0..3 {
                let mut d = [0.0; 3];
                d[k] = 4.0 * lam[k] - 1.0;
                let mut h = zero3;
                h[k][k] = 4.0;
                funcs.push((lam[k] * (2.0 * lam[k] - 1.0), d, h));
            }
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                let mut d = [0.0; 3];
                d[i] = 4.0 * lam[j];
                d[j] = 4.0 * lam[i];
                let mut h = zero3;
                h[i][j] = 4.0;
                h[j][i] = 4.0;
                funcs.push((4.0 * lam[i] * lam[j], d, h));
            }
        }
    }
    let g = barycentric_gradients(tri);
    let mut out = BasisEval { values: funcs.iter().map(|f| f.0).collect(), ..Default::default() };
    if order >= 1 {
        out.grads = funcs
            .iter()
            .map(|(_, d, _)| {
                let mut gr = [0.0; 2];
                for k in 0..3 {
                    gr[0] += d[k] * g[k][0];
                    gr[1] += d[k] * g[k][1];
                }
                gr
            })
            .collect();
    }
    if order >= 2 {
        out.hessians = funcs
            .iter()
            .map(|(_, _, h)| {
                let mut hs = [[0.0; 2]; 2];
                for j in 0..3 {
                    for k in 0..3 {
                        if h[j][k] == 0.0 {
                            continue;
                        }
                        for a in 0..2 {
                            for b in 0..2 {
                                hs[a][b] += h[j][k] * g[j][a] * g[k][b];
                            }
                        }
                    }
                }
                hs
            })
            .collect();
    }
    Ok(out)
}

/// A scalar finite element space on the active triangles.
#[derive(Debug, Clone)]
pub struct ScalarSpace {
    pub element: ScalarElement,
    pub n_dofs: usize,
    /// Global DOFs of each triangle in local order; empty for exterior triangles.
    pub cell_dofs: Vec<Vec<usize>>,
    pub entities: Vec<DofEntity>,
    /// Nodal point of each DOF (the centroid for cell DOFs).
    pub nodes: Vec<Point>,
}

impl ScalarSpace {
    pub fn build(mesh: &Mesh, active: &[bool], element: ScalarElement) -> Self {
        let mut entities = Vec::new();
        let mut nodes = Vec::new();
        let mut vertex_dof = vec![usize::MAX; mesh.num_vertices()];
        let mut edge_dof = vec![usize::MAX; mesh.num_edges()];
        let mut cell_dof = vec![usize::MAX; mesh.num_triangles()];
        let uses_vertices = element.is_continuous();
        if uses_vertices {
            for (v, tris) in mesh.vertex_triangles.iter().enumerate() {
                if tris.iter().any(|&t| active[t]) {
                    vertex_dof[v] = entities.len();
                    entities.push(DofEntity::Vertex(v));
                    nodes.push(mesh.vertices[v]);
                }
            }
        }
        if element == ScalarElement::P2 {
            for (e, edge) in mesh.edges.iter().enumerate() {
                if edge.triangles.iter().flatten().any(|&t| active[t]) {
                    edge_dof[e] = entities.len();
                    entities.push(DofEntity::Edge(e));
                    nodes.push(edge.midpoint(mesh));
                }
            }
        }
        if matches!(element, ScalarElement::P0 | ScalarElement::P1Bubble) {
            for t in 0..mesh.num_triangles() {
                if active[t] {
                    cell_dof[t] = entities.len();
                    entities.push(DofEntity::Cell(t));
                    nodes.push(mesh.centroid(t));
                }
            }
        }
        if element == ScalarElement::P1Disc {
            for t in 0..mesh.num_triangles() {
                if active[t] {
                    cell_dof[t] = entities.len();
                    for &v in &mesh.triangles[t] {
                        entities.push(DofEntity::Cell(t));
                        nodes.push(mesh.vertices[v]);
                    }
                }
            }
        }
        let cell_dofs = (0..mesh.num_triangles())
            .map(|t| {
                if !active[t] {
                    return Vec::new();
                }
                let tri = mesh.triangles[t];
                match element {
                    ScalarElement::P0 => vec![cell_dof[t]],
                    ScalarElement::P1Disc => (0..3).map(|k| cell_dof[t] + k).collect(),
                    ScalarElement::P1 => tri.iter().map(|&v| vertex_dof[v]).collect(),
                    ScalarElement::P2 => tri
                        .iter()
                        .map(|&v| vertex_dof[v])
                        .chain(mesh.triangle_edges[t].iter().map(|&e| edge_dof[e]))
                        .collect(),
                    ScalarElement::P1Bubble => {
                        tri.iter().map(|&v| vertex_dof[v]).chain(std::iter::once(cell_dof[t])).collect()
                    }
                }
            })
            .collect();
        Self { element, n_dofs: entities.len(), cell_dofs, entities, nodes }
    }

    pub fn evaluate_basis(&self, mesh: &Mesh, t: usize, lam: [f64; 3], order: usize) -> Result<BasisEval, SpaceError> {
        if self.cell_dofs[t].is_empty() {
            return Err(SpaceError::InactiveTriangle(t));
        }
        evaluate_local(self.element, &mesh.triangle_points(t), lam, order)
    }

    /// Evaluates the discrete function `coeffs` restricted to triangle `t` at physical point `p`.
    pub fn evaluate(&self, mesh: &Mesh, coeffs: &[f64], t: usize, p: Point) -> (f64, [f64; 2]) {
        let tri = mesh.triangle_points(t);
        let b = evaluate_local(self.element, &tri, barycentric(&tri, p), 1).expect("order 1 is supported");
        let mut value = 0.0;
        let mut grad = [0.0; 2];
        for (i, &d) in self.cell_dofs[t].iter().enumerate() {
            value += coeffs[d] * b.values[i];
            grad[0] += coeffs[d] * b.grads[i][0];
            grad[1] += coeffs[d] * b.grads[i][1];
        }
        (value, grad)
    }

    /// Nodal interpolation; P0 DOFs take the element mean, bubble DOFs are zero.
    pub fn interpolate(&self, mesh: &Mesh, field: impl Fn(Point) -> f64) -> Vec<f64> {
        self.entities
            .iter()
            .zip(&self.nodes)
            .map(|(entity, &node)| match (self.element, entity) {
                (ScalarElement::P0, DofEntity::Cell(t)) => {
                    let rule = triangle_quadrature(&mesh.triangle_points(*t), 8);
                    rule.integrate(&field) / rule.measure()
                }
                (ScalarElement::P1Bubble, DofEntity::Cell(_)) => 0.0,
                _ => field(node),
            })
            .collect()
    }
}

/// Velocity and pressure spaces of an element pair on the active mesh, with interior masks.
///
/// Velocity DOFs are blocked by component: the global index of scalar DOF `i`
/// in component `c` is `c * velocity.n_dofs + i`.
#[derive(Debug, Clone)]
pub struct FeSystem {
    pub pair: ElementPair,
    pub velocity: ScalarSpace,
    pub pressure: ScalarSpace,
    /// Per scalar velocity DOF: membership in the interior space with zero trace on the interior boundary.
    pub velocity_interior: Vec<bool>,
    /// Per pressure DOF: the basis function is nonzero somewhere on the interior region.
    pub pressure_interior: Vec<bool>,
}

impl FeSystem {
    pub fn build(mesh: &Mesh, cls: &CutClassification, pair: ElementPair) -> Self {
        let active: Vec<bool> = (0..mesh.num_triangles()).map(|t| cls.is_active(t)).collect();
        let velocity = ScalarSpace::build(mesh, &active, pair.velocity_element());
        let pressure = ScalarSpace::build(mesh, &active, pair.pressure_element());
        let velocity_interior = velocity
            .entities
            .iter()
            .map(|entity| match *entity {
                DofEntity::Vertex(v) => {
                    !mesh.is_boundary_vertex(v) && mesh.vertex_triangles[v].iter().all(|&t| cls.is_interior(t))
                }
                DofEntity::Edge(e) => {
                    let tris = mesh.edges[e].triangles;
                    tris.iter().all(|t| t.is_some_and(|t| cls.is_interior(t)))
                }
                DofEntity::Cell(t) => cls.is_interior(t),
            })
            .collect();
        let pressure_interior = pressure
            .entities
            .iter()
            .map(|entity| match *entity {
                DofEntity::Vertex(v) => mesh.vertex_triangles[v].iter().any(|&t| cls.is_interior(t)),
                DofEntity::Cell(t) => cls.is_interior(t),
                DofEntity::Edge(_) => unreachable!("pressure spaces have no edge DOFs"),
            })
            .collect();
        Self { pair, velocity, pressure, velocity_interior, pressure_interior }
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.velocity.n_dofs
    }

    pub fn n_pressure(&self) -> usize {
        self.pressure.n_dofs
    }

    pub fn velocity_index(&self, component: usize, scalar: usize) -> usize {
        component * self.velocity.n_dofs + scalar
    }

    /// The interior velocity mask over both components.
    pub fn velocity_interior_mask(&self) -> Vec<bool> {
        self.velocity_interior.iter().chain(&self.velocity_interior).copied().collect()
    }

    pub fn interpolate_velocity(&self, mesh: &Mesh, field: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        let mut out = self.velocity.interpolate(mesh, |p| field(p)[0]);
        out.extend(self.velocity.interpolate(mesh, |p| field(p)[1]));
        out
    }

    pub fn interpolate_pressure(&self, mesh: &Mesh, field: impl Fn(Point) -> f64) -> Vec<f64> {
        self.pressure.interpolate(mesh, field)
    }

    /// Velocity value and gradient (rows: components) of `coeffs` on triangle `t` at `p`.
    pub fn evaluate_velocity(&self, mesh: &Mesh, coeffs: &[f64], t: usize, p: Point) -> ([f64; 2], [[f64; 2]; 2]) {
        let n = self.velocity.n_dofs;
        let (u0, g0) = self.velocity.evaluate(mesh, &coeffs[..n], t, p);
        let (u1, g1) = self.velocity.evaluate(mesh, &coeffs[n..], t, p);
        ([u0, u1], [g0, g1])
    }
}
