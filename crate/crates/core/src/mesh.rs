//! Conforming triangulations of a rectangular bounding box.
//!
//! Meshes are built once and never mutated afterwards. Every edge is stored
//! once with vertices in `(min, max)` order and carries the incident
//! triangle(s) together with a unit normal that points from the lower-indexed
//! incident triangle towards the higher-indexed one.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point or vector in the plane.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("at least 2 subdivisions per axis are required, got {0}")]
    TooFewSubdivisions(usize),
    #[error("vertex perturbation must lie in [0, 0.25), got {0}")]
    PerturbationOutOfRange(f64),
    #[error("bounding box is empty or inverted")]
    EmptyBox,
    #[error("triangle {triangle} is degenerate or inverted (signed area {area:e})")]
    Degenerate { triangle: usize, area: f64 },
    #[error("triangle {triangle} references vertex {vertex}, but the mesh has {count} vertices")]
    BadVertexIndex { triangle: usize, vertex: usize, count: usize },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("malformed mesh text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    /// The square `[-half, half]^2`.
    pub fn centered_square(half: f64) -> Self {
        Self::new([-half, -half], [half, half])
    }
}

/// Parameters of a uniform (optionally shifted and jittered) mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformMeshParams {
    pub bbox: BoundingBox,
    /// Cells per axis.
    pub n: usize,
    /// Translation applied to every vertex.
    pub shift: Point,
    /// Vertex jitter relative to the cell size, in `[0, 0.25)`.
    pub perturbation: f64,
    pub seed: u64,
}

impl UniformMeshParams {
    pub fn new(bbox: BoundingBox, n: usize) -> Self {
        Self { bbox, n, shift: [0.0, 0.0], perturbation: 0.0, seed: 0 }
    }

    pub fn with_shift(mut self, shift: Point) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_perturbation(mut self, perturbation: f64, seed: u64) -> Self {
        self.perturbation = perturbation;
        self.seed = seed;
        self
    }

    pub fn build(&self) -> Result<Mesh, MeshError> {
        build_uniform_mesh(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Vertex indices, `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    /// Incident triangles; the second entry is `None` on the boundary of the box.
    /// When two are present, `triangles[0] < triangles[1]`.
    pub triangles: [Option<usize>; 2],
    /// Unit normal pointing from `triangles[0]` towards `triangles[1]`
    /// (outward of `triangles[0]` on the boundary).
    pub normal: Point,
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles[1].is_none()
    }

    pub fn midpoint(&self, mesh: &Mesh) -> Point {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// The triangle across this edge from `t`, if any.
    pub fn other(&self, t: usize) -> Option<usize> {
        match self.triangles {
            [Some(a), Some(b)] if a == t => Some(b),
            [Some(a), Some(b)] if b == t => Some(a),
            _ => None,
        }
    }
}

/// A set of triangles together with its vertex neighbourhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub seed: BTreeSet<usize>,
    pub members: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// `triangle_edges[t][k]` is the edge opposite local vertex `k`.
    pub triangle_edges: Vec<[usize; 3]>,
    pub vertex_triangles: Vec<Vec<usize>>,
    pub areas: Vec<f64>,
    pub diameters: Vec<f64>,
    pub inradii: Vec<f64>,
    /// `max_T h_T`.
    pub h: f64,
    /// `min_T h_T`.
    pub h_min: f64,
    /// Measured shape-regularity constant `max_T h_T / rho_T`.
    pub kappa: f64,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Uniform mesh of `params.bbox`: each of the `n x n` cells is split into two
/// triangles along the diagonal joining its lower-left and upper-right corners.
pub fn build_uniform_mesh(params: &UniformMeshParams) -> Result<Mesh, MeshError> {
    let n = params.n;
    if n < 2 {
        return Err(MeshError::TooFewSubdivisions(n));
    }
    if !(0.0..0.25).contains(&params.perturbation) {
        return Err(MeshError::PerturbationOutOfRange(params.perturbation));
    }
    let BoundingBox { min, max } = params.bbox;
    if !(max[0] > min[0] && max[1] > min[1]) {
        return Err(MeshError::EmptyBox);
    }
    let dx = (max[0] - min[0]) / n as f64;
    let dy = (max[1] - min[1]) / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let mut p = [
                min[0] + i as f64 * dx + params.shift[0],
                min[1] + j as f64 * dy + params.shift[1],
            ];
            let interior = i > 0 && i < n && j > 0 && j < n;
            if interior && params.perturbation > 0.0 {
                p[0] += params.perturbation * dx * rng.random_range(-1.0..1.0);
                p[1] += params.perturbation * dy * rng.random_range(-1.0..1.0);
            }
            vertices.push(p);
        }
    }

    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Mesh::from_raw(vertices, triangles)
}

impl Mesh {
    /// Builds adjacency and per-triangle metrics for an arbitrary conforming
    /// triangulation with counterclockwise triangles.
    pub fn from_raw(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        let mut diameters = Vec::with_capacity(triangles.len());
        let mut inradii = Vec::with_capacity(triangles.len());
        let mut vertex_triangles = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::BadVertexIndex { triangle: t, vertex: v, count: nv });
                }
                vertex_triangles[v].push(t);
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            let lens = [norm(sub(b, c)), norm(sub(c, a)), norm(sub(a, b))];
            let perimeter: f64 = lens.iter().sum();
            let diam = lens.iter().cloned().fold(0.0, f64::max);
            if !(area > 1e-14 * diam * diam) {
                return Err(MeshError::Degenerate { triangle: t, area });
            }
            areas.push(area);
            diameters.push(diam);
            inradii.push(2.0 * area / perimeter);
        }

        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut te = [0; 3];
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                let e = match edge_index.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.triangles[1].is_some() {
                            return Err(MeshError::NonManifoldEdge(key.0, key.1));
                        }
                        edge.triangles[1] = Some(t);
                        e
                    }
                    None => {
                        // Outward normal of the first incident triangle (tri is ccw, so
                        // rotating the directed edge a->b clockwise points outward).
                        let d = sub(vertices[b], vertices[a]);
                        let len = norm(d);
                        edges.push(Edge {
                            vertices: [key.0, key.1],
                            triangles: [Some(t), None],
                            normal: [d[1] / len, -d[0] / len],
                            length: len,
                        });
                        edge_index.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                te[k] = e;
            }
            triangle_edges.push(te);
        }

        let h = diameters.iter().cloned().fold(0.0, f64::max);
        let h_min = diameters.iter().cloned().fold(f64::INFINITY, f64::min);
        let kappa = diameters
            .iter()
            .zip(&inradii)
            .map(|(d, r)| d / r)
            .fold(0.0, f64::max);

        Ok(Self {
            vertices,
            triangles,
            edges,
            triangle_edges,
            vertex_triangles,
            areas,
            diameters,
            inradii,
            h,
            h_min,
            kappa,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Triangles sharing an edge with `t`, in ascending index order.
    pub fn edge_neighbors(&self, t: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.triangle_edges[t].iter().filter_map(|&e| self.edges[e].other(t)).collect();
        out.sort_unstable();
        out
    }

    /// Whether a vertex lies on the boundary of the meshed box.
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.vertex_triangles[v]
            .iter()
            .flat_map(|&t| self.triangle_edges[t])
            .any(|e| self.edges[e].is_boundary() && self.edges[e].vertices.contains(&v))
    }

    /// `omega(seed)`: every triangle with at least one vertex in a seed triangle.
    pub fn vertex_patch(&self, seed: &BTreeSet<usize>) -> Patch {
        let mut members = BTreeSet::new();
        for &t in seed {
            for &v in &self.triangles[t] {
                members.extend(self.vertex_triangles[v].iter().copied());
            }
        }
        Patch { seed: seed.clone(), members }
    }

    /// Shortest path of edge-adjacent triangles from `from` to `to` that stays
    /// inside `allowed`. Path length counts triangles, so `from == to` gives a
    /// path of length 1. Returns `None` when no path of length `<= max_len` exists.
    pub fn face_path(
        &self,
        from: usize,
        to: usize,
        allowed: impl Fn(usize) -> bool,
        max_len: usize,
    ) -> Option<Vec<usize>> {
        if !allowed(from) || !allowed(to) || max_len == 0 {
            return None;
        }
        let mut parent: HashMap<usize, usize> = HashMap::new();
        let mut depth: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        depth.insert(from, 1);
        queue.push_back(from);
        while let Some(t) = queue.pop_front() {
            if t == to {
                let mut path = vec![t];
                let mut cur = t;
                while let Some(&p) = parent.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            let d = depth[&t];
            if d >= max_len {
                continue;
            }
            for nb in self.edge_neighbors(t) {
                if allowed(nb) && !depth.contains_key(&nb) {
                    depth.insert(nb, d + 1);
                    parent.insert(nb, t);
                    queue.push_back(nb);
                }
            }
        }
        None
    }

    /// Plain-text dump: header `ntri nvert nedge`, vertex coordinates, triangle
    /// triples, then edge records `v0 v1 t0 t1` (`t1 = -1` on the boundary).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.num_triangles(), self.num_vertices(), self.num_edges());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.edges {
            let t0 = e.triangles[0].map_or(-1, |t| t as i64);
            let t1 = e.triangles[1].map_or(-1, |t| t as i64);
            let _ = writeln!(s, "{} {} {} {}", e.vertices[0], e.vertices[1], t0, t1);
        }
        s
    }

    /// Reads the format written by [`Mesh::to_text`]. Edge records are checked
    /// against the adjacency rebuilt from the triangles.
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, reason: &str| MeshError::Parse { line: line + 1, reason: reason.to_string() };
        let (hl, header) = lines.next().ok_or_else(|| perr(0, "missing header"))?;
        let counts: Vec<usize> = header
            .split_whitespace()
            .map(|w| w.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| perr(hl, &e.to_string()))?;
        let [ntri, nvert, nedge] = counts[..] else {
            return Err(perr(hl, "header must be `ntri nvert nedge`"));
        };
        let mut vertices = Vec::with_capacity(nvert);
        for _ in 0..nvert {
            let (l, line) = lines.next().ok_or_else(|| perr(hl, "truncated vertex block"))?;
            let xs: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseFloatError| perr(l, &e.to_string()))?;
            if xs.len() != 2 {
                return Err(perr(l, "expected two coordinates"));
            }
            vertices.push([xs[0], xs[1]]);
        }
        let mut triangles = Vec::with_capacity(ntri);
        for _ in 0..ntri {
            let (l, line) = lines.next().ok_or_else(|| perr(hl, "truncated triangle block"))?;
            let vs: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseIntError| perr(l, &e.to_string()))?;
            if vs.len() != 3 {
                return Err(perr(l, "expected three vertex indices"));
            }
            triangles.push([vs[0], vs[1], vs[2]]);
        }
        let mesh = Mesh::from_raw(vertices, triangles)?;
        if mesh.num_edges() != nedge {
            return Err(perr(hl, "edge count does not match the triangles"));
        }
        for e in &mesh.edges {
            let (l, line) = lines.next().ok_or_else(|| perr(hl, "truncated edge block"))?;
            let vs: Vec<i64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseIntError| perr(l, &e.to_string()))?;
            let expected = [
                e.vertices[0] as i64,
                e.vertices[1] as i64,
                e.triangles[0].map_or(-1, |t| t as i64),
                e.triangles[1].map_or(-1, |t| t as i64),
            ];
            if vs != expected {
                return Err(perr(l, "edge record disagrees with triangle connectivity"));
            }
        }
        Ok(mesh)
    }
}
