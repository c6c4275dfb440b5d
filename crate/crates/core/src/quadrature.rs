//! Gauss rules on the reference triangle and interval, mapped face rules, and
//! cut-cell rules on `T ∩ Omega` and `T ∩ Gamma`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Circle, LevelSet};
use crate::mesh::{Mesh, Point};

/// Highest exactness degree offered by [`reference_rules`].
pub const MAX_DEGREE: usize = 12;
/// Internal rules (curved maps, error norms) may go higher.
const MAX_INTERNAL_DEGREE: usize = 30;
/// Arcs are split into pieces no longer than this angle.
const MAX_ARC_ANGLE: f64 = PI / 8.0;
/// Extra refinement levels allowed for leaves whose topology is not a single crossing.
const EXTRA_LEVELS: usize = 6;
const EDGE_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("unsupported quadrature degree {0} (maximum {MAX_DEGREE})")]
    UnsupportedDegree(usize),
    #[error("edge {0} has zero length")]
    ZeroLengthEdge(usize),
    #[error("root finding failed to bracket the interface on triangle {0}")]
    RootBracket(usize),
    #[error("interface crosses an edge of triangle {0} more than twice")]
    TooManyRoots(usize),
    #[error("circle-exact quadrature requires a circular level set")]
    NotACircle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CutMethod {
    CircleExact,
    Subtriangulate { depth: usize },
}

/// Points and weights in physical coordinates. Surface rules also carry the
/// outward unit normal of `Omega` at each point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normals: Vec<Point>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }

    fn push(&mut self, p: Point, w: f64) {
        self.points.push(p);
        self.weights.push(w);
    }

    fn push_surface(&mut self, p: Point, w: f64, n: Point) {
        self.push(p, w);
        self.normals.push(n);
    }
}

/// A rule on a reference domain: the unit triangle `(0,0),(1,0),(0,1)` or the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

fn collapsed_rule(degree: usize) -> ReferenceRule {
    let m = (degree + 2).div_ceil(2);
    let (x, w) = gauss_legendre(m);
    let mut points = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for (&u, &wu) in x.iter().zip(&w) {
        for (&v, &wv) in x.iter().zip(&w) {
            points.push([u, v * (1.0 - u)]);
            weights.push(wu * wv * (1.0 - u));
        }
    }
    ReferenceRule { points, weights, degree }
}

fn interval_rule(degree: usize) -> ReferenceRule {
    let (x, w) = gauss_legendre((degree + 1).div_ceil(2).max(1));
    ReferenceRule { points: x.into_iter().map(|t| [t, 0.0]).collect(), weights: w, degree }
}

struct RuleCache {
    triangle: Vec<ReferenceRule>,
    interval: Vec<ReferenceRule>,
}

fn cache() -> &'static RuleCache {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    CACHE.get_or_init(|| RuleCache {
        triangle: (0..=MAX_INTERNAL_DEGREE).map(collapsed_rule).collect(),
        interval: (0..=MAX_INTERNAL_DEGREE).map(interval_rule).collect(),
    })
}

fn triangle_rule(degree: usize) -> &'static ReferenceRule {
    &cache().triangle[degree.min(MAX_INTERNAL_DEGREE)]
}

fn line_rule(degree: usize) -> &'static ReferenceRule {
    &cache().interval[degree.min(MAX_INTERNAL_DEGREE)]
}

/// Triangle and interval rules exact for polynomials of total degree `degree`.
pub fn reference_rules(degree: usize) -> Result<(ReferenceRule, ReferenceRule), QuadratureError> {
    check_degree(degree)?;
    Ok((triangle_rule(degree).clone(), line_rule(degree).clone()))
}

fn check_degree(degree: usize) -> Result<(), QuadratureError> {
    if degree > MAX_DEGREE {
        Err(QuadratureError::UnsupportedDegree(degree))
    } else {
        Ok(())
    }
}

fn affine(tri: &[Point; 3], r: [f64; 2]) -> Point {
    let l0 = 1.0 - r[0] - r[1];
    [
        l0 * tri[0][0] + r[0] * tri[1][0] + r[1] * tri[2][0],
        l0 * tri[0][1] + r[0] * tri[1][1] + r[1] * tri[2][1],
    ]
}

fn signed_area(tri: &[Point; 3]) -> f64 {
    0.5 * ((tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1]) - (tri[2][0] - tri[0][0]) * (tri[1][1] - tri[0][1]))
}

fn push_affine(rule: &mut QuadratureRule, tri: &[Point; 3], degree: usize) {
    let area2 = 2.0 * signed_area(tri).abs();
    let r = triangle_rule(degree);
    for (&p, &w) in r.points.iter().zip(&r.weights) {
        rule.push(affine(tri, p), w * area2);
    }
}

/// The reference rule mapped onto an uncut triangle.
pub fn triangle_quadrature(tri: &[Point; 3], degree: usize) -> QuadratureRule {
    let mut rule = QuadratureRule { degree, ..Default::default() };
    push_affine(&mut rule, tri, degree);
    rule
}

/// Gauss rule on the full edge `e`.
pub fn face_rule(mesh: &Mesh, e: usize, degree: usize) -> Result<QuadratureRule, QuadratureError> {
    let [a, b] = mesh.edges[e].vertices.map(|v| mesh.vertices[v]);
    segment_rule(a, b, degree).ok_or(QuadratureError::ZeroLengthEdge(e))
}

/// Gauss rule on the segment `a -> b`; `None` for a zero-length segment.
pub fn segment_rule(a: Point, b: Point, degree: usize) -> Option<QuadratureRule> {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    if len == 0.0 {
        return None;
    }
    let r = line_rule(degree);
    let mut rule = QuadratureRule { degree, ..Default::default() };
    for (p, &w) in r.points.iter().zip(&r.weights) {
        let t = p[0];
        rule.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], w * len);
    }
    Some(rule)
}

/// Volume and surface rules of one cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CutRules {
    pub volume: QuadratureRule,
    pub surface: QuadratureRule,
}

/// Rules on `T ∩ Omega` and `T ∩ Gamma` for triangle `t` of `mesh`.
pub fn cut_rules(
    mesh: &Mesh,
    t: usize,
    phi: &dyn LevelSet,
    method: CutMethod,
    degree: usize,
) -> Result<CutRules, QuadratureError> {
    cut_rules_on(mesh.triangle_points(t), t, phi, method, degree)
}

pub fn cut_volume_rule(
    mesh: &Mesh,
    t: usize,
    phi: &dyn LevelSet,
    method: CutMethod,
    degree: usize,
) -> Result<QuadratureRule, QuadratureError> {
    Ok(cut_rules(mesh, t, phi, method, degree)?.volume)
}

pub fn cut_surface_rule(
    mesh: &Mesh,
    t: usize,
    phi: &dyn LevelSet,
    method: CutMethod,
    degree: usize,
) -> Result<QuadratureRule, QuadratureError> {
    Ok(cut_rules(mesh, t, phi, method, degree)?.surface)
}

/// As [`cut_rules`] for an explicit counter-clockwise triangle; `id` labels errors.
pub fn cut_rules_on(
    tri: [Point; 3],
    id: usize,
    phi: &dyn LevelSet,
    method: CutMethod,
    degree: usize,
) -> Result<CutRules, QuadratureError> {
    check_degree(degree)?;
    let mut out = CutRules::default();
    out.volume.degree = degree;
    out.surface.degree = degree;
    match method {
        CutMethod::CircleExact => {
            let circle = phi.as_circle().ok_or(QuadratureError::NotACircle)?;
            clip_circle(&tri, &circle, degree, &mut out);
        }
        CutMethod::Subtriangulate { depth } => {
            let tol = 1e-12 * diameter(&tri);
            for k in 0..3 {
                if edge_sign_changes(phi, tri[k], tri[(k + 1) % 3], tol) > 2 {
                    return Err(QuadratureError::TooManyRoots(id));
                }
            }
            let ctx = Subdivision { phi, degree, depth, tol, id };
            ctx.refine(tri, 0, &mut out)?;
        }
    }
    Ok(out)
}

fn diameter(tri: &[Point; 3]) -> f64 {
    (0..3).map(|k| dist(tri[k], tri[(k + 1) % 3])).fold(0.0, f64::max)
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn mid(a: Point, b: Point) -> Point {
    lerp(a, b, 0.5)
}

fn inside(phi: f64, tol: f64) -> bool {
    phi < -tol
}

// ---------------------------------------------------------------------------
// Circle-exact backend

#[derive(Clone, Copy, PartialEq)]
enum Node {
    Vertex(Point),
    Entry(Point),
    Exit(Point),
}

impl Node {
    fn point(self) -> Point {
        match self {
            Node::Vertex(p) | Node::Entry(p) | Node::Exit(p) => p,
        }
    }
}

fn clip_circle(tri: &[Point; 3], circle: &Circle, degree: usize, out: &mut CutRules) {
    let c = circle.center;
    let r = circle.radius;
    let tol = 1e-12 * diameter(tri);
    let is_in: [bool; 3] = tri.map(|p| inside(dist(p, c) - r, tol));
    if is_in.iter().all(|&b| b) {
        push_affine(&mut out.volume, tri, degree);
        return;
    }

    let mut nodes = Vec::new();
    for k in 0..3 {
        let (a, b) = (tri[k], tri[(k + 1) % 3]);
        if is_in[k] {
            nodes.push(Node::Vertex(a));
        }
        let d = [b[0] - a[0], b[1] - a[1]];
        let f = [a[0] - c[0], a[1] - c[1]];
        let qa = d[0] * d[0] + d[1] * d[1];
        let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
        let qc = f[0] * f[0] + f[1] * f[1] - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let q = -0.5 * (qb + qb.signum() * sq);
        let (mut t1, mut t2) = (q / qa, if q != 0.0 { qc / q } else { -q / qa });
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        match (is_in[k], is_in[(k + 1) % 3]) {
            (true, true) => {}
            (true, false) => nodes.push(Node::Exit(lerp(a, b, t2.clamp(0.0, 1.0)))),
            (false, true) => nodes.push(Node::Entry(lerp(a, b, t1.clamp(0.0, 1.0)))),
            (false, false) => {
                let eps = 1e-14;
                if t1 >= -eps && t2 <= 1.0 + eps && (t2 - t1) * qa.sqrt() > tol {
                    nodes.push(Node::Entry(lerp(a, b, t1.clamp(0.0, 1.0))));
                    nodes.push(Node::Exit(lerp(a, b, t2.clamp(0.0, 1.0))));
                }
            }
        }
    }

    let angle = |p: Point| (p[1] - c[1]).atan2(p[0] - c[0]);
    let on_circle = |th: f64| [c[0] + r * th.cos(), c[1] + r * th.sin()];

    // Arcs as (start angle, sweep); polygon vertices include arc subdivision points.
    let mut polygon: Vec<Point> = Vec::new();
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    if nodes.is_empty() {
        // No crossings: either the disk lies inside T or the two are disjoint.
        let center_in = {
            let cross =
                |u: Point, v: Point| (v[0] - u[0]) * (c[1] - u[1]) - (c[0] - u[0]) * (v[1] - u[1]);
            (0..3).all(|k| cross(tri[k], tri[(k + 1) % 3]) >= 0.0)
        };
        if !center_in {
            return;
        }
        let n = 16;
        for i in 0..n {
            let th = 2.0 * PI * i as f64 / n as f64;
            polygon.push(on_circle(th));
            arcs.push((th, 2.0 * PI / n as f64));
        }
    } else {
        let m = nodes.len();
        for i in 0..m {
            let node = nodes[i];
            polygon.push(node.point());
            if let Node::Exit(x) = node {
                let next = (1..=m).map(|j| nodes[(i + j) % m]).find(|n| matches!(n, Node::Entry(_)));
                let Some(Node::Entry(y)) = next else { continue };
                let (a0, a1) = (angle(x), angle(y));
                let mut sweep = (a1 - a0).rem_euclid(2.0 * PI);
                if sweep > 2.0 * PI - 1e-14 {
                    sweep = 0.0;
                }
                if sweep == 0.0 {
                    continue;
                }
                let pieces = (sweep / MAX_ARC_ANGLE).ceil().max(1.0) as usize;
                let step = sweep / pieces as f64;
                for p in 0..pieces {
                    let th = a0 + p as f64 * step;
                    if p > 0 {
                        polygon.push(on_circle(th));
                    }
                    arcs.push((th, step));
                }
            }
        }
    }

    for k in 1..polygon.len().saturating_sub(1) {
        let sub = [polygon[0], polygon[k], polygon[k + 1]];
        if signed_area(&sub) > 0.0 {
            push_affine(&mut out.volume, &sub, degree);
        }
    }
    let (gs, gw) = gauss_legendre(degree.max(2) + 4);
    let (gi, giw) = gauss_legendre((degree + 2).div_ceil(2).max(1));
    for &(th0, sweep) in &arcs {
        // Circular segment between the chord and the arc, in chord-aligned coordinates.
        let half = 0.5 * sweep;
        let thm = th0 + half;
        let nu = [thm.cos(), thm.sin()];
        let tau = [-nu[1], nu[0]];
        let d0 = r * half.cos();
        let a = r * half.sin();
        for (&s01, &ws) in gs.iter().zip(&gw) {
            let s = -a + 2.0 * a * s01;
            let g = (r * r - s * s).max(0.0).sqrt() - d0;
            if g <= 0.0 {
                continue;
            }
            for (&w01, &ww) in gi.iter().zip(&giw) {
                let w = w01 * g;
                let p = [c[0] + s * tau[0] + (d0 + w) * nu[0], c[1] + s * tau[1] + (d0 + w) * nu[1]];
                out.volume.push(p, ws * 2.0 * a * ww * g);
            }
        }
        for (&t01, &wt) in gs.iter().zip(&gw) {
            let th = th0 + t01 * sweep;
            let n = [th.cos(), th.sin()];
            out.surface.push_surface([c[0] + r * n[0], c[1] + r * n[1]], wt * sweep * r, n);
        }
    }
}

// ---------------------------------------------------------------------------
// Subtriangulation backend

struct Subdivision<'a> {
    phi: &'a dyn LevelSet,
    degree: usize,
    depth: usize,
    tol: f64,
    id: usize,
}

enum LeafShape {
    Uniform(bool),
    /// Vertex `k` is alone on its side; the roots lie on the edges `k -> k+1` and `k -> k+2`.
    Single(usize),
    Complex,
}

fn sample_signs(phi: &dyn LevelSet, a: Point, b: Point, tol: f64) -> Vec<bool> {
    (0..=EDGE_SAMPLES + 1).map(|i| inside(phi.value(lerp(a, b, i as f64 / (EDGE_SAMPLES + 1) as f64)), tol)).collect()
}

fn edge_sign_changes(phi: &dyn LevelSet, a: Point, b: Point, tol: f64) -> usize {
    sample_signs(phi, a, b, tol).windows(2).filter(|w| w[0] != w[1]).count()
}

impl Subdivision<'_> {
    fn shape(&self, tri: &[Point; 3]) -> LeafShape {
        let changes: [usize; 3] = [0, 1, 2].map(|k| edge_sign_changes(self.phi, tri[k], tri[(k + 1) % 3], self.tol));
        if changes.iter().any(|&c| c > 1) {
            return LeafShape::Complex;
        }
        let s = tri.map(|p| inside(self.phi.value(p), self.tol));
        if s[0] == s[1] && s[1] == s[2] {
            let centroid = affine(tri, [1.0 / 3.0, 1.0 / 3.0]);
            if changes.iter().all(|&c| c == 0) && inside(self.phi.value(centroid), self.tol) == s[0] {
                return LeafShape::Uniform(s[0]);
            }
            return LeafShape::Complex;
        }
        let k = (0..3).find(|&k| s[k] != s[(k + 1) % 3] && s[k] != s[(k + 2) % 3]).unwrap();
        // Edge k -> k+1 is edge index k; k+2 -> k is edge index k+2.
        if changes[k] == 1 && changes[(k + 2) % 3] == 1 && changes[(k + 1) % 3] == 0 {
            LeafShape::Single(k)
        } else {
            LeafShape::Complex
        }
    }

    fn refine(&self, tri: [Point; 3], level: usize, out: &mut CutRules) -> Result<(), QuadratureError> {
        match self.shape(&tri) {
            LeafShape::Uniform(true) => {
                push_affine(&mut out.volume, &tri, self.degree);
                Ok(())
            }
            LeafShape::Uniform(false) => Ok(()),
            LeafShape::Single(k) if level >= self.depth => self.emit_single(&tri, k, out),
            LeafShape::Complex if level >= self.depth + EXTRA_LEVELS => {
                let centroid = affine(&tri, [1.0 / 3.0, 1.0 / 3.0]);
                if inside(self.phi.value(centroid), self.tol) {
                    push_affine(&mut out.volume, &tri, self.degree);
                }
                Ok(())
            }
            _ => {
                let [a, b, c] = tri;
                let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
                for child in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [bc, ca, ab]] {
                    self.refine(child, level + 1, out)?;
                }
                Ok(())
            }
        }
    }

    fn root(&self, a: Point, b: Point) -> Result<Point, QuadratureError> {
        let f = |t: f64| self.phi.value(lerp(a, b, t));
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let lo_in = inside(f(lo), self.tol);
        if lo_in == inside(f(hi), self.tol) {
            return Err(QuadratureError::RootBracket(self.id));
        }
        let d = [b[0] - a[0], b[1] - a[1]];
        let mut t = 0.5;
        for _ in 0..200 {
            let ft = f(t);
            if ft == 0.0 {
                break;
            }
            if inside(ft, self.tol) == lo_in {
                lo = t;
            } else {
                hi = t;
            }
            if hi - lo < 1e-14 {
                t = 0.5 * (lo + hi);
                break;
            }
            let g = self.phi.gradient(lerp(a, b, t));
            let df = g[0] * d[0] + g[1] * d[1];
            let step = if df != 0.0 { ft / df } else { f64::NAN };
            let newton = t - step;
            if newton >= lo && newton <= hi {
                t = newton;
                if step.abs() < 1e-15 {
                    break;
                }
            } else {
                t = 0.5 * (lo + hi);
            }
        }
        Ok(lerp(a, b, t))
    }

    fn project(&self, mut p: Point) -> Point {
        for _ in 0..20 {
            let v = self.phi.value(p);
            let g = self.phi.gradient(p);
            let g2 = g[0] * g[0] + g[1] * g[1];
            if g2 == 0.0 {
                break;
            }
            p = [p[0] - v * g[0] / g2, p[1] - v * g[1] / g2];
            if v.abs() < 1e-15 {
                break;
            }
        }
        p
    }

    fn emit_single(&self, tri: &[Point; 3], k: usize, out: &mut CutRules) -> Result<(), QuadratureError> {
        let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
        let r1 = self.root(a, b)?;
        let r2 = self.root(a, c)?;
        let chord = mid(r1, r2);
        let mut m = self.project(chord);
        if !m[0].is_finite() || dist(m, chord) > dist(r1, r2) {
            m = chord;
        }
        if inside(self.phi.value(a), self.tol) {
            push_curved(&mut out.volume, [a, r1, r2], [mid(a, r1), m, mid(r2, a)], self.degree);
        } else {
            push_affine(&mut out.volume, &[r1, b, c], self.degree);
            push_curved(&mut out.volume, [r1, c, r2], [mid(r1, c), mid(c, r2), m], self.degree);
        }
        self.push_arc(r1, m, r2, out);
        Ok(())
    }

    fn push_arc(&self, r1: Point, m: Point, r2: Point, out: &mut CutRules) {
        let rule = line_rule(self.degree + 2);
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let t = p[0];
            let (l0, l1, l2) = ((1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0));
            let (d0, d1, d2) = (4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0);
            let x = [l0 * r1[0] + l1 * m[0] + l2 * r2[0], l0 * r1[1] + l1 * m[1] + l2 * r2[1]];
            let dx = [d0 * r1[0] + d1 * m[0] + d2 * r2[0], d0 * r1[1] + d1 * m[1] + d2 * r2[1]];
            let speed = dx[0].hypot(dx[1]);
            let x = self.project(x);
            let g = self.phi.gradient(x);
            let gn = g[0].hypot(g[1]);
            let n = if gn > 0.0 { [g[0] / gn, g[1] / gn] } else { [0.0, 0.0] };
            out.surface.push_surface(x, w * speed, n);
        }
    }
}

/// Pushes the rule of a triangle with quadratic sides: vertices `v`, and edge
/// points `e = [on v0-v1, on v1-v2, on v2-v0]`.
fn push_curved(rule: &mut QuadratureRule, v: [Point; 3], e: [Point; 3], degree: usize) {
    let r = triangle_rule(degree + 2);
    for (&q, &w) in r.points.iter().zip(&r.weights) {
        let (x, y) = (q[0], q[1]);
        let l = [1.0 - x - y, x, y];
        let n = [
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[0] * l[1],
            4.0 * l[1] * l[2],
            4.0 * l[2] * l[0],
        ];
        // Derivatives with respect to (x, y); dl0 = (-1,-1), dl1 = (1,0), dl2 = (0,1).
        let dn = [
            [1.0 - 4.0 * l[0], 1.0 - 4.0 * l[0]],
            [4.0 * l[1] - 1.0, 0.0],
            [0.0, 4.0 * l[2] - 1.0],
            [4.0 * (l[0] - l[1]), -4.0 * l[1]],
            [4.0 * l[2], 4.0 * l[1]],
            [-4.0 * l[2], 4.0 * (l[0] - l[2])],
        ];
        let nodes = [v[0], v[1], v[2], e[0], e[1], e[2]];
        let mut p = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for i in 0..6 {
            for d in 0..2 {
                p[d] += n[i] * nodes[i][d];
                jac[d][0] += dn[i][0] * nodes[i][d];
                jac[d][1] += dn[i][1] * nodes[i][d];
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        rule.push(p, w * det.abs());
    }
}
