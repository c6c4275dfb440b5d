//! Implicit boundaries and element/face classification against them.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mesh::{Mesh, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("triangle {0} is below the geometric tolerance; refine the mesh or rescale the geometry")]
    TriangleBelowTolerance(usize),
    #[error("cut triangle {0} has no interior triangle within two vertex layers (mesh too coarse)")]
    EmptyInteriorNeighbourhood(usize),
    #[error("cut triangle {0} cannot reach an interior triangle of its neighbourhood through cut triangles")]
    UnreachableInterior(usize),
    #[error("unknown geometry descriptor `{0}` (expected `circle cx cy r` or `ellipse cx cy a b`)")]
    BadDescriptor(String),
}

/// Signed implicit description of `Gamma`: negative inside the domain.
pub trait LevelSet: Send + Sync + fmt::Debug {
    fn value(&self, p: Point) -> f64;
    fn gradient(&self, p: Point) -> Point;
    /// Exact circle data, if this level set describes a disk.
    fn as_circle(&self) -> Option<Circle> {
        None
    }
}

/// Disk boundary; `phi(x) = |x - c| - r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }
}

impl LevelSet for Circle {
    fn value(&self, p: Point) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius
    }

    fn gradient(&self, p: Point) -> Point {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let r = d[0].hypot(d[1]);
        if r == 0.0 {
            [0.0, 0.0]
        } else {
            [d[0] / r, d[1] / r]
        }
    }

    fn as_circle(&self) -> Option<Circle> {
        Some(*self)
    }
}

/// Axis-aligned ellipse; `phi(x) = ((x-cx)/a)^2 + ((y-cy)/b)^2 - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ellipse {
    pub center: Point,
    pub semi_axes: [f64; 2],
}

impl LevelSet for Ellipse {
    fn value(&self, p: Point) -> f64 {
        let x = (p[0] - self.center[0]) / self.semi_axes[0];
        let y = (p[1] - self.center[1]) / self.semi_axes[1];
        x * x + y * y - 1.0
    }

    fn gradient(&self, p: Point) -> Point {
        let [a, b] = self.semi_axes;
        [2.0 * (p[0] - self.center[0]) / (a * a), 2.0 * (p[1] - self.center[1]) / (b * b)]
    }
}

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(Point) -> Point + Send + Sync>;

/// A level set given by closures. Without an explicit gradient, central
/// differences with step `1e-7` are used.
#[derive(Clone)]
pub struct FnLevelSet {
    value: ScalarFn,
    gradient: Option<GradFn>,
}

impl FnLevelSet {
    pub fn new(value: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), gradient: None }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(Point) -> Point + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }
}

impl fmt::Debug for FnLevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnLevelSet").finish_non_exhaustive()
    }
}

impl LevelSet for FnLevelSet {
    fn value(&self, p: Point) -> f64 {
        (self.value)(p)
    }

    fn gradient(&self, p: Point) -> Point {
        if let Some(g) = &self.gradient {
            return g(p);
        }
        let h = 1e-7;
        let f = &self.value;
        [
            (f([p[0] + h, p[1]]) - f([p[0] - h, p[1]])) / (2.0 * h),
            (f([p[0], p[1] + h]) - f([p[0], p[1] - h])) / (2.0 * h),
        ]
    }
}

/// Parses `circle cx cy r` or `ellipse cx cy a b`.
pub fn parse_descriptor(desc: &str) -> Result<Arc<dyn LevelSet>, GeometryError> {
    let bad = || GeometryError::BadDescriptor(desc.to_string());
    let words: Vec<&str> = desc.split_whitespace().collect();
    let nums: Vec<f64> = words
        .iter()
        .skip(1)
        .map(|w| w.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match (words.first().copied(), nums.as_slice()) {
        (Some("circle"), &[cx, cy, r]) if r > 0.0 => Ok(Arc::new(Circle::new([cx, cy], r))),
        (Some("ellipse"), &[cx, cy, a, b]) if a > 0.0 && b > 0.0 => {
            Ok(Arc::new(Ellipse { center: [cx, cy], semi_axes: [a, b] }))
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElementTag {
    Interior,
    Cut,
    Exterior,
}

/// The interior triangle `K_T` assigned to a triangle, with the face path used to reach it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KtAssignment {
    pub target: usize,
    /// Triangles `T = K_1, ..., K_M = K_T`.
    pub path: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CutClassification {
    pub tags: Vec<ElementTag>,
    /// Sorted index sets.
    pub interior: Vec<usize>,
    pub cut: Vec<usize>,
    pub active: Vec<usize>,
    /// Cut triangles plus interior triangles touching them.
    pub extended_cut: Vec<usize>,
    /// Interior faces of the interior triangles.
    pub interior_faces: Vec<usize>,
    /// Faces of cut triangles that are not on the boundary of the active domain.
    pub ghost_faces: Vec<usize>,
    /// Interior faces of the active triangles.
    pub active_faces: Vec<usize>,
    /// Per-triangle `K_T`; empty until [`CutClassification::assign_kt`] succeeds.
    pub kt: Vec<Option<KtAssignment>>,
}

impl CutClassification {
    pub fn tag(&self, t: usize) -> ElementTag {
        self.tags[t]
    }

    pub fn is_interior(&self, t: usize) -> bool {
        self.tags[t] == ElementTag::Interior
    }

    pub fn is_cut(&self, t: usize) -> bool {
        self.tags[t] == ElementTag::Cut
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.tags[t] != ElementTag::Exterior
    }

    /// `W(T) = interior ∩ omega(omega(T))`.
    pub fn interior_neighbourhood(&self, mesh: &Mesh, t: usize) -> BTreeSet<usize> {
        let first = mesh.vertex_patch(&BTreeSet::from([t])).members;
        let second = mesh.vertex_patch(&first).members;
        second.into_iter().filter(|&s| self.is_interior(s)).collect()
    }

    /// Connected components of the interior region, where two interior triangles
    /// are connected when they share an edge. Returns a component id per triangle
    /// (`usize::MAX` for non-interior triangles) and the component count.
    pub fn interior_components(&self, mesh: &Mesh) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; mesh.num_triangles()];
        let mut count = 0;
        for &seed in &self.interior {
            if comp[seed] != usize::MAX {
                continue;
            }
            let mut queue = VecDeque::from([seed]);
            comp[seed] = count;
            while let Some(t) = queue.pop_front() {
                for nb in mesh.edge_neighbors(t) {
                    if self.is_interior(nb) && comp[nb] == usize::MAX {
                        comp[nb] = count;
                        queue.push_back(nb);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Assigns `K_T` to every active triangle: interior triangles map to
    /// themselves; a cut triangle maps to the interior triangle of `W(T)` with
    /// the shortest path through cut triangles, ties going to the lowest index.
    pub fn assign_kt(&mut self, mesh: &Mesh) -> Result<(), GeometryError> {
        let mut kt = vec![None; mesh.num_triangles()];
        for &t in &self.interior {
            kt[t] = Some(KtAssignment { target: t, path: vec![t] });
        }
        let found: Vec<(usize, KtAssignment)> = self
            .cut
            .par_iter()
            .map(|&t| self.find_kt(mesh, t).map(|a| (t, a)))
            .collect::<Result<_, _>>()?;
        for (t, a) in found {
            kt[t] = Some(a);
        }
        self.kt = kt;
        Ok(())
    }

    fn find_kt(&self, mesh: &Mesh, t: usize) -> Result<KtAssignment, GeometryError> {
        let w = self.interior_neighbourhood(mesh, t);
        if w.is_empty() {
            return Err(GeometryError::EmptyInteriorNeighbourhood(t));
        }
        let mut parent: HashMap<usize, usize> = HashMap::new();
        let mut visited: BTreeSet<usize> = BTreeSet::from([t]);
        let mut layer = vec![t];
        while !layer.is_empty() {
            let mut next = Vec::new();
            for &s in &layer {
                for nb in mesh.edge_neighbors(s) {
                    if visited.contains(&nb) {
                        continue;
                    }
                    if self.is_cut(nb) || w.contains(&nb) {
                        visited.insert(nb);
                        parent.insert(nb, s);
                        next.push(nb);
                    }
                }
            }
            if let Some(&target) = next.iter().filter(|s| w.contains(s)).min() {
                let mut path = vec![target];
                let mut cur = target;
                while let Some(&p) = parent.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Ok(KtAssignment { target, path });
            }
            // Only cut triangles are expanded further.
            layer = next.into_iter().filter(|&s| self.is_cut(s)).collect();
        }
        Err(GeometryError::UnreachableInterior(t))
    }
}

fn snapped_inside(phi: f64, tol: f64) -> bool {
    phi < -tol
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    (a[0] + s * d[0] - p[0]).hypot(a[1] + s * d[1] - p[1])
}

fn point_in_triangle(p: Point, [a, b, c]: [Point; 3]) -> bool {
    let cross = |u: Point, v: Point, w: Point| (v[0] - u[0]) * (w[1] - u[1]) - (w[0] - u[0]) * (v[1] - u[1]);
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

/// Number of interior sample points per edge used to detect grazing roots.
const EDGE_SAMPLES: usize = 8;

fn classify_triangle(mesh: &Mesh, phi: &dyn LevelSet, t: usize) -> ElementTag {
    let pts = mesh.triangle_points(t);
    let tol = 1e-12 * mesh.diameters[t];
    let inside = pts.map(|p| snapped_inside(phi.value(p), tol));
    let n_in = inside.iter().filter(|&&b| b).count();
    if n_in != 0 && n_in != 3 {
        return ElementTag::Cut;
    }
    let all_inside = n_in == 3;
    if let Some(circle) = phi.as_circle() {
        if all_inside {
            // The disk is convex.
            return ElementTag::Interior;
        }
        let c = circle.center;
        let min_dist = if point_in_triangle(c, pts) {
            0.0
        } else {
            (0..3).map(|k| segment_distance(c, pts[k], pts[(k + 1) % 3])).fold(f64::INFINITY, f64::min)
        };
        return if min_dist - circle.radius < -tol { ElementTag::Cut } else { ElementTag::Exterior };
    }
    // Generic level set: sample edges and a few interior points.
    let mut samples = Vec::with_capacity(3 * EDGE_SAMPLES + 4);
    for k in 0..3 {
        let (a, b) = (pts[k], pts[(k + 1) % 3]);
        for i in 1..=EDGE_SAMPLES {
            let s = i as f64 / (EDGE_SAMPLES + 1) as f64;
            samples.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    for bary in [[1.0 / 3.0; 3], [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]] {
        samples.push([
            bary[0] * pts[0][0] + bary[1] * pts[1][0] + bary[2] * pts[2][0],
            bary[0] * pts[0][1] + bary[1] * pts[1][1] + bary[2] * pts[2][1],
        ]);
    }
    let sign_change = samples.iter().any(|&p| snapped_inside(phi.value(p), tol) != all_inside);
    match (sign_change, all_inside) {
        (true, _) => ElementTag::Cut,
        (false, true) => ElementTag::Interior,
        (false, false) => ElementTag::Exterior,
    }
}

/// Tags every triangle and derives the face sets. `K_T` is not assigned here.
pub fn classify(mesh: &Mesh, phi: &dyn LevelSet) -> Result<CutClassification, GeometryError> {
    let scale = mesh.h.max(1.0);
    if let Some(t) = (0..mesh.num_triangles()).find(|&t| mesh.diameters[t] < 1e-12 * scale) {
        return Err(GeometryError::TriangleBelowTolerance(t));
    }
    let tags: Vec<ElementTag> =
        (0..mesh.num_triangles()).into_par_iter().map(|t| classify_triangle(mesh, phi, t)).collect();
    Ok(CutClassification::from_tags(mesh, tags))
}

impl CutClassification {
    /// Derives all index and face sets from per-triangle tags.
    pub fn from_tags(mesh: &Mesh, tags: Vec<ElementTag>) -> Self {
        let select = |tag: ElementTag| -> Vec<usize> { (0..tags.len()).filter(|&t| tags[t] == tag).collect() };
        let interior = select(ElementTag::Interior);
        let cut = select(ElementTag::Cut);
        let active: Vec<usize> = (0..tags.len()).filter(|&t| tags[t] != ElementTag::Exterior).collect();

        let mut cut_vertex = vec![false; mesh.num_vertices()];
        for &t in &cut {
            for &v in &mesh.triangles[t] {
                cut_vertex[v] = true;
            }
        }
        let extended_cut: Vec<usize> = (0..tags.len())
            .filter(|&t| {
                tags[t] == ElementTag::Cut
                    || (tags[t] == ElementTag::Interior && mesh.triangles[t].iter().any(|&v| cut_vertex[v]))
            })
            .collect();

        let mut interior_faces = Vec::new();
        let mut ghost_faces = Vec::new();
        let mut active_faces = Vec::new();
        for (e, edge) in mesh.edges.iter().enumerate() {
            let [Some(a), Some(b)] = edge.triangles else { continue };
            let (ta, tb) = (tags[a], tags[b]);
            if ta == ElementTag::Exterior || tb == ElementTag::Exterior {
                continue;
            }
            active_faces.push(e);
            if ta == ElementTag::Interior && tb == ElementTag::Interior {
                interior_faces.push(e);
            } else {
                ghost_faces.push(e);
            }
        }
        Self { tags, interior, cut, active, extended_cut, interior_faces, ghost_faces, active_faces, kt: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FaceViolation {
    pub face: usize,
    pub triangles: [usize; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// Cut triangles with no reachable interior triangle in `W(T)`.
    pub unreachable_cut: Vec<usize>,
    /// Ghost faces whose `K_T` targets are not connected through at most
    /// `max_path` interior triangles.
    pub disconnected_faces: Vec<FaceViolation>,
    pub max_path: usize,
    /// Longest `K_T` path (in triangles) over all cut triangles.
    pub max_kt_path: usize,
    /// Longest interior connecting path (in triangles) over all ghost faces.
    pub max_interior_path: usize,
    /// Largest `max(h_T / h_{K_T}, h_{K_T} / h_T)`.
    pub kt_size_ratio: f64,
    pub n_interior: usize,
    pub n_cut: usize,
    pub n_exterior: usize,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.unreachable_cut.is_empty() && self.disconnected_faces.is_empty()
    }
}

/// Face-path bound used when none is configured.
pub const DEFAULT_MAX_PATH: usize = 12;

/// Checks the mesh-resolution assumptions. Violations are collected, never raised.
pub fn check_assumptions(mesh: &Mesh, cls: &CutClassification, max_path: usize) -> AssumptionReport {
    let mut a1 = Vec::new();
    let mut kt: HashMap<usize, KtAssignment> = HashMap::new();
    for &t in &cls.interior {
        kt.insert(t, KtAssignment { target: t, path: vec![t] });
    }
    for &t in &cls.cut {
        let assigned = cls.kt.get(t).cloned().flatten().map(Ok).unwrap_or_else(|| cls.find_kt(mesh, t));
        match assigned {
            Ok(a) => {
                kt.insert(t, a);
            }
            Err(_) => a1.push(t),
        }
    }
    let max_kt_path = cls.cut.iter().filter_map(|t| kt.get(t)).map(|a| a.path.len()).max().unwrap_or(0);
    let kt_size_ratio = kt
        .iter()
        .map(|(&t, a)| {
            let r = mesh.diameters[t] / mesh.diameters[a.target];
            r.max(1.0 / r)
        })
        .fold(1.0, f64::max);

    let mut a1b = Vec::new();
    let mut max_interior_path = 0;
    for &e in &cls.ghost_faces {
        let [Some(t1), Some(t2)] = mesh.edges[e].triangles else { continue };
        let (Some(k1), Some(k2)) = (kt.get(&t1), kt.get(&t2)) else { continue };
        match mesh.face_path(k1.target, k2.target, |s| cls.is_interior(s), max_path) {
            Some(p) => max_interior_path = max_interior_path.max(p.len()),
            None => a1b.push(FaceViolation { face: e, triangles: [t1, t2] }),
        }
    }
    AssumptionReport {
        unreachable_cut: a1,
        disconnected_faces: a1b,
        max_path,
        max_kt_path,
        max_interior_path,
        kt_size_ratio,
        n_interior: cls.interior.len(),
        n_cut: cls.cut.len(),
        n_exterior: mesh.num_triangles() - cls.active.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundingBox, UniformMeshParams};

    fn disk_mesh(n: usize) -> Mesh {
        UniformMeshParams::new(BoundingBox::centered_square(1.5), n).build().unwrap()
    }

    #[test]
    fn coarse_counts_partition() {
        let mesh = disk_mesh(3);
        let phi = Circle::new([0.0, 0.0], 1.0);
        let cls = classify(&mesh, &phi).unwrap();
        let ext = cls.tags.iter().filter(|&&t| t == ElementTag::Exterior).count();
        assert_eq!(cls.interior.len() + cls.cut.len() + ext, 18);
        for &t in &cls.interior {
            let pts = mesh.triangle_points(t);
            assert!(pts.iter().all(|&p| phi.value(p) < -0.1) || pts.iter().all(|&p| phi.value(p) < 0.0));
        }
    }

    #[test]
    fn deep_vertex_triangle_is_interior() {
        let mesh = disk_mesh(12);
        let phi = Circle::new([0.0, 0.0], 1.0);
        let cls = classify(&mesh, &phi).unwrap();
        for t in 0..mesh.num_triangles() {
            if mesh.triangle_points(t).iter().all(|&p| phi.value(p) < -0.1) {
                assert_eq!(cls.tag(t), ElementTag::Interior);
            }
        }
    }

    #[test]
    fn grazing_edge_is_cut() {
        // A single triangle with all vertices outside a disk that crosses one edge.
        let mesh = Mesh::from_raw(vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]], vec![[0, 1, 2]]).unwrap();
        let phi = Circle::new([0.5, -0.1], 0.2);
        let cls = classify(&mesh, &phi).unwrap();
        assert_eq!(cls.tag(0), ElementTag::Cut);
        // Same configuration through the generic sampled path.
        let c = phi;
        let generic = FnLevelSet::new(move |p| c.value(p));
        assert_eq!(classify(&mesh, &generic).unwrap().tag(0), ElementTag::Cut);
    }

    #[test]
    fn vertex_on_circle_snaps_outward() {
        // Vertex (1, 0) lies exactly on the unit circle.
        let mesh = UniformMeshParams::new(BoundingBox::centered_square(1.0), 2).build().unwrap();
        let phi = Circle::new([0.0, 0.0], 1.0);
        let cls = classify(&mesh, &phi).unwrap();
        for &t in &cls.interior {
            assert!(mesh.triangle_points(t).iter().all(|&p| phi.value(p) < 0.0));
        }
    }

    #[test]
    fn kt_for_interior_and_neighbours() {
        let mesh = disk_mesh(12);
        let mut cls = classify(&mesh, &Circle::new([0.0, 0.0], 1.0)).unwrap();
        cls.assign_kt(&mesh).unwrap();
        for &t in &cls.interior {
            assert_eq!(cls.kt[t].as_ref().unwrap().path, vec![t]);
        }
        for &t in &cls.cut {
            let a = cls.kt[t].as_ref().unwrap();
            assert!(cls.is_interior(a.target));
            assert!(cls.interior_neighbourhood(&mesh, t).contains(&a.target));
            let nbs: Vec<usize> = mesh.edge_neighbors(t).into_iter().filter(|&s| cls.is_interior(s)).collect();
            if let Some(&lowest) = nbs.iter().min() {
                assert_eq!(a.path.len(), 2);
                assert_eq!(a.target, lowest);
            }
            for &s in &a.path[..a.path.len() - 1] {
                assert!(cls.is_cut(s));
            }
        }
    }

    #[test]
    fn empty_neighbourhood_is_reported() {
        let mesh = disk_mesh(2);
        let mut cls = classify(&mesh, &Circle::new([0.0, 0.0], 1.0)).unwrap();
        assert!(cls.interior.is_empty());
        assert!(matches!(cls.assign_kt(&mesh), Err(GeometryError::EmptyInteriorNeighbourhood(_))));
        let report = check_assumptions(&mesh, &cls, 8);
        assert!(!report.passed());
    }

    #[test]
    fn domain_missing_the_cut_region() {
        // Gamma lies outside the meshed box entirely: every triangle is interior.
        let mesh = disk_mesh(4);
        let cls = classify(&mesh, &Circle::new([0.0, 0.0], 10.0)).unwrap();
        assert_eq!(cls.interior.len(), mesh.num_triangles());
        let report = check_assumptions(&mesh, &cls, 4);
        assert!(report.passed());
        assert!(cls.ghost_faces.is_empty());
    }

    #[test]
    fn descriptors() {
        let c = parse_descriptor("circle 0 0.5 1").unwrap();
        assert_eq!(c.as_circle().unwrap().center, [0.0, 0.5]);
        let e = parse_descriptor("ellipse 0 0 2 1").unwrap();
        assert!((e.value([2.0, 0.0])).abs() < 1e-15);
        assert!(parse_descriptor("square 0 0 1").is_err());
        assert!(parse_descriptor("circle 0 0").is_err());
        assert!(parse_descriptor("circle 0 0 -1").is_err());
    }

    #[test]
    fn face_sets_are_consistent() {
        let mesh = disk_mesh(10);
        let cls = classify(&mesh, &Circle::new([0.1, 0.0], 1.0)).unwrap();
        for &e in &cls.ghost_faces {
            let [Some(a), Some(b)] = mesh.edges[e].triangles else { panic!() };
            assert!(cls.is_cut(a) || cls.is_cut(b));
            assert!(cls.is_active(a) && cls.is_active(b));
        }
        assert_eq!(cls.active_faces.len(), cls.interior_faces.len() + cls.ghost_faces.len());
    }
}
