//! Manufactured solutions, error norms over the physical domain, and
//! convergence-order studies.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::forms::{Discretization, FormError, FormParams, QuadratureSet};
use crate::geometry::{check_assumptions, AssumptionReport, Circle, LevelSet, DEFAULT_MAX_PATH};
use crate::mesh::{BoundingBox, MeshError, Point, UniformMeshParams};
use crate::quadrature::{CutMethod, MAX_DEGREE};
use crate::solver::{solve, Solution, SolverError};
use crate::spaces::ElementPair;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("mesh assumptions fail at level n = {n}: {violations} violations")]
    Assumptions { n: usize, violations: usize, report: Box<AssumptionReport> },
}

/// An exact Stokes solution with its closed-form load `f = -Lap u + grad p`.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub velocity: fn(Point) -> [f64; 2],
    /// Rows are components.
    pub velocity_gradient: fn(Point) -> [[f64; 2]; 2],
    pub velocity_laplacian: fn(Point) -> [f64; 2],
    pub pressure: fn(Point) -> f64,
    pub pressure_gradient: fn(Point) -> [f64; 2],
    pub load: fn(Point) -> [f64; 2],
    pub domain: Arc<dyn LevelSet>,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase").field("name", &self.name).field("domain", &self.domain).finish()
    }
}

/// Unit disk with stream function `(1 - r^2)^2` and pressure `x^3`.
pub fn builtin_case_disk() -> ManufacturedCase {
    ManufacturedCase {
        name: "disk",
        velocity: |[x, y]| {
            let s = 1.0 - x * x - y * y;
            [-4.0 * y * s, 4.0 * x * s]
        },
        velocity_gradient: |[x, y]| {
            let s = 1.0 - x * x - y * y;
            [[8.0 * x * y, -4.0 * s + 8.0 * y * y], [4.0 * s - 8.0 * x * x, -8.0 * x * y]]
        },
        velocity_laplacian: |[x, y]| [32.0 * y, -32.0 * x],
        pressure: |[x, _]| x * x * x,
        pressure_gradient: |[x, _]| [3.0 * x * x, 0.0],
        load: |[x, y]| [-32.0 * y + 3.0 * x * x, 32.0 * x],
        domain: Arc::new(Circle::new([0.0, 0.0], 1.0)),
    }
}

/// The homogeneous problem on the unit disk.
pub fn builtin_case_zero() -> ManufacturedCase {
    ManufacturedCase {
        name: "zero",
        velocity: |_| [0.0; 2],
        velocity_gradient: |_| [[0.0; 2]; 2],
        velocity_laplacian: |_| [0.0; 2],
        pressure: |_| 0.0,
        pressure_gradient: |_| [0.0; 2],
        load: |_| [0.0; 2],
        domain: Arc::new(Circle::new([0.0, 0.0], 1.0)),
    }
}

pub fn builtin_case(name: &str) -> Option<ManufacturedCase> {
    match name {
        "disk" => Some(builtin_case_disk()),
        "zero" => Some(builtin_case_zero()),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub h1_u: f64,
    pub l2_u: f64,
    /// After aligning the means over `Omega`.
    pub l2_p: f64,
    /// `(|e_u|^2_V + |e_p|^2_{L2} + J(e_p, e_p))^{1/2}`.
    pub product: f64,
}

/// Rules of degree `2s + 4` (capped) for error integrals.
pub fn error_rules(disc: &Discretization) -> Result<QuadratureSet, FormError> {
    let s = disc.pair().superspace_degree();
    let deg = (2 * s + 4).min(MAX_DEGREE);
    QuadratureSet::build(&disc.mesh, &disc.cls, disc.phi.as_ref(), disc.method, deg, deg, deg)
}

pub fn compute_errors(
    disc: &Discretization,
    rules: &QuadratureSet,
    params: &FormParams,
    case: &ManufacturedCase,
    velocity: &[f64],
    pressure: &[f64],
) -> ErrorNorms {
    let mesh = &disc.mesh;
    let sys = &disc.sys;
    let (mut h1, mut l2, mut pdiff, mut pdiff2, mut area) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &t in &disc.cls.active {
        let r = &rules.volume[t];
        for (&p, &w) in r.points.iter().zip(&r.weights) {
            let (uh, guh) = sys.evaluate_velocity(mesh, velocity, t, p);
            let u = (case.velocity)(p);
            let gu = (case.velocity_gradient)(p);
            for c in 0..2 {
                l2 += w * (u[c] - uh[c]).powi(2);
                h1 += w * ((gu[c][0] - guh[c][0]).powi(2) + (gu[c][1] - guh[c][1]).powi(2));
            }
            let (ph, _) = sys.pressure.evaluate(mesh, pressure, t, p);
            let d = (case.pressure)(p) - ph;
            pdiff += w * d;
            pdiff2 += w * d * d;
            area += w;
        }
    }
    let l2p2 = (pdiff2 - pdiff * pdiff / area).max(0.0);
    let mut boundary = 0.0;
    for &t in &disc.cls.cut {
        let r = &rules.surface[t];
        for (&p, &w) in r.points.iter().zip(&r.weights) {
            let (uh, _) = sys.evaluate_velocity(mesh, velocity, t, p);
            let u = (case.velocity)(p);
            boundary += w * ((u[0] - uh[0]).powi(2) + (u[1] - uh[1]).powi(2)) / mesh.diameters[t];
        }
    }
    let n = sys.velocity.n_dofs;
    let ghost = disc.asm.velocity.ghost.quad_form(&velocity[..n], &velocity[..n])
        + disc.asm.velocity.ghost.quad_form(&velocity[n..], &velocity[n..]);
    let jp = params.gamma_p * disc.asm.pressure.jump.quad_form(pressure, pressure);
    ErrorNorms {
        h1_u: h1.sqrt(),
        l2_u: l2.sqrt(),
        l2_p: l2p2.sqrt(),
        product: (h1 + boundary + ghost + l2p2 + jp).sqrt(),
    }
}

/// Discretization, solution and errors of one manufactured solve.
#[derive(Debug, Clone)]
pub struct CaseSolve {
    pub disc: Discretization,
    pub solution: Solution,
    pub errors: ErrorNorms,
    pub assumptions: AssumptionReport,
    pub t_assemble_s: f64,
    pub t_solve_s: f64,
}

/// Mesh, element and quadrature settings of a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSettings {
    pub pair: ElementPair,
    pub bbox: BoundingBox,
    pub shift: Point,
    pub perturbation: f64,
    pub seed: u64,
    pub method: CutMethod,
    pub params: FormParams,
    pub max_path: usize,
}

impl RunSettings {
    pub fn new(pair: ElementPair) -> Self {
        Self {
            pair,
            bbox: BoundingBox::centered_square(1.5),
            shift: [0.0131, 0.0077],
            perturbation: 0.0,
            seed: 0,
            method: CutMethod::CircleExact,
            params: FormParams::default(),
            max_path: DEFAULT_MAX_PATH,
        }
    }

    pub fn mesh_params(&self, n: usize) -> UniformMeshParams {
        UniformMeshParams::new(self.bbox, n).with_shift(self.shift).with_perturbation(self.perturbation, self.seed)
    }
}

/// Builds, solves and measures one level. Assumption failures abort.
pub fn solve_case(case: &ManufacturedCase, settings: &RunSettings, n: usize) -> Result<CaseSolve, AnalysisError> {
    let start = Instant::now();
    let mesh = settings.mesh_params(n).build()?;
    let disc = Discretization::new(mesh, case.domain.clone(), settings.pair, settings.method)?;
    let assumptions = check_assumptions(&disc.mesh, &disc.cls, settings.max_path);
    if !assumptions.passed() {
        let violations = assumptions.unreachable_cut.len() + assumptions.disconnected_faces.len();
        return Err(AnalysisError::Assumptions { n, violations, report: Box::new(assumptions) });
    }
    let saddle = disc.saddle_system(settings.params, &case.load);
    let t_assemble_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let solution = solve(&saddle)?;
    let t_solve_s = start.elapsed().as_secs_f64();
    let rules = error_rules(&disc)?;
    let errors = compute_errors(&disc, &rules, &settings.params, case, &solution.velocity, &solution.pressure);
    Ok(CaseSolve { disc, solution, errors, assumptions, t_assemble_s, t_solve_s })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub n: usize,
    pub h: f64,
    pub ndof_u: usize,
    pub ndof_p: usize,
    pub err_h1_u: f64,
    pub err_l2_u: f64,
    pub err_l2_p: f64,
    pub err_product: f64,
    /// Orders against the previous level; `None` on the first level.
    pub eoc_h1_u: Option<f64>,
    pub eoc_l2_u: Option<f64>,
    pub eoc_l2_p: Option<f64>,
    pub eoc_product: Option<f64>,
    pub t_assemble_s: f64,
    pub t_solve_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub case: String,
    pub settings: RunSettings,
    pub levels: Vec<LevelRecord>,
    pub warnings: Vec<String>,
}

/// `log(e_l / e_{l+1}) / log(h_l / h_{l+1})`.
pub fn eoc(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln()
}

/// Runs the levels `ns` sequentially. With the subtriangulation backend the
/// depth grows by `depth_increment` per level.
pub fn run_convergence(
    case: &ManufacturedCase,
    settings: &RunSettings,
    ns: &[usize],
    depth_increment: usize,
) -> Result<ConvergenceRecord, AnalysisError> {
    let mut levels: Vec<LevelRecord> = Vec::new();
    for (level, &n) in ns.iter().enumerate() {
        let mut s = *settings;
        if let CutMethod::Subtriangulate { depth } = s.method {
            s.method = CutMethod::Subtriangulate { depth: depth + level * depth_increment };
        }
        let run = solve_case(case, &s, n)?;
        let h = run.disc.mesh.h;
        let e = run.errors;
        let prev = levels.last();
        let rate = |f: fn(&LevelRecord) -> f64, cur: f64| prev.map(|p| eoc(f(p), cur, p.h, h));
        levels.push(LevelRecord {
            level,
            n,
            h,
            ndof_u: run.disc.sys.n_velocity(),
            ndof_p: run.disc.sys.n_pressure(),
            err_h1_u: e.h1_u,
            err_l2_u: e.l2_u,
            err_l2_p: e.l2_p,
            err_product: e.product,
            eoc_h1_u: rate(|p| p.err_h1_u, e.h1_u),
            eoc_l2_u: rate(|p| p.err_l2_u, e.l2_u),
            eoc_l2_p: rate(|p| p.err_l2_p, e.l2_p),
            eoc_product: rate(|p| p.err_product, e.product),
            t_assemble_s: run.t_assemble_s,
            t_solve_s: run.t_solve_s,
        });
    }
    let warnings = stall_warnings(&levels);
    Ok(ConvergenceRecord { case: case.name.to_string(), settings: *settings, levels, warnings })
}

/// Flags an EOC that drops by more than 0.5 from one level pair to the next.
pub fn stall_warnings(levels: &[LevelRecord]) -> Vec<String> {
    let mut out = Vec::new();
    let series: [(&str, fn(&LevelRecord) -> Option<f64>); 3] =
        [("h1_u", |l| l.eoc_h1_u), ("l2_u", |l| l.eoc_l2_u), ("l2_p", |l| l.eoc_l2_p)];
    for w in levels.windows(2) {
        for (name, get) in series {
            if let (Some(a), Some(b)) = (get(&w[0]), get(&w[1])) {
                if a - b > 0.5 {
                    out.push(format!(
                        "EOC of {name} drops from {a:.3} to {b:.3} at n = {}; the quadrature depth may limit accuracy",
                        w[1].n
                    ));
                }
            }
        }
    }
    out
}

/// Fixed 17-significant-digit formatting used by every CSV writer.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl ConvergenceRecord {
    pub const CSV_HEADER: &'static str = "level,h,ndof_u,ndof_p,err_h1_u,err_l2_u,err_l2_p,err_product,eoc_h1_u,eoc_l2_u,eoc_l2_p,t_assemble_s,t_solve_s";

    /// Timings are wall-clock values; all other columns are deterministic.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for l in &self.levels {
            let row = [
                l.level.to_string(),
                fmt_float(l.h),
                l.ndof_u.to_string(),
                l.ndof_p.to_string(),
                fmt_float(l.err_h1_u),
                fmt_float(l.err_l2_u),
                fmt_float(l.err_l2_p),
                fmt_float(l.err_product),
                fmt_opt(l.eoc_h1_u),
                fmt_opt(l.eoc_l2_u),
                fmt_opt(l.eoc_l2_p),
                fmt_float(l.t_assemble_s),
                fmt_float(l.t_solve_s),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// EOCs of the finest level pair.
    pub fn finest(&self) -> Option<&LevelRecord> {
        self.levels.last().filter(|l| l.eoc_h1_u.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn disk_case_closed_forms() {
        let c = builtin_case_disk();
        let [dux, duy] = (c.velocity_gradient)([0.3, 0.4]);
        assert_abs_diff_eq!(dux[0] + duy[1], 0.0, epsilon = 1e-15);
        let u = (c.velocity)([0.6, 0.8]);
        assert!(u[0].abs() < 1e-15 && u[1].abs() < 1e-15);
        assert_eq!((c.load)([0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn eoc_of_exact_power_law() {
        assert_abs_diff_eq!(eoc(4.0, 1.0, 0.2, 0.1), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn interpolant_errors_are_positive_and_zero_case_vanishes() {
        let settings = RunSettings::new(ElementPair::TaylorHood);
        let run = solve_case(&builtin_case_zero(), &settings, 8).unwrap();
        assert_eq!(run.errors, ErrorNorms { h1_u: 0.0, l2_u: 0.0, l2_p: 0.0, product: 0.0 });
        let case = builtin_case_disk();
        let disc = &run.disc;
        let u = disc.sys.interpolate_velocity(&disc.mesh, case.velocity);
        let p = disc.sys.interpolate_pressure(&disc.mesh, case.pressure);
        let rules = error_rules(disc).unwrap();
        let e = compute_errors(disc, &rules, &settings.params, &case, &u, &p);
        assert!(e.h1_u > 0.0 && e.l2_u > 0.0 && e.l2_p > 0.0);
        assert!(e.product >= e.h1_u && e.product >= e.l2_p);
    }

    #[test]
    fn stall_is_flagged() {
        let mk = |n, a| LevelRecord {
            level: 0,
            n,
            h: 0.0,
            ndof_u: 0,
            ndof_p: 0,
            err_h1_u: 0.0,
            err_l2_u: 0.0,
            err_l2_p: 0.0,
            err_product: 0.0,
            eoc_h1_u: Some(a),
            eoc_l2_u: None,
            eoc_l2_p: None,
            eoc_product: None,
            t_assemble_s: 0.0,
            t_solve_s: 0.0,
        };
        assert_eq!(stall_warnings(&[mk(16, 2.0), mk(32, 1.9)]).len(), 0);
        assert_eq!(stall_warnings(&[mk(16, 2.0), mk(32, 1.2)]).len(), 1);
    }
}
