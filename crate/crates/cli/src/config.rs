//! Experiment configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cutstokes::analysis::{builtin_case, ManufacturedCase, RunSettings};
use cutstokes::forms::FormParams;
use cutstokes::geometry::{parse_descriptor, LevelSet, DEFAULT_MAX_PATH};
use cutstokes::mesh::{BoundingBox, UniformMeshParams};
use cutstokes::quadrature::CutMethod;
use cutstokes::spaces::ElementPair;
use cutstokes::stability::{InteriorNorm, Quantities, SweepConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_case")]
    pub case: String,
    pub output: Option<PathBuf>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub dump_vtk: bool,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub verdicts: Verdicts,
}

fn default_case() -> String {
    "disk".into()
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// `circle cx cy r` or `ellipse cx cy a b`.
    pub domain: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// `[xmin, ymin, xmax, ymax]`.
    pub bbox: [f64; 4],
    pub n: usize,
    pub levels: Vec<usize>,
    pub shift: [f64; 2],
    pub perturbation: f64,
    pub seed: u64,
    pub max_path: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            bbox: [-1.5, -1.5, 1.5, 1.5],
            n: 16,
            levels: vec![8, 16, 32, 64],
            shift: [0.0131, 0.0077],
            perturbation: 0.0,
            seed: 0,
            max_path: DEFAULT_MAX_PATH,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub pair: ElementPair,
    pub eta: f64,
    pub gamma_g: f64,
    pub gamma_p: f64,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        let p = FormParams::default();
        Self { pair: ElementPair::TaylorHood, eta: p.eta, gamma_g: p.gamma_g, gamma_p: p.gamma_p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    CircleExact,
    Subtriangulate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub method: MethodName,
    pub depth: usize,
    pub depth_increment: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { method: MethodName::CircleExact, depth: 4, depth_increment: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub pairs: Vec<ElementPair>,
    pub ns: Vec<usize>,
    pub shifts: Vec<[f64; 2]>,
    pub random_shifts: usize,
    pub seed: u64,
    pub sliver_offsets: Vec<f64>,
    pub etas: Vec<f64>,
    pub interior_norm: InteriorNorm,
    pub quantities: Quantities,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            pairs: ElementPair::ALL.to_vec(),
            ns: vec![8, 16, 32],
            shifts: vec![[0.0131, 0.0077]],
            random_shifts: 0,
            seed: 1,
            sliver_offsets: Vec::new(),
            etas: vec![20.0],
            interior_norm: InteriorNorm::Full,
            quantities: Quantities::all(),
        }
    }
}

/// Pass/fail thresholds. Absent keys are not checked.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Verdicts {
    pub min_eoc_h1_u: Option<f64>,
    pub min_eoc_l2_u: Option<f64>,
    pub min_eoc_l2_p: Option<f64>,
    pub min_eoc_product: Option<f64>,
    pub min_theta: Option<f64>,
    /// Lower bound on `min / max` of theta over each pair's rows.
    pub min_theta_spread: Option<f64>,
    /// Lower bound on the median at the finest level over the median at the coarsest.
    pub min_theta_trend: Option<f64>,
    pub min_beta: Option<f64>,
    pub min_beta_trend: Option<f64>,
    /// Checked on the rows with `eta = c0_eta` (default 20).
    pub min_c0: Option<f64>,
    pub c0_eta: Option<f64>,
    pub c0_monotone: bool,
    pub min_cb_lower: Option<f64>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

fn check(ok: bool, msg: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        let m = &self.mesh;
        check(m.bbox[0] < m.bbox[2] && m.bbox[1] < m.bbox[3], "mesh.bbox must satisfy xmin < xmax and ymin < ymax")?;
        check(m.bbox.iter().chain(&m.shift).all(|v| v.is_finite()), "mesh.bbox and mesh.shift must be finite")?;
        check((1..=1024).contains(&m.n), "mesh.n must lie in 1..=1024")?;
        check(m.levels.iter().all(|n| (1..=1024).contains(n)), "mesh.levels must lie in 1..=1024")?;
        check((0.0..0.25).contains(&m.perturbation), "mesh.perturbation must lie in [0, 0.25)")?;
        check(m.max_path >= 1, "mesh.max_path must be at least 1")?;
        let d = &self.discretization;
        check(d.eta > 0.0 && d.eta.is_finite(), "discretization.eta must be positive")?;
        check(d.gamma_g >= 0.0 && d.gamma_g.is_finite(), "discretization.gamma_g must be nonnegative")?;
        check(d.gamma_p >= 0.0 && d.gamma_p.is_finite(), "discretization.gamma_p must be nonnegative")?;
        check(self.quadrature.depth <= 10, "quadrature.depth must lie in 0..=10")?;
        check((1..=256).contains(&self.jobs), "jobs must lie in 1..=256")?;
        let s = &self.sweep;
        check(s.ns.iter().all(|n| (1..=1024).contains(n)), "sweep.ns must lie in 1..=1024")?;
        check(s.etas.iter().all(|e| *e > 0.0 && e.is_finite()), "sweep.etas must be positive")?;
        check(!s.pairs.is_empty(), "sweep.pairs must not be empty")?;
        check(s.sliver_offsets.iter().all(|o| o.abs() < 0.1), "sweep.sliver_offsets must be smaller than 0.1 in magnitude")?;
        let domain = self.domain()?;
        if self.quadrature.method == MethodName::CircleExact {
            check(domain.as_circle().is_some(), "quadrature.method = \"circle-exact\" needs a circle domain")?;
        }
        self.case()?;
        Ok(())
    }

    pub fn domain(&self) -> Result<Arc<dyn LevelSet>, String> {
        parse_descriptor(&self.geometry.domain).map_err(|e| e.to_string())
    }

    /// The built-in case with its domain replaced by the configured geometry.
    pub fn case(&self) -> Result<ManufacturedCase, String> {
        let case = builtin_case(&self.case).ok_or_else(|| format!("unknown case `{}` (expected disk or zero)", self.case))?;
        Ok(ManufacturedCase { domain: self.domain()?, ..case })
    }

    pub fn bbox(&self) -> BoundingBox {
        let b = self.mesh.bbox;
        BoundingBox::new([b[0], b[1]], [b[2], b[3]])
    }

    pub fn method(&self) -> CutMethod {
        match self.quadrature.method {
            MethodName::CircleExact => CutMethod::CircleExact,
            MethodName::Subtriangulate => CutMethod::Subtriangulate { depth: self.quadrature.depth },
        }
    }

    pub fn params(&self) -> FormParams {
        let d = &self.discretization;
        FormParams { eta: d.eta, gamma_g: d.gamma_g, gamma_p: d.gamma_p }
    }

    pub fn mesh_params(&self, n: usize) -> UniformMeshParams {
        UniformMeshParams::new(self.bbox(), n)
            .with_shift(self.mesh.shift)
            .with_perturbation(self.mesh.perturbation, self.mesh.seed)
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            pair: self.discretization.pair,
            bbox: self.bbox(),
            shift: self.mesh.shift,
            perturbation: self.mesh.perturbation,
            seed: self.mesh.seed,
            method: self.method(),
            params: self.params(),
            max_path: self.mesh.max_path,
        }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, String> {
        let s = &self.sweep;
        let d = &self.discretization;
        Ok(SweepConfig {
            domain: self.domain()?,
            bbox: self.bbox(),
            pairs: s.pairs.clone(),
            ns: s.ns.clone(),
            shifts: s.shifts.clone(),
            random_shifts: s.random_shifts,
            seed: s.seed,
            sliver_offsets: s.sliver_offsets.clone(),
            etas: s.etas.clone(),
            gamma_g: d.gamma_g,
            gamma_p: d.gamma_p,
            method: self.method(),
            max_path: self.mesh.max_path,
            quantities: s.quantities,
            interior_norm: s.interior_norm,
        })
    }
}
