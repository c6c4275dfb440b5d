use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cutstokes::analysis::fmt_float;
use cutstokes::forms::Discretization;

pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    /// `--out` wins over `CUTSTOKES_OUT`, which wins over the config value.
    pub fn resolve(flag: Option<PathBuf>, config: Option<PathBuf>) -> Self {
        let env = std::env::var_os("CUTSTOKES_OUT").filter(|v| !v.is_empty()).map(PathBuf::from);
        Self { root: flag.or(env).or(config).unwrap_or_else(|| PathBuf::from("out")) }
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, String> {
        std::fs::create_dir_all(&self.root).map_err(|e| format!("cannot create {}: {e}", self.root.display()))?;
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(path)
    }
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Legacy ASCII VTK unstructured grid of the active triangles with the
/// discrete velocity and pressure at the vertices.
pub fn vtk(disc: &Discretization, velocity: &[f64], pressure: &[f64]) -> String {
    let mesh = &disc.mesh;
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in &disc.cls.active {
        for v in mesh.triangles[t] {
            owner.entry(v).or_insert(t);
        }
    }
    let index: BTreeMap<usize, usize> = owner.keys().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut out = String::from("# vtk DataFile Version 3.0\ncutstokes solution\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", owner.len());
    for &v in owner.keys() {
        let p = mesh.vertices[v];
        let _ = writeln!(out, "{} {} 0", fmt_float(p[0]), fmt_float(p[1]));
    }
    let nt = disc.cls.active.len();
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for &t in &disc.cls.active {
        let [a, b, c] = mesh.triangles[t].map(|v| index[&v]);
        let _ = writeln!(out, "3 {a} {b} {c}");
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "POINT_DATA {}\nVECTORS velocity double", owner.len());
    for (&v, &t) in &owner {
        let (u, _) = disc.sys.evaluate_velocity(mesh, velocity, t, mesh.vertices[v]);
        let _ = writeln!(out, "{} {} 0", fmt_float(u[0]), fmt_float(u[1]));
    }
    out.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for (&v, &t) in &owner {
        let (p, _) = disc.sys.pressure.evaluate(mesh, pressure, t, mesh.vertices[v]);
        let _ = writeln!(out, "{}", fmt_float(p));
    }
    out.push_str("CELL_DATA ");
    let _ = writeln!(out, "{nt}\nSCALARS cut int 1\nLOOKUP_TABLE default");
    for &t in &disc.cls.active {
        let _ = writeln!(out, "{}", u8::from(disc.cls.is_cut(t)));
    }
    out
}
