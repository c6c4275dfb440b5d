mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cutstokes::analysis::{builtin_case_zero, compute_errors, error_rules, run_convergence, solve_case, ManufacturedCase};
use cutstokes::geometry::{check_assumptions, classify};
use cutstokes::spaces::ElementPair;
use cutstokes::stability::{median, reports_to_csv, run_sweep, StabilityReport};
use serde_json::json;

use config::ExperimentConfig;
use output::{display, OutputDir};

#[derive(Parser)]
#[command(name = "cutstokes", version, about = "Cut finite elements for Stokes flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides CUTSTOKES_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; overrides the config.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the mesh and check the resolution assumptions.
    Classify(Common),
    /// Solve one configuration and report error and solution norms.
    Solve(Common),
    /// Run a convergence study over `mesh.levels`.
    Convergence(Common),
    /// Compute stability constants over the `[sweep]` configurations.
    StabilitySweep(Common),
}

enum Failure {
    /// Exit code 2.
    Config(String),
    /// Exit code 1.
    Numerical(String),
}

type Outcome = Result<bool, Failure>;

fn numerical<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Numerical(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&ExperimentConfig, &OutputDir, usize) -> Outcome) = match &cli.command {
        Command::Classify(c) => (c, cmd_classify),
        Command::Solve(c) => (c, cmd_solve),
        Command::Convergence(c) => (c, cmd_convergence),
        Command::StabilitySweep(c) => (c, cmd_stability_sweep),
    };
    let result = config::load(&common.config).map_err(Failure::Config).and_then(|cfg| {
        if common.jobs == Some(0) {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        let out = OutputDir::resolve(common.out.clone(), cfg.output.clone());
        run(&cfg, &out, common.jobs.unwrap_or(cfg.jobs))
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_classify(cfg: &ExperimentConfig, out: &OutputDir, _jobs: usize) -> Outcome {
    let mesh = cfg.mesh_params(cfg.mesh.n).build().map_err(numerical)?;
    let domain = cfg.domain().map_err(Failure::Config)?;
    let cls = classify(&mesh, domain.as_ref()).map_err(numerical)?;
    let report = check_assumptions(&mesh, &cls, cfg.mesh.max_path);
    let (_, components) = cls.interior_components(&mesh);
    let summary = json!({
        "n": cfg.mesh.n,
        "h": mesh.h,
        "triangles": mesh.num_triangles(),
        "interior": cls.interior.len(),
        "cut": cls.cut.len(),
        "active": cls.active.len(),
        "ghost_faces": cls.ghost_faces.len(),
        "interior_components": components,
        "assumptions_passed": report.passed(),
        "assumptions": report,
    });
    let text = pretty(&summary);
    print!("{text}");
    out.write("classify.json", &text).map_err(numerical)?;
    Ok(report.passed())
}

fn cmd_solve(cfg: &ExperimentConfig, out: &OutputDir, _jobs: usize) -> Outcome {
    let case = cfg.case().map_err(Failure::Config)?;
    let settings = cfg.run_settings();
    let run = solve_case(&case, &settings, cfg.mesh.n).map_err(numerical)?;
    let zero = ManufacturedCase { domain: case.domain.clone(), ..builtin_case_zero() };
    let rules = error_rules(&run.disc).map_err(numerical)?;
    let norms = compute_errors(&run.disc, &rules, &settings.params, &zero, &run.solution.velocity, &run.solution.pressure);
    let summary = json!({
        "case": case.name,
        "pair": settings.pair,
        "n": cfg.mesh.n,
        "h": run.disc.mesh.h,
        "ndof_u": run.disc.sys.n_velocity(),
        "ndof_p": run.disc.sys.n_pressure(),
        "errors": run.errors,
        "solution_norms": norms,
        "diagnostics": run.solution.diagnostics,
        "t_assemble_s": run.t_assemble_s,
        "t_solve_s": run.t_solve_s,
    });
    let text = pretty(&summary);
    print!("{text}");
    out.write("solve.json", &text).map_err(numerical)?;
    if cfg.dump_vtk {
        let path = out
            .write("solution.vtk", &output::vtk(&run.disc, &run.solution.velocity, &run.solution.pressure))
            .map_err(numerical)?;
        eprintln!("wrote {}", display(&path));
    }
    Ok(true)
}

struct Verdict {
    lines: Vec<String>,
    ok: bool,
}

impl Verdict {
    fn new() -> Self {
        Self { lines: Vec::new(), ok: true }
    }

    fn at_least(&mut self, name: &str, value: f64, bound: Option<f64>) {
        if let Some(b) = bound {
            let ok = value >= b;
            self.ok &= ok;
            self.lines.push(format!("{} {name}: {value:.6} >= {b}", if ok { "PASS" } else { "FAIL" }));
        }
    }

    fn flag(&mut self, name: &str, ok: bool) {
        self.ok &= ok;
        self.lines.push(format!("{} {name}", if ok { "PASS" } else { "FAIL" }));
    }

    fn print(&self) {
        for l in &self.lines {
            println!("{l}");
        }
    }
}

fn cmd_convergence(cfg: &ExperimentConfig, out: &OutputDir, _jobs: usize) -> Outcome {
    let case = cfg.case().map_err(Failure::Config)?;
    if cfg.mesh.levels.len() < 2 {
        return Err(Failure::Config("mesh.levels needs at least two levels".into()));
    }
    let record =
        run_convergence(&case, &cfg.run_settings(), &cfg.mesh.levels, cfg.quadrature.depth_increment).map_err(numerical)?;
    let csv = record.to_csv();
    print!("{csv}");
    for w in &record.warnings {
        eprintln!("warning: {w}");
    }
    out.write("convergence.csv", &csv).map_err(numerical)?;
    out.write("convergence.json", &pretty(&serde_json::to_value(&record).map_err(numerical)?)).map_err(numerical)?;
    let finest = record.finest().expect("at least two levels");
    let v = &cfg.verdicts;
    let mut verdict = Verdict::new();
    let eoc = |x: Option<f64>| x.unwrap_or(f64::NAN);
    verdict.at_least("EOC h1_u", eoc(finest.eoc_h1_u), v.min_eoc_h1_u);
    verdict.at_least("EOC l2_u", eoc(finest.eoc_l2_u), v.min_eoc_l2_u);
    verdict.at_least("EOC l2_p", eoc(finest.eoc_l2_p), v.min_eoc_l2_p);
    verdict.at_least("EOC product", eoc(finest.eoc_product), v.min_eoc_product);
    verdict.print();
    Ok(verdict.ok)
}

fn stability_verdicts(cfg: &ExperimentConfig, rows: &[StabilityReport]) -> Verdict {
    let v = &cfg.verdicts;
    let mut verdict = Verdict::new();
    let c0_eta = v.c0_eta.unwrap_or(20.0);
    let lo = |x: &[f64]| x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |x: &[f64]| x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pairs: Vec<ElementPair> = cfg.sweep.pairs.clone();
    let first_eta = cfg.sweep.etas[0];
    for pair in pairs {
        let base: Vec<&StabilityReport> = rows.iter().filter(|r| r.pair == pair && r.eta == first_eta).collect();
        let get = |f: fn(&StabilityReport) -> Option<f64>, n: Option<usize>| -> Vec<f64> {
            base.iter().filter(|r| n.is_none_or(|n| r.n == n)).filter_map(|r| f(r)).collect()
        };
        let (n_min, n_max) = (cfg.sweep.ns.iter().min().copied(), cfg.sweep.ns.iter().max().copied());
        let trend = |f: fn(&StabilityReport) -> Option<f64>| {
            median(get(f, n_max)).unwrap_or(f64::NAN) / median(get(f, n_min)).unwrap_or(f64::NAN)
        };
        let theta = get(|r| r.theta_h, None);
        if !theta.is_empty() {
            verdict.at_least(&format!("{pair} min theta"), lo(&theta), v.min_theta);
            verdict.at_least(&format!("{pair} theta min/max"), lo(&theta) / hi(&theta), v.min_theta_spread);
            verdict.at_least(&format!("{pair} theta median trend"), trend(|r| r.theta_h), v.min_theta_trend);
        }
        let beta = get(|r| r.beta, None);
        if !beta.is_empty() {
            verdict.at_least(&format!("{pair} min beta"), lo(&beta), v.min_beta);
            verdict.at_least(&format!("{pair} beta median trend"), trend(|r| r.beta), v.min_beta_trend);
        }
        let cb = get(|r| r.cb_lower, None);
        if !cb.is_empty() {
            verdict.at_least(&format!("{pair} min cb_lower"), lo(&cb), v.min_cb_lower);
        }
        let c0: Vec<f64> = rows.iter().filter(|r| r.pair == pair && r.eta == c0_eta).filter_map(|r| r.c0).collect();
        if !c0.is_empty() {
            verdict.at_least(&format!("{pair} min c0 at eta={c0_eta}"), lo(&c0), v.min_c0);
        }
    }
    if v.c0_monotone {
        let ne = cfg.sweep.etas.len();
        let mut sorted = cfg.sweep.etas.clone();
        sorted.sort_by(f64::total_cmp);
        let ordered = sorted == cfg.sweep.etas;
        let monotone = rows.chunks(ne).all(|chunk| {
            let c: Vec<f64> = chunk.iter().map(|r| r.c0.unwrap_or(f64::NAN)).collect();
            c.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs())
        });
        verdict.flag("c0 nondecreasing in eta (sweep.etas ascending)", ordered && monotone);
    }
    verdict
}

fn cmd_stability_sweep(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Outcome {
    if cfg.sweep.etas.is_empty() {
        return Err(Failure::Config("sweep.etas must not be empty".into()));
    }
    let sweep = cfg.sweep_config().map_err(Failure::Config)?;
    let rows = run_sweep(&sweep, jobs).map_err(numerical)?;
    let csv = reports_to_csv(&rows);
    out.write("stability.csv", &csv).map_err(numerical)?;
    out.write("stability.json", &pretty(&serde_json::to_value(&rows).map_err(numerical)?)).map_err(numerical)?;
    print!("{csv}");
    let errors: Vec<String> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} n={} shift={:?}: {e}", r.pair, r.n, r.shift)))
        .collect();
    for e in &errors {
        eprintln!("error: {e}");
    }
    let verdict = stability_verdicts(cfg, &rows);
    verdict.print();
    Ok(errors.is_empty() && verdict.ok)
}
