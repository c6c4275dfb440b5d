use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config_text: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cutstokes"));
    cmd.args(args).current_dir(dir).env_remove("CUTSTOKES_OUT");
    if let Some(text) = config_text {
        let path = dir.join("config.toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

const DISK: &str = "[geometry]\ndomain = \"circle 0 0 1\"\n";

#[test]
fn malformed_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["classify"], Some("[geometry\ndomain = 1"), dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve"], Some(&format!("{DISK}[discretization]\ngama_p = 1.0\n")), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama_p"));
}

#[test]
fn missing_geometry_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve"], Some("[mesh]\nn = 8\n"), dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_default_disk_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["classify", "--out", "o"], Some(DISK), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["assumptions_passed"], true);
    assert!(dir.path().join("o/classify.json").exists());
}

#[test]
fn classify_coarse_mesh_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["classify"], Some(&format!("{DISK}[mesh]\nn = 2\n")), dir.path());
    assert_eq!(out.status.code(), Some(1));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["assumptions_passed"], false);
    assert!(!summary["assumptions"]["unreachable_cut"].as_array().unwrap().is_empty());
}

#[test]
fn zero_load_gives_zero_norms() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--out", "o"], Some(&format!("case = \"zero\"\n{DISK}[mesh]\nn = 8\n")), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["h1_u", "l2_u", "l2_p", "product"] {
        assert_eq!(summary["solution_norms"][key], 0.0);
        assert_eq!(summary["errors"][key], 0.0);
    }
}

#[test]
fn disk_solve_matches_baseline_and_dumps_vtk() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--out", "o"], Some(&format!("dump_vtk = true\n{DISK}")), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let h1 = summary["errors"]["h1_u"].as_f64().unwrap();
    assert!((h1 - 0.4239102366767935).abs() <= 1e-9 * h1, "{h1}");
    let vtk = std::fs::read_to_string(dir.path().join("o/solution.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
    assert!(vtk.contains("VECTORS velocity double"));
}

#[test]
fn environment_sets_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    std::fs::write(&path, DISK).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_cutstokes"))
        .args(["classify", "--config"])
        .arg(&path)
        .current_dir(dir.path())
        .env("CUTSTOKES_OUT", "from-env")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(dir.path().join("from-env/classify.json").exists());
}

const SINGLE: &str = "[geometry]\ndomain = \"circle 0 0 1\"\n[sweep]\npairs = [\"taylor-hood-p2p1\"]\nns = [8]\n";

#[test]
fn single_configuration_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["stability-sweep", "--out", "o", "--jobs", "1"], Some(SINGLE), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("o/stability.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("pair,n,shift_x,shift_y,eta,theta_h"));
    assert!(lines[1].starts_with("taylor-hood-p2p1,8,"));
}

#[test]
fn sweep_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SINGLE}random_shifts = 1\n");
    let a = run(&["stability-sweep", "--out", "a"], Some(&text), dir.path());
    let b = run(&["stability-sweep", "--out", "b", "--jobs", "2"], Some(&text), dir.path());
    assert!(a.status.success() && b.status.success());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("stability.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn c0_is_monotone_over_an_eta_list() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SINGLE}etas = [1.0, 40.0]\n[sweep.quantities]\ntheta = false\nbeta = false\ncb_lower = false\ncs = false\ntrace = false\nextension = false\ndecomposition = false\naux6a = false\naux7 = false\n[verdicts]\nc0_monotone = true\n"
    );
    let out = run(&["stability-sweep", "--out", "o"], Some(&text), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS c0 nondecreasing"));
}

#[test]
fn shipped_convergence_acceptance_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("acceptance-convergence-p2p1.toml");
    let out = run(&["convergence", "--out", "o", "--config", config.to_str().unwrap()], None, dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.matches("PASS").count(), 4);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let dir = tempfile::tempdir().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let out = run(&["classify", "--out", "o"], Some(&text.replace("n = 16", "n = 8")), dir.path());
        assert_ne!(out.status.code(), Some(2), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}
