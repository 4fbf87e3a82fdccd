use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bohmgrav::export::read_csv;
use bohmgrav::manifest::parse_results;

struct Run {
    code: i32,
    stderr: String,
    dir: PathBuf,
}

impl Run {
    fn results(&self) -> BTreeMap<String, String> {
        parse_results(&fs::read_to_string(self.dir.join("manifest.txt")).expect("manifest written"))
    }

    fn num(&self, key: &str) -> f64 {
        let r = self.results();
        r.get(key).unwrap_or_else(|| panic!("no result.{key}")).parse().unwrap()
    }
}

fn bohmgrav(out: &Path, args: &[&str]) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_bohmgrav"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BOHMGRAV_SEED")
        .output()
        .expect("binary runs");
    let command = args[0];
    // newest run directory for this command
    let dir = fs::read_dir(out)
        .ok()
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(&format!("{command}-")))
        .max()
        .unwrap_or_default();
    Run {
        code: output.status.code().expect("exit code"),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        dir,
    }
}

fn sigma(multiple_of_pi: f64) -> String {
    format!("sigma={}", multiple_of_pi * PI)
}

#[test]
fn solve_sigma_zero_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(tmp.path(), &["solve"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.dir.file_name().unwrap(), "solve-001");
    let f = run.num("fermi_level");
    let measure = run.num("measure");
    assert!((f + measure.ln()).abs() < 1e-12);
    assert!((run.num("phi_origin") - 0.25 / PI).abs() < 1e-3);
    let table = read_csv(&run.dir.join("fields.csv")).unwrap();
    assert_eq!(table.header, ["x", "y", "u", "phi", "n"]);
    assert_eq!(table.columns[0].len(), run.num("nodes") as usize);
    assert!(run.results()["check.mass"].starts_with("pass"));

    let again = bohmgrav(tmp.path(), &["solve"]);
    assert_eq!(again.dir.file_name().unwrap(), "solve-002");
}

#[test]
fn forced_nonconvergence_exits_2_with_history() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(tmp.path(), &["solve", "--set", &sigma(4.0), "--set", "max_picard=1"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let r = run.results();
    assert_eq!(r["status"], "failed");
    let history: Vec<f64> = r["residual_history"].split(", ").map(|v| v.parse().unwrap()).collect();
    assert_eq!(history.len(), 1);
    assert!(history[0] > 1e-8);
    assert!(!run.dir.join("fields.csv").exists());
}

#[test]
fn config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "sigm = 1\n").unwrap();
    let run = bohmgrav(tmp.path(), &["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("line 1") && run.stderr.contains("`sigma`"), "{}", run.stderr);

    let missing = tmp.path().join("missing.cfg");
    assert_eq!(bohmgrav(tmp.path(), &["solve", "--config", missing.to_str().unwrap()]).code, 3);
    assert_eq!(bohmgrav(tmp.path(), &["solve", "--set", "mode=radial", "--set", "domain=square"]).code, 3);
    assert_eq!(bohmgrav(tmp.path(), &["solve", "--jobs", "0"]).code, 3);
    assert_eq!(bohmgrav(tmp.path(), &["frobnicate"]).code, 3);
    assert_eq!(bohmgrav(tmp.path(), &["sweep"]).code, 3, "empty sweep values");
    assert_eq!(bohmgrav(tmp.path(), &["nonuniq", "--set", "mode=radial"]).code, 3);
    assert_eq!(bohmgrav(tmp.path(), &["nonuniq", "--set", "center_a=1.2,0"]).code, 3);
    assert_eq!(bohmgrav(tmp.path(), &["verify", "--inject-failure", "nonsense"]).code, 3);
    // nothing was written for rejected configurations
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn unwritable_output_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let run = bohmgrav(&blocker.join("sub"), &["solve", "--set", "mesh_level=2"]);
    assert_eq!(run.code, 4, "{}", run.stderr);
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["solve", "--set", &sigma(4.0), "--set", "epsilon=0.1", "--set", "mesh_level=4", "--set", "export_formats=csv,vtk"];
    let first = bohmgrav(tmp.path(), &args);
    assert_eq!(first.code, 0, "{}", first.stderr);
    let manifest = first.dir.join("manifest.txt");
    let second = bohmgrav(tmp.path(), &["solve", "--config", manifest.to_str().unwrap()]);
    assert_eq!(second.code, 0, "{}", second.stderr);
    assert!((first.num("fermi_level") - second.num("fermi_level")).abs() <= 1e-12);
    for file in ["fields.csv", "fields.vtk"] {
        let a = fs::read(first.dir.join(file)).unwrap();
        let b = fs::read(second.dir.join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    let vtk = fs::read_to_string(first.dir.join("fields.vtk")).unwrap();
    let nodes = first.num("nodes");
    assert!(vtk.contains(&format!("POINTS {nodes} double\n")));
    assert_eq!(vtk.matches("SCALARS").count(), 3);
}

#[test]
fn seed_is_recorded_not_used() {
    let tmp = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_bohmgrav"))
        .args(["solve", "--set", "mesh_level=3", "--out"])
        .arg(tmp.path())
        .env("BOHMGRAV_SEED", "1234")
        .output()
        .unwrap();
    assert!(output.status.success());
    let r = parse_results(&fs::read_to_string(tmp.path().join("solve-001/manifest.txt")).unwrap());
    assert_eq!(r["seed"], "1234");
    let run = bohmgrav(tmp.path(), &["solve", "--set", "mesh_level=3"]);
    assert_eq!(run.results()["seed"], "unset");
    let a = fs::read(tmp.path().join("solve-001/fields.csv")).unwrap();
    let b = fs::read(run.dir.join("fields.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn radial_solve_exports_r_column() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(
        tmp.path(),
        &["solve", "--set", "mode=radial", "--set", &sigma(4.0), "--set", "epsilon=0.01", "--set", "radial_points=4096"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let table = read_csv(&run.dir.join("fields.csv")).unwrap();
    assert_eq!(table.header, ["r", "u", "phi", "n"]);
    assert_eq!(table.columns[0].len(), 4096);
    // close to the classical level -log 2π at small ε
    assert!((run.num("fermi_level") + (2.0 * PI).ln()).abs() < 2e-3);
    let cfg = fs::read_to_string(run.dir.join("manifest.txt")).unwrap();
    assert!(cfg.contains("\nradial_grading = 0\n"), "uniform grid by default for eps >= 1e-2");
}

#[test]
fn radial_sigma_ten_pi_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(
        tmp.path(),
        &["solve", "--set", "mode=radial", "--set", &sigma(10.0), "--set", "radial_points=100000"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!((run.num("fermi_level") + 20.188).abs() < 1.0);
    let cfg = fs::read_to_string(run.dir.join("manifest.txt")).unwrap();
    assert!(cfg.contains("\ncontinuation_steps = 10\n"), "default continuation above 8 pi");
    assert!(cfg.contains("\nradial_grading = 8\n"), "graded grid by default for eps < 1e-2");
}

#[test]
fn nonuniq_below_threshold_coincides() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(tmp.path(), &["nonuniq", "--set", "epsilon=0.1"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.num("density_l1_gap") < 1e-8);

    let run = bohmgrav(
        tmp.path(),
        &["nonuniq", "--set", &sigma(2.0), "--set", "epsilon=0.1", "--set", "center_b=-0.2,0.4", "--jobs", "2"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.num("density_l1_gap") <= 10.0 * 1e-8);
    assert!(run.num("fermi_gap") <= 10.0 * 1e-8);
    assert!(run.dir.join("state_a.csv").exists() && run.dir.join("state_b.csv").exists());
}

#[test]
fn epsilon_sweep_table() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(tmp.path(), &["sweep", "--set", &sigma(4.0), "--set", "sweep_values=0.2,0.1,0.05,0.025"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let table = read_csv(&run.dir.join("sweep.csv")).unwrap();
    assert_eq!(table.columns[0], [0.2, 0.1, 0.05, 0.025]);
    let gaps = table.column("u_phi_gap").unwrap();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(table.column("converged").unwrap().iter().all(|&c| c == 1.0));
    let fisher0 = run.num("classical.fisher");
    assert!(table.column("fisher").unwrap().iter().all(|&f| f <= fisher0 + 1e-6));

    // independent solves give the same table as the warm-started sweep
    let cold = bohmgrav(
        tmp.path(),
        &["sweep", "--set", &sigma(4.0), "--set", "sweep_values=0.2,0.1", "--set", "warm_start=false", "--jobs", "2"],
    );
    assert_eq!(cold.code, 0, "{}", cold.stderr);
    let cold = read_csv(&cold.dir.join("sweep.csv")).unwrap();
    for (a, b) in cold.column("fermi_level").unwrap().iter().zip(table.column("fermi_level").unwrap()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn sigma_sweep_ends_unconverged() {
    let tmp = tempfile::tempdir().unwrap();
    let values = format!("sweep_values={},{},{},{}", 2.0 * PI, 4.0 * PI, 6.0 * PI, 9.0 * PI);
    let run = bohmgrav(tmp.path(), &["sweep", "--set", "sweep_kind=sigma", "--set", &values]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let table = read_csv(&run.dir.join("sweep.csv")).unwrap();
    assert_eq!(table.column("converged").unwrap(), [1.0, 1.0, 1.0, 0.0]);
}

#[test]
fn classical_command() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(tmp.path(), &["classical", "--set", &sigma(4.0)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.num("exact.phi_origin_rel_error") < 0.01);
    assert!((run.num("fermi_star") + (2.0 * PI).ln()).abs() < 0.02);

    let run = bohmgrav(tmp.path(), &["classical", "--set", &sigma(9.0)]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert_eq!(run.results()["status"], "not_converged");
}

#[test]
fn verify_names_injected_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let run = bohmgrav(tmp.path(), &["verify", "--inject-failure", "mass"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("1 (mass)"), "{}", run.stderr);
    let r = run.results();
    assert!(r["criterion.1"].starts_with("FAIL"));
    assert!(r["criterion.5"].starts_with("SKIP"));
    assert!(r["criterion.9"].starts_with("PASS"));
}
