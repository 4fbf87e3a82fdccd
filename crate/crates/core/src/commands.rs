//! Subcommands: each run gets its own directory under `output_dir` holding
//! the exported fields and exactly one manifest.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::acceptance::{self, VerifyOptions};
use crate::classical::{classical_solve, liouville_exact, threshold_scan};
use crate::config::{Mode, RunConfig, SweepKind};
use crate::diagnostics::{epsilon_sweep, total_energy, uniqueness_threshold};
use crate::discretization::{Discretization, RadialGrid};
use crate::error::{Error, Result};
use crate::export::{export_field, NamedField};
use crate::manifest::Manifest;
use crate::mesh::{build_disk_mesh, build_square_mesh, DomainKind};
use crate::quantum::{picard_fixed_point, residual_original_system, InitKind, IterationConfig, SolutionState};
use crate::radial::radial_solve;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_FAILURE: i32 = 4;

/// Exit code for an error that ended a run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::Domain(_) | Error::Numerical(_) | Error::Io(_) => EXIT_FAILURE,
    }
}

/// What a command did: exit code, run directory (if one was created) and a
/// short human-readable summary.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub dir: Option<PathBuf>,
    pub summary: String,
}

impl Outcome {
    fn failed(err: &Error, dir: Option<PathBuf>) -> Self {
        Outcome {
            code: exit_code(err),
            dir,
            summary: err.to_string(),
        }
    }
}

/// Creates `<base>/<command>-NNN` with the first free NNN.
pub fn create_run_dir(base: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    for k in 1..100_000 {
        let dir = base.join(format!("{command}-{k:03}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    Err(Error::io(base, io::Error::other("no free run directory name")))
}

/// The 2D mesh or radial grid the configuration asks for.
pub fn build_discretization(cfg: &RunConfig) -> Result<Discretization> {
    match cfg.mode {
        Mode::Fem2d => {
            let mesh = match cfg.params.domain {
                DomainKind::Disk => build_disk_mesh(cfg.mesh_level)?,
                DomainKind::Square => build_square_mesh(cfg.square_cells())?,
            };
            Discretization::planar(mesh)
        }
        Mode::Radial => Discretization::radial(RadialGrid::new(cfg.radial_points, cfg.radial_grading)?),
    }
}

/// Index of the node closest to `p`.
pub fn nearest_node(disc: &Discretization, p: [f64; 2]) -> usize {
    let d2 = |i: usize| {
        let q = disc.position(i);
        (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
    };
    (0..disc.num_nodes())
        .min_by(|&a, &b| d2(a).total_cmp(&d2(b)))
        .unwrap_or(0)
}

/// Position of the first node where `n` is largest.
pub fn peak_location(disc: &Discretization, n: &[f64]) -> [f64; 2] {
    let mut best = 0;
    for (i, v) in n.iter().enumerate() {
        if *v > n[best] {
            best = i;
        }
    }
    disc.position(best)
}

fn export_all(cfg: &RunConfig, disc: &Discretization, dir: &Path, stem: &str, fields: &[NamedField]) -> Result<()> {
    for f in &cfg.export_formats {
        export_field(disc, fields, *f, &dir.join(format!("{stem}.{}", f.as_str())))?;
    }
    Ok(())
}

/// Writes the manifest, turning a write failure into an exit-4 outcome.
fn finish(manifest: &Manifest, dir: PathBuf, code: i32, summary: String) -> Outcome {
    match manifest.write(&dir) {
        Ok(()) => Outcome {
            code,
            dir: Some(dir),
            summary,
        },
        Err(e) => Outcome::failed(&e, Some(dir)),
    }
}

fn record_failure(m: &mut Manifest, prefix: &str, err: &Error) {
    m.push(&format!("{prefix}status"), "failed");
    m.push(&format!("{prefix}error"), err);
    if let Error::NonConvergence { history, iterations, .. } = err {
        m.push(&format!("{prefix}picard_iterations"), *iterations);
        m.push_list(&format!("{prefix}residual_history"), history);
    }
}

fn record_state(m: &mut Manifest, prefix: &str, disc: &Discretization, state: &SolutionState) -> Result<()> {
    let p = |k: &str| format!("{prefix}{k}");
    let res = residual_original_system(disc, state, &state.params);
    let energy = total_energy(disc, &state.n, &state.phi, &state.params)?;
    let origin = nearest_node(disc, [0.0, 0.0]);
    let stages = state
        .stages
        .iter()
        .map(|(s, k)| format!("{s}:{k}"))
        .collect::<Vec<_>>()
        .join(", ");
    m.push(&p("status"), "converged");
    m.push(&p("fermi_level"), state.fermi_level);
    m.push(&p("alpha"), state.alpha);
    m.push(&p("measure"), disc.measure());
    m.push(&p("nodes"), disc.num_nodes());
    m.push(&p("phi_origin"), state.phi[origin]);
    m.push(&p("max_n"), state.theta_upper);
    m.push(&p("theta_lower"), state.theta_lower);
    m.push(&p("theta_upper"), state.theta_upper);
    m.push(&p("picard_iterations"), state.picard_iterations);
    m.push(&p("newton_iterations"), state.newton_iterations_total);
    m.push(&p("final_picard_residual"), state.final_picard_residual);
    m.push(&p("stages"), stages);
    m.push_list(&p("residual_history"), &state.picard_history);
    m.push(&p("residual.r_a"), res.r_a);
    m.push(&p("residual.r_b"), res.r_b);
    m.push(&p("residual.r_c"), res.r_c);
    m.push(&p("energy.fisher"), energy.fisher);
    m.push(&p("energy.free"), energy.free_energy);
    m.push(&p("energy.total"), energy.total_energy);
    m.push(&p("energy.moser"), energy.moser_g);
    m.push(&p("energy.mass"), energy.mass);
    m.push_checks(prefix, &state.invariant_checks(disc));
    Ok(())
}

fn solve_state(cfg: &RunConfig, iteration: &IterationConfig) -> Result<(Discretization, SolutionState)> {
    match cfg.mode {
        Mode::Fem2d => {
            let disc = build_discretization(cfg)?;
            let state = picard_fixed_point(&disc, &cfg.params, iteration)?;
            Ok((disc, state))
        }
        Mode::Radial => {
            let sol = radial_solve(&cfg.params, cfg.radial_points, cfg.radial_grading, iteration)?;
            Ok((sol.disc, sol.state))
        }
    }
}

/// Coupled solve; exports `u`, `phi`, `n` and records F, energies and the
/// residuals of the original system.
pub fn cmd_solve(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let dir = match create_run_dir(&cfg.output_dir, "solve") {
        Ok(d) => d,
        Err(e) => return Outcome::failed(&e, None),
    };
    let mut m = Manifest::new("solve", cfg);
    let result = solve_state(cfg, &cfg.iteration);
    m.push("time.solve_s", start.elapsed().as_secs_f64());
    let (code, summary) = match result {
        Ok((disc, state)) => {
            let t = Instant::now();
            let fields: [NamedField; 3] = [("u", &state.u), ("phi", &state.phi), ("n", &state.n)];
            let done = record_state(&mut m, "", &disc, &state).and_then(|_| export_all(cfg, &disc, &dir, "fields", &fields));
            m.push("time.export_s", t.elapsed().as_secs_f64());
            match done {
                Ok(()) => (
                    EXIT_OK,
                    format!(
                        "converged: F = {:.10}, {} Picard iterations",
                        state.fermi_level, state.picard_iterations
                    ),
                ),
                Err(e) => {
                    m.push("error", &e);
                    (exit_code(&e), e.to_string())
                }
            }
        }
        Err(e) => {
            record_failure(&mut m, "", &e);
            (exit_code(&e), e.to_string())
        }
    };
    m.push("time.total_s", start.elapsed().as_secs_f64());
    finish(&m, dir, code, summary)
}

/// Two bump-initialized solves at `center_a` and `center_b`.
pub fn cmd_nonuniq(cfg: &RunConfig, jobs: usize) -> Outcome {
    if cfg.mode != Mode::Fem2d || cfg.params.domain != DomainKind::Disk {
        return Outcome::failed(&Error::config("nonuniq needs mode = fem2d and domain = disk"), None);
    }
    for c in [cfg.center_a, cfg.center_b] {
        if !(c[0].hypot(c[1]) < 1.0) {
            return Outcome::failed(
                &Error::config(format!("bump centre ({}, {}) is outside the disk", c[0], c[1])),
                None,
            );
        }
    }
    let start = Instant::now();
    let dir = match create_run_dir(&cfg.output_dir, "nonuniq") {
        Ok(d) => d,
        Err(e) => return Outcome::failed(&e, None),
    };
    let mut m = Manifest::new("nonuniq", cfg);
    let disc = match build_discretization(cfg) {
        Ok(d) => d,
        Err(e) => {
            record_failure(&mut m, "", &e);
            let code = exit_code(&e);
            return finish(&m, dir, code, e.to_string());
        }
    };
    let run = |c: [f64; 2]| {
        let it = IterationConfig {
            init: InitKind::Bump,
            bump_center: c,
            ..cfg.iteration.clone()
        };
        picard_fixed_point(&disc, &cfg.params, &it)
    };
    let (ra, rb) = if jobs >= 2 {
        std::thread::scope(|s| {
            let h = s.spawn(|| run(cfg.center_b));
            let a = run(cfg.center_a);
            (a, h.join().expect("solver thread panicked"))
        })
    } else {
        (run(cfg.center_a), run(cfg.center_b))
    };
    m.push("time.solve_s", start.elapsed().as_secs_f64());

    let mut code = EXIT_OK;
    for (tag, r) in [("a.", &ra), ("b.", &rb)] {
        match r {
            Ok(state) => {
                let stem = if tag == "a." { "state_a" } else { "state_b" };
                let fields: [NamedField; 3] = [("u", &state.u), ("phi", &state.phi), ("n", &state.n)];
                if let Err(e) = record_state(&mut m, tag, &disc, state).and_then(|_| export_all(cfg, &disc, &dir, stem, &fields)) {
                    m.push(&format!("{tag}error"), &e);
                    code = code.max(exit_code(&e));
                }
            }
            Err(e) => {
                record_failure(&mut m, tag, e);
                code = code.max(exit_code(e));
            }
        }
    }
    let summary = match (&ra, &rb) {
        (Ok(a), Ok(b)) => {
            let diff: Vec<f64> = a.n.iter().zip(&b.n).map(|(x, y)| (x - y).abs()).collect();
            let l1 = disc.integrate(&diff);
            let f_gap = (a.fermi_level - b.fermi_level).abs();
            let pa = peak_location(&disc, &a.n);
            let pb = peak_location(&disc, &b.n);
            let da = (pa[0] - cfg.center_a[0]).hypot(pa[1] - cfg.center_a[1]);
            let db = (pb[0] - cfg.center_b[0]).hypot(pb[1] - cfg.center_b[1]);
            m.push("fermi_gap", f_gap);
            m.push("density_l1_gap", l1);
            m.push("a.peak", format!("{}, {}", pa[0], pa[1]));
            m.push("b.peak", format!("{}, {}", pb[0], pb[1]));
            m.push("a.peak_distance", da);
            m.push("b.peak_distance", db);
            format!("|F1 - F2| = {f_gap:.3e}, ||n1 - n2||_L1 = {l1:.3e}, peaks at distance {da:.3} and {db:.3} from the centres")
        }
        _ => "at least one solve failed".to_string(),
    };
    m.push("time.total_s", start.elapsed().as_secs_f64());
    finish(&m, dir, code, summary)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Epsilon sweep (quantum vs classical) or sigma sweep (classical threshold
/// scan). Writes `sweep.csv`; exits 0 when at least one value succeeded.
pub fn cmd_sweep(cfg: &RunConfig, jobs: usize) -> Outcome {
    if cfg.sweep_values.is_empty() {
        return Outcome::failed(&Error::config("sweep_values is empty"), None);
    }
    let start = Instant::now();
    let dir = match create_run_dir(&cfg.output_dir, "sweep") {
        Ok(d) => d,
        Err(e) => return Outcome::failed(&e, None),
    };
    let mut m = Manifest::new("sweep", cfg);
    let result = build_discretization(cfg).and_then(|disc| sweep_table(cfg, &disc, jobs, &mut m));
    m.push("time.total_s", start.elapsed().as_secs_f64());
    match result {
        Ok((csv, succeeded)) => {
            let path = dir.join("sweep.csv");
            if let Err(e) = fs::write(&path, csv).map_err(|e| Error::io(&path, e)) {
                m.push("error", &e);
                let code = exit_code(&e);
                return finish(&m, dir, code, e.to_string());
            }
            let total = cfg.sweep_values.len();
            m.push("succeeded", succeeded);
            let code = if succeeded > 0 { EXIT_OK } else { EXIT_NONCONVERGENCE };
            finish(&m, dir, code, format!("{succeeded} of {total} values converged"))
        }
        Err(e) => {
            record_failure(&mut m, "", &e);
            let code = exit_code(&e);
            finish(&m, dir, code, e.to_string())
        }
    }
}

fn sweep_table(cfg: &RunConfig, disc: &Discretization, jobs: usize, m: &mut Manifest) -> Result<(String, usize)> {
    let mut csv = String::new();
    let mut succeeded = 0;
    match cfg.sweep_kind {
        SweepKind::Epsilon => {
            let rec = epsilon_sweep(disc, cfg.params.sigma, &cfg.sweep_values, &cfg.iteration, cfg.warm_start, jobs)?;
            m.push("classical.fermi_star", rec.classical.fermi_star);
            m.push("classical.fisher", rec.classical_fisher);
            m.push("classical.free_energy", rec.classical_free_energy);
            csv.push_str("epsilon,converged,fermi_level,u_phi_gap,phi_gap,fisher,free_energy,total_energy,picard_iterations\n");
            for e in &rec.entries {
                succeeded += usize::from(e.converged);
                let _ = writeln!(
                    csv,
                    "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                    e.epsilon,
                    flag(e.converged),
                    e.fermi_level,
                    e.u_phi_gap,
                    e.phi_gap,
                    e.fisher,
                    e.free_energy,
                    e.total_energy,
                    e.picard_iterations
                );
                if let Some(err) = &e.error {
                    m.push(&format!("error.{}", e.epsilon), err);
                }
            }
        }
        SweepKind::Sigma => {
            let scan = threshold_scan(disc, &cfg.sweep_values, &cfg.iteration)?;
            csv.push_str("sigma,converged,max_phi,fermi_level,iterations\n");
            for e in &scan {
                succeeded += usize::from(e.converged);
                let _ = writeln!(
                    csv,
                    "{:.16e},{},{:.16e},{:.16e},{}",
                    e.sigma,
                    flag(e.converged),
                    e.max_phi,
                    e.fermi,
                    e.iterations
                );
                if let Some(f) = &e.failure {
                    m.push(&format!("failure.{}", e.sigma), f);
                }
            }
        }
    }
    Ok((csv, succeeded))
}

/// Classical steady state at `sigma`; compares against the exact radial
/// solution on the disk when one exists.
pub fn cmd_classical(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let dir = match create_run_dir(&cfg.output_dir, "classical") {
        Ok(d) => d,
        Err(e) => return Outcome::failed(&e, None),
    };
    let mut m = Manifest::new("classical", cfg);
    let result = build_discretization(cfg).and_then(|disc| {
        let state = classical_solve(&disc, cfg.params.sigma, &cfg.iteration)?;
        Ok((disc, state))
    });
    m.push("time.solve_s", start.elapsed().as_secs_f64());
    let (code, summary) = match result {
        Ok((disc, state)) => {
            let origin = state.phi0[nearest_node(&disc, [0.0, 0.0])];
            m.push("status", if state.converged { "converged" } else { "not_converged" });
            m.push("fermi_star", state.fermi_star);
            m.push("phi_origin", origin);
            m.push("max_phi", state.max_phi());
            m.push("newton_iterations", state.iterations);
            m.push("residual", state.residual);
            if let Some(f) = &state.failure {
                m.push("failure", f);
            }
            if disc.domain_kind() == DomainKind::Disk {
                if let Ok((phi_exact, fermi_exact)) = liouville_exact(cfg.params.sigma, 0.0) {
                    m.push("exact.phi_origin", phi_exact);
                    m.push("exact.fermi_star", fermi_exact);
                    m.push("exact.phi_origin_rel_error", (origin - phi_exact).abs() / phi_exact);
                    m.push("exact.fermi_star_error", (state.fermi_star - fermi_exact).abs());
                }
            }
            if let Ok(t) = uniqueness_threshold(2, cfg.params.epsilon, cfg.c0, cfg.c1) {
                m.push("sigma_max", t.sigma_max);
            }
            let exported = if state.converged {
                m.push_checks("", &state.invariant_checks(&disc));
                let fields: [NamedField; 2] = [("phi", &state.phi0), ("n", &state.n0)];
                export_all(cfg, &disc, &dir, "fields", &fields)
            } else {
                Ok(())
            };
            match exported {
                Err(e) => {
                    m.push("error", &e);
                    (exit_code(&e), e.to_string())
                }
                Ok(()) if state.converged => (EXIT_OK, format!("converged: F* = {:.10}", state.fermi_star)),
                Ok(()) => (
                    EXIT_NONCONVERGENCE,
                    format!("no classical solution: {}", state.failure.as_deref().unwrap_or("unknown")),
                ),
            }
        }
        Err(e) => {
            record_failure(&mut m, "", &e);
            (exit_code(&e), e.to_string())
        }
    };
    m.push("time.total_s", start.elapsed().as_secs_f64());
    finish(&m, dir, code, summary)
}

/// Runs the acceptance criteria and prints one line per criterion.
pub fn cmd_verify(cfg: &RunConfig, opts: &VerifyOptions) -> Outcome {
    let dir = match create_run_dir(&cfg.output_dir, "verify") {
        Ok(d) => d,
        Err(e) => return Outcome::failed(&e, None),
    };
    let mut m = Manifest::new("verify", cfg);
    m.push("level", if opts.full { "full" } else { "quick" });
    let mut all = true;
    let mut failed = Vec::new();
    for id in acceptance::CRITERIA {
        let r = acceptance::run_criterion(id, opts);
        println!("{}", r.line());
        m.push(&format!("criterion.{id}"), r.line());
        if !r.passed() {
            all = false;
            failed.push(format!("{id} ({})", r.failed_checks().join(", ")));
        }
    }
    if all {
        finish(&m, dir, EXIT_OK, "all criteria passed".into())
    } else {
        finish(&m, dir, EXIT_VERIFY_FAILED, format!("failed: {}", failed.join("; ")))
    }
}
