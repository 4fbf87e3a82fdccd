//! Classical (ε = 0) self-gravitating state via the Gelfand form
//! `-ΔΦ = e^{σΦ} / ∫e^{σΦ}`, `Φ = 0` on Γ.
//!
//! Newton is applied to the full nonlocal map, normalization included. Its
//! Jacobian `K - σ diag(m∘n) + σ (m∘n)(m∘n)ᵀ` is a sparse matrix plus a
//! rank-one term. Lagging the normalization instead gives an outer iteration
//! whose amplification factor leaves the unit disk once σ passes 4π, well
//! before the existence threshold.

use std::f64::consts::PI;

use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::fem;
use crate::linsolve::LuFactor;
use crate::quantum::{Check, IterationConfig};
use crate::sparse::{dot, norm2, CsrMatrix};

/// `‖Φ‖∞` beyond which the iteration is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e3;
/// Largest σ increment of the internal continuation.
pub const MAX_SIGMA_STEP: f64 = PI;
/// Relative residual at which a Newton solve is accepted.
pub const CLASSICAL_RESIDUAL_TOL: f64 = 1e-11;

#[derive(Clone, Debug)]
pub struct ClassicalState {
    pub sigma: f64,
    pub phi0: Vec<f64>,
    pub n0: Vec<f64>,
    pub fermi_star: f64,
    pub converged: bool,
    /// Newton iterations over all continuation stages.
    pub iterations: usize,
    /// Final relative residual `‖KΦ - m∘n‖ / ‖m∘n‖` on free rows.
    pub residual: f64,
    /// Why the solve stopped when it did not converge.
    pub failure: Option<String>,
}

impl ClassicalState {
    pub fn max_phi(&self) -> f64 {
        self.phi0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn invariant_checks(&self, disc: &Discretization) -> Vec<Check> {
        let mass = disc.integrate(&self.n0);
        let (n_expected, fermi) = gibbs(disc, &self.phi0, self.sigma);
        let n_defect = self
            .n0
            .iter()
            .zip(&n_expected)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
            .fold(0.0, f64::max);
        vec![
            Check::at_most("classical_mass", (mass - 1.0).abs(), 1e-10),
            Check::at_most("classical_fermi", (self.fermi_star - fermi).abs(), 1e-10),
            Check::at_most("classical_gibbs", n_defect, 1e-10),
            Check::at_most("classical_poisson", poisson_defect(disc, &self.phi0, &self.n0), 1e-8),
        ]
    }
}

/// `n = e^{σΦ} / ∫e^{σΦ}` and `F* = -log ∫e^{σΦ}`, shifted against overflow.
fn gibbs(disc: &Discretization, phi: &[f64], sigma: f64) -> (Vec<f64>, f64) {
    let shift = phi.iter().map(|p| sigma * p).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = phi.iter().map(|p| (sigma * p - shift).exp()).collect();
    let s = disc.integrate(&e);
    (e.into_iter().map(|v| v / s).collect(), -shift - s.ln())
}

/// Relative Poisson residual on free rows.
fn poisson_defect(disc: &Discretization, phi: &[f64], n: &[f64]) -> f64 {
    let r = free_residual(disc, phi, n);
    let load: Vec<f64> = n.iter().zip(disc.lumped_mass()).map(|(a, b)| a * b).collect();
    norm2(&r) / norm2(&load)
}

fn free_residual(disc: &Discretization, phi: &[f64], n: &[f64]) -> Vec<f64> {
    let kphi = disc.stiffness().matvec(phi);
    let m = disc.lumped_mass();
    (0..phi.len())
        .map(|i| if disc.is_dirichlet(i) { 0.0 } else { kphi[i] - m[i] * n[i] })
        .collect()
}

/// Bordered Newton matrix `[K - σ diag(v)  σv; vᵀ  -1]` with `v = m∘n`,
/// identity rows on Dirichlet nodes.
fn bordered_jacobian(disc: &Discretization, v: &[f64], sigma: f64) -> CsrMatrix {
    let n = disc.num_nodes();
    let k = disc.stiffness();
    let mut trip = Vec::with_capacity(k.nnz() + 3 * n + 1);
    for i in 0..n {
        if disc.is_dirichlet(i) {
            trip.push((i, i, 1.0));
            continue;
        }
        let (cols, vals) = k.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            if !disc.is_dirichlet(j) {
                trip.push((i, j, a));
            }
        }
        trip.push((i, i, -sigma * v[i]));
        trip.push((i, n, sigma * v[i]));
        trip.push((n, i, v[i]));
    }
    trip.push((n, n, -1.0));
    CsrMatrix::from_triplets(n + 1, n + 1, &trip)
}

/// Applies the Newton matrix: `K x - σ v∘x + σ v (vᵀx)` on free rows,
/// identity on Dirichlet rows.
fn jacobian_apply(disc: &Discretization, v: &[f64], sigma: f64, x: &[f64]) -> Vec<f64> {
    let kx = disc.stiffness().matvec(x);
    let vx: f64 = (0..x.len()).filter(|&i| !disc.is_dirichlet(i)).map(|i| v[i] * x[i]).sum();
    let k = disc.stiffness();
    (0..x.len())
        .map(|i| {
            if disc.is_dirichlet(i) {
                return x[i];
            }
            // drop couplings to Dirichlet columns
            let (cols, vals) = k.row(i);
            let fixed: f64 = cols
                .iter()
                .zip(vals)
                .filter(|(&j, _)| disc.is_dirichlet(j))
                .map(|(&j, &a)| a * x[j])
                .sum();
            kx[i] - fixed - sigma * v[i] * x[i] + sigma * v[i] * vx
        })
        .collect()
}

/// Solves the Newton system `J δ = b` (b zero on Dirichlet rows).
///
/// The sparse part `A = K - σ diag(v)` is factored and the rank-one term is
/// handled by Sherman-Morrison, followed by iterative refinement against
/// `J`. If `A` itself is singular the bordered system is factored instead;
/// that is exact but fills in badly on fine meshes.
fn newton_step(disc: &Discretization, v: &[f64], sigma: f64, b: &[f64]) -> Result<Vec<f64>> {
    let n = disc.num_nodes();
    let vf: Vec<f64> = (0..n).map(|i| if disc.is_dirichlet(i) { 0.0 } else { v[i] }).collect();
    let (mut a, _) = fem::apply_dirichlet(disc.stiffness(), &vec![0.0; n], disc.dirichlet_nodes(), 0.0);
    a.add_diagonal(&vf.iter().map(|x| -sigma * x).collect::<Vec<_>>());
    let nb = norm2(b);
    let sm = LuFactor::new(&a, None).and_then(|lu| {
        let z = lu.solve(&vf)?;
        let denom = 1.0 + sigma * dot(&vf, &z);
        let solve = |rhs: &[f64]| -> Result<Vec<f64>> {
            let y = lu.solve(rhs)?;
            let c = sigma * dot(&vf, &y) / denom;
            Ok(y.iter().zip(&z).map(|(yi, zi)| yi - c * zi).collect())
        };
        let mut x = solve(b)?;
        for _ in 0..4 {
            let jx = jacobian_apply(disc, v, sigma, &x);
            let res: Vec<f64> = b.iter().zip(&jx).map(|(p, q)| p - q).collect();
            if norm2(&res) <= 1e-12 * nb {
                return Ok(x);
            }
            let dx = solve(&res)?;
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        }
        Err(Error::numerical("Sherman-Morrison refinement stalled"))
    });
    match sm {
        Ok(x) if x.iter().all(|x| x.is_finite()) => Ok(x),
        _ => {
            let jac = bordered_jacobian(disc, v, sigma);
            let mut rhs = b.to_vec();
            rhs.push(0.0);
            let mut x = LuFactor::new(&jac, None)?.solve(&rhs)?;
            x.truncate(n);
            Ok(x)
        }
    }
}

/// Solves the classical problem at `sigma`, starting from the σ = 0 state.
pub fn classical_solve(
    disc: &Discretization,
    sigma: f64,
    config: &IterationConfig,
) -> Result<ClassicalState> {
    classical_solve_from(disc, sigma, config, None)
}

/// As [`classical_solve`], continuing in σ from `start` when given.
pub fn classical_solve_from(
    disc: &Discretization,
    sigma: f64,
    config: &IterationConfig,
    start: Option<&ClassicalState>,
) -> Result<ClassicalState> {
    if !sigma.is_finite() {
        return Err(Error::config("sigma must be finite"));
    }
    config.validate()?;
    let (mut phi, sigma0) = match start {
        Some(s) if s.converged && s.phi0.len() == disc.num_nodes() => (s.phi0.clone(), s.sigma),
        _ => {
            let uniform = vec![1.0 / disc.measure(); disc.num_nodes()];
            (disc.poisson_solver()?.solve_density(&uniform)?, 0.0)
        }
    };
    let stages = ((sigma - sigma0).abs() / MAX_SIGMA_STEP).ceil().max(1.0) as usize;
    let mut iterations = 0;
    let mut residual = 0.0;
    for k in 1..=stages {
        let s = sigma0 + (sigma - sigma0) * k as f64 / stages as f64;
        match newton(disc, &mut phi, s, config) {
            Ok((its, res)) => {
                iterations += its;
                residual = res;
            }
            Err((its, res, why)) => {
                let (n0, fermi_star) = gibbs(disc, &phi, s);
                return Ok(ClassicalState {
                    sigma,
                    phi0: phi,
                    n0,
                    fermi_star,
                    converged: false,
                    iterations: iterations + its,
                    residual: res,
                    failure: Some(format!("at sigma = {s:.6}: {why}")),
                });
            }
        }
    }
    let (n0, fermi_star) = gibbs(disc, &phi, sigma);
    Ok(ClassicalState {
        sigma,
        phi0: phi,
        n0,
        fermi_star,
        converged: true,
        iterations,
        residual,
        failure: None,
    })
}

type NewtonFailure = (usize, f64, String);

/// Damped Newton at fixed σ. Returns iterations and final relative residual.
fn newton(
    disc: &Discretization,
    phi: &mut Vec<f64>,
    sigma: f64,
    config: &IterationConfig,
) -> std::result::Result<(usize, f64), NewtonFailure> {
    let n_nodes = disc.num_nodes();
    let m = disc.lumped_mass();
    let eval = |phi: &[f64]| {
        let (n, _) = gibbs(disc, phi, sigma);
        let r = free_residual(disc, phi, &n);
        let scale = norm2(&n.iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>());
        (n, r, scale)
    };
    let (mut n, mut r, mut scale) = eval(phi);
    let mut rn = norm2(&r);
    let max_iter = config.max_newton.max(50);
    for it in 0..max_iter {
        if !rn.is_finite() {
            return Err((it, rn, "non-finite residual".into()));
        }
        if rn <= CLASSICAL_RESIDUAL_TOL * scale {
            return Ok((it, rn / scale));
        }
        let v: Vec<f64> = n.iter().zip(m).map(|(a, b)| a * b).collect();
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = match newton_step(disc, &v, sigma, &rhs) {
            Ok(d) => d,
            Err(e) => return Err((it, rn / scale, format!("singular Newton system: {e}"))),
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=config.line_search_max_halvings {
            let trial: Vec<f64> = (0..n_nodes).map(|i| phi[i] + step * delta[i]).collect();
            let (nt, rt, st) = eval(&trial);
            let rtn = norm2(&rt);
            if rtn.is_finite() && rtn / st < rn / scale {
                *phi = trial;
                n = nt;
                r = rt;
                rn = rtn;
                scale = st;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err((it + 1, rn / scale, "line search failed".into()));
        }
        let phi_max = phi.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if phi_max > DIVERGENCE_BOUND {
            return Err((it + 1, rn / scale, format!("|phi|_inf = {phi_max:.3e} exceeds the divergence bound")));
        }
    }
    Err((max_iter, rn / scale, "iteration cap reached".into()))
}

/// Radial Liouville solution of `-ΔΦ = e^{σΦ}/∫e^{σΦ}` on the unit disk:
/// `σΦ(r) = 2 log((1+μ)/(1+μr²))` with `μ = σ/(8π-σ)`. Returns `(Φ(r), F*)`.
pub fn liouville_exact(sigma: f64, r: f64) -> Result<(f64, f64)> {
    if !(0.0..8.0 * PI).contains(&sigma) {
        return Err(Error::domain(format!(
            "no classical solution for sigma = {sigma} (need 0 <= sigma < 8 pi)"
        )));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::domain(format!("radius {r} outside [0, 1]")));
    }
    if sigma == 0.0 {
        return Ok(((1.0 - r * r) / (4.0 * PI), -PI.ln()));
    }
    let mu = sigma / (8.0 * PI - sigma);
    let phi = 2.0 * (mu.ln_1p() - (mu * r * r).ln_1p()) / sigma;
    Ok((phi, -(PI * (1.0 + mu)).ln()))
}

/// Substitutes the formula into `-(1/r)(rΦ')' = e^{σΦ}/∫e^{σΦ}` with
/// central differences at r = 0.05, ..., 0.95; ∫e^{σΦ} is integrated
/// independently by Simpson. Returns the largest relative defect, or a domain
/// error when the quoted F* disagrees with the quadrature.
pub fn liouville_pde_defect(sigma: f64) -> Result<f64> {
    liouville_exact(sigma, 0.0)?;
    let phi = |r: f64| liouville_exact(sigma, r).map_or(f64::NAN, |v| v.0);
    let steps = 20000;
    let h = 1.0 / steps as f64;
    let mut integral = 0.0;
    for k in 0..=steps {
        let r = k as f64 * h;
        let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * 2.0 * PI * r * (sigma * phi(r)).exp();
    }
    integral *= h / 3.0;
    let fermi = liouville_exact(sigma, 0.5)?.1;
    if (fermi + integral.ln()).abs() > 1e-10 {
        return Err(Error::domain(format!("F* disagrees with quadrature at sigma {sigma}")));
    }
    let d = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 1..20 {
        let r = k as f64 * 0.05;
        let lap = (phi(r + d) - 2.0 * phi(r) + phi(r - d)) / (d * d) + (phi(r + d) - phi(r - d)) / (2.0 * d * r);
        let rhs = (sigma * phi(r)).exp() / integral;
        worst = worst.max((-lap - rhs).abs() / rhs);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanEntry {
    pub sigma: f64,
    pub converged: bool,
    pub max_phi: f64,
    pub fermi: f64,
    pub iterations: usize,
    pub failure: Option<String>,
}

/// Classical solves over ascending `sigmas`, each warm-started from the
/// last converged state.
pub fn threshold_scan(
    disc: &Discretization,
    sigmas: &[f64],
    config: &IterationConfig,
) -> Result<Vec<ScanEntry>> {
    if sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("sigma values must be sorted ascending"));
    }
    let mut out = Vec::with_capacity(sigmas.len());
    let mut last: Option<ClassicalState> = None;
    for &s in sigmas {
        let state = classical_solve_from(disc, s, config, last.as_ref())?;
        out.push(ScanEntry {
            sigma: s,
            converged: state.converged,
            max_phi: state.max_phi(),
            fermi: state.fermi_star,
            iterations: state.iterations,
            failure: state.failure.clone(),
        });
        if state.converged {
            last = Some(state);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    fn disk(level: usize) -> Discretization {
        Discretization::planar(build_disk_mesh(level).unwrap()).unwrap()
    }

    #[test]
    fn liouville_formula_solves_the_pde() {
        for sigma in [PI, 4.0 * PI, 6.0 * PI, 7.5 * PI] {
            let defect = liouville_pde_defect(sigma).unwrap();
            assert!(defect < 1e-6, "sigma {sigma}: defect {defect}");
        }
    }

    #[test]
    fn liouville_values() {
        let (phi, fermi) = liouville_exact(4.0 * PI, 0.0).unwrap();
        assert!((phi - 2f64.ln() / (2.0 * PI)).abs() < 1e-15);
        assert!((fermi + (2.0 * PI).ln()).abs() < 1e-15);
        assert_eq!(liouville_exact(4.0 * PI, 1.0).unwrap().0, 0.0);
        let small = liouville_exact(1e-9, 0.0).unwrap().0;
        assert!((small - 0.25 / PI).abs() < 1e-9);
        assert!((liouville_exact(0.0, 0.0).unwrap().0 - 0.25 / PI).abs() < 1e-16);
        assert!(liouville_exact(8.0 * PI, 0.0).is_err());
        assert!(liouville_exact(-1.0, 0.0).is_err());
    }

    #[test]
    fn sigma_zero_is_uniform() {
        let d = disk(4);
        let s = classical_solve(&d, 0.0, &IterationConfig::default()).unwrap();
        assert!(s.converged);
        let area = d.measure();
        assert!(s.n0.iter().all(|v| (v - 1.0 / area).abs() < 1e-12));
        assert!((s.fermi_star + area.ln()).abs() < 1e-12);
    }

    #[test]
    fn oracle_at_four_pi() {
        let d = disk(5);
        let s = classical_solve(&d, 4.0 * PI, &IterationConfig::default()).unwrap();
        assert!(s.converged);
        let exact = 2f64.ln() / (2.0 * PI);
        let origin = d.mesh().unwrap().nearest_node([0.0, 0.0]);
        assert!((s.phi0[origin] - exact).abs() / exact < 0.01);
        assert!((s.fermi_star + (2.0 * PI).ln()).abs() < 0.02);
        for c in s.invariant_checks(&d) {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn oracle_error_is_second_order() {
        for sigma in [2.0 * PI, 4.0 * PI, 6.0 * PI] {
            let errs: Vec<f64> = (3..=6)
                .map(|level| {
                    let d = disk(level);
                    let s = classical_solve(&d, sigma, &IterationConfig::default()).unwrap();
                    let exact: Vec<f64> = (0..d.num_nodes())
                        .map(|i| {
                            let [x, y] = d.position(i);
                            liouville_exact(sigma, x.hypot(y).min(1.0)).unwrap().0
                        })
                        .collect();
                    let scale = exact.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                    s.phi0.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
                })
                .collect();
            for w in errs.windows(2) {
                let rate = (w[0] / w[1]).log2();
                assert!(rate > 1.7, "sigma {sigma}: errors {errs:?}");
            }
        }
    }

    #[test]
    fn scan_detects_threshold() {
        let d = disk(4);
        let sig: Vec<f64> = [0.0, 2.0, 4.0, 6.0, 7.5, 9.0].iter().map(|v| v * PI).collect();
        let scan = threshold_scan(&d, &sig, &IterationConfig::default()).unwrap();
        assert!((scan[0].max_phi - 0.25 / PI).abs() < 1e-3);
        for w in scan[..5].windows(2) {
            assert!(w[0].converged && w[1].converged);
            assert!(w[1].max_phi > w[0].max_phi);
        }
        assert!(!scan[5].converged);
        assert!(scan[5].failure.is_some());
        assert!(threshold_scan(&d, &[2.0, 1.0], &IterationConfig::default()).is_err());
    }
}
