//! Quasi-potential / Poisson system with the Bohm correction.
//!
//! Given a potential `w`, the quasi potential solves
//! `-(ε²/2)Δu + u = (ε²/4)|∇u|² + σw` with homogeneous Neumann data; the
//! density is `n = e^u / ∫e^u` and the next potential solves `-ΔΦ = n` with
//! `Φ = 0` on Γ. The outer map `w ↦ Φ` is iterated with damping.
//!
//! The Newton solve works on `u` directly. An equivalent route substitutes
//! `s = e^{u/2}` and solves the linear-in-`s` form `-ε²Δs + (u - σw)s = 0`;
//! it is not used here but the residual of that form is reported by
//! [`residual_original_system`].

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;

use crate::discretization::{Discretization, PoissonSolver};
use crate::error::{Error, Result};
use crate::linsolve::LuFactor;
use crate::mesh::DomainKind;
use crate::sparse::norm2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Scaled Planck constant ε > 0.
    pub epsilon: f64,
    /// Signed mass σ; positive values are self-attracting.
    pub sigma: f64,
    pub domain: DomainKind,
}

impl ModelParams {
    pub fn new(epsilon: f64, sigma: f64, domain: DomainKind) -> Result<Self> {
        let p = ModelParams {
            epsilon,
            sigma,
            domain,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !self.sigma.is_finite() {
            return Err(Error::config("sigma must be finite"));
        }
        Ok(())
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        ModelParams { sigma, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        ModelParams { epsilon, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Start from the potential of the uniform density.
    Zero,
    /// Start from the potential of a Gaussian bump.
    Bump,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Zero => "zero",
            InitKind::Bump => "bump",
        }
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(InitKind::Zero),
            "bump" => Ok(InitKind::Bump),
            other => Err(Error::config(format!("unknown init `{other}` (expected `zero` or `bump`)"))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationConfig {
    pub newton_tol: f64,
    pub picard_tol: f64,
    pub max_newton: usize,
    pub max_picard: usize,
    /// Picard relaxation ω in (0, 1].
    pub damping: f64,
    pub line_search_max_halvings: usize,
    pub init: InitKind,
    pub bump_center: [f64; 2],
    /// Fraction of the initial mass placed in the bump; the rest is uniform.
    pub bump_amplitude: f64,
    pub bump_width: f64,
    /// Number of σ stages ramped linearly up to the target (0 = no ramp).
    pub continuation_steps: usize,
    /// Anderson mixing depth for the Picard map; 0 gives plain damped Picard.
    pub anderson_depth: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            newton_tol: 1e-10,
            picard_tol: 1e-8,
            max_newton: 50,
            max_picard: 500,
            damping: 0.5,
            line_search_max_halvings: 30,
            init: InitKind::Zero,
            bump_center: [0.0, 0.0],
            bump_amplitude: 1.0,
            bump_width: 0.1,
            continuation_steps: 0,
            anderson_depth: 5,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) || !(self.picard_tol > 0.0) {
            return Err(Error::config("tolerances must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.max_newton == 0 || self.max_picard == 0 {
            return Err(Error::config("iteration caps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.bump_amplitude) {
            return Err(Error::config(format!(
                "bump_amplitude must lie in [0, 1], got {}",
                self.bump_amplitude
            )));
        }
        if !(self.bump_width > 0.0) {
            return Err(Error::config("bump_width must be positive"));
        }
        Ok(())
    }
}

/// Result of one Newton solve of the quasi-potential equation.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// ‖R‖₂ before the first step and after every accepted step.
    pub residuals: Vec<f64>,
}

/// Discrete weak residual `(ε²/2)Ku + M u - (ε²/4) g(u) - σ M φ` (lumped M).
pub fn quasi_potential_residual(
    disc: &Discretization,
    u: &[f64],
    phi: &[f64],
    params: &ModelParams,
) -> Vec<f64> {
    let e2 = params.epsilon * params.epsilon;
    let ku = disc.stiffness().matvec(u);
    let g = disc.gradsq_load(u);
    let m = disc.lumped_mass();
    (0..u.len())
        .map(|i| 0.5 * e2 * ku[i] + m[i] * u[i] - 0.25 * e2 * g[i] - params.sigma * m[i] * phi[i])
        .collect()
}

/// Size of the individual residual terms; residuals below a small multiple
/// of `f64::EPSILON` times this are at roundoff level.
fn residual_scale(disc: &Discretization, u: &[f64], phi: &[f64], params: &ModelParams) -> f64 {
    let e2 = params.epsilon * params.epsilon;
    let m = disc.lumped_mass();
    let ku = disc.stiffness().matvec(u);
    let g = disc.gradsq_load(u);
    let mu: Vec<f64> = m.iter().zip(u).map(|(a, b)| a * b).collect();
    let mphi: Vec<f64> = m.iter().zip(phi).map(|(a, b)| a * b).collect();
    0.5 * e2 * norm2(&ku) + norm2(&mu) + 0.25 * e2 * norm2(&g) + params.sigma.abs() * norm2(&mphi)
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite value in {what}")))
    }
}

/// Damped Newton for the quasi-potential equation with potential `phi`.
///
/// Stops when `‖R‖₂ ≤ newton_tol·‖R(u_init)‖₂`, or when the residual reaches
/// roundoff level for the current magnitudes (warm starts late in a Picard
/// iteration begin close to that level already).
pub fn solve_quasi_potential(
    disc: &Discretization,
    phi: &[f64],
    params: &ModelParams,
    config: &IterationConfig,
    u_init: &[f64],
) -> Result<NewtonOutcome> {
    let n = disc.num_nodes();
    if phi.len() != n || u_init.len() != n {
        return Err(Error::config("field length does not match the discretization"));
    }
    check_finite(phi, "phi")?;
    check_finite(u_init, "u_init")?;
    let e2 = params.epsilon * params.epsilon;

    let mut u = u_init.to_vec();
    let mut r = quasi_potential_residual(disc, &u, phi, params);
    check_finite(&r, "Newton residual")?;
    let mut rn = norm2(&r);
    let r0 = rn;
    let mut residuals = vec![rn];
    let floor = 1e3 * f64::EPSILON * residual_scale(disc, &u, phi, params);
    let target = if r0 < 1e-14 {
        config.newton_tol.max(floor)
    } else {
        (config.newton_tol * r0).max(floor)
    };
    if rn <= target {
        return Ok(NewtonOutcome {
            u,
            iterations: 0,
            residuals,
        });
    }

    let k = disc.stiffness();
    let m = disc.lumped_mass();
    for it in 1..=config.max_newton {
        let b = disc.gradsq_jacobian(&u);
        let mut jac = k.linear_combination(0.5 * e2, &b, -0.5 * e2);
        jac.add_diagonal(m);
        let lu = LuFactor::new(&jac, Some(disc.lu_pattern()))?;
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = lu.solve(&neg_r)?;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=config.line_search_max_halvings {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let rt = quasi_potential_residual(disc, &trial, phi, params);
            let rtn = norm2(&rt);
            if rtn.is_finite() && rtn < rn {
                accepted = Some((trial, rt, rtn));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, rt, rtn)) => {
                u = trial;
                r = rt;
                rn = rtn;
                residuals.push(rn);
            }
            None => {
                let floor_now = 1e3 * f64::EPSILON * residual_scale(disc, &u, phi, params);
                if rn <= 100.0 * floor_now {
                    return Ok(NewtonOutcome {
                        u,
                        iterations: it - 1,
                        residuals,
                    });
                }
                return Err(Error::numerical(format!(
                    "Newton line search failed to reduce the residual {rn:.3e} after {} halvings",
                    config.line_search_max_halvings
                )));
            }
        }
        if rn <= target {
            return Ok(NewtonOutcome {
                u,
                iterations: it,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "quasi-potential Newton iteration",
        iterations: config.max_newton,
        residual: rn,
        history: residuals,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub n: Vec<f64>,
    /// F = log α.
    pub fermi_level: f64,
    /// α = 1 / ∫e^u.
    pub alpha: f64,
}

/// `n = α e^u` with `α = 1/∫e^u`, evaluated with a max shift so large `u`
/// cannot overflow.
pub fn density_from_u(disc: &Discretization, u: &[f64]) -> Result<Density> {
    if u.len() != disc.num_nodes() {
        return Err(Error::config("field length does not match the discretization"));
    }
    check_finite(u, "u")?;
    let shift = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - shift).exp()).collect();
    let s = disc.integrate(&e);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::numerical("normalization integral is not positive"));
    }
    let fermi_level = -shift - s.ln();
    let n = e.into_iter().map(|v| v / s).collect();
    Ok(Density {
        n,
        fermi_level,
        alpha: fermi_level.exp(),
    })
}

/// Converged state of the coupled system.
#[derive(Clone, Debug)]
pub struct SolutionState {
    pub params: ModelParams,
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
    pub n: Vec<f64>,
    pub fermi_level: f64,
    pub alpha: f64,
    pub picard_iterations: usize,
    pub newton_iterations_total: usize,
    pub final_picard_residual: f64,
    pub theta_lower: f64,
    pub theta_upper: f64,
    /// Relative potential change per Picard iteration, all stages.
    pub picard_history: Vec<f64>,
    /// σ and Picard iteration count of every continuation stage.
    pub stages: Vec<(f64, usize)>,
}

/// One named pass/fail invariant with the measured value.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            passed: value <= limit,
            value,
            limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            passed: value >= limit,
            value,
            limit,
        }
    }
}

impl SolutionState {
    /// Mass, positivity, gauge and maximum-principle checks.
    pub fn invariant_checks(&self, disc: &Discretization) -> Vec<Check> {
        let mass = disc.integrate(&self.n);
        let min_n = self.n.iter().copied().fold(f64::INFINITY, f64::min);
        let min_phi = self.phi.iter().copied().fold(f64::INFINITY, f64::min);
        let mp_tol = if disc.is_nonobtuse() {
            1e-12
        } else {
            let max_n = self.n.iter().copied().fold(0.0, f64::max);
            max_n * disc.h_max().powi(2)
        };
        vec![
            Check::at_most("mass", (mass - 1.0).abs(), 1e-12),
            Check::at_least("positivity", min_n, f64::MIN_POSITIVE),
            Check::at_most("fermi_log_alpha", (self.fermi_level - self.alpha.ln()).abs(), 1e-12),
            Check::at_least("max_principle", min_phi, -mp_tol),
        ]
    }
}

/// Initial potential for the Picard iteration.
fn initial_potential(
    disc: &Discretization,
    poisson: &PoissonSolver,
    config: &IterationConfig,
) -> Result<Vec<f64>> {
    let uniform = 1.0 / disc.measure();
    let n: Vec<f64> = match config.init {
        InitKind::Zero => vec![uniform; disc.num_nodes()],
        InitKind::Bump => {
            let g = disc.gaussian_density(config.bump_center, config.bump_width)?;
            let a = config.bump_amplitude;
            g.into_iter().map(|v| (1.0 - a) * uniform + a * v).collect()
        }
    };
    poisson.solve_density(&n)
}

/// Anderson mixing for the fixed-point map `w ↦ H(w)`.
///
/// With residuals `f = H(w) - w`, the next iterate is
/// `w - ΔW γ + ω (f - ΔF γ)` where γ minimises the lumped-mass weighted norm
/// of `f - ΔF γ` over the stored differences. Depth 0 is plain damping.
struct Anderson {
    depth: usize,
    sqrt_mass: Vec<f64>,
    ws: VecDeque<Vec<f64>>,
    fs: VecDeque<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize, mass: &[f64]) -> Self {
        Anderson {
            depth,
            sqrt_mass: mass.iter().map(|m| m.sqrt()).collect(),
            ws: VecDeque::new(),
            fs: VecDeque::new(),
        }
    }

    fn is_active(&self) -> bool {
        self.depth > 0
    }

    fn reset(&mut self) {
        self.ws.clear();
        self.fs.clear();
    }

    fn next(&mut self, w: &[f64], f: &[f64], omega: f64) -> Vec<f64> {
        let plain = || w.iter().zip(f).map(|(a, b)| a + omega * b).collect();
        if self.depth == 0 {
            return plain();
        }
        self.ws.push_back(w.to_vec());
        self.fs.push_back(f.to_vec());
        if self.ws.len() > self.depth + 1 {
            self.ws.pop_front();
            self.fs.pop_front();
        }
        let k = self.ws.len() - 1;
        if k == 0 {
            return plain();
        }
        let n = w.len();
        let df = Mat::from_fn(n, k, |i, j| (self.fs[j + 1][i] - self.fs[j][i]) * self.sqrt_mass[i]);
        let rhs = Mat::from_fn(n, 1, |i, _| f[i] * self.sqrt_mass[i]);
        let gamma = df.col_piv_qr().solve_lstsq(&rhs);
        let gamma: Vec<f64> = (0..k).map(|j| gamma[(j, 0)]).collect();
        if gamma.iter().any(|g| !g.is_finite() || g.abs() > 1e8) {
            self.reset();
            return plain();
        }
        (0..n)
            .map(|i| {
                let mut wi = w[i] + omega * f[i];
                for (j, g) in gamma.iter().enumerate() {
                    let dw = self.ws[j + 1][i] - self.ws[j][i];
                    let dfi = self.fs[j + 1][i] - self.fs[j][i];
                    wi -= g * (dw + omega * dfi);
                }
                wi
            })
            .collect()
    }
}

/// Damped Picard iteration for the fixed-point map `w ↦ Φ`.
pub fn picard_fixed_point(
    disc: &Discretization,
    params: &ModelParams,
    config: &IterationConfig,
) -> Result<SolutionState> {
    picard_with_start(disc, params, config, None)
}

/// As [`picard_fixed_point`], warm-started from `start` (its potential and
/// quasi potential) when given. Continuation then ramps σ from the start's
/// value instead of from 0.
pub fn picard_with_start(
    disc: &Discretization,
    params: &ModelParams,
    config: &IterationConfig,
    start: Option<&SolutionState>,
) -> Result<SolutionState> {
    params.validate()?;
    config.validate()?;
    let poisson = disc.poisson_solver()?;
    let n_nodes = disc.num_nodes();

    let (mut w, mut u, sigma_start) = match start {
        Some(s) => {
            if s.phi.len() != n_nodes {
                return Err(Error::config("warm start does not match the discretization"));
            }
            (s.phi.clone(), s.u.clone(), s.params.sigma)
        }
        None => (initial_potential(disc, &poisson, config)?, vec![0.0; n_nodes], 0.0),
    };

    let stage_sigmas: Vec<f64> = if config.continuation_steps == 0 {
        vec![params.sigma]
    } else {
        let steps = config.continuation_steps;
        (1..=steps)
            .map(|k| sigma_start + (params.sigma - sigma_start) * k as f64 / steps as f64)
            .collect()
    };

    let omega = config.damping;
    let mut history = Vec::new();
    let mut stages = Vec::new();
    let mut newton_total = 0;
    let mut picard_total = 0;
    let mut last: Option<(Density, Vec<f64>)> = None;
    let mut last_change = f64::INFINITY;

    for &sigma in &stage_sigmas {
        let stage_params = params.with_sigma(sigma);
        let mut converged = false;
        let mut stage_iters = 0;
        let mut mixer = Anderson::new(config.anderson_depth, disc.lumped_mass());
        // plain damped step from the last accepted iterate, used when an
        // accelerated iterate cannot be solved for
        let mut fallback: Option<(Vec<f64>, Vec<f64>)> = None;
        for _ in 0..config.max_picard {
            let outcome = match solve_quasi_potential(disc, &w, &stage_params, config, &u) {
                Ok(o) => o,
                Err(e) => match fallback.take() {
                    Some((w_plain, u_prev)) if mixer.is_active() => {
                        mixer.reset();
                        w = w_plain;
                        u = u_prev;
                        solve_quasi_potential(disc, &w, &stage_params, config, &u)?
                    }
                    _ => return Err(e),
                },
            };
            newton_total += outcome.iterations;
            let u_prev = std::mem::replace(&mut u, outcome.u);
            let density = density_from_u(disc, &u)?;
            let phi_new = poisson.solve_density(&density.n)?;
            let w_plain: Vec<f64> = w
                .iter()
                .zip(&phi_new)
                .map(|(a, b)| (1.0 - omega) * a + omega * b)
                .collect();
            let diff: Vec<f64> = w_plain.iter().zip(&w).map(|(a, b)| a - b).collect();
            let norm_next = disc.l2(&w_plain);
            let change = if norm_next < 1e-14 {
                disc.l2(&diff)
            } else {
                disc.l2(&diff) / norm_next
            };
            if !change.is_finite() {
                return Err(Error::numerical("Picard iterate became non-finite"));
            }
            history.push(change);
            stage_iters += 1;
            picard_total += 1;
            if change > 4.0 * last_change {
                mixer.reset();
            }
            last_change = change;
            let residual: Vec<f64> = phi_new.iter().zip(&w).map(|(a, b)| a - b).collect();
            let w_next = mixer.next(&w, &residual, omega);
            fallback = Some((w_plain, u_prev));
            w = w_next;
            last = Some((density, phi_new));
            if change <= config.picard_tol {
                converged = true;
                break;
            }
        }
        stages.push((sigma, stage_iters));
        if !converged {
            return Err(Error::NonConvergence {
                what: "Picard iteration",
                iterations: picard_total,
                residual: last_change,
                history,
            });
        }
    }

    let (density, phi) = last.expect("at least one Picard iteration ran");
    let theta_lower = density.n.iter().copied().fold(f64::INFINITY, f64::min);
    let theta_upper = density.n.iter().copied().fold(0.0, f64::max);
    Ok(SolutionState {
        params: *params,
        u,
        phi,
        n: density.n,
        fermi_level: density.fermi_level,
        alpha: density.alpha,
        picard_iterations: picard_total,
        newton_iterations_total: newton_total,
        final_picard_residual: last_change,
        theta_lower,
        theta_upper,
        picard_history: history,
        stages,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OriginalResiduals {
    /// Density equation in `√n` form, relative to ‖√n‖₂.
    pub r_a: f64,
    /// Quasi Fermi-level equation; zero because F is a constant.
    pub r_b: f64,
    /// Poisson equation on free rows, relative to ‖M n‖₂.
    pub r_c: f64,
}

/// Residuals of the original `(n, F, Φ)` system at a computed state.
pub fn residual_original_system(
    disc: &Discretization,
    state: &SolutionState,
    params: &ModelParams,
) -> OriginalResiduals {
    let e2 = params.epsilon * params.epsilon;
    let m = disc.lumped_mass();
    let s: Vec<f64> = state.n.iter().map(|v| v.sqrt()).collect();
    let ks = disc.stiffness().matvec(&s);
    let ra: Vec<f64> = (0..s.len())
        .map(|i| {
            let ln = state.n[i].max(1e-300).ln();
            e2 * ks[i] + m[i] * (ln - params.sigma * state.phi[i] - state.fermi_level) * s[i]
        })
        .collect();
    let r_a = norm2(&ra) / norm2(&s);

    let kphi = disc.stiffness().matvec(&state.phi);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..s.len() {
        let load = m[i] * state.n[i];
        den += load * load;
        if !disc.is_dirichlet(i) {
            num += (kphi[i] - load).powi(2);
        }
    }
    OriginalResiduals {
        r_a,
        r_b: 0.0,
        r_c: (num / den).sqrt(),
    }
}
