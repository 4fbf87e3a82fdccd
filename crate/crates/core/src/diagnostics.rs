//! Energy functionals, uniqueness thresholds and semi-classical sweeps.

use std::f64::consts::PI;
use std::thread;

use crate::classical::{classical_solve, ClassicalState};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::quantum::{picard_with_start, IterationConfig, ModelParams, SolutionState};

/// Floor applied to densities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub fisher: f64,
    pub free_energy: f64,
    pub total_energy: f64,
    pub moser_g: f64,
    pub mass: f64,
}

/// `∫|∇√n|²` for the P1 interpolant of the nodal square roots.
pub fn fisher_information(disc: &Discretization, n: &[f64]) -> Result<f64> {
    check_len(disc, n)?;
    if let Some(v) = n.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::domain(format!("Fisher information needs n >= 0, found {v}")));
    }
    let s: Vec<f64> = n.iter().map(|v| v.sqrt()).collect();
    Ok(disc.energy_product(&s, &s))
}

/// `∫n(log n - 1) - (σ/2)∫nΦ` with lumped quadrature.
pub fn free_energy(disc: &Discretization, n: &[f64], phi: &[f64], sigma: f64) -> Result<f64> {
    check_len(disc, n)?;
    check_len(disc, phi)?;
    if let Some(v) = n.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::domain(format!("free energy needs n >= 0, found {v}")));
    }
    let f: Vec<f64> = n
        .iter()
        .zip(phi)
        .map(|(&a, &p)| a * (a.max(LOG_FLOOR).ln() - 1.0) - 0.5 * sigma * a * p)
        .collect();
    Ok(disc.integrate(&f))
}

/// Moser functional `(σ/2)∫|∇Φ|² - log∫e^{σΦ} - 1`.
pub fn moser_functional(disc: &Discretization, phi: &[f64], sigma: f64) -> Result<f64> {
    check_len(disc, phi)?;
    let shift = phi.iter().map(|p| sigma * p).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = phi.iter().map(|p| (sigma * p - shift).exp()).collect();
    let log_int = shift + disc.integrate(&e).ln();
    Ok(0.5 * sigma * disc.energy_product(phi, phi) - log_int - 1.0)
}

/// All energies of `(n, Φ)`; `E_ε = ε²𝓕 + E₀`.
pub fn total_energy(
    disc: &Discretization,
    n: &[f64],
    phi: &[f64],
    params: &ModelParams,
) -> Result<EnergyReport> {
    total_energy_eps(disc, n, phi, params.epsilon, params.sigma)
}

/// As [`total_energy`] with ε allowed to be zero.
pub fn total_energy_eps(
    disc: &Discretization,
    n: &[f64],
    phi: &[f64],
    epsilon: f64,
    sigma: f64,
) -> Result<EnergyReport> {
    let fisher = fisher_information(disc, n)?;
    let free = free_energy(disc, n, phi, sigma)?;
    Ok(EnergyReport {
        fisher,
        free_energy: free,
        total_energy: epsilon * epsilon * fisher + free,
        moser_g: moser_functional(disc, phi, sigma)?,
        mass: disc.integrate(n),
    })
}

fn check_len(disc: &Discretization, f: &[f64]) -> Result<()> {
    if f.len() != disc.num_nodes() {
        return Err(Error::config(format!(
            "field has {} values, discretization has {} nodes",
            f.len(),
            disc.num_nodes()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdReport {
    pub d: u32,
    pub mu_d: f64,
    /// Only defined for d ≥ 3.
    pub gamma_d: Option<f64>,
    pub epsilon: f64,
    pub c0: f64,
    pub c1: f64,
    pub sigma_max: f64,
}

/// Surface measure of the unit sphere in ℝ^d (d = 2, 3).
fn sphere_measure(d: u32) -> f64 {
    match d {
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// `γ_d = ω_{d-1}^{2/d} (d-2) d^{(d-2)/d}`.
fn gamma(d: u32) -> f64 {
    let df = d as f64;
    sphere_measure(d).powf(2.0 / df) * (df - 2.0) * df.powf((df - 2.0) / df)
}

/// Mass bound `μ_d √(c₀² + 2ε²c₁²)` below which the stationary state is unique.
///
/// `c0` and `c1` are constants from the analysis with no known numeric value;
/// callers supply them (1 is a conventional placeholder, not a derived value).
pub fn uniqueness_threshold(d: u32, epsilon: f64, c0: f64, c1: f64) -> Result<ThresholdReport> {
    if d != 2 && d != 3 {
        return Err(Error::domain(format!("dimension must be 2 or 3, got {d}")));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if !(c0 > 0.0 && c1 > 0.0) || !c0.is_finite() || !c1.is_finite() {
        return Err(Error::domain("c0 and c1 must be positive"));
    }
    let (mu_d, gamma_d) = if d == 2 {
        (8.0 * PI, None)
    } else {
        let g = gamma(d);
        (2.0 * g, Some(g))
    };
    Ok(ThresholdReport {
        d,
        mu_d,
        gamma_d,
        epsilon,
        c0,
        c1,
        sigma_max: mu_d * (c0 * c0 + 2.0 * epsilon * epsilon * c1 * c1).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub converged: bool,
    pub fermi_level: f64,
    /// `‖u_ε - σΦ*‖_{L²}`.
    pub u_phi_gap: f64,
    /// `|Φ_ε - Φ*|_{H¹}`.
    pub phi_gap: f64,
    pub fisher: f64,
    pub free_energy: f64,
    pub total_energy: f64,
    pub picard_iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepRecord {
    pub sigma: f64,
    pub classical: ClassicalState,
    /// `𝓕(n₀)` and `E₀(n₀)` of the classical state.
    pub classical_fisher: f64,
    pub classical_free_energy: f64,
    /// Ordered by decreasing ε.
    pub entries: Vec<SweepEntry>,
}

/// Quantum solves for decreasing ε compared against the classical state.
///
/// With `warm_start` each solve starts from the previous converged state and
/// the sweep is sequential; otherwise solves are independent and run on up
/// to `jobs` threads.
pub fn epsilon_sweep(
    disc: &Discretization,
    sigma: f64,
    epsilons: &[f64],
    config: &IterationConfig,
    warm_start: bool,
    jobs: usize,
) -> Result<SweepRecord> {
    if !(sigma < 8.0 * PI) {
        return Err(Error::config("epsilon sweep needs sigma < 8 pi for the classical reference"));
    }
    if epsilons.is_empty() {
        return Err(Error::config("epsilon sweep needs at least one value"));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("epsilon values must be strictly decreasing"));
    }
    let params0 = ModelParams::new(epsilons[0], sigma, disc.domain_kind())?;
    for &e in epsilons {
        params0.with_epsilon(e).validate()?;
    }
    let classical = classical_solve(disc, sigma, config)?;
    if !classical.converged {
        return Err(Error::numerical(format!(
            "classical reference failed at sigma = {sigma}: {}",
            classical.failure.as_deref().unwrap_or("unknown")
        )));
    }
    let classical_fisher = fisher_information(disc, &classical.n0)?;
    let classical_free_energy = free_energy(disc, &classical.n0, &classical.phi0, sigma)?;

    let target: Vec<f64> = classical.phi0.iter().map(|p| sigma * p).collect();
    let entry = |eps: f64, result: Result<SolutionState>| -> SweepEntry {
        match result.and_then(|s| {
            let energies = total_energy_eps(disc, &s.n, &s.phi, eps, sigma)?;
            Ok((s, energies))
        }) {
            Ok((s, energies)) => {
                let du: Vec<f64> = s.u.iter().zip(&target).map(|(a, b)| a - b).collect();
                let dphi: Vec<f64> = s.phi.iter().zip(&classical.phi0).map(|(a, b)| a - b).collect();
                SweepEntry {
                    epsilon: eps,
                    converged: true,
                    fermi_level: s.fermi_level,
                    u_phi_gap: disc.l2(&du),
                    phi_gap: disc.energy_product(&dphi, &dphi).sqrt(),
                    fisher: energies.fisher,
                    free_energy: energies.free_energy,
                    total_energy: energies.total_energy,
                    picard_iterations: s.picard_iterations,
                    error: None,
                }
            }
            Err(e) => SweepEntry {
                epsilon: eps,
                converged: false,
                fermi_level: f64::NAN,
                u_phi_gap: f64::NAN,
                phi_gap: f64::NAN,
                fisher: f64::NAN,
                free_energy: f64::NAN,
                total_energy: f64::NAN,
                picard_iterations: 0,
                error: Some(e.to_string()),
            },
        }
    };

    let entries = if warm_start || jobs <= 1 {
        let mut out = Vec::with_capacity(epsilons.len());
        let mut last: Option<SolutionState> = None;
        for &eps in epsilons {
            let start = if warm_start { last.as_ref() } else { None };
            let result = picard_with_start(disc, &params0.with_epsilon(eps), config, start);
            if let Ok(s) = &result {
                last = Some(s.clone());
            }
            out.push(entry(eps, result));
        }
        out
    } else {
        let mut results: Vec<Option<Result<SolutionState>>> = (0..epsilons.len()).map(|_| None).collect();
        for chunk in (0..epsilons.len()).collect::<Vec<_>>().chunks(jobs) {
            let solved: Vec<(usize, Result<SolutionState>)> = thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&k| {
                        let params = params0.with_epsilon(epsilons[k]);
                        scope.spawn(move || (k, picard_with_start(disc, &params, config, None)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
            });
            for (k, r) in solved {
                results[k] = Some(r);
            }
        }
        results
            .into_iter()
            .zip(epsilons)
            .map(|(r, &eps)| entry(eps, r.expect("every value solved")))
            .collect()
    };

    Ok(SweepRecord {
        sigma,
        classical,
        classical_fisher,
        classical_free_energy,
        entries,
    })
}
