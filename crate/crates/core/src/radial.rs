//! Radially symmetric solves on the unit disk.

use crate::discretization::{Discretization, RadialGrid};
use crate::error::{Error, Result};
use crate::mesh::DomainKind;
use crate::quantum::{picard_fixed_point, IterationConfig, ModelParams, SolutionState};

pub const MIN_RADIAL_POINTS: usize = 64;

/// A radial solution together with the grid it lives on.
#[derive(Clone, Debug)]
pub struct RadialSolution {
    pub disc: Discretization,
    pub state: SolutionState,
}

impl RadialSolution {
    pub fn radii(&self) -> &[f64] {
        self.disc.radial_grid().expect("radial discretization").radii()
    }
}

/// Solves the coupled system for radial profiles on `r_points` nodes in
/// [0, 1]. `grading` > 0 clusters nodes towards the origin.
pub fn radial_solve(
    params: &ModelParams,
    r_points: usize,
    grading: f64,
    config: &IterationConfig,
) -> Result<RadialSolution> {
    if params.domain != DomainKind::Disk {
        return Err(Error::config("radial mode requires the disk domain"));
    }
    if r_points < MIN_RADIAL_POINTS {
        return Err(Error::config(format!(
            "radial_points must be at least {MIN_RADIAL_POINTS}, got {r_points}"
        )));
    }
    if config.init == crate::quantum::InitKind::Bump && config.bump_center != [0.0, 0.0] {
        return Err(Error::config("radial mode only supports a bump centred at the origin"));
    }
    let disc = Discretization::radial(RadialGrid::new(r_points, grading)?)?;
    let state = picard_fixed_point(&disc, params, config)?;
    Ok(RadialSolution { disc, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_bad_inputs() {
        let cfg = IterationConfig::default();
        let sq = ModelParams::new(0.1, 0.0, DomainKind::Square).unwrap();
        assert!(radial_solve(&sq, 128, 0.0, &cfg).is_err());
        let dk = ModelParams::new(0.1, 0.0, DomainKind::Disk).unwrap();
        assert!(radial_solve(&dk, 32, 0.0, &cfg).is_err());
    }

    #[test]
    fn sigma_zero_profile() {
        let p = ModelParams::new(0.01, 0.0, DomainKind::Disk).unwrap();
        let sol = radial_solve(&p, 512, 0.0, &IterationConfig::default()).unwrap();
        assert!((sol.state.phi[0] - 0.25 / PI).abs() < 1e-4);
        assert!(sol.state.u.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(sol.radii().len(), 512);
    }
}
