//! Assembled operators shared by the nonlinear solvers.
//!
//! A [`Discretization`] is either a P1 triangulation or a radial grid on the
//! unit disk. Both expose the same stiffness matrix, lumped mass, vertex
//! quadrature of `|∇u|²` and its linearization, so the Newton and Picard
//! drivers are written once.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::{self, Element, Norms};
use crate::linsolve::{LuFactor, LuPattern, DEFAULT_LINEAR_TOL};
use crate::mesh::{DomainKind, Mesh};
use crate::sparse::CsrMatrix;

/// Nodes `0 = r_0 < r_1 < … < r_{N-1} = 1` on the unit radius.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    r: Vec<f64>,
    grading: f64,
}

impl RadialGrid {
    /// `points` nodes with `r(s) = sinh(βs)/sinh(β)` for `s` uniform in `[0, 1]`;
    /// `grading = β = 0` is the uniform grid. Larger β clusters nodes near
    /// the origin.
    pub fn new(points: usize, grading: f64) -> Result<Self> {
        if points < 2 {
            return Err(Error::config("radial grid needs at least two points"));
        }
        if !(grading >= 0.0) || !grading.is_finite() {
            return Err(Error::config(format!("radial grading must be >= 0, got {grading}")));
        }
        let last = (points - 1) as f64;
        let mut r: Vec<f64> = (0..points)
            .map(|i| {
                let s = i as f64 / last;
                if grading == 0.0 {
                    s
                } else {
                    (grading * s).sinh() / grading.sinh()
                }
            })
            .collect();
        r[0] = 0.0;
        r[points - 1] = 1.0;
        Ok(RadialGrid { r, grading })
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn min_spacing(&self) -> f64 {
        self.r.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub enum Geometry {
    Planar(Mesh),
    Radial(RadialGrid),
}

#[derive(Clone)]
pub struct Discretization {
    geometry: Geometry,
    elements: Vec<Element>,
    stiffness: CsrMatrix,
    lumped: Vec<f64>,
    dirichlet: Vec<usize>,
    is_dirichlet: Vec<bool>,
    // positions of (verts[a], verts[b]) in the stiffness value array
    element_slots: Vec<[usize; 9]>,
    lu_pattern: LuPattern,
}

impl std::fmt::Debug for Discretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discretization")
            .field("geometry", &self.kind_label())
            .field("nodes", &self.num_nodes())
            .finish()
    }
}

impl Discretization {
    pub fn planar(mesh: Mesh) -> Result<Self> {
        let elements = fem::mesh_elements(&mesh)?;
        let dirichlet = mesh.boundary_nodes();
        Self::build(Geometry::Planar(mesh), elements, dirichlet)
    }

    pub fn radial(grid: RadialGrid) -> Result<Self> {
        let r = grid.radii();
        let elements = r
            .windows(2)
            .enumerate()
            .map(|(i, w)| Element::annulus(i, w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        let dirichlet = vec![r.len() - 1];
        Self::build(Geometry::Radial(grid), elements, dirichlet)
    }

    fn build(geometry: Geometry, elements: Vec<Element>, dirichlet: Vec<usize>) -> Result<Self> {
        let n = match &geometry {
            Geometry::Planar(m) => m.num_nodes(),
            Geometry::Radial(g) => g.len(),
        };
        let stiffness = fem::stiffness_from_elements(n, &elements);
        let lumped = fem::lumped_from_elements(n, &elements);
        let mut is_dirichlet = vec![false; n];
        for &i in &dirichlet {
            is_dirichlet[i] = true;
        }
        let element_slots = elements
            .iter()
            .map(|e| {
                let mut slots = [0usize; 9];
                for a in 0..e.nv {
                    for b in 0..e.nv {
                        slots[a * 3 + b] = stiffness
                            .position(e.verts[a], e.verts[b])
                            .expect("element coupling missing from stiffness pattern");
                    }
                }
                slots
            })
            .collect();
        let lu_pattern = LuPattern::new(&stiffness)?;
        Ok(Discretization {
            geometry,
            elements,
            stiffness,
            lumped,
            dirichlet,
            is_dirichlet,
            element_slots,
            lu_pattern,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn mesh(&self) -> Option<&Mesh> {
        match &self.geometry {
            Geometry::Planar(m) => Some(m),
            Geometry::Radial(_) => None,
        }
    }

    pub fn radial_grid(&self) -> Option<&RadialGrid> {
        match &self.geometry {
            Geometry::Radial(g) => Some(g),
            Geometry::Planar(_) => None,
        }
    }

    pub fn domain_kind(&self) -> DomainKind {
        match &self.geometry {
            Geometry::Planar(m) => m.kind(),
            Geometry::Radial(_) => DomainKind::Disk,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match &self.geometry {
            Geometry::Planar(_) => "fem2d",
            Geometry::Radial(_) => "radial",
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.lumped.len()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.is_dirichlet[i]
    }

    pub(crate) fn lu_pattern(&self) -> &LuPattern {
        &self.lu_pattern
    }

    /// Planar coordinates of node `i`; radial nodes sit on the positive x-axis.
    pub fn position(&self, i: usize) -> [f64; 2] {
        match &self.geometry {
            Geometry::Planar(m) => m.nodes()[i],
            Geometry::Radial(g) => [g.radii()[i], 0.0],
        }
    }

    /// Largest element diameter (radial: largest spacing).
    pub fn h_max(&self) -> f64 {
        match &self.geometry {
            Geometry::Planar(m) => m.h_max(),
            Geometry::Radial(g) => g.radii().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
        }
    }

    /// True when the discrete maximum principle is guaranteed (no obtuse
    /// triangles; radial grids always qualify).
    pub fn is_nonobtuse(&self) -> bool {
        match &self.geometry {
            Geometry::Planar(m) => !m.has_obtuse_triangle(),
            Geometry::Radial(_) => true,
        }
    }

    /// Measure of the discrete domain, `Σ m_a`.
    pub fn measure(&self) -> f64 {
        self.lumped.iter().sum()
    }

    /// Lumped quadrature `Σ m_a f_a`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.lumped.iter().zip(f).map(|(m, v)| m * v).sum()
    }

    pub fn norms(&self, f: &[f64]) -> Norms {
        fem::norms_with(&self.stiffness, &self.lumped, f)
    }

    /// Discrete L² norm with the lumped quadrature.
    pub fn l2(&self, f: &[f64]) -> f64 {
        self.integrate(&f.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
    }

    /// `fᵀ K g`.
    pub fn energy_product(&self, f: &[f64], g: &[f64]) -> f64 {
        self.stiffness.matvec(g).iter().zip(f).map(|(a, b)| a * b).sum()
    }

    /// Vertex quadrature of `|∇u|² φ_a`.
    pub fn gradsq_load(&self, u: &[f64]) -> Vec<f64> {
        fem::gradsq_from_elements(self.num_nodes(), &self.elements, u)
    }

    /// `B(u)` with `B(u) δ = Σ_T w_a(T) (∇u·∇δ)_T`, so the derivative of the
    /// gradient load is `2 B(u)`. Shares the stiffness sparsity pattern.
    pub fn gradsq_jacobian(&self, u: &[f64]) -> CsrMatrix {
        let mut values = vec![0.0; self.stiffness.nnz()];
        for (e, slots) in self.elements.iter().zip(&self.element_slots) {
            let g = e.gradient(u);
            for a in 0..e.nv {
                for b in 0..e.nv {
                    let gb = g[0] * e.grads[b][0] + g[1] * e.grads[b][1];
                    values[slots[a * 3 + b]] += e.weights[a] * gb;
                }
            }
        }
        self.stiffness.with_values(values)
    }

    /// Factors the Dirichlet Poisson operator `K Φ = load`, `Φ = 0` on Γ.
    pub fn poisson_solver(&self) -> Result<PoissonSolver> {
        let zero = vec![0.0; self.num_nodes()];
        let (matrix, _) = fem::apply_dirichlet(&self.stiffness, &zero, &self.dirichlet, 0.0);
        let lu = LuFactor::new(&matrix, None)?;
        Ok(PoissonSolver {
            matrix,
            lu,
            is_dirichlet: self.is_dirichlet.clone(),
            lumped: self.lumped.clone(),
        })
    }

    /// Nodal samples of `f(x, y)`.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|i| {
                let [x, y] = self.position(i);
                f(x, y)
            })
            .collect()
    }

    /// Normalized Gaussian density `exp(-|x - c|²/(2s²))` with unit lumped mass.
    /// Radial grids only support centres at the origin.
    pub fn gaussian_density(&self, center: [f64; 2], width: f64) -> Result<Vec<f64>> {
        if !(width > 0.0) {
            return Err(Error::config(format!("bump width must be positive, got {width}")));
        }
        if self.radial_grid().is_some() && (center[0] != 0.0 || center[1] != 0.0) {
            return Err(Error::config("radial grids only support bumps centred at the origin"));
        }
        let g = self.sample(|x, y| {
            let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
            (-d2 / (2.0 * width * width)).exp()
        });
        let total = self.integrate(&g);
        if !(total > 0.0) {
            return Err(Error::numerical("bump has zero mass on this grid"));
        }
        Ok(g.into_iter().map(|v| v / total).collect())
    }
}

/// Factored Dirichlet Poisson operator.
pub struct PoissonSolver {
    matrix: CsrMatrix,
    lu: LuFactor,
    is_dirichlet: Vec<bool>,
    lumped: Vec<f64>,
}

impl PoissonSolver {
    /// Solves `K Φ = load` on free nodes with `Φ = 0` on Γ.
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = load
            .iter()
            .zip(&self.is_dirichlet)
            .map(|(&v, &fixed)| if fixed { 0.0 } else { v })
            .collect();
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; rhs.len()]);
        }
        self.lu.solve_backward_stable(&self.matrix, &rhs, DEFAULT_LINEAR_TOL)
    }

    /// Solves `-ΔΦ = n` with the lumped load `m ∘ n`.
    pub fn solve_density(&self, n: &[f64]) -> Result<Vec<f64>> {
        let load: Vec<f64> = n.iter().zip(&self.lumped).map(|(a, b)| a * b).collect();
        self.solve_load(&load)
    }
}

/// Exact radial Poisson solution `(1 - r²)/(4π)` for a unit mass spread
/// uniformly over the unit disk.
pub fn uniform_disk_potential(r: f64) -> f64 {
    (1.0 - r * r) / (4.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, build_square_mesh};

    #[test]
    fn radial_measure_is_pi() {
        for grading in [0.0, 3.0] {
            let d = Discretization::radial(RadialGrid::new(200, grading).unwrap()).unwrap();
            assert!((d.measure() - PI).abs() < 1e-13);
        }
    }

    #[test]
    fn graded_grid_clusters_near_origin() {
        let g = RadialGrid::new(1000, 5.0).unwrap();
        let r = g.radii();
        assert!(r[1] - r[0] < 0.1 * (r[999] - r[998]));
        assert!(r.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn radial_stiffness_annihilates_constants() {
        let d = Discretization::radial(RadialGrid::new(100, 2.0).unwrap()).unwrap();
        let worst = d.stiffness().row_sums().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-10);
        assert!(d.stiffness().symmetry_defect() < 1e-12);
    }

    #[test]
    fn radial_poisson_uniform_density() {
        for points in [128, 512] {
            let d = Discretization::radial(RadialGrid::new(points, 0.0).unwrap()).unwrap();
            let p = d.poisson_solver().unwrap();
            let n = vec![1.0 / d.measure(); d.num_nodes()];
            let phi = p.solve_density(&n).unwrap();
            let err = (phi[0] - uniform_disk_potential(0.0)).abs();
            assert!(err < 1e-4, "points {points}: error {err}");
        }
    }

    #[test]
    fn gradsq_jacobian_is_half_derivative_of_load() {
        // finite differences of the load against 2 B(u)
        for d in [
            Discretization::planar(build_square_mesh(4).unwrap()).unwrap(),
            Discretization::planar(build_disk_mesh(2).unwrap()).unwrap(),
            Discretization::radial(RadialGrid::new(30, 1.5).unwrap()).unwrap(),
        ] {
            let u = d.sample(|x, y| (2.0 * x).sin() + x * y + 0.3 * y * y + x * x);
            let b = d.gradsq_jacobian(&u);
            let dir = d.sample(|x, y| (x - 0.2).cos() * (1.0 + y));
            let bd = b.matvec(&dir);
            let h = 1e-6;
            let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
            let lp = d.gradsq_load(&up);
            let lm = d.gradsq_load(&um);
            for i in 0..d.num_nodes() {
                let fd = (lp[i] - lm[i]) / (2.0 * h);
                assert!((fd - 2.0 * bd[i]).abs() < 1e-6 * (1.0 + fd.abs()), "node {i}: {fd} vs {}", 2.0 * bd[i]);
            }
        }
    }

    #[test]
    fn gaussian_density_has_unit_mass() {
        let d = Discretization::planar(build_disk_mesh(3).unwrap()).unwrap();
        let g = d.gaussian_density([0.3, 0.0], 0.1).unwrap();
        assert!((d.integrate(&g) - 1.0).abs() < 1e-14);
        let peak = (0..g.len()).max_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap();
        let p = d.position(peak);
        assert!((p[0] - 0.3).abs() < 0.1 && p[1].abs() < 0.1);
    }
}
