//! P1 element kernels and assembly.
//!
//! Every element carries constant basis gradients and one quadrature weight
//! per vertex. Triangles use `area / 3` weights; radial intervals use the
//! annulus volumes of their two halves, so the same kernels serve both the
//! 2D and the radial discretization.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, DEGENERATE_AREA};
use crate::sparse::CsrMatrix;

/// One simplex with constant basis gradients and vertex quadrature weights.
/// Intervals use the first two slots; the unused slot has zero weight and
/// gradient.
#[derive(Clone, Debug)]
pub(crate) struct Element {
    pub verts: [usize; 3],
    pub nv: usize,
    pub grads: [[f64; 2]; 3],
    pub weights: [f64; 3],
}

impl Element {
    pub fn volume(&self) -> f64 {
        self.weights[..self.nv].iter().sum()
    }

    /// Constant gradient of the interpolant of `u` on this element.
    pub fn gradient(&self, u: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..self.nv {
            let v = u[self.verts[k]];
            g[0] += v * self.grads[k][0];
            g[1] += v * self.grads[k][1];
        }
        g
    }

    pub fn triangle(mesh: &Mesh, t: usize) -> Result<Self> {
        let verts = mesh.triangles()[t];
        let p = mesh.nodes();
        let area = mesh.signed_area(t);
        if !(area >= DEGENERATE_AREA) {
            return Err(Error::numerical(format!(
                "degenerate triangle {t} (signed area {area:e})"
            )));
        }
        let inv = 1.0 / (2.0 * area);
        let mut grads = [[0.0; 2]; 3];
        for k in 0..3 {
            let pj = p[verts[(k + 1) % 3]];
            let pk = p[verts[(k + 2) % 3]];
            grads[k] = [(pj[1] - pk[1]) * inv, (pk[0] - pj[0]) * inv];
        }
        Ok(Element {
            verts,
            nv: 3,
            grads,
            weights: [area / 3.0; 3],
        })
    }

    /// Interval `[r0, r1]` between nodes `i` and `i + 1` with the 2πr measure.
    pub fn annulus(i: usize, r0: f64, r1: f64) -> Result<Self> {
        let h = r1 - r0;
        if !(h > 0.0) {
            return Err(Error::numerical(format!("non-increasing radial nodes at {i}")));
        }
        let rm = 0.5 * (r0 + r1);
        let pi = std::f64::consts::PI;
        Ok(Element {
            verts: [i, i + 1, i + 1],
            nv: 2,
            grads: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]],
            weights: [pi * (rm * rm - r0 * r0), pi * (r1 * r1 - rm * rm), 0.0],
        })
    }
}

pub(crate) fn mesh_elements(mesh: &Mesh) -> Result<Vec<Element>> {
    (0..mesh.num_triangles()).map(|t| Element::triangle(mesh, t)).collect()
}

pub(crate) fn stiffness_from_elements(n: usize, elements: &[Element]) -> CsrMatrix {
    let mut trip = Vec::with_capacity(elements.len() * 9);
    for e in elements {
        let vol = e.volume();
        for a in 0..e.nv {
            for b in 0..e.nv {
                let g = e.grads[a][0] * e.grads[b][0] + e.grads[a][1] * e.grads[b][1];
                trip.push((e.verts[a], e.verts[b], vol * g));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

pub(crate) fn lumped_from_elements(n: usize, elements: &[Element]) -> Vec<f64> {
    let mut m = vec![0.0; n];
    for e in elements {
        for k in 0..e.nv {
            m[e.verts[k]] += e.weights[k];
        }
    }
    m
}

pub(crate) fn gradsq_from_elements(n: usize, elements: &[Element], u: &[f64]) -> Vec<f64> {
    let mut load = vec![0.0; n];
    for e in elements {
        let g = e.gradient(u);
        let g2 = g[0] * g[0] + g[1] * g[1];
        for k in 0..e.nv {
            load[e.verts[k]] += e.weights[k] * g2;
        }
    }
    load
}

fn check_field(mesh: &Mesh, f: &[f64], what: &str) -> Result<()> {
    if f.len() != mesh.num_nodes() {
        return Err(Error::config(format!(
            "{what} has {} values but the mesh has {} nodes",
            f.len(),
            mesh.num_nodes()
        )));
    }
    Ok(())
}

/// P1 stiffness matrix `K_ab = Σ_T area(T) ∇φ_a·∇φ_b`.
pub fn assemble_stiffness(mesh: &Mesh) -> Result<CsrMatrix> {
    Ok(stiffness_from_elements(mesh.num_nodes(), &mesh_elements(mesh)?))
}

/// Lumped (diagonal, `area / 3` per vertex) or consistent P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh, lumped: bool) -> Result<CsrMatrix> {
    let elements = mesh_elements(mesh)?;
    if lumped {
        return Ok(CsrMatrix::from_diagonal(&lumped_from_elements(mesh.num_nodes(), &elements)));
    }
    let mut trip = Vec::with_capacity(elements.len() * 9);
    for e in &elements {
        let area = e.volume();
        for a in 0..3 {
            for b in 0..3 {
                let w = if a == b { 2.0 } else { 1.0 };
                trip.push((e.verts[a], e.verts[b], area / 12.0 * w));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), &trip))
}

/// Diagonal of the lumped mass matrix.
pub fn lumped_mass(mesh: &Mesh) -> Result<Vec<f64>> {
    Ok(lumped_from_elements(mesh.num_nodes(), &mesh_elements(mesh)?))
}

/// Load vector of `∫|∇u|² φ_a` with vertex quadrature.
pub fn assemble_gradsq_load(mesh: &Mesh, u: &[f64]) -> Result<Vec<f64>> {
    check_field(mesh, u, "u")?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite value in u"));
    }
    Ok(gradsq_from_elements(mesh.num_nodes(), &mesh_elements(mesh)?, u))
}

/// Symmetric elimination of the rows and columns in `nodes`: the constrained
/// unknowns are forced to `value` and the free equations keep their solution.
pub fn apply_dirichlet(
    matrix: &CsrMatrix,
    rhs: &[f64],
    nodes: &[usize],
    value: f64,
) -> (CsrMatrix, Vec<f64>) {
    if nodes.is_empty() {
        return (matrix.clone(), rhs.to_vec());
    }
    let n = matrix.nrows();
    let mut fixed = vec![false; n];
    for &i in nodes {
        fixed[i] = true;
    }
    let mut b = rhs.to_vec();
    let mut trip = Vec::with_capacity(matrix.nnz());
    for i in 0..n {
        let (cols, vals) = matrix.row(i);
        if fixed[i] {
            trip.push((i, i, 1.0));
            b[i] = value;
            continue;
        }
        for (&j, &v) in cols.iter().zip(vals) {
            if fixed[j] {
                b[i] -= v * value;
            } else {
                trip.push((i, j, v));
            }
        }
    }
    (CsrMatrix::from_triplets(n, n, &trip), b)
}

/// Vertex quadrature `Σ_T area(T)/3 Σ_{v∈T} f_v`; exact for P1 fields.
pub fn integrate(mesh: &Mesh, f: &[f64]) -> Result<f64> {
    check_field(mesh, f, "field")?;
    let m = lumped_mass(mesh)?;
    Ok(m.iter().zip(f).map(|(a, b)| a * b).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub h1_semi: f64,
}

pub(crate) fn norms_with(stiffness: &CsrMatrix, lumped: &[f64], f: &[f64]) -> Norms {
    let l1 = lumped.iter().zip(f).map(|(m, v)| m * v.abs()).sum();
    let l2 = lumped.iter().zip(f).map(|(m, v)| m * v * v).sum::<f64>().sqrt();
    let linf = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let kf = stiffness.matvec(f);
    let h1 = kf.iter().zip(f).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
    Norms {
        l1,
        l2,
        linf,
        h1_semi: h1,
    }
}

/// L¹, L² (nodal quadrature), L∞ and H¹-seminorm of a nodal field.
pub fn norms(mesh: &Mesh, f: &[f64]) -> Result<Norms> {
    check_field(mesh, f, "field")?;
    let elements = mesh_elements(mesh)?;
    let k = stiffness_from_elements(mesh.num_nodes(), &elements);
    let m = lumped_from_elements(mesh.num_nodes(), &elements);
    Ok(norms_with(&k, &m, f))
}
