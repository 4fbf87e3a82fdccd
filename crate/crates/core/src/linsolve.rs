//! Linear solvers: Jacobi-preconditioned conjugate gradients for SPD systems
//! and sparse LU (faer) for everything else.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::MatMut;

use crate::error::{Error, Result};
use crate::sparse::{norm2, CsrMatrix};

/// Default relative residual tolerance for linear solves.
pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;

/// Solves `a x = b` to relative residual `tol`.
///
/// `symmetric` selects preconditioned CG; otherwise a sparse LU with up to
/// three steps of iterative refinement is used. A zero right-hand side
/// returns the zero vector.
pub fn solve_linear(a: &CsrMatrix, b: &[f64], symmetric: bool, tol: f64) -> Result<Vec<f64>> {
    check_square(a, b)?;
    if !(tol > 0.0) {
        return Err(Error::config(format!("linear tolerance must be positive, got {tol}")));
    }
    if b.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; b.len()]);
    }
    if symmetric {
        let max_iter = 10 * a.nrows() + 100;
        pcg(a, b, None, tol, max_iter)
    } else {
        let lu = LuFactor::new(a, None)?;
        lu.solve_refined(a, b, tol)
    }
}

fn check_square(a: &CsrMatrix, b: &[f64]) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::config(format!(
            "linear system shape mismatch: {}x{} matrix, rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(())
}

pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

/// Conjugate gradients with diagonal (Jacobi) preconditioning.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    check_square(a, b)?;
    let n = b.len();
    let nb = norm2(b);
    if nb == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r) / nb;
    for _ in 0..max_iter {
        if res <= tol {
            return Ok(x);
        }
        a.matvec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::numerical(format!(
                "conjugate gradients broke down (p'Ap = {pap:e}); matrix not positive definite"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / nb;
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // recompute the true residual before giving up
    let true_res = relative_residual(a, &x, b);
    if true_res <= tol {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        what: "conjugate gradients",
        iterations: max_iter,
        residual: true_res,
        history: vec![true_res],
    })
}

/// Symbolic LU analysis that can be reused for matrices sharing a pattern.
#[derive(Clone)]
pub struct LuPattern {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: SymbolicLu<usize>,
}

impl LuPattern {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let sym = transposed_symbolic(a);
        let symbolic = SymbolicLu::try_new(sym)
            .map_err(|e| Error::numerical(format!("symbolic LU failed: {e:?}")))?;
        Ok(LuPattern {
            row_ptr: a.row_ptr().to_vec(),
            col_idx: a.col_idx().to_vec(),
            symbolic,
        })
    }

    pub fn matches(&self, a: &CsrMatrix) -> bool {
        self.row_ptr == a.row_ptr() && self.col_idx == a.col_idx()
    }
}

/// The CSR arrays of `a` read as a CSC matrix describe `aᵀ`.
fn transposed_symbolic(a: &CsrMatrix) -> SymbolicSparseColMatRef<'_, usize> {
    SymbolicSparseColMatRef::new_checked(a.ncols(), a.nrows(), a.row_ptr(), None, a.col_idx())
}

/// Numeric LU factorization of a square CSR matrix.
pub struct LuFactor {
    lu: Lu<usize, f64>,
    n: usize,
}

impl LuFactor {
    /// Factors `a`, reusing `pattern` when it matches.
    pub fn new(a: &CsrMatrix, pattern: Option<&LuPattern>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::config("LU needs a square matrix"));
        }
        if a.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("matrix has non-finite entries"));
        }
        let symbolic = match pattern {
            Some(p) if p.matches(a) => p.symbolic.clone(),
            _ => LuPattern::new(a)?.symbolic,
        };
        let at = SparseColMatRef::new(transposed_symbolic(a), a.values());
        let lu = Lu::try_new_with_symbolic(symbolic, at)
            .map_err(|e| Error::numerical(format!("LU factorization failed: {e:?}")))?;
        Ok(LuFactor { lu, n: a.nrows() })
    }

    /// Solves `a x = b` for the factored `a`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        // the factorization is of aᵀ, so a transpose solve yields a⁻¹ b
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(&mut x, self.n, 1));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("LU solve produced non-finite values (singular matrix)"));
        }
        Ok(x)
    }

    /// Solve followed by iterative refinement until the relative residual is
    /// at most `tol`.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.refine(a, b, tol, false)
    }

    /// Like [`LuFactor::solve_refined`], but when the relative residual
    /// stagnates at roundoff level the solution is accepted if the normwise
    /// backward error `‖b - Ax‖ / (‖|A||x|‖ + ‖b‖)` is at most `tol`. Needed
    /// for badly row-scaled operators such as the radial stiffness.
    pub fn solve_backward_stable(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.refine(a, b, tol, true)
    }

    fn refine(&self, a: &CsrMatrix, b: &[f64], tol: f64, backward: bool) -> Result<Vec<f64>> {
        let mut x = self.solve(b)?;
        let nb = norm2(b);
        if nb == 0.0 {
            return Ok(x);
        }
        let mut res = f64::INFINITY;
        let mut best = (f64::INFINITY, x.clone());
        for step in 0..=4 {
            let ax = a.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let rn = norm2(&r);
            res = rn / nb;
            if res <= tol {
                return Ok(x);
            }
            if backward && rn < best.0 {
                best = (rn, x.clone());
            }
            if step == 4 {
                break;
            }
            let dx = self.solve(&r)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        if backward {
            let (rn, xb) = best;
            let scale = norm2(&a.abs_matvec(&xb)) + nb;
            if rn / scale <= tol {
                return Ok(xb);
            }
        }
        Err(Error::NonConvergence {
            what: "sparse LU with iterative refinement",
            iterations: 4,
            residual: res,
            history: vec![res],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let a = CsrMatrix::identity(5);
        let b = [1.0, -2.0, 3.5, 0.0, 7.0];
        for sym in [true, false] {
            let x = solve_linear(&a, &b, sym, 1e-12).unwrap();
            assert_eq!(x, b);
        }
    }

    #[test]
    fn two_by_two_hand_solution() {
        // [[2,1],[1,3]] x = (1,2): x = (0.2, 0.6) by elimination
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        for sym in [true, false] {
            let x = solve_linear(&a, &[1.0, 2.0], sym, 1e-14).unwrap();
            assert!((x[0] - 0.2).abs() < 1e-14 && (x[1] - 0.6).abs() < 1e-14, "{x:?}");
        }
    }

    #[test]
    fn nonsymmetric_lu() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, -2.0), (1, 1, 5.0), (1, 2, 1.0), (2, 1, 3.0), (2, 2, 6.0)],
        );
        let x_true = [1.0, -1.0, 2.0];
        let b = a.matvec(&x_true);
        let x = solve_linear(&a, &b, false, 1e-14).unwrap();
        for (p, q) in x.iter().zip(&x_true) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.5)]);
        assert_eq!(solve_linear(&a, &[0.0, 0.0], false, 1e-10).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn cg_rejects_indefinite() {
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(solve_linear(&a, &[1.0, 1.0], true, 1e-10).is_err());
    }

    #[test]
    fn singular_lu_is_an_error() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(solve_linear(&a, &[1.0, 0.0], false, 1e-10).is_err());
    }

    #[test]
    fn backward_stable_accepts_badly_scaled_rows() {
        // rows scaled by 1e12 and 1: well conditioned after scaling
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1e12), (0, 1, 1e11), (1, 0, 1.0), (1, 1, 3.0)]);
        let b = a.matvec(&[0.3, -0.7]);
        let lu = LuFactor::new(&a, None).unwrap();
        let x = lu.solve_backward_stable(&a, &b, 1e-12).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-12 && (x[1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn pattern_reuse() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let p = LuPattern::new(&a).unwrap();
        let b2 = a.with_values(vec![1.0, 0.0, 0.0, 2.0]);
        let lu = LuFactor::new(&b2, Some(&p)).unwrap();
        assert_eq!(lu.solve(&[1.0, 1.0]).unwrap(), vec![1.0, 0.5]);
    }
}
