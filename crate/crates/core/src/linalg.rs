//! Dense linear-algebra kernels: Moore–Penrose inverse, consistency of
//! linear systems, positive semidefinite completion of bordered matrices,
//! Gram operators and the extension of a finite jump kernel by one
//! coordinate.
//!
//! Rank decisions are made on singular values relative to the largest one;
//! feasibility is a residual test scaled by `1 + ‖b‖`; positive
//! semidefiniteness is certified by the smallest eigenvalue of the
//! symmetrized matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances shared by all kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Singular values below `rank_rel_cutoff * sigma_max` count as zero.
    pub rank_rel_cutoff: f64,
    /// Feasibility threshold, relative to `1 + ‖b‖`.
    pub feasibility_rel_tol: f64,
    pub sym_tol: f64,
    pub psd_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_rel_cutoff: 1e-12,
            feasibility_rel_tol: 1e-9,
            sym_tol: 1e-10,
            psd_tol: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rank_rel_cutoff", self.rank_rel_cutoff),
            ("feasibility_rel_tol", self.feasibility_rel_tol),
            ("sym_tol", self.sym_tol),
            ("psd_tol", self.psd_tol),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Absolute feasibility threshold for a right-hand side `b`.
    pub fn feasibility_threshold(&self, b: &Vector) -> f64 {
        self.feasibility_rel_tol * (1.0 + b.norm())
    }
}

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(Matrix);

impl PsdMatrix {
    /// Validates symmetry and the eigenvalue floor; stores the exactly
    /// symmetrized matrix.
    pub fn new(m: Matrix, tol: &Tolerances) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "PSD matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m)?;
        let scale = 1.0 + m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > tol.sym_tol * scale {
            return Err(Error::invalid(format!("matrix not symmetric (asymmetry {asym:e})")));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let lmin = min_eigenvalue(&sym);
        if lmin < -tol.psd_tol * scale {
            return Err(Error::invalid(format!(
                "matrix not positive semidefinite (min eigenvalue {lmin:e})"
            )));
        }
        Ok(Self(sym))
    }

    pub fn zeros(d: usize) -> Self {
        Self(Matrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(Matrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }
}

impl AsRef<Matrix> for PsdMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// Smallest eigenvalue of the symmetric part of `m`; zero for an empty matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    // a failed decomposition only happens on non-finite input
    to_faer(&sym)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map(|ev| ev.into_iter().fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN)
}

// nalgebra's SVD is unreliable on rank-deficient input, so decompositions
// go through faer.
fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// A finitely supported kernel on `R^d \ {0}`: points with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteKernel {
    dim: usize,
    points: Vec<Vector>,
    weights: Vec<f64>,
}

impl FiniteKernel {
    pub fn new(dim: usize, points: Vec<Vector>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::invalid(format!(
                "kernel has {} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        for (k, (p, &w)) in points.iter().zip(&weights).enumerate() {
            if p.len() != dim {
                return Err(Error::invalid(format!(
                    "kernel point {k} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!("kernel weight {k} must be positive, got {w}")));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("kernel point {k} has non-finite entries")));
            }
            if p.iter().all(|&x| x == 0.0) {
                return Err(Error::invalid(format!("kernel point {k} is the origin")));
            }
        }
        Ok(Self { dim, points, weights })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, points: Vec::new(), weights: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_k w_k x_k x_kᵀ`.
    pub fn second_moments(&self) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (p, &w) in self.points.iter().zip(&self.weights) {
            out += (p * p.transpose()) * w;
        }
        out
    }
}

fn ensure_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("matrix has non-finite entries"))
    }
}

fn ensure_finite_vec(b: &Vector) -> Result<()> {
    if b.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("vector has non-finite entries"))
    }
}

/// Rank-truncated singular value decomposition `A = U_r S_r V_rᵀ`.
struct TruncatedSvd {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
}

impl TruncatedSvd {
    fn of(a: &Matrix, tol: &Tolerances) -> Result<Self> {
        ensure_finite(a)?;
        let (m, n) = a.shape();
        if m == 0 || n == 0 || a.amax() == 0.0 {
            return Ok(Self { u: Matrix::zeros(m, 0), s: Vec::new(), v: Matrix::zeros(n, 0) });
        }
        let svd = to_faer(a)
            .thin_svd()
            .map_err(|_| Error::invalid("singular value decomposition did not converge"))?;
        let (u, sv, v) = (svd.U(), svd.S().column_vector(), svd.V());
        let smax = (0..sv.nrows()).map(|i| sv[i]).fold(0.0, f64::max);
        let cutoff = tol.rank_rel_cutoff * smax;
        let keep: Vec<usize> = (0..sv.nrows()).filter(|&i| sv[i] > cutoff).collect();
        let u_r = Matrix::from_fn(m, keep.len(), |i, j| u[(i, keep[j])]);
        let v_r = Matrix::from_fn(n, keep.len(), |i, j| v[(i, keep[j])]);
        let s = keep.iter().map(|&i| sv[i]).collect();
        Ok(Self { u: u_r, s, v: v_r })
    }

    fn rank(&self) -> usize {
        self.s.len()
    }

    fn pinv(&self) -> Matrix {
        let mut vs = self.v.clone();
        for (j, s) in self.s.iter().enumerate() {
            vs.column_mut(j).scale_mut(1.0 / s);
        }
        vs * self.u.transpose()
    }

    fn pinv_apply(&self, b: &Vector) -> Vector {
        let mut c = self.u.transpose() * b;
        for (j, s) in self.s.iter().enumerate() {
            c[j] /= s;
        }
        &self.v * c
    }

    /// `‖(I - U_r U_rᵀ) b‖`, the distance of `b` from the range.
    fn range_residual(&self, b: &Vector) -> f64 {
        let proj = &self.u * (self.u.transpose() * b);
        (b - proj).norm()
    }
}

/// Moore–Penrose inverse via a rank-truncated SVD.
pub fn pinv(a: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    Ok(TruncatedSvd::of(a, tol)?.pinv())
}

/// Numerical rank under the relative cutoff.
pub fn rank(a: &Matrix, tol: &Tolerances) -> Result<usize> {
    Ok(TruncatedSvd::of(a, tol)?.rank())
}

/// Outcome of a consistency test for `A x = b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub solvable: bool,
    /// `‖(I - A A†) b‖`.
    pub residual: f64,
}

fn check_rhs(a: &Matrix, b: &Vector) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: matrix has {} rows, right-hand side has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    ensure_finite_vec(b)
}

/// Decides whether `A x = b` has a solution.
pub fn solvable(a: &Matrix, b: &Vector, tol: &Tolerances) -> Result<Feasibility> {
    check_rhs(a, b)?;
    let svd = TruncatedSvd::of(a, tol)?;
    let residual = svd.range_residual(b);
    Ok(Feasibility { solvable: residual <= tol.feasibility_threshold(b), residual })
}

/// Minimal-norm solution `A† b` of a consistent system.
pub fn least_norm(a: &Matrix, b: &Vector, tol: &Tolerances) -> Result<Vector> {
    check_rhs(a, b)?;
    let svd = TruncatedSvd::of(a, tol)?;
    let residual = svd.range_residual(b);
    if residual > tol.feasibility_threshold(b) {
        return Err(Error::Infeasible { residual });
    }
    Ok(svd.pinv_apply(b))
}

/// Smallest admissible corner `c` making `[[A, b], [bᵀ, c]]` positive
/// semidefinite, or `None` when `b` lies outside the range of `A`.
pub fn psd_completion(a: &PsdMatrix, b: &Vector, tol: &Tolerances) -> Result<Option<f64>> {
    check_rhs(a.as_matrix(), b)?;
    let svd = TruncatedSvd::of(a.as_matrix(), tol)?;
    if svd.range_residual(b) > tol.feasibility_threshold(b) {
        return Ok(None);
    }
    Ok(Some(svd.pinv_apply(b).dot(b)))
}

/// The bordered matrix `[[A, b], [bᵀ, c]]`.
pub fn bordered(a: &Matrix, b: &Vector, c: f64) -> Matrix {
    let d = a.nrows();
    let mut out = Matrix::zeros(d + 1, d + 1);
    out.view_mut((0, 0), (d, d)).copy_from(a);
    for i in 0..d {
        out[(i, d)] = b[i];
        out[(d, i)] = b[i];
    }
    out[(d, d)] = c;
    out
}

/// Gram matrix `G_ij = ⟨x_i, x_j⟩` of equal-length vectors.
pub fn gram(vectors: &[Vector]) -> Result<PsdMatrix> {
    let Some(first) = vectors.first() else {
        return Ok(PsdMatrix::zeros(0));
    };
    let len = first.len();
    if let Some((k, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != len) {
        return Err(Error::invalid(format!(
            "ragged input: vector {k} has length {}, expected {len}",
            v.len()
        )));
    }
    for v in vectors {
        ensure_finite_vec(v)?;
    }
    let n = vectors.len();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let ip = vectors[i].dot(&vectors[j]);
            g[(i, j)] = ip;
            g[(j, i)] = ip;
        }
    }
    // Exactly symmetric with nonnegative quadratic form; no further check.
    Ok(PsdMatrix(g))
}

/// Gram matrix of the rows of `m` (i.e. `m mᵀ`).
pub fn gram_of_rows(m: &Matrix) -> PsdMatrix {
    let rows: Vec<Vector> = m.row_iter().map(|r| r.transpose()).collect();
    if rows.is_empty() {
        return PsdMatrix::zeros(0);
    }
    gram(&rows).expect("rows of a matrix share one length")
}

/// A solution pair of `A x + B y = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSolution {
    pub x: Vector,
    pub y: Vector,
}

/// Solves `A x + B y = b` through `(A + B) x = b` with `y = x`.
pub fn split_solve(a: &PsdMatrix, b_mat: &PsdMatrix, b: &Vector, tol: &Tolerances) -> Result<SplitSolution> {
    if a.dim() != b_mat.dim() {
        return Err(Error::invalid(format!(
            "split operands have dimensions {} and {}",
            a.dim(),
            b_mat.dim()
        )));
    }
    let c = a.as_matrix() + b_mat.as_matrix();
    let x = least_norm(&c, b, tol)?;
    Ok(SplitSolution { y: x.clone(), x })
}

/// Extends `K` on `R^d` to `K ∘ ℓ` on `R^{d+1}` with `ℓ(x) = (x, ⟨A†b, x⟩)`,
/// so that the new cross moments equal `b`. `A` must be the second-moment
/// matrix of `K`. Returns `None` when `b` is outside the range of `A`.
pub fn extend_kernel(
    kernel: &FiniteKernel,
    a: &PsdMatrix,
    b: &Vector,
    tol: &Tolerances,
) -> Result<Option<FiniteKernel>> {
    let d = kernel.dim();
    if a.dim() != d || b.len() != d {
        return Err(Error::invalid(format!(
            "kernel dimension {d} does not match matrix {} / vector {}",
            a.dim(),
            b.len()
        )));
    }
    let moments = kernel.second_moments();
    let gap = (&moments - a.as_matrix()).amax();
    if gap > tol.feasibility_rel_tol * (1.0 + a.as_matrix().amax()) {
        return Err(Error::invalid(format!(
            "matrix is not the second-moment matrix of the kernel (gap {gap:e})"
        )));
    }
    let svd = TruncatedSvd::of(a.as_matrix(), tol)?;
    if svd.range_residual(b) > tol.feasibility_threshold(b) {
        return Ok(None);
    }
    let y = svd.pinv_apply(b);
    let points: Vec<Vector> = kernel
        .points()
        .iter()
        .map(|x| {
            let mut p = Vector::zeros(d + 1);
            p.rows_mut(0, d).copy_from(x);
            p[d] = y.dot(x);
            p
        })
        .collect();
    FiniteKernel::new(d + 1, points, kernel.weights().to_vec()).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    fn ones2() -> Matrix {
        m(2, 2, &[1.0, 1.0, 1.0, 1.0])
    }

    /// `(AᵀA + εI)^{-1} Aᵀ` for small ε; converges to A† as ε → 0.
    fn regularized_inverse(a: &Matrix, eps: f64) -> Matrix {
        let n = a.ncols();
        let ata = a.transpose() * a + Matrix::identity(n, n) * eps;
        ata.try_inverse().unwrap() * a.transpose()
    }

    fn penrose_defects(a: &Matrix, p: &Matrix) -> [f64; 4] {
        let ap = a * p;
        let pa = p * a;
        [
            (&ap * a - a).amax(),
            (&pa * p - p).amax(),
            (&ap - ap.transpose()).amax(),
            (&pa - pa.transpose()).amax(),
        ]
    }

    #[test]
    fn pinv_examples() {
        let id = Matrix::identity(2, 2);
        assert_abs_diff_eq!(pinv(&id, &tol()).unwrap(), id, epsilon = 1e-15);

        let p = pinv(&ones2(), &tol()).unwrap();
        assert_abs_diff_eq!(p, m(2, 2, &[0.25; 4]), epsilon = 1e-15);
        for d in penrose_defects(&ones2(), &p) {
            assert!(d < 1e-15);
        }

        let col = m(2, 1, &[3.0, 4.0]);
        let p = pinv(&col, &tol()).unwrap();
        assert_abs_diff_eq!(p, m(1, 2, &[0.12, 0.16]), epsilon = 1e-15);
    }

    #[test]
    fn pinv_matches_regularized_limit() {
        let a = m(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let p = pinv(&a, &tol()).unwrap();
        let reg = regularized_inverse(&a, 1e-7);
        assert_abs_diff_eq!(p, reg, epsilon = 1e-6);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let a = m(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(pinv(&a, &tol()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_of_empty_and_zero() {
        let a = Matrix::zeros(2, 0);
        assert_eq!(pinv(&a, &tol()).unwrap().shape(), (0, 2));
        let z = Matrix::zeros(2, 3);
        assert_eq!(pinv(&z, &tol()).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn solvable_examples() {
        let f = solvable(&Matrix::identity(3, 3), &v(&[1.0, -2.0, 7.0]), &tol()).unwrap();
        assert!(f.solvable);
        assert_eq!(f.residual, 0.0);

        assert!(solvable(&ones2(), &v(&[1.0, 1.0]), &tol()).unwrap().solvable);
        let f = solvable(&ones2(), &v(&[1.0, -1.0]), &tol()).unwrap();
        assert!(!f.solvable);
        assert_abs_diff_eq!(f.residual, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn solvable_dimension_mismatch() {
        let r = solvable(&ones2(), &v(&[1.0]), &tol());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn least_norm_examples() {
        let b = v(&[0.3, -0.7]);
        assert_abs_diff_eq!(least_norm(&Matrix::identity(2, 2), &b, &tol()).unwrap(), b, epsilon = 1e-15);
        assert_abs_diff_eq!(
            least_norm(&ones2(), &v(&[2.0, 2.0]), &tol()).unwrap(),
            v(&[1.0, 1.0]),
            epsilon = 1e-15
        );
        let z = least_norm(&Matrix::zeros(2, 2), &Vector::zeros(2), &tol()).unwrap();
        assert_eq!(z, Vector::zeros(2));
    }

    #[test]
    fn least_norm_infeasible_carries_residual() {
        match least_norm(&ones2(), &v(&[1.0, -1.0]), &tol()) {
            Err(Error::Infeasible { residual }) => assert!(residual > 1.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn psd_completion_examples() {
        let c = psd_completion(&PsdMatrix::identity(2), &v(&[1.0, 0.0]), &tol()).unwrap();
        assert_abs_diff_eq!(c.unwrap(), 1.0, epsilon = 1e-15);

        assert_eq!(psd_completion(&PsdMatrix::zeros(2), &v(&[1.0, 0.0]), &tol()).unwrap(), None);

        let a = PsdMatrix::new(ones2(), &tol()).unwrap();
        let c = psd_completion(&a, &v(&[1.0, 1.0]), &tol()).unwrap();
        assert_abs_diff_eq!(c.unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn psd_matrix_rejects_indefinite_and_asymmetric() {
        assert!(PsdMatrix::new(m(2, 2, &[1.0, 2.0, 2.0, 1.0]), &tol()).is_err());
        assert!(PsdMatrix::new(m(2, 2, &[1.0, 0.5, 0.0, 1.0]), &tol()).is_err());
        assert!(PsdMatrix::new(m(2, 2, &[1.0, 0.0, 0.0, 0.0]), &tol()).is_ok());
    }

    #[test]
    fn gram_examples() {
        let g = gram(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(g.as_matrix(), &Matrix::identity(2, 2));
        let g = gram(&[v(&[1.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        assert_eq!(g.as_matrix(), &ones2());
        let g = gram(&[v(&[0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(g.as_matrix(), &Matrix::zeros(1, 1));
        assert!(gram(&[v(&[1.0]), v(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn split_solve_examples() {
        let id = PsdMatrix::identity(2);
        let s = split_solve(&id, &id, &v(&[2.0, 2.0]), &tol()).unwrap();
        assert_abs_diff_eq!(s.x, v(&[1.0, 1.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(s.y, v(&[1.0, 1.0]), epsilon = 1e-15);

        let s = split_solve(&id, &id, &Vector::zeros(2), &tol()).unwrap();
        assert_eq!(s.x, Vector::zeros(2));

        let a = PsdMatrix::new(m(2, 2, &[1.0, 0.0, 0.0, 0.0]), &tol()).unwrap();
        let b = PsdMatrix::new(m(2, 2, &[0.0, 0.0, 0.0, 1.0]), &tol()).unwrap();
        let s = split_solve(&a, &b, &v(&[1.0, 1.0]), &tol()).unwrap();
        assert_abs_diff_eq!(s.x, v(&[1.0, 1.0]), epsilon = 1e-15);
        let lhs = a.as_matrix() * &s.x + b.as_matrix() * &s.y;
        assert_abs_diff_eq!(lhs, v(&[1.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn split_solve_infeasible() {
        let a = PsdMatrix::new(m(2, 2, &[1.0, 0.0, 0.0, 0.0]), &tol()).unwrap();
        let r = split_solve(&a, &a, &v(&[0.0, 1.0]), &tol());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn extend_kernel_examples() {
        let k = FiniteKernel::new(1, vec![v(&[1.0])], vec![2.0]).unwrap();
        let a = PsdMatrix::new(m(1, 1, &[2.0]), &tol()).unwrap();
        let ext = extend_kernel(&k, &a, &v(&[2.0]), &tol()).unwrap().unwrap();
        assert_abs_diff_eq!(ext.points()[0], v(&[1.0, 1.0]), epsilon = 1e-15);
        assert_eq!(ext.weights(), &[2.0]);

        let empty = FiniteKernel::empty(2);
        let ext = extend_kernel(&empty, &PsdMatrix::zeros(2), &Vector::zeros(2), &tol()).unwrap().unwrap();
        assert!(ext.is_empty());
        assert_eq!(ext.dim(), 3);

        let k = FiniteKernel::new(1, vec![v(&[1.0]), v(&[-1.0])], vec![1.0, 1.0]).unwrap();
        let a = PsdMatrix::new(m(1, 1, &[2.0]), &tol()).unwrap();
        let ext = extend_kernel(&k, &a, &v(&[1.0]), &tol()).unwrap().unwrap();
        assert_abs_diff_eq!(ext.points()[0], v(&[1.0, 0.5]), epsilon = 1e-15);
        assert_abs_diff_eq!(ext.points()[1], v(&[-1.0, -0.5]), epsilon = 1e-15);
        let cross: f64 = ext.points().iter().zip(ext.weights()).map(|(p, w)| w * p[0] * p[1]).sum();
        assert_abs_diff_eq!(cross, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn extend_kernel_errors() {
        let k = FiniteKernel::new(1, vec![v(&[1.0])], vec![2.0]).unwrap();
        let wrong = PsdMatrix::new(m(1, 1, &[3.0]), &tol()).unwrap();
        assert!(matches!(extend_kernel(&k, &wrong, &v(&[1.0]), &tol()), Err(Error::InvalidInput(_))));
        let empty = FiniteKernel::empty(1);
        assert_eq!(extend_kernel(&empty, &PsdMatrix::zeros(1), &v(&[1.0]), &tol()).unwrap(), None);
    }

    #[test]
    fn kernel_rejects_origin() {
        assert!(FiniteKernel::new(2, vec![v(&[0.0, 0.0])], vec![1.0]).is_err());
        assert!(FiniteKernel::new(1, vec![v(&[1.0])], vec![0.0]).is_err());
    }

    fn matrix_strategy(max: usize) -> impl Strategy<Value = Matrix> {
        (1..=max, 1..=max, 0..=max).prop_flat_map(|(r, c, k)| {
            // k = 0: dense; otherwise a product of rank at most k.
            let k = k.min(r).min(c);
            if k == 0 {
                prop::collection::vec(-3.0..3.0f64, r * c)
                    .prop_map(move |d| Matrix::from_row_slice(r, c, &d))
                    .boxed()
            } else {
                (prop::collection::vec(-2.0..2.0f64, r * k), prop::collection::vec(-2.0..2.0f64, k * c))
                    .prop_map(move |(l, rr)| Matrix::from_row_slice(r, k, &l) * Matrix::from_row_slice(k, c, &rr))
                    .boxed()
            }
        })
    }

    fn psd_strategy(d: usize) -> impl Strategy<Value = PsdMatrix> {
        (0..=d + 1).prop_flat_map(move |n| {
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, n), d).prop_map(move |rows| {
                let mat = Matrix::from_fn(d, n, |i, j| rows[i][j]);
                gram_of_rows(&mat)
            })
        })
    }

    proptest! {
        #[test]
        fn penrose_conditions(a in matrix_strategy(20)) {
            let p = pinv(&a, &tol()).unwrap();
            let bound = 1e-10 * (1.0 + a.norm());
            for d in penrose_defects(&a, &p) {
                prop_assert!(d <= bound, "defect {d:e} > {bound:e}");
            }
        }

        #[test]
        fn least_norm_residual_sound(a in matrix_strategy(12), seed in prop::collection::vec(-2.0..2.0f64, 12)) {
            let b = Vector::from_fn(a.nrows(), |i, _| seed[i]);
            let f = solvable(&a, &b, &tol()).unwrap();
            if f.solvable {
                let x = least_norm(&a, &b, &tol()).unwrap();
                let bound = tol().feasibility_threshold(&b) + 1e-13 * a.norm() * x.norm();
                prop_assert!((&a * &x - &b).norm() <= bound);
            }
            // a right-hand side taken from the range is always accepted
            let x0 = Vector::from_fn(a.ncols(), |i, _| seed[i % seed.len()]);
            let b_in = &a * x0;
            prop_assert!(solvable(&a, &b_in, &tol()).unwrap().solvable);
        }

        #[test]
        fn gram_is_psd(vs in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 1..8)) {
            let vs: Vec<Vector> = vs.into_iter().map(Vector::from_vec).collect();
            let g = gram(&vs).unwrap();
            prop_assert!(g.min_eigenvalue() >= -tol().psd_tol * (1.0 + g.as_matrix().amax()));
        }

        #[test]
        fn psd_completion_is_tight(a in psd_strategy(4), x in prop::collection::vec(-1.0..1.0f64, 4), s in 0.0..3.0f64) {
            // b from the range of A keeps the completion feasible
            let b = a.as_matrix() * Vector::from_vec(x);
            let c_min = psd_completion(&a, &b, &tol()).unwrap().expect("range vector");
            let scale = 1.0 + a.as_matrix().amax() + b.amax() + c_min.abs();
            let full = bordered(a.as_matrix(), &b, c_min + s);
            prop_assert!(min_eigenvalue(&full) >= -1e-9 * scale);
            if b.norm() > 1e-3 {
                let below = bordered(a.as_matrix(), &b, c_min - 0.1);
                prop_assert!(min_eigenvalue(&below) < 0.0);
            }
        }

        #[test]
        fn split_agrees_with_sum(a in psd_strategy(3), bm in psd_strategy(3), rhs in prop::collection::vec(-1.0..1.0f64, 3)) {
            let rhs = Vector::from_vec(rhs);
            let sum = a.as_matrix() + bm.as_matrix();
            let direct = solvable(&sum, &rhs, &tol()).unwrap().solvable;
            let split = split_solve(&a, &bm, &rhs, &tol());
            prop_assert_eq!(direct, split.is_ok());
            if let Ok(s) = split {
                let lhs = a.as_matrix() * &s.x + bm.as_matrix() * &s.y;
                // backward-stable bound: conditioning may inflate ‖x‖
                let bound = tol().feasibility_threshold(&rhs) + 1e-13 * sum.norm() * s.x.norm();
                prop_assert!((lhs - &rhs).norm() <= bound);
            }
        }

        #[test]
        fn extension_reproduces_cross_moments(
            pts in prop::collection::vec((prop::collection::vec(-2.0..2.0f64, 3), 0.1..3.0f64), 1..10),
            coef in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            let points: Vec<Vector> = pts.iter().map(|(p, _)| Vector::from_vec(p.clone())).collect();
            let weights: Vec<f64> = pts.iter().map(|(_, w)| *w).collect();
            let k = FiniteKernel::new(3, points, weights).unwrap();
            let a = PsdMatrix::new(k.second_moments(), &tol()).unwrap();
            let b = a.as_matrix() * Vector::from_vec(coef);
            let ext = extend_kernel(&k, &a, &b, &tol()).unwrap().expect("range vector");
            for i in 0..3 {
                let cross: f64 = ext.points().iter().zip(ext.weights()).map(|(p, w)| w * p[i] * p[3]).sum();
                prop_assert!((cross - b[i]).abs() <= 1e-10 * (1.0 + b.amax()));
            }
        }
    }
}
