//! Small dense linear-algebra helpers shared by the model checks and solvers.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value tolerance used for every rank decision.
pub const RANK_TOL: f64 = 1e-8;

/// Eigenvalues through a real Schur form. The QR iteration is capped and
/// retried on diagonally shifted copies when it stalls (it does on the zero
/// matrix); NaNs are returned if every attempt fails.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let scale = 1.0 + inf_norm(a);
    for shift in [0.0, scale, -0.7 * scale, 2.3 * scale] {
        let shifted = a + DMatrix::identity(n, n) * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 1000 * n) {
            let eig = schur.complex_eigenvalues();
            if eig.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return eig.iter().map(|z| Complex64::new(z.re - shift, z.im)).collect();
            }
        }
    }
    vec![Complex64::new(f64::NAN, f64::NAN); n]
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Numerical rank with tolerance `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Rank of the complex matrix `[A - λI; C]`, through its real embedding
/// `[[Re, -Im], [Im, Re]]` whose rank is twice the complex rank.
pub fn pbh_rank(a: &DMatrix<f64>, c: &DMatrix<f64>, lambda: Complex64, rel_tol: f64) -> usize {
    let n = a.nrows();
    let p = c.nrows();
    let rows = n + p;
    let mut re = DMatrix::zeros(rows, n);
    let mut im = DMatrix::zeros(rows, n);
    re.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        re[(i, i)] -= lambda.re;
        im[(i, i)] = -lambda.im;
    }
    re.view_mut((n, 0), (p, n)).copy_from(c);
    let mut big = DMatrix::zeros(2 * rows, 2 * n);
    big.view_mut((0, 0), (rows, n)).copy_from(&re);
    big.view_mut((0, n), (rows, n)).copy_from(&(-&im));
    big.view_mut((rows, 0), (rows, n)).copy_from(&im);
    big.view_mut((rows, n), (rows, n)).copy_from(&re);
    numerical_rank(&big, rel_tol) / 2
}

/// `(C, A)` detectable: every eigenvalue with `|λ| ≥ 1 - margin` passes the PBH test.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    eigenvalues(a)
        .into_iter()
        .filter(|l| l.norm() >= 1.0 - 1e-9)
        .all(|l| pbh_rank(a, c, l, RANK_TOL) == n)
}

/// `(A, B)` stabilizable, by duality with detectability of `(B', A')`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    is_detectable(&a.transpose(), &b.transpose())
}

/// Observability matrix `[C; CA; ...; CA^{n-1}]` with every block scaled to
/// unit Frobenius norm (rank-preserving, keeps decaying powers visible).
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut out = DMatrix::zeros(n * p, n);
    let mut block = c.clone();
    for k in 0..n {
        let norm = block.norm();
        if norm > 0.0 {
            block /= norm;
        }
        out.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Symmetric part `(M + M')/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Condition number in the 2-norm.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

pub fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular(what.to_string()))
}

/// Dense matrix in a flat row-major layout for text serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for DenseMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<&DenseMatrix> for DMatrix<f64> {
    type Error = Error;

    fn try_from(d: &DenseMatrix) -> Result<Self> {
        if d.data.len() != d.rows * d.cols {
            return Err(Error::Dimension(format!(
                "matrix declared {}x{} but holds {} entries",
                d.rows,
                d.cols,
                d.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(d.rows, d.cols, &d.data))
    }
}
