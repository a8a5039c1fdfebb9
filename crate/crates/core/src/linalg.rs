//! Dense row-major matrices and the handful of factorizations the rest of the
//! crate needs: covariance, a cyclic Jacobi symmetric eigensolver, Householder
//! QR, and the weighted trace `Tr(Uᵀ Σ U Γ)`.
//!
//! Samples are stored as columns throughout (`p × n`), so the covariance of a
//! centered data matrix `X` is simply `X Xᵀ`.

use std::fmt;
use std::ops::{Index, IndexMut, Range};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, mismatch, Error, Result};

/// Dense `rows × cols` matrix of `f64` in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            let row = &self.row(r)[..self.cols.min(8)];
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(mismatch(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(mismatch(format!("column {j} has {} entries, expected {rows}", c.len())));
            }
            m.set_column(j, c);
        }
        if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / cols, col: pos % cols });
        }
        Ok(m)
    }

    /// Standard-normal entries.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.data[r * self.cols + c] = v;
        }
    }

    /// New matrix made of the given columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (d, &j) in dst.iter_mut().zip(idx) {
                *d = src[j];
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(mismatch(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, false, other, false)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, true, other, false)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, false, other, true)
    }

    /// `max |A − Aᵀ|`; infinite when the matrix is not square.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// `op(a) · op(b)` through `matrixmultiply`, using strides for transposes.
fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Result<Matrix> {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != k2 {
        return Err(mismatch(format!(
            "cannot multiply {m}x{k} by {k2}x{n}"
        )));
    }
    let mut c = Matrix::zeros(m, n);
    gemm_into(1.0, a, ta, b, tb, 0.0, &mut c);
    Ok(c)
}

/// `c ← alpha · op(a) · op(b) + beta · c`. Shapes are the caller's problem.
pub(crate) fn gemm_into(alpha: f64, a: &Matrix, ta: bool, b: &Matrix, tb: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(c.shape(), (m, n));
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c.data {
            *v *= beta;
        }
        return;
    }
    // SAFETY: pointers and strides describe the live buffers of `a`, `b`, `c`
    // with the dimensions checked above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// `X Xᵀ` for a row-centered `p × n` sample matrix, without a `1/n` factor.
///
/// Each row mean must vanish to within `1e-9` times the row's magnitude.
pub fn covariance(x: &Matrix) -> Result<Matrix> {
    let n = x.cols().max(1) as f64;
    let mut worst: Option<(usize, f64, f64)> = None;
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let excess = mean.abs() / scale;
        if excess > 1e-9 && worst.is_none_or(|(_, _, e)| excess > e) {
            worst = Some((r, mean, excess));
        }
    }
    if let Some((row, mean, _)) = worst {
        return Err(Error::NotCentered { row, mean });
    }
    x.matmul_t(x)
}

/// Eigenpairs of a symmetric matrix, sorted by non-increasing eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// Ranges of consecutive indices whose eigenvalues differ by less than
    /// `tol`. Eigenvectors inside a range of length > 1 are only defined up to
    /// a rotation of the block.
    pub fn eigenspace_blocks(&self, tol: f64) -> Vec<Range<usize>> {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 1..=self.values.len() {
            if i == self.values.len() || (self.values[i - 1] - self.values[i]).abs() >= tol {
                blocks.push(start..i);
                start = i;
            }
        }
        blocks
    }

    /// `V diag(λ) Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let scaled = Matrix::from_fn(n, n, |r, c| self.vectors[(r, c)] * self.values[c]);
        scaled.matmul_t(&self.vectors).expect("square factors")
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops below `1e-12 · ‖A‖_F`.
/// Eigenvector signs are fixed so that the largest-magnitude component of each
/// column is positive.
pub fn sym_eig(a: &Matrix) -> Result<EigenDecomposition> {
    let n = a.rows();
    if a.cols() != n {
        return Err(mismatch(format!("sym_eig needs a square matrix, got {:?}", a.shape())));
    }
    let scale = a.max_abs();
    let asym = a.max_asymmetry();
    if asym > 1e-9 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mut m = a.clone();
    // exact symmetrization so rotations see one value per pair
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let threshold = 1e-12 * a.frobenius_norm();

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&m) > threshold {
        return Err(Error::EigenFailure { sweeps: JACOBI_MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = v.select_columns(&order);
    for c in 0..n {
        let col = vectors.column(c);
        let pivot = col.iter().fold(0.0_f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            let flipped: Vec<f64> = col.iter().map(|x| -x).collect();
            vectors.set_column(c, &flipped);
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Singular values of a square matrix, descending, from the eigenvalues of
/// `AᵀA`.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    let ata = a.t_matmul(a)?;
    Ok(sym_eig(&ata)?.values.into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// `Tr(Uᵀ Σ U Γ)` with `Γ = diag(gammas)`, which equals
/// `Tr(Γ^{1/2} Uᵀ Σ U Γ^{1/2})` by cyclicity of the trace.
pub fn weighted_trace(u: &Matrix, sigma: &Matrix, gammas: &[f64]) -> Result<f64> {
    let p = u.rows();
    if u.cols() != p {
        return Err(mismatch(format!("U must be square, got {:?}", u.shape())));
    }
    if sigma.shape() != (p, p) {
        return Err(mismatch(format!("Sigma is {:?}, U is {p}x{p}", sigma.shape())));
    }
    if gammas.len() != p {
        return Err(mismatch(format!("{} weights for {p} columns", gammas.len())));
    }
    if gammas.iter().any(|&g| !(g >= 0.0)) || gammas.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("weights must be non-negative and ascending"));
    }
    let su = sigma.matmul(u)?;
    let mut total = 0.0;
    for (i, &g) in gammas.iter().enumerate() {
        let quad: f64 = (0..p).map(|k| u[(k, i)] * su[(k, i)]).sum();
        total += g * quad;
    }
    Ok(total)
}

/// Householder QR of a tall-or-square matrix, returning the thin factor `Q`
/// (`m × n`, orthonormal columns) and `R` (`n × n`) with a non-negative
/// diagonal.
pub fn qr(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(mismatch(format!("qr needs rows >= cols, got {m}x{n}")));
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(vec![0.0; m - k]);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(vec![0.0; m - k]);
            continue;
        }
        for x in &mut v {
            *x /= vnorm;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..m {
                r[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
        reflectors.push(v);
    }
    // accumulate thin Q = H_0 ... H_{n-1} [I_n; 0]
    let mut q = Matrix::zeros(m, n);
    for i in 0..n {
        q[(i, i)] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * q[(i, j)]).sum();
            if dot != 0.0 {
                for i in k..m {
                    q[(i, j)] -= 2.0 * v[i - k] * dot;
                }
            }
        }
    }
    let mut r_thin = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r_thin[(i, j)] = r[(i, j)];
        }
    }
    for i in 0..n {
        if r_thin[(i, i)] < 0.0 {
            for j in i..n {
                r_thin[(i, j)] = -r_thin[(i, j)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    Ok((q, r_thin))
}

/// Random `rows × cols` matrix with orthonormal columns (QR of a Gaussian
/// matrix, sign-fixed, hence Haar distributed).
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let g = Matrix::random_normal(rows, cols, rng);
    qr(&g).expect("rows >= cols").0
}

/// `max |UᵀU − I|`
pub fn orthonormality_residual(u: &Matrix) -> f64 {
    let utu = u.t_matmul(u).expect("compatible");
    let mut worst: f64 = 0.0;
    for i in 0..utu.rows() {
        for j in 0..utu.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((utu[(i, j)] - target).abs());
        }
    }
    worst
}

/// Cosines of the principal angles between the column spans of two matrices
/// with orthonormal columns, largest first.
pub fn principal_cosines(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    let m = a.t_matmul(b)?;
    let k = m.rows().min(m.cols());
    let gram = if m.rows() <= m.cols() { m.matmul_t(&m)? } else { m.t_matmul(&m)? };
    let vals = sym_eig(&gram)?.values;
    Ok(vals.into_iter().take(k).map(|v| v.max(0.0).sqrt().min(1.0)).collect())
}
