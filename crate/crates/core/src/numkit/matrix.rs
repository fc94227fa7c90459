use serde::{Deserialize, Serialize};

use super::NumError;

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if rows * cols != data.len() {
            return Err(NumError::Shape(format!(
                "{rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumError> {
        let first = rows.first().ok_or(NumError::Empty)?;
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumError::LengthMismatch(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumError> {
        if self.cols != other.rows {
            return Err(NumError::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Singular values sorted in nonincreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    /// Builds a spectrum from arbitrary nonnegative values, sorting them.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self, NumError> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(NumError::Degenerate("singular values must be finite and >= 0"));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Iterates until the off-diagonal Frobenius norm drops below `1e-12` times
/// the total norm, or 100 sweeps. Returned unsorted (diagonal order).
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>, NumError> {
    let n = m.rows();
    if n != m.cols() {
        return Err(NumError::Shape(format!("{}x{} is not square", n, m.cols())));
    }
    let mut a = m.data.clone();
    let total: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if total == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() <= JACOBI_TOL * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| a[i * n + i]).collect())
}

/// Upper-triangular factor `R` of a Householder QR of a tall matrix
/// (`rows >= cols`), returned as a `cols × cols` row-major buffer.
fn householder_r(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = (m.rows, m.cols);
    let mut a = m.data.clone();
    for k in 0..cols {
        let col_norm = (k..rows).map(|i| a[i * cols + k].powi(2)).sum::<f64>().sqrt();
        if col_norm == 0.0 {
            continue;
        }
        let alpha = if a[k * cols + k] > 0.0 { -col_norm } else { col_norm };
        let mut v: Vec<f64> = (k..rows).map(|i| a[i * cols + k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for j in k..cols {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * a[(k + t) * cols + j]).sum();
            let f = 2.0 * dot / vv;
            for (t, vi) in v.iter().enumerate() {
                a[(k + t) * cols + j] -= f * vi;
            }
        }
    }
    let mut r = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in i..cols {
            r[i * cols + j] = a[i * cols + j];
        }
    }
    r
}

/// Singular values of a square row-major matrix by one-sided Jacobi
/// (Hestenes) rotations on its columns.
fn one_sided_jacobi(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    let col = |a: &[f64], p: usize, q: usize| -> (f64, f64, f64) {
        let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = a[i * n + p];
            let y = a[i * n + q];
            alpha += x * x;
            beta += y * y;
            gamma += x * y;
        }
        (alpha, beta, gamma)
    };
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = col(&a, p, q);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let x = a[i * n + p];
                    let y = a[i * n + q];
                    a[i * n + p] = c * x - s * y;
                    a[i * n + q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Singular values in nonincreasing order, `min(rows, cols)` of them.
///
/// The matrix (or its transpose, if wide) is first reduced to a square
/// triangular factor by Householder QR; one-sided Jacobi on that factor then
/// resolves small singular values to roughly machine precision relative to
/// the largest, which keeps numerically-zero directions at ~1e-16 instead of
/// the ~1e-8 a Gram-matrix route would leave.
pub fn singular_values(m: &Matrix) -> Result<SingularSpectrum, NumError> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite);
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(SingularSpectrum(Vec::new()));
    }
    let tall = if m.rows >= m.cols { m.clone() } else { m.transpose() };
    let n = tall.cols;
    let r = householder_r(&tall);
    SingularSpectrum::from_values(one_sided_jacobi(r, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum() {
        let s = singular_values(&Matrix::identity(4)).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let rows: Vec<Vec<f64>> = u.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
        let s = singular_values(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let expected = super::super::norm(&u) * super::super::norm(&v);
        assert_eq!(s.len(), 3);
        assert!((s.values()[0] - expected).abs() < 1e-10 * expected);
        assert!(s.values()[1] < 1e-14 * expected && s.values()[2] < 1e-14 * expected);
    }

    #[test]
    fn wide_matrix_uses_row_gram() {
        let m = Matrix::new(2, 3, vec![3.0, 0.0, 0.0, 0.0, 0.0, 4.0]).unwrap();
        let s = singular_values(&m).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.values()[0] - 4.0).abs() < 1e-12);
        assert!((s.values()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn squares_match_gram_eigenvalues() {
        let data: Vec<f64> = (0..35).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0 + (i as f64).sin()).collect();
        let m = Matrix::new(7, 5, data).unwrap();
        let s = singular_values(&m).unwrap();
        let mut eig = symmetric_eigenvalues(&m.transpose().matmul(&m).unwrap()).unwrap();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (sv, e) in s.values().iter().zip(&eig) {
            assert!((sv * sv - e).abs() < 1e-10 * eig[0], "{sv} {e}");
        }
        let wide = singular_values(&m.transpose()).unwrap();
        for (a, b) in s.values().iter().zip(wide.values()) {
            assert!((a - b).abs() < 1e-12 * s.values()[0]);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(NumError::NonFinite)
        );
        assert!(Matrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn transpose_and_matmul() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = a.matmul(&a.transpose()).unwrap();
        assert_eq!(g.data(), &[14.0, 32.0, 32.0, 77.0]);
        assert!(a.matmul(&a).is_err());
    }
}
