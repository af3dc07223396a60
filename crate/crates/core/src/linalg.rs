//! Dense complex vectors and matrices.
//!
//! Everything here is `f64`-based and row-major. Matrix inversion is always
//! expressed as an LU solve against the right-hand side (or the identity);
//! there is no explicit inverse routine.

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Relative pivot threshold below which a matrix is treated as singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {expected} entries, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("matrix is singular to working precision (pivot {pivot})")]
    SingularMatrix { pivot: usize },
}

/// Complex column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector {
    data: Vec<C64>,
}

impl CVector {
    pub fn new(data: Vec<C64>) -> Result<Self, LinalgError> {
        check_finite(&data)?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        norm2(self)
    }

    /// Hermitian inner product `selfᴴ other`.
    pub fn inner(&self, other: &CVector) -> C64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

impl std::ops::Index<usize> for CVector {
    type Output = C64;

    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = C64::new(d, 0.0);
        }
        m
    }

    /// Builds a matrix from `f(row, col)`. Entries are not checked for finiteness.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector {
            data: (0..self.rows).map(|i| self.get(i, j)).collect(),
        }
    }

    pub fn set_column(&mut self, j: usize, v: &[C64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (i, &x) in v.iter().enumerate() {
            self.set(i, j, x);
        }
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix, LinalgError> {
        matmul(self, other)
    }

    pub fn hermitian(&self) -> CMatrix {
        hermitian(self)
    }

    /// Plain transpose, no conjugation.
    pub fn transpose(&self) -> CMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj(&self) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix, LinalgError> {
        solve(self, b)
    }

    pub fn lu(&self) -> Result<Lu, LinalgError> {
        Lu::factor(self)
    }
}

/// Standard complex matrix product.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, m, p) = (a.rows, a.cols, b.cols);
    let mut out = vec![C64::new(0.0, 0.0); n * p];
    for i in 0..n {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a.data[i * m + k];
            if aik == C64::new(0.0, 0.0) {
                continue;
            }
            let brow = &b.data[k * p..(k + 1) * p];
            for (o, bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(CMatrix {
        rows: n,
        cols: p,
        data: out,
    })
}

/// Conjugate transpose.
pub fn hermitian(a: &CMatrix) -> CMatrix {
    CMatrix::from_fn(a.cols, a.rows, |i, j| a.get(j, i).conj())
}

pub fn norm2(v: &CVector) -> f64 {
    v.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `a X = b` by LU with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::DimensionMismatch {
            op: "solve (square lhs)",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if b.rows != a.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    a.lu()?.solve(b)
}

/// LU factorization `P A = L U` with unit-diagonal `L`, both packed in `lu`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &CMatrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "lu",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        // pivot threshold is taken against the largest entry of the original row
        let row_scale: Vec<f64> = (0..n)
            .map(|i| {
                lu[i * n..(i + 1) * n]
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max)
            })
            .collect();

        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|i| (i, lu[i * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            let scale = row_scale[perm[p]];
            if scale == 0.0 || pmag < SINGULAR_PIVOT_RTOL * scale {
                return Err(LinalgError::SingularMatrix { pivot: k });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in (k + 1)..n {
                    let ukj = lu[k * n + j];
                    lu[i * n + j] -= f * ukj;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix, LinalgError> {
        let n = self.n;
        if b.rows != n {
            return Err(LinalgError::DimensionMismatch {
                op: "lu solve",
                left: (n, n),
                right: b.shape(),
            });
        }
        let p = b.cols;
        let mut x = CMatrix::zeros(n, p);
        for i in 0..n {
            let src = self.perm[i];
            x.data[i * p..(i + 1) * p].copy_from_slice(&b.data[src * p..(src + 1) * p]);
        }
        for col in 0..p {
            // forward substitution with unit L
            for i in 0..n {
                let mut s = x.data[i * p + col];
                for j in 0..i {
                    s -= self.lu[i * n + j] * x.data[j * p + col];
                }
                x.data[i * p + col] = s;
            }
            for i in (0..n).rev() {
                let mut s = x.data[i * p + col];
                for j in (i + 1)..n {
                    s -= self.lu[i * n + j] * x.data[j * p + col];
                }
                x.data[i * p + col] = s / self.lu[i * n + i];
            }
        }
        Ok(x)
    }
}

fn check_finite(data: &[C64]) -> Result<(), LinalgError> {
    match data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        Some(index) => Err(LinalgError::NonFinite { index }),
        None => Ok(()),
    }
}
