//! Dense row-major `f64` matrices.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor[{}x{}]{:?}",
            self.rows,
            self.cols,
            &self.data[..self.data.len().min(8)]
        )
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "tensor data does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self::from_vec(1, v.len(), v.to_vec())
    }

    pub fn column(v: &[f64]) -> Self {
        Self::from_vec(v.len(), 1, v.to_vec())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on a {}x{} tensor",
            self.rows,
            self.cols
        );
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        Self::from_vec(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of rows `start..start + n`.
    pub fn rows_range(&self, start: usize, n: usize) -> Self {
        Self::from_vec(
            n,
            self.cols,
            self.data[start * self.cols..(start + n) * self.cols].to_vec(),
        )
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul(a: &Self, ta: bool, b: &Self, tb: bool) -> Self {
        let (m, k) = if ta {
            (a.cols, a.rows)
        } else {
            (a.rows, a.cols)
        };
        let (k2, n) = if tb {
            (b.cols, b.rows)
        } else {
            (b.rows, b.cols)
        };
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut c = Self::zeros(m, n);
        gemm_acc(a, ta, b, tb, &mut c);
        c
    }
}

/// `c += op(a) · op(b)`.
pub fn gemm_acc(a: &Tensor, ta: bool, b: &Tensor, tb: bool, c: &mut Tensor) {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if tb { b.rows } else { b.cols };
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: strides and extents describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            1.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}
