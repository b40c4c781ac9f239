//! Dense 2-D tensors and the pure numeric kernels behind every operation.
//!
//! A [`Tensor`] is a row-major `f64` matrix with an optional gradient buffer.
//! The kernels in this module are plain functions without any recording; the
//! autograd tape calls them for its forward pass and the evaluation path calls
//! them directly, so both paths share one numeric definition.

use thiserror::Error;

/// Errors raised by tensor arithmetic and the autograd tape.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("reshape: cannot view {from:?} ({elems} elements) as {to:?}")]
    BadReshape {
        from: (usize, usize),
        to: (usize, usize),
        elems: usize,
    },
    #[error("cosine distance is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("cosine distance expects vectors, got {lhs:?} and {rhs:?}")]
    NotAVector {
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward expects a 1x1 scalar loss, got {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("row index {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("data length {len} does not match shape {shape:?}")]
    BadDataLength { len: usize, shape: (usize, usize) },
    #[error("optimizer: parameter without a gradient buffer")]
    MissingGradient,
}

/// Row-major dense matrix of 64-bit reals, optionally tracking a gradient.
///
/// The gradient buffer is present exactly when `requires_grad` is set and
/// always has the same shape as the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from row-major data. Fails if the length is wrong.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::BadDataLength {
                len: data.len(),
                shape: (rows, cols),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    /// 1x1 tensor holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Row vector 1xn.
    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Tensor {
            rows: 1,
            cols,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Convenience constructor from nested rows; all rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NumError::BadDataLength {
                    len: row.len(),
                    shape: (r, c),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    /// Marks the tensor as a trainable parameter, allocating its gradient.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Accumulates `g` into the gradient buffer. No-op shape is the caller's
    /// responsibility; `g` must match `numel`.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        let buf = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.rows * self.cols]);
        debug_assert_eq!(buf.len(), g.len());
        for (b, v) in buf.iter_mut().zip(g) {
            *b += v;
        }
        self.requires_grad = true;
    }

    pub fn is_vector(&self) -> bool {
        self.rows == 1 || self.cols == 1
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

// ── Pure kernels ─────────────────────────────────────────────────────

/// Below this many multiply-adds a hand-rolled loop beats the packing
/// overhead of the blocked GEMM.
const SMALL_GEMM_FLOPS: usize = 16 * 1024;

/// `c += alpha * opA(a) * opB(b)` where `opX` optionally transposes the
/// row-major buffer, plus `c *= beta` first. `a` is m×k after opA, `b` is
/// k×n after opB, `c` is m×n row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm_into(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta != 1.0 {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // Strides of the logical (post-transpose) operands over the raw buffers.
    let (rsa, csa) = if a_trans {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if b_trans {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    if m * k * n <= SMALL_GEMM_FLOPS {
        if beta != 1.0 {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let av = a[(i as isize * rsa + p as isize * csa) as usize];
                    let bv = b[(p as isize * rsb + j as isize * csb) as usize];
                    acc += av * bv;
                }
                c[i * n + j] += alpha * acc;
            }
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    if a.cols != b.rows {
        return Err(NumError::DimMismatch {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    gemm_into(
        a.rows, a.cols, b.cols, 1.0, &a.data, false, &b.data, false, 0.0, &mut out.data,
    );
    Ok(out)
}

fn map_unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = a.clone();
    out.requires_grad = false;
    out.grad = None;
    out.data.iter_mut().for_each(|v| *v = f(*v));
    out
}

fn zip_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::DimMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows, a.cols, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    zip_binary("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    zip_binary("sub", a, b, |x, y| x - y)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    zip_binary("hadamard", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    map_unary(a, |x| c * x)
}

pub fn tanh(a: &Tensor) -> Tensor {
    map_unary(a, f64::tanh)
}

pub fn abs(a: &Tensor) -> Tensor {
    map_unary(a, f64::abs)
}

pub fn sqrt(a: &Tensor) -> Tensor {
    map_unary(a, f64::sqrt)
}

pub fn ln(a: &Tensor) -> Tensor {
    map_unary(a, f64::ln)
}

pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    map_unary(a, |x| x.clamp(lo, hi))
}

/// Softmax applied to each column independently (max-shifted for stability).
/// Every output column sums to one.
pub fn softmax_cols(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows, a.cols);
    for c in 0..a.cols {
        let mut max = f64::NEG_INFINITY;
        for r in 0..a.rows {
            max = max.max(a.get(r, c));
        }
        let mut sum = 0.0;
        for r in 0..a.rows {
            let e = (a.get(r, c) - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..a.rows {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

pub fn transpose(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.set(c, r, a.get(r, c));
        }
    }
    out
}

pub fn mean(a: &Tensor) -> f64 {
    if a.data.is_empty() {
        return 0.0;
    }
    a.data.iter().sum::<f64>() / a.data.len() as f64
}

pub fn sum(a: &Tensor) -> f64 {
    a.data.iter().sum()
}

/// Dot product and the two squared Euclidean norms of equal-length slices.
pub fn dot_and_norms_sq(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    (dot, na2, nb2)
}

/// Cosine distance `1 - a·b / (‖a‖‖b‖)` between two vectors, with the
/// similarity clamped to `[-1, 1]` so the result stays in `[0, 2]`.
/// The denominator is `sqrt(na²·nb²)` in one rounding, which makes the
/// self-distance of a vector exactly zero. A zero-norm input is a domain
/// error, not a silent epsilon.
pub fn cosine_distance_value(a: &[f64], b: &[f64]) -> Result<f64, NumError> {
    let (dot, na2, nb2) = dot_and_norms_sq(a, b);
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(NumError::ZeroNorm);
    }
    let cos = (dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Cosine distance of two tensor-valued vectors (row or column) of equal
/// element count.
pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64, NumError> {
    if !a.is_vector() || !b.is_vector() {
        return Err(NumError::NotAVector {
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    if a.numel() != b.numel() {
        return Err(NumError::DimMismatch {
            op: "cosine_distance",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    cosine_distance_value(&a.data, &b.data)
}
