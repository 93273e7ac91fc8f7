//! Dense row-major `f64` tensors and the handful of kernels the model needs.
//!
//! Everything here is plain value arithmetic. Gradient tracking lives in
//! [`crate::graph`], which calls into these kernels for both passes.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and small fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2-D view: the leading dimension, with the rest flattened.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.check_same(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = (self.rows(), self.cols());
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_cols", &self.shape, &[start, len]));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Ok(Tensor {
            shape: vec![r, len],
            data: out,
        })
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let r = first.rows();
        if let Some(bad) = parts.iter().find(|p| p.rows() != r) {
            return Err(Error::shape("concat_cols", first.shape(), bad.shape()));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor {
            shape: vec![r, total],
            data: out,
        })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let c = first.cols();
        if let Some(bad) = parts.iter().find(|p| p.cols() != c) {
            return Err(Error::shape("concat_rows", first.shape(), bad.shape()));
        }
        let rows = parts.iter().map(|p| p.rows()).sum();
        let mut data = Vec::with_capacity(rows * c);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, c],
            data,
        })
    }

    /// Stable hash of shape and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325_u64;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for &d in &self.shape {
            eat(d as u64);
        }
        for v in &self.data {
            eat(v.to_bits());
        }
        h
    }
}

fn check_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::shape(op, &t.shape, &[]));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// `C = A·B` (or `C += A·B` when `accumulate`), with arbitrary strides so the
/// transposed variants need no copies.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the caller guarantees that `a` holds an m×k matrix and `b` a
    // k×n matrix under the given strides, and `c` is exactly m×n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// `A (m×k) · B (k×n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = check_matrix(a, "matmul")?;
    let (k2, n) = check_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m, k, n, &a.data, k as isize, 1, &b.data, n as isize, 1, &mut out, false,
    );
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `A (m×k) · Bᵀ` for `B (n×k)`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = check_matrix(a, "matmul_nt")?;
    let (n, k2) = check_matrix(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m, k, n, &a.data, k as isize, 1, &b.data, 1, k as isize, &mut out, false,
    );
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `Aᵀ · B` for `A (k×m)`, `B (k×n)`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = check_matrix(a, "matmul_tn")?;
    let (k2, n) = check_matrix(b, "matmul_tn")?;
    if k != k2 {
        return Err(Error::shape("matmul_tn", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m, k, n, &a.data, 1, m as isize, &b.data, n as isize, 1, &mut out, false,
    );
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Accumulating variants used by the backward pass.
pub(crate) fn matmul_nt_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.rows();
    gemm(
        m,
        k,
        n,
        &a.data,
        k as isize,
        1,
        &b.data,
        1,
        k as isize,
        &mut out.data,
        true,
    );
}

pub(crate) fn matmul_tn_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    gemm(
        m,
        k,
        n,
        &a.data,
        1,
        m as isize,
        &b.data,
        n as isize,
        1,
        &mut out.data,
        true,
    );
}

pub(crate) fn matmul_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    gemm(
        m,
        k,
        n,
        &a.data,
        k as isize,
        1,
        &b.data,
        n as isize,
        1,
        &mut out.data,
        true,
    );
}

/// Row-wise softmax with max subtraction. A 1-D tensor is one row.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let c = if x.shape.len() == 1 {
        x.numel()
    } else {
        x.cols()
    };
    let mut out = x.data.clone();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}
