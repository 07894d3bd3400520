//! Dense row-major f64 tensors and the matmul kernels everything else sits on.

use crate::{Error, Result};

/// A dense tensor of 64-bit reals, row-major.
///
/// Immutable by convention once it enters a graph; all ops allocate fresh
/// outputs. Rank is 1 or 2 everywhere in this crate (vectors and matrices),
/// plus rank-0 for scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (scalars/vectors are 1 x len).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1 || self.shape.is_empty()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// dst[m x p] = a[m x k] * b[k x p], accumulating into dst.
///
/// ikj loop order: the inner j-loop runs over contiguous rows of b and dst,
/// which the compiler vectorizes.
pub fn matmul_nn_acc(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(dst.len(), m * p);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dst_row = &mut dst[i * p..(i + 1) * p];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (d, &bv) in dst_row.iter_mut().zip(b_row.iter()) {
                *d += aik * bv;
            }
        }
    }
}

/// dst[m x p] = a[m x k] * b[p x k]^T, accumulating into dst.
///
/// Each output element is a dot product of two contiguous rows.
pub fn matmul_nt_acc(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), p * k);
    debug_assert_eq!(dst.len(), m * p);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dst_row = &mut dst[i * p..(i + 1) * p];
        for (j, d) in dst_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *d += acc;
        }
    }
}

/// dst[k x p] = a[m x k]^T * b[m x p], accumulating into dst.
///
/// Outer loop over shared rows keeps both reads contiguous.
pub fn matmul_tn_acc(dst: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * p);
    debug_assert_eq!(dst.len(), k * p);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * p..(i + 1) * p];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let dst_row = &mut dst[kk * p..(kk + 1) * p];
            for (d, &bv) in dst_row.iter_mut().zip(b_row.iter()) {
                *d += aik * bv;
            }
        }
    }
}

pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, p) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(vec![m, p]);
    matmul_nn_acc(out.data_mut(), a.data(), b.data(), m, k, p);
    Ok(out)
}

pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (p, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt inner dimensions differ: {:?} x {:?}^T",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(vec![m, p]);
    matmul_nt_acc(out.data_mut(), a.data(), b.data(), m, k, p);
    Ok(out)
}
