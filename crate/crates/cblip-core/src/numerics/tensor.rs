//! Row-major 2-D tensors and the raw kernels behind the tape operations.

use std::sync::Arc;

use rand::Rng;

use super::Scalar;

/// Dense row-major tensor. Cloning is cheap (shared buffer); mutation
/// copies on write when the buffer is shared.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, super::TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(super::TensorError::Shape {
                op: "from_vec",
                detail: format!("shape {shape:?} != buffer length {}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::zero(); numel]),
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel]),
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1, 1], value)
    }

    /// Uniform in [lo, hi). Draws `f64` so f32/f64 builds see the same stream.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(lo + rng.gen::<f64>() * (hi - lo)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
        }
    }

    /// Uniform Xavier: bound = sqrt(6 / (fan_in + fan_out)) over a
    /// (fan_in × fan_out) matrix.
    pub fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(&[fan_in, fan_out], -bound, bound, rng)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        let vec: &mut Vec<T> = Arc::make_mut(&mut self.data);
        vec.as_mut_slice()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.cols();
        &self.data[r * w..(r + 1) * w]
    }

    /// Scalar payload of a 1-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, super::TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(super::TensorError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise in-place addition.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        let dst = self.data_mut();
        for (a, &b) in dst.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
    }

    pub fn scale_assign(&mut self, c: T) {
        for a in self.data_mut() {
            *a = *a * c;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
            requires_grad: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Raw kernels. Shapes are validated by the tape before these run.
// ---------------------------------------------------------------------------

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(k, b.rows());
    let mut out = vec![T::zero(); n * m];
    let ad = a.data();
    let bd = b.data();
    for i in 0..n {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::from_vec(&[n, m], out).unwrap()
}

pub(crate) fn transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (n, m) = (a.rows(), a.cols());
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data()[i * m + j];
        }
    }
    Tensor::from_vec(&[m, n], out).unwrap()
}

pub(crate) fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

/// x (n×d) + row (1×d), broadcast over rows.
pub(crate) fn add_row<T: Scalar>(x: &Tensor<T>, row: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (x.rows(), x.cols());
    let mut out = x.data().to_vec();
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = out[i * d + j] + row.data()[j];
        }
    }
    Tensor::from_vec(&[n, d], out).unwrap()
}

pub(crate) fn sum_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (x.rows(), x.cols());
    let mut out = vec![T::zero(); d];
    for i in 0..n {
        for j in 0..d {
            out[j] = out[j] + x.data()[i * d + j];
        }
    }
    Tensor::from_vec(&[1, d], out).unwrap()
}

pub(crate) fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (x.rows(), x.cols());
    let mut out = vec![T::zero(); n * d];
    for i in 0..n {
        let row = x.row(i);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for j in 0..d {
            let e = (row[j] - max).exp();
            out[i * d + j] = e;
            sum = sum + e;
        }
        for j in 0..d {
            out[i * d + j] = out[i * d + j] / sum;
        }
    }
    Tensor::from_vec(&[n, d], out).unwrap()
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Returns (y, xhat, inv_std): y = xhat ⊙ gain + bias with xhat the per-row
/// standardization of x.
pub(crate) fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (n, d) = (x.rows(), x.cols());
    let eps = T::from_f64(LAYER_NORM_EPS);
    let dt = T::from_f64(d as f64);
    let mut y = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut inv_std = vec![T::zero(); n];
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().cloned().sum::<T>() / dt;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / dt;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            xhat[i * d + j] = xh;
            y[i * d + j] = xh * gain.data()[j] + bias.data()[j];
        }
    }
    (
        Tensor::from_vec(&[n, d], y).unwrap(),
        Tensor::from_vec(&[n, d], xhat).unwrap(),
        inv_std,
    )
}

/// Gathers rows of `table` at `ids`.
pub(crate) fn gather_rows<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Tensor<T> {
    let d = table.cols();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &i in ids {
        out.extend_from_slice(table.row(i));
    }
    Tensor::from_vec(&[ids.len(), d], out).unwrap()
}

/// Scatter-adds the rows of `grad` into a zero tensor shaped like `table`.
pub(crate) fn scatter_rows<T: Scalar>(
    grad: &Tensor<T>,
    ids: &[usize],
    table_shape: &[usize],
) -> Tensor<T> {
    let d = table_shape[1];
    let mut out = vec![T::zero(); table_shape[0] * d];
    for (r, &i) in ids.iter().enumerate() {
        for j in 0..d {
            out[i * d + j] = out[i * d + j] + grad.data()[r * d + j];
        }
    }
    Tensor::from_vec(table_shape, out).unwrap()
}

/// out[i][j] = p[i][codes[i*n+j]] where p is n×num_types.
pub(crate) fn pair_gather<T: Scalar>(p: &Tensor<T>, codes: &[usize], n: usize) -> Tensor<T> {
    let w = p.cols();
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = p.data()[i * w + codes[i * n + j]];
        }
    }
    Tensor::from_vec(&[n, n], out).unwrap()
}

/// out[i][t] = sum over j with codes[i][j] == t of a[i][j]; a is n×n.
pub(crate) fn pair_scatter<T: Scalar>(
    a: &Tensor<T>,
    codes: &[usize],
    num_types: usize,
) -> Tensor<T> {
    let n = a.rows();
    let mut out = vec![T::zero(); n * num_types];
    for i in 0..n {
        for j in 0..n {
            let t = codes[i * n + j];
            out[i * num_types + t] = out[i * num_types + t] + a.data()[i * n + j];
        }
    }
    Tensor::from_vec(&[n, num_types], out).unwrap()
}
