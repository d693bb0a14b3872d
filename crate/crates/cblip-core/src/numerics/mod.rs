//! Dense tensor math with reverse-mode automatic differentiation and Adam.
//!
//! Everything learnable in the model runs through this module: row-major 2-D
//! [`Tensor`]s, a [`Tape`] that records forward operations and replays their
//! adjoints in reverse, a [`ParamStore`] holding named parameters, and the
//! [`Adam`] optimizer. Training uses `f32`; the whole stack is generic over
//! [`Scalar`] so gradient checks can run in `f64`.

mod adam;
mod tape;
mod tensor;

pub use adam::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use num_traits::{Float, NumCast};
use thiserror::Error;

/// Element type of tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float
    + NumCast
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
}

#[derive(Error, Debug)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: index {index} out of range {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

/// Handle to one named parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named collection of learnable tensors. Ids are dense and stable, so
/// optimizer state and gradient maps index by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.values.push(value.with_grad());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar coefficients across all parameters.
    pub fn num_coefficients(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }
}

/// Central finite differences of a scalar-valued function, coordinate by
/// coordinate. Testing oracle for [`Tape::backward`].
pub fn finite_diff_grad<T: Scalar>(
    f: &mut dyn FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (T::from_f64(2.0) * eps);
    }
    grad
}

/// Largest relative disagreement between two gradients, with the denominator
/// floored at 1 so near-zero entries compare absolutely.
pub fn max_rel_err<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradient shapes differ");
    let mut worst = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.to_f64(), y.to_f64());
        let denom = x.abs().max(y.abs()).max(1.0);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_square() {
        // d/dx x^2 at 3 is 6.
        let x = Tensor::from_vec(&[1, 1], vec![3.0f64]).unwrap();
        let grad = finite_diff_grad(
            &mut |t: &Tensor<f64>| t.data()[0] * t.data()[0],
            &x,
            1e-4,
        );
        assert!((grad.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_linear_exact() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let w = [2.0, 3.0, -1.0];
        let grad = finite_diff_grad(
            &mut |t: &Tensor<f64>| t.data().iter().zip(w).map(|(a, b)| a * b).sum(),
            &x,
            1e-4,
        );
        for (g, want) in grad.data().iter().zip(w) {
            assert!((g - want).abs() < 1e-9);
        }
    }

    #[test]
    fn param_store_roundtrip() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::zeros(&[2, 3]));
        assert_eq!(store.name(id), "w");
        assert_eq!(store.find("w"), Some(id));
        assert_eq!(store.num_coefficients(), 6);
        assert!(store.value(id).requires_grad());
    }
}
