//! The tape: records forward operations and replays their adjoints in
//! reverse topological order.
//!
//! A tape belongs to one unit of work (one scored sequence, one loss) and is
//! confined to a single thread. Every operation validates shapes, rejects
//! non-finite outputs, and — when some input needs a gradient — stores a
//! closure mapping the output adjoint to the input adjoints.

use std::collections::HashMap;
use std::sync::Arc;

use super::tensor as kernels;
use super::{ParamId, ParamStore, Scalar, Tensor, TensorError};
use crate::connection::ConnectionMatrix;

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type GradFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<Var>,
    grad_fn: Option<GradFn<T>>,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Gradient of a scalar loss with respect to each parameter that
/// participated in the computation. Parameters that never touched the loss
/// are simply absent (their gradient is zero).
#[derive(Clone, Debug, Default)]
pub struct Gradients<T: Scalar> {
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            by_param: HashMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn accumulate(&mut self, id: ParamId, grad: Tensor<T>) {
        match self.by_param.get_mut(&id) {
            Some(acc) => acc.add_assign(&grad),
            None => {
                self.by_param.insert(id, grad);
            }
        }
    }

    /// Adds another gradient map into this one (batch accumulation).
    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.by_param {
            self.accumulate(id, g);
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.by_param.values_mut() {
            g.scale_assign(c);
        }
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// Wengert list of recorded operations.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_cache: HashMap<ParamId, Var>,
    inference: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
            inference: false,
        }
    }

    /// Forward-only tape: skips gradient bookkeeping entirely.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
            inference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            grad_fn: None,
            param: None,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same
    /// parameter return the same node so its gradient accumulates in place.
    pub fn param(&mut self, id: ParamId, store: &ParamStore<T>) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let needs = !self.inference && store.value(id).requires_grad();
        self.nodes.push(Node {
            value: store.value(id).clone(),
            parents: Vec::new(),
            grad_fn: None,
            param: needs.then_some(id),
            needs_grad: needs,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_cache.insert(id, v);
        v
    }

    fn push_op(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var>,
        grad_fn: impl Fn(&Tensor<T>) -> Vec<Tensor<T>> + 'static,
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let needs = !self.inference && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            grad_fn: if needs {
                Some(Box::new(grad_fn))
            } else {
                None
            },
            param: None,
            needs_grad: needs,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn want(cond: bool, op: &'static str, detail: impl FnOnce() -> String) -> Result<(), TensorError> {
        if cond {
            Ok(())
        } else {
            Err(TensorError::Shape { op, detail: detail() })
        }
    }

    // -- arithmetic ---------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        Self::want(ta.cols() == tb.rows(), "matmul", || {
            format!("{:?} x {:?}", ta.shape(), tb.shape())
        })?;
        let out = kernels::matmul(&ta, &tb);
        self.push_op("matmul", out, vec![a, b], move |g| {
            vec![
                kernels::matmul(g, &kernels::transpose(&tb)),
                kernels::matmul(&kernels::transpose(&ta), g),
            ]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        Self::want(ta.shape() == tb.shape(), "add", || {
            format!("{:?} + {:?}", ta.shape(), tb.shape())
        })?;
        let out = kernels::zip(&ta, &tb, |x, y| x + y);
        self.push_op("add", out, vec![a, b], |g| vec![g.clone(), g.clone()])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ta = self.value(a).clone();
        let tb = self.value(b).clone();
        Self::want(ta.shape() == tb.shape(), "sub", || {
            format!("{:?} - {:?}", ta.shape(), tb.shape())
        })?;
        let out = kernels::zip(&ta, &tb, |x, y| x - y);
        self.push_op("sub", out, vec![a, b], |g| {
            vec![g.clone(), g.map(|x| -x)]
        })
    }

    /// x (n×d) plus a broadcast row (1×d).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let tx = self.value(x).clone();
        let tr = self.value(row).clone();
        Self::want(tr.rows() == 1 && tr.cols() == tx.cols(), "add_row", || {
            format!("{:?} + row {:?}", tx.shape(), tr.shape())
        })?;
        let out = kernels::add_row(&tx, &tr);
        self.push_op("add_row", out, vec![x, row], |g| {
            vec![g.clone(), kernels::sum_rows(g)]
        })
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * c);
        self.push_op("scale", out, vec![a], move |g| vec![g.map(|x| x * c)])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x + c);
        self.push_op("add_scalar", out, vec![a], |g| vec![g.clone()])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let mask = out.clone();
        self.push_op("relu", out, vec![a], move |g| {
            vec![kernels::zip(g, &mask, |gv, ov| {
                if ov > T::zero() {
                    gv
                } else {
                    T::zero()
                }
            })]
        })
    }

    // -- structure ----------------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        Self::want(!parts.is_empty(), "concat_rows", || "no parts".into())?;
        let cols = self.value(parts[0]).cols();
        let mut row_counts = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            Self::want(t.cols() == cols, "concat_rows", || {
                format!("mixed widths {} vs {}", t.cols(), cols)
            })?;
            row_counts.push(t.rows());
            data.extend_from_slice(t.data());
        }
        let total: usize = row_counts.iter().sum();
        let out = Tensor::from_vec(&[total, cols], data)?;
        self.push_op("concat_rows", out, parts.to_vec(), move |g| {
            let mut grads = Vec::with_capacity(row_counts.len());
            let mut start = 0;
            for &r in &row_counts {
                let slice = g.data()[start * cols..(start + r) * cols].to_vec();
                grads.push(Tensor::from_vec(&[r, cols], slice).unwrap());
                start += r;
            }
            grads
        })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        Self::want(!parts.is_empty(), "concat_cols", || "no parts".into())?;
        let rows = self.value(parts[0]).rows();
        let mut col_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            Self::want(t.rows() == rows, "concat_cols", || {
                format!("mixed heights {} vs {}", t.rows(), rows)
            })?;
            col_counts.push(t.cols());
        }
        let total: usize = col_counts.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_vec(&[rows, total], data)?;
        self.push_op("concat_cols", out, parts.to_vec(), move |g| {
            let mut grads = Vec::with_capacity(col_counts.len());
            let mut offset = 0;
            for &c in &col_counts {
                let mut data = Vec::with_capacity(rows * c);
                for i in 0..rows {
                    data.extend_from_slice(&g.row(i)[offset..offset + c]);
                }
                grads.push(Tensor::from_vec(&[rows, c], data).unwrap());
                offset += c;
            }
            grads
        })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(a).clone();
        Self::want(start + len <= t.rows(), "slice_rows", || {
            format!("rows {}..{} of {:?}", start, start + len, t.shape())
        })?;
        let cols = t.cols();
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(&[len, cols], data)?;
        let full_shape = t.shape().to_vec();
        self.push_op("slice_rows", out, vec![a], move |g| {
            let mut grad = Tensor::zeros(&full_shape);
            grad.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
            vec![grad]
        })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(a).clone();
        Self::want(start + len <= t.cols(), "slice_cols", || {
            format!("cols {}..{} of {:?}", start, start + len, t.shape())
        })?;
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(&[rows, len], data)?;
        self.push_op("slice_cols", out, vec![a], move |g| {
            let mut grad = Tensor::zeros(&[rows, cols]);
            for i in 0..rows {
                grad.data_mut()[i * cols + start..i * cols + start + len]
                    .copy_from_slice(g.row(i));
            }
            vec![grad]
        })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = kernels::transpose(self.value(a));
        self.push_op("transpose", out, vec![a], |g| vec![kernels::transpose(g)])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let orig = self.value(a).shape().to_vec();
        let out = self.value(a).reshaped(shape)?;
        self.push_op("reshape", out, vec![a], move |g| {
            vec![g.reshaped(&orig).unwrap()]
        })
    }

    // -- reductions and nonlinear maps ---------------------------------------

    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a).clone();
        let (n, d) = (t.rows(), t.cols());
        Self::want(n > 0, "mean_rows", || "empty input".into())?;
        let inv = T::from_f64(1.0 / n as f64);
        let mut out = kernels::sum_rows(&t);
        out.scale_assign(inv);
        self.push_op("mean_rows", out, vec![a], move |g| {
            let mut grad = Tensor::zeros(&[n, d]);
            for i in 0..n {
                for j in 0..d {
                    grad.data_mut()[i * d + j] = g.data()[j] * inv;
                }
            }
            vec![grad]
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a).clone();
        let total: T = t.data().iter().cloned().sum();
        let shape = t.shape().to_vec();
        self.push_op("sum_all", Tensor::scalar(total), vec![a], move |g| {
            vec![Tensor::full(&shape, g.item())]
        })
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = kernels::softmax_rows(self.value(a));
        let y = out.clone();
        self.push_op("row_softmax", out, vec![a], move |g| {
            let (n, d) = (y.rows(), y.cols());
            let mut grad = Tensor::zeros(&[n, d]);
            for i in 0..n {
                let yr = y.row(i);
                let gr = g.row(i);
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..d {
                    grad.data_mut()[i * d + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![grad]
        })
    }

    /// Per-row standardization followed by a learned affine: gain and bias
    /// are 1×d rows broadcast over the input rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let tx = self.value(x).clone();
        let tg = self.value(gain).clone();
        let tb = self.value(bias).clone();
        let d = tx.cols();
        Self::want(
            tg.rows() == 1 && tg.cols() == d && tb.rows() == 1 && tb.cols() == d,
            "layer_norm",
            || format!("x {:?}, gain {:?}, bias {:?}", tx.shape(), tg.shape(), tb.shape()),
        )?;
        let (out, xhat, inv_std) = kernels::layer_norm(&tx, &tg, &tb);
        let n = tx.rows();
        self.push_op("layer_norm", out, vec![x, gain, bias], move |g| {
            let dt = T::from_f64(d as f64);
            let mut dx = Tensor::zeros(&[n, d]);
            let mut dgain = Tensor::zeros(&[1, d]);
            let mut dbias = Tensor::zeros(&[1, d]);
            for i in 0..n {
                let gr = g.row(i);
                let xh = xhat.row(i);
                // gd = adjoint through the affine gain
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for j in 0..d {
                    let gd = gr[j] * tg.data()[j];
                    m1 = m1 + gd;
                    m2 = m2 + gd * xh[j];
                }
                m1 = m1 / dt;
                m2 = m2 / dt;
                for j in 0..d {
                    let gd = gr[j] * tg.data()[j];
                    dx.data_mut()[i * d + j] = inv_std[i] * (gd - m1 - xh[j] * m2);
                    dgain.data_mut()[j] = dgain.data()[j] + gr[j] * xh[j];
                    dbias.data_mut()[j] = dbias.data()[j] + gr[j];
                }
            }
            vec![dx, dgain, dbias]
        })
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table).clone();
        for &i in ids {
            if i >= t.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_lookup",
                    index: i,
                    len: t.rows(),
                });
            }
        }
        let out = kernels::gather_rows(&t, ids);
        let ids: Arc<Vec<usize>> = Arc::new(ids.to_vec());
        let shape = t.shape().to_vec();
        self.push_op("embedding_lookup", out, vec![table], move |g| {
            vec![kernels::scatter_rows(g, &ids, &shape)]
        })
    }

    // -- connection-indexed operations ---------------------------------------

    /// out[i][j] = p[i][C_ij] where p holds one column per connection type.
    /// This is the per-pair bias term of biased attention: with
    /// p = Q · biasᵀ, entry (i, j) is q_i · bias[C_ij].
    pub fn gather_pair_bias(&mut self, p: Var, conn: &ConnectionMatrix) -> Result<Var, TensorError> {
        let tp = self.value(p).clone();
        let n = conn.n();
        Self::want(tp.rows() == n, "gather_pair_bias", || {
            format!("p {:?} vs {n} tokens", tp.shape())
        })?;
        let num_types = tp.cols();
        let codes = Arc::new(Self::zero_based_codes(conn, num_types, "gather_pair_bias")?);
        let out = kernels::pair_gather(&tp, &codes, n);
        self.push_op("gather_pair_bias", out, vec![p], move |g| {
            vec![kernels::pair_scatter(g, &codes, num_types)]
        })
    }

    /// out[i][t] = Σ_j a[i][j] over j with C_ij = t. With a the attention
    /// weights, row i holds the total weight given to each connection type,
    /// so out · bias adds Σ_j a_ij c^V[C_ij] to the value aggregation.
    pub fn type_row_sums(
        &mut self,
        a: Var,
        conn: &ConnectionMatrix,
        num_types: usize,
    ) -> Result<Var, TensorError> {
        let ta = self.value(a).clone();
        let n = conn.n();
        Self::want(ta.rows() == n && ta.cols() == n, "type_row_sums", || {
            format!("a {:?} vs {n} tokens", ta.shape())
        })?;
        let codes = Arc::new(Self::zero_based_codes(conn, num_types, "type_row_sums")?);
        let out = kernels::pair_scatter(&ta, &codes, num_types);
        self.push_op("type_row_sums", out, vec![a], move |g| {
            vec![kernels::pair_gather(g, &codes, n)]
        })
    }

    fn zero_based_codes(
        conn: &ConnectionMatrix,
        num_types: usize,
        op: &'static str,
    ) -> Result<Vec<usize>, TensorError> {
        conn.codes()
            .iter()
            .map(|&c| {
                let idx = c as usize - 1;
                if idx < num_types {
                    Ok(idx)
                } else {
                    Err(TensorError::IndexOutOfRange {
                        op,
                        index: idx,
                        len: num_types,
                    })
                }
            })
            .collect()
    }

    // -- losses ---------------------------------------------------------------

    /// Negative log-softmax of the target coordinate of a 1×R logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, TensorError> {
        let tl = self.value(logits).clone();
        Self::want(tl.rows() == 1, "cross_entropy", || {
            format!("logits {:?}", tl.shape())
        })?;
        if target >= tl.cols() {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                len: tl.cols(),
            });
        }
        let row = tl.row(0);
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - row[target];
        let probs = kernels::softmax_rows(&tl);
        self.push_op(
            "cross_entropy",
            Tensor::scalar(loss),
            vec![logits],
            move |g| {
                let scale = g.item();
                let mut grad = probs.clone();
                {
                    let d = grad.data_mut();
                    d[target] = d[target] - T::one();
                    for v in d.iter_mut() {
                        *v = *v * scale;
                    }
                }
                vec![grad]
            },
        )
    }

    // -- reverse pass -----------------------------------------------------------

    /// Propagates from a scalar loss back to every parameter leaf, returning
    /// the per-parameter gradients. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        let mut grads = Gradients::new();
        for i in (0..=loss.0).rev() {
            let Some(adj) = adjoints[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Some(pid) = node.param {
                grads.accumulate(pid, adj.clone());
            }
            if let Some(f) = &node.grad_fn {
                let parent_grads = f(&adj);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                let parents = node.parents.clone();
                for (p, pg) in parents.into_iter().zip(parent_grads) {
                    if !self.nodes[p.0].needs_grad {
                        continue;
                    }
                    match &mut adjoints[p.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
        }
        self.nodes.clear();
        self.param_cache.clear();
        Ok(grads)
    }
}
