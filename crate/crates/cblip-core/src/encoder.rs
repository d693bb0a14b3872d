//! Connection-biased Transformer encoder.
//!
//! Multi-head attention where each (query, key) pair is shifted by learned
//! bias vectors selected by the pair's connection type: the similarity
//! becomes (W^Q x_i)·(W^K x_j + c^K[C_ij]) / d_y and the aggregated value
//! picks up c^V[C_ij] alongside W^V x_j. The per-pair terms never need an
//! N²×d materialization: q_i · c^K[τ] is one N×7 matmul gathered per pair,
//! and the value-side correction is the attention mass per type times the
//! 7×d_h bias table.
//!
//! There is no positional encoding; all structural information flows through
//! the connection matrix, which makes the encoder permutation-equivariant.
//! Sequences are short (m+1 tokens), so attention keeps its plain O(N²·d)
//! cost profile.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::connection::{ConnectionMatrix, NUM_CONNECTION_TYPES};
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};

/// Attention denominator: the head dimension itself or its square root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnScale {
    /// Divide similarities by d_y (the per-head width). Default.
    Dim,
    /// Conventional 1/sqrt(d_y) scaling.
    SqrtDim,
}

/// Whether attention carries connection biases or runs vanilla.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    Connection,
    Vanilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub attn_scale: AttnScale,
    pub bias_mode: BiasMode,
}

impl EncoderConfig {
    pub fn new(d_model: usize, heads: usize, layers: usize) -> Self {
        EncoderConfig {
            d_model,
            heads,
            layers,
            d_ff: 2 * d_model,
            attn_scale: AttnScale::Dim,
            bias_mode: BiasMode::Connection,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Parameter handles for one encoder layer. `key_bias`/`value_bias` hold one
/// 7×d_h table per head and are empty in vanilla mode.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub key_bias: Vec<ParamId>,
    pub value_bias: Vec<ParamId>,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Encoder stack: parameter handles plus the forward pass.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<LayerParams>,
}

impl Encoder {
    /// Registers all encoder parameters in `store`. Projections are Xavier
    /// initialized; connection biases start at zero so the initial forward
    /// pass is exactly vanilla attention.
    pub fn init<T: Scalar, R: Rng>(
        config: EncoderConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        assert!(config.layers >= 1, "encoder needs at least one layer");
        assert!(
            config.d_model % config.heads == 0,
            "d_model {} not divisible by heads {}",
            config.d_model,
            config.heads
        );
        let d = config.d_model;
        let dh = config.head_dim();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut key_bias = Vec::new();
            let mut value_bias = Vec::new();
            if config.bias_mode == BiasMode::Connection {
                for h in 0..config.heads {
                    key_bias.push(store.add(
                        format!("enc.l{l}.h{h}.key_bias"),
                        Tensor::zeros(&[NUM_CONNECTION_TYPES, dh]),
                    ));
                    value_bias.push(store.add(
                        format!("enc.l{l}.h{h}.value_bias"),
                        Tensor::zeros(&[NUM_CONNECTION_TYPES, dh]),
                    ));
                }
            }
            layers.push(LayerParams {
                w_q: store.add(format!("enc.l{l}.w_q"), Tensor::xavier(d, d, rng)),
                w_k: store.add(format!("enc.l{l}.w_k"), Tensor::xavier(d, d, rng)),
                w_v: store.add(format!("enc.l{l}.w_v"), Tensor::xavier(d, d, rng)),
                w_o: store.add(format!("enc.l{l}.w_o"), Tensor::xavier(d, d, rng)),
                key_bias,
                value_bias,
                ffn_w1: store.add(
                    format!("enc.l{l}.ffn_w1"),
                    Tensor::xavier(d, config.d_ff, rng),
                ),
                ffn_b1: store.add(format!("enc.l{l}.ffn_b1"), Tensor::zeros(&[1, config.d_ff])),
                ffn_w2: store.add(
                    format!("enc.l{l}.ffn_w2"),
                    Tensor::xavier(config.d_ff, d, rng),
                ),
                ffn_b2: store.add(format!("enc.l{l}.ffn_b2"), Tensor::zeros(&[1, d])),
                ln1_gain: store.add(format!("enc.l{l}.ln1_gain"), Tensor::full(&[1, d], T::one())),
                ln1_bias: store.add(format!("enc.l{l}.ln1_bias"), Tensor::zeros(&[1, d])),
                ln2_gain: store.add(format!("enc.l{l}.ln2_gain"), Tensor::full(&[1, d], T::one())),
                ln2_bias: store.add(format!("enc.l{l}.ln2_bias"), Tensor::zeros(&[1, d])),
            });
        }
        Encoder { config, layers }
    }

    fn denom<T: Scalar>(&self) -> T {
        let dh = self.config.head_dim() as f64;
        match self.config.attn_scale {
            AttnScale::Dim => T::from_f64(dh),
            AttnScale::SqrtDim => T::from_f64(dh.sqrt()),
        }
    }

    /// One attention head over the input X (N×d_model): projects, slices the
    /// head's columns, and returns N×d_h.
    pub fn cb_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        conn: &ConnectionMatrix,
        layer: usize,
        head: usize,
    ) -> Result<Var, TensorError> {
        let params = &self.layers[layer];
        let w_q = tape.param(params.w_q, store);
        let w_k = tape.param(params.w_k, store);
        let w_v = tape.param(params.w_v, store);
        let q_full = tape.matmul(x, w_q)?;
        let k_full = tape.matmul(x, w_k)?;
        let v_full = tape.matmul(x, w_v)?;
        self.attention_from_projections(tape, store, q_full, k_full, v_full, conn, layer, head)
    }

    /// Head computation given the already-projected Q/K/V (each N×d_model).
    #[allow(clippy::too_many_arguments)]
    fn attention_from_projections<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        q_full: Var,
        k_full: Var,
        v_full: Var,
        conn: &ConnectionMatrix,
        layer: usize,
        head: usize,
    ) -> Result<Var, TensorError> {
        let params = &self.layers[layer];
        let dh = self.config.head_dim();
        let offset = head * dh;
        let q = tape.slice_cols(q_full, offset, dh)?;
        let k = tape.slice_cols(k_full, offset, dh)?;
        let v = tape.slice_cols(v_full, offset, dh)?;

        let k_t = tape.transpose(k)?;
        let mut scores = tape.matmul(q, k_t)?;
        let biased = self.config.bias_mode == BiasMode::Connection;
        if biased {
            // q_i · c^K[τ] for every type at once, gathered per pair.
            let ck = tape.param(params.key_bias[head], store);
            let ck_t = tape.transpose(ck)?;
            let per_type = tape.matmul(q, ck_t)?;
            let bias = tape.gather_pair_bias(per_type, conn)?;
            scores = tape.add(scores, bias)?;
        }
        let inv = T::one() / self.denom::<T>();
        let alpha = tape.scale(scores, inv)?;
        let weights = tape.row_softmax(alpha)?;

        let mut out = tape.matmul(weights, v)?;
        if biased {
            let cv = tape.param(params.value_bias[head], store);
            let mass = tape.type_row_sums(weights, conn, NUM_CONNECTION_TYPES)?;
            let extra = tape.matmul(mass, cv)?;
            out = tape.add(out, extra)?;
        }
        Ok(out)
    }

    /// Post-norm block: X1 = LN(X + MultiHead(X)), out = LN(X1 + FFN(X1)).
    pub fn encoder_layer<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        conn: &ConnectionMatrix,
        layer: usize,
    ) -> Result<Var, TensorError> {
        let params = &self.layers[layer];
        let w_q = tape.param(params.w_q, store);
        let w_k = tape.param(params.w_k, store);
        let w_v = tape.param(params.w_v, store);
        let q_full = tape.matmul(x, w_q)?;
        let k_full = tape.matmul(x, w_k)?;
        let v_full = tape.matmul(x, w_v)?;

        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            heads.push(self.attention_from_projections(
                tape, store, q_full, k_full, v_full, conn, layer, h,
            )?);
        }
        let concat = tape.concat_cols(&heads)?;
        let w_o = tape.param(params.w_o, store);
        let attn = tape.matmul(concat, w_o)?;

        let res1 = tape.add(x, attn)?;
        let ln1_g = tape.param(params.ln1_gain, store);
        let ln1_b = tape.param(params.ln1_bias, store);
        let x1 = tape.layer_norm(res1, ln1_g, ln1_b)?;

        let w1 = tape.param(params.ffn_w1, store);
        let b1 = tape.param(params.ffn_b1, store);
        let w2 = tape.param(params.ffn_w2, store);
        let b2 = tape.param(params.ffn_b2, store);
        let h = tape.matmul(x1, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, w2)?;
        let ffn = tape.add_row(h, b2)?;

        let res2 = tape.add(x1, ffn)?;
        let ln2_g = tape.param(params.ln2_gain, store);
        let ln2_b = tape.param(params.ln2_bias, store);
        tape.layer_norm(res2, ln2_g, ln2_b)
    }

    /// Full stack: applies every layer in order. Output shape equals input
    /// shape (N×d_model).
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        conn: &ConnectionMatrix,
    ) -> Result<Var, TensorError> {
        let mut h = x;
        for l in 0..self.config.layers {
            h = self.encoder_layer(tape, store, h, conn, l)?;
        }
        Ok(h)
    }
}
