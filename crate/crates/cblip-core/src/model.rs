//! Model assembly: embedding tables, token sequences, and scoring heads.
//!
//! Inductive mode represents entities purely by their role relative to the
//! target triple (head / tail / other), so the parameter count is
//! independent of the entity vocabulary and unseen entities need no new
//! parameters. Transductive mode swaps roles for per-entity embeddings,
//! draws neighbors from each target entity separately with an origin marker
//! per side, and predicts a distribution over relations instead of a scalar
//! score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connection::ConnectionMatrix;
use crate::context::{extract_context, extract_context_sampled, Context, MergeMode, Role};
use crate::encoder::{Encoder, EncoderConfig};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};

/// How the three component embeddings of a triple are aggregated before the
/// input projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    Concat,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Inductive,
    Transductive,
}

/// Structural configuration of the model (everything the forward pass needs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: TaskMode,
    /// Width of role / relation / entity embeddings.
    pub d: usize,
    pub agg: AggMode,
    /// Ego-graph radius.
    pub k: u32,
    /// Neighbor cap (per side in transductive mode).
    pub m: usize,
    pub merge_mode: MergeMode,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    fn agg_width(&self) -> usize {
        match self.agg {
            AggMode::Concat => 3 * self.d,
            AggMode::Mean => self.d,
        }
    }
}

/// Parameter handles for all embedding tables and output heads. Optional
/// entries exist only in the mode that uses them.
#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    /// |R|×d relation embeddings.
    pub relation_emb: ParamId,
    /// 3×d role embeddings (inductive).
    pub role_emb: Option<ParamId>,
    /// |E|×d entity embeddings (transductive).
    pub entity_emb: Option<ParamId>,
    /// 2×d_model side markers for head- vs tail-side neighbors (transductive).
    pub origin_emb: Option<ParamId>,
    /// d×d_model projection for the relation-less target pair (transductive).
    pub pair_proj: Option<ParamId>,
    /// 1×d_model marker added to the target token.
    pub target_marker: ParamId,
    /// agg_width×d_model input projection.
    pub input_proj: ParamId,
    /// d_model×1 score head (inductive).
    pub w_out: Option<ParamId>,
    pub b_out: Option<ParamId>,
    /// d_model×|R| relation head (transductive).
    pub w_rel: Option<ParamId>,
    pub b_rel: Option<ParamId>,
}

/// The assembled model: parameters, encoder, and scoring entry points.
#[derive(Clone)]
pub struct CblipModel<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub tables: EmbeddingTables,
    num_relations: usize,
}

impl<T: Scalar> CblipModel<T> {
    pub fn new_inductive(config: ModelConfig, num_relations: usize, seed: u64) -> Self {
        assert_eq!(config.mode, TaskMode::Inductive);
        let mut rng = init_rng(seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let dm = config.encoder.d_model;
        let tables = EmbeddingTables {
            relation_emb: store.add("relation_emb", Tensor::xavier(num_relations, d, &mut rng)),
            role_emb: Some(store.add("role_emb", Tensor::xavier(3, d, &mut rng))),
            entity_emb: None,
            origin_emb: None,
            pair_proj: None,
            target_marker: store.add("target_marker", Tensor::xavier(1, dm, &mut rng)),
            input_proj: store.add("input_proj", Tensor::xavier(config.agg_width(), dm, &mut rng)),
            w_out: Some(store.add("w_out", Tensor::xavier(dm, 1, &mut rng))),
            b_out: Some(store.add("b_out", Tensor::zeros(&[1, 1]))),
            w_rel: None,
            b_rel: None,
        };
        let encoder = Encoder::init(config.encoder, &mut store, &mut rng);
        CblipModel {
            config,
            store,
            encoder,
            tables,
            num_relations,
        }
    }

    pub fn new_transductive(
        config: ModelConfig,
        num_relations: usize,
        num_entities: usize,
        seed: u64,
    ) -> Self {
        assert_eq!(config.mode, TaskMode::Transductive);
        let mut rng = init_rng(seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let dm = config.encoder.d_model;
        let tables = EmbeddingTables {
            relation_emb: store.add("relation_emb", Tensor::xavier(num_relations, d, &mut rng)),
            role_emb: None,
            entity_emb: Some(store.add("entity_emb", Tensor::xavier(num_entities, d, &mut rng))),
            origin_emb: Some(store.add("origin_emb", Tensor::xavier(2, dm, &mut rng))),
            pair_proj: Some(store.add("pair_proj", Tensor::xavier(d, dm, &mut rng))),
            target_marker: store.add("target_marker", Tensor::xavier(1, dm, &mut rng)),
            input_proj: store.add("input_proj", Tensor::xavier(config.agg_width(), dm, &mut rng)),
            w_out: None,
            b_out: None,
            w_rel: Some(store.add("w_rel", Tensor::xavier(dm, num_relations, &mut rng))),
            b_rel: Some(store.add("b_rel", Tensor::zeros(&[1, num_relations]))),
        };
        let encoder = Encoder::init(config.encoder, &mut store, &mut rng);
        CblipModel {
            config,
            store,
            encoder,
            tables,
            num_relations,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Aggregates three d-wide component rows into one d_model token.
    fn aggregate(&self, tape: &mut Tape<T>, parts: [Var; 3]) -> Result<Var, TensorError> {
        let proj = tape.param(self.tables.input_proj, &self.store);
        let agg = match self.config.agg {
            AggMode::Concat => tape.concat_cols(&parts)?,
            AggMode::Mean => {
                let stacked = tape.concat_rows(&parts)?;
                tape.mean_rows(stacked)?
            }
        };
        tape.matmul(agg, proj)
    }

    /// Token for one triple in inductive mode: A(ROLE(e1), r, ROLE(e2))
    /// projected to d_model.
    pub fn embed_triple(
        &self,
        tape: &mut Tape<T>,
        rel: RelationId,
        head_role: Role,
        tail_role: Role,
    ) -> Result<Var, TensorError> {
        let roles = tape.param(
            self.tables.role_emb.expect("inductive role table"),
            &self.store,
        );
        let rels = tape.param(self.tables.relation_emb, &self.store);
        let e1 = tape.embedding_lookup(roles, &[head_role.index()])?;
        let r = tape.embedding_lookup(rels, &[rel.index()])?;
        let e2 = tape.embedding_lookup(roles, &[tail_role.index()])?;
        self.aggregate(tape, [e1, r, e2])
    }

    /// Token for one triple in transductive mode (origin marker added by the
    /// sequence builder).
    fn embed_triple_entities(
        &self,
        tape: &mut Tape<T>,
        head: EntityId,
        rel: RelationId,
        tail: EntityId,
    ) -> Result<Var, TensorError> {
        let ents = tape.param(
            self.tables.entity_emb.expect("transductive entity table"),
            &self.store,
        );
        let rels = tape.param(self.tables.relation_emb, &self.store);
        let e1 = tape.embedding_lookup(ents, &[head.index()])?;
        let r = tape.embedding_lookup(rels, &[rel.index()])?;
        let e2 = tape.embedding_lookup(ents, &[tail.index()])?;
        self.aggregate(tape, [e1, r, e2])
    }

    /// Builds the token matrix (N×d_model) and connection matrix for an
    /// inductive context: target token first (with the target marker added),
    /// then the neighbors in context order.
    pub fn build_sequence_inductive(
        &self,
        tape: &mut Tape<T>,
        ctx: &Context,
    ) -> Result<(Var, ConnectionMatrix), TensorError> {
        let target = ctx.target;
        let head_role = Role::of(target.head, target.head, target.tail);
        let tail_role = Role::of(target.tail, target.head, target.tail);
        let base = self.embed_triple(tape, target.rel, head_role, tail_role)?;
        let marker = tape.param(self.tables.target_marker, &self.store);
        let target_token = tape.add(base, marker)?;

        let mut tokens = vec![target_token];
        let mut triples = vec![target];
        for n in &ctx.neighbors {
            tokens.push(self.embed_triple(tape, n.triple.rel, n.head_role, n.tail_role)?);
            triples.push(n.triple);
        }
        let seq = tape.concat_rows(&tokens)?;
        Ok((seq, ConnectionMatrix::from_triples(&triples)))
    }

    /// Extracts the context for a scored triple. The triple itself is always
    /// excluded from its own neighborhood; `sampler` enables seeded sampling
    /// within the last partially included hop (training only).
    pub fn context_for(
        &self,
        graph: &KnowledgeGraph,
        triple: Triple,
        sampler: Option<&mut ChaCha8Rng>,
    ) -> Context {
        match sampler {
            Some(rng) => extract_context_sampled(
                graph,
                triple.head,
                triple.tail,
                Some(triple),
                self.config.k,
                self.config.m,
                self.config.merge_mode,
                rng,
            ),
            None => extract_context(
                graph,
                triple.head,
                triple.tail,
                Some(triple),
                self.config.k,
                self.config.m,
                self.config.merge_mode,
            ),
        }
    }

    /// Scalar plausibility score of a context, on the tape.
    pub fn score_context(&self, tape: &mut Tape<T>, ctx: &Context) -> Result<Var, TensorError> {
        let (seq, conn) = self.build_sequence_inductive(tape, ctx)?;
        let encoded = self.encoder.encode(tape, &self.store, seq, &conn)?;
        let target_out = tape.slice_rows(encoded, 0, 1)?;
        let w = tape.param(self.tables.w_out.expect("inductive score head"), &self.store);
        let b = tape.param(self.tables.b_out.expect("inductive score head"), &self.store);
        let s = tape.matmul(target_out, w)?;
        tape.add(s, b)
    }

    /// Score with gradient tracking; context extracted from `graph`.
    pub fn score_var(
        &self,
        tape: &mut Tape<T>,
        graph: &KnowledgeGraph,
        triple: Triple,
        sampler: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, TensorError> {
        let ctx = self.context_for(graph, triple, sampler);
        self.score_context(tape, &ctx)
    }

    /// Forward-only score.
    pub fn score_inductive(
        &self,
        graph: &KnowledgeGraph,
        triple: Triple,
    ) -> Result<T, TensorError> {
        let mut tape = Tape::inference();
        let s = self.score_var(&mut tape, graph, triple, None)?;
        Ok(tape.value(s).item())
    }

    /// Builds the transductive token sequence for a target pair (h, t):
    /// pair token first, then up to m neighbors from each side with the
    /// side's origin marker added after projection.
    pub fn build_sequence_transductive(
        &self,
        tape: &mut Tape<T>,
        graph: &KnowledgeGraph,
        h: EntityId,
        t: EntityId,
        exclude: Option<Triple>,
    ) -> Result<(Var, ConnectionMatrix), TensorError> {
        let ents = tape.param(
            self.tables.entity_emb.expect("transductive entity table"),
            &self.store,
        );
        if h.index() >= self.store.value(self.tables.entity_emb.unwrap()).rows()
            || t.index() >= self.store.value(self.tables.entity_emb.unwrap()).rows()
        {
            return Err(TensorError::IndexOutOfRange {
                op: "build_sequence_transductive",
                index: h.index().max(t.index()),
                len: self.store.value(self.tables.entity_emb.unwrap()).rows(),
            });
        }
        // Pair token: mean of the two entity embeddings, projected, marked.
        let pair = tape.embedding_lookup(ents, &[h.index(), t.index()])?;
        let mean = tape.mean_rows(pair)?;
        let proj = tape.param(self.tables.pair_proj.expect("pair projection"), &self.store);
        let base = tape.matmul(mean, proj)?;
        let marker = tape.param(self.tables.target_marker, &self.store);
        let pair_token = tape.add(base, marker)?;

        let origin = tape.param(self.tables.origin_emb.expect("origin table"), &self.store);
        let mut tokens = vec![pair_token];
        // The pair participates in connection typing as the relation-less
        // pseudo-triple (h, t).
        let mut endpoints = vec![(h.0, t.0)];
        for (side, anchor) in [(0usize, h), (1usize, t)] {
            let ctx = extract_context(
                graph,
                anchor,
                anchor,
                exclude,
                self.config.k,
                self.config.m,
                self.config.merge_mode,
            );
            let side_marker = tape.embedding_lookup(origin, &[side])?;
            for n in &ctx.neighbors {
                let tok =
                    self.embed_triple_entities(tape, n.triple.head, n.triple.rel, n.triple.tail)?;
                let tok = tape.add(tok, side_marker)?;
                tokens.push(tok);
                endpoints.push((n.triple.head.0, n.triple.tail.0));
            }
        }
        let seq = tape.concat_rows(&tokens)?;
        Ok((seq, ConnectionMatrix::build(&endpoints)))
    }

    /// Unnormalized relation logits (1×|R|) for the pair (h, t). Softmax is
    /// applied in the loss during training and at inference when a
    /// distribution is needed; ranking uses the raw logits directly.
    pub fn relation_logits_var(
        &self,
        tape: &mut Tape<T>,
        graph: &KnowledgeGraph,
        h: EntityId,
        t: EntityId,
        exclude: Option<Triple>,
    ) -> Result<Var, TensorError> {
        let (seq, conn) = self.build_sequence_transductive(tape, graph, h, t, exclude)?;
        let encoded = self.encoder.encode(tape, &self.store, seq, &conn)?;
        let target_out = tape.slice_rows(encoded, 0, 1)?;
        let w = tape.param(self.tables.w_rel.expect("relation head"), &self.store);
        let b = tape.param(self.tables.b_rel.expect("relation head"), &self.store);
        let logits = tape.matmul(target_out, w)?;
        tape.add(logits, b)
    }

    /// Forward-only relation logits.
    pub fn relation_logits(
        &self,
        graph: &KnowledgeGraph,
        h: EntityId,
        t: EntityId,
        exclude: Option<Triple>,
    ) -> Result<Vec<T>, TensorError> {
        let mut tape = Tape::inference();
        let v = self.relation_logits_var(&mut tape, graph, h, t, exclude)?;
        Ok(tape.value(v).data().to_vec())
    }
}

/// Parameter-initialization stream: one fixed substream of the run seed.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x696e6974); // "init"
    rng
}
