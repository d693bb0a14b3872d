//! Training: negative sampling, margin and cross-entropy losses, and the
//! epoch loop with per-epoch validation and best-checkpoint tracking.
//!
//! All randomness flows from one seed through named substreams (parameter
//! init, epoch shuffling, negative sampling, evaluation draws), so a run is
//! reproducible bit-for-bit. Batch items are scored and differentiated in
//! parallel, but gradients are reduced in batch order, which keeps the
//! arithmetic identical run to run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{Context, MergeMode};
use crate::encoder::{AttnScale, BiasMode, EncoderConfig};
use crate::eval::{
    evaluate_entity_prediction, evaluate_relation_prediction, known_triples, EvalOptions,
};
use crate::kg::{InductiveDataset, Triple, TransductiveDataset};
use crate::model::{AggMode, CblipModel, ModelConfig, TaskMode};
use crate::numerics::{Adam, Gradients, ParamStore, Scalar, Tape, TensorError};

/// Named substreams of the run seed.
pub mod streams {
    pub const SHUFFLE: u64 = 0x73687566; // "shuf"
    pub const NEGATIVE: u64 = 0x6e656773; // "negs"
    pub const CONTEXT: u64 = 0x63747874; // "ctxt"
}

/// Seeded RNG on a named substream.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Neighbor tie-breaking within the last partially included hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborSampling {
    /// Ascending triple id (fully deterministic).
    Deterministic,
    /// Seeded uniform sampling, training-time context extraction only.
    Seeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TaskMode,
    /// Ego-graph radius.
    pub k: u32,
    /// Neighbor cap (per side in transductive mode).
    pub m: usize,
    /// Embedding width for roles / relations / entities.
    pub d: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub agg: AggMode,
    pub merge_mode: MergeMode,
    /// Margin for the ranking loss (score units).
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_negatives: usize,
    pub attn_scale: AttnScale,
    pub bias_mode: BiasMode,
    pub neighbor_sampling: NeighborSampling,
    /// Filtered corruption sampling at evaluation time.
    pub eval_filter: bool,
    pub negatives_per_positive: usize,
    /// Early stopping: epochs without validation improvement.
    pub patience: usize,
}

impl TrainConfig {
    pub fn inductive_defaults() -> Self {
        TrainConfig {
            mode: TaskMode::Inductive,
            k: 2,
            m: 24,
            d: 32,
            d_model: 64,
            heads: 2,
            layers: 2,
            d_ff: 128,
            agg: AggMode::Concat,
            merge_mode: MergeMode::Union,
            gamma: 1.0,
            lr: 0.001,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            eval_negatives: 50,
            attn_scale: AttnScale::Dim,
            bias_mode: BiasMode::Connection,
            neighbor_sampling: NeighborSampling::Deterministic,
            eval_filter: true,
            negatives_per_positive: 1,
            patience: 20,
        }
    }

    pub fn transductive_defaults() -> Self {
        TrainConfig {
            mode: TaskMode::Transductive,
            gamma: 1.0,
            ..Self::inductive_defaults()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("k", self.k as usize),
            ("d", self.d),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_negatives", self.eval_negatives),
            ("negatives_per_positive", self.negatives_per_positive),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(ConfigError::new(field, "must be positive"));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(ConfigError::new("d_model", "must be divisible by heads"));
        }
        if !(self.lr > 0.0) {
            return Err(ConfigError::new("lr", "must be positive"));
        }
        if self.mode == TaskMode::Inductive && !(self.gamma > 0.0) {
            return Err(ConfigError::new(
                "gamma",
                "must be positive in inductive mode",
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            d: self.d,
            agg: self.agg,
            k: self.k,
            m: self.m,
            merge_mode: self.merge_mode,
            encoder: EncoderConfig {
                d_model: self.d_model,
                heads: self.heads,
                layers: self.layers,
                d_ff: self.d_ff,
                attn_scale: self.attn_scale,
                bias_mode: self.bias_mode,
            },
        }
    }
}

#[derive(Error, Debug)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl ConfigError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError {
            field,
            message: message.into(),
        }
    }
}

#[derive(Error, Debug)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("score lists differ in length: {pos} positives vs {neg} negatives")]
    LengthMismatch { pos: usize, neg: usize },
    #[error("relation id {id} out of range for {num_relations} relations")]
    RelationOutOfRange { id: usize, num_relations: usize },
}

/// Corrupts the head or the tail (fair coin) with a uniform entity different
/// from the one replaced. No filtering against known true triples here: raw
/// negatives are part of the training protocol.
pub fn sample_negative<R: Rng + ?Sized>(p: Triple, num_entities: usize, rng: &mut R) -> Triple {
    assert!(num_entities >= 2, "need at least two entities to corrupt");
    let corrupt_head = rng.gen::<bool>();
    let original = if corrupt_head { p.head.0 } else { p.tail.0 };
    let mut e = rng.gen_range(0..num_entities as u32 - 1);
    if e >= original {
        e += 1;
    }
    if corrupt_head {
        Triple {
            head: crate::kg::EntityId(e),
            ..p
        }
    } else {
        Triple {
            tail: crate::kg::EntityId(e),
            ..p
        }
    }
}

/// Σ max(0, neg_i − pos_i + γ) over paired score lists.
pub fn margin_loss<T: Scalar>(pos: &[T], neg: &[T], gamma: T) -> Result<T, TrainError> {
    if pos.len() != neg.len() {
        return Err(TrainError::LengthMismatch {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    Ok(pos
        .iter()
        .zip(neg)
        .map(|(&p, &n)| (n - p + gamma).max(T::zero()))
        .sum())
}

/// Mean negative log-softmax of the true relation over a batch of logit rows.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &[Vec<T>],
    targets: &[usize],
) -> Result<T, TrainError> {
    if logits.len() != targets.len() {
        return Err(TrainError::LengthMismatch {
            pos: logits.len(),
            neg: targets.len(),
        });
    }
    let mut total = T::zero();
    for (row, &target) in logits.iter().zip(targets) {
        if target >= row.len() {
            return Err(TrainError::RelationOutOfRange {
                id: target,
                num_relations: row.len(),
            });
        }
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total = total + lse - row[target];
    }
    Ok(total / T::from_f64(logits.len() as f64))
}

/// One line of the metrics stream. Values that do not apply to the split
/// are null. `seconds` is filled on live progress streams only; persisted
/// records keep it null so same-seed runs serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub mrr: Option<f64>,
    pub hits1: Option<f64>,
    pub hits3: Option<f64>,
    pub hits10: Option<f64>,
    pub seconds: Option<f64>,
}

pub enum TrainData<'a> {
    Inductive(&'a InductiveDataset),
    Transductive(&'a TransductiveDataset),
}

pub struct TrainOutcome<T: Scalar> {
    /// Model with the best-validation parameters restored.
    pub model: CblipModel<T>,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mrr: f64,
}

/// Runs the full training loop. `progress` receives each record as it is
/// produced together with the wall-clock seconds the phase took (timing is
/// reporting-only and never enters the persisted metrics).
pub fn train<T: Scalar>(
    data: &TrainData,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord, f64),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    match data {
        TrainData::Inductive(ds) => train_inductive(ds, cfg, progress),
        TrainData::Transductive(ds) => train_transductive(ds, cfg, progress),
    }
}

struct BestTracker<T: Scalar> {
    store: ParamStore<T>,
    epoch: usize,
    mrr: f64,
    stale: usize,
}

impl<T: Scalar> BestTracker<T> {
    fn new(store: ParamStore<T>) -> Self {
        BestTracker {
            store,
            epoch: 0,
            mrr: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    /// Returns true when patience is exhausted.
    fn update(&mut self, epoch: usize, mrr: f64, store: &ParamStore<T>, patience: usize) -> bool {
        if mrr > self.mrr {
            self.mrr = mrr;
            self.epoch = epoch;
            self.store = store.clone();
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= patience
    }
}

fn train_inductive<T: Scalar>(
    ds: &InductiveDataset,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord, f64),
) -> Result<TrainOutcome<T>, TrainError> {
    let graph = &ds.train_graph;
    if graph.num_triples() == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model: CblipModel<T> =
        CblipModel::new_inductive(cfg.model_config(), graph.num_relations(), cfg.seed);
    let mut adam = Adam::new(&model.store, T::from_f64(cfg.lr));
    let mut shuffle_rng = substream(cfg.seed, streams::SHUFFLE);
    let mut neg_rng = substream(cfg.seed, streams::NEGATIVE);
    let mut ctx_rng = substream(cfg.seed, streams::CONTEXT);

    let known = known_triples(&[graph.triples(), &ds.valid_triples]);
    let gamma = T::from_f64(cfg.gamma);
    let mut best = BestTracker::new(model.store.clone());
    let mut records = Vec::new();

    let num_train = graph.num_triples();
    let mut order: Vec<usize> = (0..num_train).collect();

    for epoch in 0..cfg.epochs {
        let start = std::time::Instant::now();
        shuffle(&mut order, &mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            // Contexts and negatives are drawn sequentially so the random
            // streams are independent of scoring parallelism.
            let items: Vec<(Context, Vec<Context>)> = chunk
                .iter()
                .map(|&idx| {
                    let pos = graph.triples()[idx];
                    let pos_ctx = extract(&model, graph, pos, cfg, &mut ctx_rng);
                    let negs = (0..cfg.negatives_per_positive)
                        .map(|_| {
                            let neg = sample_negative(pos, graph.num_entities(), &mut neg_rng);
                            extract(&model, graph, neg, cfg, &mut ctx_rng)
                        })
                        .collect();
                    (pos_ctx, negs)
                })
                .collect();

            let results: Result<Vec<(f64, Gradients<T>)>, TensorError> = items
                .par_iter()
                .map(|(pos_ctx, neg_ctxs)| {
                    let mut tape = Tape::new();
                    let pos_score = model.score_context(&mut tape, pos_ctx)?;
                    let mut loss = None;
                    for neg_ctx in neg_ctxs {
                        let neg_score = model.score_context(&mut tape, neg_ctx)?;
                        let diff = tape.sub(neg_score, pos_score)?;
                        let margin = tape.add_scalar(diff, gamma)?;
                        let hinge = tape.relu(margin)?;
                        loss = Some(match loss {
                            None => hinge,
                            Some(acc) => tape.add(acc, hinge)?,
                        });
                    }
                    let loss = loss.expect("at least one negative per positive");
                    let value = tape.value(loss).item().to_f64();
                    let grads = tape.backward(loss)?;
                    Ok((value, grads))
                })
                .collect();

            let mut batch_grads = Gradients::new();
            let mut n_items = 0usize;
            for (value, grads) in results? {
                epoch_loss += value;
                batch_grads.merge(grads);
                n_items += 1;
            }
            batch_grads.scale(T::from_f64(1.0 / n_items as f64));
            adam.step(&mut model.store, &batch_grads);
        }

        let train_record = EpochRecord {
            epoch,
            split: "train".into(),
            loss: Some(epoch_loss / num_train as f64),
            mrr: None,
            hits1: None,
            hits3: None,
            hits10: None,
            seconds: None,
        };
        progress(&train_record, start.elapsed().as_secs_f64());
        records.push(train_record);

        let start = std::time::Instant::now();
        let report = evaluate_entity_prediction(
            &model,
            graph,
            &ds.valid_triples,
            &known,
            &EvalOptions {
                negatives: cfg.eval_negatives,
                filter: cfg.eval_filter,
                cutoffs: vec![1, 3, 10],
                seed: cfg.seed.wrapping_add(epoch as u64),
            },
        )?;
        let valid_record = EpochRecord {
            epoch,
            split: "valid".into(),
            loss: None,
            mrr: Some(report.pooled.mrr),
            hits1: Some(report.pooled.hits(1)),
            hits3: Some(report.pooled.hits(3)),
            hits10: Some(report.pooled.hits(10)),
            seconds: None,
        };
        progress(&valid_record, start.elapsed().as_secs_f64());
        records.push(valid_record);

        if best.update(epoch, report.pooled.mrr, &model.store, cfg.patience) {
            break;
        }
    }

    model.store = best.store.clone();
    Ok(TrainOutcome {
        model,
        records,
        best_epoch: best.epoch,
        best_val_mrr: best.mrr,
    })
}

fn train_transductive<T: Scalar>(
    ds: &TransductiveDataset,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord, f64),
) -> Result<TrainOutcome<T>, TrainError> {
    let graph = &ds.graph;
    if graph.num_triples() == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model: CblipModel<T> = CblipModel::new_transductive(
        cfg.model_config(),
        graph.num_relations(),
        graph.num_entities(),
        cfg.seed,
    );
    let mut adam = Adam::new(&model.store, T::from_f64(cfg.lr));
    let mut shuffle_rng = substream(cfg.seed, streams::SHUFFLE);
    let mut best = BestTracker::new(model.store.clone());
    let mut records = Vec::new();

    let num_train = graph.num_triples();
    let mut order: Vec<usize> = (0..num_train).collect();

    for epoch in 0..cfg.epochs {
        let start = std::time::Instant::now();
        shuffle(&mut order, &mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let results: Result<Vec<(f64, Gradients<T>)>, TensorError> = chunk
                .par_iter()
                .map(|&idx| {
                    let triple = graph.triples()[idx];
                    let mut tape = Tape::new();
                    let logits = model.relation_logits_var(
                        &mut tape,
                        graph,
                        triple.head,
                        triple.tail,
                        Some(triple),
                    )?;
                    let loss = tape.cross_entropy(logits, triple.rel.index())?;
                    let value = tape.value(loss).item().to_f64();
                    let grads = tape.backward(loss)?;
                    Ok((value, grads))
                })
                .collect();

            let mut batch_grads = Gradients::new();
            let mut n_items = 0usize;
            for (value, grads) in results? {
                epoch_loss += value;
                batch_grads.merge(grads);
                n_items += 1;
            }
            batch_grads.scale(T::from_f64(1.0 / n_items as f64));
            adam.step(&mut model.store, &batch_grads);
        }

        let train_record = EpochRecord {
            epoch,
            split: "train".into(),
            loss: Some(epoch_loss / num_train as f64),
            mrr: None,
            hits1: None,
            hits3: None,
            hits10: None,
            seconds: None,
        };
        progress(&train_record, start.elapsed().as_secs_f64());
        records.push(train_record);

        let start = std::time::Instant::now();
        let report = evaluate_relation_prediction(&model, graph, &ds.valid_triples, &[1, 3, 10])?;
        let valid_record = EpochRecord {
            epoch,
            split: "valid".into(),
            loss: None,
            mrr: Some(report.mrr),
            hits1: Some(report.hits(1)),
            hits3: Some(report.hits(3)),
            hits10: Some(report.hits(10)),
            seconds: None,
        };
        progress(&valid_record, start.elapsed().as_secs_f64());
        records.push(valid_record);

        if best.update(epoch, report.mrr, &model.store, cfg.patience) {
            break;
        }
    }

    model.store = best.store.clone();
    Ok(TrainOutcome {
        model,
        records,
        best_epoch: best.epoch,
        best_val_mrr: best.mrr,
    })
}

fn extract<T: Scalar>(
    model: &CblipModel<T>,
    graph: &crate::kg::KnowledgeGraph,
    triple: Triple,
    cfg: &TrainConfig,
    ctx_rng: &mut ChaCha8Rng,
) -> Context {
    match cfg.neighbor_sampling {
        NeighborSampling::Deterministic => model.context_for(graph, triple, None),
        NeighborSampling::Seeded => model.context_for(graph, triple, Some(ctx_rng)),
    }
}

/// Fisher–Yates on the shuffle substream.
fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
}
