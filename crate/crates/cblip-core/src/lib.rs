//! CBLiP: connection-biased link prediction over knowledge graphs.
//!
//! A training-and-evaluation engine for knowledge-graph completion. Target
//! triples are scored from their local subgraph alone: the neighborhood is
//! encoded as a sequence of triple tokens and run through a Transformer
//! encoder whose attention is biased by how each pair of triples shares
//! endpoints. Entities unseen during training are represented by their role
//! relative to the target (head / tail / other), which is what makes the
//! model inductive.
//!
//! Module map:
//! - [`kg`] — TSV loading, symbol interning, indexed multigraphs, splits
//! - [`context`] — k-hop ego graphs, neighbor selection, entity roles
//! - [`connection`] — the 7-way connection typing and per-sequence matrix
//! - [`numerics`] — tensors, reverse-mode autodiff, Adam
//! - [`encoder`] — the connection-biased Transformer encoder
//! - [`model`] — embedding tables, token sequences, scoring heads
//! - [`train`] — negative sampling, losses, the training loop
//! - [`eval`] — ranking harness (MRR / Hits@k)
//! - [`checkpoint`] — manifest + binary payload codec
//! - [`synth`] — synthetic dataset generators for tests and demos

pub mod checkpoint;
pub mod connection;
pub mod context;
pub mod encoder;
pub mod eval;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod train;
