//! Ranking evaluation: corruption sampling, rank computation, MRR / Hits@k.
//!
//! Entity prediction follows the 50-negative protocol: for each query triple
//! and each side, up to `negatives` corruption entities are drawn uniformly
//! from the fact graph's entity set, excluding the original entity and
//! (under the filtered protocol) any entity that would form a known true
//! triple. Ties count against the model so a constant scorer earns nothing.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::model::CblipModel;
use crate::numerics::{Scalar, TensorError};

/// Pessimistic competition rank: 1 + #strictly better + #ties.
pub fn rank_query<T: PartialOrd>(true_score: T, negatives: &[T]) -> usize {
    let mut rank = 1;
    for s in negatives {
        if *s > true_score || *s == true_score {
            rank += 1;
        }
    }
    rank
}

/// Per-query ranks with their aggregates.
#[derive(Clone, Debug, Serialize)]
pub struct RankingReport {
    pub ranks: Vec<usize>,
    pub mrr: f64,
    /// n -> fraction of ranks <= n, for each requested cutoff.
    pub hits_at: std::collections::BTreeMap<usize, f64>,
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<usize>, cutoffs: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits_at = cutoffs
            .iter()
            .map(|&k| {
                let frac = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
                (k, frac)
            })
            .collect();
        RankingReport {
            ranks,
            mrr,
            hits_at,
        }
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.hits_at.get(&k).copied().unwrap_or(0.0)
    }
}

/// Entity-prediction report: head- and tail-side corruptions pooled, with
/// the per-side breakdown kept alongside.
#[derive(Clone, Debug, Serialize)]
pub struct EntityEvalReport {
    pub pooled: RankingReport,
    pub head_side: RankingReport,
    pub tail_side: RankingReport,
    /// Queries that had fewer valid corruption candidates than requested.
    pub shortfalls: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub negatives: usize,
    /// Exclude corruptions that form known true triples.
    pub filter: bool,
    pub cutoffs: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            negatives: 50,
            filter: true,
            cutoffs: vec![1, 3, 10],
            seed: 0,
        }
    }
}

/// Corruption-draw stream; distinct from init/shuffle/negative-sampling.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x6576616c); // "eval"
    rng
}

#[derive(Clone, Copy)]
enum Side {
    Head,
    Tail,
}

fn corrupt(triple: Triple, side: Side, e: EntityId) -> Triple {
    match side {
        Side::Head => Triple {
            head: e,
            ..triple
        },
        Side::Tail => Triple {
            tail: e,
            ..triple
        },
    }
}

/// Draws up to `want` distinct corruption entities for one query side.
fn draw_corruptions(
    triple: Triple,
    side: Side,
    num_entities: usize,
    known_true: &HashSet<Triple>,
    opts: &EvalOptions,
    rng: &mut dyn RngCore,
) -> Vec<EntityId> {
    let original = match side {
        Side::Head => triple.head,
        Side::Tail => triple.tail,
    };
    let mut pool: Vec<EntityId> = (0..num_entities as u32)
        .map(EntityId)
        .filter(|&e| {
            if e == original {
                return false;
            }
            if opts.filter && known_true.contains(&corrupt(triple, side, e)) {
                return false;
            }
            true
        })
        .collect();
    if pool.len() > opts.negatives {
        let (sampled, _) = pool.partial_shuffle(rng, opts.negatives);
        sampled.to_vec()
    } else {
        pool
    }
}

/// Ranks every query triple against sampled corruptions on both sides,
/// scoring candidates with contexts from `fact_graph`. Deterministic given
/// (model parameters, options): corruption draws are made sequentially in
/// query order before any scoring happens.
pub fn evaluate_entity_prediction<T: Scalar>(
    model: &CblipModel<T>,
    fact_graph: &KnowledgeGraph,
    queries: &[Triple],
    known_true: &HashSet<Triple>,
    opts: &EvalOptions,
) -> Result<EntityEvalReport, TensorError> {
    let mut rng = eval_rng(opts.seed);
    let num_entities = fact_graph.num_entities();

    // All corruption draws first, in a fixed order.
    let mut jobs = Vec::with_capacity(queries.len() * 2);
    let mut shortfalls = 0;
    for &q in queries {
        for side in [Side::Head, Side::Tail] {
            let corruptions = draw_corruptions(q, side, num_entities, known_true, opts, &mut rng);
            if corruptions.len() < opts.negatives {
                shortfalls += 1;
            }
            jobs.push((q, side, corruptions));
        }
    }

    // Score in parallel; collect preserves job order.
    let ranks: Result<Vec<(usize, bool)>, TensorError> = jobs
        .par_iter()
        .map(|(q, side, corruptions)| {
            let true_score = model.score_inductive(fact_graph, *q)?;
            let mut neg_scores = Vec::with_capacity(corruptions.len());
            for &e in corruptions {
                neg_scores.push(model.score_inductive(fact_graph, corrupt(*q, *side, e))?);
            }
            let rank = rank_query(true_score, &neg_scores);
            Ok((rank, matches!(side, Side::Head)))
        })
        .collect();
    let ranks = ranks?;

    let pooled: Vec<usize> = ranks.iter().map(|&(r, _)| r).collect();
    let head: Vec<usize> = ranks.iter().filter(|&&(_, h)| h).map(|&(r, _)| r).collect();
    let tail: Vec<usize> = ranks.iter().filter(|&&(_, h)| !h).map(|&(r, _)| r).collect();
    Ok(EntityEvalReport {
        pooled: RankingReport::from_ranks(pooled, &opts.cutoffs),
        head_side: RankingReport::from_ranks(head, &opts.cutoffs),
        tail_side: RankingReport::from_ranks(tail, &opts.cutoffs),
        shortfalls,
    })
}

/// Ranks the true relation of each query among all |R| relation logits.
pub fn evaluate_relation_prediction<T: Scalar>(
    model: &CblipModel<T>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    cutoffs: &[usize],
) -> Result<RankingReport, TensorError> {
    let ranks: Result<Vec<usize>, TensorError> = queries
        .par_iter()
        .map(|&q| {
            let logits = model.relation_logits(graph, q.head, q.tail, Some(q))?;
            let true_logit = logits[q.rel.index()];
            let negatives: Vec<T> = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != q.rel.index())
                .map(|(_, &l)| l)
                .collect();
            Ok(rank_query(true_logit, &negatives))
        })
        .collect();
    Ok(RankingReport::from_ranks(ranks?, cutoffs))
}

/// The set of true triples used by the filtered protocol.
pub fn known_triples(sets: &[&[Triple]]) -> HashSet<Triple> {
    let mut known = HashSet::new();
    for set in sets {
        known.extend(set.iter().copied());
    }
    known
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_of_top_score_is_one() {
        assert_eq!(rank_query(5.0, &[1.0, 2.0, 3.0]), 1);
    }

    #[test]
    fn ties_count_against_the_model() {
        assert_eq!(rank_query(2.0, &[2.0, 2.0, 1.0]), 3);
    }

    #[test]
    fn no_negatives_means_rank_one() {
        assert_eq!(rank_query(0.0, &[] as &[f64]), 1);
    }

    #[test]
    fn report_aggregates() {
        let report = RankingReport::from_ranks(vec![1, 2, 4, 10, 51], &[1, 3, 10]);
        let want_mrr = (1.0 + 0.5 + 0.25 + 0.1 + 1.0 / 51.0) / 5.0;
        assert!((report.mrr - want_mrr).abs() < 1e-12);
        assert!((report.hits(1) - 0.2).abs() < 1e-12);
        assert!((report.hits(3) - 0.4).abs() < 1e-12);
        assert!((report.hits(10) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_rank_is_vocabulary_size() {
        // All ties: rank = |R| under the pessimistic rule, so MRR = 1/|R|.
        let negatives = vec![0.5f64; 10];
        assert_eq!(rank_query(0.5, &negatives), 11);
    }

    /// Sort-based oracle: position of the true score in the descending
    /// order of all candidates, ties resolved worst-case for the model.
    fn oracle_rank(true_score: f64, negatives: &[f64]) -> usize {
        let mut all: Vec<(f64, bool)> = negatives.iter().map(|&s| (s, false)).collect();
        all.push((true_score, true));
        all.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                // Negatives before the true triple on equal score.
                .then_with(|| a.1.cmp(&b.1))
        });
        all.iter().position(|&(_, is_true)| is_true).unwrap() + 1
    }

    proptest! {
        #[test]
        fn prop_rank_matches_sort_oracle(
            true_score in -5.0f64..5.0,
            negatives in prop::collection::vec(-5.0f64..5.0, 0..60),
        ) {
            prop_assert_eq!(rank_query(true_score, &negatives), oracle_rank(true_score, &negatives));
        }

        #[test]
        fn prop_rank_matches_oracle_with_ties(
            true_score in 0i32..4,
            negatives in prop::collection::vec(0i32..4, 0..30),
        ) {
            let t = true_score as f64;
            let negs: Vec<f64> = negatives.iter().map(|&x| x as f64).collect();
            prop_assert_eq!(rank_query(t, &negs), oracle_rank(t, &negs));
        }

        #[test]
        fn prop_hits_monotone_and_ranks_legal(
            ranks in prop::collection::vec(1usize..52, 1..100),
        ) {
            let report = RankingReport::from_ranks(ranks, &[1, 3, 10, 51]);
            prop_assert!(report.mrr > 0.0 && report.mrr <= 1.0);
            let mut prev = 0.0;
            for (_, &h) in report.hits_at.iter() {
                prop_assert!(h >= prev);
                prev = h;
            }
        }
    }
}
