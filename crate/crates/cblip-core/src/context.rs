//! Context extraction: k-hop ego graphs around the target entities, merged
//! and truncated into an ordered neighbor list with entity roles.
//!
//! Traversal treats edges as undirected for reachability; edge direction is
//! preserved in the triples themselves and surfaces later through connection
//! types. A triple sits at hop `h` when its nearest endpoint is at distance
//! `h - 1` from the anchor entity.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, KnowledgeGraph, Triple, TripleId};

/// Position of an entity relative to the target triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Head,
    Tail,
    Other,
}

impl Role {
    /// Dense index for embedding lookup.
    pub fn index(self) -> usize {
        match self {
            Role::Head => 0,
            Role::Tail => 1,
            Role::Other => 2,
        }
    }

    /// Role of `e` with respect to target `(h, t)`. When `h == t` the head
    /// role takes precedence so the function stays total.
    pub fn of(e: EntityId, h: EntityId, t: EntityId) -> Role {
        if e == h {
            Role::Head
        } else if e == t {
            Role::Tail
        } else {
            Role::Other
        }
    }
}

/// How the head-side and tail-side ego graphs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Union,
    Intersection,
}

/// A neighbor triple with its hop distance and entity roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextTriple {
    pub id: TripleId,
    pub triple: Triple,
    /// min over the two target entities of the triple's hop distance; in [1, k].
    pub hop: u32,
    pub head_role: Role,
    pub tail_role: Role,
}

/// The neighborhood of one target triple, ordered (hop asc, triple id asc).
#[derive(Clone, Debug)]
pub struct Context {
    pub target: Triple,
    pub neighbors: Vec<ContextTriple>,
    pub merge_mode: MergeMode,
}

/// Collects every triple within `k` undirected hops of `e`, mapped to its
/// hop distance. An isolated entity yields an empty map.
pub fn ego_graph(g: &KnowledgeGraph, e: EntityId, k: u32) -> HashMap<TripleId, u32> {
    assert!(k >= 1, "ego_graph requires k >= 1");
    // Entity distances up to k-1; triples incident to those entities are
    // within k hops.
    let mut dist: HashMap<EntityId, u32> = HashMap::new();
    dist.insert(e, 0);
    let mut frontier = vec![e];
    for d in 1..k {
        let mut next = Vec::new();
        for &u in &frontier {
            for v in g.neighbors(u) {
                if !dist.contains_key(&v) {
                    dist.insert(v, d);
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    let mut hops: HashMap<TripleId, u32> = HashMap::new();
    for (&u, &d) in &dist {
        for tid in g.incident(u) {
            let hop = d + 1;
            hops.entry(tid)
                .and_modify(|h| *h = (*h).min(hop))
                .or_insert(hop);
        }
    }
    hops
}

/// Merges two ego maps. Union keeps triples from either side; intersection
/// keeps only the shared ones. The hop is the min over the sides present.
fn merge_ego(
    a: &HashMap<TripleId, u32>,
    b: &HashMap<TripleId, u32>,
    mode: MergeMode,
) -> Vec<(TripleId, u32)> {
    let mut out = Vec::new();
    match mode {
        MergeMode::Union => {
            for (&id, &h) in a {
                let hop = b.get(&id).map_or(h, |&hb| h.min(hb));
                out.push((id, hop));
            }
            for (&id, &h) in b {
                if !a.contains_key(&id) {
                    out.push((id, h));
                }
            }
        }
        MergeMode::Intersection => {
            for (&id, &h) in a {
                if let Some(&hb) = b.get(&id) {
                    out.push((id, h.min(hb)));
                }
            }
        }
    }
    out
}

fn build_context(
    g: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    selected: Vec<(TripleId, u32)>,
    merge_mode: MergeMode,
    target: Triple,
) -> Context {
    let neighbors = selected
        .into_iter()
        .map(|(id, hop)| {
            let triple = g.triple(id);
            ContextTriple {
                id,
                triple,
                hop,
                head_role: Role::of(triple.head, h, t),
                tail_role: Role::of(triple.tail, h, t),
            }
        })
        .collect();
    Context {
        target,
        neighbors,
        merge_mode,
    }
}

fn candidate_list(
    g: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    exclude: Option<Triple>,
    k: u32,
    merge_mode: MergeMode,
) -> Vec<(TripleId, u32)> {
    let ego_h = ego_graph(g, h, k);
    let ego_t = ego_graph(g, t, k);
    let mut candidates = merge_ego(&ego_h, &ego_t, merge_mode);
    if let Some(ex) = exclude {
        candidates.retain(|&(id, _)| g.triple(id) != ex);
    }
    candidates.sort_by_key(|&(id, hop)| (hop, id));
    candidates
}

/// Extracts the context of target pair `(h, t)`: merged ego graphs per
/// `merge_mode`, the `exclude` triple removed (the target itself during both
/// training and evaluation), closest neighbors first with ascending triple id
/// as the tie rule, truncated to `m`.
pub fn extract_context(
    g: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    exclude: Option<Triple>,
    k: u32,
    m: usize,
    merge_mode: MergeMode,
) -> Context {
    let target = exclude.unwrap_or(Triple {
        head: h,
        rel: crate::kg::RelationId(0),
        tail: t,
    });
    let mut candidates = candidate_list(g, h, t, exclude, k, merge_mode);
    candidates.truncate(m);
    build_context(g, h, t, candidates, merge_mode, target)
}

/// Like [`extract_context`], but when the cap `m` splits a hop level, the
/// members kept from that last level are sampled uniformly with `rng`
/// instead of lowest-id-first. Fully included levels are unaffected and the
/// result stays sorted by (hop, triple id).
pub fn extract_context_sampled<R: Rng>(
    g: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    exclude: Option<Triple>,
    k: u32,
    m: usize,
    merge_mode: MergeMode,
    rng: &mut R,
) -> Context {
    let target = exclude.unwrap_or(Triple {
        head: h,
        rel: crate::kg::RelationId(0),
        tail: t,
    });
    let candidates = candidate_list(g, h, t, exclude, k, merge_mode);
    let selected = if candidates.len() <= m {
        candidates
    } else {
        let boundary_hop = candidates[m].1;
        let level_start = candidates.partition_point(|&(_, hop)| hop < boundary_hop);
        if level_start >= m {
            // The boundary level fills the remaining slots entirely.
            let level: Vec<_> = candidates[level_start..]
                .iter()
                .copied()
                .filter(|&(_, hop)| hop == boundary_hop)
                .collect();
            let mut picked = sample_without_replacement(&level, m - level_start, rng);
            picked.sort_by_key(|&(id, hop)| (hop, id));
            let mut out = candidates[..level_start].to_vec();
            out.extend(picked);
            out
        } else {
            candidates.into_iter().take(m).collect()
        }
    };
    build_context(g, h, t, selected, merge_mode, target)
}

fn sample_without_replacement<R: Rng>(
    pool: &[(TripleId, u32)],
    n: usize,
    rng: &mut R,
) -> Vec<(TripleId, u32)> {
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n.min(pool.len()) {
        let i = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}
