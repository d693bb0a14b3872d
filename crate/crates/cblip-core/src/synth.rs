//! Synthetic dataset generators for tests and demos.
//!
//! The composition dataset encodes one two-hop rule — r3(a, c) holds exactly
//! when some b satisfies r1(a, b) and r2(b, c) — over two entity sets that
//! share nothing but the relation vocabulary. A model that scores held-out
//! r3 facts well on the unseen entity set has learned the composition
//! pattern itself, since entity identity carries no information across the
//! split.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{
    InductiveDataset, KnowledgeGraph, SymbolTable, TransductiveDataset, Triple,
};

#[derive(Clone, Debug)]
pub struct CompositionSpec {
    pub train_entities: usize,
    pub test_entities: usize,
    /// r1 out-edges per entity.
    pub r1_degree: usize,
    /// r2 out-edges per entity.
    pub r2_degree: usize,
    /// Fraction of r3 facts held out (for validation / inference).
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for CompositionSpec {
    fn default() -> Self {
        CompositionSpec {
            train_entities: 200,
            test_entities: 100,
            r1_degree: 2,
            r2_degree: 2,
            held_out_fraction: 0.1,
            seed: 7,
        }
    }
}

/// Distinct uniform targets, excluding `src`.
fn pick_targets(src: u32, n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count.min(n - 1) {
        let t = rng.gen_range(0..n as u32);
        if t != src && !picked.contains(&t) {
            picked.push(t);
        }
    }
    picked
}

/// One side of the split: returns (graph triples, held-out r3 facts).
fn composition_side(
    n: usize,
    spec: &CompositionSpec,
    rng: &mut ChaCha8Rng,
) -> (Vec<Triple>, Vec<Triple>) {
    const R1: u32 = 0;
    const R2: u32 = 1;
    const R3: u32 = 2;

    let mut triples = Vec::new();
    let mut r1_out: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut r2_out: Vec<Vec<u32>> = vec![Vec::new(); n];
    for a in 0..n as u32 {
        for b in pick_targets(a, n, spec.r1_degree, rng) {
            r1_out[a as usize].push(b);
            triples.push(Triple::new(a, R1, b));
        }
    }
    for b in 0..n as u32 {
        for c in pick_targets(b, n, spec.r2_degree, rng) {
            r2_out[b as usize].push(c);
            triples.push(Triple::new(b, R2, c));
        }
    }

    // Close the rule: every two-hop (a, c) pair is an r3 fact.
    let mut r3_pairs: Vec<(u32, u32)> = Vec::new();
    let mut seen = HashSet::new();
    for a in 0..n as u32 {
        for &b in &r1_out[a as usize] {
            for &c in &r2_out[b as usize] {
                if seen.insert((a, c)) {
                    r3_pairs.push((a, c));
                }
            }
        }
    }
    r3_pairs.shuffle(rng);
    let held = ((r3_pairs.len() as f64 * spec.held_out_fraction).ceil() as usize)
        .min(r3_pairs.len().saturating_sub(1));
    let held_out: Vec<Triple> = r3_pairs[..held]
        .iter()
        .map(|&(a, c)| Triple::new(a, R3, c))
        .collect();
    for &(a, c) in &r3_pairs[held..] {
        triples.push(Triple::new(a, R3, c));
    }
    (triples, held_out)
}

fn symbols(prefix: &str, n: usize) -> SymbolTable {
    let mut table = SymbolTable::new();
    for i in 0..n {
        table.intern(&format!("{prefix}{i}"));
    }
    table
}

fn relation_symbols() -> SymbolTable {
    let mut table = SymbolTable::new();
    for name in ["r1", "r2", "r3"] {
        table.intern(name);
    }
    table
}

/// Generates the inductive composition-rule dataset: train and test sides
/// are built by the same process over disjoint entity sets; held-out r3
/// facts become the validation (train side) and inference (test side)
/// triples and are removed from the fact graphs.
pub fn composition_dataset(spec: &CompositionSpec) -> InductiveDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (train_triples, valid_triples) = composition_side(spec.train_entities, spec, &mut rng);
    let (test_triples, infer_triples) = composition_side(spec.test_entities, spec, &mut rng);
    InductiveDataset {
        train_graph: KnowledgeGraph::new(
            symbols("a", spec.train_entities),
            relation_symbols(),
            train_triples,
        ),
        valid_triples,
        test_graph: KnowledgeGraph::new(
            symbols("b", spec.test_entities),
            relation_symbols(),
            test_triples,
        ),
        infer_triples,
    }
}

#[derive(Clone, Debug)]
pub struct RelationPatternSpec {
    /// Entities per group; three groups total.
    pub group_size: usize,
    /// Sampled (h, t) pairs per relation rule.
    pub pairs_per_relation: usize,
    /// Fractions of pairs diverted to validation and test.
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for RelationPatternSpec {
    fn default() -> Self {
        RelationPatternSpec {
            group_size: 30,
            pairs_per_relation: 220,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 11,
        }
    }
}

/// Transductive dataset where the relation is a deterministic function of
/// the (head group, tail group) pair: group 0 → 1 is r0, 1 → 2 is r1,
/// 0 → 2 is r2. Every entity is guaranteed to appear in the training graph.
pub fn relation_pattern_dataset(spec: &RelationPatternSpec) -> TransductiveDataset {
    let g = spec.group_size;
    let n = 3 * g;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let rules: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
    let entity = |group: usize, i: usize| (group * g + i) as u32;

    let mut pairs: Vec<Triple> = Vec::new();
    let mut seen = HashSet::new();
    for (rel, &(src, dst)) in rules.iter().enumerate() {
        // Cover every entity of both groups first, then sample extras.
        for i in 0..g {
            let h = entity(src, i);
            let t = entity(dst, rng.gen_range(0..g));
            if seen.insert((h, t)) {
                pairs.push(Triple::new(h, rel as u32, t));
            }
            let h2 = entity(src, rng.gen_range(0..g));
            let t2 = entity(dst, i);
            if seen.insert((h2, t2)) {
                pairs.push(Triple::new(h2, rel as u32, t2));
            }
        }
        let mut sampled = 0;
        let mut attempts = 0;
        while sampled < spec.pairs_per_relation && attempts < spec.pairs_per_relation * 20 {
            attempts += 1;
            let h = entity(src, rng.gen_range(0..g));
            let t = entity(dst, rng.gen_range(0..g));
            if seen.insert((h, t)) {
                pairs.push(Triple::new(h, rel as u32, t));
                sampled += 1;
            }
        }
    }
    pairs.shuffle(&mut rng);

    let n_valid = (pairs.len() as f64 * spec.valid_fraction) as usize;
    let n_test = (pairs.len() as f64 * spec.test_fraction) as usize;
    let valid_triples = pairs[..n_valid].to_vec();
    let test_triples = pairs[n_valid..n_valid + n_test].to_vec();
    let mut train: Vec<Triple> = pairs[n_valid + n_test..].to_vec();

    // The coverage pass above guarantees every entity occurs somewhere in
    // `pairs`; if a held-out split captured an entity's only triple, give it
    // one more training fact so the vocabulary survives a TSV round trip.
    let mut covered = vec![false; n];
    for t in &train {
        covered[t.head.index()] = true;
        covered[t.tail.index()] = true;
    }
    for e in 0..n {
        if !covered[e] {
            let group = e / g;
            let (rel, partner_group, head_side) = match group {
                0 => (0u32, 1, true),
                1 => (1u32, 2, true),
                _ => (2u32, 0, false),
            };
            let partner = entity(partner_group, rng.gen_range(0..g));
            let triple = if head_side {
                Triple::new(e as u32, rel, partner)
            } else {
                Triple::new(partner, rel, e as u32)
            };
            covered[triple.head.index()] = true;
            covered[triple.tail.index()] = true;
            train.push(triple);
        }
    }

    let mut rel_table = SymbolTable::new();
    for name in ["r0", "r1", "r2"] {
        rel_table.intern(name);
    }
    TransductiveDataset {
        graph: KnowledgeGraph::new(symbols("e", n), rel_table, train),
        valid_triples,
        test_triples,
    }
}

fn write_split(path: &Path, graph: &KnowledgeGraph, triples: &[Triple]) -> io::Result<()> {
    let mut out = String::new();
    for t in triples {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            graph.entities().name(t.head.0),
            graph.relations().name(t.rel.0),
            graph.entities().name(t.tail.0)
        ));
    }
    fs::write(path, out)
}

/// Writes the standard inductive directory layout under `root`; returns
/// (train_dir, test_dir).
pub fn write_inductive_dirs(ds: &InductiveDataset, root: &Path) -> io::Result<(PathBuf, PathBuf)> {
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    fs::create_dir_all(&train_dir)?;
    fs::create_dir_all(&test_dir)?;

    let mut f = fs::File::create(train_dir.join("train.txt"))?;
    ds.train_graph.write_tsv(&mut f)?;
    write_split(&train_dir.join("valid.txt"), &ds.train_graph, &ds.valid_triples)?;

    let mut f = fs::File::create(test_dir.join("train.txt"))?;
    ds.test_graph.write_tsv(&mut f)?;
    write_split(&test_dir.join("test.txt"), &ds.test_graph, &ds.infer_triples)?;
    Ok((train_dir, test_dir))
}

/// Writes the single-directory transductive layout.
pub fn write_transductive_dir(ds: &TransductiveDataset, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join("train.txt"))?;
    ds.graph.write_tsv(&mut f)?;
    write_split(&dir.join("valid.txt"), &ds.graph, &ds.valid_triples)?;
    write_split(&dir.join("test.txt"), &ds.graph, &ds.test_triples)?;
    Ok(())
}
