//! Triple store: TSV loading, symbol interning, and indexed directed multigraphs.
//!
//! A [`KnowledgeGraph`] is immutable after construction and indexes its
//! triples by head and by tail entity so neighborhood queries are O(degree).
//! [`load_inductive_split`] materializes the standard inductive dataset
//! layout: a training graph with validation triples, plus a test fact graph
//! with held-out inference triples over an entirely new entity set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

/// Index into a graph's entity table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

/// Index into a graph's relation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

/// Position of a triple in its graph's triple list (file order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TripleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One directed fact: (head, relation, tail). Self-loops are permitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
        }
    }
}

#[derive(Error, Debug)]
pub enum KgError {
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Malformed {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("train and test entity sets overlap ({} shared): {}", .0.len(), format_symbols(.0))]
    EntityOverlap(Vec<String>),
    #[error("{split}: relation `{symbol}` does not appear in the training graph")]
    UnknownRelation { split: String, symbol: String },
    #[error("{split}: entity `{symbol}` does not appear in the fact graph")]
    UnknownEntity { split: String, symbol: String },
}

fn format_symbols(symbols: &[String]) -> String {
    let mut out = String::new();
    for (i, s) in symbols.iter().take(8).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(s);
    }
    if symbols.len() > 8 {
        let _ = write!(out, ", … ({} more)", symbols.len() - 8);
    }
    out
}

/// Interning table: string symbol -> dense id, first seen gets the lowest id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `symbol`, inserting it if unseen.
    pub fn intern(&mut self, symbol: &str) -> u32 {
        if let Some(&id) = self.ids.get(symbol) {
            return id;
        }
        let id = self.names.len() as u32;
        self.ids.insert(symbol.to_owned(), id);
        self.names.push(symbol.to_owned());
        id
    }

    pub fn get(&self, symbol: &str) -> Option<u32> {
        self.ids.get(symbol).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Symbols in id order.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Triples plus the symbol tables they were interned against.
#[derive(Clone, Debug)]
pub struct RawTriples {
    pub entities: SymbolTable,
    pub relations: SymbolTable,
    pub triples: Vec<Triple>,
}

/// Parses `head<TAB>relation<TAB>tail` lines. Empty lines are skipped;
/// fields are trimmed of surrounding whitespace. `line` numbers are 1-based.
fn parse_tsv(
    text: &str,
    path: &Path,
    entities: &mut SymbolTable,
    relations: &mut SymbolTable,
) -> Result<Vec<Triple>, KgError> {
    let mut triples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                path: path.to_owned(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        let head = entities.intern(fields[0].trim());
        let rel = relations.intern(fields[1].trim());
        let tail = entities.intern(fields[2].trim());
        triples.push(Triple::new(head, rel, tail));
    }
    Ok(triples)
}

/// Loads a TSV triple file, interning symbols first-seen-first-id.
pub fn load_triples(path: &Path) -> Result<RawTriples, KgError> {
    let text = fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut entities = SymbolTable::new();
    let mut relations = SymbolTable::new();
    let triples = parse_tsv(&text, path, &mut entities, &mut relations)?;
    Ok(RawTriples {
        entities,
        relations,
        triples,
    })
}

/// Immutable directed multigraph with per-entity incidence indices.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: SymbolTable,
    relations: SymbolTable,
    triples: Vec<Triple>,
    by_head: Vec<Vec<TripleId>>,
    by_tail: Vec<Vec<TripleId>>,
}

impl KnowledgeGraph {
    pub fn new(entities: SymbolTable, relations: SymbolTable, triples: Vec<Triple>) -> Self {
        let n = entities.len();
        let mut by_head = vec![Vec::new(); n];
        let mut by_tail = vec![Vec::new(); n];
        for (i, t) in triples.iter().enumerate() {
            let id = TripleId(i as u32);
            by_head[t.head.index()].push(id);
            by_tail[t.tail.index()].push(id);
        }
        KnowledgeGraph {
            entities,
            relations,
            triples,
            by_head,
            by_tail,
        }
    }

    pub fn from_raw(raw: RawTriples) -> Self {
        Self::new(raw.entities, raw.relations, raw.triples)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, id: TripleId) -> Triple {
        self.triples[id.index()]
    }

    pub fn entities(&self) -> &SymbolTable {
        &self.entities
    }

    pub fn relations(&self) -> &SymbolTable {
        &self.relations
    }

    /// Triples with head `e`.
    pub fn by_head(&self, e: EntityId) -> &[TripleId] {
        &self.by_head[e.index()]
    }

    /// Triples with tail `e`.
    pub fn by_tail(&self, e: EntityId) -> &[TripleId] {
        &self.by_tail[e.index()]
    }

    /// All triples incident to `e`, each exactly once (self-loops sit in both
    /// indices but are yielded once).
    pub fn incident(&self, e: EntityId) -> impl Iterator<Item = TripleId> + '_ {
        let tails = self.by_tail[e.index()]
            .iter()
            .copied()
            .filter(move |&id| self.triples[id.index()].head != e);
        self.by_head[e.index()].iter().copied().chain(tails)
    }

    /// Undirected entity neighbors of `e`, one entry per incident triple.
    pub fn neighbors(&self, e: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.incident(e).map(move |id| {
            let t = self.triples[id.index()];
            if t.head == e {
                t.tail
            } else {
                t.head
            }
        })
    }

    /// Writes the graph back out as `head<TAB>relation<TAB>tail` lines in
    /// triple order.
    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities.name(t.head.0),
                self.relations.name(t.rel.0),
                self.entities.name(t.tail.0)
            )?;
        }
        Ok(())
    }
}

/// Basic size statistics; `mean_degree` counts each triple at both endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_triples: usize,
    pub mean_degree: f64,
}

pub fn graph_stats(g: &KnowledgeGraph) -> GraphStats {
    let num_entities = g.num_entities();
    let num_triples = g.num_triples();
    let mean_degree = if num_entities == 0 {
        0.0
    } else {
        2.0 * num_triples as f64 / num_entities as f64
    };
    GraphStats {
        num_entities,
        num_relations: g.num_relations(),
        num_triples,
        mean_degree,
    }
}

/// Inductive split: train graph + validation triples over train entities,
/// test fact graph + inference triples over a disjoint entity set.
#[derive(Clone, Debug)]
pub struct InductiveDataset {
    pub train_graph: KnowledgeGraph,
    pub valid_triples: Vec<Triple>,
    pub test_graph: KnowledgeGraph,
    pub infer_triples: Vec<Triple>,
}

/// Transductive split: one fact graph, with validation and test triples over
/// the same entity and relation vocabulary.
#[derive(Clone, Debug)]
pub struct TransductiveDataset {
    pub graph: KnowledgeGraph,
    pub valid_triples: Vec<Triple>,
    pub test_triples: Vec<Triple>,
}

/// Loads a single-directory transductive layout: `{train,valid,test}.txt`.
/// Validation and test triples must stay within the training vocabulary.
pub fn load_transductive_dir(dir: &Path) -> Result<TransductiveDataset, KgError> {
    let raw = load_triples(&dir.join("train.txt"))?;
    let graph = KnowledgeGraph::from_raw(raw);
    let valid_path = dir.join("valid.txt");
    let valid_triples = parse_tsv_strict(
        &read(&valid_path)?,
        &valid_path,
        "valid",
        graph.entities(),
        graph.relations(),
    )?;
    let test_path = dir.join("test.txt");
    let test_triples = parse_tsv_strict(
        &read(&test_path)?,
        &test_path,
        "test",
        graph.entities(),
        graph.relations(),
    )?;
    Ok(TransductiveDataset {
        graph,
        valid_triples,
        test_triples,
    })
}

/// Resolves triples against existing tables without interning new symbols.
fn parse_tsv_strict(
    text: &str,
    path: &Path,
    split: &str,
    entities: &SymbolTable,
    relations: &SymbolTable,
) -> Result<Vec<Triple>, KgError> {
    let mut triples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                path: path.to_owned(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        let lookup_entity = |sym: &str| {
            entities.get(sym).ok_or_else(|| KgError::UnknownEntity {
                split: split.to_owned(),
                symbol: sym.to_owned(),
            })
        };
        let head = lookup_entity(fields[0].trim())?;
        let tail = lookup_entity(fields[2].trim())?;
        let rel_sym = fields[1].trim();
        let rel = relations
            .get(rel_sym)
            .ok_or_else(|| KgError::UnknownRelation {
                split: split.to_owned(),
                symbol: rel_sym.to_owned(),
            })?;
        triples.push(Triple::new(head, rel, tail));
    }
    Ok(triples)
}

fn read(path: &Path) -> Result<String, KgError> {
    fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Loads the inductive layout: `train_dir/{train,valid}.txt` and
/// `test_dir/{train,test}.txt`. The test graph reuses the train relation
/// table (relations unseen in training are a hard error) and its entity set
/// must be disjoint from the train entities.
pub fn load_inductive_split(
    train_dir: &Path,
    test_dir: &Path,
) -> Result<InductiveDataset, KgError> {
    let train_raw = load_triples(&train_dir.join("train.txt"))?;
    let train_graph = KnowledgeGraph::from_raw(train_raw);

    let valid_path = train_dir.join("valid.txt");
    let valid_triples = parse_tsv_strict(
        &read(&valid_path)?,
        &valid_path,
        "valid",
        train_graph.entities(),
        train_graph.relations(),
    )?;

    // Test fact graph: fresh entity table, relations resolved against train.
    let fact_path = test_dir.join("train.txt");
    let fact_text = read(&fact_path)?;
    let mut test_entities = SymbolTable::new();
    let mut scratch_relations = SymbolTable::new();
    parse_tsv(
        &fact_text,
        &fact_path,
        &mut test_entities,
        &mut scratch_relations,
    )?;
    for sym in scratch_relations.names() {
        if train_graph.relations().get(sym).is_none() {
            return Err(KgError::UnknownRelation {
                split: "test".to_owned(),
                symbol: sym.clone(),
            });
        }
    }
    let test_triples = parse_tsv_strict(
        &fact_text,
        &fact_path,
        "test",
        &test_entities,
        train_graph.relations(),
    )?;

    let overlap: Vec<String> = test_entities
        .names()
        .iter()
        .filter(|s| train_graph.entities().get(s).is_some())
        .cloned()
        .collect();
    if !overlap.is_empty() {
        return Err(KgError::EntityOverlap(overlap));
    }

    let test_graph = KnowledgeGraph::new(
        test_entities,
        train_graph.relations().clone(),
        test_triples,
    );

    let infer_path = test_dir.join("test.txt");
    let infer_triples = parse_tsv_strict(
        &read(&infer_path)?,
        &infer_path,
        "infer",
        test_graph.entities(),
        test_graph.relations(),
    )?;

    Ok(InductiveDataset {
        train_graph,
        valid_triples,
        test_graph,
        infer_triples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        f.write_all(content.as_bytes()).unwrap();
    }

    #[test]
    fn load_interns_first_seen_order() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "t.txt", "a\tr\tb\nb\ts\tc\n");
        let raw = load_triples(&dir.path().join("t.txt")).unwrap();
        assert_eq!(raw.triples.len(), 2);
        assert_eq!(raw.entities.len(), 3);
        assert_eq!(raw.relations.len(), 2);
        assert_eq!(raw.entities.get("a"), Some(0));
        assert_eq!(raw.entities.get("b"), Some(1));
        assert_eq!(raw.entities.get("c"), Some(2));
        assert_eq!(raw.triples[0], Triple::new(0, 0, 1));
        assert_eq!(raw.triples[1], Triple::new(1, 1, 2));
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "t.txt", "a\tr\n");
        let err = load_triples(&dir.path().join("t.txt")).unwrap_err();
        match err {
            KgError::Malformed { line, found, .. } => {
                assert_eq!(line, 1);
                assert_eq!(found, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "t.txt", "");
        let raw = load_triples(&dir.path().join("t.txt")).unwrap();
        assert!(raw.triples.is_empty());
        let stats = graph_stats(&KnowledgeGraph::from_raw(raw));
        assert_eq!(
            stats,
            GraphStats {
                num_entities: 0,
                num_relations: 0,
                num_triples: 0,
                mean_degree: 0.0
            }
        );
    }

    #[test]
    fn stats_single_triple() {
        let mut ents = SymbolTable::new();
        let mut rels = SymbolTable::new();
        ents.intern("a");
        ents.intern("b");
        rels.intern("r");
        let g = KnowledgeGraph::new(ents, rels, vec![Triple::new(0, 0, 1)]);
        let stats = graph_stats(&g);
        assert_eq!(stats.num_entities, 2);
        assert_eq!(stats.num_relations, 1);
        assert_eq!(stats.num_triples, 1);
        assert_eq!(stats.mean_degree, 1.0);
    }

    #[test]
    fn self_loop_incident_once() {
        let mut ents = SymbolTable::new();
        let mut rels = SymbolTable::new();
        ents.intern("a");
        ents.intern("b");
        rels.intern("r");
        let g = KnowledgeGraph::new(
            ents,
            rels,
            vec![Triple::new(0, 0, 0), Triple::new(0, 0, 1)],
        );
        let incident: Vec<_> = g.incident(EntityId(0)).collect();
        assert_eq!(incident, vec![TripleId(0), TripleId(1)]);
        let incident_b: Vec<_> = g.incident(EntityId(1)).collect();
        assert_eq!(incident_b, vec![TripleId(1)]);
    }

    fn synthetic_split(dir: &Path) {
        fs::create_dir_all(dir.join("train")).unwrap();
        fs::create_dir_all(dir.join("test")).unwrap();
        write_file(
            &dir.join("train"),
            "train.txt",
            "a\tr\tb\nb\ts\tc\nc\tr\td\nd\ts\ta\n",
        );
        write_file(&dir.join("train"), "valid.txt", "a\tr\tc\n");
        write_file(&dir.join("test"), "train.txt", "x\tr\ty\ny\ts\tz\n");
        write_file(&dir.join("test"), "test.txt", "x\tr\tz\n");
    }

    #[test]
    fn inductive_split_loads_expected_object() {
        let dir = tempfile::tempdir().unwrap();
        synthetic_split(dir.path());
        let ds = load_inductive_split(&dir.path().join("train"), &dir.path().join("test")).unwrap();

        assert_eq!(ds.train_graph.num_entities(), 4);
        assert_eq!(ds.train_graph.num_relations(), 2);
        assert_eq!(ds.train_graph.num_triples(), 4);
        assert_eq!(ds.valid_triples, vec![Triple::new(0, 0, 2)]);

        // Test graph shares the train relation table.
        assert_eq!(ds.test_graph.num_relations(), 2);
        assert_eq!(ds.test_graph.num_entities(), 3);
        assert_eq!(
            ds.test_graph.triples(),
            &[Triple::new(0, 0, 1), Triple::new(1, 1, 2)]
        );
        assert_eq!(ds.infer_triples, vec![Triple::new(0, 0, 2)]);
    }

    #[test]
    fn overlapping_entities_rejected() {
        let dir = tempfile::tempdir().unwrap();
        synthetic_split(dir.path());
        write_file(&dir.path().join("test"), "train.txt", "a\tr\ty\n");
        let err = load_inductive_split(&dir.path().join("train"), &dir.path().join("test"))
            .unwrap_err();
        match err {
            KgError::EntityOverlap(symbols) => assert_eq!(symbols, vec!["a".to_owned()]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_test_relation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        synthetic_split(dir.path());
        write_file(&dir.path().join("test"), "train.txt", "x\tnew_rel\ty\n");
        let err = load_inductive_split(&dir.path().join("train"), &dir.path().join("test"))
            .unwrap_err();
        assert!(matches!(err, KgError::UnknownRelation { .. }));
    }

    proptest! {
        /// Index consistency: t ∈ by_head[e] ⇔ triples[t].head = e, dually for tails.
        #[test]
        fn prop_index_consistency(edges in prop::collection::vec((0u32..20, 0u32..4, 0u32..20), 0..60)) {
            let mut ents = SymbolTable::new();
            let mut rels = SymbolTable::new();
            let triples: Vec<Triple> = edges.iter().map(|&(h, r, t)| {
                Triple::new(
                    ents.intern(&format!("e{h}")),
                    rels.intern(&format!("r{r}")),
                    ents.intern(&format!("e{t}")),
                )
            }).collect();
            let g = KnowledgeGraph::new(ents, rels, triples);
            for e in 0..g.num_entities() as u32 {
                let e = EntityId(e);
                for &tid in g.by_head(e) {
                    prop_assert_eq!(g.triple(tid).head, e);
                }
                for &tid in g.by_tail(e) {
                    prop_assert_eq!(g.triple(tid).tail, e);
                }
            }
            for (i, t) in g.triples().iter().enumerate() {
                let tid = TripleId(i as u32);
                prop_assert!(g.by_head(t.head).contains(&tid));
                prop_assert!(g.by_tail(t.tail).contains(&tid));
            }
        }

        /// TSV round-trip: write then reload gives identical ids and triples.
        #[test]
        fn prop_tsv_round_trip(edges in prop::collection::vec((0u32..15, 0u32..3, 0u32..15), 1..40)) {
            let mut ents = SymbolTable::new();
            let mut rels = SymbolTable::new();
            let triples: Vec<Triple> = edges.iter().map(|&(h, r, t)| {
                Triple::new(
                    ents.intern(&format!("e{h}")),
                    rels.intern(&format!("r{r}")),
                    ents.intern(&format!("e{t}")),
                )
            }).collect();
            let g = KnowledgeGraph::new(ents, rels, triples);

            let mut buf = Vec::new();
            g.write_tsv(&mut buf).unwrap();
            let dir = tempfile::tempdir().unwrap();
            std::fs::write(dir.path().join("g.txt"), &buf).unwrap();
            let raw = load_triples(&dir.path().join("g.txt")).unwrap();

            prop_assert_eq!(raw.triples.as_slice(), g.triples());
            prop_assert_eq!(raw.entities.names(), g.entities().names());
            prop_assert_eq!(raw.relations.names(), g.relations().names());
        }
    }
}
