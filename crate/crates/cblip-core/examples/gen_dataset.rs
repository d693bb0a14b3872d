//! Writes the synthetic datasets to disk in the formats the CLI expects.
//!
//! ```text
//! cargo run --release -p cblip-core --example gen_dataset -- <out_dir>
//! ```
//!
//! Produces `<out_dir>/composition/{train,test}/` (inductive layout, the
//! two-hop rule r3(a,c) ⇔ ∃b. r1(a,b) ∧ r2(b,c) over disjoint entity sets)
//! and `<out_dir>/relpattern/` (transductive layout, relation determined by
//! the entity groups).

use std::path::PathBuf;

use cblip_core::synth::{
    composition_dataset, relation_pattern_dataset, write_inductive_dirs, write_transductive_dir,
    CompositionSpec, RelationPatternSpec,
};

fn main() -> std::io::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("synth_data"));

    let ds = composition_dataset(&CompositionSpec::default());
    let (train_dir, test_dir) = write_inductive_dirs(&ds, &out.join("composition"))?;
    println!(
        "composition (inductive): {} and {}",
        train_dir.display(),
        test_dir.display()
    );
    println!(
        "  train: {} entities, {} triples, {} valid; test: {} entities, {} triples, {} infer",
        ds.train_graph.num_entities(),
        ds.train_graph.num_triples(),
        ds.valid_triples.len(),
        ds.test_graph.num_entities(),
        ds.test_graph.num_triples(),
        ds.infer_triples.len()
    );

    let rp = relation_pattern_dataset(&RelationPatternSpec::default());
    let rp_dir = out.join("relpattern");
    write_transductive_dir(&rp, &rp_dir)?;
    println!("relpattern (transductive): {}", rp_dir.display());
    println!(
        "  {} entities, {} train / {} valid / {} test triples",
        rp.graph.num_entities(),
        rp.graph.num_triples(),
        rp.valid_triples.len(),
        rp.test_triples.len()
    );
    Ok(())
}
