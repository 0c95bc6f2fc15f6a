//! Builds a toy taxonomy, closes it transitively and splits it.
//!
//! `cargo run --example toy_graph`

use std::collections::BTreeSet;

use kgrec::graph::{gen_toy_graph, make_splits, transitive_expand, DEFAULT_TRANSITIVE};
use kgrec::simulate::pick_holdout;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = gen_toy_graph(3, 3, 10, 1)?;
    let transitive = base.resolve_relations(&DEFAULT_TRANSITIVE)?;
    println!("generated {} triples over {} entities", base.len(), base.entity_count());
    for depth in 1..=3 {
        let closed = transitive_expand(&base, &transitive, depth)?;
        println!("  depth {depth}: {} triples", closed.len());
    }

    let closed = transitive_expand(&base, &transitive, 3)?;
    let holdout: BTreeSet<_> = pick_holdout(&closed, 3, &mut kgrec::seeded_rng(1))?;
    let splits = make_splits(&closed, &holdout, 0.05, 1)?;
    println!(
        "holdout {:?}\ntrain {} / standard test {} / hard test {}",
        splits.holdout_labels(),
        splits.train.len(),
        splits.standard_test.len(),
        splits.hard_test.len()
    );
    for t in splits.hard_test.iter().take(5) {
        println!(
            "  {} {} {}",
            splits.entities.label(t.head.0),
            splits.relations.label(t.relation.0),
            splits.entities.label(t.tail.0)
        );
    }
    Ok(())
}
