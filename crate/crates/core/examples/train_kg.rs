//! Trains TransE, NTL and SNTL on a toy graph and compares them on
//! filtered tail prediction.
//!
//! `cargo run --release --example train_kg`

use std::collections::BTreeSet;

use kgrec::eval::{evaluate_dataset, EvalMode};
use kgrec::graph::make_splits;
use kgrec::kg::train;
use kgrec::simulate::{benchmark_config, standard_test_queries, ToyGraph};
use kgrec::{KgModel, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = ToyGraph::default().build()?;
    let splits = make_splits(&full, &BTreeSet::new(), 0.02, 0)?;
    let store = splits.train_store();
    println!("{} training triples, {} test triples", store.len(), splits.standard_test.len());

    for variant in [Variant::TransE, Variant::Ntl, Variant::Sntl] {
        let model = KgModel::init(variant, benchmark_config(0), store.entities().clone(), store.relations().clone())?;
        let (model, report) = train(model, &store)?;
        let queries = standard_test_queries(&model, &splits, &full);
        let eval = evaluate_dataset(&model, &queries, None, 3, EvalMode::PerImage)?;
        println!(
            "{variant:>6}: loss {:.4} -> {:.4}, mu_r {:.4}, t@3 {:.3}",
            report.first().unwrap_or(f64::NAN),
            report.last().unwrap_or(f64::NAN),
            eval.mu_r,
            eval.t_at_n
        );
    }
    Ok(())
}
