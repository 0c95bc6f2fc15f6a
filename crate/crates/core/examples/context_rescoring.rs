//! Ranks candidate links for a vector with raw scores and again with the
//! context re-score, which favours links that are common in the graph.
//!
//! `cargo run --release --example context_rescoring`

use std::collections::HashSet;

use kgrec::context::{fit_context, ContextOptions};
use kgrec::eval::{all_links, rank_links};
use kgrec::kg::train;
use kgrec::simulate::{benchmark_config, ToyGraph};
use kgrec::{KgModel, LinkQuery, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = ToyGraph::default().build()?;
    let model = KgModel::init(Variant::Ntl, benchmark_config(0), store.entities().clone(), store.relations().clone())?;
    let (model, _) = train(model, &store)?;
    let stats = fit_context(&model, &store, 2000, &mut kgrec::seeded_rng(0), ContextOptions::default())?;
    println!(
        "true scores ~ N({:.3}, {:.3}), false scores ~ N({:.3}, {:.3})",
        stats.true_scores.mu, stats.true_scores.sigma, stats.false_scores.mu, stats.false_scores.sigma
    );

    let probe = model.entity_id("n.0.1.2").expect("toy node");
    let query = LinkQuery::new("n.0.1.2", model.entity_vec(probe).to_vec(), all_links(&model), HashSet::new())?;
    for (name, ctx) in [("raw", None), ("context", Some(&stats))] {
        println!("{name}:");
        for l in rank_links(&model, &query, ctx)?.links.iter().take(5) {
            println!(
                "  {:<13} {:<10} raw {:+.3}  u {}",
                model.relations.label(l.relation.0),
                model.entities.label(l.entity.0),
                l.raw_score,
                l.u_score.map_or("-".into(), |u| format!("{u:.3}"))
            );
        }
    }
    Ok(())
}
