//! Projects trained entity vectors to two dimensions and writes them as CSV.
//!
//! `cargo run --release --example pca_projection`

use kgrec::formats::write_projection;
use kgrec::kg::train;
use kgrec::pca::pca_project;
use kgrec::simulate::benchmark_config;
use kgrec::{KgModel, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = kgrec::graph::gen_toy_graph(3, 3, 10, 0)?;
    let model = KgModel::init(Variant::Sntl, benchmark_config(0), store.entities().clone(), store.relations().clone())?;
    let (model, _) = train(model, &store)?;

    let vectors: Vec<Vec<f64>> = model.embedding.iter_rows().map(<[f64]>::to_vec).collect();
    let projection = pca_project(&vectors, 2)?;
    let explained: Vec<String> = projection.explained.iter().map(|v| format!("{v:.3}")).collect();
    eprintln!("explained variance: {}", explained.join(", "));
    write_projection(model.entities.labels(), &projection, std::io::stdout().lock())?;
    Ok(())
}
