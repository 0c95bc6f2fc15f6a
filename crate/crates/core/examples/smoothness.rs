//! Measures how much link scores move under small entity perturbations,
//! with and without the smoothed objective.
//!
//! `cargo run --release --example smoothness`

use kgrec::kg::{lipschitz_estimate, train, LipschitzMode};
use kgrec::simulate::{benchmark_config, ToyGraph};
use kgrec::{KgModel, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = ToyGraph::default().build()?;
    for variant in [Variant::Ntl, Variant::Sntl] {
        let model = KgModel::init(variant, benchmark_config(0), store.entities().clone(), store.relations().clone())?;
        let (model, _) = train(model, &store)?;
        let mut rng = kgrec::seeded_rng(0);
        for s in [0.05, 0.1, 0.2] {
            let ratio = lipschitz_estimate(&model, store.triples(), s, &mut rng, 5, LipschitzMode::Ratio)?;
            println!("{variant:>4} s={s:<4} mean |df|/|eps| = {ratio:.4}");
        }
    }
    Ok(())
}
