//! Learns to map noisy image features onto entity vectors, then checks how
//! close unseen images land to their entity.
//!
//! `cargo run --release --example image_embedding`

use kgrec::image::{train_embedder, EmbedderConfig};
use kgrec::linalg::cosine;
use kgrec::simulate::synthetic_features;
use kgrec::{KgModel, ModelConfig, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = kgrec::graph::gen_toy_graph(3, 2, 0, 0)?;
    let config = ModelConfig { dim: 8, ..ModelConfig::default() };
    let model = KgModel::init(Variant::Sntl, config, store.entities().clone(), store.relations().clone())?;

    // Synthetic stand-ins for CNN features: one noisy cluster per entity.
    let labels = model.entities.labels();
    let (train_set, held_out): (Vec<_>, Vec<_>) = synthetic_features(labels, 32, 12, 0.2, 1)?
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % 12 < 10);
    let train_set: Vec<_> = train_set.into_iter().map(|(_, f)| f).collect();
    let held_out: Vec<_> = held_out.into_iter().map(|(_, f)| f).collect();
    let config = EmbedderConfig {
        hidden: vec![32],
        epochs: 80,
        learning_rate: 3e-3,
        ..EmbedderConfig::default()
    };
    let (embedder, report) = train_embedder(&train_set, &model.entities, &model.embedding, &config)?;
    println!("training loss {:.4} -> {:.4}", report.initial(), report.last());

    let mut total = 0.0;
    for f in &held_out {
        let target = model.entity_vec(model.entity_id(&f.label).expect("label from model"));
        total += cosine(&embedder.embed(&f.feature)?, target);
    }
    println!("held-out mean cosine to target entity: {:.4}", total / held_out.len() as f64);
    Ok(())
}
