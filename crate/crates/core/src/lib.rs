//! Knowledge-graph embeddings for open-world visual link prediction.
//!
//! The pipeline has two learned maps into one semantic vector space:
//!
//! 1. an entity embedding `g`, trained on a set of `(head, relation, tail)`
//!    triples with a tensor-layer scoring function ([`kg`]), optionally with
//!    a noise-smoothed objective that keeps the score function flat around
//!    entity points;
//! 2. an image embedding `h` from precomputed feature vectors onto the entity
//!    vectors ([`image`]).
//!
//! Link prediction for an image ranks candidate `(relation, tail)` pairs by
//! the score of `(h(x), relation, g(tail))`, optionally re-scored by the
//! context heuristic in [`context`]. Metrics and projections live in
//! [`eval`] and [`pca`].
//!
//! Scores follow the convention "lower is more true".

pub mod cli;
pub mod context;
pub mod eval;
pub mod formats;
pub mod graph;
pub mod image;
pub mod kg;
pub mod linalg;
pub mod optim;
pub mod pca;
pub mod simulate;

pub use context::{ContextOptions, ContextStats};
pub use eval::{LinkQuery, RankingReport};
pub use graph::{DatasetSplits, EntityId, RelationId, Triple, TripleStore, Vocab};
pub use image::{ImageEmbedder, LabeledFeature};
pub use kg::{KgModel, ModelConfig, Variant};

/// Seeded generator used throughout the crate. ChaCha keeps streams stable
/// across platforms and `rand` releases.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
