//! Context re-scoring of candidate links.
//!
//! A candidate `(r, e)` for a query vector `x` gets
//!
//! ```text
//! u = a·b₁ / (a·b₁ + (1−a)·b₂)
//! ```
//!
//! where `a` is the fraction of known entities linked to `e` through `r`
//! (the link's attention), and `b₁`, `b₂` are Gaussian densities of the raw
//! score `f(x, r, g(e))` under the score distributions of true and false
//! training triples. Higher `u` means more likely true.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{corrupt_tail, EntityId, GraphError, RelationId, TripleStore};
use crate::kg::{KgError, KgModel};

/// Lower bound on fitted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("training store is empty")]
    EmptyStore,
    #[error("false sample size must be >= 2, got {0}")]
    FalseSampleSize(usize),
    #[error("store and model vocabularies differ")]
    VocabMismatch,
    #[error("invalid option: {0}")]
    Option(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian {
    /// Mean and population standard deviation, with `sigma` floored at
    /// [`SIGMA_FLOOR`].
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        Self {
            mu,
            sigma: var.sqrt().max(SIGMA_FLOOR),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextOptions {
    /// Fit separate true/false Gaussians per relation instead of globally.
    pub per_relation: bool,
    /// Laplace smoothing strength for the attention; 0 disables it.
    pub laplace: f64,
}

impl Default for ContextOptions {
    fn default() -> Self {
        Self {
            per_relation: false,
            laplace: 0.0,
        }
    }
}

/// Fitted attention counts and score distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextStats {
    /// Number of known entities `e_h` with `(e_h, r, e)` in the training set.
    pub counts: HashMap<(RelationId, EntityId), u32>,
    pub known_entity_count: usize,
    pub true_scores: Gaussian,
    pub false_scores: Gaussian,
    /// Per-relation fits, present only when fitted with `per_relation`.
    pub per_relation: Option<HashMap<RelationId, (Gaussian, Gaussian)>>,
    pub laplace: f64,
}

impl ContextStats {
    pub fn count(&self, relation: RelationId, entity: EntityId) -> u32 {
        self.counts.get(&(relation, entity)).copied().unwrap_or(0)
    }

    /// Attention `a(r, e)`, optionally Laplace-smoothed as
    /// `(count + λ) / (|E'| + 2λ)`.
    pub fn attention(&self, relation: RelationId, entity: EntityId) -> f64 {
        let count = self.count(relation, entity) as f64;
        let n = self.known_entity_count as f64;
        if self.laplace > 0.0 {
            (count + self.laplace) / (n + 2.0 * self.laplace)
        } else if n == 0.0 {
            0.0
        } else {
            count / n
        }
    }

    fn gaussians(&self, relation: RelationId) -> (Gaussian, Gaussian) {
        self.per_relation
            .as_ref()
            .and_then(|m| m.get(&relation).copied())
            .unwrap_or((self.true_scores, self.false_scores))
    }

    /// Re-scores a raw link score for candidate `(relation, entity)`.
    pub fn rescore(&self, raw_score: f64, relation: RelationId, entity: EntityId) -> f64 {
        let (t, f) = self.gaussians(relation);
        rescore_with(self.attention(relation, entity), raw_score, &t, &f)
    }
}

/// `u = a·b₁ / (a·b₁ + (1−a)·b₂)`, evaluated from log densities so that
/// far-tail scores, where both densities underflow, still compare by their
/// likelihood ratio.
pub fn rescore_with(attention: f64, raw_score: f64, true_scores: &Gaussian, false_scores: &Gaussian) -> f64 {
    let a = attention.clamp(0.0, 1.0);
    if a == 0.0 {
        return 0.0;
    }
    if a == 1.0 {
        return 1.0;
    }
    let log_true = a.ln() + true_scores.log_density(raw_score);
    let log_false = (1.0 - a).ln() + false_scores.log_density(raw_score);
    let x = log_false - log_true;
    if x.is_nan() {
        return 0.0;
    }
    1.0 / (1.0 + x.exp())
}

/// Fits attention counts over the training triples and Gaussian score models
/// from the scores of all training triples (true) and of
/// `false_sample_size` tail corruptions of random training triples (false).
pub fn fit_context<R: Rng + ?Sized>(
    model: &KgModel,
    store: &TripleStore,
    false_sample_size: usize,
    rng: &mut R,
    options: ContextOptions,
) -> Result<ContextStats, ContextError> {
    if store.is_empty() {
        return Err(ContextError::EmptyStore);
    }
    if false_sample_size < 2 {
        return Err(ContextError::FalseSampleSize(false_sample_size));
    }
    if !(options.laplace >= 0.0) {
        return Err(ContextError::Option("laplace must be >= 0".into()));
    }
    if store.entities() != &model.entities {
        return Err(ContextError::VocabMismatch);
    }

    let mut counts: HashMap<(RelationId, EntityId), u32> = HashMap::new();
    for t in store.triples() {
        *counts.entry((t.relation, t.tail)).or_default() += 1;
    }

    let true_scores: Vec<(RelationId, f64)> = store
        .triples()
        .iter()
        .map(|t| Ok((t.relation, model.score_triple(t)?)))
        .collect::<Result<_, KgError>>()?;
    let mut false_scores = Vec::with_capacity(false_sample_size);
    for _ in 0..false_sample_size {
        let source = store.triples()[rng.random_range(0..store.len())];
        let corrupted = corrupt_tail(&source, store, &mut *rng)?;
        false_scores.push((corrupted.relation, model.score_triple(&corrupted)?));
    }

    let fit = |scores: &[(RelationId, f64)], label: &str| {
        let values: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
        let g = Gaussian::fit(&values);
        if g.sigma == SIGMA_FLOOR {
            log::warn!("{label} scores are degenerate; sigma floored at {SIGMA_FLOOR}");
        }
        g
    };
    let per_relation = options.per_relation.then(|| {
        let mut out = HashMap::new();
        for r in 0..model.relations.len() as u32 {
            let r = RelationId(r);
            let ts: Vec<(RelationId, f64)> = true_scores.iter().copied().filter(|x| x.0 == r).collect();
            let fs: Vec<(RelationId, f64)> = false_scores.iter().copied().filter(|x| x.0 == r).collect();
            if ts.len() >= 2 && fs.len() >= 2 {
                out.insert(r, (fit(&ts, "true"), fit(&fs, "false")));
            }
        }
        out
    });

    Ok(ContextStats {
        counts,
        known_entity_count: store.entity_count(),
        true_scores: fit(&true_scores, "true"),
        false_scores: fit(&false_scores, "false"),
        per_relation,
        laplace: options.laplace,
    })
}
