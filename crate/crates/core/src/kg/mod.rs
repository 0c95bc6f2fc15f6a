//! Knowledge-graph embedding models: TransE, the neural tensor layer (NTL)
//! and its noise-smoothed training variant (SNTL).
//!
//! For the tensor models a triple `(h, r, t)` is scored as
//!
//! ```text
//! f(h, r, t) = Σ_s u_r[s] · tanh( hᵀ W_r[s] t + V_r[s]·[h; t] + b_r[s] )
//! ```
//!
//! with `k` slices `s`. TransE scores `‖h + t_r − t‖₂`. In both cases a lower
//! score means a more plausible triple.

mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, RelationId, Triple, Vocab};
use crate::optim::OptimizerKind;

pub use loss::{
    batch_hinge_loss, loss_and_gradients, loss_gradients, perturb, smooth_loss,
    smooth_loss_with, GradientSet, Objective, Perturbation,
};
pub use train::{lipschitz_estimate, train, LipschitzMode, TrainReport};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("empty batch")]
    EmptyBatch,
    #[error("misaligned batch: {positives} positives vs {negatives} negatives")]
    Misaligned { positives: usize, negatives: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("training store does not match the model: {0}")]
    StoreMismatch(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    TransE,
    Ntl,
    Sntl,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TransE => "transe",
            Variant::Ntl => "ntl",
            Variant::Sntl => "sntl",
        }
    }

    pub fn is_tensor(self) -> bool {
        !matches!(self, Variant::TransE)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Variant::TransE),
            "ntl" => Ok(Variant::Ntl),
            "sntl" => Ok(Variant::Sntl),
            other => Err(format!("unknown variant `{other}` (expected transe, ntl or sntl)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyper-parameters for building and training a [`KgModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Number of tensor slices `k`.
    pub slices: usize,
    /// Hinge margin.
    pub gamma: f64,
    /// Weight of the clean term in the smoothed objective.
    pub alpha: f64,
    /// Standard deviation of the entity perturbation.
    pub noise: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Freeze the slice combination vector at all-ones, i.e. sum the slices.
    pub sum_slices: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 60,
            slices: 6,
            gamma: 1.0,
            alpha: 0.5,
            noise: 0.1,
            epochs: 300,
            batch_size: 10_000,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Gd,
            seed: 0,
            sum_slices: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(KgError::Config(msg.to_owned()));
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if self.slices < 1 {
            return bad("slices must be >= 1");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be >= 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be >= 0");
        }
        Ok(())
    }
}

/// Row-major `|E| × d` table of entity vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityEmbedding {
    dim: usize,
    data: Vec<f64>,
}

impl EntityEmbedding {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(KgError::Dimension {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, entity: EntityId) -> &[f64] {
        let start = entity.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn row_mut(&mut self, entity: EntityId) -> &mut [f64] {
        let start = entity.index() * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}

/// Per-relation parameters of the tensor layer.
///
/// `w` holds `k` row-major `d × d` slices back to back, `v` holds `k` rows of
/// length `2d` (head half first).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorParams {
    pub dim: usize,
    pub slices: usize,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
}

impl TensorParams {
    pub fn zeros(dim: usize, slices: usize) -> Self {
        Self {
            dim,
            slices,
            w: vec![0.0; slices * dim * dim],
            v: vec![0.0; slices * 2 * dim],
            b: vec![0.0; slices],
            u: vec![0.0; slices],
        }
    }

    pub fn w_slice(&self, s: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.w[s * dd..(s + 1) * dd]
    }

    pub fn v_row(&self, s: usize) -> &[f64] {
        let width = 2 * self.dim;
        &self.v[s * width..(s + 1) * width]
    }

    /// Slice pre-activations `hᵀ W[s] t + V[s]·[h; t] + b[s]`.
    pub fn preactivations(&self, h: &[f64], t: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.slices)
            .map(|s| {
                let w = self.w_slice(s);
                let mut bilinear = 0.0;
                for i in 0..d {
                    let row = &w[i * d..(i + 1) * d];
                    bilinear += h[i] * crate::linalg::dot(row, t);
                }
                let v = self.v_row(s);
                bilinear + crate::linalg::dot(&v[..d], h) + crate::linalg::dot(&v[d..], t) + self.b[s]
            })
            .collect()
    }

    fn score(&self, h: &[f64], t: &[f64]) -> f64 {
        self.preactivations(h, t)
            .iter()
            .zip(&self.u)
            .map(|(z, u)| u * z.tanh())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RelationParams {
    Tensor(TensorParams),
    Translation(Vec<f64>),
}

impl RelationParams {
    /// Parameter slices in a fixed order; gradients and optimizer state use
    /// the same order.
    pub fn slots(&self) -> Vec<&[f64]> {
        match self {
            RelationParams::Tensor(p) => vec![&p.w, &p.v, &p.b, &p.u],
            RelationParams::Translation(t) => vec![t],
        }
    }

    pub fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            RelationParams::Tensor(p) => vec![&mut p.w, &mut p.v, &mut p.b, &mut p.u],
            RelationParams::Translation(t) => vec![t],
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            RelationParams::Tensor(p) => RelationParams::Tensor(TensorParams::zeros(p.dim, p.slices)),
            RelationParams::Translation(t) => RelationParams::Translation(vec![0.0; t.len()]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KgModel {
    pub variant: Variant,
    pub config: ModelConfig,
    pub entities: Vocab,
    pub relations: Vocab,
    pub embedding: EntityEmbedding,
    pub relation_params: Vec<RelationParams>,
}

impl KgModel {
    /// Random initialization: entity rows and `t_r` uniform in
    /// `±0.5/√d`, `W` in `±0.5/√d`, `V` in `±0.5/√(2d)`, `b = 0`, `u = 1`.
    pub fn init(variant: Variant, config: ModelConfig, entities: Vocab, relations: Vocab) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let k = config.slices;
        let mut rng = crate::seeded_rng(config.seed);
        let entity_bound = 0.5 / (d as f64).sqrt();
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };

        let data = uniform(entities.len() * d, entity_bound);
        let relation_params = (0..relations.len())
            .map(|_| match variant {
                Variant::TransE => RelationParams::Translation(uniform(d, entity_bound)),
                Variant::Ntl | Variant::Sntl => RelationParams::Tensor(TensorParams {
                    dim: d,
                    slices: k,
                    w: uniform(k * d * d, 0.5 / (d as f64).sqrt()),
                    v: uniform(k * 2 * d, 0.5 / ((2 * d) as f64).sqrt()),
                    b: vec![0.0; k],
                    u: vec![1.0; k],
                }),
            })
            .collect();
        Ok(Self {
            variant,
            config,
            entities,
            relations,
            embedding: EntityEmbedding { dim: d, data },
            relation_params,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_vec(&self, entity: EntityId) -> &[f64] {
        self.embedding.row(entity)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    /// Scores `(h, r, t)` for arbitrary head and tail vectors.
    pub fn score(&self, h: &[f64], relation: RelationId, t: &[f64]) -> Result<f64> {
        let d = self.dim();
        for v in [h, t] {
            if v.len() != d {
                return Err(KgError::Dimension {
                    expected: d,
                    actual: v.len(),
                });
            }
        }
        if relation.index() >= self.relation_params.len() {
            return Err(KgError::UnknownRelation(relation.0));
        }
        Ok(self.score_unchecked(h, relation, t))
    }

    pub(crate) fn score_unchecked(&self, h: &[f64], relation: RelationId, t: &[f64]) -> f64 {
        match &self.relation_params[relation.index()] {
            RelationParams::Tensor(p) => p.score(h, t),
            RelationParams::Translation(tr) => h
                .iter()
                .zip(tr)
                .zip(t)
                .map(|((a, b), c)| {
                    let x = a + b - c;
                    x * x
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// `∂f(h, r, t)/∂h` with all model parameters held fixed.
    pub fn head_gradient(&self, h: &[f64], relation: RelationId, t: &[f64]) -> Result<Vec<f64>> {
        self.score(h, relation, t)?;
        let d = self.dim();
        let mut grad = vec![0.0; d];
        match &self.relation_params[relation.index()] {
            RelationParams::Tensor(p) => {
                let z = p.preactivations(h, t);
                for s in 0..p.slices {
                    let th = z[s].tanh();
                    let dz = p.u[s] * (1.0 - th * th);
                    let w = p.w_slice(s);
                    let v = p.v_row(s);
                    for i in 0..d {
                        let w_t = crate::linalg::dot(&w[i * d..(i + 1) * d], t);
                        grad[i] += dz * (w_t + v[i]);
                    }
                }
            }
            RelationParams::Translation(tr) => {
                let diff: Vec<f64> = h.iter().zip(tr).zip(t).map(|((a, b), c)| a + b - c).collect();
                let norm = crate::linalg::norm(&diff);
                if norm > 0.0 {
                    grad.iter_mut().zip(&diff).for_each(|(g, x)| *g = x / norm);
                }
            }
        }
        Ok(grad)
    }

    pub fn score_triple(&self, triple: &Triple) -> Result<f64> {
        for e in [triple.head, triple.tail] {
            if e.index() >= self.entity_count() {
                return Err(KgError::UnknownEntity(e.0));
            }
        }
        self.score(
            self.entity_vec(triple.head),
            triple.relation,
            self.entity_vec(triple.tail),
        )
    }

    /// Visits every parameter slice in slot order: the entity table first,
    /// then each relation's slots.
    pub fn for_each_slot_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        f(0, self.embedding.as_mut_slice());
        let mut slot = 1;
        for params in &mut self.relation_params {
            for s in params.slots_mut() {
                f(slot, s);
                slot += 1;
            }
        }
    }

    pub fn zero_gradients(&self) -> GradientSet {
        GradientSet {
            entities: EntityEmbedding::zeros(self.entity_count(), self.dim()),
            relations: self.relation_params.iter().map(RelationParams::zeros_like).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        crate::linalg::all_finite(self.embedding.as_slice())
            && self
                .relation_params
                .iter()
                .all(|p| p.slots().iter().all(|s| crate::linalg::all_finite(s)))
    }
}
