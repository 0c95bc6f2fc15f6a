//! Synthetic benchmarks on generated taxonomies.
//!
//! [`ToyGraph`] builds the expanded toy graph, [`standard_test_queries`]
//! turns a standard test split into tail-prediction queries, and
//! [`run_open_world`] simulates images of entities the graph model never saw:
//! each held-out entity gets an anchor vector fitted against the frozen
//! model from its true links, and its "images" are noisy unit-norm copies of
//! that anchor.

use std::collections::{BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::context::{fit_context, ContextError, ContextOptions};
use crate::eval::{all_links, evaluate_dataset, EvalError, EvalMode, Link, LinkQuery, Summary};
use crate::graph::{
    gen_toy_graph, make_splits, transitive_expand, DatasetSplits, EntityId, GraphError, Triple, TripleStore, Vocab,
    DEFAULT_TRANSITIVE, HYPERNYM,
};
use crate::image::LabeledFeature;
use crate::kg::{train, KgError, KgModel, ModelConfig, Variant};
use crate::linalg;
use crate::optim::{Optimizer, OptimizerKind, RmsProp};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Setup(String),
}

pub type Result<T, E = SimulateError> = std::result::Result<T, E>;

/// Generated taxonomy plus random part links, closed transitively.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyGraph {
    pub branching: usize,
    pub depth: usize,
    pub meronyms: usize,
    pub seed: u64,
    pub expand_depth: usize,
}

impl Default for ToyGraph {
    fn default() -> Self {
        Self {
            branching: 3,
            depth: 4,
            meronyms: 40,
            seed: 7,
            expand_depth: 4,
        }
    }
}

impl ToyGraph {
    pub fn build(&self) -> Result<TripleStore, GraphError> {
        let base = gen_toy_graph(self.branching, self.depth, self.meronyms, self.seed)?;
        let relations = base.resolve_relations(&DEFAULT_TRANSITIVE)?;
        transitive_expand(&base, &relations, self.expand_depth)
    }
}

/// Model settings used by the toy benchmarks: 16 dimensions, 3 slices,
/// 200 epochs of RMSProp on batches of 100.
pub fn benchmark_config(seed: u64) -> ModelConfig {
    ModelConfig {
        dim: 16,
        slices: 3,
        epochs: 200,
        batch_size: 100,
        learning_rate: 0.003,
        optimizer: OptimizerKind::RmsProp,
        seed,
        ..ModelConfig::default()
    }
}

/// Re-expresses triples over `(entities, relations)` in the model's id
/// space, dropping triples that mention anything the model lacks.
pub fn to_model_ids(model: &KgModel, entities: &Vocab, relations: &Vocab, triples: &[Triple]) -> Vec<Triple> {
    triples
        .iter()
        .filter_map(|t| {
            Some(Triple::new(
                model.entity_id(entities.label(t.head.0))?,
                model.relation_id(relations.label(t.relation.0))?,
                model.entity_id(entities.label(t.tail.0))?,
            ))
        })
        .collect()
}

/// Filtered tail-prediction queries for the standard test split: every
/// candidate tail forming a triple of `full` is removed except the true one.
pub fn standard_test_queries(model: &KgModel, splits: &DatasetSplits, full: &TripleStore) -> Vec<LinkQuery> {
    let test = to_model_ids(model, &splits.entities, &splits.relations, &splits.standard_test);
    let known: HashSet<Triple> = to_model_ids(model, full.entities(), full.relations(), full.triples())
        .into_iter()
        .collect();
    crate::eval::tail_prediction_queries(model, &test, &known)
}

/// Fits a unit-norm head vector for an entity the model has never seen by
/// minimizing the hinge loss of its true links `truth` against one random
/// tail corruption per link and epoch, with all model parameters frozen.
pub fn fit_anchor<R: Rng + ?Sized>(
    model: &KgModel,
    truth: &[Link],
    epochs: usize,
    learning_rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if truth.is_empty() {
        return Err(SimulateError::Setup("anchor needs at least one true link".into()));
    }
    let d = model.dim();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
    project_to_sphere(&mut x);
    let true_set: HashSet<Link> = truth.iter().copied().collect();
    let gamma = model.config.gamma;
    let mut optimizer = RmsProp::new(learning_rate);
    for _ in 0..epochs {
        let mut grad = vec![0.0; d];
        for &(r, t) in truth {
            let Some(neg) = corrupt_link(model, &true_set, r, t, rng) else {
                continue;
            };
            let (tv, nv) = (model.entity_vec(t), model.entity_vec(neg));
            if gamma + model.score(&x, r, tv)? - model.score(&x, r, nv)? > 0.0 {
                linalg::axpy(1.0, &model.head_gradient(&x, r, tv)?, &mut grad);
                linalg::axpy(-1.0, &model.head_gradient(&x, r, nv)?, &mut grad);
            }
        }
        grad.iter_mut().for_each(|g| *g /= truth.len() as f64);
        optimizer.step(0, &mut x, &grad);
        project_to_sphere(&mut x);
    }
    Ok(x)
}

fn project_to_sphere(x: &mut [f64]) {
    if let Some(n) = linalg::normalized(x) {
        x.copy_from_slice(&n);
    }
}

fn corrupt_link<R: Rng + ?Sized>(
    model: &KgModel,
    truth: &HashSet<Link>,
    relation: crate::graph::RelationId,
    tail: EntityId,
    rng: &mut R,
) -> Option<EntityId> {
    let n = model.entity_count() as u32;
    (0..64)
        .map(|_| EntityId(rng.random_range(0..n)))
        .find(|&e| e != tail && !truth.contains(&(relation, e)))
}

/// Stand-in for extracted image features: every label gets a standard
/// normal prototype in `dim` dimensions and `per_label` records
/// `prototype + N(0, noise²)`, with ids `label/i`.
pub fn synthetic_features<S: AsRef<str>>(
    labels: &[S],
    dim: usize,
    per_label: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<LabeledFeature>> {
    let jitter = Normal::new(0.0, noise).map_err(|e| SimulateError::Setup(format!("feature noise: {e}")))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = crate::seeded_rng(seed);
    let mut records = Vec::with_capacity(labels.len() * per_label);
    for label in labels {
        let label = label.as_ref();
        let prototype: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        for i in 0..per_label {
            records.push(LabeledFeature {
                image_id: format!("{label}/{i}"),
                label: label.to_owned(),
                feature: prototype.iter().map(|p| p + jitter.sample(&mut rng)).collect(),
            });
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpenWorldConfig {
    pub graph: ToyGraph,
    pub holdout_count: usize,
    /// Shared by the NTL and SNTL runs; only the variant differs.
    pub model: ModelConfig,
    pub images_per_entity: usize,
    /// Per-dimension standard deviation of the simulated image noise.
    pub image_noise: f64,
    pub anchor_epochs: usize,
    pub anchor_learning_rate: f64,
    pub false_sample_size: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for OpenWorldConfig {
    fn default() -> Self {
        Self {
            graph: ToyGraph::default(),
            holdout_count: 10,
            model: benchmark_config(0),
            images_per_entity: 5,
            image_noise: 0.1,
            anchor_epochs: 300,
            anchor_learning_rate: 0.02,
            false_sample_size: 2000,
            n: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpenWorldRow {
    pub variant: Variant,
    pub context: bool,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpenWorldOutcome {
    pub holdout: Vec<String>,
    pub query_count: usize,
    pub rows: Vec<OpenWorldRow>,
}

impl OpenWorldOutcome {
    pub fn get(&self, variant: Variant, context: bool, mode: EvalMode) -> Option<&Summary> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.context == context && r.summary.mode == mode)
            .map(|r| &r.summary)
    }
}

/// Picks `count` entities that have a hypernym, so none is the taxonomy root.
pub fn pick_holdout<R: Rng + ?Sized>(store: &TripleStore, count: usize, rng: &mut R) -> Result<BTreeSet<EntityId>> {
    let hypernym = store.relation_id(HYPERNYM);
    let mut eligible: Vec<EntityId> = store
        .triples()
        .iter()
        .filter(|t| Some(t.relation) == hypernym)
        .map(|t| t.head)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if eligible.len() < count {
        return Err(SimulateError::Setup(format!(
            "only {} entities can be held out, {count} requested",
            eligible.len()
        )));
    }
    eligible.sort();
    Ok(eligible.choose_multiple(rng, count).copied().collect())
}

/// Open-world queries for `model`: per held-out entity, `images_per_entity`
/// vectors `normalize(anchor + N(0, s²))`, each ranked against every
/// `(relation, known entity)` link. The truth is the entity's links to known
/// entities in the hard test split.
pub fn open_world_queries<R: Rng + ?Sized>(
    model: &KgModel,
    splits: &DatasetSplits,
    config: &OpenWorldConfig,
    rng: &mut R,
) -> Result<Vec<LinkQuery>> {
    let candidates = all_links(model);
    let noise = Normal::new(0.0, config.image_noise)
        .map_err(|e| SimulateError::Setup(format!("image noise: {e}")))?;
    let mut queries = Vec::new();
    for &entity in &splits.holdout {
        let label = splits.entities.label(entity.0);
        let heads: Vec<Triple> = splits.hard_test.iter().filter(|t| t.head == entity).copied().collect();
        let mut truth: Vec<Link> = heads
            .iter()
            .filter_map(|t| {
                Some((
                    model.relation_id(splits.relations.label(t.relation.0))?,
                    model.entity_id(splits.entities.label(t.tail.0))?,
                ))
            })
            .collect();
        truth.sort();
        truth.dedup();
        if truth.is_empty() {
            log::warn!("held-out entity {label} has no links to known entities; skipped");
            continue;
        }
        let anchor = fit_anchor(model, &truth, config.anchor_epochs, config.anchor_learning_rate, rng)?;
        for i in 0..config.images_per_entity {
            let noisy: Vec<f64> = anchor.iter().map(|a| a + noise.sample(rng)).collect();
            let vector = linalg::normalized(&noisy)
                .ok_or_else(|| SimulateError::Setup("simulated image vector is zero".into()))?;
            queries.push(
                LinkQuery::new(
                    format!("{label}#{i}"),
                    vector,
                    candidates.clone(),
                    truth.iter().copied().collect(),
                )?
                .with_class(label),
            );
        }
    }
    if queries.is_empty() {
        return Err(SimulateError::Setup("no held-out entity has a usable link".into()));
    }
    Ok(queries)
}

/// Trains NTL and SNTL on the open-world training split and evaluates both,
/// with and without context, per image and per class.
pub fn run_open_world(config: &OpenWorldConfig) -> Result<OpenWorldOutcome> {
    let full = config.graph.build()?;
    let mut rng = crate::seeded_rng(config.seed);
    let holdout = pick_holdout(&full, config.holdout_count, &mut rng)?;
    let splits = make_splits(&full, &holdout, 0.0, config.seed)?;
    let train_store = splits.train_store();

    let mut rows = Vec::new();
    let mut query_count = 0;
    for variant in [Variant::Ntl, Variant::Sntl] {
        let model = KgModel::init(
            variant,
            config.model.clone(),
            train_store.entities().clone(),
            train_store.relations().clone(),
        )?;
        let (model, _) = train(model, &train_store)?;
        let mut query_rng = crate::seeded_rng(config.seed.wrapping_add(1));
        let queries = open_world_queries(&model, &splits, config, &mut query_rng)?;
        query_count = queries.len();
        let mut context_rng = crate::seeded_rng(config.seed.wrapping_add(2));
        let context = fit_context(
            &model,
            &train_store,
            config.false_sample_size,
            &mut context_rng,
            ContextOptions::default(),
        )?;
        for with_context in [false, true] {
            for mode in [EvalMode::PerImage, EvalMode::PerClass] {
                let report = evaluate_dataset(&model, &queries, with_context.then_some(&context), config.n, mode)?;
                rows.push(OpenWorldRow {
                    variant,
                    context: with_context,
                    summary: report.summary(),
                });
            }
        }
    }
    Ok(OpenWorldOutcome {
        holdout: splits.holdout_labels(),
        query_count,
        rows,
    })
}
