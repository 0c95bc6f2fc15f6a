use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_gradients, perturb, Objective, Perturbation};
use super::{KgError, KgModel, Result, Variant};
use crate::graph::{corrupt_tail, Triple, TripleStore};
use crate::optim;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn first(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// `epoch,mean_loss` CSV, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

/// Trains `model` on `store` with the settings in `model.config`.
///
/// Each epoch shuffles the training triples, cuts them into batches, pairs
/// every triple with one tail corruption and takes one optimizer step per
/// batch. SNTL uses the smoothed objective with noise resampled per batch;
/// NTL and TransE use the plain hinge loss. TransE entity vectors are kept
/// inside the unit ball.
pub fn train(mut model: KgModel, store: &TripleStore) -> Result<(KgModel, TrainReport)> {
    model.config.validate()?;
    if store.is_empty() {
        return Err(KgError::StoreMismatch("training store is empty".into()));
    }
    if store.entities() != &model.entities {
        return Err(KgError::StoreMismatch("entity vocabularies differ".into()));
    }
    if store.relations().len() > model.relations.len()
        || store
            .relations()
            .labels()
            .iter()
            .zip(model.relations.labels())
            .any(|(a, b)| a != b)
    {
        return Err(KgError::StoreMismatch("relation vocabularies differ".into()));
    }

    let config = model.config.clone();
    let mut rng = crate::seeded_rng(config.seed.wrapping_add(0x5eed));
    let mut optimizer = optim::build(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..store.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let positives: Vec<Triple> = chunk.iter().map(|&i| store.triples()[i]).collect();
            let negatives = positives
                .iter()
                .map(|t| corrupt_tail(t, store, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let noise = match model.variant {
                Variant::Sntl => {
                    Perturbation::sample(config.dim, &positives, &negatives, config.noise, &mut rng)
                }
                _ => Perturbation::none(),
            };
            let objective = match model.variant {
                Variant::Sntl => Objective::Smooth {
                    alpha: config.alpha,
                    noise: &noise,
                },
                _ => Objective::Hinge,
            };
            let (loss, mut grads) = loss_and_gradients(&model, &positives, &negatives, objective)?;
            if !loss.is_finite() {
                return Err(KgError::NonFinite {
                    epoch: epoch + 1,
                    batch: batch_no + 1,
                });
            }
            if config.sum_slices {
                grads.clear_combination();
            }
            let slots = grads.slots();
            model.for_each_slot_mut(|slot, params| optimizer.step(slot, params, slots[slot]));
            if model.variant == Variant::TransE {
                for t in positives.iter().chain(&negatives) {
                    for e in [t.head, t.tail] {
                        clamp_to_unit_ball(model.embedding.row_mut(e));
                    }
                }
            }
            epoch_loss += loss * positives.len() as f64;
        }
        let mean = epoch_loss / store.len() as f64;
        log::debug!("{} epoch {}: mean loss {mean:.6}", model.variant, epoch + 1);
        report.epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(KgError::NonFinite {
            epoch: config.epochs,
            batch: 0,
        });
    }
    Ok((model, report))
}

fn clamp_to_unit_ball(row: &mut [f64]) {
    let n = crate::linalg::norm(row);
    if n > 1.0 {
        row.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMode {
    /// `|Δf| / ‖(ε_h, ε_t)‖₂`
    #[default]
    Ratio,
    /// `|Δf|` alone.
    RawDifference,
}

/// Empirical smoothness of the score function around the given triples:
/// the mean, over triples and `samples_per_triple` noise draws, of the score
/// change when head and tail vectors are perturbed with noise of standard
/// deviation `s`, divided by the perturbation norm in [`LipschitzMode::Ratio`].
pub fn lipschitz_estimate<R: Rng + ?Sized>(
    model: &KgModel,
    triples: &[Triple],
    s: f64,
    rng: &mut R,
    samples_per_triple: usize,
    mode: LipschitzMode,
) -> Result<f64> {
    if !(s > 0.0) {
        return Err(KgError::Config("perturbation scale must be > 0".into()));
    }
    if triples.is_empty() || samples_per_triple == 0 {
        return Err(KgError::EmptyBatch);
    }
    let mut total = 0.0;
    for t in triples {
        let base = model.score_triple(t)?;
        let (h, tl) = (model.entity_vec(t.head), model.entity_vec(t.tail));
        for _ in 0..samples_per_triple {
            let (ph, pt, eps_norm) = loop {
                let ph = perturb(h, s, &mut *rng);
                let pt = perturb(tl, s, &mut *rng);
                let sq: f64 = ph
                    .iter()
                    .zip(h)
                    .chain(pt.iter().zip(tl))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if sq > 0.0 {
                    break (ph, pt, sq.sqrt());
                }
            };
            let delta = (model.score_unchecked(&ph, t.relation, &pt) - base).abs();
            total += match mode {
                LipschitzMode::Ratio => delta / eps_norm,
                LipschitzMode::RawDifference => delta,
            };
        }
    }
    Ok(total / (triples.len() * samples_per_triple) as f64)
}
