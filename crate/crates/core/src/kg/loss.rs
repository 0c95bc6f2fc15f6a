use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{EntityEmbedding, KgError, KgModel, RelationParams, Result};
use crate::graph::{EntityId, Triple};

/// Partial derivatives of a loss, shaped like the model it differentiates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub entities: EntityEmbedding,
    pub relations: Vec<RelationParams>,
}

impl GradientSet {
    /// Gradient slices in the model's slot order.
    pub fn slots(&self) -> Vec<&[f64]> {
        let mut out = vec![self.entities.as_slice()];
        for r in &self.relations {
            out.extend(r.slots());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slots()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Zeroes the slice-combination gradients (used when `u` is frozen).
    pub fn clear_combination(&mut self) {
        for r in &mut self.relations {
            if let RelationParams::Tensor(p) = r {
                p.u.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}

/// Returns `vec + ε` with `ε ~ N(0, s²I)`; `s` is a standard deviation.
pub fn perturb<R: Rng + ?Sized>(vec: &[f64], s: f64, rng: &mut R) -> Vec<f64> {
    if s == 0.0 {
        return vec.to_vec();
    }
    let normal = Normal::new(0.0, s).expect("noise scale must be finite and >= 0");
    vec.iter().map(|x| x + normal.sample(rng)).collect()
}

/// Additive noise for the entities of one batch; `ĝ(e) = g(e) + noise(e)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Perturbation {
    noise: HashMap<EntityId, Vec<f64>>,
}

impl Perturbation {
    /// No noise at all; `ĝ = g`.
    pub fn none() -> Self {
        Self::default()
    }

    /// Draws one noise vector per distinct entity of the batch, in order of
    /// first appearance (head, tail of each positive, then the negative).
    pub fn sample<R: Rng + ?Sized>(
        dim: usize,
        positives: &[Triple],
        negatives: &[Triple],
        s: f64,
        rng: &mut R,
    ) -> Self {
        let mut noise = HashMap::new();
        if s == 0.0 {
            return Self { noise };
        }
        let zeros = vec![0.0; dim];
        for (p, n) in positives.iter().zip(negatives) {
            for e in [p.head, p.tail, n.head, n.tail] {
                noise
                    .entry(e)
                    .or_insert_with(|| perturb(&zeros, s, &mut *rng));
            }
        }
        Self { noise }
    }

    pub fn from_map(noise: HashMap<EntityId, Vec<f64>>) -> Self {
        Self { noise }
    }

    pub fn is_zero(&self) -> bool {
        self.noise.values().all(|v| v.iter().all(|x| *x == 0.0))
    }

    pub fn offset(&self, entity: EntityId) -> Option<&[f64]> {
        self.noise.get(&entity).map(Vec::as_slice)
    }

    fn apply<'a>(&self, entity: EntityId, base: &'a [f64]) -> Cow<'a, [f64]> {
        match self.noise.get(&entity) {
            Some(eps) => Cow::Owned(base.iter().zip(eps).map(|(x, e)| x + e).collect()),
            None => Cow::Borrowed(base),
        }
    }
}

/// Which objective a gradient or loss evaluation refers to.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// Margin ranking loss on the clean embedding.
    Hinge,
    /// `α·L(g) + (1−α)·L(ĝ)` with the given perturbation.
    Smooth { alpha: f64, noise: &'a Perturbation },
}

fn check_batch(model: &KgModel, positives: &[Triple], negatives: &[Triple]) -> Result<()> {
    if positives.is_empty() {
        return Err(KgError::EmptyBatch);
    }
    if positives.len() != negatives.len() {
        return Err(KgError::Misaligned {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    for t in positives.iter().chain(negatives) {
        for e in [t.head, t.tail] {
            if e.index() >= model.entity_count() {
                return Err(KgError::UnknownEntity(e.0));
            }
        }
        if t.relation.index() >= model.relation_params.len() {
            return Err(KgError::UnknownRelation(t.relation.0));
        }
    }
    Ok(())
}

/// Mean hinge `[γ + f(pos) − f(neg)]₊` over the batch on the (possibly
/// perturbed) embedding, times `weight`. When `grads` is given, adds
/// `weight ×` the gradient.
fn hinge_pass(
    model: &KgModel,
    positives: &[Triple],
    negatives: &[Triple],
    noise: &Perturbation,
    weight: f64,
    mut grads: Option<&mut GradientSet>,
) -> f64 {
    let n = positives.len() as f64;
    let gamma = model.config.gamma;
    let vec = |e: EntityId| noise.apply(e, model.entity_vec(e));
    let mut total = 0.0;
    for (p, q) in positives.iter().zip(negatives) {
        let (ph, pt) = (vec(p.head), vec(p.tail));
        let (qh, qt) = (vec(q.head), vec(q.tail));
        let margin = gamma + model.score_unchecked(&ph, p.relation, &pt)
            - model.score_unchecked(&qh, q.relation, &qt);
        if margin > 0.0 {
            total += margin;
            if let Some(g) = grads.as_deref_mut() {
                accumulate_score_grad(model, p, &ph, &pt, weight / n, g);
                accumulate_score_grad(model, q, &qh, &qt, -weight / n, g);
            }
        }
    }
    weight * total / n
}

/// Adds `coef · ∂f(h, r, t)/∂θ` to `grads`, where `h` and `t` are the vectors
/// actually scored for `triple`.
fn accumulate_score_grad(
    model: &KgModel,
    triple: &Triple,
    h: &[f64],
    t: &[f64],
    coef: f64,
    grads: &mut GradientSet,
) {
    let d = model.dim();
    let r = triple.relation.index();
    match (&model.relation_params[r], &mut grads.relations[r]) {
        (RelationParams::Tensor(p), RelationParams::Tensor(gp)) => {
            let z = p.preactivations(h, t);
            let mut gh = vec![0.0; d];
            let mut gt = vec![0.0; d];
            for s in 0..p.slices {
                let th = z[s].tanh();
                gp.u[s] += coef * th;
                let dz = coef * p.u[s] * (1.0 - th * th);
                if dz == 0.0 {
                    continue;
                }
                gp.b[s] += dz;
                let w = p.w_slice(s);
                let v = p.v_row(s);
                let dd = d * d;
                let gw = &mut gp.w[s * dd..(s + 1) * dd];
                let gv = &mut gp.v[s * 2 * d..(s + 1) * 2 * d];
                for i in 0..d {
                    let row = &w[i * d..(i + 1) * d];
                    let mut w_t = 0.0;
                    for j in 0..d {
                        gw[i * d + j] += dz * h[i] * t[j];
                        w_t += row[j] * t[j];
                        gt[j] += dz * h[i] * row[j];
                    }
                    gh[i] += dz * (w_t + v[i]);
                    gv[i] += dz * h[i];
                    gv[d + i] += dz * t[i];
                    gt[i] += dz * v[d + i];
                }
            }
            crate::linalg::axpy(1.0, &gh, grads.entities.row_mut(triple.head));
            crate::linalg::axpy(1.0, &gt, grads.entities.row_mut(triple.tail));
        }
        (RelationParams::Translation(tr), RelationParams::Translation(gtr)) => {
            let diff: Vec<f64> = h.iter().zip(tr).zip(t).map(|((a, b), c)| a + b - c).collect();
            let norm = crate::linalg::norm(&diff);
            if norm == 0.0 {
                return;
            }
            let scale = coef / norm;
            crate::linalg::axpy(scale, &diff, gtr);
            crate::linalg::axpy(scale, &diff, grads.entities.row_mut(triple.head));
            crate::linalg::axpy(-scale, &diff, grads.entities.row_mut(triple.tail));
        }
        _ => unreachable!("gradient set shaped from the model"),
    }
}

/// Mean margin ranking loss `(1/N) Σ [γ + f(pos_i) − f(neg_i)]₊`, where
/// `negatives[i]` is the corruption of `positives[i]`.
pub fn batch_hinge_loss(model: &KgModel, positives: &[Triple], negatives: &[Triple]) -> Result<f64> {
    check_batch(model, positives, negatives)?;
    Ok(hinge_pass(model, positives, negatives, &Perturbation::none(), 1.0, None))
}

/// Smoothed objective with an explicit perturbation.
pub fn smooth_loss_with(
    model: &KgModel,
    positives: &[Triple],
    negatives: &[Triple],
    alpha: f64,
    noise: &Perturbation,
) -> Result<f64> {
    loss_impl(
        model,
        positives,
        negatives,
        Objective::Smooth { alpha, noise },
        None,
    )
}

/// Smoothed objective `α·L(g) + (1−α)·L(ĝ)` with fresh noise of standard
/// deviation `s` for every entity in the batch.
pub fn smooth_loss<R: Rng + ?Sized>(
    model: &KgModel,
    positives: &[Triple],
    negatives: &[Triple],
    alpha: f64,
    s: f64,
    rng: &mut R,
) -> Result<f64> {
    let noise = Perturbation::sample(model.dim(), positives, negatives, s, rng);
    smooth_loss_with(model, positives, negatives, alpha, &noise)
}

fn loss_impl(
    model: &KgModel,
    positives: &[Triple],
    negatives: &[Triple],
    objective: Objective<'_>,
    mut grads: Option<&mut GradientSet>,
) -> Result<f64> {
    check_batch(model, positives, negatives)?;
    let clean = Perturbation::none();
    match objective {
        Objective::Smooth { alpha, noise } if alpha != 1.0 && !noise.is_zero() => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(KgError::Config(format!("alpha {alpha} outside (0, 1]")));
            }
            let a = hinge_pass(model, positives, negatives, &clean, alpha, grads.as_deref_mut());
            let b = hinge_pass(model, positives, negatives, noise, 1.0 - alpha, grads);
            Ok(a + b)
        }
        Objective::Smooth { alpha, .. } if !(alpha > 0.0 && alpha <= 1.0) => {
            Err(KgError::Config(format!("alpha {alpha} outside (0, 1]")))
        }
        _ => Ok(hinge_pass(model, positives, negatives, &clean, 1.0, grads)),
    }
}

/// Loss value and its exact gradient. Inactive hinge terms contribute
/// nothing; the kink takes subgradient zero.
pub fn loss_and_gradients(
    model: &KgModel,
    positives: &[Triple],
    negatives: &[Triple],
    objective: Objective<'_>,
) -> Result<(f64, GradientSet)> {
    let mut grads = model.zero_gradients();
    let loss = loss_impl(model, positives, negatives, objective, Some(&mut grads))?;
    Ok((loss, grads))
}

pub fn loss_gradients(
    model: &KgModel,
    positives: &[Triple],
    negatives: &[Triple],
    objective: Objective<'_>,
) -> Result<GradientSet> {
    loss_and_gradients(model, positives, negatives, objective).map(|(_, g)| g)
}
