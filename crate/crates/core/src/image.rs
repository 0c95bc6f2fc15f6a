//! Image embedding: a small feed-forward map from precomputed image feature
//! vectors onto unit-norm points of the entity embedding space, trained with
//! the mean squared distance to the entity vector of each image's label.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Vocab;
use crate::kg::EntityEmbedding;
use crate::linalg;
use crate::optim::{Optimizer, RmsProp};

/// Label used in feature files for images of unknown class.
pub const UNLABELED: &str = "?";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding output is zero before normalization")]
    ZeroOutput,
    #[error("no training data")]
    EmptyData,
    #[error("label `{0}` has no target vector")]
    MissingTarget(String),
    #[error("empty vector list")]
    EmptyList,
    #[error("vector mean is zero")]
    ZeroMean,
    #[error("invalid embedder: {0}")]
    Invalid(String),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeature {
    pub image_id: String,
    /// Entity label, or [`UNLABELED`].
    pub label: String,
    pub feature: Vec<f64>,
}

impl LabeledFeature {
    pub fn is_labeled(&self) -> bool {
        self.label != UNLABELED
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(format!("unknown activation `{other}` (expected tanh or elu)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// Hidden layer widths; empty means a single linear layer.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Fraction of hidden activations zeroed during training.
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            activation: Activation::Tanh,
            dropout: 0.3,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| linalg::dot(row, x) + b)
            .collect()
    }
}

/// Feed-forward map `F → hidden… → d` with an L2-normalized output.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEmbedder {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub dropout: f64,
}

impl ImageEmbedder {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, dropout: f64, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ImageError::Invalid(format!("bad layer sizes {dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(ImageError::Invalid(format!("dropout {dropout} outside [0, 1)")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            dropout,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(ImageError::Invalid("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ImageError::Invalid(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(ImageError::Invalid(format!("layer {i} input width mismatch")));
            }
        }
        Ok(Self {
            layers,
            activation,
            dropout,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    /// Inference-mode forward pass; the result has unit L2 norm.
    pub fn embed(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.input_dim() {
            return Err(ImageError::Dimension {
                expected: self.input_dim(),
                actual: feature.len(),
            });
        }
        let z = self.forward_raw(feature);
        linalg::normalized(&z).ok_or(ImageError::ZeroOutput)
    }

    fn forward_raw(&self, feature: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = feature.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x);
            if i < last {
                x.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        x
    }

    /// Training-mode forward pass. Returns the per-layer inputs (after
    /// activation and dropout), the dropout masks and the raw output.
    fn forward_train<R: Rng + ?Sized>(&self, feature: &[f64], rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        let mut x = feature.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&x);
            inputs.push(std::mem::take(&mut x));
            if i < last {
                let mask: Vec<f64> = (0..out.len())
                    .map(|_| {
                        if self.dropout > 0.0 && rng.random::<f64>() < self.dropout {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                for (v, m) in out.iter_mut().zip(&mask) {
                    *v = self.activation.apply(*v) * m;
                }
                masks.push(mask);
            }
            x = out;
        }
        (inputs, masks, x)
    }

    /// Training-mode output (dropout active), normalized.
    pub fn embed_train<R: Rng + ?Sized>(&self, feature: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let (_, _, z) = self.forward_train(feature, rng);
        linalg::normalized(&z).ok_or(ImageError::ZeroOutput)
    }

    fn slots_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    /// Adds `∂‖ĥ(x) − target‖² / ∂θ · scale` to `grads` (one weight and one
    /// bias buffer per layer) and returns the squared distance.
    fn backprop<R: Rng + ?Sized>(
        &self,
        feature: &[f64],
        target: &[f64],
        scale: f64,
        grads: &mut [Vec<f64>],
        rng: &mut R,
    ) -> f64 {
        let (inputs, masks, z) = self.forward_train(feature, rng);
        let norm = linalg::norm(&z);
        if norm == 0.0 || !norm.is_finite() {
            return linalg::dot(target, target);
        }
        let y: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let dy: Vec<f64> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b) * scale).collect();
        let loss: f64 = y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let proj = linalg::dot(&y, &dy);
        let mut delta: Vec<f64> = dy.iter().zip(&y).map(|(g, yi)| (g - yi * proj) / norm).collect();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = &inputs[li];
            let (gw, rest) = grads[2 * li..].split_at_mut(1);
            let gw = &mut gw[0];
            let gb = &mut rest[0];
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                linalg::axpy(*d, x, &mut gw[o * layer.inputs..(o + 1) * layer.inputs]);
            }
            if li == 0 {
                break;
            }
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                linalg::axpy(*d, &layer.weights[o * layer.inputs..(o + 1) * layer.inputs], &mut back);
            }
            // x = act(pre) * mask, so d(pre) = back * mask * act'(pre)
            let mask = &masks[li - 1];
            delta = back
                .iter()
                .zip(x)
                .zip(mask)
                .map(|((b, xi), m)| {
                    if *m == 0.0 {
                        0.0
                    } else {
                        b * m * self.activation.derivative_from_output(xi / m)
                    }
                })
                .collect();
        }
        loss
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedderReport {
    /// Mean squared distance on the training set in inference mode, before
    /// training (index 0) and after each epoch.
    pub losses: Vec<f64>,
}

impl EmbedderReport {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss")
    }
}

/// Resolved training pairs: feature and target row.
fn resolve<'a>(
    data: &'a [LabeledFeature],
    vocab: &Vocab,
    targets: &'a EntityEmbedding,
) -> Result<Vec<(&'a [f64], &'a [f64])>> {
    data.iter()
        .map(|f| {
            let id = vocab
                .get(&f.label)
                .ok_or_else(|| ImageError::MissingTarget(f.label.clone()))?;
            Ok((f.feature.as_slice(), targets.row(crate::graph::EntityId(id))))
        })
        .collect()
}

/// Mean of `‖h(x) − g*(e)‖²` over `pairs` in inference mode.
fn dataset_loss(embedder: &ImageEmbedder, pairs: &[(&[f64], &[f64])]) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|(x, t)| match embedder.embed(x) {
            Ok(y) => y.iter().zip(*t).map(|(a, b)| (a - b) * (a - b)).sum(),
            Err(_) => linalg::dot(t, t),
        })
        .sum();
    total / pairs.len() as f64
}

/// Trains an embedder mapping each feature onto the target vector of its
/// label with mini-batch RMSProp. `vocab` maps labels to rows of `targets`.
pub fn train_embedder(
    data: &[LabeledFeature],
    vocab: &Vocab,
    targets: &EntityEmbedding,
    config: &EmbedderConfig,
) -> Result<(ImageEmbedder, EmbedderReport)> {
    if data.is_empty() {
        return Err(ImageError::EmptyData);
    }
    let feature_dim = data[0].feature.len();
    if let Some(bad) = data.iter().find(|f| f.feature.len() != feature_dim) {
        return Err(ImageError::Dimension {
            expected: feature_dim,
            actual: bad.feature.len(),
        });
    }
    if config.batch_size == 0 {
        return Err(ImageError::Invalid("batch_size must be >= 1".into()));
    }
    let pairs = resolve(data, vocab, targets)?;

    let mut rng = crate::seeded_rng(config.seed);
    let mut dims = vec![feature_dim];
    dims.extend(&config.hidden);
    dims.push(targets.dim());
    let mut embedder = ImageEmbedder::new(&dims, config.activation, config.dropout, &mut rng)?;
    let mut optimizer = RmsProp::new(config.learning_rate);
    let mut report = EmbedderReport {
        losses: vec![dataset_loss(&embedder, &pairs)],
    };

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Vec<f64>> = embedder
                .layers
                .iter()
                .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, t) = pairs[i];
                embedder.backprop(x, t, scale, &mut grads, &mut rng);
            }
            for (slot, (params, g)) in embedder.slots_mut().zip(&grads).enumerate() {
                optimizer.step(slot, params, g);
            }
        }
        let loss = dataset_loss(&embedder, &pairs);
        log::debug!("embedder epoch {}: loss {loss:.6}", epoch + 1);
        report.losses.push(loss);
    }
    Ok((embedder, report))
}

/// Arithmetic mean of `vectors`, normalized to unit length.
pub fn class_mean(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(ImageError::EmptyList)?;
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != sum.len() {
            return Err(ImageError::Dimension {
                expected: sum.len(),
                actual: v.len(),
            });
        }
        linalg::axpy(1.0, v, &mut sum);
    }
    let n = vectors.len() as f64;
    sum.iter_mut().for_each(|x| *x /= n);
    linalg::normalized(&sum).ok_or(ImageError::ZeroMean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_embedder(d: usize) -> ImageEmbedder {
        let mut w = vec![0.0; d * d];
        (0..d).for_each(|i| w[i * d + i] = 1.0);
        ImageEmbedder::from_layers(
            vec![Layer {
                inputs: d,
                outputs: d,
                weights: w,
                bias: vec![0.0; d],
            }],
            Activation::Tanh,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_network_passes_unit_vectors() {
        let e = identity_embedder(4);
        assert_eq!(e.embed(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn embed_errors() {
        let e = identity_embedder(3);
        assert!(matches!(e.embed(&[1.0]), Err(ImageError::Dimension { expected: 3, actual: 1 })));
        assert!(matches!(e.embed(&[0.0; 3]), Err(ImageError::ZeroOutput)));
    }

    #[test]
    fn embed_is_pure_and_unit_norm() {
        let mut rng = crate::seeded_rng(1);
        let e = ImageEmbedder::new(&[6, 10, 3], Activation::Elu, 0.3, &mut rng).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 0.5, 0.1];
        let a = e.embed(&x).unwrap();
        assert_eq!(a, e.embed(&x).unwrap());
        assert!((linalg::norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_only_affects_training_passes() {
        let mut rng = crate::seeded_rng(2);
        let e = ImageEmbedder::new(&[5, 32, 4], Activation::Tanh, 0.3, &mut rng).unwrap();
        let x = [1.0, 0.5, -0.5, 0.2, 0.9];
        let a = e.embed_train(&x, &mut rng).unwrap();
        let b = e.embed_train(&x, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(e.embed(&x).unwrap(), e.embed(&x).unwrap());
    }

    #[test]
    fn class_mean_cases() {
        assert_eq!(class_mean(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        let m = class_mean(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((m[0] - 0.5f64.sqrt()).abs() < 1e-15 && (m[1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(class_mean(&[vec![0.0, 2.0]]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(class_mean(&[]), Err(ImageError::EmptyList)));
        assert!(matches!(
            class_mean(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            Err(ImageError::ZeroMean)
        ));
    }

    /// Central finite differences of the training loss (dropout off) against
    /// the analytic backward pass.
    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = crate::seeded_rng(3);
        for activation in [Activation::Tanh, Activation::Elu] {
            let e = ImageEmbedder::new(&[4, 5, 3], activation, 0.0, &mut rng).unwrap();
            let x = [0.4, -0.7, 1.1, 0.2];
            let target = [0.5, -0.1, 0.3];
            let loss = |m: &ImageEmbedder| -> f64 {
                let y = m.embed(&x).unwrap();
                y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            let mut grads: Vec<Vec<f64>> =
                e.layers.iter().flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]]).collect();
            e.backprop(&x, &target, 1.0, &mut grads, &mut rng);
            let h = 1e-6;
            for slot in 0..grads.len() {
                for i in 0..grads[slot].len() {
                    let mut plus = e.clone();
                    let mut minus = e.clone();
                    plus.slots_mut().nth(slot).unwrap()[i] += h;
                    minus.slots_mut().nth(slot).unwrap()[i] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let an = grads[slot][i];
                    assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "slot {slot} [{i}]: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn zero_rate_training_changes_nothing() {
        let vocab = Vocab::from_labels(["a", "b"]).unwrap();
        let targets = EntityEmbedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        let data = vec![
            LabeledFeature { image_id: "1".into(), label: "a".into(), feature: vec![1.0, 0.2, 0.0] },
            LabeledFeature { image_id: "2".into(), label: "b".into(), feature: vec![0.0, 0.9, 0.4] },
        ];
        let config = EmbedderConfig { learning_rate: 0.0, epochs: 3, hidden: vec![4], ..Default::default() };
        let (_, report) = train_embedder(&data, &vocab, &targets, &config).unwrap();
        assert!(report.losses.windows(2).all(|w| w[0] == w[1]));

        let bad = vec![LabeledFeature { image_id: "x".into(), label: "zz".into(), feature: vec![0.0; 3] }];
        assert!(matches!(
            train_embedder(&bad, &vocab, &targets, &config),
            Err(ImageError::MissingTarget(_))
        ));
    }
}
