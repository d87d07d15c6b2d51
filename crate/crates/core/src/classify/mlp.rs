//! Small fully connected network with ReLU hidden layers and a softmax head.
//!
//! Dropout acts only on the last hidden activation, right before the output
//! layer. Training is plain mini-batch gradient descent with momentum on the
//! cross-entropy loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::features::FEATURE_LEN;
use crate::error::{Error, Result};
use crate::model::{LesionClass, TrainParams};
use crate::rng::{stage_rng, StageRng};

pub const DEFAULT_LAYER_SIZES: [usize; 4] = [FEATURE_LEN, 64, 32, LesionClass::COUNT];

/// Dense layer; `weights` is row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradients with the same shapes as the network parameters.
pub type Gradients = Mlp;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / i as f64).sqrt()).expect("positive fan-in");
                Dense {
                    inputs: i,
                    outputs: o,
                    weights: (0..i * o).map(|_| normal.sample(rng)).collect(),
                    biases: vec![0.0; o],
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    fn zeros_like(&self) -> Gradients {
        Mlp { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    /// Activation of the last hidden layer (input to the output layer).
    pub fn penultimate(&self, x: &[f64]) -> Vec<f64> {
        let (hidden, _) = self.layers.split_at(self.layers.len() - 1);
        let mut a = x.to_vec();
        for l in hidden {
            a = l.apply(&a);
            relu(&mut a);
        }
        a
    }

    /// Output probabilities given a (possibly dropout-masked) penultimate activation.
    pub fn head(&self, penultimate: &[f64]) -> Vec<f64> {
        softmax(&self.layers.last().expect("non-empty network").apply(penultimate))
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.head(&self.penultimate(x))
    }

    /// Cross-entropy loss for one example and its parameter gradients.
    ///
    /// `mask` multiplies the penultimate activation element-wise (already
    /// including any inverted-dropout scaling).
    pub fn loss_and_grad(&self, x: &[f64], label: usize, mask: Option<&[f64]>) -> (f64, Gradients) {
        let mut grads = self.zeros_like();
        let loss = self.accumulate_grad(x, label, mask, &mut grads);
        (loss, grads)
    }

    /// Like [`Mlp::loss_and_grad`] but adds the gradients into `acc`.
    pub fn accumulate_grad(&self, x: &[f64], label: usize, mask: Option<&[f64]>, acc: &mut Gradients) -> f64 {
        let n = self.layers.len();
        // activations[i] is the input to layer i
        let mut activations = vec![x.to_vec()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.apply(activations.last().unwrap());
            if i + 1 < n {
                relu(&mut z);
                if i + 2 == n {
                    if let Some(m) = mask {
                        z.iter_mut().zip(m).for_each(|(a, k)| *a *= k);
                    }
                }
            }
            activations.push(z);
        }
        let probs = softmax(&activations[n]);
        let loss = -probs[label].max(1e-300).ln();

        let mut delta: Vec<f64> = probs;
        delta[label] -= 1.0;
        for i in (0..n).rev() {
            let input = &activations[i];
            let layer = &self.layers[i];
            let g = &mut acc.layers[i];
            for (o, d) in delta.iter().enumerate() {
                g.biases[o] += *d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, a)| *w += d * a);
            }
            if i == 0 {
                break;
            }
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
            }
            // input to layer i is relu(z) (times the mask for the penultimate layer)
            let masked = i + 1 == n;
            for (j, b) in back.iter_mut().enumerate() {
                let m = if masked { mask.map_or(1.0, |m| m[j]) } else { 1.0 };
                *b = if input[j] > 0.0 { *b * m } else { 0.0 };
            }
            delta = back;
        }
        loss
    }

    /// Applies `f(self_param, other_param)` to matching parameters, layer by layer.
    pub fn zip_params(&mut self, other: &Mlp, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| f(x, *y));
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| f(x, *y));
        }
    }

    fn fill(&mut self, v: f64) {
        for l in &mut self.layers {
            l.weights.fill(v);
            l.biases.fill(v);
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }
}

/// Per-feature standardisation fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Standardizer { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    pub fn fit(rows: &[&[f64]]) -> Self {
        let n = rows[0].len();
        let count = rows.len() as f64;
        let mean: Vec<f64> = (0..n).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / count).collect();
        let std = (0..n)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / count;
                if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Trained classifier plus everything needed to reproduce its inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub net: Mlp,
    pub scaler: Standardizer,
    pub dropout_rate: f64,
    pub train: TrainParams,
    pub seed: u64,
    pub final_loss: f64,
}

impl MlpModel {
    /// Untrained model with seeded He initialisation.
    pub fn initialize(sizes: &[usize], dropout_rate: f64, train: TrainParams, seed: u64) -> Self {
        let mut rng = stage_rng(seed, "mlp", "init");
        MlpModel {
            net: Mlp::init(sizes, &mut rng),
            scaler: Standardizer::identity(sizes[0]),
            dropout_rate,
            train,
            seed,
            final_loss: f64::NAN,
        }
    }

    /// Deterministic (dropout-off) class probabilities.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        self.net.predict(&self.scaler.apply(features))
    }

    pub fn penultimate(&self, features: &[f64]) -> Vec<f64> {
        self.net.penultimate(&self.scaler.apply(features))
    }

    /// Mean cross-entropy with dropout disabled.
    pub fn mean_loss(&self, data: &[(Vec<f64>, LesionClass)]) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        data.iter()
            .map(|(x, y)| -self.predict(x)[y.index()].max(1e-300).ln())
            .sum::<f64>()
            / data.len() as f64
    }
}

fn dropout_mask(len: usize, rate: f64, rng: &mut StageRng) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

/// Trains a fresh network on `data`. See [`train_with_validation`].
pub fn train(
    sizes: &[usize],
    dropout_rate: f64,
    params: &TrainParams,
    seed: u64,
    data: &[(Vec<f64>, LesionClass)],
) -> Result<MlpModel> {
    train_with_validation(sizes, dropout_rate, params, seed, data, &[])
}

/// Trains a fresh network; with a non-empty `validation` set, the weights of
/// the epoch with the lowest validation loss are returned.
pub fn train_with_validation(
    sizes: &[usize],
    dropout_rate: f64,
    params: &TrainParams,
    seed: u64,
    data: &[(Vec<f64>, LesionClass)],
    validation: &[(Vec<f64>, LesionClass)],
) -> Result<MlpModel> {
    for c in LesionClass::ALL {
        if !data.iter().any(|(_, y)| *y == c) {
            return Err(Error::Training(format!("class {c} absent from training data")));
        }
    }
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != sizes[0]) {
        return Err(Error::Training(format!("feature length {} != input size {}", x.len(), sizes[0])));
    }
    let mut model = MlpModel::initialize(sizes, dropout_rate, params.clone(), seed);
    let rows: Vec<&[f64]> = data.iter().map(|(x, _)| x.as_slice()).collect();
    model.scaler = Standardizer::fit(&rows);
    let scaled: Vec<(Vec<f64>, usize)> =
        data.iter().map(|(x, y)| (model.scaler.apply(x), y.index())).collect();

    let mut rng = stage_rng(seed, "mlp", "train");
    let mut velocity = model.net.clone();
    velocity.fill(0.0);
    let mut acc = velocity.clone();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    let penultimate = sizes[sizes.len() - 2];
    let mut best: Option<(f64, Mlp)> = None;

    for _epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            acc.fill(0.0);
            for &i in batch {
                let mask = dropout_mask(penultimate, dropout_rate, &mut rng);
                model.net.accumulate_grad(&scaled[i].0, scaled[i].1, Some(&mask), &mut acc);
            }
            let scale = params.learning_rate / batch.len() as f64;
            velocity.zip_params(&acc, |v, g| *v = params.momentum * *v - scale * g);
            model.net.zip_params(&velocity, |w, v| *w += v);
        }
        if !validation.is_empty() {
            let loss = model.mean_loss(validation);
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, model.net.clone()));
            }
        }
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    model.final_loss = model.mean_loss(data);
    if !model.final_loss.is_finite() {
        return Err(Error::Training("loss diverged".into()));
    }
    Ok(model)
}
