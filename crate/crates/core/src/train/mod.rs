//! Composite loss, learning-rate schedule and the training loop.

mod adam;

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, BETA1, BETA2, EPSILON};

use crate::data::{crop_indices, PointCloud};
use crate::metrics::ConfusionMatrix;
use crate::model::{argmax_rows, Binder, ForwardOutput, Geometry, Model};
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f32,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f32,
    pub decay_every: usize,
    /// Crops whose gradients are averaged into one optimiser step.
    pub batch_size: usize,
    pub seed: u64,
    pub crop_size: usize,
    /// Fixed crops drawn from every training cloud.
    pub crops_per_cloud: usize,
    pub ignore_label: Option<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr0: 0.01,
            decay: 0.5,
            decay_every: 10,
            batch_size: 1,
            seed: 0,
            crop_size: 4096,
            crops_per_cloud: 4,
            ignore_label: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.crop_size == 0 || self.crops_per_cloud == 0 {
            return Err(Error::Config("decay interval, batch size, crop size and crop count must be positive".into()));
        }
        Ok(())
    }
}

/// `lr0 · decay^⌊epoch / decay_every⌋` for a zero-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f32 {
    cfg.lr0 * cfg.decay.powi((epoch / cfg.decay_every) as i32)
}

/// `ce + Σ_m ω_m · L_m` on plain numbers.
pub fn total_loss_value(ce: f32, aug: &[f32], weights: &[f32]) -> Result<f32> {
    if aug.len() != weights.len() {
        return Err(Error::Config(format!("{} level losses for {} weights", aug.len(), weights.len())));
    }
    Ok(ce + aug.iter().zip(weights).map(|(l, w)| l * w).sum::<f32>())
}

/// Records `ce + Σ_m ω_m · L_m`; inactive levels contribute nothing.
pub fn total_loss(g: &mut Graph, ce: Var, aug: &[Option<Var>], weights: &[f32]) -> Result<Var> {
    if aug.len() != weights.len() {
        return Err(Error::Config(format!("{} level losses for {} weights", aug.len(), weights.len())));
    }
    let mut total = ce;
    for (l, &w) in aug.iter().zip(weights) {
        if let Some(l) = l {
            if w != 0.0 {
                let term = g.scale(*l, w);
                total = g.add(total, term)?;
            }
        }
    }
    Ok(total)
}

/// A fixed training crop with its precomputed pyramid.
#[derive(Clone, Debug)]
pub struct Sample {
    pub cloud: PointCloud,
    pub geometry: Geometry,
    pub input: Vec<f32>,
}

impl Sample {
    pub fn new(model: &Model, cloud: PointCloud) -> Result<Self> {
        let geometry = model.geometry(&cloud.positions)?;
        let input = cloud.input_features(model.config().input_channels)?;
        Ok(Self { cloud, geometry, input })
    }
}

/// Draws `crops_per_cloud` crops from every cloud, deterministically.
pub fn prepare_samples(model: &Model, clouds: &[PointCloud], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for cloud in clouds {
        cloud.labels()?;
        for _ in 0..cfg.crops_per_cloud {
            let idx = crop_indices(cloud, cfg.crop_size, &mut rng);
            out.push(Sample::new(model, cloud.select(&idx))?);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("no training clouds".into()));
    }
    Ok(out)
}

/// Everything recorded by one loss evaluation.
pub struct LossPass {
    pub graph: Graph,
    pub out: ForwardOutput,
    pub ce: Var,
    pub total: Var,
}

impl LossPass {
    pub fn total_value(&self) -> f32 {
        self.graph.value(self.total).item()
    }

    /// Per-level unweighted augmentation losses (0 where inactive).
    pub fn aug_values(&self) -> Vec<f32> {
        self.out.aug_losses.iter().map(|l| l.map_or(0.0, |v| self.graph.value(v).item())).collect()
    }

    /// Gradients of every trainable parameter the pass touched.
    pub fn gradients(&self, model: &Model) -> Result<HashMap<String, Vec<f32>>> {
        let mut grads = HashMap::new();
        for (name, &var) in &self.out.bound {
            let p = model.params().get(name)?;
            if p.trainable {
                let g = self.graph.grad(var).map_or_else(|| vec![0.0; p.tensor.numel()], <[f32]>::to_vec);
                grads.insert(name.clone(), g);
            }
        }
        Ok(grads)
    }
}

/// Forward pass plus composite loss on one sample.
pub fn loss_pass(model: &Model, sample: &Sample, training: bool, seed: u64, ignore: Option<u32>) -> Result<LossPass> {
    let mut graph = Graph::new();
    let out = model.forward(&mut graph, Binder::new(model.params()), &sample.geometry, &sample.input, training, seed)?;
    let ce = graph.cross_entropy(out.logits, sample.cloud.labels()?, ignore)?;
    let weights = model.config().effective_loss_weights();
    let total = total_loss(&mut graph, ce, &out.aug_losses, &weights)?;
    Ok(LossPass { graph, out, ce, total })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// One-based epoch number.
    pub epoch: usize,
    pub lr: f32,
    /// Mean total loss over the epoch's crops.
    pub loss: f32,
    /// Training-mode accuracy over the epoch's crops.
    pub oa: f32,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}, {}", self.epoch, self.lr, self.loss, self.oa)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub optimizer_steps: u64,
}

/// Trains `model` in place. `on_epoch` sees each epoch's log line.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut adam = Adam::new();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut pending: HashMap<String, Vec<f32>> = HashMap::new();
        let mut in_batch = 0;
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (pos, &s) in order.iter().enumerate() {
            let sample = &samples[s];
            let mut pass = loss_pass(model, sample, true, rng.gen(), cfg.ignore_label)?;
            let loss = pass.total_value();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {} crop {s}: ce {}, level losses {:?}",
                    epoch + 1,
                    pass.graph.value(pass.ce).item(),
                    pass.aug_values()
                )));
            }
            pass.graph.backward(pass.total)?;
            let grads = pass.gradients(model)?;
            if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient of `{name}` at epoch {} crop {s}", epoch + 1)));
            }
            for (name, g) in grads {
                match pending.get_mut(&name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(name, g);
                    }
                }
            }
            model.apply_bn_updates(&pass.out.bn_updates)?;

            let labels = sample.cloud.labels()?;
            let preds = argmax_rows(pass.graph.data(pass.out.logits), model.config().num_classes);
            for (t, p) in labels.iter().zip(&preds) {
                if Some(*t) != cfg.ignore_label {
                    seen += 1;
                    correct += usize::from(t == p);
                }
            }
            loss_sum += loss as f64;

            in_batch += 1;
            if in_batch == cfg.batch_size || pos + 1 == order.len() {
                if in_batch > 1 {
                    let inv = 1.0 / in_batch as f32;
                    pending.values_mut().flatten().for_each(|v| *v *= inv);
                }
                adam.step(model.params_mut(), &pending, lr)?;
                report.optimizer_steps += 1;
                pending.clear();
                in_batch = 0;
            }
        }
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: (loss_sum / samples.len() as f64) as f32,
            oa: if seen == 0 { 0.0 } else { correct as f32 / seen as f32 },
        };
        on_epoch(&log)?;
        report.epochs.push(log);
    }
    Ok(report)
}

/// Eval-mode predictions and confusion matrix on a whole labelled cloud.
pub fn evaluate(model: &Model, cloud: &PointCloud) -> Result<(ConfusionMatrix, Vec<u32>)> {
    let sample = Sample::new(model, cloud.clone())?;
    let preds = model.predict_labels(&sample.geometry, &sample.input)?;
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    cm.accumulate(cloud.labels()?, &preds)?;
    Ok((cm, preds))
}

#[cfg(test)]
mod tests;
