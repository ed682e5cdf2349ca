use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::model::Model;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Indices of layers updated by SGD; all others stay bit-identical.
    pub trainable_layers: Vec<usize>,
    pub seed: u64,
}

/// Plain per-sample SGD over the trainable layers; the sample order of every
/// epoch is a seeded shuffle. Returns the fine-tuned model and the mean
/// training loss observed during each epoch.
pub fn personalize(m: &Model, d: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<f64>)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset(" (personalization set)"));
    }
    if cfg.trainable_layers.is_empty() {
        return Err(Error::InvalidArgument("trainable layer set is empty".into()));
    }
    let n_layers = m.architecture().num_layers();
    if let Some(&bad) = cfg.trainable_layers.iter().find(|&&l| l >= n_layers) {
        return Err(Error::InvalidArgument(format!("trainable layer {bad} >= layer count {n_layers}")));
    }
    let trainable: Vec<bool> = (0..n_layers).map(|l| cfg.trainable_layers.contains(&l)).collect();

    let mut model = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &d.samples()[i];
            total += model.sgd_step(&s.x, s.y, cfg.lr, &trainable)?;
        }
        epoch_losses.push(total / d.len() as f64);
    }
    Ok((model, epoch_losses))
}

pub fn mean_loss(m: &Model, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset(""));
    }
    let mut total = 0.0;
    for s in d.samples() {
        let pass = m.forward(&s.x)?;
        let logits = pass.logits();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        total += lse - logits[s.y];
    }
    Ok(total / d.len() as f64)
}

/// Fraction of correct argmax predictions, optionally restricted to a class set.
pub fn evaluate(m: &Model, d: &Dataset, class_filter: Option<&[usize]>) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in d.samples() {
        if class_filter.is_some_and(|c| !c.contains(&s.y)) {
            continue;
        }
        total += 1;
        if m.predict(&s.x)? == s.y {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyDataset(" after class filter"));
    }
    Ok(correct as f64 / total as f64)
}
