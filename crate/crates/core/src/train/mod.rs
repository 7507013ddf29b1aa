//! Per-sample SGD with early stopping, classification metrics and attention
//! localization analysis.

mod metrics;

pub use metrics::{attention_localization_auc, bag_auc, Member, Metrics};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bagdata::{FeatureView, LatentNode, NestedSample, WeakSample};
use crate::error::{Error, Result};
use crate::gradcore::sgd_step;
use crate::model::{AttentionTree, NmilModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Drives the validation split and the per-epoch shuffles.
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} must lie in (0, 1)",
                self.validation_fraction
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} must lie in [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: NmilModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Splits sample positions into `(keep, held_out)` with `fraction` of each
/// label held out (at least one per label present, rounding to nearest).
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for class in [0u8, 1] {
        let mut ix: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if ix.is_empty() {
            continue;
        }
        ix.shuffle(&mut rng);
        let n_held = ((ix.len() as f64 * fraction).round() as usize).clamp(1, ix.len());
        held.extend_from_slice(&ix[..n_held]);
        keep.extend_from_slice(&ix[n_held..]);
    }
    if keep.is_empty() || held.is_empty() {
        return Err(Error::Config(format!(
            "{} sample(s) cannot be split into two nonempty parts",
            labels.len()
        )));
    }
    keep.sort_unstable();
    held.sort_unstable();
    Ok((keep, held))
}

/// Trains on a stratified split of `samples`, holding out
/// `config.validation_fraction` for early stopping.
pub fn train(model: NmilModel, features: FeatureView<'_>, samples: &[WeakSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let (tr, va) = stratified_split(&labels, config.validation_fraction, config.seed)?;
    let train_set: Vec<WeakSample> = tr.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<WeakSample> = va.iter().map(|&i| samples[i].clone()).collect();
    train_with_validation(model, features, &train_set, &val_set, config)
}

fn mean_loss(model: &NmilModel, features: FeatureView<'_>, samples: &[WeakSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += model.loss(features, &s.tree, s.label)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains with an explicit validation set.
pub fn train_with_validation(
    mut model: NmilModel,
    features: FeatureView<'_>,
    train_set: &[WeakSample],
    val_set: &[WeakSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Degenerate("training and validation sets must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    model.zero_grad();

    let mut best = model.clone();
    let mut best_loss = mean_loss(&model, features, val_set)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &train_set[i];
            let (loss, _) = model.loss_and_grad(features, &s.tree, s.label)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, sample: i, loss });
            }
            total += loss;
            sgd_step(&mut model.params_mut(), config.learning_rate)?;
        }
        let validation_loss = mean_loss(&model, features, val_set)?;
        if !validation_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                sample: 0,
                loss: validation_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            validation_loss,
        });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    best.zero_grad();
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

/// Thresholded predictions scored against the weak labels.
pub fn evaluate(model: &NmilModel, features: FeatureView<'_>, samples: &[WeakSample], threshold: f64) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Degenerate("evaluation set is empty".into()));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.predict(features, &s.tree)?;
        pairs.push((u8::from(p >= threshold), s.label));
    }
    Ok(Metrics::from_predictions(&pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub sample_id: usize,
    pub weak_label: u8,
    pub probability: f64,
    pub attention: AttentionTree,
    pub latent: LatentNode,
}

/// Runs every sample forward and pairs its attention with its latent tree.
pub fn extract_attention(model: &NmilModel, features: FeatureView<'_>, samples: &[NestedSample]) -> Result<Vec<AttentionRecord>> {
    samples
        .iter()
        .map(|s| {
            let (probability, attention) = model.forward(features, &s.tree)?;
            Ok(AttentionRecord {
                sample_id: s.id,
                weak_label: s.weak_label,
                probability,
                attention,
                latent: s.latent.clone(),
            })
        })
        .collect()
}
