use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instances with their hidden class labels, stored as one flat
/// `len × dim` feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePool {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl InstancePool {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Dimension {
                op: "instance pool",
                lhs: vec![labels.len(), dim],
                rhs: vec![features.len()],
            });
        }
        if let Some(bad) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!(
                "instance feature {bad} lies outside [0, 1]"
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn label(&self, idx: usize) -> u8 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Label-free access to the features.
    pub fn view(&self) -> FeatureView<'_> {
        FeatureView {
            dim: self.dim,
            values: &self.features,
        }
    }

    /// Pool indices whose label satisfies `pred`.
    pub fn indices_where(&self, pred: impl Fn(u8) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(self.labels[i])).collect()
    }
}

/// Borrowed instance features without labels.
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a> {
    dim: usize,
    values: &'a [f64],
}

impl<'a> FeatureView<'a> {
    pub fn new(dim: usize, values: &'a [f64]) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::Dimension {
                op: "feature view",
                lhs: vec![dim],
                rhs: vec![values.len()],
            });
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, idx: usize) -> Option<&'a [f64]> {
        self.values.get(idx * self.dim..(idx + 1) * self.dim)
    }
}

/// Parameters of the Gaussian-cluster stand-in for image data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPoolSpec {
    pub n_per_class: usize,
    pub classes: Vec<u8>,
    pub dim: usize,
    /// Standard deviation of every coordinate around its class mean.
    pub noise: f64,
    /// Fixes the class means.
    pub seed: u64,
    /// Selects an independent draw of instances around the same means.
    #[serde(default)]
    pub draw: u64,
}

impl SynthPoolSpec {
    pub fn new(n_per_class: usize, classes: Vec<u8>, seed: u64) -> Self {
        Self {
            n_per_class,
            classes,
            dim: 32,
            noise: 0.05,
            seed,
            draw: 0,
        }
    }
}

/// One Gaussian cluster per class with means drawn from `[0.15, 0.85]^dim`,
/// values clipped to `[0, 1]`. Instances are emitted class by class.
pub fn synth_pool(spec: &SynthPoolSpec) -> Result<InstancePool> {
    if spec.n_per_class == 0 || spec.classes.is_empty() || spec.dim == 0 {
        return Err(Error::Config(
            "synthetic pool needs at least one class, instance and dimension".into(),
        ));
    }
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| Error::Config(format!("synthetic noise {}: {e}", spec.noise)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = spec
        .classes
        .iter()
        .map(|_| (0..spec.dim).map(|_| rng.random_range(0.15..0.85)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.draw.wrapping_add(1));
    let mut features = Vec::with_capacity(spec.classes.len() * spec.n_per_class * spec.dim);
    let mut labels = Vec::with_capacity(spec.classes.len() * spec.n_per_class);
    for (&class, mean) in spec.classes.iter().zip(&means) {
        for _ in 0..spec.n_per_class {
            features.extend(
                mean.iter()
                    .map(|m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(class);
        }
    }
    InstancePool::new(spec.dim, features, labels)
}
