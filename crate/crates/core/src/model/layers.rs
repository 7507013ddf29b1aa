use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Reduction, Tensor, Var};

/// Pooling operator applied across the members of a bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Max,
    #[default]
    Sum,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Mean, Aggregator::Max, Aggregator::Sum];

    pub(crate) fn reduction(self) -> Reduction {
        match self {
            Aggregator::Mean => Reduction::Mean,
            Aggregator::Max => Reduction::Max,
            Aggregator::Sum => Reduction::Sum,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Aggregator::Mean => 0,
            Aggregator::Max => 1,
            Aggregator::Sum => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Aggregator::Mean),
            1 => Some(Aggregator::Max),
            2 => Some(Aggregator::Sum),
            _ => None,
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::Sum => "sum",
        })
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            "sum" => Ok(Aggregator::Sum),
            other => Err(Error::Config(format!("unknown aggregator `{other}`"))),
        }
    }
}

/// Uniform Glorot initialisation bound for a layer.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_tensor<R: Rng>(
    rng: &mut R,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor> {
    let a = glorot_bound(fan_in, fan_out);
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Ok(Tensor::new(shape, values)?.with_requires_grad(true))
}

/// Affine layer `y = x W + b` with `W` stored input-major (`in × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundLinear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn init<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Self {
            weight: glorot_tensor(rng, vec![inputs, outputs], inputs, outputs)?,
            bias: Tensor::zeros(vec![1, outputs])?.with_requires_grad(true),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.leaf(&self.weight),
            bias: g.leaf(&self.bias),
        }
    }

    pub(crate) fn absorb(&mut self, g: &Graph, b: &BoundLinear) -> Result<()> {
        g.accumulate_into(b.weight, &mut self.weight)?;
        g.accumulate_into(b.bias, &mut self.bias)
    }
}

impl BoundLinear {
    pub(crate) fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_row_bias(y, self.bias)
    }
}

/// MLP shared by every instance: ReLU between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub layers: Vec<Linear>,
}

impl FeatureExtractor {
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, hidden: &[usize], embed_dim: usize) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(embed_dim);
        let layers = sizes
            .windows(2)
            .map(|w| Linear::init(rng, w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> Vec<BoundLinear> {
        self.layers.iter().map(|l| l.bind(g)).collect()
    }

    /// Embeds the rows of `x` (`n × input_dim`).
    pub(crate) fn apply(g: &mut Graph, bound: &[BoundLinear], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in bound.iter().enumerate() {
            h = layer.apply(g, h)?;
            if i + 1 < bound.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Embedding of a single instance vector.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                op: "embed_instance",
                lhs: vec![self.input_dim()],
                rhs: vec![x.len()],
            });
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let xv = g.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
        let out = Self::apply(&mut g, &bound, xv)?;
        Ok(g.value(out).values().to_vec())
    }
}

/// Trainable triple of the gated attention score: `w` (`H × 1`), `V` and
/// `U` (`H × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttentionParams {
    pub w: Tensor,
    pub v: Tensor,
    pub u: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundAttention {
    w: Var,
    v: Var,
    u: Var,
}

impl GatedAttentionParams {
    pub fn init<R: Rng>(rng: &mut R, embed_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w: glorot_tensor(rng, vec![hidden, 1], hidden, 1)?,
            v: glorot_tensor(rng, vec![hidden, embed_dim], embed_dim, hidden)?,
            u: glorot_tensor(rng, vec![hidden, embed_dim], embed_dim, hidden)?,
        })
    }

    /// Builds parameters from explicit tensors, checking their shapes.
    pub fn from_tensors(w: Tensor, v: Tensor, u: Tensor) -> Result<Self> {
        let (h, m) = v.dims2().ok_or_else(|| Error::Dimension {
            op: "gated_attention",
            lhs: v.shape().to_vec(),
            rhs: vec![0, 0],
        })?;
        if u.shape() != v.shape() || w.shape() != [h, 1] || m == 0 {
            return Err(Error::Dimension {
                op: "gated_attention",
                lhs: v.shape().to_vec(),
                rhs: [u.shape(), w.shape()].concat(),
            });
        }
        Ok(Self {
            w: w.with_requires_grad(true),
            v: v.with_requires_grad(true),
            u: u.with_requires_grad(true),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.v.shape()[1]
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> BoundAttention {
        BoundAttention {
            w: g.leaf(&self.w),
            v: g.leaf(&self.v),
            u: g.leaf(&self.u),
        }
    }

    pub(crate) fn absorb(&mut self, g: &Graph, b: &BoundAttention) -> Result<()> {
        g.accumulate_into(b.w, &mut self.w)?;
        g.accumulate_into(b.v, &mut self.v)?;
        g.accumulate_into(b.u, &mut self.u)
    }

    /// Attention weights over the rows of an embedding matrix.
    pub fn scores(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = embedding_matrix(&mut g, embeddings, self.embed_dim())?;
        let a = bound.weights(&mut g, x)?;
        Ok(g.value(a).values().to_vec())
    }
}

impl BoundAttention {
    /// Pre-softmax scores `wᵀ(tanh(V xᵀ) ⊙ sigm(U xᵀ))` for every row of
    /// `x` (`n × M`), as a `1 × n` row.
    pub(crate) fn logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xt = g.transpose(x)?;
        let vx = g.matmul(self.v, xt)?;
        let ux = g.matmul(self.u, xt)?;
        let content = g.tanh(vx);
        let gate = g.sigmoid(ux);
        let gated = g.hadamard(content, gate)?;
        let wt = g.transpose(self.w)?;
        g.matmul(wt, gated)
    }

    pub(crate) fn weights(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let logits = self.logits(g, x)?;
        g.softmax(logits)
    }
}

/// Stacks embedding vectors into a constant `n × dim` matrix node.
pub(crate) fn embedding_matrix(g: &mut Graph, rows: &[Vec<f64>], dim: usize) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::Degenerate("bag has no members".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension {
            op: "bag embeddings",
            lhs: vec![dim],
            rhs: vec![bad.len()],
        });
    }
    Ok(g.constant(Tensor::from_rows(rows)?))
}

/// Pools `x` (`n × M`) into a `1 × M` bag embedding. With weights the rows
/// are scaled by them first; without, the rows are pooled as they are.
pub(crate) fn pool(g: &mut Graph, x: Var, weights: Option<Var>, aggregator: Aggregator) -> Result<Var> {
    let scaled = match weights {
        Some(a) => g.scale_rows(x, a)?,
        None => x,
    };
    g.reduce(aggregator.reduction(), scaled, 0)
}

/// Value-level pooling of a bag of embeddings.
///
/// With `attention_enabled` the rows are scaled by `weights` before `Ξ`;
/// without, the weights are replaced by ones.
pub fn aggregate(
    embeddings: &[Vec<f64>],
    weights: &[f64],
    aggregator: Aggregator,
    attention_enabled: bool,
) -> Result<Vec<f64>> {
    let dim = embeddings.first().map(Vec::len).unwrap_or(0);
    let mut g = Graph::new();
    let x = embedding_matrix(&mut g, embeddings, dim)?;
    if weights.len() != embeddings.len() {
        return Err(Error::Dimension {
            op: "aggregate",
            lhs: vec![embeddings.len()],
            rhs: vec![weights.len()],
        });
    }
    let w = if attention_enabled {
        Some(g.constant(Tensor::vector(weights.to_vec())?))
    } else {
        None
    };
    let out = pool(&mut g, x, w, aggregator)?;
    Ok(g.value(out).values().to_vec())
}
