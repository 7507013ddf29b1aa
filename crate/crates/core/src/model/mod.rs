//! The NMIL network: a shared instance feature extractor, one gated-attention
//! MI block per nesting level and a linear-sigmoid classifier.
//!
//! Levels are counted from the inside out. Block 1 pools the instances of
//! every innermost bag; block `j + 1` pools the bag embeddings produced by
//! block `j`; block `J` yields the single embedding that is classified.

mod io;
mod layers;

pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use layers::{
    aggregate, glorot_bound, Aggregator, FeatureExtractor, GatedAttentionParams, Linear,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bagdata::{BagTree, FeatureView};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor, Var};
use layers::{embedding_matrix, pool, BoundAttention, BoundLinear};

/// Sizes of every part of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub levels: usize,
}

impl ModelDims {
    /// The MNIST defaults: 784 → 128 → 64, attention width 64.
    pub fn mnist(levels: usize) -> Self {
        Self {
            input_dim: 784,
            hidden_dims: vec![128],
            embed_dim: 64,
            attention_dim: 64,
            levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.input_dim, self.embed_dim, self.attention_dim, self.levels];
        if all.contains(&0) || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Settings shared by every MI block of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub aggregator: Aggregator,
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::Sum,
            attention: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiBlockConfig {
    pub aggregator: Aggregator,
    pub attention_enabled: bool,
    /// 1 for the innermost bags, `J` for the outermost.
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiBlock {
    pub attention: GatedAttentionParams,
    pub config: MiBlockConfig,
}

impl MiBlock {
    /// Pools a bag of member embeddings, returning the bag embedding and the
    /// weight given to each member.
    pub fn apply(&self, members: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let bound = self.attention.bind(&mut g);
        let x = embedding_matrix(&mut g, members, self.attention.embed_dim())?;
        let (out, weights) = block_forward(&mut g, &bound, &self.config, x)?;
        Ok((g.value(out).values().to_vec(), weights))
    }
}

/// Attention weights recorded for one bag and, recursively, its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTree {
    pub weights: Vec<f64>,
    /// Empty for innermost bags.
    pub children: Vec<AttentionTree>,
}

impl AttentionTree {
    pub fn depth(&self) -> usize {
        1 + self.children.first().map_or(0, AttentionTree::depth)
    }

    /// Weight vectors of every bag at `level` (1 = innermost), depth-first.
    pub fn level(&self, level: usize) -> Vec<&[f64]> {
        let mut out = Vec::new();
        self.collect_level(level, &mut out);
        out
    }

    fn collect_level<'a>(&'a self, level: usize, out: &mut Vec<&'a [f64]>) {
        if self.depth() == level {
            out.push(&self.weights);
        } else {
            self.children.iter().for_each(|c| c.collect_level(level, out));
        }
    }

    /// True when the tree has the same bag structure as `tree`.
    pub fn matches(&self, tree: &BagTree) -> bool {
        match tree {
            BagTree::Instances(ix) => self.children.is_empty() && self.weights.len() == ix.len(),
            BagTree::Bags(m) => {
                self.weights.len() == m.len()
                    && self.children.len() == m.len()
                    && self.children.iter().zip(m).all(|(a, b)| a.matches(b))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmilModel {
    pub dims: ModelDims,
    pub config: ModelConfig,
    pub extractor: FeatureExtractor,
    /// `blocks[j - 1]` serves level `j`.
    pub blocks: Vec<MiBlock>,
    pub classifier: Linear,
}

struct Bound {
    extractor: Vec<BoundLinear>,
    blocks: Vec<BoundAttention>,
    classifier: BoundLinear,
}

impl NmilModel {
    /// Glorot-uniform weights and zero biases, fully determined by `seed`.
    pub fn init(dims: ModelDims, config: ModelConfig, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = FeatureExtractor::init(&mut rng, dims.input_dim, &dims.hidden_dims, dims.embed_dim)?;
        let blocks = (1..=dims.levels)
            .map(|level| {
                Ok(MiBlock {
                    attention: GatedAttentionParams::init(&mut rng, dims.embed_dim, dims.attention_dim)?,
                    config: MiBlockConfig {
                        aggregator: config.aggregator,
                        attention_enabled: config.attention,
                        level,
                    },
                })
            })
            .collect::<Result<_>>()?;
        let classifier = Linear::init(&mut rng, dims.embed_dim, 1)?;
        Ok(Self {
            dims,
            config,
            extractor,
            blocks,
            classifier,
        })
    }

    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    /// Every trainable tensor in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.extractor.layers {
            out.extend([&l.weight, &l.bias]);
        }
        for b in &self.blocks {
            out.extend([&b.attention.w, &b.attention.v, &b.attention.u]);
        }
        out.extend([&self.classifier.weight, &self.classifier.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.extractor.layers {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        for b in &mut self.blocks {
            let a = &mut b.attention;
            out.extend([&mut a.w, &mut a.v, &mut a.u]);
        }
        out.extend([&mut self.classifier.weight, &mut self.classifier.bias]);
        out
    }

    /// Names matching [`NmilModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.extractor.layers.len() {
            out.push(format!("extractor.{i}.weight"));
            out.push(format!("extractor.{i}.bias"));
        }
        for j in 1..=self.blocks.len() {
            for p in ["w", "V", "U"] {
                out.push(format!("block{j}.{p}"));
            }
        }
        out.push("classifier.weight".into());
        out.push("classifier.bias".into());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            extractor: self.extractor.bind(g),
            blocks: self.blocks.iter().map(|b| b.attention.bind(g)).collect(),
            classifier: self.classifier.bind(g),
        }
    }

    fn absorb(&mut self, g: &Graph, b: &Bound) -> Result<()> {
        for (layer, bl) in self.extractor.layers.iter_mut().zip(&b.extractor) {
            layer.absorb(g, bl)?;
        }
        for (block, ba) in self.blocks.iter_mut().zip(&b.blocks) {
            block.attention.absorb(g, ba)?;
        }
        self.classifier.absorb(g, &b.classifier)
    }

    /// Builds the forward graph, returning the probability node.
    fn build(&self, g: &mut Graph, bound: &Bound, features: FeatureView<'_>, tree: &BagTree) -> Result<(Var, AttentionTree)> {
        let depth = tree.validate()?;
        if depth != self.levels() {
            return Err(Error::Structure(format!(
                "sample has {depth} level(s), model expects {}",
                self.levels()
            )));
        }
        if features.dim() != self.dims.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                lhs: vec![self.dims.input_dim],
                rhs: vec![features.dim()],
            });
        }
        let leaves = tree.leaf_indices();
        let mut data = Vec::with_capacity(leaves.len() * features.dim());
        for &i in &leaves {
            let row = features.row(i).ok_or_else(|| {
                Error::Structure(format!("instance {i} is outside the feature pool of {}", features.len()))
            })?;
            data.extend_from_slice(row);
        }
        let x = g.constant(Tensor::matrix(leaves.len(), features.dim(), data)?);
        let emb = FeatureExtractor::apply(g, &bound.extractor, x)?;
        let mut offset = 0;
        let (bag, attention) = self.node(g, bound, tree, emb, &mut offset)?;
        let logit = bound.classifier.apply(g, bag)?;
        Ok((g.sigmoid(logit), attention))
    }

    fn node(&self, g: &mut Graph, bound: &Bound, tree: &BagTree, emb: Var, offset: &mut usize) -> Result<(Var, AttentionTree)> {
        let (members, children) = match tree {
            BagTree::Instances(ix) => {
                let start = *offset;
                *offset += ix.len();
                (g.slice_rows(emb, start, *offset)?, Vec::new())
            }
            BagTree::Bags(bags) => {
                let mut parts = Vec::with_capacity(bags.len());
                let mut children = Vec::with_capacity(bags.len());
                for b in bags {
                    let (v, t) = self.node(g, bound, b, emb, offset)?;
                    parts.push(v);
                    children.push(t);
                }
                (g.concat_rows(&parts)?, children)
            }
        };
        let level = tree.depth();
        let (out, weights) = block_forward(g, &bound.blocks[level - 1], &self.blocks[level - 1].config, members)?;
        Ok((out, AttentionTree { weights, children }))
    }

    /// Bag probability and the attention recorded at every bag.
    pub fn forward(&self, features: FeatureView<'_>, tree: &BagTree) -> Result<(f64, AttentionTree)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let (p, attention) = self.build(&mut g, &bound, features, tree)?;
        Ok((g.value(p).item(), attention))
    }

    pub fn predict(&self, features: FeatureView<'_>, tree: &BagTree) -> Result<f64> {
        self.forward(features, tree).map(|(p, _)| p)
    }

    /// Binary cross-entropy of one sample. Gradients are added onto the
    /// parameters' gradient buffers. Returns `(loss, probability)`.
    pub fn loss_and_grad(&mut self, features: FeatureView<'_>, tree: &BagTree, label: u8) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let (p, _) = self.build(&mut g, &bound, features, tree)?;
        let loss = g.bce_loss(p, f64::from(label))?;
        g.backward(loss)?;
        self.absorb(&g, &bound)?;
        Ok((g.value(loss).item(), g.value(p).item()))
    }

    /// Loss without touching gradients.
    pub fn loss(&self, features: FeatureView<'_>, tree: &BagTree, label: u8) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let (p, _) = self.build(&mut g, &bound, features, tree)?;
        let loss = g.bce_loss(p, f64::from(label))?;
        Ok(g.value(loss).item())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }
}

fn block_forward(g: &mut Graph, bound: &BoundAttention, config: &MiBlockConfig, x: Var) -> Result<(Var, Vec<f64>)> {
    let n = g.value(x).shape()[0];
    if config.attention_enabled {
        let a = bound.weights(g, x)?;
        let weights = g.value(a).values().to_vec();
        Ok((pool(g, x, Some(a), config.aggregator)?, weights))
    } else {
        Ok((pool(g, x, None, config.aggregator)?, vec![1.0 / n as f64; n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(levels: usize, config: ModelConfig) -> NmilModel {
        let dims = ModelDims {
            input_dim: 3,
            hidden_dims: vec![4],
            embed_dim: 3,
            attention_dim: 2,
            levels,
        };
        NmilModel::init(dims, config, 7).unwrap()
    }

    fn features() -> Vec<f64> {
        (0..18).map(|i| (i as f64 * 0.37).sin().abs()).collect()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = ModelDims::mnist(2);
        let a = NmilModel::init(dims.clone(), ModelConfig::default(), 1).unwrap();
        let b = NmilModel::init(dims.clone(), ModelConfig::default(), 1).unwrap();
        let c = NmilModel::init(dims, ModelConfig::default(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = glorot_bound(784, 128);
        assert!(a.extractor.layers[0].weight.values().iter().all(|v| v.abs() <= bound));
        assert!(a.extractor.layers[0].bias.values().iter().all(|&v| v == 0.0));
        assert_eq!(a.params().len(), a.param_names().len());
    }

    #[test]
    fn singleton_j1_is_classifier_of_embedding() {
        let m = tiny(1, ModelConfig::default());
        let f = features();
        let view = FeatureView::new(3, &f).unwrap();
        let (p, att) = m.forward(view, &BagTree::Instances(vec![2])).unwrap();
        let e = m.extractor.embed(view.row(2).unwrap()).unwrap();
        let w = m.classifier.weight.values();
        let z: f64 = e.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + m.classifier.bias.values()[0];
        assert!((p - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        assert_eq!(att.weights, vec![1.0]);
    }

    #[test]
    fn depth_mismatch_is_structure_error() {
        let m = tiny(2, ModelConfig::default());
        let f = features();
        let view = FeatureView::new(3, &f).unwrap();
        assert!(matches!(
            m.forward(view, &BagTree::Instances(vec![0, 1])),
            Err(Error::Structure(_))
        ));
        let bad = BagTree::Bags(vec![BagTree::Instances(vec![0, 99])]);
        assert!(matches!(m.forward(view, &bad), Err(Error::Structure(_))));
    }

    #[test]
    fn attention_tree_mirrors_sample() {
        let m = tiny(2, ModelConfig::default());
        let f = features();
        let view = FeatureView::new(3, &f).unwrap();
        let tree = BagTree::Bags(vec![
            BagTree::Instances(vec![0, 1, 2]),
            BagTree::Instances(vec![3]),
        ]);
        let (_, att) = m.forward(view, &tree).unwrap();
        assert!(att.matches(&tree));
        assert_eq!(att.level(1).len(), 2);
        assert_eq!(att.level(2).len(), 1);
        for w in att.level(1).into_iter().chain(att.level(2)) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_off_records_uniform_weights() {
        let m = tiny(1, ModelConfig { aggregator: Aggregator::Mean, attention: false });
        let f = features();
        let view = FeatureView::new(3, &f).unwrap();
        let (_, att) = m.forward(view, &BagTree::Instances(vec![0, 1, 2, 3])).unwrap();
        assert_eq!(att.weights, vec![0.25; 4]);
    }

    #[test]
    fn loss_and_grad_fills_every_parameter() {
        let mut m = tiny(2, ModelConfig::default());
        let f = features();
        let view = FeatureView::new(3, &f).unwrap();
        let tree = BagTree::Bags(vec![BagTree::Instances(vec![0, 1]), BagTree::Instances(vec![4, 5])]);
        let (loss, p) = m.loss_and_grad(view, &tree, 1).unwrap();
        assert!((loss + p.ln()).abs() < 1e-12);
        assert!(m.params().iter().all(|t| t.grad().is_some()));
    }
}
