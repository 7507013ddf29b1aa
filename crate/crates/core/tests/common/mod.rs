//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod suite;

use nmil::bagdata::{BagTree, FeatureView, LatentMembers, LatentNode};
use nmil::gradcore::{Graph, Tensor, Var};
use nmil::model::{Aggregator, GatedAttentionParams, ModelConfig, ModelDims, NmilModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;

/// Five-point central difference of `f` at offset 0 along one coordinate.
/// Truncation error is O(h^4), which keeps gradients near 1e-8 resolvable.
pub fn five_point(f: impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Relative error used by every gradient check: `|a - n| / max(|a|, |n|)`,
/// with an absolute floor for gradients that are zero in both.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Worst relative error between backprop and finite differences for a
/// scalar function of `inputs` built by `f`.
pub fn gradient_error(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars);
    g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).unwrap().to_vec();
        for i in 0..t.len() {
            let numeric = five_point(|d| {
                let mut moved = inputs.to_vec();
                moved[k].values_mut()[i] += d;
                eval(&moved)
            });
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// Worst relative error of the end-to-end loss gradient over every
/// parameter element of `model`.
pub fn model_gradient_error(model: &NmilModel, view: FeatureView<'_>, tree: &BagTree, label: u8) -> f64 {
    let mut m = model.clone();
    m.zero_grad();
    m.loss_and_grad(view, tree, label).unwrap();
    let analytic: Vec<Vec<f64>> = m.params().iter().map(|t| t.grad().unwrap().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let numeric = five_point(|d| {
                let mut moved = model.clone();
                moved.params_mut()[k].values_mut()[i] += d;
                moved.loss(view, tree, label).unwrap()
            });
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

/// Gated attention weights computed term by term.
pub fn naive_attention(p: &GatedAttentionParams, xs: &[Vec<f64>]) -> Vec<f64> {
    let (h, m) = (p.hidden_dim(), p.embed_dim());
    let w = p.w.values();
    let v = p.v.values();
    let u = p.u.values();
    let logits: Vec<f64> = xs
        .iter()
        .map(|x| {
            let mut s = 0.0;
            for r in 0..h {
                let mut vx = 0.0;
                let mut ux = 0.0;
                for c in 0..m {
                    vx += v[r * m + c] * x[c];
                    ux += u[r * m + c] * x[c];
                }
                s += w[r] * vx.tanh() * (1.0 / (1.0 + (-ux).exp()));
            }
            s
        })
        .collect();
    let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Weighted pooling with plain loops.
pub fn naive_aggregate(xs: &[Vec<f64>], a: &[f64], agg: Aggregator) -> Vec<f64> {
    let m = xs[0].len();
    let mut out = vec![0.0; m];
    for c in 0..m {
        let col: Vec<f64> = xs.iter().zip(a).map(|(x, w)| w * x[c]).collect();
        out[c] = match agg {
            Aggregator::Sum => col.iter().sum(),
            Aggregator::Mean => col.iter().sum::<f64>() / col.len() as f64,
            Aggregator::Max => col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
    }
    out
}

/// MLP embedding with plain loops.
pub fn naive_embed(model: &NmilModel, x: &[f64]) -> Vec<f64> {
    naive_embed_traced(model, x, &mut |_| {})
}

/// `naive_embed` reporting every ReLU preactivation to `seen`.
pub fn naive_embed_traced(model: &NmilModel, x: &[f64], seen: &mut dyn FnMut(f64)) -> Vec<f64> {
    let mut h = x.to_vec();
    let n = model.extractor.layers.len();
    for (k, layer) in model.extractor.layers.iter().enumerate() {
        let (inp, out) = (layer.inputs(), layer.outputs());
        let w = layer.weight.values();
        let b = layer.bias.values();
        let mut y = b.to_vec();
        for j in 0..out {
            for i in 0..inp {
                y[j] += h[i] * w[i * out + j];
            }
        }
        if k + 1 < n {
            y.iter_mut().for_each(|v| {
                seen(*v);
                *v = v.max(0.0)
            });
        }
        h = y;
    }
    h
}

pub fn naive_classify(model: &NmilModel, e: &[f64]) -> f64 {
    let w = model.classifier.weight.values();
    let z: f64 = e.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + model.classifier.bias.values()[0];
    1.0 / (1.0 + (-z).exp())
}

/// One MI block evaluated with the naive helpers.
pub fn naive_block(model: &NmilModel, level: usize, members: &[Vec<f64>]) -> Vec<f64> {
    let block = &model.blocks[level - 1];
    let a = if block.config.attention_enabled {
        naive_attention(&block.attention, members)
    } else {
        vec![1.0; members.len()]
    };
    naive_aggregate(members, &a, block.config.aggregator)
}

/// Whole-model forward pass written as a plain recursion.
pub fn naive_forward(model: &NmilModel, view: FeatureView<'_>, tree: &BagTree) -> f64 {
    fn rec(model: &NmilModel, view: FeatureView<'_>, tree: &BagTree) -> Vec<f64> {
        let members: Vec<Vec<f64>> = match tree {
            BagTree::Instances(ix) => ix.iter().map(|&i| naive_embed(model, view.row(i).unwrap())).collect(),
            BagTree::Bags(b) => b.iter().map(|t| rec(model, view, t)).collect(),
        };
        naive_block(model, tree.depth(), &members)
    }
    naive_classify(model, &rec(model, view, tree))
}

/// Distance of the forward pass from its nearest non-differentiable point:
/// the smallest |preactivation| over all ReLUs and, for max pooling, the
/// smallest gap between the two largest weighted entries of any column.
pub fn kink_margin(model: &NmilModel, view: FeatureView<'_>, tree: &BagTree) -> f64 {
    fn rec(model: &NmilModel, view: FeatureView<'_>, tree: &BagTree, margin: &mut f64) -> Vec<f64> {
        let members: Vec<Vec<f64>> = match tree {
            BagTree::Instances(ix) => ix
                .iter()
                .map(|&i| naive_embed_traced(model, view.row(i).unwrap(), &mut |v| *margin = margin.min(v.abs())))
                .collect(),
            BagTree::Bags(b) => b.iter().map(|t| rec(model, view, t, margin)).collect(),
        };
        let block = &model.blocks[tree.depth() - 1];
        if block.config.aggregator == Aggregator::Max && members.len() > 1 {
            let a = if block.config.attention_enabled {
                naive_attention(&block.attention, &members)
            } else {
                vec![1.0; members.len()]
            };
            for c in 0..members[0].len() {
                let mut col: Vec<f64> = members.iter().zip(&a).map(|(x, w)| w * x[c]).collect();
                col.sort_by(|p, q| q.total_cmp(p));
                *margin = margin.min(col[0] - col[1]);
            }
        }
        naive_block(model, tree.depth(), &members)
    }
    let mut margin = f64::INFINITY;
    rec(model, view, tree, &mut margin);
    margin
}

pub fn tiny_dims(levels: usize) -> ModelDims {
    ModelDims {
        input_dim: 5,
        hidden_dims: vec![4],
        embed_dim: 3,
        attention_dim: 3,
        levels,
    }
}

pub fn tiny_model(levels: usize, aggregator: Aggregator, attention: bool, seed: u64) -> NmilModel {
    NmilModel::init(tiny_dims(levels), ModelConfig { aggregator, attention }, seed).unwrap()
}

/// Random uniform features in `[0, 1]`.
pub fn random_features(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<f64> {
    (0..count * dim).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Random bag tree of the given depth over pool indices `< pool`, with
/// between 1 and `max_fan` members per bag.
pub fn random_tree(rng: &mut impl Rng, depth: usize, max_fan: usize, pool: usize) -> BagTree {
    let n = rng.random_range(1..=max_fan);
    if depth == 1 {
        BagTree::Instances((0..n).map(|_| rng.random_range(0..pool)).collect())
    } else {
        BagTree::Bags((0..n).map(|_| random_tree(rng, depth - 1, max_fan, pool)).collect())
    }
}

/// Instance labels grouped per innermost bag, depth-first.
pub fn innermost_labels(node: &LatentNode) -> Vec<Vec<u8>> {
    match &node.members {
        LatentMembers::Instances(l) => vec![l.clone()],
        LatentMembers::Bags(c) => c.iter().flat_map(innermost_labels).collect(),
    }
}

/// Brute-force weak labels, written independently of the library oracles.
pub mod brute {
    use super::*;

    pub fn exp1(node: &LatentNode, c: u8) -> u8 {
        let mut found = false;
        for bag in innermost_labels(node) {
            for d in bag {
                if d == c {
                    found = true;
                }
            }
        }
        found as u8
    }

    pub fn exp2(node: &LatentNode, c: u8) -> u8 {
        let LatentMembers::Bags(inner) = &node.members else { panic!("exp2 needs two levels") };
        for bag in inner {
            let mut count = 0;
            for d in bag.instance_labels() {
                if d == c {
                    count += 1;
                }
            }
            if count >= 2 {
                return 1;
            }
        }
        0
    }

    /// Enumerates regions and bags directly: a region is a witness when it
    /// has an all-odd bag and no all-even bag.
    pub fn exp3(node: &LatentNode) -> u8 {
        let LatentMembers::Bags(regions) = &node.members else { panic!("exp3 needs three levels") };
        for region in regions {
            let bags = innermost_labels(region);
            let all_odd = bags.iter().any(|b| b.iter().all(|d| d % 2 == 1));
            let all_even = bags.iter().any(|b| b.iter().all(|d| d % 2 == 0));
            if all_odd && !all_even {
                return 1;
            }
        }
        0
    }
}
