mod common;

use common::*;
use nmil::bagdata::{BagTree, FeatureView};
use nmil::gradcore::Tensor;
use nmil::model::{aggregate, glorot_bound, Aggregator, FeatureExtractor, GatedAttentionParams, Linear, ModelConfig, ModelDims, NmilModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_attention(r: &mut impl Rng, m: usize, h: usize) -> GatedAttentionParams {
    GatedAttentionParams::from_tensors(
        random_tensor(r, &[h, 1], -1.5, 1.5),
        random_tensor(r, &[h, m], -1.5, 1.5),
        random_tensor(r, &[h, m], -1.5, 1.5),
    )
    .unwrap()
}

fn random_bag(r: &mut impl Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn attention_matches_term_by_term_formula() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let p = random_attention(&mut r, 6, 4);
        let bag = random_bag(&mut r, 5, 6);
        let ours = p.scores(&bag).unwrap();
        let naive = naive_attention(&p, &bag);
        for (a, b) in ours.iter().zip(&naive) {
            assert!((a - b).abs() <= 1e-9, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn attention_singleton_and_identical_members() {
    let mut r = rng(3);
    let p = random_attention(&mut r, 4, 3);
    assert_eq!(p.scores(&random_bag(&mut r, 1, 4)).unwrap(), vec![1.0]);
    let x = random_bag(&mut r, 1, 4).remove(0);
    let w = p.scores(&vec![x; 7]).unwrap();
    assert!(w.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
    assert!(p.scores(&[]).is_err());
}

#[test]
fn aggregate_matches_naive_loop() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let bag = random_bag(&mut r, 4, 5);
        let raw: Vec<f64> = (0..4).map(|_| r.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let a: Vec<f64> = raw.iter().map(|v| v / total).collect();
        for agg in Aggregator::ALL {
            let ours = aggregate(&bag, &a, agg, true).unwrap();
            let naive = naive_aggregate(&bag, &a, agg);
            for (x, y) in ours.iter().zip(&naive) {
                assert!((x - y).abs() <= 1e-12, "{agg}: {x} vs {y}");
            }
        }
        let plain = aggregate(&bag, &a, Aggregator::Sum, false).unwrap();
        let naive = naive_aggregate(&bag, &[1.0; 4], Aggregator::Sum);
        assert!(plain.iter().zip(&naive).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}

#[test]
fn aggregate_trivial_cases() {
    let x = vec![0.3, -1.0, 2.0];
    for agg in Aggregator::ALL {
        assert_eq!(aggregate(&[x.clone()], &[1.0], agg, true).unwrap(), x);
    }
    let two = aggregate(&[x.clone(), x.clone()], &[0.5, 0.5], Aggregator::Sum, true).unwrap();
    assert_eq!(two, x);
    let mean = aggregate(&[x.clone(), x.clone(), x.clone()], &[1.0 / 3.0; 3], Aggregator::Mean, false).unwrap();
    assert!(mean.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(aggregate(&[], &[], Aggregator::Sum, true).is_err());
}

#[test]
fn mi_block_is_permutation_invariant() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let agg = Aggregator::ALL[seed as usize % 3];
        let model = tiny_model(1, agg, true, seed);
        let block = &model.blocks[0];
        let bag = random_bag(&mut r, 6, 3);
        let (emb, w) = block.apply(&bag).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..bag.len()).collect();
            perm.shuffle(&mut r);
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| bag[i].clone()).collect();
            let (emb2, w2) = block.apply(&shuffled).unwrap();
            for (a, b) in emb.iter().zip(&emb2) {
                if agg == Aggregator::Max {
                    assert_eq!(a, b);
                } else {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
            for (k, &i) in perm.iter().enumerate() {
                assert!((w2[k] - w[i]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn mi_block_singleton() {
    let model = tiny_model(1, Aggregator::Max, true, 1);
    let x = vec![vec![0.4, -0.2, 0.9]];
    let (emb, w) = model.blocks[0].apply(&x).unwrap();
    assert_eq!(w, vec![1.0]);
    assert_eq!(emb, x[0]);
}

#[test]
fn forward_matches_naive_recursion() {
    for seed in 0..60 {
        let mut r = rng(seed);
        let levels = 1 + seed as usize % 3;
        let agg = Aggregator::ALL[(seed / 3) as usize % 3];
        let model = tiny_model(levels, agg, seed % 5 != 0, seed);
        let features = random_features(&mut r, 20, 5);
        let view = FeatureView::new(5, &features).unwrap();
        let tree = random_tree(&mut r, levels, 4, 20);
        let (p, att) = model.forward(view, &tree).unwrap();
        let naive = naive_forward(&model, view, &tree);
        assert!((p - naive).abs() <= 1e-12, "seed {seed}: {p} vs {naive}");
        assert!(att.matches(&tree));
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(model.forward(view, &tree).unwrap().0.to_bits(), p.to_bits());
    }
}

/// A two-level sample made only of singleton bags reduces to the one-level
/// prediction with the level-2 block acting as identity.
#[test]
fn singleton_nesting_unrolls_by_hand() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let model = tiny_model(2, Aggregator::ALL[seed as usize % 3], true, seed);
        let features = random_features(&mut r, 4, 5);
        let view = FeatureView::new(5, &features).unwrap();
        let i = r.random_range(0..4);
        let nested = BagTree::Bags(vec![BagTree::Instances(vec![i])]);
        let (p, att) = model.forward(view, &nested).unwrap();
        let e = naive_embed(&model, view.row(i).unwrap());
        let expected = naive_classify(&model, &e);
        assert!((p - expected).abs() <= 1e-12);
        assert_eq!(att.weights, vec![1.0]);
        assert_eq!(att.children[0].weights, vec![1.0]);

        let mut flat = tiny_model(1, model.config.aggregator, true, seed);
        flat.extractor = model.extractor.clone();
        flat.classifier = model.classifier.clone();
        let p1 = flat.predict(view, &BagTree::Instances(vec![i])).unwrap();
        assert!((p - p1).abs() <= 1e-12);
    }
}

#[test]
fn identity_extractor_passes_input_through() {
    let mut layer = Linear {
        weight: Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        bias: Tensor::zeros(vec![1, 3]).unwrap(),
    };
    let fx = FeatureExtractor { layers: vec![layer.clone()] };
    assert_eq!(fx.embed(&[0.2, 0.5, 0.9]).unwrap(), vec![0.2, 0.5, 0.9]);
    assert!(fx.embed(&[0.2]).is_err());
    layer.weight.values_mut().iter_mut().for_each(|v| *v = 0.0);
    let zero = FeatureExtractor { layers: vec![layer] };
    assert_eq!(zero.embed(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn init_bounds_per_layer() {
    let model = NmilModel::init(ModelDims::mnist(3), ModelConfig::default(), 11).unwrap();
    for l in &model.extractor.layers {
        let a = glorot_bound(l.inputs(), l.outputs());
        assert!(l.weight.values().iter().all(|v| v.abs() <= a));
        assert!(l.bias.values().iter().all(|&v| v == 0.0));
    }
    for b in &model.blocks {
        let (h, m) = (b.attention.hidden_dim(), b.attention.embed_dim());
        assert!(b.attention.v.values().iter().all(|v| v.abs() <= glorot_bound(m, h)));
        assert!(b.attention.w.values().iter().all(|v| v.abs() <= glorot_bound(h, 1)));
    }
}

#[test]
fn model_file_round_trip_keeps_predictions() {
    let mut r = rng(5);
    let model = tiny_model(2, Aggregator::Mean, true, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nmil");
    model.save(&path).unwrap();
    let back = NmilModel::load(&path).unwrap();
    let features = random_features(&mut r, 10, 5);
    let view = FeatureView::new(5, &features).unwrap();
    let tree = random_tree(&mut r, 2, 4, 10);
    assert_eq!(model.predict(view, &tree).unwrap().to_bits(), back.predict(view, &tree).unwrap().to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let p = random_attention(&mut r, 4, 3);
        let bag = random_bag(&mut r, n, 4);
        let w = p.scores(&bag).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0 && v <= 1.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn bag_embedding_permutation_invariance(seed in any::<u64>(), n in 1usize..8, agg in 0usize..3) {
        let mut r = rng(seed);
        let agg = Aggregator::ALL[agg];
        let model = tiny_model(1, agg, true, seed);
        let bag = random_bag(&mut r, n, 3);
        let mut shuffled = bag.clone();
        shuffled.shuffle(&mut r);
        let (a, _) = model.blocks[0].apply(&bag).unwrap();
        let (b, _) = model.blocks[0].apply(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            if agg == Aggregator::Max {
                prop_assert_eq!(x, y);
            } else {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_never_produces_nan(seed in any::<u64>(), levels in 1usize..4) {
        let mut r = rng(seed);
        let model = tiny_model(levels, Aggregator::Sum, true, seed);
        let features = random_features(&mut r, 15, 5);
        let view = FeatureView::new(5, &features).unwrap();
        let tree = random_tree(&mut r, levels, 5, 15);
        let (p, att) = model.forward(view, &tree).unwrap();
        prop_assert!(p.is_finite());
        for level in 1..=levels {
            for w in att.level(level) {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }
}
