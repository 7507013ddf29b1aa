//! Finite-difference checks of every graph op and of the whole model, each
//! reduced to its worst relative error over a range of seeds.

use nmil::bagdata::FeatureView;
use nmil::gradcore::{Graph, Reduction, Tensor, Var};
use nmil::model::Aggregator;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

type Make = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type Build = Box<dyn Fn(&mut Graph, &[Var], u64) -> Var>;

/// Weighted sum so that every output element gets a distinct upstream
/// gradient.
fn probe(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.value(v).shape().to_vec();
    let w = random_tensor(&mut rng(seed ^ 0xabc), &shape, -1.0, 1.0);
    let wv = g.constant(w);
    let prod = g.hadamard(v, wv).unwrap();
    let n = g.value(prod).len();
    let flat = g.reshape(prod, vec![n]).unwrap();
    g.sum(flat, 0).unwrap()
}

fn uniform(shapes: &'static [&'static [usize]], lo: f64, hi: f64) -> Make {
    Box::new(move |r| shapes.iter().map(|s| random_tensor(r, s, lo, hi)).collect())
}

/// Inputs at least 0.05 from the ReLU kink.
fn off_kink(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let t = random_tensor(r, &[2, 3], -2.0, 2.0);
    let v = t.values().iter().map(|x| x.signum() * (0.05 + x.abs())).collect();
    vec![Tensor::new(vec![2, 3], v).unwrap()]
}

/// 4x3 matrix of a shuffled grid with spacing 0.1, so no two entries are
/// within a stencil width of each other.
fn distinct_entries(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut v: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.6 + r.random_range(0.0..0.01)).collect();
    v.shuffle(r);
    vec![Tensor::new(vec![4, 3], v).unwrap()]
}

fn unary(f: fn(&mut Graph, Var) -> Var) -> Build {
    Box::new(move |g, v, s| {
        let t = f(g, v[0]);
        probe(g, t, s)
    })
}

fn binary(f: fn(&mut Graph, Var, Var) -> Var) -> Build {
    Box::new(move |g, v, s| {
        let t = f(g, v[0], v[1]);
        probe(g, t, s)
    })
}

fn cases() -> Vec<(String, Make, Build)> {
    let mut out: Vec<(String, Make, Build)> = vec![
        ("matmul".into(), uniform(&[&[3, 4], &[4, 2]], -1.0, 1.0), binary(|g, a, b| g.matmul(a, b).unwrap())),
        ("transpose".into(), uniform(&[&[2, 5]], -1.0, 1.0), unary(|g, a| g.transpose(a).unwrap())),
        ("tanh".into(), uniform(&[&[2, 3]], -2.0, 2.0), unary(|g, a| g.tanh(a))),
        ("sigmoid".into(), uniform(&[&[2, 3]], -2.0, 2.0), unary(|g, a| g.sigmoid(a))),
        ("exp".into(), uniform(&[&[2, 3]], -2.0, 2.0), unary(|g, a| g.exp(a))),
        ("relu".into(), Box::new(off_kink), unary(|g, a| g.relu(a))),
        ("scale".into(), uniform(&[&[2, 3]], -2.0, 2.0), unary(|g, a| g.scale(a, -1.7))),
        ("add".into(), uniform(&[&[3, 2], &[3, 2]], -2.0, 2.0), binary(|g, a, b| g.add(a, b).unwrap())),
        ("sub".into(), uniform(&[&[3, 2], &[3, 2]], -2.0, 2.0), binary(|g, a, b| g.sub(a, b).unwrap())),
        ("hadamard".into(), uniform(&[&[3, 2], &[3, 2]], -2.0, 2.0), binary(|g, a, b| g.hadamard(a, b).unwrap())),
        ("softmax".into(), uniform(&[&[1, 5]], -3.0, 3.0), unary(|g, a| g.softmax(a).unwrap())),
        (
            "add_row_bias".into(),
            uniform(&[&[3, 2], &[1, 2]], -1.0, 1.0),
            binary(|g, a, b| g.add_row_bias(a, b).unwrap()),
        ),
        (
            "scale_rows".into(),
            uniform(&[&[3, 2], &[1, 3]], -1.0, 1.0),
            binary(|g, a, b| g.scale_rows(a, b).unwrap()),
        ),
        (
            "slice_rows/concat_rows".into(),
            uniform(&[&[4, 2], &[1, 2]], -1.0, 1.0),
            binary(|g, a, b| {
                let s = g.slice_rows(a, 1, 3).unwrap();
                g.concat_rows(&[s, b, s]).unwrap()
            }),
        ),
    ];
    for op in [Reduction::Sum, Reduction::Mean, Reduction::Max] {
        for axis in 0..2 {
            out.push((
                format!("{op:?} axis {axis}"),
                Box::new(distinct_entries),
                Box::new(move |g, v, s| {
                    let t = g.reduce(op, v[0], axis).unwrap();
                    probe(g, t, s)
                }),
            ));
        }
    }
    for target in [0.0, 1.0] {
        out.push((
            format!("bce target {target}"),
            uniform(&[&[1]], 0.05, 0.95),
            Box::new(move |g, v, _| g.bce_loss(v[0], target).unwrap()),
        ));
    }
    out
}

/// Worst relative error of every op over `seeds` random inputs.
pub fn op_errors(seeds: u64) -> Vec<(String, f64)> {
    cases()
        .into_iter()
        .map(|(name, make, build)| {
            let worst = (0..seeds)
                .map(|seed| gradient_error(&make(&mut rng(seed)), &|g, v| build(g, v, seed)))
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Worst relative error of the end-to-end loss gradient over `seeds`
/// random models and trees of depth 1 to 3 with bags of at most 4 members.
/// Inputs are redrawn until the forward pass sits at least 0.05 away from
/// every ReLU and max kink.
pub fn model_errors(seeds: u64) -> Vec<(u64, f64)> {
    (0..seeds)
        .map(|seed| {
            let mut r = rng(seed);
            let levels = 1 + (seed as usize % 3);
            let agg = Aggregator::ALL[(seed / 3) as usize % 3];
            let model = tiny_model(levels, agg, seed % 7 != 0, seed);
            let (features, tree) = (0..1000)
                .map(|_| (random_features(&mut r, 12, 5), random_tree(&mut r, levels, 4, 12)))
                .find(|(f, t)| kink_margin(&model, FeatureView::new(5, f).unwrap(), t) > 0.05)
                .expect("no smooth case found");
            let view = FeatureView::new(5, &features).unwrap();
            let label = r.random_range(0..2u8);
            (seed, model_gradient_error(&model, view, &tree, label))
        })
        .collect()
}
