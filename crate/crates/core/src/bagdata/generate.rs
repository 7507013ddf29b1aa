use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{self, EVEN, ODD};
use super::pool::InstancePool;
use super::{BagTree, LatentMembers, LatentNode, NestedSample, WeakSample};
use crate::error::{Error, Result};

/// Attempts allowed per sample before generation gives up.
pub const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Plain MIL rule.
    Exp1,
    /// At least two positives inside one inner bag.
    Exp2,
    /// Three-level odd/even region rule.
    Exp3,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::Exp1, Experiment::Exp2, Experiment::Exp3];

    /// Depth of the natural bag tree for this construction.
    pub fn default_levels(self) -> usize {
        match self {
            Experiment::Exp1 | Experiment::Exp2 => 2,
            Experiment::Exp3 => 3,
        }
    }

    pub fn accepts_levels(self, levels: usize) -> bool {
        match self {
            Experiment::Exp1 => levels >= 1,
            Experiment::Exp2 => levels == 2,
            Experiment::Exp3 => levels == 3,
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
        })
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Experiment::Exp1),
            "exp2" => Ok(Experiment::Exp2),
            "exp3" => Ok(Experiment::Exp3),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Inclusive range of member counts for the bags of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanOut {
    pub min: usize,
    pub max: usize,
}

impl FanOut {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

/// How to draw a dataset. `fanout[0]` sizes the outermost bag and the last
/// entry sizes the innermost bags of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub levels: usize,
    pub fanout: Vec<FanOut>,
    pub positive_class: u8,
    pub positive_fraction: f64,
    pub samples: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Default sizes for an experiment at the given depth.
    pub fn for_experiment(experiment: Experiment, levels: usize, samples: usize, seed: u64) -> Self {
        let fanout = match (experiment, levels) {
            (Experiment::Exp3, _) => vec![FanOut::new(2, 4), FanOut::new(2, 4), FanOut::new(2, 5)],
            (_, 1) => vec![FanOut::new(12, 48)],
            (_, 2) => vec![FanOut::new(3, 6), FanOut::new(4, 8)],
            (_, j) => {
                let mut f = vec![FanOut::new(2, 4); j - 1];
                f.push(FanOut::new(2, 5));
                f
            }
        };
        Self {
            levels,
            fanout,
            positive_class: 9,
            positive_fraction: 0.5,
            samples,
            seed,
        }
    }

    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        if !experiment.accepts_levels(self.levels) {
            return Err(Error::Config(format!(
                "{experiment} cannot be built with {} level(s)",
                self.levels
            )));
        }
        if self.fanout.len() != self.levels {
            return Err(Error::Config(format!(
                "{} fan-out ranges given for {} levels",
                self.fanout.len(),
                self.levels
            )));
        }
        if let Some(f) = self.fanout.iter().find(|f| f.min == 0 || f.min > f.max) {
            return Err(Error::Config(format!("invalid fan-out range {}..={}", f.min, f.max)));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive fraction {} must lie in (0, 1)",
                self.positive_fraction
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        Ok(())
    }
}

/// A generated dataset: every sample refers to instances of one pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub experiment: Experiment,
    pub spec: DatasetSpec,
    pub samples: Vec<NestedSample>,
}

impl Dataset {
    pub fn weak_samples(&self) -> Vec<WeakSample> {
        self.samples.iter().map(NestedSample::weak).collect()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.weak_label == 1).count()
    }

    /// Every sample collapsed into one flat bag.
    pub fn flattened(&self) -> Dataset {
        let mut spec = self.spec.clone();
        let lo = spec.fanout.iter().map(|f| f.min).product();
        let hi = spec.fanout.iter().map(|f| f.max).product();
        spec.levels = 1;
        spec.fanout = vec![FanOut::new(lo, hi)];
        Dataset {
            experiment: self.experiment,
            spec,
            samples: self.samples.iter().map(NestedSample::flattened).collect(),
        }
    }
}

/// Bag sizes before any instance is chosen.
enum Skeleton {
    Leaf(usize),
    Node(Vec<Skeleton>),
}

impl Skeleton {
    fn draw<R: Rng>(rng: &mut R, fanout: &[FanOut]) -> Skeleton {
        let n = rng.random_range(fanout[0].min..=fanout[0].max);
        if fanout.len() == 1 {
            Skeleton::Leaf(n)
        } else {
            Skeleton::Node((0..n).map(|_| Skeleton::draw(rng, &fanout[1..])).collect())
        }
    }

    fn leaves(&self) -> usize {
        match self {
            Skeleton::Leaf(n) => *n,
            Skeleton::Node(c) => c.iter().map(Skeleton::leaves).sum(),
        }
    }

    /// Fills the skeleton with `(pool index, label)` pairs in depth-first
    /// order. Bag labels are left empty.
    fn assemble(&self, items: &mut impl Iterator<Item = (usize, u8)>) -> (BagTree, LatentNode) {
        match self {
            Skeleton::Leaf(n) => {
                let (ix, labels): (Vec<_>, Vec<_>) = items.take(*n).unzip();
                (BagTree::Instances(ix), LatentNode::instances(None, labels))
            }
            Skeleton::Node(children) => {
                let (trees, latents): (Vec<_>, Vec<_>) =
                    children.iter().map(|c| c.assemble(items)).unzip();
                (BagTree::Bags(trees), LatentNode::bags(None, latents))
            }
        }
    }
}

/// Pool indices grouped by the classes the constructions need.
struct ClassIndex {
    positive: Vec<usize>,
    negative: Vec<usize>,
    even: Vec<usize>,
    odd: Vec<usize>,
    all: Vec<usize>,
}

impl ClassIndex {
    fn new(pool: &InstancePool, experiment: Experiment, positive_class: u8) -> Result<Self> {
        let idx = Self {
            positive: pool.indices_where(|l| l == positive_class),
            negative: pool.indices_where(|l| l != positive_class),
            even: pool.indices_where(|l| l % 2 == 0),
            odd: pool.indices_where(|l| l % 2 == 1),
            all: (0..pool.len()).collect(),
        };
        let missing = match experiment {
            Experiment::Exp1 | Experiment::Exp2 => {
                idx.positive.is_empty() || idx.negative.is_empty()
            }
            Experiment::Exp3 => idx.even.is_empty() || idx.odd.is_empty(),
        };
        if missing {
            return Err(Error::Generation(format!(
                "instance pool lacks the classes {experiment} draws from"
            )));
        }
        Ok(idx)
    }
}

fn pick<R: Rng>(rng: &mut R, from: &[usize]) -> usize {
    from[rng.random_range(0..from.len())]
}

/// Draws a dataset by rejection: each sample is assigned a target weak
/// label up front (exactly `round(samples * positive_fraction)` positives,
/// in shuffled order) and candidates are drawn until the oracle agrees.
pub fn build_dataset(pool: &InstancePool, spec: &DatasetSpec, experiment: Experiment) -> Result<Dataset> {
    spec.validate(experiment)?;
    let classes = ClassIndex::new(pool, experiment, spec.positive_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_pos = (spec.samples as f64 * spec.positive_fraction).round() as usize;
    let mut targets: Vec<u8> = (0..spec.samples).map(|i| u8::from(i < n_pos)).collect();
    targets.shuffle(&mut rng);

    let mut samples = Vec::with_capacity(spec.samples);
    for (id, &target) in targets.iter().enumerate() {
        let mut accepted = None;
        for _ in 0..MAX_RETRIES {
            let candidate = match experiment {
                Experiment::Exp1 => draw_exp1(&mut rng, pool, spec, &classes, target)?,
                Experiment::Exp2 => draw_exp2(&mut rng, pool, spec, &classes, target)?,
                Experiment::Exp3 => draw_exp3(&mut rng, pool, spec, &classes, target)?,
            };
            if let Some((tree, latent, y)) = candidate {
                if y == target {
                    accepted = Some(NestedSample {
                        id,
                        weak_label: y,
                        tree,
                        latent,
                    });
                    break;
                }
            }
        }
        let sample = accepted.ok_or_else(|| {
            Error::Generation(format!(
                "no {experiment} sample with label {target} after {MAX_RETRIES} attempts"
            ))
        })?;
        samples.push(sample);
    }
    Ok(Dataset {
        experiment,
        spec: spec.clone(),
        samples,
    })
}

type Candidate = Option<(BagTree, LatentNode, u8)>;

fn label_with(pool: &InstancePool, ix: &[usize]) -> Vec<(usize, u8)> {
    ix.iter().map(|&i| (i, pool.label(i))).collect()
}

/// Marks every bag with the plain MIL label of its contents.
fn label_exp1(node: &mut LatentNode, positive: u8) -> Result<u8> {
    let y = match &mut node.members {
        LatentMembers::Instances(l) => oracle::oracle_exp1(l, positive)?,
        LatentMembers::Bags(children) => {
            let mut any = 0;
            for c in children.iter_mut() {
                any = any.max(label_exp1(c, positive)?);
            }
            any
        }
    };
    node.label = Some(y);
    Ok(y)
}

fn draw_exp1<R: Rng>(
    rng: &mut R,
    pool: &InstancePool,
    spec: &DatasetSpec,
    classes: &ClassIndex,
    target: u8,
) -> Result<Candidate> {
    let skeleton = Skeleton::draw(rng, &spec.fanout);
    let n = skeleton.leaves();
    let positives = if target == 1 { rng.random_range(1..=n.min(3)) } else { 0 };
    let mut is_pos = vec![false; n];
    for slot in sample_indices(rng, n, positives) {
        is_pos[slot] = true;
    }
    let ix: Vec<usize> = is_pos
        .iter()
        .map(|&p| pick(rng, if p { &classes.positive } else { &classes.negative }))
        .collect();
    let (tree, mut latent) = skeleton.assemble(&mut label_with(pool, &ix).into_iter());
    let y = oracle::oracle_exp1(&latent.instance_labels(), spec.positive_class)?;
    let root = label_exp1(&mut latent, spec.positive_class)?;
    debug_assert_eq!(root, y);
    Ok(Some((tree, latent, y)))
}

/// Negatives hold one positive instance in each of m inner bags; positives
/// hold two in one bag and one in each of the other m-1. Half the samples
/// draw m from the same range for both labels, the other half draw the
/// total count T = m + y from the same range. Either half alone leaks the
/// label, through T to a flat bag or through m to the inner-bag pattern;
/// mixed, both leaks stay near chance.
fn draw_exp2<R: Rng>(
    rng: &mut R,
    pool: &InstancePool,
    spec: &DatasetSpec,
    classes: &ClassIndex,
    target: u8,
) -> Result<Candidate> {
    let skeleton = Skeleton::draw(rng, &spec.fanout);
    let Skeleton::Node(bags) = &skeleton else {
        return Ok(None);
    };
    let sizes: Vec<usize> = bags.iter().map(Skeleton::leaves).collect();
    let k = sizes.len();
    let m = if k >= 2 && rng.random_bool(0.5) {
        rng.random_range(2..=k) - target as usize
    } else {
        rng.random_range(1..=k)
    };
    let holders = sample_indices(rng, k, m).into_vec();

    let mut is_pos: Vec<Vec<bool>> = sizes.iter().map(|&s| vec![false; s]).collect();
    let doubled = if target == 1 {
        let roomy: Vec<usize> = holders.iter().copied().filter(|&b| sizes[b] >= 2).collect();
        if roomy.is_empty() {
            return Ok(None);
        }
        Some(roomy[rng.random_range(0..roomy.len())])
    } else {
        None
    };
    for &b in &holders {
        let count = if Some(b) == doubled { 2 } else { 1 };
        for slot in sample_indices(rng, sizes[b], count) {
            is_pos[b][slot] = true;
        }
    }

    let ix: Vec<usize> = is_pos
        .iter()
        .flatten()
        .map(|&p| pick(rng, if p { &classes.positive } else { &classes.negative }))
        .collect();
    let (tree, mut latent) = skeleton.assemble(&mut label_with(pool, &ix).into_iter());
    let LatentMembers::Bags(children) = &mut latent.members else {
        unreachable!("two-level skeleton");
    };
    let inner: Vec<Vec<u8>> = children.iter().map(LatentNode::instance_labels).collect();
    let (y, inner_labels) = oracle::oracle_exp2(&inner, spec.positive_class)?;
    for (child, l) in children.iter_mut().zip(inner_labels) {
        child.label = Some(l);
    }
    latent.label = Some(y);
    Ok(Some((tree, latent, y)))
}

#[derive(Clone, Copy, PartialEq)]
enum BagKind {
    Even,
    Odd,
    Mixed,
}

/// Bag kinds for one region with the requested region label.
fn region_kinds<R: Rng>(rng: &mut R, bags: usize, label: u8) -> Option<Vec<BagKind>> {
    for _ in 0..100 {
        let kinds: Vec<BagKind> = match label {
            ODD => (0..bags)
                .map(|_| if rng.random_bool(0.5) { BagKind::Odd } else { BagKind::Mixed })
                .collect(),
            EVEN => (0..bags)
                .map(|_| if rng.random_bool(0.5) { BagKind::Even } else { BagKind::Mixed })
                .collect(),
            _ => (0..bags)
                .map(|_| [BagKind::Even, BagKind::Odd, BagKind::Mixed][rng.random_range(0..3)])
                .collect(),
        };
        let has_even = kinds.contains(&BagKind::Even);
        let has_odd = kinds.contains(&BagKind::Odd);
        let ok = match label {
            ODD => has_odd,
            EVEN => has_even,
            _ => has_even == has_odd,
        };
        if ok {
            return Some(kinds);
        }
    }
    None
}

fn draw_exp3<R: Rng>(
    rng: &mut R,
    pool: &InstancePool,
    spec: &DatasetSpec,
    classes: &ClassIndex,
    target: u8,
) -> Result<Candidate> {
    let skeleton = Skeleton::draw(rng, &spec.fanout);
    let Skeleton::Node(regions) = &skeleton else {
        return Ok(None);
    };
    let region_labels: Vec<u8> = (0..regions.len()).map(|_| rng.random_range(0..3u8)).collect();
    if u8::from(region_labels.contains(&ODD)) != target {
        return Ok(None);
    }

    let mut ix = Vec::with_capacity(skeleton.leaves());
    for (region, &label) in regions.iter().zip(&region_labels) {
        let Skeleton::Node(bags) = region else {
            return Ok(None);
        };
        let Some(kinds) = region_kinds(rng, bags.len(), label) else {
            return Ok(None);
        };
        for (bag, kind) in bags.iter().zip(kinds) {
            let n = bag.leaves();
            match kind {
                BagKind::Even => ix.extend((0..n).map(|_| pick(rng, &classes.even))),
                BagKind::Odd => ix.extend((0..n).map(|_| pick(rng, &classes.odd))),
                BagKind::Mixed => {
                    if n < 2 {
                        return Ok(None);
                    }
                    let forced = sample_indices(rng, n, 2).into_vec();
                    for slot in 0..n {
                        ix.push(if slot == forced[0] {
                            pick(rng, &classes.even)
                        } else if slot == forced[1] {
                            pick(rng, &classes.odd)
                        } else {
                            pick(rng, &classes.all)
                        });
                    }
                }
            }
        }
    }

    let (tree, mut latent) = skeleton.assemble(&mut label_with(pool, &ix).into_iter());
    let LatentMembers::Bags(region_nodes) = &mut latent.members else {
        unreachable!("three-level skeleton");
    };
    let digits: Vec<Vec<Vec<u8>>> = region_nodes
        .iter()
        .map(|r| match &r.members {
            LatentMembers::Bags(bags) => bags.iter().map(LatentNode::instance_labels).collect(),
            LatentMembers::Instances(_) => Vec::new(),
        })
        .collect();
    let (y, bag_labels, region_out) = oracle::oracle_exp3(&digits)?;
    for ((region, labels), rl) in region_nodes.iter_mut().zip(bag_labels).zip(region_out) {
        region.label = Some(rl);
        if let LatentMembers::Bags(bags) = &mut region.members {
            for (bag, l) in bags.iter_mut().zip(labels) {
                bag.label = Some(l);
            }
        }
    }
    latent.label = Some(y);
    Ok(Some((tree, latent, y)))
}
