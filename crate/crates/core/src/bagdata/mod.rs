//! Nested bag data: instance pools, bag trees, latent-label trees, the
//! experiment label oracles and the seeded dataset generator.
//!
//! A sample keeps two parallel trees. [`BagTree`] holds pool indices and is
//! the only structure the model and the training loop ever see;
//! [`LatentNode`] mirrors it with the hidden labels and is kept for
//! evaluation.

mod generate;
mod idx;
mod manifest;
pub mod oracle;
mod pool;

pub use generate::{build_dataset, Dataset, DatasetSpec, Experiment, FanOut, MAX_RETRIES};
pub use idx::load_idx;
pub use manifest::{Manifest, PoolSource, MANIFEST_FORMAT, MANIFEST_VERSION};
pub use pool::{synth_pool, FeatureView, InstancePool, SynthPoolSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structure of a nested bag as pool indices. Serialises as nested lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BagTree {
    Instances(Vec<usize>),
    Bags(Vec<BagTree>),
}

impl BagTree {
    /// Nesting depth; a plain bag of instances has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            BagTree::Instances(_) => 1,
            BagTree::Bags(members) => 1 + members.first().map_or(0, BagTree::depth),
        }
    }

    /// Checks that every bag is nonempty and all leaves sit at equal depth,
    /// returning the depth.
    pub fn validate(&self) -> Result<usize> {
        match self {
            BagTree::Instances(ix) if ix.is_empty() => {
                Err(Error::Degenerate("bag without instances".into()))
            }
            BagTree::Instances(_) => Ok(1),
            BagTree::Bags(members) => {
                let first = members
                    .first()
                    .ok_or_else(|| Error::Degenerate("bag without members".into()))?
                    .validate()?;
                for m in &members[1..] {
                    if m.validate()? != first {
                        return Err(Error::Structure("leaves at unequal depth".into()));
                    }
                }
                Ok(first + 1)
            }
        }
    }

    pub fn members(&self) -> usize {
        match self {
            BagTree::Instances(ix) => ix.len(),
            BagTree::Bags(m) => m.len(),
        }
    }

    /// Pool indices of every instance in depth-first order.
    pub fn leaf_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            BagTree::Instances(ix) => out.extend_from_slice(ix),
            BagTree::Bags(m) => m.iter().for_each(|b| b.collect_leaves(out)),
        }
    }

    /// One flat bag holding every instance.
    pub fn flatten(&self) -> BagTree {
        BagTree::Instances(self.leaf_indices())
    }

    /// Total number of member slots over all bags of the tree.
    pub fn membership_count(&self) -> usize {
        match self {
            BagTree::Instances(ix) => ix.len(),
            BagTree::Bags(m) => m.len() + m.iter().map(BagTree::membership_count).sum::<usize>(),
        }
    }
}

/// Members of a latent-label node: instance labels at the innermost level,
/// child nodes above it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LatentMembers {
    Instances(Vec<u8>),
    Bags(Vec<LatentNode>),
}

/// Hidden labels of one bag and everything below it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentNode {
    /// Latent bag label (`y^j`) where the experiment defines one.
    pub label: Option<u8>,
    pub members: LatentMembers,
}

impl LatentNode {
    pub fn instances(label: Option<u8>, labels: Vec<u8>) -> Self {
        Self {
            label,
            members: LatentMembers::Instances(labels),
        }
    }

    pub fn bags(label: Option<u8>, children: Vec<LatentNode>) -> Self {
        Self {
            label,
            members: LatentMembers::Bags(children),
        }
    }

    pub fn depth(&self) -> usize {
        match &self.members {
            LatentMembers::Instances(_) => 1,
            LatentMembers::Bags(c) => 1 + c.first().map_or(0, LatentNode::depth),
        }
    }

    pub fn instance_labels(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<u8>) {
        match &self.members {
            LatentMembers::Instances(l) => out.extend_from_slice(l),
            LatentMembers::Bags(c) => c.iter().for_each(|n| n.collect(out)),
        }
    }

    /// True when this tree has the same bag structure as `tree`.
    pub fn matches(&self, tree: &BagTree) -> bool {
        match (&self.members, tree) {
            (LatentMembers::Instances(l), BagTree::Instances(ix)) => l.len() == ix.len(),
            (LatentMembers::Bags(c), BagTree::Bags(m)) => {
                c.len() == m.len() && c.iter().zip(m).all(|(a, b)| a.matches(b))
            }
            _ => false,
        }
    }
}

/// One labelled nested bag. The latent tree is evaluation-only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedSample {
    pub id: usize,
    pub weak_label: u8,
    pub tree: BagTree,
    pub latent: LatentNode,
}

impl NestedSample {
    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    /// The training view: structure and weak label only.
    pub fn weak(&self) -> WeakSample {
        WeakSample {
            tree: self.tree.clone(),
            label: self.weak_label,
        }
    }

    /// The same sample as a single flat bag, as seen by a plain MIL model.
    pub fn flattened(&self) -> NestedSample {
        NestedSample {
            id: self.id,
            weak_label: self.weak_label,
            tree: self.tree.flatten(),
            latent: LatentNode::instances(Some(self.weak_label), self.latent.instance_labels()),
        }
    }
}

/// What the training loop receives for each sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakSample {
    pub tree: BagTree,
    pub label: u8,
}
