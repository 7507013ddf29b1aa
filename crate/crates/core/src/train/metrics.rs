use serde::{Deserialize, Serialize};

use super::AttentionRecord;
use crate::bagdata::{LatentMembers, LatentNode};
use crate::error::{Error, Result};
use crate::model::AttentionTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }

    /// From `(predicted, actual)` label pairs.
    pub fn from_predictions(pairs: &[(u8, u8)]) -> Self {
        let count = |p: u8, a: u8| pairs.iter().filter(|&&(x, y)| x == p && y == a).count();
        Self::from_counts(count(1, 1), count(1, 0), count(0, 0), count(0, 1))
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A member of a bag as seen by a positivity predicate: an instance's latent
/// class or a child bag's latent node.
#[derive(Debug, Clone, Copy)]
pub enum Member<'a> {
    Instance(u8),
    Bag(&'a LatentNode),
}

/// Rank AUC of `weights` as a score for `positive`; ties count one half.
/// `None` when the bag lacks positives or negatives.
pub fn bag_auc(weights: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = weights.iter().zip(positive).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = weights.iter().zip(positive).filter(|p| !*p.1).map(|p| *p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            score += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(score / (pos.len() * neg.len()) as f64)
}

fn walk<'a>(
    att: &AttentionTree,
    latent: &'a LatentNode,
    level: usize,
    positive: &dyn Fn(Member<'a>) -> bool,
    out: &mut Vec<f64>,
) {
    if att.depth() == level {
        let flags: Vec<bool> = match &latent.members {
            LatentMembers::Instances(l) => l.iter().map(|&c| positive(Member::Instance(c))).collect(),
            LatentMembers::Bags(c) => c.iter().map(|n| positive(Member::Bag(n))).collect(),
        };
        if flags.len() == att.weights.len() {
            out.extend(bag_auc(&att.weights, &flags));
        }
    } else if let LatentMembers::Bags(children) = &latent.members {
        for (a, l) in att.children.iter().zip(children) {
            walk(a, l, level, positive, out);
        }
    }
}

/// Mean per-bag AUC of attention weights at `level` (1 = the members of the
/// innermost bags) over the weak-positive records. Bags whose members are all
/// positive or all negative are skipped.
pub fn attention_localization_auc<'a>(
    records: &'a [AttentionRecord],
    level: usize,
    positive: impl Fn(Member<'a>) -> bool,
) -> Result<f64> {
    let mut aucs = Vec::new();
    for r in records.iter().filter(|r| r.weak_label == 1) {
        walk(&r.attention, &r.latent, level, &positive, &mut aucs);
    }
    if aucs.is_empty() {
        return Err(Error::UndefinedAuc(format!(
            "no level-{level} bag in a positive sample has both positive and negative members"
        )));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}
