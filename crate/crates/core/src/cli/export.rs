use std::fmt::Write as _;

use crate::bagdata::{LatentMembers, LatentNode};
use crate::model::AttentionTree;
use crate::train::AttentionRecord;

pub const CSV_HEADER: &str = "sample_id,level,bag_index,member_index,weight,latent_label";

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub sample_id: usize,
    pub level: usize,
    /// Position of the bag among the sample's bags at this level.
    pub bag_index: usize,
    pub member_index: usize,
    pub weight: f64,
    /// Digit of an instance member or latent label of a bag member.
    pub latent_label: Option<u8>,
}

struct Flat<'a> {
    weights: &'a [f64],
    labels: Vec<Option<u8>>,
}

fn collect<'a>(att: &'a AttentionTree, latent: &LatentNode, out: &mut Vec<Vec<Flat<'a>>>) {
    let level = att.depth();
    let labels = match &latent.members {
        LatentMembers::Instances(l) => l.iter().map(|&d| Some(d)).collect(),
        LatentMembers::Bags(c) => c.iter().map(|n| n.label).collect(),
    };
    out[level - 1].push(Flat {
        weights: &att.weights,
        labels,
    });
    if let LatentMembers::Bags(children) = &latent.members {
        for (a, l) in att.children.iter().zip(children) {
            collect(a, l, out);
        }
    }
}

fn by_level(record: &AttentionRecord) -> Vec<Vec<Flat<'_>>> {
    let mut out: Vec<Vec<Flat>> = (0..record.attention.depth()).map(|_| Vec::new()).collect();
    collect(&record.attention, &record.latent, &mut out);
    out
}

/// One row per member slot of every bag, levels from the innermost out.
pub fn attention_rows(record: &AttentionRecord) -> Vec<AttentionRow> {
    let mut rows = Vec::new();
    for (l, bags) in by_level(record).iter().enumerate() {
        for (bag_index, bag) in bags.iter().enumerate() {
            for (member_index, (&weight, &latent_label)) in bag.weights.iter().zip(&bag.labels).enumerate() {
                rows.push(AttentionRow {
                    sample_id: record.sample_id,
                    level: l + 1,
                    bag_index,
                    member_index,
                    weight,
                    latent_label,
                });
            }
        }
    }
    rows
}

pub fn attention_csv(records: &[AttentionRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        for row in attention_rows(r) {
            let label = row.latent_label.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.sample_id, row.level, row.bag_index, row.member_index, row.weight, label
            );
        }
    }
    out
}

const BAR_W: f64 = 14.0;
const BAR_GAP: f64 = 3.0;
const GROUP_GAP: f64 = 16.0;
const PLOT_H: f64 = 160.0;
const MARGIN: f64 = 30.0;

/// Bar chart of the weights at one level of a sample, bars grouped by bag
/// and labelled with the members' latent labels. `None` if the sample has
/// no such level.
pub fn attention_svg(record: &AttentionRecord, level: usize) -> Option<String> {
    let levels = by_level(record);
    let bags = levels.get(level.checked_sub(1)?)?;
    let bars: usize = bags.iter().map(|b| b.weights.len()).sum();
    let width = 2.0 * MARGIN + bars as f64 * (BAR_W + BAR_GAP) + bags.len().saturating_sub(1) as f64 * GROUP_GAP;
    let height = PLOT_H + 3.0 * MARGIN;
    let base = MARGIN + PLOT_H;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="16">sample {} (label {}), level {level}</text>"#,
        record.sample_id, record.weak_label
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{MARGIN}" y1="{base}" x2="{:.1}" y2="{base}" stroke="#444"/>"##,
        width - MARGIN
    );
    let mut x = MARGIN;
    for (b, bag) in bags.iter().enumerate() {
        let group_start = x;
        for (&w, label) in bag.weights.iter().zip(&bag.labels) {
            let h = w.clamp(0.0, 1.0) * PLOT_H;
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.1}" y="{:.1}" width="{BAR_W}" height="{h:.1}" fill="#4a7ab5"><title>{w:.4}</title></rect>"##,
                base - h
            );
            let text = label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{text}</text>"#,
                x + BAR_W / 2.0,
                base + 12.0
            );
            x += BAR_W + BAR_GAP;
        }
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#666">bag {b}</text>"##,
            (group_start + x - BAR_GAP) / 2.0,
            base + 26.0
        );
        x += GROUP_GAP;
    }
    svg.push_str("</svg>\n");
    Some(svg)
}
