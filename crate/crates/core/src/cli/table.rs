use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Architecture, DataConfig, RunConfig, Switch};
use crate::bagdata::Experiment;

/// One cell of the F1 grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub experiment: Experiment,
    pub architecture: Architecture,
    pub attention: Switch,
    /// Test F1, absent when the run failed.
    pub f1: Option<f64>,
    pub error: Option<String>,
    pub report_checksum: Option<String>,
}

/// The ten runs: MIL and NMIL with and without attention for exp1 and
/// exp2, NMIL only for exp3.
pub fn grid(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for experiment in Experiment::ALL {
        for architecture in [Architecture::Mil, Architecture::Nmil] {
            if experiment == Experiment::Exp3 && architecture == Architecture::Mil {
                continue;
            }
            for attention in [Switch::Off, Switch::On] {
                out.push(RunConfig {
                    experiment,
                    architecture,
                    attention,
                    levels: 0,
                    data: DataConfig {
                        fanout: Vec::new(),
                        ..base.data.clone()
                    },
                    out: base.out.join(format!(
                        "{experiment}-{architecture}-{}",
                        if attention.is_on() { "att" } else { "noatt" }
                    )),
                    ..base.clone()
                });
            }
        }
    }
    out
}

fn find(cells: &[Cell], e: Experiment, a: Architecture, s: Switch) -> Option<&Cell> {
    cells.iter().find(|c| c.experiment == e && c.architecture == a && c.attention == s)
}

/// Markdown table with one row per architecture/attention pair and one
/// column per experiment.
pub fn render(cells: &[Cell]) -> String {
    let mut out = String::from("| Model | Attention | Exp1 | Exp2 | Exp3 |\n|---|---|---|---|---|\n");
    for arch in [Architecture::Mil, Architecture::Nmil] {
        for att in [Switch::Off, Switch::On] {
            let name = if arch == Architecture::Mil { "MIL" } else { "NMIL" };
            let att_name = if att.is_on() { "w/ Att" } else { "w/o Att" };
            let _ = write!(out, "| {name} | {att_name} |");
            for e in Experiment::ALL {
                let text = match find(cells, e, arch, att) {
                    _ if e == Experiment::Exp3 && arch == Architecture::Mil => "N/A".to_string(),
                    Some(Cell { f1: Some(f), .. }) => format!("{f:.3}"),
                    Some(_) => "failed".to_string(),
                    None => String::new(),
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
    }
    out
}
