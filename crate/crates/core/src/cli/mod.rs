//! The `nmil` command line: dataset generation, training runs, attention
//! export and the F1 grid.

mod config;
mod export;
mod run;
mod table;

pub use config::{Architecture, DataConfig, NetConfig, RunConfig, Seeds, Switch};
pub use export::{attention_csv, attention_rows, attention_svg, AttentionRow, CSV_HEADER};
pub use run::{
    localization, pool_sources, positivity, prepare, prepare_from_manifests, recheck_labels,
    run_training, write_run, LevelAuc, Prepared, RunFiles, RunOutcome, RunReport, REPORT_FORMAT,
    REPORT_VERSION,
};
pub use table::{grid, render, Cell};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bagdata::{Experiment, Manifest};
use crate::error::{Error, Result};
use crate::model::{Aggregator, NmilModel};
use crate::train::extract_attention;

#[derive(Debug, Parser)]
#[command(name = "nmil", version, about = "Nested multiple instance learning with gated attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train and test dataset manifests.
    Generate(RunArgs),
    /// Train one model and score it on the test set.
    Train(TrainArgs),
    /// Export the attention a trained model assigns to a dataset.
    Attend(AttendArgs),
    /// Run the MIL/NMIL x attention grid over all three experiments.
    Table1(RunArgs),
}

/// Flags shared by every run. Unset flags fall back to `--config`, then to
/// built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with any subset of the run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub experiment: Option<Experiment>,
    #[arg(long, value_enum)]
    pub architecture: Option<Architecture>,
    #[arg(long, value_enum)]
    pub attention: Option<Switch>,
    #[arg(long)]
    pub aggregator: Option<Aggregator>,
    /// Nesting depth of the generated bags.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use Gaussian-cluster instances instead of MNIST.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.experiment {
            c.experiment = v;
        }
        if let Some(v) = self.architecture {
            c.architecture = v;
        }
        if let Some(v) = self.attention {
            c.attention = v;
        }
        if let Some(v) = self.aggregator {
            c.aggregator = v;
        }
        if let Some(v) = self.levels {
            c.levels = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.data_dir {
            c.data_dir = v.clone();
        }
        c.synthetic |= self.synthetic;
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.train_samples {
            c.data.train_samples = v;
        }
        if let Some(v) = self.test_samples {
            c.data.test_samples = v;
        }
        if let Some(v) = self.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            c.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.train.patience = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Train on an existing manifest instead of generating one.
    #[arg(long, requires = "test_manifest")]
    pub train_manifest: Option<PathBuf>,
    #[arg(long, requires = "train_manifest")]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "attention")]
    pub out: PathBuf,
    /// Also draw bar charts.
    #[arg(long)]
    pub svg: bool,
    /// Sample ids to chart; defaults to the first three positive samples.
    #[arg(long, value_delimiter = ',')]
    pub samples: Vec<usize>,
}

fn write_manifests(dir: &Path, prepared: &Prepared) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let train = dir.join("train.manifest.json");
    let test = dir.join("test.manifest.json");
    prepared.train_manifest.save(&train)?;
    prepared.test_manifest.save(&test)?;
    Ok((train, test))
}

fn describe(name: &str, m: &Manifest) -> String {
    let pos = m.samples.iter().filter(|s| s.weak_label == 1).count();
    format!(
        "{name}: {} samples, {pos} positive ({:.1}%)",
        m.samples.len(),
        100.0 * pos as f64 / m.samples.len().max(1) as f64
    )
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let prepared = prepare(cfg)?;
    for set in [prepared.train_set()?, prepared.test_set()?] {
        recheck_labels(&set)?;
    }
    let (train, test) = write_manifests(&cfg.out, &prepared)?;
    println!("{}", describe("train", &prepared.train_manifest));
    println!("{}", describe("test", &prepared.test_manifest));
    println!("wrote {} and {}", train.display(), test.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, manifests: Option<(&Path, &Path)>) -> Result<RunReport> {
    let (cfg, prepared) = match manifests {
        Some((train, test)) => {
            let prepared = prepare_from_manifests(train, test)?;
            let mut cfg = cfg.clone();
            cfg.experiment = prepared.train_manifest.experiment;
            cfg.levels = prepared.train_manifest.spec.levels;
            cfg.validate()?;
            (cfg, prepared)
        }
        None => (cfg.clone(), prepare(cfg)?),
    };
    let outcome = run_training(&cfg, &prepared)?;
    write_manifests(&cfg.out, &prepared)?;
    let files = write_run(&cfg.out, &outcome)?;
    let r = &outcome.report;
    println!(
        "{}: test f1 {:.3} (precision {:.3}, recall {:.3}), best epoch {} of {}",
        r.label,
        r.metrics.f1,
        r.metrics.precision,
        r.metrics.recall,
        r.best_epoch,
        r.history.len()
    );
    for l in &r.localization {
        match l.auc {
            Some(a) => println!("  level {} localization AUC {a:.3}", l.level),
            None => println!("  level {} localization AUC undefined", l.level),
        }
    }
    println!("report {} (checksum {})", files.report.display(), r.checksum);
    Ok(outcome.report)
}

pub fn cmd_attend(args: &AttendArgs) -> Result<usize> {
    let model = NmilModel::load(&args.model)?;
    let manifest = Manifest::load(&args.manifest)?;
    let pool = manifest.pool.load()?;
    let mut dataset = manifest.to_dataset(&pool)?;
    if model.levels() == 1 && dataset.spec.levels > 1 {
        dataset = dataset.flattened();
    }
    if model.levels() != dataset.spec.levels {
        return Err(Error::Structure(format!(
            "model has {} level(s) but the manifest has {}",
            model.levels(),
            dataset.spec.levels
        )));
    }
    if model.dims.input_dim != pool.dim() {
        return Err(Error::Structure(format!(
            "model expects {}-wide instances, pool has {}",
            model.dims.input_dim,
            pool.dim()
        )));
    }
    let records = extract_attention(&model, pool.view(), &dataset.samples)?;
    std::fs::create_dir_all(&args.out)?;
    let csv = attention_csv(&records);
    let rows = csv.lines().count() - 1;
    std::fs::write(args.out.join("attention.csv"), csv)?;
    println!("wrote {rows} attention rows to {}", args.out.join("attention.csv").display());

    if args.svg {
        let ids: Vec<usize> = if args.samples.is_empty() {
            records.iter().filter(|r| r.weak_label == 1).take(3).map(|r| r.sample_id).collect()
        } else {
            args.samples.clone()
        };
        for id in ids {
            let record = records
                .iter()
                .find(|r| r.sample_id == id)
                .ok_or_else(|| Error::Config(format!("no sample with id {id}")))?;
            for level in 1..=model.levels() {
                if let Some(svg) = attention_svg(record, level) {
                    let path = args.out.join(format!("sample{id}_level{level}.svg"));
                    std::fs::write(&path, svg)?;
                    println!("wrote {}", path.display());
                }
            }
        }
    }
    Ok(rows)
}

pub fn cmd_table1(base: &RunConfig) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for cfg in grid(base) {
        let result = cmd_train(&cfg, None);
        if let Err(e) = &result {
            eprintln!("{}: {e}", cfg.label());
        }
        cells.push(Cell {
            experiment: cfg.experiment,
            architecture: cfg.architecture,
            attention: cfg.attention,
            f1: result.as_ref().ok().map(|r| r.metrics.f1),
            report_checksum: result.as_ref().ok().map(|r| r.checksum.clone()),
            error: result.err().map(|e| e.to_string()),
        });
    }
    let table = render(&cells);
    std::fs::create_dir_all(&base.out)?;
    std::fs::write(base.out.join("table1.md"), &table)?;
    std::fs::write(base.out.join("table1.json"), serde_json::to_string_pretty(&cells)? + "\n")?;
    print!("{table}");
    Ok(cells)
}

/// Parses `args` and runs the chosen command.
pub fn run_cli<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    match cli.command {
        Command::Generate(a) => cmd_generate(&a.resolve()?),
        Command::Train(a) => {
            let manifests = a.train_manifest.as_deref().zip(a.test_manifest.as_deref());
            cmd_train(&a.run.resolve()?, manifests).map(|_| ())
        }
        Command::Attend(a) => cmd_attend(&a).map(|_| ()),
        Command::Table1(a) => {
            let cells = cmd_table1(&a.resolve()?)?;
            if cells.iter().any(|c| c.f1.is_none()) {
                return Err(Error::Contract("some grid cells failed".into()));
            }
            Ok(())
        }
    }
}
