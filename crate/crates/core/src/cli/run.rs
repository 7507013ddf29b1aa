use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, Seeds};
use crate::bagdata::{
    build_dataset, oracle, Dataset, Experiment, InstancePool, Manifest, PoolSource, SynthPoolSpec,
};
use crate::error::{Error, Result};
use crate::model::NmilModel;
use crate::train::{
    attention_localization_auc, evaluate, extract_attention, train, AttentionRecord, EpochRecord,
    Member, Metrics,
};

pub const REPORT_FORMAT: &str = "nmil-run-report";
pub const REPORT_VERSION: u32 = 1;

/// Pools and datasets of one run.
pub struct Prepared {
    pub train_pool: InstancePool,
    pub test_pool: InstancePool,
    pub train_manifest: Manifest,
    pub test_manifest: Manifest,
}

impl Prepared {
    pub fn train_set(&self) -> Result<Dataset> {
        self.train_manifest.to_dataset(&self.train_pool)
    }

    pub fn test_set(&self) -> Result<Dataset> {
        self.test_manifest.to_dataset(&self.test_pool)
    }
}

/// Train and test pool locations for a config.
pub fn pool_sources(cfg: &RunConfig) -> (PoolSource, PoolSource) {
    if cfg.synthetic {
        let spec = SynthPoolSpec {
            dim: cfg.data.synthetic_dim,
            ..SynthPoolSpec::new(cfg.data.synthetic_per_class, (0..10).collect(), cfg.seeds().pool)
        };
        let test = SynthPoolSpec { draw: 1, ..spec.clone() };
        (PoolSource::Synthetic(spec), PoolSource::Synthetic(test))
    } else {
        let idx = |prefix: &str| PoolSource::Idx {
            images: cfg.data_dir.join(format!("{prefix}-images-idx3-ubyte")),
            labels: cfg.data_dir.join(format!("{prefix}-labels-idx1-ubyte")),
        };
        (idx("train"), idx("t10k"))
    }
}

/// Loads the pools and generates both datasets.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let (train_src, test_src) = pool_sources(cfg);
    let train_pool = train_src.load()?;
    let test_pool = test_src.load()?;
    let train = build_dataset(&train_pool, &cfg.dataset_spec(cfg.data.train_samples, seeds.train_data), cfg.experiment)?;
    let test = build_dataset(&test_pool, &cfg.dataset_spec(cfg.data.test_samples, seeds.test_data), cfg.experiment)?;
    Ok(Prepared {
        train_manifest: Manifest::new(&train, train_src, &train_pool),
        test_manifest: Manifest::new(&test, test_src, &test_pool),
        train_pool,
        test_pool,
    })
}

/// Loads previously written manifests and their pools.
pub fn prepare_from_manifests(train: &Path, test: &Path) -> Result<Prepared> {
    let train_manifest = Manifest::load(train)?;
    let test_manifest = Manifest::load(test)?;
    if train_manifest.experiment != test_manifest.experiment || train_manifest.spec.levels != test_manifest.spec.levels {
        return Err(Error::Structure("train and test manifests describe different experiments".into()));
    }
    let train_pool = train_manifest.pool.load()?;
    let test_pool = test_manifest.pool.load()?;
    Ok(Prepared {
        train_pool,
        test_pool,
        train_manifest,
        test_manifest,
    })
}

/// Recomputes every weak label (and latent bag label) from the instance
/// labels. Returns the number of samples checked.
pub fn recheck_labels(dataset: &Dataset) -> Result<usize> {
    use crate::bagdata::LatentMembers;
    let c = dataset.spec.positive_class;
    for s in &dataset.samples {
        let y = match dataset.experiment {
            Experiment::Exp1 => oracle::oracle_exp1(&s.latent.instance_labels(), c)?,
            Experiment::Exp2 => {
                let LatentMembers::Bags(inner) = &s.latent.members else {
                    return Err(Error::Structure(format!("sample {} is not two-level", s.id)));
                };
                let labels: Vec<Vec<u8>> = inner.iter().map(|n| n.instance_labels()).collect();
                let (y, inner_labels) = oracle::oracle_exp2(&labels, c)?;
                if inner.iter().map(|n| n.label).ne(inner_labels.into_iter().map(Some)) {
                    return Err(Error::Structure(format!("sample {} inner labels disagree", s.id)));
                }
                y
            }
            Experiment::Exp3 => {
                let LatentMembers::Bags(regions) = &s.latent.members else {
                    return Err(Error::Structure(format!("sample {} is not three-level", s.id)));
                };
                let digits = regions
                    .iter()
                    .map(|r| match &r.members {
                        LatentMembers::Bags(b) => Ok(b.iter().map(|n| n.instance_labels()).collect()),
                        LatentMembers::Instances(_) => Err(Error::Structure(format!("sample {} is not three-level", s.id))),
                    })
                    .collect::<Result<Vec<Vec<Vec<u8>>>>>()?;
                oracle::oracle_exp3(&digits)?.0
            }
        };
        if y != s.weak_label {
            return Err(Error::Structure(format!(
                "sample {} carries label {} but the oracle gives {y}",
                s.id, s.weak_label
            )));
        }
    }
    Ok(dataset.samples.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAuc {
    pub level: usize,
    /// `None` when no bag at this level mixes positive and negative members.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub train_manifest_sha256: String,
    pub test_manifest_sha256: String,
    pub parameters: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub metrics: Metrics,
    pub localization: Vec<LevelAuc>,
    /// SHA-256 over every field above except the output directory.
    pub checksum: String,
    pub duration_secs: f64,
}

impl RunReport {
    pub fn compute_checksum(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.checksum.clear();
        copy.duration_secs = 0.0;
        copy.config.out = PathBuf::new();
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&copy)?)))
    }

    pub fn auc(&self, level: usize) -> Option<f64> {
        self.localization.iter().find(|l| l.level == level).and_then(|l| l.auc)
    }
}

/// Whether a bag member counts as latent-positive for localization.
pub fn positivity(experiment: Experiment, positive_class: u8, member: Member<'_>) -> bool {
    match (experiment, member) {
        (Experiment::Exp3, Member::Instance(d)) => d % 2 == 1,
        (Experiment::Exp3, Member::Bag(n)) => n.label == Some(oracle::ODD),
        (_, Member::Instance(d)) => d == positive_class,
        (_, Member::Bag(n)) => n.label == Some(1),
    }
}

/// Localization AUC at every level of the records' trees.
pub fn localization(records: &[AttentionRecord], experiment: Experiment, positive_class: u8, levels: usize) -> Vec<LevelAuc> {
    (1..=levels)
        .map(|level| LevelAuc {
            level,
            auc: attention_localization_auc(records, level, |m| positivity(experiment, positive_class, m)).ok(),
        })
        .collect()
}

pub struct RunOutcome {
    pub report: RunReport,
    pub model: NmilModel,
    pub records: Vec<AttentionRecord>,
}

/// Trains on the train manifest and scores the test manifest.
pub fn run_training(cfg: &RunConfig, prepared: &Prepared) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut train_set = prepared.train_set()?;
    let mut test_set = prepared.test_set()?;
    if cfg.model_levels() == 1 && train_set.spec.levels > 1 {
        train_set = train_set.flattened();
        test_set = test_set.flattened();
    }
    if prepared.train_pool.dim() != prepared.test_pool.dim() {
        return Err(Error::Structure("train and test pools differ in instance width".into()));
    }
    let seeds = cfg.seeds();
    let model = NmilModel::init(cfg.model_dims(prepared.train_pool.dim()), cfg.model_config(), seeds.init)?;
    let parameters = model.param_count();
    let outcome = train(model, prepared.train_pool.view(), &train_set.weak_samples(), &cfg.train_config())?;
    let metrics = evaluate(&outcome.model, prepared.test_pool.view(), &test_set.weak_samples(), cfg.train.threshold)?;
    let records = extract_attention(&outcome.model, prepared.test_pool.view(), &test_set.samples)?;
    let localization = localization(&records, cfg.experiment, cfg.data.positive_class, cfg.model_levels());

    let mut report = RunReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        label: cfg.label(),
        config: cfg.clone(),
        seeds,
        train_manifest_sha256: prepared.train_manifest.checksum()?,
        test_manifest_sha256: prepared.test_manifest.checksum()?,
        parameters,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        metrics,
        localization,
        checksum: String::new(),
        duration_secs: 0.0,
    };
    report.checksum = report.compute_checksum()?;
    report.duration_secs = start.elapsed().as_secs_f64();
    Ok(RunOutcome {
        report,
        model: outcome.model,
        records,
    })
}

/// Files written by a training run.
pub struct RunFiles {
    pub report: PathBuf,
    pub model: PathBuf,
    pub history: PathBuf,
}

pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<RunFiles> {
    std::fs::create_dir_all(dir)?;
    let files = RunFiles {
        report: dir.join("report.json"),
        model: dir.join("model.nmil"),
        history: dir.join("history.jsonl"),
    };
    outcome.model.save(&files.model)?;
    let mut history = String::new();
    for h in &outcome.report.history {
        history.push_str(&serde_json::to_string(h)?);
        history.push('\n');
    }
    std::fs::write(&files.history, history)?;
    let mut report = serde_json::to_string_pretty(&outcome.report)?;
    report.push('\n');
    std::fs::write(&files.report, report)?;
    Ok(files)
}
