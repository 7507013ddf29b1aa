use std::path::Path;
use std::process::Command;

use nmil::bagdata::{Experiment, Manifest};
use nmil::cli::{cmd_attend, cmd_table1, cmd_train, prepare, recheck_labels, AttendArgs, RunConfig, CSV_HEADER};

const SMALL: &str = r#"
synthetic = true
seed = 3

[data]
train_samples = 40
test_samples = 20
synthetic_per_class = 20
synthetic_dim = 8

[net]
hidden_dims = [6]
embed_dim = 4
attention_dim = 4

[train]
max_epochs = 3
"#;

fn nmil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nmil"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn small(out: &Path) -> RunConfig {
    let mut c: RunConfig = toml::from_str(SMALL).unwrap();
    c.out = out.to_path_buf();
    c
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for name in ["a", "b"] {
        run_ok(nmil()
            .args(["generate", "--experiment", "exp3", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(name)));
    }
    for file in ["train.manifest.json", "test.manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let m = Manifest::load(dir.path().join("a/train.manifest.json")).unwrap();
    assert_eq!(m.experiment, Experiment::Exp3);
    assert_eq!(m.samples.len(), 40);
    let pool = m.pool.load().unwrap();
    assert_eq!(recheck_labels(&m.to_dataset(&pool).unwrap()).unwrap(), 40);
}

#[test]
fn invalid_requests_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for args in [
        vec!["generate", "--experiment", "exp3", "--levels", "2"],
        vec!["train", "--experiment", "exp3", "--architecture", "mil"],
        vec!["train", "--experiment", "exp2", "--levels", "3"],
        vec!["train", "--lr", "-1"],
    ] {
        let out = nmil().args(&args).arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
    let out = nmil().args(["train", "--data-dir"]).arg(dir.path().join("missing")).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(!nmil().arg("bogus").output().unwrap().status.success());
}

#[test]
fn train_writes_a_reproducible_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("one"));
    cfg.experiment = Experiment::Exp2;
    let a = cmd_train(&cfg, None).unwrap();
    assert!((0.0..=1.0).contains(&a.metrics.f1));
    assert_eq!(a.metrics.total(), 20);
    assert_eq!(a.checksum, a.compute_checksum().unwrap());
    assert_eq!(a.localization.len(), 2);
    for f in ["report.json", "model.nmil", "history.jsonl", "train.manifest.json", "test.manifest.json"] {
        assert!(cfg.out.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(cfg.out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), a.history.len());

    cfg.out = dir.path().join("two");
    let b = cmd_train(&cfg, None).unwrap();
    assert_eq!(a.checksum, b.checksum);

    // retraining from the written manifests gives the same run
    cfg.out = dir.path().join("three");
    let one = dir.path().join("one");
    let c = cmd_train(&cfg, Some((&one.join("train.manifest.json"), &one.join("test.manifest.json")))).unwrap();
    assert_eq!(a.train_manifest_sha256, c.train_manifest_sha256);
    assert_eq!(a.metrics, c.metrics);
}

#[test]
fn mil_runs_use_flat_bags() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.experiment = Experiment::Exp2;
    cfg.architecture = nmil::cli::Architecture::Mil;
    let r = cmd_train(&cfg, None).unwrap();
    assert_eq!(r.localization.len(), 1);
    let model = nmil::model::NmilModel::load(dir.path().join("model.nmil")).unwrap();
    assert_eq!(model.levels(), 1);
    let prepared = prepare(&cfg).unwrap();
    assert_eq!(prepared.train_set().unwrap().spec.levels, 2);
}

#[test]
fn attend_exports_every_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.experiment = Experiment::Exp3;
    cmd_train(&cfg, None).unwrap();
    let args = AttendArgs {
        model: dir.path().join("model.nmil"),
        manifest: dir.path().join("test.manifest.json"),
        out: dir.path().join("att"),
        svg: true,
        samples: Vec::new(),
    };
    let rows = cmd_attend(&args).unwrap();
    let manifest = Manifest::load(&args.manifest).unwrap();
    let expected: usize = manifest.samples.iter().map(|s| s.tree.membership_count()).sum();
    assert_eq!(rows, expected);

    let csv = std::fs::read_to_string(args.out.join("attention.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let mut sums = std::collections::BTreeMap::<(String, String, String), f64>::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        *sums.entry((f[0].into(), f[1].into(), f[2].into())).or_default() += f[4].parse::<f64>().unwrap();
    }
    assert!(sums.values().all(|s| (s - 1.0).abs() <= 1e-9));
    let svgs = std::fs::read_dir(&args.out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 9);

    let wrong = AttendArgs { samples: vec![100_000], ..args };
    assert!(cmd_attend(&wrong).is_err());
}

#[test]
fn table1_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.max_epochs = 1;
    let cells = cmd_table1(&cfg).unwrap();
    assert_eq!(cells.len(), 10);
    assert!(cells.iter().all(|c| c.f1.is_some() && c.error.is_none()));
    let table = std::fs::read_to_string(dir.path().join("table1.md")).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.contains("| MIL | w/ Att |") && table.contains("N/A"));
    let json: Vec<nmil::cli::Cell> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table1.json")).unwrap()).unwrap();
    assert_eq!(json, cells);
}
