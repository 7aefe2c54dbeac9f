//! On-disk layout of an experiment directory and CSV helpers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mdeopt::learned::ResidualPredictor;
use mdeopt::mde::{LabelCache, MdeBank};
use mdeopt::scene::Dataset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stream};
use crate::pipeline::Datasets;

/// Everything under one `--out` directory.
///
/// `results/` holds deterministic CSVs; wall-clock measurements go to
/// `timing/` so that reruns can be compared byte for byte.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.mded"))
    }

    pub fn learned(&self) -> PathBuf {
        self.root.join("models").join("learned.mden")
    }

    pub fn bank(&self, name: &str) -> PathBuf {
        self.root.join("mde").join(name)
    }

    pub fn label_cache(&self) -> LabelCache {
        LabelCache::new(self.root.join("mde").join("labels"))
    }

    pub fn results(&self, file: &str) -> PathBuf {
        self.root.join("results").join(file)
    }

    pub fn timing(&self, file: &str) -> PathBuf {
        self.root.join("timing").join(file)
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("report").join(file)
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    pub fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn require(&self, p: &Path, producer: &str) -> anyhow::Result<()> {
        if !p.exists() {
            bail!("missing checkpoint {}; run `mdeopt {producer}` first", p.display());
        }
        Ok(())
    }

    pub fn save_datasets(&self, cfg: &ExperimentConfig, data: &Datasets) -> anyhow::Result<Vec<PathBuf>> {
        fs::create_dir_all(self.root.join("data"))?;
        let mut out = Vec::new();
        for (name, ds) in data.iter() {
            let p = self.dataset(name);
            ds.save(&p, &cfg.grid, &cfg.gen)?;
            out.push(mdeopt::scene::manifest_path(&p));
            out.push(p);
        }
        Ok(out)
    }

    /// Loads one dataset and checks it was generated by this configuration.
    pub fn load_dataset(&self, cfg: &ExperimentConfig, name: &str) -> anyhow::Result<Dataset> {
        let p = self.dataset(name);
        self.require(&p, "gen-data")?;
        let (ds, m) = Dataset::load(&p).with_context(|| format!("loading {}", p.display()))?;
        let stream = match name {
            "source_train" => Stream::SourceTrain,
            "source_test" => Stream::SourceTest,
            "mde_train" => Stream::MdeTrain,
            "target_train" => Stream::TargetTrain,
            "target_test" => Stream::TargetTest,
            other => bail!("unknown dataset {other}"),
        };
        if m.seed != cfg.stream(stream) || m.grid != cfg.grid || m.config != cfg.gen {
            bail!("{} was generated with a different configuration; rerun `mdeopt gen-data`", p.display());
        }
        Ok(ds)
    }

    pub fn load_datasets(&self, cfg: &ExperimentConfig) -> anyhow::Result<Datasets> {
        Ok(Datasets {
            source_train: self.load_dataset(cfg, "source_train")?,
            source_test: self.load_dataset(cfg, "source_test")?,
            mde_train: self.load_dataset(cfg, "mde_train")?,
            target_train: self.load_dataset(cfg, "target_train")?,
            target_test: self.load_dataset(cfg, "target_test")?,
        })
    }

    pub fn load_learned(&self) -> anyhow::Result<ResidualPredictor> {
        let p = self.learned();
        self.require(&p, "train-learned")?;
        Ok(ResidualPredictor::load(&p)?)
    }

    pub fn load_bank(&self, name: &str) -> anyhow::Result<MdeBank> {
        let dir = self.bank(name);
        let producer = if name == "s2s" { "train-mde-s2s" } else { "finetune-mde" };
        self.require(&dir.join(mdeopt::mde::BANK_MANIFEST), producer)?;
        Ok(MdeBank::load(&dir)?)
    }
}

/// Writes rows with a header line. An empty slice yields an empty file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub model_index: usize,
    pub step: usize,
    pub loss: f64,
}

pub fn loss_rows(per_model: &[Vec<f64>]) -> Vec<LossRow> {
    per_model
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            l.iter().enumerate().map(move |(step, loss)| LossRow {
                model_index: i,
                step,
                loss: *loss,
            })
        })
        .collect()
}

/// Provenance record written by every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
}

pub fn write_manifest(ws: &Workspace, cfg: &ExperimentConfig, command: &str, outputs: &[PathBuf]) -> anyhow::Result<PathBuf> {
    let m = CommandManifest {
        command: command.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outputs.iter().map(|p| ws.relative(p)).collect(),
    };
    let p = ws.manifest(command);
    fs::create_dir_all(p.parent().expect("manifest dir"))?;
    fs::write(&p, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(p)
}
