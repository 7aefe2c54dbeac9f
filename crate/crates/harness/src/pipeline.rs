//! Pipeline stages on in-memory artifacts. The command layer wraps these
//! with file I/O.

use std::sync::Arc;

use anyhow::Context;
use mdeopt::learned::{train_learned, ResidualPredictor};
use mdeopt::mde::{
    dataset_deviations, finetune_from_raw, fit_d_norm, train_s2s_from_raw, LabelCache, MdeBank, MdeNet,
};
use mdeopt::models::{
    Environment, Heuristic, ModelFamily, PredictiveModel, ReferenceSimulator, TargetEnvironment,
};
use mdeopt::neural::write_network;
use mdeopt::scene::{build_dataset, Dataset, Split};
use mdeopt::util::Fnv;
use mdeopt::DeviationConfig;

use crate::config::{ExperimentConfig, Stream};

/// Every dataset an experiment uses.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub mde_train: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
}

impl Datasets {
    pub const NAMES: [&'static str; 5] = ["source_train", "source_test", "mde_train", "target_train", "target_test"];

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Dataset)> {
        Self::NAMES.into_iter().zip([
            &self.source_train,
            &self.source_test,
            &self.mde_train,
            &self.target_train,
            &self.target_test,
        ])
    }
}

pub fn simulator(cfg: &ExperimentConfig) -> anyhow::Result<ReferenceSimulator> {
    Ok(ReferenceSimulator::new(cfg.sim)?)
}

pub fn target_env(cfg: &ExperimentConfig) -> anyhow::Result<TargetEnvironment> {
    Ok(TargetEnvironment::new(cfg.target_env)?)
}

pub fn generate_data(cfg: &ExperimentConfig) -> anyhow::Result<Datasets> {
    let sim = simulator(cfg)?;
    let target = target_env(cfg)?;
    let d = &cfg.data;
    let build = |env: &dyn Environment, n, split, s| {
        build_dataset(&cfg.gen, &cfg.grid, env, n, split, cfg.stream(s))
            .with_context(|| format!("generating {n} {} records", env.tag()))
    };
    Ok(Datasets {
        source_train: build(&sim, d.source_train, Split::Train, Stream::SourceTrain)?,
        source_test: build(&sim, d.source_test, Split::Test, Stream::SourceTest)?,
        mde_train: build(&sim, d.mde_train, Split::Train, Stream::MdeTrain)?,
        target_train: build(&target, d.target_train, Split::Train, Stream::TargetTrain)?,
        target_test: build(&target, d.target_test, Split::Test, Stream::TargetTest)?,
    })
}

pub fn fit_learned(cfg: &ExperimentConfig, source_train: &Dataset) -> anyhow::Result<(ResidualPredictor, Vec<f64>)> {
    let tc = cfg.seeded(&cfg.learned, Stream::Learned, 0);
    Ok(train_learned(source_train, &tc)?)
}

/// `[heuristic, learned, simulator]`.
pub fn family(cfg: &ExperimentConfig, learned: &ResidualPredictor) -> anyhow::Result<ModelFamily> {
    let models: Vec<Arc<dyn PredictiveModel>> =
        vec![Arc::new(Heuristic), Arc::new(learned.clone()), Arc::new(simulator(cfg)?)];
    Ok(ModelFamily::new(models)?)
}

/// Cache key of a model: its name, plus a digest of the weights for learned
/// models so retraining invalidates stale labels.
pub fn model_id(family: &ModelFamily, index: usize, learned: &ResidualPredictor) -> String {
    let name = family.get(index).name().to_string();
    if name != "learned" {
        return name;
    }
    let mut bytes = Vec::new();
    write_network(&mut bytes, learned.network()).expect("writing to memory cannot fail");
    let mut h = Fnv::new();
    h.write(&bytes);
    format!("{name}-{:016x}", h.finish())
}

/// Raw deviations of every non-reference model on a dataset, through the
/// label cache when one is given.
pub fn raw_labels(
    family: &ModelFamily,
    learned: &ResidualPredictor,
    dataset: &Dataset,
    cache: Option<&LabelCache>,
) -> anyhow::Result<Vec<Vec<f64>>> {
    let hash = dataset.content_hash();
    (0..family.len() - 1)
        .map(|i| {
            let compute = || dataset_deviations(family.get(i).as_ref(), dataset);
            Ok(match cache {
                Some(c) => c.get_or_compute(&hash, &model_id(family, i, learned), compute)?,
                None => compute()?,
            })
        })
        .collect()
}

/// Sim-to-sim bank. The estimator training set is a source dataset, so its
/// recorded outcomes are exactly the reference model's predictions.
pub fn fit_s2s_bank(
    cfg: &ExperimentConfig,
    family: &ModelFamily,
    learned: &ResidualPredictor,
    mde_train: &Dataset,
    cache: Option<&LabelCache>,
    rep: u64,
) -> anyhow::Result<(MdeBank, Vec<Vec<f64>>)> {
    anyhow::ensure!(
        mde_train.env_tag == mdeopt::models::EnvTag::Source,
        "sim-to-sim estimators train on source-environment placements"
    );
    let raw = raw_labels(family, learned, mde_train, cache)?;
    let pooled: Vec<f64> = raw.iter().flatten().copied().collect();
    let dev = DeviationConfig::new(fit_d_norm(&pooled), cfg.d_max)?;
    let samples: Vec<_> = mde_train.records.iter().map(|r| (&r.state, &r.action)).collect();
    let mut mdes = Vec::new();
    let mut losses = Vec::new();
    for (i, r) in raw.iter().enumerate() {
        let tc = cfg.seeded(&cfg.s2s, Stream::S2s, rep * 16 + i as u64);
        let (m, l) = train_s2s_from_raw(&samples, r, &dev, &tc)
            .with_context(|| format!("training the estimator of model {i}"))?;
        mdes.push(m);
        losses.push(l);
    }
    Ok((MdeBank::new(mdes, dev)?, losses))
}

/// Last-layer fine-tuning of every estimator on target-environment labels.
pub fn fit_s2r_bank(
    cfg: &ExperimentConfig,
    s2s: &MdeBank,
    family: &ModelFamily,
    learned: &ResidualPredictor,
    target_train: &Dataset,
) -> anyhow::Result<(MdeBank, Vec<Vec<f64>>)> {
    anyhow::ensure!(
        target_train.env_tag == mdeopt::models::EnvTag::Target,
        "fine-tuning needs target-environment data"
    );
    let raw = raw_labels(family, learned, target_train, None)?;
    let samples: Vec<_> = target_train.records.iter().map(|r| (&r.state, &r.action)).collect();
    let mut mdes: Vec<MdeNet> = Vec::new();
    let mut losses = Vec::new();
    for (i, (m, r)) in s2s.mdes.iter().zip(&raw).enumerate() {
        let tc = cfg.seeded(&cfg.finetune, Stream::Finetune, i as u64);
        let (m, l) = finetune_from_raw(m, &samples, r, &s2s.deviation, &tc)?;
        mdes.push(m);
        losses.push(l);
    }
    Ok((MdeBank::new(mdes, s2s.deviation)?, losses))
}
