//! Model deviation estimators: small dual-encoder regressors that predict how
//! far a model's prediction will land from the reference outcome, on the
//! normalized `[0, 1]` scale.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{encode_batch, ACTION_FEATURES, OBJECT_CHANNELS, SCENE_CHANNELS};
use crate::grid::{deviation, normalize_deviation, Action, DeviationConfig, GridSpec, SceneState};
use crate::models::{EnvTag, PredictiveModel};
use crate::neural::{
    fit, freeze_all_but_last, load_network, save_network, Loss, Network, SpecBuilder, Tensor,
    TrainConfig,
};
use crate::scene::Dataset;
use crate::util::percentile;

/// Fewest (scene, action) pairs `train_s2s` accepts.
pub const MIN_S2S_SAMPLES: usize = 100;

/// Percentile of pooled raw training deviations used as `d_norm`.
pub const D_NORM_PERCENTILE: f64 = 95.0;

pub fn default_s2s_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        iterations: 2000,
        loss: Loss::L1,
        seed: 0,
    }
}

pub fn default_finetune_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        iterations: 500,
        loss: Loss::L1,
        seed: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "s2s")]
    S2s,
    #[serde(rename = "s2r-finetuned")]
    S2rFinetuned,
    /// Trained directly on target data from a fresh initialization.
    #[serde(rename = "scratch")]
    Scratch,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::S2s => "s2s",
            Provenance::S2rFinetuned => "s2r-finetuned",
            Provenance::Scratch => "scratch",
        })
    }
}

/// One deviation estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct MdeNet {
    net: Network<f32>,
    pub provenance: Provenance,
}

fn half(n: usize) -> usize {
    (n + 1) / 2
}

impl MdeNet {
    /// Untrained estimator for `grid`; outputs 0 until trained.
    pub fn new(grid: &GridSpec, seed: u64) -> Result<Self> {
        grid.validate()?;
        let (w, h) = (grid.width, grid.height);
        let flat = 16 * half(half(half(w))) * half(half(half(h)));
        let mut b = SpecBuilder::new();
        let scene = b.input(&[SCENE_CHANNELS, h, w]);
        let object = b.input(&[OBJECT_CHANNELS, h, w]);
        let action = b.input(&[ACTION_FEATURES]);
        let encoder = |b: &mut SpecBuilder, x: usize, cin: usize| {
            let mut cur = x;
            let mut c = cin;
            for cout in [8, 16, 16] {
                let conv = b.conv(cur, c, cout, 3, 2, 1);
                cur = b.relu(conv);
                c = cout;
            }
            b.flatten(cur)
        };
        let s = encoder(&mut b, scene, SCENE_CHANNELS);
        let o = encoder(&mut b, object, OBJECT_CHANNELS);
        let a = b.dense(action, ACTION_FEATURES, 16);
        let a = b.relu(a);
        let cat = b.concat(&[s, o, a]);
        let hidden = b.dense(cat, 2 * flat + 16, 64);
        let hidden = b.relu(hidden);
        let out = b.dense(hidden, 64, 1);
        b.zero_init(out);
        Ok(MdeNet {
            net: Network::new(b.build(out, seed)?)?,
            provenance: Provenance::S2s,
        })
    }

    pub fn from_network(net: Network<f32>, provenance: Provenance) -> Result<Self> {
        let shapes = net.input_shapes();
        let ok = shapes.len() == 3
            && shapes[0].len() == 3
            && shapes[0][0] == SCENE_CHANNELS
            && shapes[1] == [OBJECT_CHANNELS, shapes[0][1], shapes[0][2]]
            && shapes[2] == [ACTION_FEATURES]
            && net.output_shape() == [1];
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "network with inputs {shapes:?} is not a deviation estimator"
            )));
        }
        Ok(MdeNet { net, provenance })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = &self.net.input_shapes()[0];
        (s[2], s[1])
    }

    /// Clamped estimates for several placements.
    pub fn predict_batch(&self, calls: &[(&SceneState, &Action)]) -> Result<Vec<f64>> {
        for (s0, _) in calls {
            if s0.scene.dims() != self.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "estimator grid {:?} vs scene grid {:?}",
                    self.dims(),
                    s0.scene.dims()
                )));
            }
        }
        if calls.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.net.forward(&encode_batch(calls.iter().copied())?)?;
        Ok(out.data().iter().map(|v| (*v as f64).clamp(0.0, 1.0)).collect())
    }
}

/// Estimated normalized deviation, clipped to `[0, 1]`.
pub fn mde_predict(mde: &MdeNet, s0: &SceneState, a: &Action) -> Result<f64> {
    Ok(mde.predict_batch(&[(s0, a)])?[0])
}

/// Raw (cm) deviations between `model` predictions and `reference` outcomes.
pub fn raw_deviations(
    model: &dyn PredictiveModel,
    reference: &dyn PredictiveModel,
    samples: &[(&SceneState, &Action)],
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|(s0, a)| deviation(&model.predict(s0, a)?, &reference.predict(s0, a)?))
        .collect()
}

/// Raw deviations between `model` predictions and the recorded outcomes.
pub fn dataset_deviations(model: &dyn PredictiveModel, dataset: &Dataset) -> Result<Vec<f64>> {
    dataset
        .records
        .par_iter()
        .map(|r| deviation(&model.predict(&r.state, &r.action)?, &r.outcome))
        .collect()
}

/// `d_norm` from pooled raw training deviations. Falls back to 1 cm when
/// every deviation is zero.
pub fn fit_d_norm(pooled: &[f64]) -> f64 {
    let d = percentile(pooled, D_NORM_PERCENTILE);
    if d.is_finite() && d > 0.0 {
        d
    } else {
        1.0
    }
}

pub fn normalize_all(raw: &[f64], cfg: &DeviationConfig) -> Vec<f64> {
    raw.iter().map(|d| normalize_deviation(*d, cfg)).collect()
}

fn regress(
    net: Network<f32>,
    samples: &[(&SceneState, &Action)],
    labels: &[f64],
    cfg: &TrainConfig,
) -> Result<(Network<f32>, Vec<f64>)> {
    if samples.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    fit(net, cfg, samples.len(), |idx| {
        let inputs = encode_batch(idx.iter().map(|&i| samples[i]))?;
        let target = Tensor::new(
            vec![idx.len(), 1],
            idx.iter().map(|&i| labels[i] as f32).collect(),
        )?;
        Ok((inputs, target))
    })
}

/// Trains a fresh estimator on already-normalized labels. The returned net
/// carries `provenance`; training loss is per step.
pub fn train_on_labels(
    grid: &GridSpec,
    samples: &[(&SceneState, &Action)],
    labels: &[f64],
    cfg: &TrainConfig,
    provenance: Provenance,
) -> Result<(MdeNet, Vec<f64>)> {
    let fresh = MdeNet::new(grid, cfg.seed)?;
    let (net, losses) = regress(fresh.net, samples, labels, cfg)?;
    Ok((MdeNet { net, provenance }, losses))
}

/// Sim-to-sim estimator for `model_i` against `reference`: L1 regression of
/// the normalized deviation between their predictions.
pub fn train_s2s(
    model_i: &dyn PredictiveModel,
    reference: &dyn PredictiveModel,
    samples: &[(&SceneState, &Action)],
    dev: &DeviationConfig,
    cfg: &TrainConfig,
) -> Result<(MdeNet, Vec<f64>)> {
    if samples.len() < MIN_S2S_SAMPLES {
        return Err(Error::ConfigInvalid(format!(
            "S2S training needs at least {MIN_S2S_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let raw = raw_deviations(model_i, reference, samples)?;
    train_s2s_from_raw(samples, &raw, dev, cfg)
}

/// As [`train_s2s`], with raw deviations supplied (e.g. from a label cache).
pub fn train_s2s_from_raw(
    samples: &[(&SceneState, &Action)],
    raw: &[f64],
    dev: &DeviationConfig,
    cfg: &TrainConfig,
) -> Result<(MdeNet, Vec<f64>)> {
    dev.validate()?;
    if samples.len() < MIN_S2S_SAMPLES {
        return Err(Error::ConfigInvalid(format!(
            "S2S training needs at least {MIN_S2S_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let grid = samples[0].0.spec();
    train_on_labels(&grid, samples, &normalize_all(raw, dev), cfg, Provenance::S2s)
}

/// Sim-to-real fine-tuning: only the final layer is updated, on labels
/// measured against target-environment outcomes.
pub fn finetune_s2r(
    mde: &MdeNet,
    model_i: &dyn PredictiveModel,
    target: &Dataset,
    dev: &DeviationConfig,
    cfg: &TrainConfig,
) -> Result<(MdeNet, Vec<f64>)> {
    if target.env_tag != EnvTag::Target {
        return Err(Error::ConfigInvalid(
            "fine-tuning needs target-environment data".into(),
        ));
    }
    let raw = dataset_deviations(model_i, target)?;
    let samples: Vec<_> = target.records.iter().map(|r| (&r.state, &r.action)).collect();
    finetune_from_raw(mde, &samples, &raw, dev, cfg)
}

/// As [`finetune_s2r`], with raw target deviations supplied.
pub fn finetune_from_raw(
    mde: &MdeNet,
    samples: &[(&SceneState, &Action)],
    raw: &[f64],
    dev: &DeviationConfig,
    cfg: &TrainConfig,
) -> Result<(MdeNet, Vec<f64>)> {
    if mde.provenance != Provenance::S2s {
        return Err(Error::ConfigInvalid(format!(
            "only S2S estimators are fine-tuned, got {}",
            mde.provenance
        )));
    }
    if samples.is_empty() {
        return Ok((mde.clone(), Vec::new()));
    }
    let mut net = mde.net.clone();
    freeze_all_but_last(&mut net);
    let (mut net, losses) = regress(net, samples, &normalize_all(raw, dev), cfg)?;
    for i in 0..net.spec().nodes.len() {
        net.set_trainable(i, true);
    }
    Ok((
        MdeNet {
            net,
            provenance: Provenance::S2rFinetuned,
        },
        losses,
    ))
}

/// Per-sample `|estimate - label|`.
pub fn l1_errors(mde: &MdeNet, samples: &[(&SceneState, &Action)], labels: &[f64]) -> Result<Vec<f64>> {
    let est = mde.predict_batch(samples)?;
    Ok(est.iter().zip(labels).map(|(m, d)| (m - d).abs()).collect())
}

/// Indices (zero-based family positions) whose estimate is strictly below
/// `d_max`, followed by the reference `n_models - 1`, which is always trusted.
pub fn applicable_from_estimates(estimates: &[f64], d_max: f64) -> Vec<usize> {
    let mut out: Vec<usize> = estimates
        .iter()
        .enumerate()
        .filter(|(_, m)| **m < d_max)
        .map(|(i, _)| i)
        .collect();
    out.push(estimates.len());
    out
}

/// Cheapest applicable model.
pub fn select_from_estimates(estimates: &[f64], d_max: f64) -> usize {
    estimates
        .iter()
        .position(|m| *m < d_max)
        .unwrap_or(estimates.len())
}

/// Estimators for every model of a family except the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct MdeBank {
    /// `mdes[i]` gates family position `i`.
    pub mdes: Vec<MdeNet>,
    pub deviation: DeviationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub model_index: usize,
    pub provenance: Provenance,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankManifest {
    pub d_max: f64,
    pub d_norm: f64,
    pub mdes: Vec<BankEntry>,
}

pub const BANK_MANIFEST: &str = "bank.json";

impl MdeBank {
    pub fn new(mdes: Vec<MdeNet>, deviation: DeviationConfig) -> Result<Self> {
        deviation.validate()?;
        Ok(MdeBank { mdes, deviation })
    }

    /// Size of the family this bank gates.
    pub fn family_len(&self) -> usize {
        self.mdes.len() + 1
    }

    pub fn estimates(&self, s0: &SceneState, a: &Action) -> Result<Vec<f64>> {
        self.mdes.iter().map(|m| mde_predict(m, s0, a)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, m) in self.mdes.iter().enumerate() {
            let file = format!("mde_{i}.mden");
            save_network(&dir.join(&file), &m.net)?;
            entries.push(BankEntry {
                model_index: i,
                provenance: m.provenance,
                file,
            });
        }
        let manifest = BankManifest {
            d_max: self.deviation.d_max,
            d_norm: self.deviation.d_norm,
            mdes: entries,
        };
        fs::write(dir.join(BANK_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BankManifest = serde_json::from_slice(&fs::read(dir.join(BANK_MANIFEST))?)?;
        let mut mdes = Vec::new();
        for (k, e) in manifest.mdes.iter().enumerate() {
            if e.model_index != k {
                return Err(Error::Format(format!(
                    "bank entries out of order: {} at position {k}",
                    e.model_index
                )));
            }
            mdes.push(MdeNet::from_network(load_network(&dir.join(&e.file))?, e.provenance)?);
        }
        MdeBank::new(mdes, DeviationConfig::new(manifest.d_norm, manifest.d_max)?)
    }
}

pub fn applicable_models(bank: &MdeBank, s0: &SceneState, a: &Action) -> Result<Vec<usize>> {
    Ok(applicable_from_estimates(&bank.estimates(s0, a)?, bank.deviation.d_max))
}

pub fn select_model(bank: &MdeBank, s0: &SceneState, a: &Action) -> Result<usize> {
    Ok(select_from_estimates(&bank.estimates(s0, a)?, bank.deviation.d_max))
}

/// On-disk store of raw deviation labels (little-endian f64) keyed by
/// dataset content hash and model identifier.
#[derive(Clone, Debug)]
pub struct LabelCache {
    dir: PathBuf,
}

impl LabelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LabelCache { dir: dir.into() }
    }

    fn path(&self, dataset_hash: &str, model_id: &str) -> PathBuf {
        let safe: String = model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.dir.join(format!("{dataset_hash}_{safe}.f64"))
    }

    pub fn get(&self, dataset_hash: &str, model_id: &str) -> Option<Vec<f64>> {
        let bytes = fs::read(self.path(dataset_hash, model_id)).ok()?;
        if bytes.len() % 8 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    }

    pub fn put(&self, dataset_hash: &str, model_id: &str, raw: &[f64]) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(self.path(dataset_hash, model_id), bytes)?;
        Ok(())
    }

    /// Cached labels, computing and storing them on a miss.
    pub fn get_or_compute(
        &self,
        dataset_hash: &str,
        model_id: &str,
        compute: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if let Some(v) = self.get(dataset_hash, model_id) {
            return Ok(v);
        }
        let v = compute()?;
        self.put(dataset_hash, model_id, &v)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests;
