//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::Path;

use anyhow::{bail, Context};
use mdeopt::learned::default_train_config;
use mdeopt::mde::{default_finetune_config, default_s2s_config};
use mdeopt::models::{SimParams, TargetEnvParams};
use mdeopt::neural::TrainConfig;
use mdeopt::optimizer::OptConfig;
use mdeopt::scene::GenConfig;
use mdeopt::util::derive_seed;
use mdeopt::GridSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which models an optimization run may call and how it picks among them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    OnlyH,
    OnlyL,
    OnlyS,
    CombinedS2s,
    CombinedS2r,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::OnlyH,
        Baseline::OnlyL,
        Baseline::OnlyS,
        Baseline::CombinedS2s,
        Baseline::CombinedS2r,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::OnlyH => "only_h",
            Baseline::OnlyL => "only_l",
            Baseline::OnlyS => "only_s",
            Baseline::CombinedS2s => "combined_s2s",
            Baseline::CombinedS2r => "combined_s2r",
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Baseline {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .with_context(|| format!("unknown baseline {s:?}"))
    }
}

/// Record counts of the generated datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSizes {
    /// Training set of the learned model.
    pub source_train: usize,
    pub source_test: usize,
    /// Placements the sim-to-sim estimators are trained on; disjoint from
    /// the learned model's training set.
    pub mde_train: usize,
    pub target_train: usize,
    pub target_test: usize,
}

impl Default for DataSizes {
    fn default() -> Self {
        DataSizes {
            source_train: 1000,
            source_test: 300,
            mde_train: 1000,
            target_train: 80,
            target_test: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Optimization tasks per environment.
    pub tasks: usize,
    /// Repetitions of the sample-efficiency experiment.
    pub seeds: usize,
    pub efficiency_sizes: Vec<usize>,
    /// Leading source-test records used for the estimator calibration check.
    pub calibration_samples: usize,
    /// Calls per model when measuring latency.
    pub latency_calls: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tasks: 20,
            seeds: 5,
            efficiency_sizes: vec![10, 20, 40, 80],
            calibration_samples: 200,
            latency_calls: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub gen: GenConfig,
    pub sim: SimParams,
    pub target_env: TargetEnvParams,
    pub data: DataSizes,
    pub learned: TrainConfig,
    pub s2s: TrainConfig,
    pub finetune: TrainConfig,
    /// Estimators trained from a fresh initialization on target data.
    pub scratch: TrainConfig,
    pub d_max: f64,
    pub optimizer: OptConfig,
    pub eval: EvalConfig,
    pub baselines: Vec<Baseline>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            grid: GridSpec::default(),
            gen: GenConfig::default(),
            sim: SimParams::default(),
            target_env: TargetEnvParams::default(),
            data: DataSizes::default(),
            learned: default_train_config(),
            s2s: default_s2s_config(),
            finetune: default_finetune_config(),
            scratch: default_finetune_config(),
            d_max: 0.4,
            optimizer: OptConfig::default(),
            eval: EvalConfig::default(),
            baselines: Baseline::ALL.to_vec(),
        }
    }
}

/// Independent random streams derived from the experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SourceTrain = 1,
    SourceTest,
    MdeTrain,
    TargetTrain,
    TargetTest,
    Learned,
    S2s,
    Finetune,
    SourceTasks,
    TargetTasks,
    Optimizer,
    Efficiency,
    Latency,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.grid.validate()?;
        self.gen.validate(&self.grid)?;
        self.sim.validate()?;
        self.target_env.validate()?;
        if self.target_env.base != self.sim {
            bail!("target_env.base must equal sim; the target world perturbs the source simulator");
        }
        for (name, t) in [
            ("learned", &self.learned),
            ("s2s", &self.s2s),
            ("finetune", &self.finetune),
            ("scratch", &self.scratch),
        ] {
            t.validate().with_context(|| format!("{name} training config"))?;
        }
        mdeopt::DeviationConfig::new(1.0, self.d_max)?;
        self.optimizer.validate()?;
        let d = &self.data;
        for (name, n) in [
            ("source_train", d.source_train),
            ("source_test", d.source_test),
            ("mde_train", d.mde_train),
            ("target_train", d.target_train),
            ("target_test", d.target_test),
        ] {
            if n == 0 {
                bail!("data.{name} must be >= 1");
            }
        }
        let e = &self.eval;
        if e.calibration_samples == 0 || e.calibration_samples > d.source_test {
            bail!(
                "eval.calibration_samples {} must lie in [1, data.source_test = {}]",
                e.calibration_samples,
                d.source_test
            );
        }
        if let Some(n) = e.efficiency_sizes.iter().find(|n| **n > d.target_train) {
            bail!("efficiency size {n} exceeds data.target_train = {}", d.target_train);
        }
        if e.tasks == 0 || e.seeds == 0 || e.latency_calls == 0 {
            bail!("eval.tasks, eval.seeds and eval.latency_calls must be >= 1");
        }
        Ok(())
    }

    pub fn stream(&self, s: Stream) -> u64 {
        derive_seed(self.seed, s as u64)
    }

    /// A training config whose seed mixes the experiment seed, the stream
    /// and the config's own seed.
    pub fn seeded(&self, t: &TrainConfig, s: Stream, rep: u64) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(derive_seed(self.stream(s), t.seed), rep),
            ..*t
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_documents_fill_in_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 9, "eval": {"tasks": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.eval.tasks, 3);
        assert_eq!(cfg.eval.seeds, 5);
        assert_eq!(cfg.data, DataSizes::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"sede": 1}"#,
            r#"{"eval": {"task": 3}}"#,
            r#"{"optimizer": {"budget": 5, "beta": 4, "n_uniform": 1, "n_stratified": 1,
                 "gp": {"signal_var": 1, "length_scale": 4, "noise_var": 0, "extra": 1},
                 "standardize": "off", "seed": 0}}"#,
        ] {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for doc in [
            r#"{"d_max": 0.0}"#,
            r#"{"data": {"target_train": 5}}"#,
            r#"{"eval": {"calibration_samples": 1000}}"#,
            r#"{"grid": {"width": 4, "height": 64, "cell_size": 0.5}}"#,
        ] {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn baseline_names_parse_back() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
            let json = serde_json::to_string(&b).unwrap();
            assert_eq!(json, format!("\"{}\"", b.name()));
        }
    }
}
