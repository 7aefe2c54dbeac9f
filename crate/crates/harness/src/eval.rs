//! Evaluations behind the report tables. Each returns per-sample raw rows;
//! the `summarize_*` functions aggregate them.

use std::collections::BTreeMap;

use anyhow::Context;
use mdeopt::mde::{dataset_deviations, finetune_from_raw, normalize_all, train_on_labels, MdeBank, Provenance};
use mdeopt::models::{EnvTag, Environment, ModelFamily};
use mdeopt::optimizer::{optimize, OptConfig, Selection};
use mdeopt::scene::{make_task, Dataset, Task};
use mdeopt::util::{derive_seed, mean, median, std_dev};
use mdeopt::{rmse, Action, SceneState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, ExperimentConfig, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAccuracyRaw {
    pub dataset: String,
    pub model_index: usize,
    pub model: String,
    pub record: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAccuracy {
    pub dataset: String,
    pub model_index: usize,
    pub model: String,
    pub n: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

/// Per-record RMSE of every model against the recorded outcomes.
pub fn eval_model_accuracy(family: &ModelFamily, datasets: &[(&str, &Dataset)]) -> anyhow::Result<Vec<ModelAccuracyRaw>> {
    let mut rows = Vec::new();
    for (name, ds) in datasets {
        for (i, model) in family.iter().enumerate() {
            let errs: Vec<f64> = ds
                .records
                .par_iter()
                .map(|r| Ok(rmse(&model.predict(&r.state, &r.action)?, &r.outcome)?))
                .collect::<anyhow::Result<_>>()?;
            rows.extend(errs.into_iter().enumerate().map(|(k, e)| ModelAccuracyRaw {
                dataset: name.to_string(),
                model_index: i,
                model: model.name().to_string(),
                record: k,
                rmse: e,
            }));
        }
    }
    Ok(rows)
}

/// Groups rows by a key in first-seen order.
fn groups<T, K: Ord + Clone>(rows: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut order: Vec<K> = Vec::new();
    let mut map: BTreeMap<K, Vec<&T>> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        if !map.contains_key(&k) {
            order.push(k.clone());
        }
        map.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let v = map.remove(&k).unwrap_or_default();
            (k, v)
        })
        .collect()
}

pub fn summarize_model_accuracy(raw: &[ModelAccuracyRaw]) -> Vec<ModelAccuracy> {
    groups(raw, |r| (r.dataset.clone(), r.model_index, r.model.clone()))
        .into_iter()
        .map(|((dataset, model_index, model), rows)| {
            let v: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
            ModelAccuracy {
                dataset,
                model_index,
                model,
                n: v.len(),
                rmse_mean: mean(&v),
                rmse_std: std_dev(&v),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdeAccuracyRaw {
    pub bank: String,
    pub dataset: String,
    pub model_index: usize,
    pub record: usize,
    pub estimate: f64,
    pub label: f64,
    pub l1: f64,
    /// Error of the constant predictor fitted to the training labels.
    pub constant_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdeAccuracy {
    pub bank: String,
    pub dataset: String,
    pub model_index: usize,
    pub n: usize,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub constant_l1_mean: f64,
}

/// Scaled estimates against normalized true deviations on `ds`.
/// `constants[i]` is the constant predictor for model `i` (the median of its
/// normalized training labels).
pub fn eval_mde_accuracy(
    bank_name: &str,
    bank: &MdeBank,
    family: &ModelFamily,
    dataset_name: &str,
    ds: &Dataset,
    constants: &[f64],
) -> anyhow::Result<Vec<MdeAccuracyRaw>> {
    let samples: Vec<(&SceneState, &Action)> = ds.records.iter().map(|r| (&r.state, &r.action)).collect();
    let mut rows = Vec::new();
    for (i, mde) in bank.mdes.iter().enumerate() {
        let labels = normalize_all(&dataset_deviations(family.get(i).as_ref(), ds)?, &bank.deviation);
        let est = mde.predict_batch(&samples)?;
        for (k, (e, l)) in est.iter().zip(&labels).enumerate() {
            rows.push(MdeAccuracyRaw {
                bank: bank_name.to_string(),
                dataset: dataset_name.to_string(),
                model_index: i,
                record: k,
                estimate: *e,
                label: *l,
                l1: (e - l).abs(),
                constant_l1: (constants[i] - l).abs(),
            });
        }
    }
    Ok(rows)
}

pub fn summarize_mde_accuracy(raw: &[MdeAccuracyRaw]) -> Vec<MdeAccuracy> {
    groups(raw, |r| (r.bank.clone(), r.dataset.clone(), r.model_index))
        .into_iter()
        .map(|((bank, dataset, model_index), rows)| {
            let v: Vec<f64> = rows.iter().map(|r| r.l1).collect();
            let c: Vec<f64> = rows.iter().map(|r| r.constant_l1).collect();
            MdeAccuracy {
                bank,
                dataset,
                model_index,
                n: v.len(),
                l1_mean: mean(&v),
                l1_std: std_dev(&v),
                constant_l1_mean: mean(&c),
            }
        })
        .collect()
}

/// Median of each model's normalized labels: the best constant under L1.
pub fn constant_predictors(raw_train: &[Vec<f64>], bank: &MdeBank) -> Vec<f64> {
    raw_train
        .iter()
        .map(|r| median(&mut normalize_all(r, &bank.deviation)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bank: String,
    pub model_index: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Mean true normalized deviation where the estimate is below `d_max`;
    /// `None` when nothing was accepted.
    pub mean_accepted: Option<f64>,
    pub mean_rejected: Option<f64>,
}

impl Calibration {
    /// Accepted placements are, on average, truly better than rejected ones.
    pub fn separates(&self) -> bool {
        match (self.mean_accepted, self.mean_rejected) {
            (Some(a), Some(r)) => a < r,
            _ => false,
        }
    }
}

pub fn calibration(bank_name: &str, bank: &MdeBank, family: &ModelFamily, ds: &Dataset) -> anyhow::Result<Vec<Calibration>> {
    let samples: Vec<(&SceneState, &Action)> = ds.records.iter().map(|r| (&r.state, &r.action)).collect();
    bank.mdes
        .iter()
        .enumerate()
        .map(|(i, mde)| {
            let truth = normalize_all(&dataset_deviations(family.get(i).as_ref(), ds)?, &bank.deviation);
            let est = mde.predict_batch(&samples)?;
            let (mut acc, mut rej) = (Vec::new(), Vec::new());
            for (e, t) in est.iter().zip(truth) {
                if *e < bank.deviation.d_max {
                    acc.push(t);
                } else {
                    rej.push(t);
                }
            }
            Ok(Calibration {
                bank: bank_name.to_string(),
                model_index: i,
                accepted: acc.len(),
                rejected: rej.len(),
                mean_accepted: (!acc.is_empty()).then(|| mean(&acc)),
                mean_rejected: (!rej.is_empty()).then(|| mean(&rej)),
            })
        })
        .collect()
}

pub fn make_tasks(cfg: &ExperimentConfig, env: &dyn Environment) -> anyhow::Result<Vec<Task>> {
    let stream = match env.tag() {
        EnvTag::Source => Stream::SourceTasks,
        EnvTag::Target => Stream::TargetTasks,
    };
    (0..cfg.eval.tasks)
        .into_par_iter()
        .map(|t| {
            make_task(&cfg.gen, &cfg.grid, env, derive_seed(cfg.stream(stream), t as u64))
                .with_context(|| format!("building task {t}"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub env: String,
    pub baseline: String,
    pub task: usize,
    pub gt_x: f32,
    pub gt_y: f32,
    pub best_x: f32,
    pub best_y: f32,
    /// cm
    pub action_error: f64,
    pub best_reward: f64,
    pub best_reward_reference: f64,
    pub calls_f1: usize,
    pub calls_f2: usize,
    pub calls_f3: usize,
}

/// Wall time of one run; kept apart from the deterministic results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub env: String,
    pub baseline: String,
    pub task: usize,
    pub wall_ms: f64,
}

/// A run together with its full trace.
pub struct BaselineOutcome {
    pub run: BaselineRun,
    pub timing: RunTiming,
    pub trace: mdeopt::optimizer::OptTrace,
}

fn selection<'a>(b: Baseline, s2s: &'a MdeBank, s2r: &'a MdeBank) -> Selection<'a> {
    match b {
        Baseline::OnlyH => Selection::Only(0),
        Baseline::OnlyL => Selection::Only(1),
        Baseline::OnlyS => Selection::Only(2),
        Baseline::CombinedS2s => Selection::Mde(s2s),
        Baseline::CombinedS2r => Selection::Mde(s2r),
    }
}

/// Optimizes every task with every configured baseline. Runs of the same
/// task share the optimizer seed.
pub fn run_baselines(
    cfg: &ExperimentConfig,
    family: &ModelFamily,
    s2s: &MdeBank,
    s2r: &MdeBank,
    env_tag: EnvTag,
    tasks: &[Task],
) -> anyhow::Result<Vec<BaselineOutcome>> {
    anyhow::ensure!(family.len() == 3, "baselines expect a three-model family");
    let jobs: Vec<(Baseline, usize)> = cfg
        .baselines
        .iter()
        .flat_map(|b| (0..tasks.len()).map(move |t| (*b, t)))
        .collect();
    jobs.par_iter()
        .map(|&(b, t)| {
            let task = &tasks[t];
            let oc = OptConfig {
                seed: derive_seed(cfg.stream(Stream::Optimizer), t as u64),
                ..cfg.optimizer
            };
            let trace = optimize(&task.initial, &task.goal, family, selection(b, s2s, s2r), &oc)
                .with_context(|| format!("{b} on {env_tag} task {t}"))?;
            let calls = trace.call_counts(3);
            let gt = task.ground_truth_action;
            Ok(BaselineOutcome {
                run: BaselineRun {
                    env: env_tag.to_string(),
                    baseline: b.to_string(),
                    task: t,
                    gt_x: gt.x,
                    gt_y: gt.y,
                    best_x: trace.best_action.x,
                    best_y: trace.best_action.y,
                    action_error: trace.best_action.distance(&gt) as f64,
                    best_reward: trace.best_reward,
                    best_reward_reference: trace.best_reward_reference,
                    calls_f1: calls[0],
                    calls_f2: calls[1],
                    calls_f3: calls[2],
                },
                timing: RunTiming {
                    env: env_tag.to_string(),
                    baseline: b.to_string(),
                    task: t,
                    wall_ms: trace.total_ms,
                },
                trace,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub env: String,
    pub baseline: String,
    pub tasks: usize,
    pub error_mean: f64,
    pub error_std: f64,
    pub error_median: f64,
    pub mean_calls_f1: f64,
    pub mean_calls_f2: f64,
    pub mean_calls_f3: f64,
    pub total_calls_f3: usize,
}

pub fn summarize_baselines(raw: &[BaselineRun]) -> Vec<BaselineSummary> {
    groups(raw, |r| (r.env.clone(), r.baseline.clone()))
        .into_iter()
        .map(|((env, baseline), rows)| {
            let mut e: Vec<f64> = rows.iter().map(|r| r.action_error).collect();
            let calls = |f: fn(&BaselineRun) -> usize| mean(&rows.iter().map(|r| f(r) as f64).collect::<Vec<_>>());
            BaselineSummary {
                env,
                baseline,
                tasks: rows.len(),
                error_mean: mean(&e),
                error_std: std_dev(&e),
                error_median: median(&mut e),
                mean_calls_f1: calls(|r| r.calls_f1),
                mean_calls_f2: calls(|r| r.calls_f2),
                mean_calls_f3: calls(|r| r.calls_f3),
                total_calls_f3: rows.iter().map(|r| r.calls_f3).sum(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The sim-to-sim estimator before any target data.
    S2s,
    Finetuned,
    Scratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRaw {
    pub model_index: usize,
    pub n: usize,
    pub seed: usize,
    pub variant: Variant,
    /// Mean L1 error on the target test set.
    pub l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub model_index: usize,
    pub n: usize,
    pub seeds: usize,
    pub s2s_l1: f64,
    pub finetuned_mean: f64,
    pub finetuned_std: f64,
    pub scratch_mean: f64,
    pub scratch_std: f64,
    /// Seeds on which the fine-tuned estimator beat the scratch one.
    pub finetuned_wins: usize,
}

/// Target-test error of fine-tuned and from-scratch estimators trained on
/// the first `n` records of a seeded permutation of `target_train`.
pub fn sample_efficiency_curve(
    cfg: &ExperimentConfig,
    s2s: &MdeBank,
    family: &ModelFamily,
    target_train: &Dataset,
    target_test: &Dataset,
) -> anyhow::Result<Vec<EfficiencyRaw>> {
    let grid = cfg.grid;
    let dev = s2s.deviation;
    let test: Vec<(&SceneState, &Action)> = target_test.records.iter().map(|r| (&r.state, &r.action)).collect();
    let mut test_labels = Vec::new();
    let mut train_raw = Vec::new();
    for i in 0..s2s.mdes.len() {
        test_labels.push(normalize_all(&dataset_deviations(family.get(i).as_ref(), target_test)?, &dev));
        train_raw.push(dataset_deviations(family.get(i).as_ref(), target_train)?);
    }
    let l1 = |m: &mdeopt::mde::MdeNet, i: usize| -> anyhow::Result<f64> {
        let est = m.predict_batch(&test)?;
        Ok(mean(&est.iter().zip(&test_labels[i]).map(|(e, l)| (e - l).abs()).collect::<Vec<_>>()))
    };
    let mut jobs = Vec::new();
    for i in 0..s2s.mdes.len() {
        for &n in &cfg.eval.efficiency_sizes {
            for seed in 0..cfg.eval.seeds {
                jobs.push((i, n, seed));
            }
        }
    }
    let s2s_l1: Vec<f64> = (0..s2s.mdes.len()).map(|i| l1(&s2s.mdes[i], i)).collect::<anyhow::Result<_>>()?;
    let rows: Vec<Vec<EfficiencyRaw>> = jobs
        .par_iter()
        .map(|&(i, n, seed)| {
            let mut order: Vec<usize> = (0..target_train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.stream(Stream::Efficiency), seed as u64));
            order.shuffle(&mut rng);
            let pick = &order[..n];
            let samples: Vec<(&SceneState, &Action)> = pick
                .iter()
                .map(|&k| (&target_train.records[k].state, &target_train.records[k].action))
                .collect();
            let raw: Vec<f64> = pick.iter().map(|&k| train_raw[i][k]).collect();
            let rep = (seed * 16 + i) as u64;
            let ft_cfg = cfg.seeded(&cfg.finetune, Stream::Efficiency, rep);
            let sc_cfg = cfg.seeded(&cfg.scratch, Stream::Efficiency, rep + 8);
            let (ft, _) = finetune_from_raw(&s2s.mdes[i], &samples, &raw, &dev, &ft_cfg)?;
            let (sc, _) = train_on_labels(&grid, &samples, &normalize_all(&raw, &dev), &sc_cfg, Provenance::Scratch)?;
            let row = |variant, l1| EfficiencyRaw {
                model_index: i,
                n,
                seed,
                variant,
                l1,
            };
            Ok(vec![
                row(Variant::S2s, s2s_l1[i]),
                row(Variant::Finetuned, l1(&ft, i)?),
                row(Variant::Scratch, l1(&sc, i)?),
            ])
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn summarize_efficiency(raw: &[EfficiencyRaw]) -> Vec<EfficiencyPoint> {
    groups(raw, |r| (r.model_index, r.n))
        .into_iter()
        .map(|((model_index, n), rows)| {
            let pick = |v: Variant| -> BTreeMap<usize, f64> {
                rows.iter().filter(|r| r.variant == v).map(|r| (r.seed, r.l1)).collect()
            };
            let (s2s, ft, sc) = (pick(Variant::S2s), pick(Variant::Finetuned), pick(Variant::Scratch));
            let ftv: Vec<f64> = ft.values().copied().collect();
            let scv: Vec<f64> = sc.values().copied().collect();
            EfficiencyPoint {
                model_index,
                n,
                seeds: ft.len(),
                s2s_l1: s2s.values().next().copied().unwrap_or(f64::NAN),
                finetuned_mean: mean(&ftv),
                finetuned_std: std_dev(&ftv),
                scratch_mean: mean(&scv),
                scratch_std: std_dev(&scv),
                finetuned_wins: ft.iter().filter(|(s, v)| sc.get(s).is_some_and(|x| *v < x)).count(),
            }
        })
        .collect()
}
