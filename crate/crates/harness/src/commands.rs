//! One function per CLI command. Each reads its inputs from the workspace,
//! writes its outputs there and returns the written paths.

use std::path::PathBuf;

use anyhow::Context;
use mdeopt::models::{median_latency, EnvTag};
use mdeopt::Action;
use mdeopt::SceneState;
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, ExperimentConfig};
use crate::eval::{self, BaselineOutcome};
use crate::pipeline;
use crate::report;
use crate::workspace::{loss_rows, write_csv, Workspace};

pub fn gen_data(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let data = pipeline::generate_data(cfg)?;
    ws.save_datasets(cfg, &data)
}

pub fn train_learned(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let ds = ws.load_dataset(cfg, "source_train")?;
    let (model, losses) = pipeline::fit_learned(cfg, &ds)?;
    let p = ws.learned();
    std::fs::create_dir_all(p.parent().expect("models dir"))?;
    model.save(&p)?;
    let l = write_csv(&ws.results("learned_loss.csv"), &loss_rows(&[losses]))?;
    Ok(vec![p, l])
}

pub fn train_mde_s2s(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let ds = ws.load_dataset(cfg, "mde_train")?;
    let learned = ws.load_learned()?;
    let family = pipeline::family(cfg, &learned)?;
    let cache = ws.label_cache();
    let (bank, losses) = pipeline::fit_s2s_bank(cfg, &family, &learned, &ds, Some(&cache), 0)?;
    let dir = ws.bank("s2s");
    bank.save(&dir)?;
    let l = write_csv(&ws.results("s2s_loss.csv"), &loss_rows(&losses))?;
    Ok(vec![dir, l])
}

pub fn finetune_mde(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let ds = ws.load_dataset(cfg, "target_train")?;
    let learned = ws.load_learned()?;
    let s2s = ws.load_bank("s2s")?;
    let family = pipeline::family(cfg, &learned)?;
    let (bank, losses) = pipeline::fit_s2r_bank(cfg, &s2s, &family, &learned, &ds)?;
    let dir = ws.bank("s2r");
    bank.save(&dir)?;
    let l = write_csv(&ws.results("finetune_loss.csv"), &loss_rows(&losses))?;
    Ok(vec![dir, l])
}

fn write_outcomes(ws: &Workspace, prefix: &str, outcomes: &[BaselineOutcome]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let dir = ws.results(&format!("traces/{prefix}"));
    std::fs::create_dir_all(&dir)?;
    for o in outcomes {
        let p = dir.join(format!("{}_{}_{:03}.csv", o.run.env, o.run.baseline, o.run.task));
        let f = std::fs::File::create(&p)?;
        o.trace.write_csv(std::io::BufWriter::new(f), false)?;
        out.push(p);
    }
    let runs: Vec<_> = outcomes.iter().map(|o| o.run.clone()).collect();
    let timing: Vec<_> = outcomes.iter().map(|o| o.timing.clone()).collect();
    out.push(write_csv(&ws.results(&format!("{prefix}_raw.csv")), &runs)?);
    out.push(write_csv(&ws.results(&format!("{prefix}.csv")), &eval::summarize_baselines(&runs))?);
    out.push(write_csv(&ws.timing(&format!("{prefix}_timing.csv")), &timing)?);
    Ok(out)
}

fn tasks_for(cfg: &ExperimentConfig, env: EnvTag) -> anyhow::Result<Vec<mdeopt::scene::Task>> {
    match env {
        EnvTag::Source => eval::make_tasks(cfg, &pipeline::simulator(cfg)?),
        EnvTag::Target => eval::make_tasks(cfg, &pipeline::target_env(cfg)?),
    }
}

/// A single method on one environment's tasks.
pub fn optimize(cfg: &ExperimentConfig, ws: &Workspace, baseline: Baseline, env: EnvTag) -> anyhow::Result<Vec<PathBuf>> {
    let learned = ws.load_learned()?;
    let family = pipeline::family(cfg, &learned)?;
    let s2s = ws.load_bank("s2s")?;
    let s2r = if baseline == Baseline::CombinedS2r { ws.load_bank("s2r")? } else { s2s.clone() };
    let tasks = tasks_for(cfg, env)?;
    let run_cfg = ExperimentConfig {
        baselines: vec![baseline],
        ..cfg.clone()
    };
    let outcomes = eval::run_baselines(&run_cfg, &family, &s2s, &s2r, env, &tasks)?;
    write_outcomes(ws, &format!("optimize_{env}_{baseline}"), &outcomes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub model_index: usize,
    pub model: String,
    pub median_ms: f64,
}

pub fn eval_models(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let source = ws.load_dataset(cfg, "source_test")?;
    let target = ws.load_dataset(cfg, "target_test")?;
    let learned = ws.load_learned()?;
    let family = pipeline::family(cfg, &learned)?;
    let raw = eval::eval_model_accuracy(&family, &[("source_test", &source), ("target_test", &target)])?;
    let mut out = vec![
        write_csv(&ws.results("model_accuracy_raw.csv"), &raw)?,
        write_csv(&ws.results("model_accuracy.csv"), &eval::summarize_model_accuracy(&raw))?,
    ];
    let calls: Vec<(SceneState, Action)> = source
        .records
        .iter()
        .take(cfg.eval.latency_calls)
        .map(|r| (r.state.clone(), r.action))
        .collect();
    let rows = family
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(LatencyRow {
                model_index: i,
                model: m.name().to_string(),
                median_ms: median_latency(m.as_ref(), &calls)? * 1e3,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    out.push(write_csv(&ws.timing("model_latency.csv"), &rows)?);
    Ok(out)
}

pub fn eval_mdes(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let mde_train = ws.load_dataset(cfg, "mde_train")?;
    let source = ws.load_dataset(cfg, "source_test")?;
    let target = ws.load_dataset(cfg, "target_test")?;
    let learned = ws.load_learned()?;
    let family = pipeline::family(cfg, &learned)?;
    let s2s = ws.load_bank("s2s")?;
    let s2r = ws.load_bank("s2r")?;
    let train_raw = pipeline::raw_labels(&family, &learned, &mde_train, Some(&ws.label_cache()))?;
    let constants = eval::constant_predictors(&train_raw, &s2s);
    let mut raw = eval::eval_mde_accuracy("s2s", &s2s, &family, "source_test", &source, &constants)?;
    raw.extend(eval::eval_mde_accuracy("s2s", &s2s, &family, "target_test", &target, &constants)?);
    raw.extend(eval::eval_mde_accuracy("s2r", &s2r, &family, "target_test", &target, &constants)?);
    let heldout = source.head(cfg.eval.calibration_samples);
    let cal = eval::calibration("s2s", &s2s, &family, &heldout)?;
    Ok(vec![
        write_csv(&ws.results("mde_accuracy_raw.csv"), &raw)?,
        write_csv(&ws.results("mde_accuracy.csv"), &eval::summarize_mde_accuracy(&raw))?,
        write_csv(&ws.results("calibration.csv"), &cal)?,
    ])
}

/// Every configured baseline on source-environment and target-environment tasks.
pub fn run_baselines(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let learned = ws.load_learned()?;
    let family = pipeline::family(cfg, &learned)?;
    let s2s = ws.load_bank("s2s")?;
    let s2r = ws.load_bank("s2r")?;
    let mut outcomes = Vec::new();
    for env in [EnvTag::Source, EnvTag::Target] {
        let tasks = tasks_for(cfg, env).with_context(|| format!("{env} tasks"))?;
        outcomes.extend(eval::run_baselines(cfg, &family, &s2s, &s2r, env, &tasks)?);
    }
    write_outcomes(ws, "baselines", &outcomes)
}

pub fn efficiency_curve(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let train = ws.load_dataset(cfg, "target_train")?;
    let test = ws.load_dataset(cfg, "target_test")?;
    let learned = ws.load_learned()?;
    let family = pipeline::family(cfg, &learned)?;
    let s2s = ws.load_bank("s2s")?;
    let raw = eval::sample_efficiency_curve(cfg, &s2s, &family, &train, &test)?;
    Ok(vec![
        write_csv(&ws.results("efficiency_raw.csv"), &raw)?,
        write_csv(&ws.results("efficiency.csv"), &eval::summarize_efficiency(&raw))?,
    ])
}

pub fn report(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    report::emit_report(cfg, ws)
}

/// `gen-data` through `report` in dependency order.
pub fn run_all(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let steps: [(&str, fn(&ExperimentConfig, &Workspace) -> anyhow::Result<Vec<PathBuf>>); 9] = [
        ("gen-data", gen_data),
        ("train-learned", train_learned),
        ("train-mde-s2s", train_mde_s2s),
        ("finetune-mde", finetune_mde),
        ("eval-models", eval_models),
        ("eval-mdes", eval_mdes),
        ("run-baselines", run_baselines),
        ("efficiency-curve", efficiency_curve),
        ("report", report),
    ];
    for (name, step) in steps {
        let files = step(cfg, ws).with_context(|| format!("step {name}"))?;
        crate::workspace::write_manifest(ws, cfg, name, &files)?;
        out.extend(files);
    }
    Ok(out)
}
