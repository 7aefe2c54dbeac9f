//! Charts and a JSON summary built from the stored result tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::eval::{BaselineSummary, Calibration, EfficiencyPoint, MdeAccuracy, ModelAccuracy, RunTiming};
use crate::svg::{bar_chart, line_chart, stacked_bar_chart, Series};
use crate::workspace::{read_csv, Workspace};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub model_accuracy: Option<Vec<ModelAccuracy>>,
    pub mde_accuracy: Option<Vec<MdeAccuracy>>,
    pub calibration: Option<Vec<Calibration>>,
    pub baselines: Option<Vec<BaselineSummary>>,
    pub efficiency: Option<Vec<EfficiencyPoint>>,
    /// SHA-256 of every result table under `results/`.
    pub files: BTreeMap<String, String>,
}

fn load<T: serde::de::DeserializeOwned>(p: &Path) -> anyhow::Result<Option<Vec<T>>> {
    if p.exists() {
        read_csv(p).map(Some)
    } else {
        Ok(None)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            csv_files(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

/// Distinct values in first-seen order.
fn distinct<T: PartialEq + Clone>(it: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut v = Vec::new();
    for x in it {
        if !v.contains(&x) {
            v.push(x);
        }
    }
    v
}

pub fn emit_report(cfg: &ExperimentConfig, ws: &Workspace) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(ws.report(""))?;
    let mut written = Vec::new();
    let mut svg = |name: &str, body: String| -> anyhow::Result<()> {
        let p = ws.report(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };

    let model_accuracy: Option<Vec<ModelAccuracy>> = load(&ws.results("model_accuracy.csv"))?;
    if let Some(rows) = &model_accuracy {
        let datasets = distinct(rows.iter().map(|r| r.dataset.clone()));
        let models = distinct(rows.iter().map(|r| (r.model_index, r.model.clone())));
        let series: Vec<Series> = models
            .iter()
            .map(|(i, name)| {
                let pick = |d: &String| rows.iter().find(|r| &r.dataset == d && r.model_index == *i);
                Series::new(
                    format!("f{} {name}", i + 1),
                    datasets.iter().map(|d| pick(d).map_or(f64::NAN, |r| r.rmse_mean)).collect(),
                )
                .with_errors(datasets.iter().map(|d| pick(d).map_or(f64::NAN, |r| r.rmse_std)).collect())
            })
            .collect();
        svg("model_accuracy.svg", bar_chart("Predictive model accuracy", "heightmap RMSE (cm)", &datasets, &series))?;
    }

    let mde_accuracy: Option<Vec<MdeAccuracy>> = load(&ws.results("mde_accuracy.csv"))?;
    if let Some(rows) = &mde_accuracy {
        let cats = distinct(rows.iter().map(|r| format!("{} / {}", r.bank, r.dataset)));
        let models = distinct(rows.iter().map(|r| r.model_index));
        let series: Vec<Series> = models
            .iter()
            .map(|i| {
                let pick = |c: &String| rows.iter().find(|r| &format!("{} / {}", r.bank, r.dataset) == c && r.model_index == *i);
                Series::new(
                    format!("MDE of f{}", i + 1),
                    cats.iter().map(|c| pick(c).map_or(f64::NAN, |r| r.l1_mean)).collect(),
                )
                .with_errors(cats.iter().map(|c| pick(c).map_or(f64::NAN, |r| r.l1_std)).collect())
            })
            .collect();
        svg("mde_accuracy.svg", bar_chart("Deviation estimator error", "L1 of scaled deviation", &cats, &series))?;
    }

    let calibration: Option<Vec<Calibration>> = load(&ws.results("calibration.csv"))?;

    let baselines: Option<Vec<BaselineSummary>> = load(&ws.results("baselines.csv"))?;
    if let Some(rows) = &baselines {
        let names = distinct(rows.iter().map(|r| r.baseline.clone()));
        let envs = distinct(rows.iter().map(|r| r.env.clone()));
        let series: Vec<Series> = envs
            .iter()
            .map(|e| {
                let pick = |b: &String| rows.iter().find(|r| &r.env == e && &r.baseline == b);
                Series::new(
                    format!("{e} tasks"),
                    names.iter().map(|b| pick(b).map_or(f64::NAN, |r| r.error_mean)).collect(),
                )
                .with_errors(names.iter().map(|b| pick(b).map_or(f64::NAN, |r| r.error_std)).collect())
            })
            .collect();
        svg("baselines_error.svg", bar_chart("Action error by method", "distance to ground truth (cm)", &names, &series))?;
        for e in &envs {
            let sub: Vec<&BaselineSummary> = rows.iter().filter(|r| &r.env == e).collect();
            let cats: Vec<String> = sub.iter().map(|r| r.baseline.clone()).collect();
            let series = vec![
                Series::new("f1 heuristic", sub.iter().map(|r| r.mean_calls_f1).collect()),
                Series::new("f2 learned", sub.iter().map(|r| r.mean_calls_f2).collect()),
                Series::new("f3 simulator", sub.iter().map(|r| r.mean_calls_f3).collect()),
            ];
            svg(
                &format!("usage_{e}.svg"),
                stacked_bar_chart(&format!("Model calls per task ({e})"), "mean calls", &cats, &series),
            )?;
        }
    }

    if let Some(rows) = load::<RunTiming>(&ws.timing("baselines_timing.csv"))? {
        let names = distinct(rows.iter().map(|r| r.baseline.clone()));
        let envs = distinct(rows.iter().map(|r| r.env.clone()));
        let series: Vec<Series> = envs
            .iter()
            .map(|e| {
                let v = names
                    .iter()
                    .map(|b| {
                        let t: Vec<f64> = rows.iter().filter(|r| &r.env == e && &r.baseline == b).map(|r| r.wall_ms).collect();
                        mdeopt::util::mean(&t)
                    })
                    .collect();
                Series::new(format!("{e} tasks"), v)
            })
            .collect();
        svg("baselines_time.svg", bar_chart("Optimization wall time", "ms per task", &names, &series))?;
    }

    let efficiency: Option<Vec<EfficiencyPoint>> = load(&ws.results("efficiency.csv"))?;
    if let Some(rows) = &efficiency {
        let ns = distinct(rows.iter().map(|r| r.n));
        let xs: Vec<f64> = ns.iter().map(|n| *n as f64).collect();
        let mut series = Vec::new();
        for i in distinct(rows.iter().map(|r| r.model_index)) {
            let pick = |n: &usize| rows.iter().find(|r| r.model_index == i && r.n == *n);
            series.push(
                Series::new(
                    format!("f{} fine-tuned", i + 1),
                    ns.iter().map(|n| pick(n).map_or(f64::NAN, |r| r.finetuned_mean)).collect(),
                )
                .with_errors(ns.iter().map(|n| pick(n).map_or(f64::NAN, |r| r.finetuned_std)).collect()),
            );
            series.push(
                Series::new(
                    format!("f{} scratch", i + 1),
                    ns.iter().map(|n| pick(n).map_or(f64::NAN, |r| r.scratch_mean)).collect(),
                )
                .with_errors(ns.iter().map(|n| pick(n).map_or(f64::NAN, |r| r.scratch_std)).collect()),
            );
        }
        svg(
            "efficiency.svg",
            line_chart("Target-data efficiency", "target samples N", "target test L1", &xs, &series),
        )?;
    }

    let mut files = Vec::new();
    csv_files(&ws.root.join("results"), &mut files)?;
    files.sort();
    let files = files
        .iter()
        .map(|p| Ok((ws.relative(p), sha256_hex(&fs::read(p)?))))
        .collect::<anyhow::Result<BTreeMap<_, _>>>()?;
    let summary = Summary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        model_accuracy,
        mde_accuracy,
        calibration,
        baselines,
        efficiency,
        files,
    };
    let p = ws.report("summary.json");
    fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n")?;
    written.push(p);
    Ok(written)
}
