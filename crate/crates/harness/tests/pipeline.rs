use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};

use mdeopt::learned::ResidualPredictor;
use mdeopt::models::{median_latency, Heuristic, PredictiveModel, ReferenceSimulator, SimParams};
use mdeopt::scene::{generate_scene, random_action, GenConfig};
use mdeopt::{Action, GridSpec, SceneState};
use mdeopt_harness::commands;
use mdeopt_harness::eval::{BaselineRun, BaselineSummary, EfficiencyPoint};
use mdeopt_harness::report::Summary;
use mdeopt_harness::workspace::{read_csv, write_csv, CommandManifest, Workspace};
use mdeopt_harness::ExperimentConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 3,
        grid: GridSpec::new(16, 16, 2.0).unwrap(),
        ..ExperimentConfig::default()
    };
    cfg.data.source_train = 100;
    cfg.data.source_test = 100;
    cfg.data.mde_train = 100;
    cfg.data.target_train = 20;
    cfg.data.target_test = 10;
    cfg.learned.iterations = 40;
    cfg.s2s.iterations = 40;
    cfg.finetune.iterations = 20;
    cfg.scratch.iterations = 20;
    cfg.optimizer.budget = 6;
    cfg.eval.tasks = 2;
    cfg.eval.seeds = 2;
    cfg.eval.efficiency_sizes = vec![5, 20];
    cfg.eval.calibration_samples = 50;
    cfg.eval.latency_calls = 3;
    cfg
}

/// Tests here run one at a time so the latency check is not skewed by the
/// other tests' training.
fn serial() -> MutexGuard<'static, ()> {
    static L: Mutex<()> = Mutex::new(());
    L.lock().unwrap_or_else(|e| e.into_inner())
}

/// One complete tiny experiment shared by the tests below.
fn run() -> &'static (tempfile::TempDir, ExperimentConfig) {
    static R: OnceLock<(tempfile::TempDir, ExperimentConfig)> = OnceLock::new();
    R.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        commands::run_all(&cfg, &Workspace::new(dir.path())).unwrap();
        (dir, cfg)
    })
}

fn sha(p: &Path) -> String {
    Sha256::digest(std::fs::read(p).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn manifests_list_existing_outputs() {
    let _serial = serial();
    let (dir, cfg) = run();
    for cmd in [
        "gen-data",
        "train-learned",
        "train-mde-s2s",
        "finetune-mde",
        "eval-models",
        "eval-mdes",
        "run-baselines",
        "efficiency-curve",
        "report",
    ] {
        let text = std::fs::read_to_string(dir.path().join("manifests").join(format!("{cmd}.json"))).unwrap();
        let m: CommandManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m.command, cmd);
        assert_eq!(m.config_hash, cfg.hash());
        assert_eq!(m.seed, cfg.seed);
        assert!(!m.outputs.is_empty(), "{cmd}");
        for o in &m.outputs {
            assert!(dir.path().join(o).exists(), "{cmd}: {o}");
        }
    }
}

#[test]
fn report_is_well_formed_and_matches_the_tables() {
    let _serial = serial();
    let (dir, cfg) = run();
    let report = dir.path().join("report");
    let mut svgs = 0;
    for e in std::fs::read_dir(&report).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "svg") {
            let text = std::fs::read_to_string(&p).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            svgs += 1;
        }
    }
    // model accuracy, MDE accuracy, errors, time, efficiency, usage x2
    assert_eq!(svgs, 7);

    let summary: Summary = serde_json::from_str(&std::fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.config_hash, cfg.hash());
    assert!(summary.files.contains_key("results/baselines.csv"));
    for (rel, digest) in &summary.files {
        assert_eq!(&sha(&dir.path().join(rel)), digest, "{rel}");
    }
    let baselines = summary.baselines.unwrap();
    assert_eq!(baselines.len(), 2 * cfg.baselines.len());
    let eff: Vec<EfficiencyPoint> = summary.efficiency.unwrap();
    assert_eq!(eff.len(), 2 * cfg.eval.efficiency_sizes.len());
}

#[test]
fn result_tables_round_trip() {
    let _serial = serial();
    let (dir, cfg) = run();
    let ws = Workspace::new(dir.path());
    let raw: Vec<BaselineRun> = read_csv(&ws.results("baselines_raw.csv")).unwrap();
    assert_eq!(raw.len(), 2 * cfg.baselines.len() * cfg.eval.tasks);
    for r in &raw {
        assert_eq!(r.calls_f1 + r.calls_f2 + r.calls_f3, cfg.optimizer.budget);
        let d = ((r.best_x - r.gt_x) as f64).hypot((r.best_y - r.gt_y) as f64);
        assert!((d - r.action_error).abs() < 1e-4);
    }
    let rows: Vec<BaselineSummary> = read_csv(&ws.results("baselines.csv")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let p = write_csv(&out.path().join("b.csv"), &rows).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(ws.results("baselines.csv")).unwrap());
}

#[test]
fn missing_checkpoints_name_the_producing_command() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let cfg = tiny();
    let err = commands::train_learned(&cfg, &ws).unwrap_err().to_string();
    assert!(err.contains("gen-data"), "{err}");
    commands::gen_data(&cfg, &ws).unwrap();
    let err = commands::train_mde_s2s(&cfg, &ws).unwrap_err().to_string();
    assert!(err.contains("train-learned"), "{err}");
    let err = commands::eval_models(&cfg, &ws).unwrap_err().to_string();
    assert!(err.contains("train-learned"), "{err}");

    // data from another seed is refused rather than silently reused
    let other = ExperimentConfig { seed: 99, ..cfg };
    let err = commands::train_learned(&other, &ws).unwrap_err().to_string();
    assert!(err.contains("gen-data"), "{err}");
}

#[test]
fn cli_rejects_unknown_keys_and_writes_manifests() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "sed": 2}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mdeopt"))
        .args(["--config", bad.to_str().unwrap(), "gen-data"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));

    let good = dir.path().join("tiny.json");
    std::fs::write(&good, serde_json::to_string(&tiny()).unwrap()).unwrap();
    let root = dir.path().join("exp");
    let out = Command::new(env!("CARGO_BIN_EXE_mdeopt"))
        .args(["--config", good.to_str().unwrap(), "--seed", "11", "--threads", "1", "--out"])
        .arg(&root)
        .arg("gen-data")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: CommandManifest =
        serde_json::from_str(&std::fs::read_to_string(root.join("manifests/gen-data.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 11);
    let written: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(root.join("config.json")).unwrap()).unwrap();
    assert_eq!(m.config_hash, written.hash());
    assert!(root.join("data/target_test.mded").exists());
}

#[test]
fn models_get_slower_with_fidelity() {
    let _serial = serial();
    let grid = GridSpec::new(32, 32, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let calls: Vec<(SceneState, Action)> = (0..20)
        .map(|_| {
            let s0 = generate_scene(&GenConfig::default(), &grid, &mut rng).unwrap();
            let a = random_action(&s0, &mut rng).unwrap();
            (s0, a)
        })
        .collect();
    let learned = ResidualPredictor::new(&grid, 0).unwrap();
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    let models: [&dyn PredictiveModel; 3] = [&Heuristic, &learned, &sim];
    let t: Vec<f64> = models.iter().map(|m| median_latency(*m, &calls).unwrap()).collect();
    assert!(t[0] < t[1] && t[1] < t[2], "median latencies {t:?}");
}
