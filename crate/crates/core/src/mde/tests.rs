use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::{Heightmap, Material, MaterialMask, ObjectMaterial};
use crate::models::{Heuristic, ReferenceSimulator, SimParams, TargetEnvParams, TargetEnvironment};
use crate::scene::{build_dataset, GenConfig, Split};
use crate::util::mean;

const PLATE: Material = Material {
    density: 2.4,
    youngs_modulus: 7.0e7,
    poisson_ratio: 0.22,
};
const FRY: Material = Material {
    density: 1.1,
    youngs_modulus: 5.0e4,
    poisson_ratio: 0.3,
};

/// 16x16 plate at 0.4 cm, optional 1 cm fry column at x = 8, and a soft
/// 3x3 object centred on the grid.
fn plate_scene(with_fry: bool) -> SceneState {
    let spec = GridSpec::new(16, 16, 1.0).unwrap();
    let mut mask = MaterialMask::empty(spec);
    let scene = Heightmap::from_fn(spec, |x, _| if with_fry && x == 8 { 1.4 } else { 0.4 }).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            mask.set(x, y, if with_fry && x == 8 { &FRY } else { &PLATE });
        }
    }
    let (cx, cy) = spec.center_cell();
    let object = Heightmap::from_fn(spec, |x, y| {
        if x.abs_diff(cx) <= 1 && y.abs_diff(cy) <= 1 {
            1.5
        } else {
            0.0
        }
    })
    .unwrap();
    SceneState::new(
        scene,
        mask,
        object,
        ObjectMaterial {
            mass: 14.0,
            youngs_modulus: 3000.0,
            poisson_ratio: 0.35,
        },
    )
    .unwrap()
}

fn grid16() -> GridSpec {
    GridSpec::new(16, 16, 2.0).unwrap()
}

fn source(n: usize, seed: u64) -> Dataset {
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    build_dataset(&GenConfig::default(), &grid16(), &sim, n, Split::Train, seed).unwrap()
}

fn pairs(d: &Dataset) -> Vec<(&SceneState, &Action)> {
    d.records.iter().map(|r| (&r.state, &r.action)).collect()
}

fn quick(iterations: usize, loss_seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        seed: loss_seed,
        ..default_s2s_config()
    }
}

#[test]
fn untrained_estimator_outputs_zero() {
    let data = source(4, 1);
    let mde = MdeNet::new(&grid16(), 5).unwrap();
    for (s0, a) in pairs(&data) {
        assert_eq!(mde_predict(&mde, s0, a).unwrap(), 0.0);
    }
}

#[test]
fn selection_rule_examples() {
    assert_eq!(applicable_from_estimates(&[0.1, 0.5], 0.4), vec![0, 2]);
    assert_eq!(applicable_from_estimates(&[0.4, 0.4], 0.4), vec![2]);
    assert_eq!(applicable_from_estimates(&[0.0, 0.0], 0.4), vec![0, 1, 2]);
    assert_eq!(select_from_estimates(&[0.0, 0.0], 0.4), 0);
    assert_eq!(select_from_estimates(&[0.9, 0.9], 0.4), 2);
    assert_eq!(select_from_estimates(&[0.5, 0.1], 0.4), 1);
}

proptest! {
    #[test]
    fn selection_is_minimum_of_applicable(est in prop::collection::vec(0.0f64..1.0, 0..5), d_max in 0.01f64..1.0) {
        let app = applicable_from_estimates(&est, d_max);
        let sel = select_from_estimates(&est, d_max);
        prop_assert_eq!(Some(&sel), app.iter().min());
        prop_assert_eq!(*app.last().unwrap(), est.len());
        for i in 0..est.len() {
            prop_assert_eq!(app.contains(&i), est[i] < d_max);
        }
    }
}

#[test]
fn heuristic_labels_vanish_on_flat_plate_only() {
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    let flat = plate_scene(false);
    let fry = plate_scene(true);
    let centre = Action::new(0.0, 0.0);
    let away = Action::new(-4.0, 0.0);
    let d = raw_deviations(
        &Heuristic,
        &sim,
        &[(&flat, &centre), (&flat, &away), (&fry, &centre), (&fry, &away)],
    )
    .unwrap();
    assert_eq!(d[0], 0.0);
    assert_eq!(d[1], 0.0);
    // object straddles the fry: lifted by 1 cm on 6 of 9 cells, and the
    // heuristic's 1 cm bulge differs from the lifted top by 0 on the fry cells
    assert!(d[2] > 0.0);
    assert!((d[2] - 6.0 / 256.0).abs() < 1e-6, "{}", d[2]);
    assert_eq!(d[3], 0.0);
}

#[test]
fn self_comparison_learns_zero() {
    let data = source(MIN_S2S_SAMPLES, 2);
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    let dev = DeviationConfig::default();
    let (mde, _) = train_s2s(&sim, &sim, &pairs(&data), &dev, &quick(50, 0)).unwrap();
    let est = mde.predict_batch(&pairs(&data)).unwrap();
    assert!(mean(&est) < 0.02);
}

#[test]
fn s2s_training_beats_constant_baseline() {
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    let train = source(400, 3);
    let test = source(150, 4);
    let raw_train = raw_deviations(&Heuristic, &sim, &pairs(&train)).unwrap();
    let dev = DeviationConfig::new(fit_d_norm(&raw_train), 0.4).unwrap();
    let (mde, losses) = train_s2s_from_raw(&pairs(&train), &raw_train, &dev, &quick(600, 1)).unwrap();
    let labels = normalize_all(&raw_deviations(&Heuristic, &sim, &pairs(&test)).unwrap(), &dev);
    let err = mean(&l1_errors(&mde, &pairs(&test), &labels).unwrap());
    let train_mean = mean(&normalize_all(&raw_train, &dev));
    let baseline = mean(&labels.iter().map(|d| (d - train_mean).abs()).collect::<Vec<_>>());
    let untrained = mean(&labels);
    assert!(err < baseline, "mde {err} vs constant {baseline}");
    assert!(err < untrained);
    assert!(mean(&losses[losses.len() - 50..]) < losses[0]);
}

#[test]
fn preconditions_are_enforced() {
    let data = source(20, 5);
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    let dev = DeviationConfig::default();
    assert!(train_s2s(&Heuristic, &sim, &pairs(&data), &dev, &quick(1, 0)).is_err());
    let mde = MdeNet::new(&grid16(), 0).unwrap();
    // source data is not target data
    assert!(finetune_s2r(&mde, &Heuristic, &data, &dev, &default_finetune_config()).is_err());
    let tuned = MdeNet {
        provenance: Provenance::S2rFinetuned,
        ..mde
    };
    let target = TargetEnvironment::new(TargetEnvParams::default()).unwrap();
    let tdata = build_dataset(&GenConfig::default(), &grid16(), &target, 3, Split::Train, 6).unwrap();
    assert!(finetune_s2r(&tuned, &Heuristic, &tdata, &dev, &default_finetune_config()).is_err());
}

#[test]
fn finetuning_touches_only_the_head() {
    let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
    let train = source(MIN_S2S_SAMPLES, 7);
    let raw = raw_deviations(&Heuristic, &sim, &pairs(&train)).unwrap();
    let dev = DeviationConfig::new(fit_d_norm(&raw), 0.4).unwrap();
    let (s2s, _) = train_s2s_from_raw(&pairs(&train), &raw, &dev, &quick(100, 2)).unwrap();

    let target = TargetEnvironment::new(TargetEnvParams::default()).unwrap();
    let tdata = build_dataset(&GenConfig::default(), &grid16(), &target, 40, Split::Train, 8).unwrap();
    let cfg = TrainConfig {
        iterations: 100,
        ..default_finetune_config()
    };
    let (tuned, losses) = finetune_s2r(&s2s, &Heuristic, &tdata, &dev, &cfg).unwrap();
    assert_eq!(losses.len(), 100);
    assert_eq!(tuned.provenance, Provenance::S2rFinetuned);
    let last = s2s.network().last_param_node().unwrap();
    for (i, (a, b)) in s2s.network().params().iter().zip(tuned.network().params()).enumerate() {
        if i == last {
            assert_ne!(a, b);
        } else {
            assert_eq!(a, b, "node {i} moved");
        }
    }
    let before = s2s.predict_batch(&pairs(&tdata)).unwrap();
    let after = tuned.predict_batch(&pairs(&tdata)).unwrap();
    assert_ne!(before, after);

    let empty = Dataset {
        records: vec![],
        ..tdata
    };
    let (same, losses) = finetune_s2r(&s2s, &Heuristic, &empty, &dev, &cfg).unwrap();
    assert!(losses.is_empty());
    assert_eq!(same.network(), s2s.network());
}

#[test]
fn estimates_stay_in_unit_interval() {
    // an estimator with a large random head can leave [0, 1] before clipping
    let mut mde = MdeNet::new(&grid16(), 9).unwrap();
    let last = mde.net.last_param_node().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for v in mde.net.params_mut()[last].iter_mut() {
        *v = rng.gen_range(-50.0..50.0);
    }
    let data = source(30, 11);
    let est = mde.predict_batch(&pairs(&data)).unwrap();
    assert!(est.iter().all(|m| (0.0..=1.0).contains(m)));
    assert!(est.iter().any(|m| *m == 0.0 || *m == 1.0));
}

#[test]
fn bank_round_trip_and_selection() {
    let a = MdeNet::new(&grid16(), 1).unwrap();
    let b = MdeNet {
        provenance: Provenance::S2rFinetuned,
        ..MdeNet::new(&grid16(), 2).unwrap()
    };
    let bank = MdeBank::new(vec![a, b], DeviationConfig::new(0.05, 0.4).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path()).unwrap();
    let back = MdeBank::load(dir.path()).unwrap();
    assert_eq!(back, bank);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join(BANK_MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["mdes"][1]["provenance"], "s2r-finetuned");
    assert_eq!(manifest["d_norm"], 0.05);

    // untrained estimators accept everything; the cheapest model wins
    let data = source(3, 12);
    for (s0, act) in pairs(&data) {
        assert_eq!(applicable_models(&bank, s0, act).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_model(&bank, s0, act).unwrap(), 0);
    }
}

#[test]
fn label_cache_round_trips_bits() {
    let dir = tempfile::tempdir().unwrap();
    let cache = LabelCache::new(dir.path());
    let vals = vec![0.1, 1.0 / 3.0, 0.0, 1e-300];
    let mut calls = 0;
    let got = cache
        .get_or_compute("abc", "learned/v1", || {
            calls += 1;
            Ok(vals.clone())
        })
        .unwrap();
    assert_eq!(got, vals);
    let again = cache
        .get_or_compute("abc", "learned/v1", || {
            calls += 1;
            Ok(vec![])
        })
        .unwrap();
    assert_eq!(again, vals);
    assert_eq!(calls, 1);
    assert!(cache.get("abc", "heuristic").is_none());
}

#[test]
fn d_norm_fallback() {
    assert_eq!(fit_d_norm(&[0.0, 0.0]), 1.0);
    let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
    assert!((fit_d_norm(&v) - 95.0).abs() < 1e-12);
}
