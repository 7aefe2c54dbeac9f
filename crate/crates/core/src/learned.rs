//! The learned predictive model: a residual encoder-decoder that predicts the
//! change of the scene heightmap caused by a placement.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{encode_batch, ACTION_FEATURES, OBJECT_CHANNELS, SCENE_CHANNELS};
use crate::grid::{Action, GridSpec, Heightmap, SceneState};
use crate::models::{EnvTag, PredictiveModel};
use crate::neural::{fit, load_network, save_network, Loss, Network, SpecBuilder, Tensor, TrainConfig};
use crate::scene::Dataset;

/// Fewest records `train_learned` accepts.
pub const MIN_TRAIN_RECORDS: usize = 100;

/// Every encoder halves the grid three times.
const DOWNSAMPLE: usize = 8;

pub fn default_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        iterations: 3000,
        loss: Loss::Mse,
        seed: 0,
    }
}

/// Residual encoder-decoder `f2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPredictor {
    net: Network<f32>,
}

fn check_grid(width: usize, height: usize) -> Result<()> {
    if width % DOWNSAMPLE != 0 || height % DOWNSAMPLE != 0 {
        return Err(Error::ShapeMismatch(format!(
            "grid {width}x{height} must be divisible by {DOWNSAMPLE} on both sides"
        )));
    }
    Ok(())
}

impl ResidualPredictor {
    /// Untrained model for `grid`; predicts the initial scene until trained.
    pub fn new(grid: &GridSpec, seed: u64) -> Result<Self> {
        grid.validate()?;
        let (w, h) = (grid.width, grid.height);
        check_grid(w, h)?;
        let (wb, hb) = (w / DOWNSAMPLE, h / DOWNSAMPLE);
        let mut b = SpecBuilder::new();
        let scene = b.input(&[SCENE_CHANNELS, h, w]);
        let object = b.input(&[OBJECT_CHANNELS, h, w]);
        let action = b.input(&[ACTION_FEATURES]);

        let encoder = |b: &mut SpecBuilder, x: usize, cin: usize| {
            let mut levels = Vec::new();
            let mut cur = x;
            let mut c = cin;
            for cout in [8, 16, 32] {
                let conv = b.conv(cur, c, cout, 3, 2, 1);
                cur = b.relu(conv);
                levels.push(cur);
                c = cout;
            }
            levels
        };
        let s = encoder(&mut b, scene, SCENE_CHANNELS);
        let o = encoder(&mut b, object, OBJECT_CHANNELS);

        let a1 = b.dense(action, ACTION_FEATURES, 32);
        let a1 = b.relu(a1);
        let a2 = b.dense(a1, 32, 8 * hb * wb);
        let a_map = b.reshape(a2, &[8, hb, wb]);

        let cat = b.concat(&[s[2], o[2], a_map]);
        let z = b.conv(cat, 72, 32, 3, 1, 1);
        let z = b.relu(z);
        let z = b.conv(z, 32, 32, 3, 1, 1);
        let z = b.relu(z);

        let d2 = b.tconv(z, 32, 16, 2, 2, 0);
        let d2 = b.relu(d2);
        let c2 = b.concat(&[d2, s[1], o[1]]);
        let d1 = b.tconv(c2, 48, 8, 2, 2, 0);
        let d1 = b.relu(d1);
        let c1 = b.concat(&[d1, s[0], o[0]]);
        let d0 = b.tconv(c1, 24, 8, 2, 2, 0);
        let d0 = b.relu(d0);
        let c0 = b.concat(&[d0, scene, object]);
        let out = b.conv(c0, 8 + SCENE_CHANNELS + OBJECT_CHANNELS, 1, 3, 1, 1);
        b.zero_init(out);
        let net = Network::new(b.build(out, seed)?)?;
        Ok(ResidualPredictor { net })
    }

    pub fn from_network(net: Network<f32>) -> Result<Self> {
        let shapes = net.input_shapes();
        let ok = shapes.len() == 3
            && shapes[0].len() == 3
            && shapes[0][0] == SCENE_CHANNELS
            && shapes[1] == [OBJECT_CHANNELS, shapes[0][1], shapes[0][2]]
            && shapes[2] == [ACTION_FEATURES]
            && net.output_shape() == [1, shapes[0][1], shapes[0][2]];
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "network with inputs {shapes:?} is not a residual predictor"
            )));
        }
        Ok(ResidualPredictor { net })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    /// Grid `(width, height)` the model was built for.
    pub fn dims(&self) -> (usize, usize) {
        let s = &self.net.input_shapes()[0];
        (s[2], s[1])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_network(path, &self.net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_network(load_network(path)?)
    }

    fn check_state(&self, s0: &SceneState) -> Result<()> {
        if s0.scene.dims() != self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "model grid {:?} vs scene grid {:?}",
                self.dims(),
                s0.scene.dims()
            )));
        }
        Ok(())
    }

    /// Predicted outcomes for several placements at once.
    pub fn predict_batch(&self, calls: &[(&SceneState, &Action)]) -> Result<Vec<Heightmap>> {
        for (s0, _) in calls {
            self.check_state(s0)?;
        }
        if calls.is_empty() {
            return Ok(Vec::new());
        }
        let residual = self.net.forward(&encode_batch(calls.iter().copied())?)?;
        calls
            .iter()
            .enumerate()
            .map(|(i, (s0, _))| {
                let values = s0
                    .scene
                    .values()
                    .iter()
                    .zip(residual.sample(i))
                    .map(|(z, r)| (z + r).max(0.0))
                    .collect();
                Heightmap::new(s0.spec(), values)
            })
            .collect()
    }
}

/// `I_0` plus the decoded residual, clamped at zero.
pub fn learned_predict(model: &ResidualPredictor, s0: &SceneState, a: &Action) -> Result<Heightmap> {
    Ok(model.predict_batch(&[(s0, a)])?.remove(0))
}

impl PredictiveModel for ResidualPredictor {
    fn name(&self) -> &str {
        "learned"
    }

    fn predict(&self, s0: &SceneState, a: &Action) -> Result<Heightmap> {
        learned_predict(self, s0, a)
    }
}

fn residual_targets(dataset: &Dataset, idx: &[usize]) -> Result<Tensor<f32>> {
    let mut out = Vec::new();
    let (w, h) = dataset.records[idx[0]].state.scene.dims();
    for &i in idx {
        let r = &dataset.records[i];
        out.extend(
            r.outcome
                .values()
                .iter()
                .zip(r.state.scene.values())
                .map(|(t, z)| t - z),
        );
    }
    Tensor::new(vec![idx.len(), 1, h, w], out)
}

/// Fits the residual `outcome - I_0` with the configured loss (MSE by
/// default). Returns the model and the per-step training loss.
pub fn train_learned(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ResidualPredictor, Vec<f64>)> {
    if dataset.env_tag != EnvTag::Source {
        return Err(Error::ConfigInvalid(
            "the learned model trains on source-environment data".into(),
        ));
    }
    if dataset.len() < MIN_TRAIN_RECORDS {
        return Err(Error::ConfigInvalid(format!(
            "learned model needs at least {MIN_TRAIN_RECORDS} records, got {}",
            dataset.len()
        )));
    }
    let grid = dataset.records[0].state.spec();
    let model = ResidualPredictor::new(&grid, cfg.seed)?;
    let (net, losses) = fit(model.net, cfg, dataset.len(), |idx| {
        let inputs = encode_batch(idx.iter().map(|&i| {
            let r = &dataset.records[i];
            (&r.state, &r.action)
        }))?;
        Ok((inputs, residual_targets(dataset, idx)?))
    })?;
    Ok((ResidualPredictor { net }, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{heuristic_predict, ReferenceSimulator, SimParams};
    use crate::scene::{build_dataset, GenConfig, Split};

    fn small_grid() -> GridSpec {
        GridSpec::new(16, 16, 2.0).unwrap()
    }

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let sim = ReferenceSimulator::new(SimParams::default()).unwrap();
        build_dataset(&GenConfig::default(), &small_grid(), &sim, n, Split::Train, seed).unwrap()
    }

    fn quick_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            ..default_train_config()
        }
    }

    #[test]
    fn untrained_model_predicts_the_scene() {
        let data = small_dataset(5, 1);
        let model = ResidualPredictor::new(&small_grid(), 3).unwrap();
        for r in &data.records {
            let out = learned_predict(&model, &r.state, &r.action).unwrap();
            assert_eq!(out, r.state.scene);
        }
    }

    #[test]
    fn rejects_grids_not_divisible_by_eight() {
        let grid = GridSpec::new(20, 16, 1.0).unwrap();
        assert!(matches!(ResidualPredictor::new(&grid, 0), Err(Error::ShapeMismatch(_))));
        let model = ResidualPredictor::new(&small_grid(), 0).unwrap();
        let other = small_dataset(1, 2);
        let mut state = other.records[0].state.clone();
        state.scene = Heightmap::zeros(GridSpec::new(24, 24, 1.0).unwrap()).unwrap();
        assert!(learned_predict(&model, &state, &other.records[0].action).is_err());
    }

    #[test]
    fn training_preconditions() {
        let data = small_dataset(20, 4);
        assert!(train_learned(&data, &quick_config(1)).is_err());
        let mut target = small_dataset(MIN_TRAIN_RECORDS, 4);
        target.env_tag = EnvTag::Target;
        assert!(train_learned(&target, &quick_config(1)).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = small_dataset(MIN_TRAIN_RECORDS, 5);
        let cfg = quick_config(400);
        let (model, losses) = train_learned(&data, &cfg).unwrap();
        let (again, _) = train_learned(&data, &cfg).unwrap();
        assert_eq!(model, again);
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail * 10.0 < head, "loss {head} -> {tail}");
        for r in data.records.iter().take(10) {
            let out = learned_predict(&model, &r.state, &r.action).unwrap();
            assert_eq!(out.dims(), r.state.scene.dims());
            assert!(out.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn memorizes_a_duplicated_record() {
        // choose a record where the heuristic is wrong, so the residual is nontrivial
        let pool = small_dataset(40, 6);
        let rec = pool
            .records
            .iter()
            .max_by(|a, b| {
                let da = crate::grid::rmse(&heuristic_predict(&a.state, &a.action).unwrap(), &a.outcome).unwrap();
                let db = crate::grid::rmse(&heuristic_predict(&b.state, &b.action).unwrap(), &b.outcome).unwrap();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
            .clone();
        let data = Dataset {
            records: vec![rec.clone(); MIN_TRAIN_RECORDS],
            ..pool
        };
        let (model, losses) = train_learned(&data, &quick_config(300)).unwrap();
        assert!(*losses.last().unwrap() < 1e-3 * losses[0].max(1e-3), "{:?}", losses.last());
        let out = learned_predict(&model, &rec.state, &rec.action).unwrap();
        let before = crate::grid::rmse(&rec.state.scene, &rec.outcome).unwrap();
        assert!(crate::grid::rmse(&out, &rec.outcome).unwrap() < 0.1 * before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ResidualPredictor::new(&small_grid(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f2.mden");
        model.save(&path).unwrap();
        assert_eq!(ResidualPredictor::load(&path).unwrap(), model);
    }
}
