use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{Gradients, Network};
use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean loss over every output element and its gradient w.r.t. the prediction.
pub fn loss_and_grad<T: Scalar>(loss: Loss, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut total = 0.0f64;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p.to_f64() - t.to_f64();
            match loss {
                Loss::Mse => {
                    total += d * d;
                    T::from_f64(2.0 * d / n)
                }
                Loss::L1 => {
                    total += d.abs();
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    T::from_f64(s / n)
                }
            }
        })
        .collect();
    Ok((total / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Adaptive-moment optimizer state, beta = (0.9, 0.999), eps = 1e-8.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(net: &Network<T>, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to the trainable layers.
    pub fn apply<T: Scalar>(&mut self, net: &mut Network<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for node in 0..grads.len() {
            if !net.is_trainable(node) {
                continue;
            }
            let (m, v) = (&mut self.m[node], &mut self.v[node]);
            let params = &mut net.params_mut()[node];
            for (k, (p, g)) in params.iter_mut().zip(grads[node].iter()).enumerate() {
                let g = g.to_f64();
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = self.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                if update != 0.0 {
                    *p = T::from_f64(p.to_f64() - update);
                }
            }
        }
    }
}

/// Single-writer owner of a network during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network<f32>,
    pub config: TrainConfig,
    adam: Adam,
    losses: Vec<f64>,
}

impl Trainer {
    pub fn new(net: Network<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&net, config.learning_rate);
        Ok(Trainer {
            net,
            config,
            adam,
            losses: Vec::new(),
        })
    }

    /// One optimizer update on a batch; returns the batch loss before the update.
    pub fn train_step(&mut self, inputs: &[Tensor<f32>], target: &Tensor<f32>) -> Result<f64> {
        let cache = self.net.forward_cached(inputs)?;
        let (loss, grad) = loss_and_grad(self.config.loss, cache.output(), target)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.losses.len(),
            });
        }
        let grads = self.net.backward(&cache, &grad)?;
        self.adam.apply(&mut self.net, &grads);
        self.losses.push(loss);
        Ok(loss)
    }

    /// Loss recorded at every step so far.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn into_parts(self) -> (Network<f32>, Vec<f64>) {
        (self.net, self.losses)
    }
}

/// Runs `cfg.iterations` updates over `n` samples visited in reshuffled
/// epochs; `batch` assembles inputs and targets for a list of sample indices.
/// With `n == 0` the network is returned untouched.
pub fn fit<F>(net: Network<f32>, cfg: &TrainConfig, n: usize, mut batch: F) -> Result<(Network<f32>, Vec<f64>)>
where
    F: FnMut(&[usize]) -> Result<(Vec<Tensor<f32>>, Tensor<f32>)>,
{
    cfg.validate()?;
    if n == 0 || cfg.iterations == 0 {
        return Ok((net, Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let size = cfg.batch_size.min(n);
    let mut trainer = Trainer::new(net, *cfg)?;
    let mut idx = Vec::with_capacity(size);
    for _ in 0..cfg.iterations {
        idx.clear();
        while idx.len() < size {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (inputs, target) = batch(&idx)?;
        trainer.train_step(&inputs, &target)?;
    }
    Ok(trainer.into_parts())
}
