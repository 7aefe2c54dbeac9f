//! GP-UCB search over planar placements, querying the model chosen by the
//! deviation estimators at every step.

mod gp;

pub use gp::{gp_posterior, ucb, GpHyper, GpState, Standardize};

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{deviation, Action, ActionBounds, Heightmap, SceneState};
use crate::mde::{select_from_estimates, MdeBank};
use crate::models::ModelFamily;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub budget: usize,
    pub beta: f64,
    pub n_uniform: usize,
    pub n_stratified: usize,
    pub gp: GpHyper,
    pub standardize: Standardize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            budget: 50,
            beta: 4.0,
            n_uniform: 128,
            n_stratified: 128,
            gp: GpHyper::default(),
            standardize: Standardize::Off,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        self.gp.validate()?;
        if self.budget == 0 {
            return Err(Error::ConfigInvalid("budget must be >= 1".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::ConfigInvalid(format!("beta {} must be >= 0", self.beta)));
        }
        if self.n_uniform + self.n_stratified == 0 {
            return Err(Error::NoLegalCandidates);
        }
        Ok(())
    }
}

/// Radical inverse of `i` in `base`.
fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `n_uniform` uniform draws followed by `n_stratified` points of a randomly
/// rotated Halton (2, 3) sequence, all mapped onto `bounds`.
pub fn candidate_actions(bounds: &ActionBounds, n_uniform: usize, n_stratified: usize, rng: &mut impl Rng) -> Vec<Action> {
    let mut out: Vec<Action> = (0..n_uniform)
        .map(|_| bounds.from_unit(rng.gen::<f32>(), rng.gen::<f32>()))
        .collect();
    let (su, sv) = (rng.gen::<f64>(), rng.gen::<f64>());
    for i in 1..=n_stratified as u64 {
        let u = (halton(i, 2) + su).fract();
        let v = (halton(i, 3) + sv).fract();
        out.push(bounds.from_unit(u as f32, v as f32));
    }
    out
}

/// Candidate maximizing the UCB; ties go to the lowest index.
pub fn propose_action(gp: &GpState, candidates: &[Action], beta: f64) -> Result<Action> {
    let mut best: Option<(f64, Action)> = None;
    for c in candidates {
        let v = ucb(gp, c, beta)?;
        if best.map_or(true, |(b, _)| v > b) {
            best = Some((v, *c));
        }
    }
    best.map(|(_, a)| a).ok_or(Error::NoLegalCandidates)
}

/// Observed `(action, reward)` pairs of a GP-UCB run against an arbitrary
/// reward function.
pub fn bo_loop(
    bounds: &ActionBounds,
    cfg: &OptConfig,
    mut reward: impl FnMut(usize, &Action) -> Result<f64>,
) -> Result<Vec<(Action, f64)>> {
    cfg.validate()?;
    let mut gp = GpState::new(cfg.gp, cfg.standardize)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.budget);
    for step in 0..cfg.budget {
        let cands = candidate_actions(bounds, cfg.n_uniform, cfg.n_stratified, &mut rng);
        let a = propose_action(&gp, &cands, cfg.beta)?;
        let r = reward(step, &a)?;
        gp.observe(&a, r)?;
        out.push((a, r));
    }
    Ok(out)
}

/// Index of the first maximum.
pub fn best_index(rewards: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rewards.into_iter().enumerate() {
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

/// How the model is chosen at each step.
#[derive(Clone, Copy)]
pub enum Selection<'a> {
    /// Cheapest model the estimators accept.
    Mde(&'a MdeBank),
    /// Always the given family position.
    Only(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: Action,
    /// Zero-based family position of the model that was queried.
    pub model_index: usize,
    /// Raw deviation (cm) between the prediction and the goal.
    pub deviation: f64,
    pub reward: f64,
    /// Estimator outputs in family order; empty without estimators.
    pub mde: Vec<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub steps: Vec<StepRecord>,
    pub best_action: Action,
    pub best_reward: f64,
    /// The best action's reward when re-evaluated with the reference model.
    pub best_reward_reference: f64,
    /// Scale dividing deviations in the reward.
    pub reward_scale: f64,
    pub total_ms: f64,
}

/// Per-task reward scale: twice the deviation between scene and goal, i.e.
/// roughly the deviation of a placement that misses the goal footprint.
pub fn reward_scale(s0: &SceneState, goal: &Heightmap) -> Result<f64> {
    let d = deviation(&s0.scene, goal)?;
    Ok(if d > 0.0 { 2.0 * d } else { 1.0 })
}

/// GP-UCB over `s0`'s legal actions toward `goal`. Each step proposes an
/// action, selects a model, predicts, and observes `-deviation / scale`.
/// The best observed action is re-evaluated with the family's reference.
pub fn optimize(
    s0: &SceneState,
    goal: &Heightmap,
    family: &ModelFamily,
    selection: Selection<'_>,
    cfg: &OptConfig,
) -> Result<OptTrace> {
    match selection {
        Selection::Mde(bank) if bank.family_len() != family.len() => {
            return Err(Error::ConfigInvalid(format!(
                "bank gates {} models, family has {}",
                bank.family_len(),
                family.len()
            )))
        }
        Selection::Only(i) if i >= family.len() => {
            return Err(Error::ConfigInvalid(format!("no model at position {i}")))
        }
        _ => {}
    }
    let bounds = s0.action_bounds()?;
    let scale = reward_scale(s0, goal)?;
    let start = Instant::now();
    let mut steps = Vec::with_capacity(cfg.budget);
    bo_loop(&bounds, cfg, |step, a| {
        let t = Instant::now();
        let (model_index, mde) = match selection {
            Selection::Mde(bank) => {
                let est = bank.estimates(s0, a)?;
                (select_from_estimates(&est, bank.deviation.d_max), est)
            }
            Selection::Only(i) => (i, Vec::new()),
        };
        let pred = family.get(model_index).predict(s0, a)?;
        let d = deviation(&pred, goal)?;
        let reward = -d / scale;
        steps.push(StepRecord {
            step,
            action: *a,
            model_index,
            deviation: d,
            reward,
            mde,
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        });
        Ok(reward)
    })?;
    let best = best_index(steps.iter().map(|s| s.reward)).ok_or(Error::NoLegalCandidates)?;
    let best_action = steps[best].action;
    let reference = family.reference().predict(s0, &best_action)?;
    let best_reward_reference = -deviation(&reference, goal)? / scale;
    Ok(OptTrace {
        best_action,
        best_reward: steps[best].reward,
        best_reward_reference,
        reward_scale: scale,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        steps,
    })
}

impl OptTrace {
    /// Calls per family position.
    pub fn call_counts(&self, n_models: usize) -> Vec<usize> {
        let mut c = vec![0; n_models];
        for s in &self.steps {
            c[s.model_index] += 1;
        }
        c
    }

    /// One CSV row per step: `step,x,y,model_index,reward,mde1,mde2,wall_ms`.
    /// Estimator columns are empty when no estimators were used.
    pub fn write_csv<W: Write>(&self, w: W, with_timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        let mut header = vec!["step", "x", "y", "model_index", "reward", "mde1", "mde2"];
        if with_timing {
            header.push("wall_ms");
        }
        out.write_record(&header).map_err(err)?;
        for s in &self.steps {
            let mde = |k: usize| s.mde.get(k).map(|v| v.to_string()).unwrap_or_default();
            let mut row = vec![
                s.step.to_string(),
                s.action.x.to_string(),
                s.action.y.to_string(),
                s.model_index.to_string(),
                s.reward.to_string(),
                mde(0),
                mde(1),
            ];
            if with_timing {
                row.push(format!("{:.3}", s.wall_ms));
            }
            out.write_record(&row).map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }
}
