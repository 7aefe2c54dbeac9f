//! Network input encoding shared by the learned model and the deviation
//! estimators.
//!
//! Scene input: height plus the three mask planes. Object input: the object
//! thickness shifted to the queried placement, plus its material on the
//! shifted footprint. Action input: the placement scaled by the half extent.

use crate::error::Result;
use crate::grid::{shift_object, Action, SceneState};
use crate::neural::Tensor;

pub const SCENE_CHANNELS: usize = 4;
pub const OBJECT_CHANNELS: usize = 4;
pub const ACTION_FEATURES: usize = 2;

const LOG_E_SCALE: f32 = 8.0;
const MASS_SCALE: f32 = 100.0;

fn log_modulus(e: f32) -> f32 {
    if e > 0.0 {
        (1.0 + e).log10() / LOG_E_SCALE
    } else {
        0.0
    }
}

/// Appends the `[4, H, W]` scene planes to `out`.
pub fn push_scene(s0: &SceneState, out: &mut Vec<f32>) {
    let mask = &s0.scene_mask;
    out.extend_from_slice(s0.scene.values());
    out.extend_from_slice(&mask.mass_density);
    out.extend(mask.youngs_modulus.iter().map(|e| log_modulus(*e)));
    out.extend(mask.poisson_ratio.iter().map(|nu| 2.0 * nu));
}

/// Appends the `[4, H, W]` object planes at placement `a` to `out`.
pub fn push_object(s0: &SceneState, a: &Action, out: &mut Vec<f32>) -> Result<()> {
    let shifted = shift_object(&s0.object, a)?;
    let m = &s0.object_material;
    let values = shifted.values();
    out.extend_from_slice(values);
    let on = |v: f32| move |t: &f32| if *t > 0.0 { v } else { 0.0 };
    out.extend(values.iter().map(on(m.mass / MASS_SCALE)));
    out.extend(values.iter().map(on(log_modulus(m.youngs_modulus))));
    out.extend(values.iter().map(on(2.0 * m.poisson_ratio)));
    Ok(())
}

pub fn action_features(s0: &SceneState, a: &Action) -> [f32; ACTION_FEATURES] {
    let spec = s0.spec();
    [2.0 * a.x / spec.extent_x(), 2.0 * a.y / spec.extent_y()]
}

/// Batched `[scene, object, action]` network inputs.
pub fn encode_batch<'a>(
    samples: impl IntoIterator<Item = (&'a SceneState, &'a Action)>,
) -> Result<Vec<Tensor<f32>>> {
    let mut scene = Vec::new();
    let mut object = Vec::new();
    let mut action = Vec::new();
    let mut n = 0;
    let mut dims = (0, 0);
    for (s0, a) in samples {
        dims = s0.scene.dims();
        push_scene(s0, &mut scene);
        push_object(s0, a, &mut object)?;
        action.extend_from_slice(&action_features(s0, a));
        n += 1;
    }
    let (w, h) = dims;
    Ok(vec![
        Tensor::new(vec![n, SCENE_CHANNELS, h, w], scene)?,
        Tensor::new(vec![n, OBJECT_CHANNELS, h, w], object)?,
        Tensor::new(vec![n, ACTION_FEATURES], action)?,
    ])
}
