//! The predictive-model family: the additive heuristic, the reference
//! placement simulator, and the perturbed target environment that plays the
//! role of the real world.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{overlay_add, shift_object, Action, Heightmap, SceneState};
use crate::util::Fnv;

/// Scene cells at least this stiff (kPa) never compress under a placed object.
pub const RIGID_MODULUS: f32 = 1.0e4;

/// Width, in cells, of the footprint rim on which the draped surface relaxes.
pub const RELAX_BAND: usize = 2;

const RELAX_RATE: f64 = 0.2;

/// Anything that maps an initial state and a placement to a predicted outcome.
pub trait PredictiveModel: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, s0: &SceneState, a: &Action) -> Result<Heightmap>;
}

/// Which world a ground-truth outcome came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvTag {
    Source,
    Target,
}

impl std::fmt::Display for EnvTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvTag::Source => "source",
            EnvTag::Target => "target",
        })
    }
}

/// A world that placements can be executed in.
pub trait Environment: Send + Sync {
    fn tag(&self) -> EnvTag;
    fn execute(&self, s0: &SceneState, a: &Action) -> Result<Heightmap>;
}

/// Additive heuristic: the shifted object is stacked on top of the scene.
#[derive(Clone, Copy, Debug, Default)]
pub struct Heuristic;

pub fn heuristic_predict(s0: &SceneState, a: &Action) -> Result<Heightmap> {
    overlay_add(&s0.scene, &shift_object(&s0.object, a)?)
}

impl PredictiveModel for Heuristic {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn predict(&self, s0: &SceneState, a: &Action) -> Result<Heightmap> {
        heuristic_predict(s0, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Conformity scale in kPa.
    pub e_ref: f32,
    /// Substrate compression gain, kPa·cm²/g.
    pub alpha: f32,
    /// Largest fraction a deformable scene cell may compress by.
    pub rho_max: f32,
    pub relax_iters: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            e_ref: 100.0,
            alpha: 0.5,
            rho_max: 0.5,
            relax_iters: 4000,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_ref.is_finite() && self.e_ref > 0.0) {
            return Err(Error::ConfigInvalid(format!("e_ref {} must be > 0", self.e_ref)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::ConfigInvalid(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(0.0..=0.9).contains(&self.rho_max) {
            return Err(Error::ConfigInvalid(format!(
                "rho_max {} must lie in [0, 0.9]",
                self.rho_max
            )));
        }
        if self.relax_iters < 1 {
            return Err(Error::ConfigInvalid("relax_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// Conformity of an object with the given modulus: 1 drapes fully, 0 is rigid.
    pub fn conformity(&self, youngs_modulus: f32) -> f64 {
        (-(youngs_modulus as f64) / self.e_ref as f64).exp()
    }
}

/// Deterministic placement simulator.
///
/// The object compresses deformable scene cells under its footprint, comes to
/// rest on the highest compressed cell, and then drapes towards the surface
/// by its conformity. The drape is finally relaxed along the footprint rim.
pub fn simulate_place(s0: &SceneState, a: &Action, p: &SimParams) -> Result<Heightmap> {
    p.validate()?;
    let shifted = shift_object(&s0.object, a)?;
    let (w, h) = s0.scene.dims();
    let thick = shifted.values();
    let scene = s0.scene.values();
    let footprint: Vec<usize> = (0..w * h).filter(|&i| thick[i] > 0.0).collect();
    if footprint.is_empty() {
        return Ok(s0.scene.clone());
    }

    let area = footprint.len() as f64 * (s0.scene.cell_size() as f64).powi(2);
    let load = p.alpha as f64 * s0.object_material.mass as f64 / area;
    let mut support: Vec<f64> = scene.iter().map(|v| *v as f64).collect();
    for &i in &footprint {
        let e = s0.scene_mask.youngs_modulus[i];
        if e > 0.0 && e < RIGID_MODULUS {
            let rho = (load / e as f64).min(p.rho_max as f64);
            support[i] *= 1.0 - rho;
        }
    }

    let rest = footprint
        .iter()
        .map(|&i| support[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let kappa = p.conformity(s0.object_material.youngs_modulus);

    // Drape depth: how far the surface under each footprint cell sits below
    // the rigid resting height. Always <= 0.
    let mut drape = vec![0.0f64; w * h];
    let mut floor = vec![f64::NEG_INFINITY; w * h];
    for &i in &footprint {
        drape[i] = support[i] - rest;
        if kappa > 0.0 {
            // keeps top >= support after relaxation
            floor[i] = (drape[i] - thick[i] as f64) / kappa;
        }
    }
    let band = boundary_band(thick, w, h, RELAX_BAND);
    relax_drape(&mut drape, &floor, &band, w, p.relax_iters);

    let mut out: Vec<f32> = support.iter().map(|v| *v as f32).collect();
    for &i in &footprint {
        let top = rest + thick[i] as f64 + kappa * drape[i];
        out[i] = top.max(support[i]) as f32;
    }
    // cells outside the footprint are untouched
    for i in 0..w * h {
        if thick[i] <= 0.0 {
            out[i] = scene[i];
        }
    }
    Heightmap::new(s0.scene.spec(), out)
}

/// Footprint cells within `width` 4-steps of a non-footprint cell.
fn boundary_band(thick: &[f32], w: usize, h: usize, width: usize) -> Vec<bool> {
    let mut dist = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for (i, t) in thick.iter().enumerate() {
        if *t <= 0.0 {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    // grid border counts as outside
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        if thick[i] > 0.0 && (x == 0 || y == 0 || x == w - 1 || y == h - 1) {
            dist[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let d = dist[i];
        if d >= width {
            continue;
        }
        for (nx, ny) in crate::grid::neighbors4(i % w, i / w, w, h) {
            let j = ny * w + nx;
            if dist[j] == usize::MAX {
                dist[j] = d + 1;
                queue.push_back(j);
            }
        }
    }
    (0..w * h)
        .map(|i| thick[i] > 0.0 && dist[i] >= 1 && dist[i] <= width)
        .collect()
}

/// Conservative diffusion of the drape depth between 4-adjacent band cells.
/// Outflow from a cell is limited so it never drops below its floor.
fn relax_drape(drape: &mut [f64], floor: &[f64], band: &[bool], w: usize, iters: usize) {
    let edges: Vec<(usize, usize)> = (0..drape.len())
        .filter(|&i| band[i])
        .flat_map(|i| {
            let right = (i % w + 1 < w && band[i + 1]).then_some((i, i + 1));
            let down = (i + w < drape.len() && band[i + w]).then_some((i, i + w));
            right.into_iter().chain(down)
        })
        .collect();
    if edges.is_empty() {
        return;
    }
    let mut flux = vec![0.0f64; edges.len()];
    let mut outflow = vec![0.0f64; drape.len()];
    for _ in 0..iters {
        outflow.iter_mut().for_each(|v| *v = 0.0);
        for (k, &(a, b)) in edges.iter().enumerate() {
            let q = RELAX_RATE * (drape[a] - drape[b]);
            flux[k] = q;
            if q > 0.0 {
                outflow[a] += q;
            } else {
                outflow[b] -= q;
            }
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            let q = flux[k];
            let src = if q > 0.0 { a } else { b };
            let avail = drape[src] - floor[src];
            let scale = if outflow[src] > avail {
                (avail / outflow[src]).max(0.0)
            } else {
                1.0
            };
            flux[k] = q * scale;
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            drape[a] -= flux[k];
            drape[b] += flux[k];
        }
    }
}

/// The reference simulator as a predictive model and as the source world.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceSimulator {
    pub params: SimParams,
}

impl ReferenceSimulator {
    pub fn new(params: SimParams) -> Result<Self> {
        params.validate()?;
        Ok(ReferenceSimulator { params })
    }
}

impl PredictiveModel for ReferenceSimulator {
    fn name(&self) -> &str {
        "simulator"
    }

    fn predict(&self, s0: &SceneState, a: &Action) -> Result<Heightmap> {
        simulate_place(s0, a, &self.params)
    }
}

impl Environment for ReferenceSimulator {
    fn tag(&self) -> EnvTag {
        EnvTag::Source
    }

    fn execute(&self, s0: &SceneState, a: &Action) -> Result<Heightmap> {
        simulate_place(s0, a, &self.params)
    }
}

/// Physics perturbation and sensing noise of the target world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetEnvParams {
    pub base: SimParams,
    /// Relative change applied to `e_ref`.
    pub e_ref_scale: f32,
    /// Relative change applied to `alpha`.
    pub alpha_scale: f32,
    /// Marginal standard deviation of the additive height noise, cm.
    pub noise_sigma: f32,
    /// Correlation length of the noise, in cells.
    pub noise_corr: f32,
    pub rng_seed: u64,
}

impl Default for TargetEnvParams {
    fn default() -> Self {
        TargetEnvParams {
            base: SimParams::default(),
            e_ref_scale: 0.3,
            alpha_scale: -0.3,
            noise_sigma: 0.02,
            noise_corr: 3.0,
            rng_seed: 0x7a46_e7,
        }
    }
}

impl TargetEnvParams {
    pub fn validate(&self) -> Result<()> {
        self.effective().validate()?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::ConfigInvalid("noise_sigma must be >= 0".into()));
        }
        if !(self.noise_corr.is_finite() && self.noise_corr >= 0.0) {
            return Err(Error::ConfigInvalid("noise_corr must be >= 0".into()));
        }
        Ok(())
    }

    /// Simulator parameters of the target world.
    pub fn effective(&self) -> SimParams {
        SimParams {
            e_ref: self.base.e_ref * (1.0 + self.e_ref_scale),
            alpha: self.base.alpha * (1.0 + self.alpha_scale),
            ..self.base
        }
    }
}

/// Perturbed simulation plus spatially correlated noise, clamped at zero.
///
/// The noise stream is seeded from the parameters' seed, the action and the
/// scene contents, so a call is a pure function of its inputs.
pub fn target_execute(s0: &SceneState, a: &Action, tp: &TargetEnvParams) -> Result<Heightmap> {
    tp.validate()?;
    let clean = simulate_place(s0, a, &tp.effective())?;
    if tp.noise_sigma == 0.0 {
        return Ok(clean);
    }
    let mut hasher = Fnv::new();
    hasher.write_u64(tp.rng_seed);
    hasher.write_f32(a.x);
    hasher.write_f32(a.y);
    hasher.write_f32s(s0.scene.values());
    hasher.write_f32s(s0.object.values());
    let noise = correlated_noise(
        s0.scene.width(),
        s0.scene.height(),
        tp.noise_sigma as f64,
        tp.noise_corr as f64,
        hasher.finish(),
    );
    let values = clean
        .values()
        .iter()
        .zip(&noise)
        .map(|(v, n)| (*v as f64 + n).max(0.0) as f32)
        .collect();
    Heightmap::new(clean.spec(), values)
}

/// Gaussian-blurred white noise rescaled to marginal std `sigma`.
pub fn correlated_noise(w: usize, h: usize, sigma: f64, corr: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(&mut rng)).collect();
    if corr <= 0.0 {
        return white.into_iter().map(|v| v * sigma).collect();
    }
    let radius = (3.0 * corr).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * corr * corr)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();
    // separable blur; interior marginal variance is (sum k^2)^2
    let gain = kernel.iter().map(|k| k * k).sum::<f64>();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().enumerate() {
                    let off = t as i64 - radius;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + off).clamp(0, w as i64 - 1), y as i64)
                    } else {
                        (x as i64, (y as i64 + off).clamp(0, h as i64 - 1))
                    };
                    acc += k * src[sy as usize * w + sx as usize];
                }
                dst[y * w + x] = acc;
            }
        }
        dst
    };
    let field = blur(&blur(&white, true), false);
    let scale = sigma / gain;
    field.into_iter().map(|v| v * scale).collect()
}

/// The stand-in for the real world.
#[derive(Clone, Copy, Debug)]
pub struct TargetEnvironment {
    pub params: TargetEnvParams,
}

impl TargetEnvironment {
    pub fn new(params: TargetEnvParams) -> Result<Self> {
        params.validate()?;
        Ok(TargetEnvironment { params })
    }
}

impl Environment for TargetEnvironment {
    fn tag(&self) -> EnvTag {
        EnvTag::Target
    }

    fn execute(&self, s0: &SceneState, a: &Action) -> Result<Heightmap> {
        target_execute(s0, a, &self.params)
    }
}

/// Predictive models ordered from cheapest to most expensive. The last entry
/// is the reference that is always trusted.
#[derive(Clone)]
pub struct ModelFamily {
    models: Vec<Arc<dyn PredictiveModel>>,
}

impl ModelFamily {
    pub fn new(models: Vec<Arc<dyn PredictiveModel>>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::ConfigInvalid("model family must not be empty".into()));
        }
        Ok(ModelFamily { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Model by zero-based position.
    pub fn get(&self, index: usize) -> &Arc<dyn PredictiveModel> {
        &self.models[index]
    }

    pub fn reference(&self) -> &Arc<dyn PredictiveModel> {
        self.models.last().expect("nonempty family")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn PredictiveModel>> {
        self.models.iter()
    }

    /// Median wall time of each model over the given calls, in seconds.
    pub fn median_latencies(&self, calls: &[(SceneState, Action)]) -> Result<Vec<f64>> {
        self.models
            .iter()
            .map(|m| median_latency(m.as_ref(), calls))
            .collect()
    }
}

pub fn median_latency(model: &dyn PredictiveModel, calls: &[(SceneState, Action)]) -> Result<f64> {
    let mut times = Vec::with_capacity(calls.len());
    for (s0, a) in calls {
        let start = Instant::now();
        let out = model.predict(s0, a)?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    Ok(crate::util::median(&mut times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{deviation, GridSpec, Material, MaterialMask, ObjectMaterial};

    const PLATE: Material = Material {
        density: 2.4,
        youngs_modulus: 7.0e7,
        poisson_ratio: 0.22,
    };

    fn spec() -> GridSpec {
        GridSpec::new(16, 16, 1.0).unwrap()
    }

    /// Flat plate of height 0.5 covering the grid, optional rigid fries.
    fn scene_with(fries: &[(usize, usize, usize, usize, f32)]) -> (Heightmap, MaterialMask) {
        let s = spec();
        let mut heights = vec![0.5f32; s.cells()];
        for &(x0, y0, x1, y1, hgt) in fries {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    heights[y * s.width + x] = 0.5 + hgt;
                }
            }
        }
        let mut mask = MaterialMask::empty(s);
        for y in 0..s.height {
            for x in 0..s.width {
                mask.set(x, y, &PLATE);
            }
        }
        (Heightmap::new(s, heights).unwrap(), mask)
    }

    fn block_object(half_w: usize, half_h: usize, t: f32) -> Heightmap {
        let (cx, cy) = spec().center_cell();
        Heightmap::from_fn(spec(), |x, y| {
            if x + half_w >= cx && x <= cx + half_w && y + half_h >= cy && y <= cy + half_h {
                t
            } else {
                0.0
            }
        })
        .unwrap()
    }

    fn state(scene: (Heightmap, MaterialMask), object: Heightmap, youngs: f32) -> SceneState {
        let mass = object.volume() as f32;
        SceneState::new(
            scene.0,
            scene.1,
            object,
            ObjectMaterial {
                mass,
                youngs_modulus: youngs,
                poisson_ratio: 0.4,
            },
        )
        .unwrap()
    }

    #[test]
    fn heuristic_on_flat_plate_stacks_thickness() {
        let s0 = state(scene_with(&[]), block_object(2, 1, 1.5), 20.0);
        let out = heuristic_predict(&s0, &Action::new(1.0, -2.0)).unwrap();
        let shifted = shift_object(&s0.object, &Action::new(1.0, -2.0)).unwrap();
        for (i, t) in shifted.values().iter().enumerate() {
            let expect = if *t > 0.0 { 2.0 } else { 0.5 };
            assert_eq!(out.values()[i], expect);
        }
    }

    #[test]
    fn heuristic_stacks_on_fry_where_simulator_bridges() {
        // two fries under the object's left and right edges, a gap between
        let s0 = state(
            scene_with(&[(5, 6, 5, 10, 1.0), (11, 6, 11, 10, 1.0)]),
            block_object(3, 1, 1.0),
            1.0e6,
        );
        let a = Action::new(0.0, 0.0);
        let heur = heuristic_predict(&s0, &a).unwrap();
        // cellwise sum oracle
        for y in 7..=9 {
            for x in 5..=11 {
                assert_eq!(heur.get(x, y), s0.scene.get(x, y) + 1.0);
            }
        }
        assert_eq!(heur.get(5, 8), 2.5);
        assert_eq!(heur.get(8, 8), 1.5);

        // rigid object rests on the fries: air gap in between
        let p = SimParams::default();
        let sim = simulate_place(&s0, &a, &p).unwrap();
        let rest = 1.5f32;
        for x in 6..=10 {
            assert!((sim.get(x, 8) - (rest + 1.0)).abs() < 1e-5);
            assert!(sim.get(x, 8) > s0.scene.get(x, 8) + 1.0);
        }
    }

    #[test]
    fn rigid_on_flat_plate_matches_heuristic_exactly() {
        let s0 = state(scene_with(&[]), block_object(3, 2, 2.0), 5000.0);
        for a in [Action::new(0.0, 0.0), Action::new(3.0, -4.0), Action::new(-2.4, 1.6)] {
            let h = heuristic_predict(&s0, &a).unwrap();
            let s = simulate_place(&s0, &a, &SimParams::default()).unwrap();
            assert_eq!(h, s);
        }
    }

    #[test]
    fn draped_placement_conserves_volume() {
        // kappa = 1 in the limit e_obj -> 0; a tiny modulus gets within 1e-12
        let s0 = state(
            scene_with(&[(6, 5, 7, 11, 1.2), (9, 8, 10, 9, 0.7)]),
            block_object(3, 3, 1.5),
            1.0e-9,
        );
        let p = SimParams {
            relax_iters: 1,
            ..SimParams::default()
        };
        let a = Action::new(0.4, -0.2);
        let out = simulate_place(&s0, &a, &p).unwrap();
        let shifted = shift_object(&s0.object, &a).unwrap();
        let mut lifted = 0.0f64;
        let mut thick = 0.0f64;
        for (i, t) in shifted.values().iter().enumerate() {
            if *t > 0.0 {
                lifted += (out.values()[i] - s0.scene.values()[i]) as f64;
                thick += *t as f64;
            }
        }
        assert!(((lifted - thick) / thick).abs() < 1e-6, "{lifted} vs {thick}");
    }

    #[test]
    fn deformable_substrate_compresses() {
        let s = spec();
        let mut heights = vec![0.0f32; s.cells()];
        let mut mask = MaterialMask::empty(s);
        let soft = Material {
            density: 1.0,
            youngs_modulus: 10.0,
            poisson_ratio: 0.45,
        };
        for i in 0..s.cells() {
            heights[i] = 2.0;
            mask.set(i % s.width, i / s.width, &soft);
        }
        let object = block_object(1, 1, 1.0);
        let s0 = SceneState::new(
            Heightmap::new(s, heights).unwrap(),
            mask,
            object,
            ObjectMaterial {
                mass: 45.0,
                youngs_modulus: 5000.0,
                poisson_ratio: 0.3,
            },
        )
        .unwrap();
        let p = SimParams::default();
        // load = 0.5 * 45 / 9 = 2.5; rho = 2.5 / 10 = 0.25
        let out = simulate_place(&s0, &Action::new(0.0, 0.0), &p).unwrap();
        let (cx, cy) = s.center_cell();
        assert!((out.get(cx, cy) - (2.0 * 0.75 + 1.0)).abs() < 1e-5);
        assert_eq!(out.get(0, 0), 2.0);

        // rho is capped by rho_max
        let heavy = SceneState {
            object_material: ObjectMaterial {
                mass: 4500.0,
                ..s0.object_material
            },
            ..s0.clone()
        };
        let out = simulate_place(&heavy, &Action::new(0.0, 0.0), &p).unwrap();
        assert!((out.get(cx, cy) - (2.0 * 0.5 + 1.0)).abs() < 1e-5);
    }

    #[test]
    fn output_never_sinks_below_support() {
        let s0 = state(
            scene_with(&[(4, 4, 12, 5, 1.0), (7, 6, 8, 12, 2.0)]),
            block_object(4, 3, 0.3),
            1.0,
        );
        for relax in [1, 10, 500] {
            let p = SimParams {
                relax_iters: relax,
                ..SimParams::default()
            };
            let out = simulate_place(&s0, &Action::new(0.0, 1.0), &p).unwrap();
            for (o, s) in out.values().iter().zip(s0.scene.values()) {
                assert!(o >= s);
            }
        }
    }

    #[test]
    fn stiffer_objects_sit_higher() {
        let scene = scene_with(&[(6, 5, 7, 11, 1.2)]);
        let object = block_object(4, 4, 1.0);
        let soft = state(scene.clone(), object.clone(), 10.0);
        let stiff = state(scene, object, 400.0);
        let p = SimParams {
            relax_iters: 1,
            ..SimParams::default()
        };
        let a = Action::new(0.0, 0.0);
        let lo = simulate_place(&soft, &a, &p).unwrap();
        let hi = simulate_place(&stiff, &a, &p).unwrap();
        let thick = shift_object(&soft.object, &a).unwrap();
        let band = boundary_band(thick.values(), 16, 16, RELAX_BAND);
        for i in 0..256 {
            if !band[i] {
                assert!(hi.values()[i] >= lo.values()[i]);
            }
        }
        // support cell under the fry interior
        assert_eq!(hi.get(6, 8), lo.get(6, 8));
    }

    #[test]
    fn target_environment_cases() {
        let s0 = state(scene_with(&[(5, 6, 5, 10, 1.0)]), block_object(3, 1, 1.0), 30.0);
        let a = Action::new(1.0, 0.0);
        let p = SimParams::default();
        let exact = TargetEnvParams {
            base: p,
            e_ref_scale: 0.0,
            alpha_scale: 0.0,
            noise_sigma: 0.0,
            ..TargetEnvParams::default()
        };
        assert_eq!(
            target_execute(&s0, &a, &exact).unwrap(),
            simulate_place(&s0, &a, &p).unwrap()
        );
        let noisy = TargetEnvParams::default();
        let t1 = target_execute(&s0, &a, &noisy).unwrap();
        let t2 = target_execute(&s0, &a, &noisy).unwrap();
        assert_eq!(t1, t2);
        assert!(deviation(&t1, &simulate_place(&s0, &a, &p).unwrap()).unwrap() > 0.0);
        assert!(t1.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn correlated_noise_has_requested_spread() {
        let n = correlated_noise(64, 64, 0.1, 3.0, 9);
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        let var = n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.len() as f64;
        // one correlated field: loose bounds
        assert!(var.sqrt() > 0.05 && var.sqrt() < 0.2, "std {}", var.sqrt());
        // neighbours are strongly correlated
        let lag1: f64 = (0..64 * 63).map(|i| n[i] * n[i + 1]).sum::<f64>() / (64.0 * 63.0);
        assert!(lag1 / var > 0.8);
    }

    #[test]
    fn params_validate() {
        assert!(SimParams::default().validate().is_ok());
        let bad = SimParams {
            rho_max: 0.95,
            ..SimParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimParams {
            relax_iters: 0,
            ..SimParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = TargetEnvParams {
            noise_sigma: -1.0,
            ..TargetEnvParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
