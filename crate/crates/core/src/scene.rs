//! Procedural plate scenes, goal construction and datasets.
//!
//! A scene is a plate (a disc with a raised rim) carrying a few rigid
//! box-shaped obstacles, plus one object to place: a smoothed union of
//! overlapping ellipses with a single palette material.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    Action, GridSpec, Heightmap, Material, MaterialMask, ObjectMaterial, SceneState,
};
use crate::io;
use crate::models::{EnvTag, Environment};
use crate::util::{derive_seed, Fnv};

pub const DATASET_MAGIC: &[u8; 4] = b"MDED";

/// Inclusive `[min, max]` range.
pub type Range = [f32; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleDims {
    pub length: Range,
    pub width: Range,
    pub height: Range,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub rng_seed: u64,
    pub plate_radius: f32,
    pub plate_height: f32,
    pub rim_width: f32,
    pub rim_height: f32,
    pub n_obstacles_range: [usize; 2],
    pub obstacle_dims: ObstacleDims,
    /// cm²
    pub object_area_range: Range,
    pub thickness_range: Range,
    pub material_palette: Vec<Material>,
    pub plate_material: Material,
    pub obstacle_material: Material,
    /// Goals show a freshly generated object rather than the one being placed.
    pub cross_object_goals: bool,
    /// Ground-truth placements keep the object centre within this fraction
    /// of the plate radius.
    pub goal_radius_fraction: f32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            rng_seed: 0,
            plate_radius: 13.0,
            plate_height: 0.4,
            rim_width: 1.5,
            rim_height: 0.8,
            n_obstacles_range: [1, 5],
            obstacle_dims: ObstacleDims {
                length: [3.0, 7.0],
                width: [0.8, 1.4],
                height: [0.7, 1.3],
            },
            object_area_range: [30.0, 70.0],
            thickness_range: [1.0, 2.5],
            material_palette: vec![
                // rare: soft and draping
                Material {
                    density: 1.05,
                    youngs_modulus: 15.0,
                    poisson_ratio: 0.45,
                },
                Material {
                    density: 1.05,
                    youngs_modulus: 60.0,
                    poisson_ratio: 0.45,
                },
                // well done: effectively rigid
                Material {
                    density: 1.0,
                    youngs_modulus: 3000.0,
                    poisson_ratio: 0.35,
                },
            ],
            plate_material: Material {
                density: 2.4,
                youngs_modulus: 7.0e7,
                poisson_ratio: 0.22,
            },
            obstacle_material: Material {
                density: 1.1,
                youngs_modulus: 5.0e4,
                poisson_ratio: 0.3,
            },
            cross_object_goals: false,
            goal_radius_fraction: 0.6,
        }
    }
}

fn check_range(name: &str, r: Range, min_allowed: f32) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= min_allowed) {
        return Err(Error::ConfigInvalid(format!("{name} range {r:?} is invalid")));
    }
    Ok(())
}

impl GenConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        grid.validate()?;
        let half = grid.extent_x().min(grid.extent_y()) / 2.0;
        if !(self.plate_radius > 0.0 && self.plate_radius <= half) {
            return Err(Error::ConfigInvalid(format!(
                "plate radius {} must fit in the {half} cm half-extent",
                self.plate_radius
            )));
        }
        if !(self.rim_width >= 0.0 && self.rim_width < self.plate_radius) {
            return Err(Error::ConfigInvalid("rim width must be below the plate radius".into()));
        }
        if !(self.plate_height > 0.0 && self.rim_height >= 0.0) {
            return Err(Error::ConfigInvalid("plate heights must be positive".into()));
        }
        let [lo, hi] = self.n_obstacles_range;
        if lo > hi {
            return Err(Error::ConfigInvalid("n_obstacles_range min exceeds max".into()));
        }
        check_range("obstacle length", self.obstacle_dims.length, 0.0)?;
        check_range("obstacle width", self.obstacle_dims.width, 0.0)?;
        check_range("obstacle height", self.obstacle_dims.height, 0.0)?;
        check_range("object area", self.object_area_range, 0.0)?;
        check_range("thickness", self.thickness_range, 0.0)?;
        if self.object_area_range[0] <= 0.0 || self.thickness_range[0] <= 0.0 {
            return Err(Error::ConfigInvalid("object area and thickness must be positive".into()));
        }
        if self.material_palette.len() < 2 {
            return Err(Error::ConfigInvalid("palette needs at least two materials".into()));
        }
        for m in self
            .material_palette
            .iter()
            .chain([&self.plate_material, &self.obstacle_material])
        {
            m.validate()?;
        }
        let (emin, emax) = self
            .material_palette
            .iter()
            .fold((f32::INFINITY, 0.0f32), |(lo, hi), m| {
                (lo.min(m.youngs_modulus), hi.max(m.youngs_modulus))
            });
        if emax < 100.0 * emin {
            return Err(Error::ConfigInvalid(
                "palette must span at least 100x in Young's modulus".into(),
            ));
        }
        if !(self.goal_radius_fraction > 0.0 && self.goal_radius_fraction <= 1.0) {
            return Err(Error::ConfigInvalid("goal_radius_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn sample(rng: &mut impl Rng, r: Range) -> f32 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Generates one initial state. Pure in `(cfg, grid, rng state)`.
pub fn generate_scene(cfg: &GenConfig, grid: &GridSpec, rng: &mut impl Rng) -> Result<SceneState> {
    cfg.validate(grid)?;
    let (w, h) = (grid.width, grid.height);
    let c = grid.cell_size;
    let (cx, cy) = (grid.extent_x() / 2.0, grid.extent_y() / 2.0);
    let center = |x: usize, y: usize| ((x as f32 + 0.5) * c - cx, (y as f32 + 0.5) * c - cy);

    let mut heights = vec![0.0f32; w * h];
    let mut mask = MaterialMask::empty(*grid);
    let inner = cfg.plate_radius - cfg.rim_width;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = center(x, y);
            let r = (px * px + py * py).sqrt();
            if r <= cfg.plate_radius {
                heights[y * w + x] = if r > inner {
                    cfg.plate_height + cfg.rim_height
                } else {
                    cfg.plate_height
                };
                mask.set(x, y, &cfg.plate_material);
            }
        }
    }

    let [nlo, nhi] = cfg.n_obstacles_range;
    let n_obstacles = rng.gen_range(nlo..=nhi);
    for _ in 0..n_obstacles {
        let length = sample(rng, cfg.obstacle_dims.length);
        let width = sample(rng, cfg.obstacle_dims.width);
        let height = sample(rng, cfg.obstacle_dims.height);
        let (hx, hy) = if rng.gen_bool(0.5) {
            (length / 2.0, width / 2.0)
        } else {
            (width / 2.0, length / 2.0)
        };
        // keep the whole box inside the rim
        let reach = (inner - (hx * hx + hy * hy).sqrt()).max(0.0);
        let (ox, oy) = loop {
            let ox = rng.gen_range(-reach..=reach);
            let oy = rng.gen_range(-reach..=reach);
            if ox * ox + oy * oy <= reach * reach {
                break (ox, oy);
            }
        };
        for y in 0..h {
            for x in 0..w {
                let (px, py) = center(x, y);
                if (px - ox).abs() <= hx && (py - oy).abs() <= hy {
                    let top = cfg.plate_height + height;
                    let i = y * w + x;
                    if top > heights[i] {
                        heights[i] = top;
                        mask.set(x, y, &cfg.obstacle_material);
                    }
                }
            }
        }
    }

    let scene = Heightmap::new(*grid, heights)?;
    mask.validate_against(&scene)?;
    let (object, object_material) = generate_object(cfg, grid, rng)?;
    SceneState::new(scene, mask, object, object_material)
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f32,
    cy: f32,
    a: f32,
    b: f32,
    theta: f32,
}

impl Ellipse {
    fn contains(&self, x: f32, y: f32) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn rasterize(ellipses: &[Ellipse], scale: f32, grid: &GridSpec) -> Vec<bool> {
    let (w, h) = (grid.width, grid.height);
    let (cx, cy) = grid.center_cell();
    let mut inside = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let px = (x as f32 - cx as f32) * grid.cell_size / scale;
            let py = (y as f32 - cy as f32) * grid.cell_size / scale;
            inside[y * w + x] = ellipses.iter().any(|e| e.contains(px, py));
        }
    }
    inside
}

/// Largest 4-connected component of a cell set.
fn largest_component(inside: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; w * h];
    let mut best: (usize, usize) = (usize::MAX, 0);
    let mut next = 0;
    for start in 0..w * h {
        if !inside[start] || label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for (nx, ny) in crate::grid::neighbors4(i % w, i / w, w, h) {
                let j = ny * w + nx;
                if inside[j] && label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
        next += 1;
    }
    label.iter().map(|l| *l == best.0).collect()
}

fn generate_object(
    cfg: &GenConfig,
    grid: &GridSpec,
    rng: &mut impl Rng,
) -> Result<(Heightmap, ObjectMaterial)> {
    let (w, h) = (grid.width, grid.height);
    let target_area = sample(rng, cfg.object_area_range);
    let thickness = sample(rng, cfg.thickness_range);
    let material = *cfg
        .material_palette
        .choose(rng)
        .expect("validated nonempty palette");

    let mut ellipses = vec![Ellipse {
        cx: 0.0,
        cy: 0.0,
        a: 1.0,
        b: rng.gen_range(0.55..=0.9),
        theta: rng.gen_range(0.0..std::f32::consts::PI),
    }];
    for _ in 0..rng.gen_range(1..=3) {
        let ang = rng.gen_range(0.0..std::f32::consts::TAU);
        let dist = rng.gen_range(0.35..=0.75);
        ellipses.push(Ellipse {
            cx: dist * ang.cos(),
            cy: dist * ang.sin(),
            a: rng.gen_range(0.35..=0.7),
            b: rng.gen_range(0.25..=0.5),
            theta: rng.gen_range(0.0..std::f32::consts::PI),
        });
    }

    let cell_area = grid.cell_size * grid.cell_size;
    let mut scale = (target_area / (std::f32::consts::PI * ellipses[0].b)).sqrt();
    let mut inside = rasterize(&ellipses, scale, grid);
    let count = inside.iter().filter(|v| **v).count().max(1);
    scale *= (target_area / (count as f32 * cell_area)).sqrt();
    inside = rasterize(&ellipses, scale, grid);
    if !inside.iter().any(|v| *v) {
        let (cx, cy) = grid.center_cell();
        inside[cy * w + cx] = true;
    }
    let inside = largest_component(&inside, w, h);

    // two passes of a 3x3 mean taper the rim; interior keeps full thickness
    let mut smooth: Vec<f32> = inside.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    for _ in 0..2 {
        let src = smooth.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        acc += src[sy * w + sx];
                    }
                }
                smooth[y * w + x] = acc / 9.0;
            }
        }
    }
    let mut thick = vec![0.0f32; w * h];
    for i in 0..w * h {
        if inside[i] {
            thick[i] = thickness * (0.4 + 0.6 * smooth[i]);
        }
    }

    // centre the footprint's bounding box on the reference cell
    let raw = Heightmap::new(*grid, thick)?;
    let (x0, y0, x1, y1) = raw.footprint_bounds().ok_or(Error::NoLegalAction)?;
    let (cx, cy) = grid.center_cell();
    let dx = cx as i64 - ((x0 + x1) / 2) as i64;
    let dy = cy as i64 - ((y0 + y1) / 2) as i64;
    let mut centred = vec![0.0f32; w * h];
    for (i, v) in raw.values().iter().enumerate() {
        if *v > 0.0 {
            let nx = (i % w) as i64 + dx;
            let ny = (i / w) as i64 + dy;
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                return Err(Error::ConfigInvalid("object does not fit on the grid".into()));
            }
            centred[ny as usize * w + nx as usize] = *v;
        }
    }
    let object = Heightmap::new(*grid, centred)?;
    let mass = material.density as f64 * object.volume();
    Ok((
        object,
        ObjectMaterial {
            mass: mass as f32,
            youngs_modulus: material.youngs_modulus,
            poisson_ratio: material.poisson_ratio,
        },
    ))
}

/// Uniformly random legal action.
pub fn random_action(s0: &SceneState, rng: &mut impl Rng) -> Result<Action> {
    let b = s0.action_bounds()?;
    Ok(b.from_unit(rng.gen::<f32>(), rng.gen::<f32>()))
}

/// A placement problem: initial state, goal heightmap and the action that
/// produced the goal.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub initial: SceneState,
    pub goal: Heightmap,
    pub ground_truth_action: Action,
    pub env_tag: EnvTag,
}

/// Samples a legal ground-truth placement over the plate and executes it.
pub fn make_task(
    cfg: &GenConfig,
    grid: &GridSpec,
    env: &dyn Environment,
    seed: u64,
) -> Result<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = generate_scene(cfg, grid, &mut rng)?;
    let bounds = initial.action_bounds()?;
    let radius = cfg.goal_radius_fraction * cfg.plate_radius;
    let mut action = None;
    for _ in 0..1000 {
        let a = bounds.from_unit(rng.gen::<f32>(), rng.gen::<f32>());
        if a.x * a.x + a.y * a.y <= radius * radius {
            action = Some(a);
            break;
        }
    }
    let ground_truth_action = match action {
        Some(a) => a,
        None if bounds.contains(&Action::new(0.0, 0.0)) => Action::new(0.0, 0.0),
        None => return Err(Error::NoLegalAction),
    };
    let goal_state = if cfg.cross_object_goals {
        let mut other = initial.clone();
        loop {
            let (object, material) = generate_object(cfg, grid, &mut rng)?;
            if object.footprint() != initial.object.footprint() {
                other.object = object;
                other.object_material = material;
                break;
            }
        }
        other
    } else {
        initial.clone()
    };
    let goal = env.execute(&goal_state, &ground_truth_action)?;
    Ok(Task {
        initial,
        goal,
        ground_truth_action,
        env_tag: env.tag(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub state: SceneState,
    pub action: Action,
    pub outcome: Heightmap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub split: Split,
    pub env_tag: EnvTag,
    pub seed: u64,
}

/// JSON sidecar written next to every dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub env_tag: EnvTag,
    pub split: Split,
    pub count: usize,
    pub grid: GridSpec,
    pub config: GenConfig,
    pub content_hash: String,
}

/// Builds `n` records of (scene, random legal action, outcome in `env`).
/// Record `i` depends only on `(cfg, seed, i)`.
pub fn build_dataset(
    cfg: &GenConfig,
    grid: &GridSpec,
    env: &dyn Environment,
    n: usize,
    split: Split,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::ConfigInvalid("dataset size must be >= 1".into()));
    }
    cfg.validate(grid)?;
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let state = generate_scene(cfg, grid, &mut rng)?;
            let action = random_action(&state, &mut rng)?;
            let outcome = env.execute(&state, &action)?;
            Ok(Record {
                state,
                action,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        records,
        split,
        env_tag: env.tag(),
        seed,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn grid(&self) -> Option<GridSpec> {
        self.records.first().map(|r| r.state.spec())
    }

    /// First `n` records as a new dataset.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            records: self.records[..n.min(self.records.len())].to_vec(),
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            records: Vec::new(),
            split: self.split,
            env_tag: self.env_tag,
            seed: self.seed,
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        io::write_u32(w, self.records.len() as u32)?;
        for r in &self.records {
            io::write_heightmap(w, &r.state.scene)?;
            io::write_heightmap(w, &r.state.object)?;
            io::write_mask(w, &r.state.scene_mask)?;
            let m = r.state.object_material;
            io::write_f32s(w, &[m.mass, m.youngs_modulus, m.poisson_ratio])?;
            io::write_f32s(w, &[r.action.x, r.action.y])?;
            io::write_heightmap(w, &r.outcome)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R, split: Split, env_tag: EnvTag, seed: u64) -> Result<Dataset> {
        io::expect_magic(r, DATASET_MAGIC)?;
        let n = io::read_u32(r)? as usize;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let scene = io::read_heightmap(r)?;
            let object = io::read_heightmap(r)?;
            let mask = io::read_mask(r)?;
            let m = io::read_f32s(r, 3)?;
            let a = io::read_f32s(r, 2)?;
            let outcome = io::read_heightmap(r)?;
            let state = SceneState::new(
                scene,
                mask,
                object,
                ObjectMaterial {
                    mass: m[0],
                    youngs_modulus: m[1],
                    poisson_ratio: m[2],
                },
            )?;
            records.push(Record {
                state,
                action: Action::new(a[0], a[1]),
                outcome,
            });
        }
        let ds = Dataset {
            records,
            split,
            env_tag,
            seed,
        };
        if let Some(g) = ds.grid() {
            if ds.records.iter().any(|r| r.state.spec() != g || r.outcome.spec() != g) {
                return Err(Error::Format("dataset records disagree on grid dims".into()));
            }
        }
        Ok(ds)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    /// Stable hex digest of the binary encoding.
    pub fn content_hash(&self) -> String {
        let mut h = Fnv::new();
        h.write(&self.to_bytes());
        format!("{:016x}", h.finish())
    }

    pub fn manifest(&self, grid: &GridSpec, config: &GenConfig) -> DatasetManifest {
        DatasetManifest {
            seed: self.seed,
            env_tag: self.env_tag,
            split: self.split,
            count: self.records.len(),
            grid: *grid,
            config: config.clone(),
            content_hash: self.content_hash(),
        }
    }

    /// Writes `<path>` and the `<path>.json` manifest.
    pub fn save(&self, path: &Path, grid: &GridSpec, config: &GenConfig) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        let manifest = serde_json::to_string_pretty(&self.manifest(grid, config))?;
        std::fs::write(manifest_path(path), manifest + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Dataset, DatasetManifest)> {
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(manifest_path(path))?)?;
        let mut f = BufReader::new(File::open(path)?);
        let ds = Dataset::read(&mut f, manifest.split, manifest.env_tag, manifest.seed)?;
        if ds.len() != manifest.count {
            return Err(Error::Format(format!(
                "manifest lists {} records, file holds {}",
                manifest.count,
                ds.len()
            )));
        }
        Ok((ds, manifest))
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::deviation;
    use crate::models::{ReferenceSimulator, SimParams};

    fn grid() -> GridSpec {
        GridSpec::new(32, 32, 1.0).unwrap()
    }

    fn sim() -> ReferenceSimulator {
        ReferenceSimulator::new(SimParams::default()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::default();
        let a = generate_scene(&cfg, &grid(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_scene(&cfg, &grid(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&cfg, &grid(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_obstacles_leaves_only_the_plate() {
        let cfg = GenConfig {
            n_obstacles_range: [0, 0],
            ..GenConfig::default()
        };
        let s = generate_scene(&cfg, &grid(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let allowed = [0.0, cfg.plate_height, cfg.plate_height + cfg.rim_height];
        assert!(s.scene.values().iter().all(|v| allowed.contains(v)));
        assert!(s.scene_mask.youngs_modulus.iter().all(|e| *e == 0.0
            || *e == cfg.plate_material.youngs_modulus));
    }

    #[test]
    fn mask_is_consistent_with_heights() {
        let cfg = GenConfig::default();
        for seed in 0..20 {
            let s = generate_scene(&cfg, &grid(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (i, h) in s.scene.values().iter().enumerate() {
                assert_eq!(*h > 0.0, s.scene_mask.youngs_modulus[i] > 0.0);
            }
            assert!(s.object.footprint_is_connected());
            let (x0, y0, x1, y1) = s.object.footprint_bounds().unwrap();
            assert_eq!(((x0 + x1) / 2, (y0 + y1) / 2), grid().center_cell());
            let area = s.object.footprint().len() as f32;
            assert!(area > 0.5 * cfg.object_area_range[0] && area < 1.5 * cfg.object_area_range[1]);
        }
    }

    #[test]
    fn config_validation() {
        let g = grid();
        let mut cfg = GenConfig::default();
        cfg.material_palette.truncate(2);
        assert!(cfg.validate(&g).is_err(), "15 vs 60 kPa spans less than 100x");
        let cfg = GenConfig {
            n_obstacles_range: [3, 1],
            ..GenConfig::default()
        };
        assert!(matches!(cfg.validate(&g), Err(Error::ConfigInvalid(_))));
        let cfg = GenConfig {
            plate_radius: 40.0,
            ..GenConfig::default()
        };
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn same_object_task_reaches_its_goal() {
        let cfg = GenConfig::default();
        let env = sim();
        let t = make_task(&cfg, &grid(), &env, 17).unwrap();
        let again = env.execute(&t.initial, &t.ground_truth_action).unwrap();
        assert_eq!(deviation(&again, &t.goal).unwrap(), 0.0);
        assert_eq!(make_task(&cfg, &grid(), &env, 17).unwrap(), t);
        assert!(t.initial.action_bounds().unwrap().contains(&t.ground_truth_action));
    }

    #[test]
    fn cross_object_goal_uses_another_footprint() {
        let cfg = GenConfig {
            cross_object_goals: true,
            ..GenConfig::default()
        };
        let env = sim();
        for seed in 0..5 {
            let t = make_task(&cfg, &grid(), &env, seed).unwrap();
            let placed = crate::grid::shift_object(&t.initial.object, &t.ground_truth_action)
                .unwrap();
            let same = env.execute(&t.initial, &t.ground_truth_action).unwrap();
            assert!(deviation(&same, &t.goal).unwrap() > 0.0);
            assert!(placed.footprint().len() > 0);
        }
    }

    #[test]
    fn dataset_sizes_and_reproducibility() {
        let cfg = GenConfig::default();
        let env = sim();
        let one = build_dataset(&cfg, &grid(), &env, 1, Split::Train, 5).unwrap();
        assert_eq!(one.len(), 1);
        let r = &one.records[0];
        assert_eq!(env.execute(&r.state, &r.action).unwrap(), r.outcome);
        assert!(build_dataset(&cfg, &grid(), &env, 0, Split::Train, 5).is_err());

        let a = build_dataset(&cfg, &grid(), &env, 20, Split::Train, 5).unwrap();
        let b = build_dataset(&cfg, &grid(), &env, 20, Split::Train, 6).unwrap();
        for ra in &a.records {
            assert!(b.records.iter().all(|rb| rb.action != ra.action));
            assert!(ra.state.action_bounds().unwrap().contains(&ra.action));
        }
        assert_eq!(a.records[0], one.records[0]);
    }

    #[test]
    fn dataset_file_round_trip() {
        let cfg = GenConfig::default();
        let ds = build_dataset(&cfg, &grid(), &sim(), 3, Split::Test, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.mded");
        ds.save(&path, &grid(), &cfg).unwrap();
        let (back, manifest) = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(manifest.count, 3);
        assert_eq!(manifest.split, Split::Test);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"MDED");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
    }
}
