//! Heightmaps, material masks and the deviation metrics every other module
//! is built on.
//!
//! Grids are row-major: cell `(x, y)` lives at `values[y * width + x]`, `x`
//! runs along a row and `y` down the rows. Heights are centimetres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible grid side, in cells.
pub const MIN_GRID_SIDE: usize = 8;

/// Height of the empty table surface. Cells above it carry material.
pub const BACKGROUND_HEIGHT: f32 = 0.0;

/// Grid dimensions shared by every map in a scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Edge length of one cell in cm.
    pub cell_size: f32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width: 64,
            height: 64,
            cell_size: 0.5,
        }
    }
}

impl GridSpec {
    pub fn new(width: usize, height: usize, cell_size: f32) -> Result<Self> {
        let spec = GridSpec {
            width,
            height,
            cell_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_GRID_SIDE || self.height < MIN_GRID_SIDE {
            return Err(Error::InvalidGrid(format!(
                "grid {}x{} is smaller than {MIN_GRID_SIDE}x{MIN_GRID_SIDE}",
                self.width, self.height
            )));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell size {} must be positive",
                self.cell_size
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// Workspace extent along x in cm.
    pub fn extent_x(&self) -> f32 {
        self.width as f32 * self.cell_size
    }

    /// Workspace extent along y in cm.
    pub fn extent_y(&self) -> f32 {
        self.height as f32 * self.cell_size
    }

    /// Index of the reference cell objects are authored around.
    pub fn center_cell(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }
}

/// Dense grid of surface heights in cm.
#[derive(Clone, Debug, PartialEq)]
pub struct Heightmap {
    spec: GridSpec,
    values: Vec<f32>,
}

impl Heightmap {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.cells() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                spec.cells(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidGrid(format!(
                "height {bad} is not a finite nonnegative value"
            )));
        }
        Ok(Heightmap { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Result<Self> {
        Self::filled(spec, 0.0)
    }

    pub fn filled(spec: GridSpec, value: f32) -> Result<Self> {
        Self::new(spec, vec![value; spec.cells()])
    }

    /// Builds a map from a generator evaluated at every `(x, y)` cell.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(spec.cells());
        for y in 0..spec.height {
            for x in 0..spec.width {
                values.push(f(x, y));
            }
        }
        Self::new(spec, values)
    }

    /// Construction path for values already known to satisfy the invariants.
    pub(crate) fn from_trusted(spec: GridSpec, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), spec.cells());
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Heightmap { spec, values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn cell_size(&self) -> f32 {
        self.spec.cell_size
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.spec.width, self.spec.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.spec.width + x]
    }

    /// Cells with strictly positive height, as `(x, y)` pairs in row-major order.
    pub fn footprint(&self) -> Vec<(usize, usize)> {
        let w = self.spec.width;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    }

    /// Inclusive bounding box `(min_x, min_y, max_x, max_y)` of the footprint.
    pub fn footprint_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let w = self.spec.width;
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for (i, v) in self.values.iter().enumerate() {
            if *v > 0.0 {
                let (x, y) = (i % w, i / w);
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        bounds
    }

    /// Whether the footprint forms a single 4-connected region.
    pub fn footprint_is_connected(&self) -> bool {
        let cells = self.footprint();
        let Some(&(sx, sy)) = cells.first() else {
            return false;
        };
        let (w, h) = self.dims();
        let mut seen = vec![false; w * h];
        let mut stack = vec![(sx, sy)];
        seen[sy * w + sx] = true;
        let mut reached = 0usize;
        while let Some((x, y)) = stack.pop() {
            reached += 1;
            for (nx, ny) in neighbors4(x, y, w, h) {
                let i = ny * w + nx;
                if !seen[i] && self.values[i] > 0.0 {
                    seen[i] = true;
                    stack.push((nx, ny));
                }
            }
        }
        reached == cells.len()
    }

    /// Sum of all heights times the cell area, in cm³.
    pub fn volume(&self) -> f64 {
        let area = (self.spec.cell_size as f64).powi(2);
        self.values.iter().map(|v| *v as f64).sum::<f64>() * area
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

pub(crate) fn neighbors4(
    x: usize,
    y: usize,
    w: usize,
    h: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(usize::MAX, usize::MAX); 4];
    let mut n = 0;
    if x > 0 {
        out[n] = (x - 1, y);
        n += 1;
    }
    if x + 1 < w {
        out[n] = (x + 1, y);
        n += 1;
    }
    if y > 0 {
        out[n] = (x, y - 1);
        n += 1;
    }
    if y + 1 < h {
        out[n] = (x, y + 1);
        n += 1;
    }
    out.into_iter().take(n)
}

/// Per-cell material properties of the topmost surface.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMask {
    spec: GridSpec,
    /// g/cm³
    pub mass_density: Vec<f32>,
    /// kPa
    pub youngs_modulus: Vec<f32>,
    pub poisson_ratio: Vec<f32>,
}

/// Bulk material of a single body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// g/cm³
    pub density: f32,
    /// kPa
    pub youngs_modulus: f32,
    pub poisson_ratio: f32,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let ok = self.density.is_finite()
            && self.density > 0.0
            && self.youngs_modulus.is_finite()
            && self.youngs_modulus > 0.0
            && (0.0..0.5).contains(&self.poisson_ratio);
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid material {self:?}")))
        }
    }
}

impl MaterialMask {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.cells();
        MaterialMask {
            spec,
            mass_density: vec![0.0; n],
            youngs_modulus: vec![0.0; n],
            poisson_ratio: vec![0.0; n],
        }
    }

    pub fn from_planes(
        spec: GridSpec,
        mass_density: Vec<f32>,
        youngs_modulus: Vec<f32>,
        poisson_ratio: Vec<f32>,
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.cells();
        if mass_density.len() != n || youngs_modulus.len() != n || poisson_ratio.len() != n {
            return Err(Error::InvalidGrid("mask plane length mismatch".into()));
        }
        let all_finite = mass_density
            .iter()
            .chain(&youngs_modulus)
            .chain(&poisson_ratio)
            .all(|v| v.is_finite() && *v >= 0.0);
        if !all_finite {
            return Err(Error::InvalidGrid("mask values must be finite and nonnegative".into()));
        }
        Ok(MaterialMask {
            spec,
            mass_density,
            youngs_modulus,
            poisson_ratio,
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.spec.width, self.spec.height)
    }

    pub fn set(&mut self, x: usize, y: usize, material: &Material) {
        let i = y * self.spec.width + x;
        self.mass_density[i] = material.density;
        self.youngs_modulus[i] = material.youngs_modulus;
        self.poisson_ratio[i] = material.poisson_ratio;
    }

    pub fn clear(&mut self, x: usize, y: usize) {
        let i = y * self.spec.width + x;
        self.mass_density[i] = 0.0;
        self.youngs_modulus[i] = 0.0;
        self.poisson_ratio[i] = 0.0;
    }

    /// Checks the mask against the heightmap it describes: occupied cells
    /// (above the background) carry a positive modulus and a Poisson ratio in
    /// `[0, 0.5)`, empty cells carry zeros.
    pub fn validate_against(&self, map: &Heightmap) -> Result<()> {
        check_dims(map.dims(), self.dims())?;
        for (i, h) in map.values().iter().enumerate() {
            let occupied = *h > BACKGROUND_HEIGHT;
            let e = self.youngs_modulus[i];
            let nu = self.poisson_ratio[i];
            let ok = if occupied {
                e > 0.0 && (0.0..0.5).contains(&nu)
            } else {
                e == 0.0 && nu == 0.0
            };
            if !ok {
                return Err(Error::InvalidGrid(format!(
                    "mask inconsistent at cell {} (height {h}, E {e}, nu {nu})",
                    i
                )));
            }
        }
        Ok(())
    }
}

/// Material of the object being placed; `mass` is the total in grams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMaterial {
    pub mass: f32,
    pub youngs_modulus: f32,
    pub poisson_ratio: f32,
}

/// Initial state: the scene, its material mask, and the object to place.
///
/// The object is a thickness map on the scene grid with its footprint
/// centred on [`GridSpec::center_cell`]; actions displace it from there.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub scene: Heightmap,
    pub scene_mask: MaterialMask,
    pub object: Heightmap,
    pub object_material: ObjectMaterial,
}

impl SceneState {
    pub fn new(
        scene: Heightmap,
        scene_mask: MaterialMask,
        object: Heightmap,
        object_material: ObjectMaterial,
    ) -> Result<Self> {
        check_dims(scene.dims(), scene_mask.dims())?;
        check_dims(scene.dims(), object.dims())?;
        if !object.footprint_is_connected() {
            return Err(Error::InvalidGrid(
                "object footprint must be a nonempty 4-connected region".into(),
            ));
        }
        if !(object_material.mass > 0.0
            && object_material.youngs_modulus > 0.0
            && (0.0..0.5).contains(&object_material.poisson_ratio))
        {
            return Err(Error::InvalidGrid(format!(
                "invalid object material {object_material:?}"
            )));
        }
        Ok(SceneState {
            scene,
            scene_mask,
            object,
            object_material,
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.scene.spec()
    }

    /// Box of legal actions for this object.
    pub fn action_bounds(&self) -> Result<ActionBounds> {
        ActionBounds::for_object(&self.object)
    }
}

/// Planar placement, in cm, of the object's reference cell relative to the
/// grid centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub x: f32,
    pub y: f32,
}

impl Action {
    pub fn new(x: f32, y: f32) -> Self {
        Action { x, y }
    }

    /// Whole-cell displacement under nearest-cell rounding.
    pub fn cell_shift(&self, cell_size: f32) -> (i64, i64) {
        let dx = (self.x as f64 / cell_size as f64).round() as i64;
        let dy = (self.y as f64 / cell_size as f64).round() as i64;
        (dx, dy)
    }

    pub fn distance(&self, other: &Action) -> f32 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Axis-aligned box of actions whose rounded shift keeps the footprint on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionBounds {
    pub x_min: f32,
    pub x_max: f32,
    pub y_min: f32,
    pub y_max: f32,
}

impl ActionBounds {
    pub fn for_object(object: &Heightmap) -> Result<Self> {
        let (x0, y0, x1, y1) = object.footprint_bounds().ok_or(Error::NoLegalAction)?;
        let (w, h) = object.dims();
        let c = object.cell_size();
        let dx_min = -(x0 as i64);
        let dx_max = (w - 1 - x1) as i64;
        let dy_min = -(y0 as i64);
        let dy_max = (h - 1 - y1) as i64;
        Ok(ActionBounds {
            x_min: dx_min as f32 * c,
            x_max: dx_max as f32 * c,
            y_min: dy_min as f32 * c,
            y_max: dy_max as f32 * c,
        })
    }

    pub fn contains(&self, a: &Action) -> bool {
        (self.x_min..=self.x_max).contains(&a.x) && (self.y_min..=self.y_max).contains(&a.y)
    }

    pub fn clamp(&self, a: Action) -> Action {
        Action::new(
            a.x.clamp(self.x_min, self.x_max),
            a.y.clamp(self.y_min, self.y_max),
        )
    }

    /// Maps a point of the unit square onto the box.
    pub fn from_unit(&self, u: f32, v: f32) -> Action {
        Action::new(
            self.x_min + u * (self.x_max - self.x_min),
            self.y_min + v * (self.y_max - self.y_min),
        )
    }
}

/// Normalisation constant and acceptance threshold for deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationConfig {
    /// cm
    pub d_norm: f64,
    pub d_max: f64,
}

impl Default for DeviationConfig {
    fn default() -> Self {
        DeviationConfig {
            d_norm: 1.0,
            d_max: 0.4,
        }
    }
}

impl DeviationConfig {
    pub fn new(d_norm: f64, d_max: f64) -> Result<Self> {
        let cfg = DeviationConfig { d_norm, d_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_norm.is_finite() && self.d_norm > 0.0) {
            return Err(Error::ConfigInvalid(format!("d_norm {} must be > 0", self.d_norm)));
        }
        if !(self.d_max > 0.0 && self.d_max <= 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "d_max {} must lie in (0, 1]",
                self.d_max
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, found })
    }
}

/// Translates the object footprint by the action's rounded cell shift.
///
/// Everything outside the translated footprint is zero.
pub fn shift_object(object: &Heightmap, action: &Action) -> Result<Heightmap> {
    let (w, h) = object.dims();
    let (dx, dy) = action.cell_shift(object.cell_size());
    let mut out = vec![0.0f32; w * h];
    for (i, v) in object.values().iter().enumerate() {
        if *v <= 0.0 {
            continue;
        }
        let nx = (i % w) as i64 + dx;
        let ny = (i / w) as i64 + dy;
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            return Err(Error::OutOfBounds { dx, dy });
        }
        out[ny as usize * w + nx as usize] = *v;
    }
    Ok(Heightmap::from_trusted(object.spec(), out))
}

/// Cellwise sum of a scene and a shifted object.
pub fn overlay_add(scene: &Heightmap, shifted_object: &Heightmap) -> Result<Heightmap> {
    check_dims(scene.dims(), shifted_object.dims())?;
    let values = scene
        .values()
        .iter()
        .zip(shifted_object.values())
        .map(|(a, b)| a + b)
        .collect();
    Ok(Heightmap::from_trusted(scene.spec(), values))
}

/// Mean absolute per-cell height difference, in cm.
pub fn deviation(pred: &Heightmap, truth: &Heightmap) -> Result<f64> {
    check_dims(truth.dims(), pred.dims())?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum();
    Ok(sum / pred.values().len() as f64)
}

/// Maps a raw deviation onto `[0, 1]`.
pub fn normalize_deviation(d: f64, cfg: &DeviationConfig) -> f64 {
    (d.max(0.0) / cfg.d_norm).min(1.0)
}

/// Root of the mean squared per-cell difference, in cm.
pub fn rmse(pred: &Heightmap, truth: &Heightmap) -> Result<f64> {
    check_dims(truth.dims(), pred.dims())?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok((sum / pred.values().len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n, n, 1.0).unwrap()
    }

    fn single_cell(n: usize, x: usize, y: usize, t: f32) -> Heightmap {
        Heightmap::from_fn(spec(n), |cx, cy| if (cx, cy) == (x, y) { t } else { 0.0 }).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize) -> Heightmap {
        Heightmap::from_fn(spec(n), |_, _| rng.gen_range(0.0..5.0)).unwrap()
    }

    #[test]
    fn heightmap_rejects_bad_values() {
        let s = spec(8);
        assert!(Heightmap::new(s, vec![0.0; 10]).is_err());
        let mut v = vec![0.0; 64];
        v[3] = -0.1;
        assert!(Heightmap::new(s, v.clone()).is_err());
        v[3] = f32::NAN;
        assert!(Heightmap::new(s, v).is_err());
        assert!(GridSpec::new(7, 8, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0).is_err());
    }

    #[test]
    fn identity_shift_keeps_centre_cell() {
        let obj = single_cell(16, 8, 8, 2.0);
        let shifted = shift_object(&obj, &Action::new(0.0, 0.0)).unwrap();
        assert_eq!(shifted, obj);
    }

    #[test]
    fn shift_uses_nearest_cell_rounding() {
        let obj = single_cell(32, 10, 10, 2.0);
        let shifted = shift_object(&obj, &Action::new(3.4, -2.6)).unwrap();
        assert_eq!(shifted.footprint(), vec![(13, 7)]);
        assert_eq!(shifted.get(13, 7), 2.0);
    }

    #[test]
    fn shift_rounding_respects_cell_size() {
        let s = GridSpec::new(16, 16, 0.5).unwrap();
        let obj = Heightmap::from_fn(s, |x, y| if (x, y) == (8, 8) { 1.0 } else { 0.0 }).unwrap();
        // 1.3 cm / 0.5 cm = 2.6 -> 3 cells, -0.7 / 0.5 = -1.4 -> -1
        let shifted = shift_object(&obj, &Action::new(1.3, -0.7)).unwrap();
        assert_eq!(shifted.footprint(), vec![(11, 7)]);
    }

    #[test]
    fn shift_off_grid_is_out_of_bounds() {
        let obj = single_cell(16, 15, 4, 1.0);
        let err = shift_object(&obj, &Action::new(1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { dx: 1, dy: 0 }));
    }

    #[test]
    fn action_bounds_are_exactly_the_legal_shifts() {
        let obj = Heightmap::from_fn(spec(16), |x, y| {
            if (6..=9).contains(&x) && (7..=8).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let b = ActionBounds::for_object(&obj).unwrap();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (-6.0, 6.0, -7.0, 7.0));
        assert!(shift_object(&obj, &Action::new(b.x_max, b.y_min)).is_ok());
        assert!(shift_object(&obj, &Action::new(b.x_max + 1.0, 0.0)).is_err());
        assert!(shift_object(&obj, &Action::new(0.0, b.y_min - 1.0)).is_err());
    }

    #[test]
    fn overlay_add_cases() {
        let s = spec(8);
        let scene = Heightmap::filled(s, 1.0).unwrap();
        let zero = Heightmap::zeros(s).unwrap();
        assert_eq!(overlay_add(&scene, &zero).unwrap(), scene);

        let obj = single_cell(8, 2, 3, 2.0);
        let out = overlay_add(&scene, &obj).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (x, y) == (2, 3) { 3.0 } else { 1.0 };
                assert_eq!(out.get(x, y), expect);
            }
        }

        let other = Heightmap::zeros(GridSpec::new(9, 8, 1.0).unwrap()).unwrap();
        assert!(matches!(
            overlay_add(&scene, &other),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn overlay_add_matches_per_cell_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_map(&mut rng, 12);
        let b = random_map(&mut rng, 12);
        let sum = overlay_add(&a, &b).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(sum.get(x, y), a.get(x, y) + b.get(x, y));
            }
        }
    }

    #[test]
    fn deviation_and_rmse_reference_cases() {
        let s = spec(8);
        let truth = Heightmap::filled(s, 2.0).unwrap();
        assert_eq!(deviation(&truth, &truth).unwrap(), 0.0);
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        let up1 = Heightmap::filled(s, 3.0).unwrap();
        assert_eq!(deviation(&up1, &truth).unwrap(), 1.0);
        let up2 = Heightmap::filled(s, 4.0).unwrap();
        assert_eq!(rmse(&up2, &truth).unwrap(), 2.0);
        let other = Heightmap::zeros(GridSpec::new(8, 9, 1.0).unwrap()).unwrap();
        assert!(deviation(&other, &truth).is_err());
        assert!(rmse(&other, &truth).is_err());
    }

    #[test]
    fn deviation_and_rmse_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_map(&mut rng, 10);
            let b = random_map(&mut rng, 10);
            // accumulation oracle: explicit double loop, separate passes
            let mut abs_sum = 0.0f64;
            for y in 0..10 {
                for x in 0..10 {
                    abs_sum += (a.get(x, y) as f64 - b.get(x, y) as f64).abs();
                }
            }
            let diffs: Vec<f64> = (0..100)
                .map(|i| a.values()[i] as f64 - b.values()[i] as f64)
                .collect();
            let mean_sq = diffs.iter().map(|d| d * d).sum::<f64>() / 100.0;
            assert!((deviation(&a, &b).unwrap() - abs_sum / 100.0).abs() < 1e-12);
            assert!((rmse(&a, &b).unwrap() - mean_sq.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_deviation_clamps() {
        let cfg = DeviationConfig::new(0.5, 0.4).unwrap();
        assert_eq!(normalize_deviation(0.0, &cfg), 0.0);
        assert_eq!(normalize_deviation(0.5, &cfg), 1.0);
        assert_eq!(normalize_deviation(1.0, &cfg), 1.0);
        assert!(DeviationConfig::new(0.0, 0.4).is_err());
        assert!(DeviationConfig::new(1.0, 0.0).is_err());
        assert!(DeviationConfig::new(1.0, 1.1).is_err());
    }

    #[test]
    fn mask_validation() {
        let s = spec(8);
        let map = single_cell(8, 1, 1, 1.0);
        let mut mask = MaterialMask::empty(s);
        assert!(mask.validate_against(&map).is_err());
        let m = Material {
            density: 1.0,
            youngs_modulus: 10.0,
            poisson_ratio: 0.3,
        };
        mask.set(1, 1, &m);
        mask.validate_against(&map).unwrap();
        mask.set(2, 2, &m);
        assert!(mask.validate_against(&map).is_err());
    }

    #[test]
    fn scene_state_requires_connected_object() {
        let s = spec(8);
        let scene = Heightmap::zeros(s).unwrap();
        let mat = ObjectMaterial {
            mass: 10.0,
            youngs_modulus: 20.0,
            poisson_ratio: 0.4,
        };
        let split = Heightmap::from_fn(s, |x, y| {
            if (x, y) == (1, 1) || (x, y) == (3, 1) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert!(SceneState::new(scene.clone(), MaterialMask::empty(s), split, mat).is_err());
        let joined = Heightmap::from_fn(s, |x, y| if y == 1 && x <= 3 { 1.0 } else { 0.0 }).unwrap();
        assert!(SceneState::new(scene, MaterialMask::empty(s), joined, mat).is_ok());
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (
            proptest::collection::vec(0.0f32..10.0, 64),
            proptest::collection::vec(0.0f32..10.0, 64),
        )
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_ordered((a, b) in arb_pair()) {
            let s = spec(8);
            let a = Heightmap::new(s, a).unwrap();
            let b = Heightmap::new(s, b).unwrap();
            let d_ab = deviation(&a, &b).unwrap();
            let r_ab = rmse(&a, &b).unwrap();
            prop_assert_eq!(d_ab, deviation(&b, &a).unwrap());
            prop_assert_eq!(r_ab, rmse(&b, &a).unwrap());
            prop_assert!(d_ab >= 0.0);
            prop_assert!(d_ab <= r_ab + 1e-9);
            prop_assert_eq!(d_ab == 0.0, a == b);
            prop_assert_eq!(r_ab == 0.0, a == b);
        }

        #[test]
        fn overlay_add_commutes_and_associates(
            a in proptest::collection::vec(0u8..40, 64),
            b in proptest::collection::vec(0u8..40, 64),
            c in proptest::collection::vec(0u8..40, 64),
        ) {
            // quarter-cm values are exactly representable
            let s = spec(8);
            let mk = |v: &Vec<u8>| Heightmap::new(s, v.iter().map(|x| *x as f32 * 0.25).collect()).unwrap();
            let (a, b, c) = (mk(&a), mk(&b), mk(&c));
            prop_assert_eq!(overlay_add(&a, &b).unwrap(), overlay_add(&b, &a).unwrap());
            let left = overlay_add(&overlay_add(&a, &b).unwrap(), &c).unwrap();
            let right = overlay_add(&a, &overlay_add(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn normalize_is_monotone_and_bounded(d1 in 0.0f64..10.0, d2 in 0.0f64..10.0, norm in 0.01f64..5.0) {
            let cfg = DeviationConfig::new(norm, 0.4).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let (nl, nh) = (normalize_deviation(lo, &cfg), normalize_deviation(hi, &cfg));
            prop_assert!(nl <= nh);
            prop_assert!((0.0..=1.0).contains(&nl) && (0.0..=1.0).contains(&nh));
        }
    }
}
