//! Signal-aware synthetic lesion generation.
//!
//! A lesion is produced in stages: pick a host structure and a center voxel
//! (edge or interior band), build an initial shape (random ellipsoid or a
//! copy of an anatomical structure), deform it elastically, translate it to
//! the center, clip it to the brain, then sample an abnormal intensity from
//! the host region's statistics and blend it in with a Gaussian falloff.
//!
//! Everything is driven by a seeded generator. [`synthesize`] gives each
//! lesion its own realization seed and records it in the returned
//! [`LesionRecipe`], so [`apply_recipe`] reproduces the output bit-exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{erode, StructuringElement};
use crate::volume::{AtlasLabelMap, BinaryMask, Dims, Volume, VolumeError};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("atlas contains no nonzero labels")]
    EmptyAtlas,
    #[error("structure {0} has no voxels to place a lesion in")]
    DegenerateStructure(u16),
    #[error("shape has no voxels")]
    EmptyShape,
    #[error("elastic deformation left the volume-ratio band in 5 attempts")]
    DeformationCollapse,
    #[error("region has no voxels")]
    EmptyRegion,
    #[error("empty intensity interval [{lo}, {hi})")]
    DegenerateInterval { lo: f64, hi: f64 },
    #[error("center voxel is not inside the lesion mask")]
    CenterOutsideLesion,
    #[error("volume dims {0:?} do not match atlas dims {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("lesion {lesion_index} could not be placed after {attempts} attempts")]
    SynthesisFailed { lesion_index: usize, attempts: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Edge,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Hyper,
    Hypo,
}

impl Polarity {
    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Hyper => Polarity::Hypo,
            Polarity::Hypo => Polarity::Hyper,
        }
    }
}

/// Initial lesion geometry before elastic deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeInit {
    /// Semi-axes in voxels along x, y, z; each at least 1.
    Ellipsoid { a: f64, b: f64, c: f64 },
    /// Copy the named structure's shape from the atlas.
    StructureShape { label: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticParams {
    /// Maximum displacement magnitude in voxels; 0 disables deformation.
    pub alpha: f64,
    /// Standard deviation of the noise-smoothing Gaussian in voxels.
    pub sigma_e: f64,
}

/// A fully realized lesion: applying it to the same volume and atlas with
/// [`apply_recipe`] reproduces the lesion bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecipe {
    pub structure_label: u16,
    pub placement: Placement,
    pub center: (usize, usize, usize),
    pub shape_init: ShapeInit,
    pub elastic: ElasticParams,
    pub polarity: Polarity,
    pub epsilon: f32,
    pub sigma_b: f64,
    /// Seed of the per-lesion realization generator (elastic noise and the
    /// intensity draw).
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub avg: f32,
    pub min: f32,
    pub max: f32,
}

/// Generation parameters. Loadable from JSON with exactly these field names;
/// unknown keys are rejected, missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Inclusive range for the number of lesions per call.
    pub lesion_count_range: (u32, u32),
    pub polarity_probability_hyper: f64,
    pub edge_probability: f64,
    /// Inclusive range for ellipsoid semi-axes in voxels.
    pub ellipsoid_axis_range: (f64, f64),
    pub elastic: ElasticParams,
    /// Intensity shift ε; `None` derives 0.1 * (max - min) of the host region.
    pub epsilon: Option<f32>,
    /// Blur falloff σ_b; `None` derives half the lesion's equivalent-sphere
    /// radius.
    pub sigma_b: Option<f64>,
    /// Probability of sourcing the initial shape from a structure instead of
    /// an ellipsoid.
    pub shape_init_structure_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lesion_count_range: (1, 3),
            polarity_probability_hyper: 0.5,
            edge_probability: 0.5,
            ellipsoid_axis_range: (2.0, 6.0),
            elastic: ElasticParams { alpha: 2.0, sigma_e: 2.0 },
            epsilon: None,
            sigma_b: None,
            shape_init_structure_probability: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: SynthConfig = serde_json::from_str(json)
            .map_err(|e| SynthError::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SynthError::InvalidParameter(msg));
        let (lo, hi) = self.lesion_count_range;
        if lo > hi {
            return bad(format!("lesion_count_range ({lo}, {hi}) must satisfy lo <= hi"));
        }
        for (name, p) in [
            ("polarity_probability_hyper", self.polarity_probability_hyper),
            ("edge_probability", self.edge_probability),
            ("shape_init_structure_probability", self.shape_init_structure_probability),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        let (alo, ahi) = self.ellipsoid_axis_range;
        if !alo.is_finite() || !ahi.is_finite() || alo < 1.0 || alo > ahi {
            return bad(format!("ellipsoid_axis_range ({alo}, {ahi}) must satisfy 1 <= lo <= hi"));
        }
        validate_elastic(&self.elastic)?;
        if let Some(e) = self.epsilon {
            if !e.is_finite() || e < 0.0 {
                return bad(format!("epsilon must be non-negative, got {e}"));
            }
        }
        if let Some(s) = self.sigma_b {
            if !s.is_finite() || s <= 0.0 {
                return bad(format!("sigma_b must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

fn validate_elastic(e: &ElasticParams) -> Result<()> {
    if !e.alpha.is_finite() || e.alpha < 0.0 {
        return Err(SynthError::InvalidParameter(format!("alpha must be non-negative, got {}", e.alpha)));
    }
    if !e.sigma_e.is_finite() || e.sigma_e <= 0.0 {
        return Err(SynthError::InvalidParameter(format!("sigma_e must be positive, got {}", e.sigma_e)));
    }
    Ok(())
}

/// Picks a host structure uniformly among labels present, then a center
/// voxel uniformly from its edge band (with probability `edge_probability`)
/// or from its interior. The edge band is the structure's morphological
/// gradient restricted to the structure, so the center always lies inside
/// the structure; an empty band falls back to the whole structure mask.
pub fn select_location(
    atlas: &AtlasLabelMap,
    edge_probability: f64,
    rng: &mut impl Rng,
) -> Result<(u16, Placement, (usize, usize, usize))> {
    let labels = atlas.labels_present();
    if labels.is_empty() {
        return Err(SynthError::EmptyAtlas);
    }
    let label = labels[rng.random_range(0..labels.len())];
    let placement = if rng.random_bool(edge_probability) { Placement::Edge } else { Placement::Interior };

    let structure = atlas.structure_mask(label)?;
    let interior = erode(&structure, StructuringElement::Ball(1));
    let band = match placement {
        Placement::Edge => structure.and_not(&interior),
        Placement::Interior => interior,
    };
    let band = if band.any() { band } else { structure.clone() };
    let candidates: Vec<usize> = band.iter_true().collect();
    if candidates.is_empty() {
        return Err(SynthError::DegenerateStructure(label));
    }
    let center = candidates[rng.random_range(0..candidates.len())];
    Ok((label, placement, atlas.dims().coords(center)))
}

fn bbox(mask: &BinaryMask) -> Option<((usize, usize, usize), (usize, usize, usize))> {
    let dims = mask.dims();
    let mut min = (usize::MAX, usize::MAX, usize::MAX);
    let mut max = (0usize, 0usize, 0usize);
    let mut any = false;
    for i in mask.iter_true() {
        let (x, y, z) = dims.coords(i);
        min = (min.0.min(x), min.1.min(y), min.2.min(z));
        max = (max.0.max(x), max.1.max(y), max.2.max(z));
        any = true;
    }
    any.then_some((min, max))
}

/// Builds the initial lesion shape in its own grid of size `target_extent`.
///
/// An ellipsoid covers the voxels with `(x/a)^2 + (y/b)^2 + (z/c)^2 <= 1`
/// around the extent's center. A structure shape is the named structure
/// cropped to its bounding box and rescaled to the extent by
/// nearest-neighbor lookup. Output is fully determined by the inputs.
pub fn init_shape(source: &ShapeInit, atlas: &AtlasLabelMap, target_extent: Dims) -> Result<BinaryMask> {
    let shape = match *source {
        ShapeInit::Ellipsoid { a, b, c } => {
            for (axis, v) in [("a", a), ("b", b), ("c", c)] {
                if !v.is_finite() || v < 1.0 {
                    return Err(SynthError::InvalidParameter(format!(
                        "ellipsoid semi-axis {axis} must be at least 1 voxel, got {v}"
                    )));
                }
            }
            let fits = |axis: f64, extent: usize| 2.0 * axis.ceil() + 1.0 <= extent as f64;
            if !fits(a, target_extent.nx) || !fits(b, target_extent.ny) || !fits(c, target_extent.nz) {
                return Err(SynthError::InvalidParameter(format!(
                    "ellipsoid ({a}, {b}, {c}) does not fit extent {target_extent:?}"
                )));
            }
            let cx = (target_extent.nx - 1) as f64 / 2.0;
            let cy = (target_extent.ny - 1) as f64 / 2.0;
            let cz = (target_extent.nz - 1) as f64 / 2.0;
            BinaryMask::from_fn(target_extent, |x, y, z| {
                let dx = (x as f64 - cx) / a;
                let dy = (y as f64 - cy) / b;
                let dz = (z as f64 - cz) / c;
                dx * dx + dy * dy + dz * dz <= 1.0
            })
        }
        ShapeInit::StructureShape { label } => {
            let structure = atlas.structure_mask(label)?;
            let Some((min, max)) = bbox(&structure) else {
                return Err(SynthError::EmptyShape);
            };
            let (bx, by, bz) = (max.0 - min.0 + 1, max.1 - min.1 + 1, max.2 - min.2 + 1);
            let src = |t: usize, extent: usize, b: usize| {
                (((t as f64 + 0.5) * b as f64 / extent as f64).floor() as usize).min(b - 1)
            };
            BinaryMask::from_fn(target_extent, |x, y, z| {
                let sx = min.0 + src(x, target_extent.nx, bx);
                let sy = min.1 + src(y, target_extent.ny, by);
                let sz = min.2 + src(z, target_extent.nz, bz);
                structure.get(sx, sy, sz)
            })
        }
    };
    if !shape.any() {
        return Err(SynthError::EmptyShape);
    }
    Ok(shape)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

// Separable convolution along one axis with zero padding.
fn smooth_axis(field: &[f64], dims: Dims, kernel: &[f64], axis: usize) -> Vec<f64> {
    let radius = kernel.len() / 2;
    let mut out = vec![0.0; field.len()];
    let extent = [dims.nx, dims.ny, dims.nz][axis];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let pos = [x, y, z][axis] as i64;
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let p = pos + k as i64 - radius as i64;
                    if p < 0 || p >= extent as i64 {
                        continue;
                    }
                    let mut c = [x, y, z];
                    c[axis] = p as usize;
                    acc += w * field[dims.index(c[0], c[1], c[2])];
                }
                out[dims.index(x, y, z)] = acc;
            }
        }
    }
    out
}

/// Warps a mask with a random smooth displacement field.
///
/// Three channels of uniform white noise in (-1, 1) are smoothed by a
/// Gaussian of std `sigma_e` and scaled so the largest displacement
/// magnitude equals `alpha`, then the mask is resampled backward with
/// nearest-neighbor lookup (out-of-grid sources read as false). A result
/// whose voxel count leaves [0.25x, 4x] of the input is rejected and redrawn
/// with fresh noise, up to 5 attempts. `alpha == 0` returns the input
/// unchanged without consuming randomness.
pub fn elastic_deform(shape: &BinaryMask, alpha: f64, sigma_e: f64, rng: &mut impl Rng) -> Result<BinaryMask> {
    validate_elastic(&ElasticParams { alpha, sigma_e })?;
    if alpha == 0.0 {
        return Ok(shape.clone());
    }
    let dims = shape.dims();
    let n = dims.voxel_count();
    let n_in = shape.count_ones();
    let lo = 0.25 * n_in as f64;
    let hi = 4.0 * n_in as f64;
    let kernel = gaussian_kernel(sigma_e);

    for _ in 0..5 {
        // Channel order x, y, z; each sampled voxel-by-voxel in raster order.
        let mut channels: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for ch in &mut channels {
            for axis in 0..3 {
                *ch = smooth_axis(ch, dims, &kernel, axis);
            }
        }
        let mut max_mag = 0.0f64;
        for i in 0..n {
            let m = (channels[0][i].powi(2) + channels[1][i].powi(2) + channels[2][i].powi(2)).sqrt();
            max_mag = max_mag.max(m);
        }
        if max_mag > 0.0 {
            let scale = alpha / max_mag;
            for ch in &mut channels {
                for v in ch.iter_mut() {
                    *v *= scale;
                }
            }
        }

        let mut out = BinaryMask::empty(dims);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let i = dims.index(x, y, z);
                    let sx = (x as f64 + channels[0][i]).round() as i64;
                    let sy = (y as f64 + channels[1][i]).round() as i64;
                    let sz = (z as f64 + channels[2][i]).round() as i64;
                    if dims.contains_signed(sx, sy, sz) && shape.get(sx as usize, sy as usize, sz as usize) {
                        out.set_linear(i, true);
                    }
                }
            }
        }
        let count = out.count_ones() as f64;
        if count >= lo && count <= hi {
            return Ok(out);
        }
    }
    Err(SynthError::DeformationCollapse)
}

/// Mean, minimum and maximum intensity over the region's true voxels.
pub fn intensity_stats(volume: &Volume, region: &BinaryMask) -> Result<IntensityStats> {
    if volume.dims() != region.dims() {
        return Err(SynthError::DimsMismatch(volume.dims(), region.dims()));
    }
    let mut sum = 0.0f64;
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    let mut count = 0usize;
    for i in region.iter_true() {
        let v = volume.at_linear(i);
        sum += v as f64;
        min = min.min(v);
        max = max.max(v);
        count += 1;
    }
    if count == 0 {
        return Err(SynthError::EmptyRegion);
    }
    let avg = (sum / count as f64) as f32;
    Ok(IntensityStats { avg: avg.clamp(min, max), min, max })
}

// Sampling interval for I_a, computed in f64 and then narrowed to f32
// endpoints that stay inside it.
fn interval_bounds(stats: &IntensityStats, polarity: Polarity, epsilon: f32) -> Result<(f32, f32)> {
    let (lo, hi) = match polarity {
        Polarity::Hyper => (stats.avg as f64 + epsilon as f64, stats.max as f64),
        Polarity::Hypo => (stats.min as f64, stats.avg as f64 - epsilon as f64),
    };
    if !(lo < hi) {
        return Err(SynthError::DegenerateInterval { lo, hi });
    }
    let mut lo32 = lo as f32;
    if (lo32 as f64) < lo {
        lo32 = lo32.next_up();
    }
    let mut hi32 = hi as f32;
    if (hi32 as f64) > hi {
        hi32 = hi32.next_down();
    }
    if !(lo32 < hi32) {
        return Err(SynthError::DegenerateInterval { lo, hi });
    }
    Ok((lo32, hi32))
}

/// Draws the anomaly intensity `I_a` uniformly from `[avg+ε, max)` for hyper
/// lesions or `[min, avg-ε)` for hypo lesions.
pub fn sample_intensity(
    stats: &IntensityStats,
    polarity: Polarity,
    epsilon: f32,
    rng: &mut impl Rng,
) -> Result<f32> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(SynthError::InvalidParameter(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let (lo, hi) = interval_bounds(stats, polarity, epsilon)?;
    Ok(rng.random_range(lo..hi))
}

/// Blends `I_a` into the volume over the lesion support with Gaussian
/// falloff: `out(v) = (1-w)*in(v) + w*I_a`, `w = exp(-d^2 / (2 sigma_b^2))`
/// with `d` the Euclidean distance to the center in voxel units. The center
/// voxel is set to `I_a` exactly; voxels outside the lesion are untouched.
pub fn inpaint_lesion(
    volume: &Volume,
    lesion: &BinaryMask,
    center: (usize, usize, usize),
    i_a: f32,
    sigma_b: f64,
) -> Result<Volume> {
    if volume.dims() != lesion.dims() {
        return Err(SynthError::DimsMismatch(volume.dims(), lesion.dims()));
    }
    if !sigma_b.is_finite() || sigma_b <= 0.0 {
        return Err(SynthError::InvalidParameter(format!("sigma_b must be positive, got {sigma_b}")));
    }
    if !i_a.is_finite() {
        return Err(SynthError::InvalidParameter(format!("intensity must be finite, got {i_a}")));
    }
    let dims = volume.dims();
    let (cx, cy, cz) = center;
    if cx >= dims.nx || cy >= dims.ny || cz >= dims.nz || !lesion.get(cx, cy, cz) {
        return Err(SynthError::CenterOutsideLesion);
    }
    let mut data = volume.data().to_vec();
    let denom = 2.0 * sigma_b * sigma_b;
    for i in lesion.iter_true() {
        let (x, y, z) = dims.coords(i);
        if (x, y, z) == center {
            data[i] = i_a;
            continue;
        }
        let dx = x as f64 - cx as f64;
        let dy = y as f64 - cy as f64;
        let dz = z as f64 - cz as f64;
        let w = (-(dx * dx + dy * dy + dz * dz) / denom).exp();
        data[i] = ((1.0 - w) * volume.at_linear(i) as f64 + w * i_a as f64) as f32;
    }
    Ok(volume.with_data(data)?)
}

pub struct SynthOutput {
    pub volume: Volume,
    pub anomaly_mask: BinaryMask,
    pub recipes: Vec<LesionRecipe>,
}

fn validate_recipe(recipe: &LesionRecipe) -> Result<()> {
    if let ShapeInit::Ellipsoid { a, b, c } = recipe.shape_init {
        for (axis, v) in [("a", a), ("b", b), ("c", c)] {
            if !v.is_finite() || v < 1.0 {
                return Err(SynthError::InvalidParameter(format!(
                    "ellipsoid semi-axis {axis} must be at least 1 voxel, got {v}"
                )));
            }
        }
    }
    validate_elastic(&recipe.elastic)?;
    if !recipe.epsilon.is_finite() || recipe.epsilon < 0.0 {
        return Err(SynthError::InvalidParameter(format!(
            "epsilon must be non-negative, got {}",
            recipe.epsilon
        )));
    }
    if !recipe.sigma_b.is_finite() || recipe.sigma_b <= 0.0 {
        return Err(SynthError::InvalidParameter(format!(
            "sigma_b must be positive, got {}",
            recipe.sigma_b
        )));
    }
    Ok(())
}

// Base (unpadded) extent of the initial shape grid.
fn base_extent(shape_init: &ShapeInit, atlas: &AtlasLabelMap) -> Result<Dims> {
    match *shape_init {
        ShapeInit::Ellipsoid { a, b, c } => {
            let e = |v: f64| 2 * (v.ceil() as usize) + 1;
            Ok(Dims::new(e(a), e(b), e(c))?)
        }
        ShapeInit::StructureShape { label } => {
            let structure = atlas.structure_mask(label)?;
            let Some((min, max)) = bbox(&structure) else {
                return Err(SynthError::EmptyShape);
            };
            Ok(Dims::new(max.0 - min.0 + 1, max.1 - min.1 + 1, max.2 - min.2 + 1)?)
        }
    }
}

fn embed_centered(small: &BinaryMask, big: Dims) -> BinaryMask {
    let s = small.dims();
    let off = ((big.nx - s.nx) / 2, (big.ny - s.ny) / 2, (big.nz - s.nz) / 2);
    let mut out = BinaryMask::empty(big);
    for i in small.iter_true() {
        let (x, y, z) = s.coords(i);
        out.set(x + off.0, y + off.1, z + off.2, true);
    }
    out
}

// Shape grid -> volume grid: the shape box center lands on `center`, voxels
// falling outside the volume are dropped.
fn translate_to(shape: &BinaryMask, center: (usize, usize, usize), vol_dims: Dims) -> BinaryMask {
    let s = shape.dims();
    let box_center = ((s.nx - 1) / 2, (s.ny - 1) / 2, (s.nz - 1) / 2);
    let mut out = BinaryMask::empty(vol_dims);
    for i in shape.iter_true() {
        let (x, y, z) = s.coords(i);
        let vx = center.0 as i64 + x as i64 - box_center.0 as i64;
        let vy = center.1 as i64 + y as i64 - box_center.1 as i64;
        let vz = center.2 as i64 + z as i64 - box_center.2 as i64;
        if vol_dims.contains_signed(vx, vy, vz) {
            out.set(vx as usize, vy as usize, vz as usize, true);
        }
    }
    out
}

// Shape -> deform -> translate -> clip to brain. Consumes rng only through
// elastic_deform, identically in generation and replay.
fn realize_mask(
    atlas: &AtlasLabelMap,
    shape_init: &ShapeInit,
    elastic: &ElasticParams,
    center: (usize, usize, usize),
    rng: &mut impl Rng,
) -> Result<BinaryMask> {
    let base = base_extent(shape_init, atlas)?;
    let pad = elastic.alpha.ceil() as usize;
    let padded = Dims::new(base.nx + 2 * pad, base.ny + 2 * pad, base.nz + 2 * pad)?;
    let shape = init_shape(shape_init, atlas, base)?;
    let embedded = embed_centered(&shape, padded);
    let deformed = elastic_deform(&embedded, elastic.alpha, elastic.sigma_e, rng)?;
    let placed = translate_to(&deformed, center, atlas.dims());
    Ok(placed.and(&atlas.brain_mask()))
}

fn default_epsilon(stats: &IntensityStats) -> f32 {
    (0.1 * (stats.max as f64 - stats.min as f64)) as f32
}

fn default_sigma_b(voxels: usize) -> f64 {
    // Half the radius of a sphere with the lesion's volume.
    0.5 * (3.0 * voxels as f64 / (4.0 * std::f64::consts::PI)).cbrt()
}

// Degenerate-interval ladder: flip polarity once, then halve epsilon up to
// three times, trying both polarities at each level. Consumes no randomness,
// so the recipe's final (polarity, epsilon) replays without it.
fn resolve_interval(stats: &IntensityStats, polarity: Polarity, epsilon: f32) -> Result<(Polarity, f32)> {
    let mut last = SynthError::DegenerateInterval { lo: 0.0, hi: 0.0 };
    for level in 0..4 {
        let e = epsilon / (1 << level) as f32;
        for p in [polarity, polarity.flipped()] {
            match interval_bounds(stats, p, e) {
                Ok(_) => return Ok((p, e)),
                Err(err) => last = err,
            }
        }
    }
    Err(last)
}

/// Replays one recipe against a volume, returning the modified volume and
/// the lesion mask. [`synthesize`] uses this same path internally, which is
/// what makes recipe replay bit-exact.
pub fn apply_recipe(volume: &Volume, atlas: &AtlasLabelMap, recipe: &LesionRecipe) -> Result<(Volume, BinaryMask)> {
    if volume.dims() != atlas.dims() {
        return Err(SynthError::DimsMismatch(volume.dims(), atlas.dims()));
    }
    validate_recipe(recipe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mask = realize_mask(atlas, &recipe.shape_init, &recipe.elastic, recipe.center, &mut rng)?;
    let stats = intensity_stats(volume, &mask)?;
    let i_a = sample_intensity(&stats, recipe.polarity, recipe.epsilon, &mut rng)?;
    let out = inpaint_lesion(volume, &mask, recipe.center, i_a, recipe.sigma_b)?;
    Ok((out, mask))
}

fn recoverable(e: &SynthError) -> bool {
    matches!(
        e,
        SynthError::EmptyShape
            | SynthError::DeformationCollapse
            | SynthError::EmptyRegion
            | SynthError::DegenerateInterval { .. }
            | SynthError::CenterOutsideLesion
            | SynthError::DegenerateStructure(_)
    )
}

const PLACEMENT_ATTEMPTS: usize = 10;

/// Generates `k ~ U(lesion_count_range)` lesions, sequentially and
/// deterministically for a given seed.
///
/// Each attempt draws location, shape source, initial polarity and a fresh
/// realization seed from the master generator, then realizes the lesion via
/// [`apply_recipe`]'s path. Lesions are kept pairwise disjoint (overlapping
/// candidates are rejected and retried), so every host region still carries
/// its pre-synthesis intensities when its statistics are taken. A lesion
/// failing [`PLACEMENT_ATTEMPTS`] times aborts with `SynthesisFailed`.
pub fn synthesize(volume: &Volume, atlas: &AtlasLabelMap, config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    if volume.dims() != atlas.dims() {
        return Err(SynthError::DimsMismatch(volume.dims(), atlas.dims()));
    }
    config.validate()?;
    if atlas.labels_present().is_empty() {
        return Err(SynthError::EmptyAtlas);
    }
    let dims = volume.dims();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = config.lesion_count_range;
    let k = master.random_range(lo..=hi) as usize;

    let mut working = volume.clone();
    let mut anomaly = BinaryMask::empty(dims);
    let mut recipes = Vec::with_capacity(k);

    for lesion_index in 0..k {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (label, placement, center) = select_location(atlas, config.edge_probability, &mut master)?;
            let shape_init = if master.random_bool(config.shape_init_structure_probability) {
                let labels = atlas.labels_present();
                ShapeInit::StructureShape { label: labels[master.random_range(0..labels.len())] }
            } else {
                let (alo, ahi) = config.ellipsoid_axis_range;
                ShapeInit::Ellipsoid {
                    a: master.random_range(alo..=ahi),
                    b: master.random_range(alo..=ahi),
                    c: master.random_range(alo..=ahi),
                }
            };
            let init_polarity = if master.random_bool(config.polarity_probability_hyper) {
                Polarity::Hyper
            } else {
                Polarity::Hypo
            };
            let realization_seed = master.next_u64();

            // Dry-run the mask to resolve the intensity interval before
            // committing to a recipe.
            let mut probe = ChaCha8Rng::seed_from_u64(realization_seed);
            let elastic = config.elastic;
            let mask = match realize_mask(atlas, &shape_init, &elastic, center, &mut probe) {
                Ok(m) => m,
                Err(e) if recoverable(&e) => continue,
                Err(e) => return Err(e),
            };
            let center_idx = dims.index(center.0, center.1, center.2);
            if !mask.any() || !mask.get_linear(center_idx) || mask.intersects(&anomaly) {
                continue;
            }
            let stats = match intensity_stats(&working, &mask) {
                Ok(s) => s,
                Err(e) if recoverable(&e) => continue,
                Err(e) => return Err(e),
            };
            let epsilon0 = config.epsilon.unwrap_or_else(|| default_epsilon(&stats));
            let (polarity, epsilon) = match resolve_interval(&stats, init_polarity, epsilon0) {
                Ok(pe) => pe,
                Err(e) if recoverable(&e) => continue,
                Err(e) => return Err(e),
            };
            let sigma_b = config.sigma_b.unwrap_or_else(|| default_sigma_b(mask.count_ones()));

            let recipe = LesionRecipe {
                structure_label: label,
                placement,
                center,
                shape_init,
                elastic,
                polarity,
                epsilon,
                sigma_b,
                seed: realization_seed,
            };
            match apply_recipe(&working, atlas, &recipe) {
                Ok((vol, mask)) => {
                    working = vol;
                    anomaly.or_with(&mask);
                    recipes.push(recipe);
                    placed = true;
                    break;
                }
                Err(e) if recoverable(&e) => continue,
                Err(e) => return Err(e),
            }
        }
        if !placed {
            return Err(SynthError::SynthesisFailed { lesion_index, attempts: PLACEMENT_ATTEMPTS });
        }
    }
    Ok(SynthOutput { volume: working, anomaly_mask: anomaly, recipes })
}
