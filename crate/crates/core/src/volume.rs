//! Dense 3D grid types shared by every other module: scalar volumes, binary
//! masks, labelled atlases and multi-channel feature grids.
//!
//! All grids use one canonical memory layout: row-major with x fastest, so a
//! voxel `(x, y, z)` lives at linear index `x + nx * (y + ny * z)`. Grids are
//! immutable once constructed; operations return new values.

use std::collections::BTreeMap;

use thiserror::Error;

/// Physical voxel spacing in millimetres along (x, y, z).
pub type Spacing = (f32, f32, f32);

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("grid dimensions must all be at least 1, got {0}x{1}x{2}")]
    EmptyDims(usize, usize, usize),
    #[error("data length {got} does not match grid size {expected}")]
    DataLength { got: usize, expected: usize },
    #[error("voxel spacing must be finite and positive, got ({0}, {1}, {2})")]
    BadSpacing(f32, f32, f32),
    #[error("non-finite intensity at linear index {0}")]
    NonFinite(usize),
    #[error("label {0} is not a known structure")]
    UnknownLabel(u16),
    #[error("label {0} appears in the grid but has no name entry")]
    MissingLabelName(u16),
    #[error("channel count must be at least 1")]
    NoChannels,
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// Grid extent in voxels. Each dimension is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VolumeError::EmptyDims(nx, ny, nz));
        }
        Ok(Dims { nx, ny, nz })
    }

    /// Total number of voxels.
    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Linear index of `(x, y, z)` in the canonical layout.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of [`Dims::index`].
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        debug_assert!(index < self.voxel_count());
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }

    /// Whether a signed coordinate triple lies inside the grid.
    pub fn contains_signed(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0 && y >= 0 && z >= 0 && (x as usize) < self.nx && (y as usize) < self.ny && (z as usize) < self.nz
    }
}

fn check_len(got: usize, dims: Dims) -> Result<()> {
    let expected = dims.voxel_count();
    if got != expected {
        return Err(VolumeError::DataLength { got, expected });
    }
    Ok(())
}

fn check_spacing(s: Spacing) -> Result<()> {
    let ok = |v: f32| v.is_finite() && v > 0.0;
    if ok(s.0) && ok(s.1) && ok(s.2) {
        Ok(())
    } else {
        Err(VolumeError::BadSpacing(s.0, s.1, s.2))
    }
}

/// A scalar intensity volume with physical voxel spacing.
///
/// Every stored value is finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_len(data.len(), dims)?;
        check_spacing(spacing)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Volume { dims, spacing, data })
    }

    /// Constant-valued volume, mainly useful as a test background.
    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.voxel_count()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn at_linear(&self, index: usize) -> f32 {
        self.data[index]
    }

    /// New volume with the same dims and spacing but replaced data.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, data)
    }
}

/// A boolean voxel grid. Carries no spacing; geometry comes from the volume
/// or atlas it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: Dims) -> Self {
        BinaryMask { dims, bits: vec![false; dims.voxel_count()] }
    }

    pub fn full(dims: Dims) -> Self {
        BinaryMask { dims, bits: vec![true; dims.voxel_count()] }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        check_len(bits.len(), dims)?;
        Ok(BinaryMask { dims, bits })
    }

    /// Builds a mask from a voxel-wise predicate evaluated in raster order.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.voxel_count());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    bits.push(f(x, y, z));
                }
            }
        }
        BinaryMask { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.dims.index(x, y, z)]
    }

    pub fn get_linear(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.dims.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn set_linear(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    /// Number of true voxels.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Linear indices of true voxels in ascending order.
    pub fn iter_true(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| if b { Some(i) } else { None })
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a || b)
    }

    /// Voxels in `self` but not in `other`.
    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask { dims: self.dims, bits: self.bits.iter().map(|&b| !b).collect() }
    }

    pub fn or_with(&mut self, other: &BinaryMask) {
        assert_eq!(self.dims, other.dims, "mask dims mismatch");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a = *a || b;
        }
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        assert_eq!(self.dims, other.dims, "mask dims mismatch");
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        assert_eq!(self.dims, other.dims, "mask dims mismatch");
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert_eq!(self.dims, other.dims, "mask dims mismatch");
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        BinaryMask { dims: self.dims, bits }
    }
}

/// An anatomical label grid. Label 0 is background; every nonzero label that
/// occurs in the grid has an entry in the name table.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasLabelMap {
    dims: Dims,
    labels: Vec<u16>,
    label_names: BTreeMap<u16, String>,
}

impl AtlasLabelMap {
    pub fn new(dims: Dims, labels: Vec<u16>, label_names: BTreeMap<u16, String>) -> Result<Self> {
        check_len(labels.len(), dims)?;
        for &l in &labels {
            if l != 0 && !label_names.contains_key(&l) {
                return Err(VolumeError::MissingLabelName(l));
            }
        }
        Ok(AtlasLabelMap { dims, labels, label_names })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label_names(&self) -> &BTreeMap<u16, String> {
        &self.label_names
    }

    pub fn label_at(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn label_at_linear(&self, index: usize) -> u16 {
        self.labels[index]
    }

    /// Distinct nonzero labels present in the grid, ascending.
    pub fn labels_present(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.labels {
            if l != 0 {
                seen.insert(l);
            }
        }
        seen.into_iter().collect()
    }

    pub fn name_of(&self, label: u16) -> Result<&str> {
        self.label_names
            .get(&label)
            .map(String::as_str)
            .ok_or(VolumeError::UnknownLabel(label))
    }

    /// Binary mask of one structure. The label must be nonzero and named;
    /// a named label absent from the grid yields an all-false mask.
    pub fn structure_mask(&self, label: u16) -> Result<BinaryMask> {
        if label == 0 || !self.label_names.contains_key(&label) {
            return Err(VolumeError::UnknownLabel(label));
        }
        let bits = self.labels.iter().map(|&l| l == label).collect();
        Ok(BinaryMask { dims: self.dims, bits })
    }

    /// Mask of all nonzero-labelled voxels.
    pub fn brain_mask(&self) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| l != 0).collect();
        BinaryMask { dims: self.dims, bits }
    }
}

/// A dense multi-channel feature grid, channel index fastest:
/// `value(c, x, y, z) = data[c + channels * (x + nx * (y + ny * z))]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    dims: Dims,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(dims: Dims, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(VolumeError::NoChannels);
        }
        let expected = dims.voxel_count() * channels;
        if data.len() != expected {
            return Err(VolumeError::DataLength { got: data.len(), expected });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(FeatureGrid { dims, channels, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        debug_assert!(c < self.channels);
        self.data[c + self.channels * self.dims.index(x, y, z)]
    }
}
