//! Anatomy-aware ROI selection: turn a global anomaly mask into per-component
//! regional mask prompts, and apply mask prompts to feature grids.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::morphology::{connected_components, Connectivity};
use crate::volume::{AtlasLabelMap, BinaryMask, Dims, FeatureGrid, VolumeError};

#[derive(Debug, Error, PartialEq)]
pub enum RoiError {
    #[error("anomaly dims {0:?} do not match atlas dims {1:?}")]
    DimsMismatch(Dims, Dims),
    #[error("a prompt must name at least one structure")]
    EmptyPrompt,
    #[error("mask dims {mask:?} are not an integer multiple of feature dims {features:?}")]
    NonIntegerDownsample { mask: Dims, features: Dims },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, RoiError>;

/// A mask prompt for one region of interest.
///
/// For a non-global prompt derived from an anomaly component, `mask` is the
/// union of the whole structures the component overlaps. A component lying
/// entirely on background keeps its own mask and an empty label set. The
/// global prompt is all-true with no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalPrompt {
    pub component_index: usize,
    pub structure_labels: BTreeSet<u16>,
    pub mask: BinaryMask,
    pub is_global: bool,
}

/// One prompt per connected anomaly component, in component order (voxel
/// count descending, ties by smallest linear index).
pub fn regional_prompts(
    anomaly: &BinaryMask,
    atlas: &AtlasLabelMap,
    connectivity: Connectivity,
) -> Result<Vec<RegionalPrompt>> {
    if anomaly.dims() != atlas.dims() {
        return Err(RoiError::DimsMismatch(anomaly.dims(), atlas.dims()));
    }
    let mut prompts = Vec::new();
    for (component_index, component) in connected_components(anomaly, connectivity).into_iter().enumerate() {
        let mut structure_labels = BTreeSet::new();
        for i in component.iter_true() {
            let label = atlas.label_at_linear(i);
            if label != 0 {
                structure_labels.insert(label);
            }
        }
        let mask = if structure_labels.is_empty() {
            component
        } else {
            let mut union = BinaryMask::empty(atlas.dims());
            for &label in &structure_labels {
                union.or_with(&atlas.structure_mask(label)?);
            }
            union
        };
        prompts.push(RegionalPrompt { component_index, structure_labels, mask, is_global: false });
    }
    Ok(prompts)
}

/// The all-one prompt covering the whole grid.
pub fn global_prompt(dims: Dims) -> RegionalPrompt {
    RegionalPrompt {
        component_index: 0,
        structure_labels: BTreeSet::new(),
        mask: BinaryMask::full(dims),
        is_global: true,
    }
}

/// A user-supplied prompt naming one or more structures.
pub fn prompt_from_structures(atlas: &AtlasLabelMap, labels: &BTreeSet<u16>) -> Result<RegionalPrompt> {
    if labels.is_empty() {
        return Err(RoiError::EmptyPrompt);
    }
    let mut mask = BinaryMask::empty(atlas.dims());
    for &label in labels {
        mask.or_with(&atlas.structure_mask(label)?);
    }
    Ok(RegionalPrompt {
        component_index: 0,
        structure_labels: labels.clone(),
        mask,
        is_global: false,
    })
}

/// Applies a mask prompt to a feature grid, producing the channel
/// concatenation `[f_g ; f_l]` with `f_l = f_g * M`.
///
/// The prompt mask lives at scan resolution; it is first downsampled to the
/// feature resolution with an any-true rule over each `k_x * k_y * k_z`
/// block, where the per-axis factors `k` must be integers.
pub fn mask_prompt_features(features: &FeatureGrid, prompt_mask: &BinaryMask) -> Result<FeatureGrid> {
    let fd = features.dims();
    let md = prompt_mask.dims();
    if md.nx % fd.nx != 0 || md.ny % fd.ny != 0 || md.nz % fd.nz != 0 {
        return Err(RoiError::NonIntegerDownsample { mask: md, features: fd });
    }
    let (kx, ky, kz) = (md.nx / fd.nx, md.ny / fd.ny, md.nz / fd.nz);

    let mut coarse = BinaryMask::empty(fd);
    for i in prompt_mask.iter_true() {
        let (x, y, z) = md.coords(i);
        coarse.set(x / kx, y / ky, z / kz, true);
    }

    let c = features.channels();
    let mut data = Vec::with_capacity(features.data().len() * 2);
    for z in 0..fd.nz {
        for y in 0..fd.ny {
            for x in 0..fd.nx {
                for ch in 0..c {
                    data.push(features.at(ch, x, y, z));
                }
                let keep = coarse.get(x, y, z);
                for ch in 0..c {
                    data.push(if keep { features.at(ch, x, y, z) } else { 0.0 });
                }
            }
        }
    }
    Ok(FeatureGrid::new(fd, 2 * c, data).expect("constructed from finite inputs"))
}
