//! Volumetric toolkit for grounded brain-MRI report pipelines.
//!
//! The crate covers the deterministic, non-neural parts of such a pipeline:
//!
//! - [`volume`]: dense 3D grids (scalar volumes, binary masks, label atlases,
//!   feature grids) over one canonical x-fastest layout.
//! - [`morphology`]: binary dilation, erosion, gradients and connected
//!   components.
//! - [`synth`]: seeded synthetic lesion generation with bit-exact replay
//!   recipes.
//! - [`roi`]: anomaly-driven regional mask prompts and mask-prompt feature
//!   application.
//! - [`seg_metrics`]: DSC, precision, sensitivity, Hausdorff distance and
//!   soft Dice + cross-entropy losses.
//! - [`text_metrics`]: BLEU and ROUGE-n over a fixed tokenization.
//! - [`report`]: template-based global report assembly in three inference
//!   modes.
//! - [`vio`]: bit-exact file serialization for volumes, atlases and masks.

pub mod morphology;
pub mod report;
pub mod roi;
pub mod seg_metrics;
pub mod synth;
pub mod text_metrics;
pub mod vio;
pub mod volume;
