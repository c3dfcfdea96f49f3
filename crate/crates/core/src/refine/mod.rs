//! Score-map refinement from image appearance: pixel-adaptive propagation,
//! SLIC superpixel averaging and dense-CRF mean field.

mod crf;
mod pamr;
mod slic;

pub use crf::{crf_refine, CrfKernel, CrfParams, UNARY_CLAMP};
pub use pamr::{pamr_refine, Affinity, PamrParams};
pub use slic::{slic, superpixel_refine, SlicParams, SuperpixelSegmentation};
