//! Image preparation: annotation removal, intensity normalization and
//! train-time augmentation.

mod augment;
mod image;
mod inpaint;
mod intensity;
pub mod io;
mod rotate;

pub use augment::{apply_augmentation, augment, AugmentParams, AugmentationSpec, PAPER_MAX_ROTATION_DEG};
pub use image::GrayImage;
pub use inpaint::{
    inpaint_biharmonic, inpaint_biharmonic_with, InpaintOptions, InpaintStats, DEFAULT_TOLERANCE, ITERATIONS_PER_PIXEL,
    MAX_DEFECT_FRACTION,
};
pub use intensity::{
    adaptive_equalize, gamma_correct, normalize_intensity, tile_bounds, tile_mapping, EQUALIZE_BINS, EQUALIZE_CLIP,
    EQUALIZE_TILES, NORMALIZE_SPAN_SD,
};
pub use rotate::{rotate_image, rotate_mask};
