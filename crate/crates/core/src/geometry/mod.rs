//! Post-processing of a segmentation into a length: keep the largest
//! connected component, find its principal axis and take the range of pixel
//! projections onto it.

mod axis;
mod components;
mod mask;

pub use axis::{leading_eigenvector, length_along_axis, measure_mask, principal_axis, AxisMeasurement};
pub use components::{label_components, largest_component};
pub use mask::{BinaryMask, Spacing};
