//! Differentiable 2D stand-in for the warping and decoding stages: a dense
//! flow driven by keypoint pairs, bilinear backward warping, and region masks.

mod flow;
mod image;
mod mask;
mod warp;

pub use flow::{flow_weights, keypoint_flow, keypoint_flow_graph, FlowField};
pub use image::{pixel_to_normalized, ImageGrid};
pub use mask::{region_mask, Region, RegionMask};
pub use warp::{bilinear_warp, bilinear_warp_graph, render, render_graph};
