//! Boxes, point clouds, region cropping, masks and rotated-box IoU.
//!
//! Nothing in here is learned. All functions are pure.

mod box3d;
mod cloud;
mod iou;
mod region;

pub use box3d::{apply_box_offset, normalize_angle, Box3D};
pub use cloud::{farthest_point_sample, points_in_box, PointCloud};
pub(crate) use cloud::dist2;
pub use iou::{bev_intersection_area, clip_polygon, iou3d, polygon_area};
pub use region::{
    build_masks, crop_indices, crop_region, CropParams, RegionKind, RegionSample, SEARCH_MASK,
    TEMPLATE_BG_MASK, TEMPLATE_FG_MASK,
};
