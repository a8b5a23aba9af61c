//! Polygon and raster geometry shared by every other subsystem.
//!
//! Coordinates are image pixels with the origin at the top-left corner,
//! `x` growing right and `y` growing down. Pixel `(i, j)` covers the unit
//! square `[i, i+1) × [j, j+1)` and its center is `(i + 0.5, j + 0.5)`.
//!
//! Polygons are interpreted with the even-odd fill rule, so
//! self-intersecting input is accepted. IoU is computed on rasters: polygons
//! are supersampled onto a [`GridSpec`] and compared bitwise. The exact
//! [`convex_intersection_area`] routine exists as a cross-check for convex
//! inputs.

mod clip;
mod contour;
mod polygon;
mod raster;
mod transform;

pub use clip::{clip_polygon_to_rect, convex_intersection_area, PixelRect};
pub use contour::mask_to_polygon;
pub use polygon::{point_in_polygon, polygon_area, Bounds, Point, Polygon, MIN_AREA};
pub use raster::{
    bbox_iou, iou, rasterize, rasterize_samples, sample_coverage, GridSpec, RasterMask, Region,
};
pub use transform::{transform_polygon, AffineTransform};

use thiserror::Error;

/// Distance under which a point counts as lying on a polygon edge.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("mask is {mask_w}x{mask_h} but grid is {grid_w}x{grid_h}")]
    GridMismatch {
        mask_w: u32,
        mask_h: u32,
        grid_w: u32,
        grid_h: u32,
    },
    #[error("polygon is not convex")]
    NotConvex,
    #[error("affine transform is singular (determinant 0)")]
    SingularTransform,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),
    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),
}
