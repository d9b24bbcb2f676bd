//! Virtual vehicle-mounted LiDAR frames from roadside LiDAR scenes.
//!
//! A roadside frame and its box annotations are re-expressed in the sensor
//! frame of a chosen vehicle ([`geometry`], [`annotations`]), range gated
//! ([`pointcloud`]), split into ground and non-ground points
//! ([`ground_segmentation`]) and resampled by a virtual spinning LiDAR
//! ([`virtual_lidar`]). [`pipeline`] ties the steps together for batches.

pub mod annotations;
pub mod geometry;
pub mod ground_segmentation;
pub mod pipeline;
pub mod pointcloud;
pub mod virtual_lidar;

pub use geometry::Vec3;
