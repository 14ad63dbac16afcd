//! Dynamic LiDAR odometry and static map building.
//!
//! Scans are registered with scan-to-scan and scan-to-submap GICP. The
//! per-point registration residuals are projected into a range image,
//! which is segmented into objects. Objects are tracked with a box Kalman
//! filter and classified as static or dynamic from their residuals and
//! displacement; dynamic points are removed before the scan is added to
//! the map.
//!
//! The data-parallel kernels use rayon behind the default `parallel`
//! feature; without it every kernel runs sequentially with identical
//! results.

pub mod bbox;
pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mapping;
pub mod par;
pub mod pipeline;
pub mod projection;
pub mod registration;
pub mod runner;
pub mod segmentation;
pub mod synthdata;
pub mod tracking;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geometry::{Frame, PixelCoord, Point3, RigidTransform, SensorModel, StructuredCloud};
pub use pipeline::{FrameOutput, FrameReport, Pipeline};
