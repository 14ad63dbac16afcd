//! Segments → detections: 3D recovery, PCA boxes and average residuals.

use crate::bbox::{pca_box, OrientedBox};
use crate::error::{Error, Result};
use crate::geometry::{PixelCoord, Point3, StructuredCloud};
use crate::par;
use crate::projection::ResidualImage;
use crate::segmentation::{segment_count, LabelImage};

/// A labeled region of the range image with its recovered points.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub label: i32,
    pub pixels: Vec<PixelCoord>,
    /// Indices into the structured cloud (row-major).
    pub point_indices: Vec<usize>,
    pub avg_residual: f64,
    /// World z range of the segment's points.
    pub height_span: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub point_indices: Vec<usize>,
    pub point_count: usize,
    pub avg_residual: f64,
    pub height_span: f64,
    pub stamp: f64,
}

/// Which segments are handed to the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    pub min_points: usize,
    /// Segments whose footprint exceeds this along either axis are treated
    /// as structure (walls, facades) rather than objects.
    pub max_footprint: f64,
    pub max_height: f64,
    /// Horizontal distance from the sensor beyond which segments are ignored.
    pub range_limit: f64,
    /// Voxel leaf of the cloud whose map residuals fill the residual image.
    /// Finer than the registration leaf so thin objects keep their contrast.
    pub residual_leaf: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            min_points: 12,
            max_footprint: 4.0,
            max_height: 3.0,
            range_limit: 25.0,
            residual_leaf: 0.25,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_points == 0
            || !(self.max_footprint > 0.0)
            || !(self.max_height > 0.0)
            || !(self.range_limit > 0.0)
            || !(self.residual_leaf > 0.0)
        {
            return Err(Error::Config("detection parameters must be positive".into()));
        }
        Ok(())
    }
}

/// One segment per label ≥ 1, in label order.
pub fn extract_segments(labels: &LabelImage, cloud_world: &StructuredCloud) -> Result<Vec<Segment>> {
    if labels.height != cloud_world.height || labels.width != cloud_world.width {
        return Err(Error::dims(
            format!("{}x{}", labels.height, labels.width),
            format!("{}x{}", cloud_world.height, cloud_world.width),
        ));
    }
    let k = segment_count(labels);
    let w = labels.width;
    let mut segments: Vec<Segment> = (1..=k as i32)
        .map(|label| Segment {
            label,
            pixels: Vec::new(),
            point_indices: Vec::new(),
            avg_residual: 0.0,
            height_span: 0.0,
        })
        .collect();
    let mut zr = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    for (i, &l) in labels.data.iter().enumerate() {
        if l < 1 || !cloud_world.valid[i] {
            continue;
        }
        let s = (l - 1) as usize;
        segments[s].pixels.push(PixelCoord::new(i / w, i % w));
        segments[s].point_indices.push(i);
        let z = cloud_world.points[i].z;
        zr[s] = (zr[s].0.min(z), zr[s].1.max(z));
    }
    for (s, (lo, hi)) in segments.iter_mut().zip(zr) {
        if hi >= lo {
            s.height_span = hi - lo;
        }
    }
    segments.retain(|s| !s.pixels.is_empty());
    Ok(segments)
}

/// Mean of the nonzero residual pixels covered by the segment, or 0.
pub fn average_residual(segment: &Segment, residuals: &ResidualImage) -> f64 {
    let mut n = 0usize;
    let mut r = 0.0;
    for px in &segment.pixels {
        let value = residuals.at(*px);
        if value != 0.0 {
            r += value;
            n += 1;
        }
    }
    if n > 0 {
        r / n as f64
    } else {
        0.0
    }
}

/// Builds tracker detections from the segments of one scan.
///
/// `sensor_position` is the world position of the sensor, used for the
/// range limit.
pub fn detect(
    segments: &[Segment],
    cloud_world: &StructuredCloud,
    residuals: &ResidualImage,
    sensor_position: &Point3,
    p: &DetectionParams,
    stamp: f64,
) -> Vec<Detection> {
    let candidates = par::map(segments, |s| {
        if s.point_indices.len() < p.min_points || s.height_span > p.max_height {
            return None;
        }
        let pts: Vec<Point3> = s.point_indices.iter().map(|&i| cloud_world.points[i]).collect();
        let bbox = pca_box(&pts);
        if bbox.extents.x > p.max_footprint || bbox.extents.y > p.max_footprint {
            return None;
        }
        if (bbox.center.xy() - sensor_position.xy()).norm() > p.range_limit {
            return None;
        }
        Some(Detection {
            bbox,
            point_indices: s.point_indices.clone(),
            point_count: s.point_indices.len(),
            avg_residual: average_residual(s, residuals),
            height_span: s.height_span,
            stamp,
        })
    });
    candidates.into_iter().flatten().collect()
}
