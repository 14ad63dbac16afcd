//! Voxel-grid centroid downsampling.

use crate::geometry::{Point3, StructuredCloud};

/// Downsampled points with, for each output point, the structured indices it
/// was averaged from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Downsampled {
    pub points: Vec<Point3>,
    pub members: Vec<Vec<usize>>,
}

impl Downsampled {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub type VoxelKey = (i64, i64, i64);

/// Integer cell of `p` on a grid with edge `1 / inv_leaf`.
pub fn key(p: &Point3, inv_leaf: f64) -> VoxelKey {
    (
        (p.x * inv_leaf).floor() as i64,
        (p.y * inv_leaf).floor() as i64,
        (p.z * inv_leaf).floor() as i64,
    )
}

/// Groups `(index, point)` pairs by voxel and averages each group. Output is
/// ordered by voxel key so it does not depend on input order.
fn downsample_indexed<'a>(items: impl Iterator<Item = (usize, &'a Point3)>, leaf: f64) -> Downsampled {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let inv = 1.0 / leaf;
    let mut keyed: Vec<(VoxelKey, usize, Point3)> = items.map(|(i, p)| (key(p, inv), i, *p)).collect();
    keyed.sort_unstable_by_key(|a| (a.0, a.1));

    let mut out = Downsampled::default();
    let mut start = 0;
    while start < keyed.len() {
        let k = keyed[start].0;
        let mut end = start;
        let mut sum = Point3::zeros();
        let mut members = Vec::new();
        while end < keyed.len() && keyed[end].0 == k {
            sum += keyed[end].2;
            members.push(keyed[end].1);
            end += 1;
        }
        out.points.push(sum / (end - start) as f64);
        out.members.push(members);
        start = end;
    }
    out
}

/// One centroid per occupied voxel of edge `leaf` over the valid points.
pub fn voxel_downsample(cloud: &StructuredCloud, leaf: f64) -> Downsampled {
    downsample_indexed(cloud.iter_valid(), leaf)
}

/// Same as [`voxel_downsample`] for a bare point list.
pub fn voxel_downsample_points(points: &[Point3], leaf: f64) -> Vec<Point3> {
    downsample_indexed(points.iter().enumerate(), leaf).points
}
