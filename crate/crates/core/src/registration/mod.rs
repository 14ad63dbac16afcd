//! Two-stage GICP odometry: scan-to-scan prior, scan-to-submap refinement,
//! and per-point residuals for moving object detection.

mod gicp;
pub mod kdtree;
mod odometry;
pub mod voxel;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, StructuredCloud};
use crate::par;

pub use gicp::{gicp_align, point_residuals, residuals, Correspondences, GicpParams, GicpResult};
pub use kdtree::KdTree;
pub use odometry::{register_scan, ScanRegistration};
pub use voxel::{voxel_downsample, voxel_downsample_points, Downsampled};

/// Smallest eigenvalue assigned by the plane-to-plane regularization.
pub const COVARIANCE_EPSILON: f64 = 1e-3;

/// Downsampled points with per-point covariances and a nearest-neighbor index.
#[derive(Debug, Clone)]
pub struct RegistrationCloud {
    pub covariances: Vec<Matrix3<f64>>,
    pub tree: KdTree,
}

impl RegistrationCloud {
    pub fn new(points: Vec<Point3>, k_covariance: usize) -> Result<Self> {
        let tree = KdTree::new(points);
        let covariances = estimate_covariances_with(&tree, k_covariance)?;
        Ok(Self { covariances, tree })
    }

    /// Reuses precomputed covariances; only the search tree is built.
    pub fn from_parts(points: Vec<Point3>, covariances: Vec<Matrix3<f64>>) -> Result<Self> {
        if points.len() != covariances.len() {
            return Err(Error::LengthMismatch {
                left: points.len(),
                right: covariances.len(),
            });
        }
        Ok(Self {
            covariances,
            tree: KdTree::new(points),
        })
    }

    /// Downsamples a scan and builds the registration structures. Also returns
    /// the voxel membership of each registration point.
    pub fn from_scan(scan: &StructuredCloud, p: &GicpParams) -> Result<(Self, Vec<Vec<usize>>)> {
        let ds = voxel_downsample(scan, p.voxel_leaf);
        let cloud = Self::new(ds.points, p.k_covariance)?;
        Ok((cloud, ds.members))
    }

    pub fn points(&self) -> &[Point3] {
        self.tree.points()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

/// Per-point covariance of the `k` nearest neighbors (plus the point itself),
/// regularized to eigenvalues `(1, 1, ε)` in the local frame.
pub fn estimate_covariances(points: &[Point3], k: usize) -> Result<Vec<Matrix3<f64>>> {
    estimate_covariances_with(&KdTree::new(points.to_vec()), k)
}

fn estimate_covariances_with(tree: &KdTree, k: usize) -> Result<Vec<Matrix3<f64>>> {
    let n = tree.len();
    if n < k + 1 || k < 2 {
        return Err(Error::TooFewPoints {
            needed: (k + 1).max(3),
            got: n,
        });
    }
    let points = tree.points();
    Ok(par::map(points, |p| {
        let nn = tree.knn(p, k + 1);
        let mean = nn.iter().map(|&(i, _)| points[i]).sum::<Vector3<f64>>() / nn.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(i, _) in &nn {
            let d = points[i] - mean;
            cov += d * d.transpose();
        }
        regularize(&(cov / nn.len() as f64))
    }))
}

/// Replaces the eigenvalues of a covariance with `(ε, 1, 1)`, smallest first.
pub fn regularize(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let smallest = eig.eigenvalues.imin();
    let mut values = Vector3::repeat(1.0);
    values[smallest] = COVARIANCE_EPSILON;
    let v = eig.eigenvectors;
    let c = v * Matrix3::from_diagonal(&values) * v.transpose();
    (c + c.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normal_is_smallest_direction() {
        let normal = Vector3::new(1.0, 2.0, 2.0).normalize();
        let a = normal.cross(&Vector3::x()).normalize();
        let b = normal.cross(&a);
        let pts: Vec<Point3> = (0..15)
            .flat_map(|i| (0..15).map(move |j| (i, j)))
            .map(|(i, j)| a * (i as f64 * 0.1) + b * (j as f64 * 0.13) + normal * 4.0)
            .collect();
        let covs = estimate_covariances(&pts, 10).unwrap();
        for c in covs {
            let eig = SymmetricEigen::new(c);
            let dir = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            assert!(1.0 - dir.dot(&normal).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_points_regularize_to_unit_and_epsilon() {
        let pts: Vec<Point3> = (0..12).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let covs = estimate_covariances(&pts, 10).unwrap();
        for c in covs {
            let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((ev[0] - COVARIANCE_EPSILON).abs() < 1e-12);
            assert!((ev[1] - 1.0).abs() < 1e-12 && (ev[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Point3::zeros(); 5];
        assert!(matches!(
            estimate_covariances(&pts, 10),
            Err(Error::TooFewPoints { .. })
        ));
    }
}
