//! Yaw-oriented 3D boxes: PCA fitting, containment and 3D IoU.

use nalgebra::{Matrix2, SymmetricEigen, Vector2, Vector3};

use crate::geometry::{wrap_half_pi, Point3};

/// Smallest extent a fitted box may have along any axis, meters.
pub const MIN_EXTENT: f64 = 0.05;

/// Box with a vertical z axis, rotated by `yaw` about world z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    /// Radians, normalized to (−π/2, π/2].
    pub yaw: f64,
    /// Full side lengths along the box x, y and z axes.
    pub extents: Vector3<f64>,
}

impl OrientedBox {
    pub fn new(center: Vector3<f64>, yaw: f64, extents: Vector3<f64>) -> Self {
        Self {
            center,
            yaw: wrap_half_pi(yaw),
            extents,
        }
    }

    pub fn volume(&self) -> f64 {
        self.extents.x * self.extents.y * self.extents.z
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            extents: self.extents + Vector3::repeat(2.0 * margin),
            ..*self
        }
    }

    /// Point expressed in the box frame (origin at the center).
    pub fn to_local(&self, p: &Point3) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let l = self.to_local(p);
        let h = self.extents * 0.5;
        l.x.abs() <= h.x && l.y.abs() <= h.y && l.z.abs() <= h.z
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let ax = Vector2::new(c, s) * (self.extents.x * 0.5);
        let ay = Vector2::new(-s, c) * (self.extents.y * 0.5);
        let o = self.center.xy();
        [o - ax - ay, o + ax - ay, o + ax + ay, o - ax + ay]
    }

    fn z_range(&self) -> (f64, f64) {
        let h = self.extents.z * 0.5;
        (self.center.z - h, self.center.z + h)
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| cross2(&poly[i], &poly[(i + 1) % n])).sum::<f64>().abs()
}

/// Intersection of two convex counter-clockwise polygons.
pub fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let edge = b - a;
        let inside = |p: &Vector2<f64>| cross2(&edge, &(p - a)) >= 0.0;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (cin, pin) = (inside(&cur), inside(&prev));
            if cin != pin {
                let d = cur - prev;
                let denom = cross2(&edge, &d);
                if denom.abs() > 0.0 {
                    let t = cross2(&edge, &(a - prev)) / denom;
                    output.push(prev + d * t);
                }
            }
            if cin {
                output.push(cur);
            }
        }
    }
    output
}

/// Volume IoU of two oriented boxes.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
    let inter = area * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fits a yaw-oriented box to world-frame points.
///
/// The yaw follows the principal axis of the xy covariance. When the xy
/// spread is isotropic the principal axis is undefined and the minimum-area
/// footprint over convex hull edge directions is used instead, preferring
/// the smallest |yaw| on ties. Extents are floored at [`MIN_EXTENT`].
pub fn pca_box(points: &[Point3]) -> OrientedBox {
    let n = points.len();
    if n == 0 {
        return OrientedBox::new(Vector3::zeros(), 0.0, Vector3::repeat(MIN_EXTENT));
    }
    let mean = points.iter().map(|p| p.xy()).sum::<Vector2<f64>>() / n as f64;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p.xy() - mean;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let (lmax, lmin) = (eig.eigenvalues.max(), eig.eigenvalues.min());
    let spread = lmax + lmin;
    let yaw = if spread <= 1e-18 {
        0.0
    } else if lmax - lmin <= 1e-9 * spread {
        min_area_yaw(points)
    } else {
        let dir = eig.eigenvectors.column(eig.eigenvalues.imax());
        wrap_half_pi(dir[1].atan2(dir[0]))
    };
    fit_with_yaw(points, yaw)
}

/// Box of the given yaw that tightly encloses the points.
pub fn fit_with_yaw(points: &[Point3], yaw: f64) -> OrientedBox {
    let yaw = wrap_half_pi(yaw);
    let (s, c) = yaw.sin_cos();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let l = Vector3::new(c * p.x + s * p.y, -s * p.x + c * p.y, p.z);
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let mid = (lo + hi) * 0.5;
    let extents = (hi - lo).map(|e| e.max(MIN_EXTENT));
    let center = Vector3::new(c * mid.x - s * mid.y, s * mid.x + c * mid.y, mid.z);
    OrientedBox { center, yaw, extents }
}

fn convex_hull(points: &[Point3]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.iter().map(|p| p.xy()).collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross2(
                    &(hull[hull.len() - 1] - hull[hull.len() - 2]),
                    &(p - hull[hull.len() - 2]),
                ) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn min_area_yaw(points: &[Point3]) -> f64 {
    let hull = convex_hull(points);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()] - hull[i];
        if e.norm() == 0.0 {
            continue;
        }
        let yaw = wrap_half_pi(e.y.atan2(e.x));
        let (s, c) = yaw.sin_cos();
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for p in &hull {
            let l = Vector2::new(c * p.x + s * p.y, -s * p.x + c * p.y);
            lo = lo.inf(&l);
            hi = hi.sup(&l);
        }
        let area = (hi - lo).product();
        let better = match best {
            None => true,
            Some((ba, by)) => {
                let tol = 1e-9 * ba.max(1e-12);
                area < ba - tol || ((area - ba).abs() <= tol && yaw.abs() < by.abs() - 1e-12)
            }
        };
        if better {
            best = Some((area, yaw));
        }
    }
    best.map_or(0.0, |b| b.1)
}
