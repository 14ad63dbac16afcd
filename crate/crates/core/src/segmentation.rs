//! Ground removal and angle-criterion flood fill over range images.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::SensorModel;
use crate::projection::{write_pgm16, Image, RangeImage};

/// Label of a ground pixel.
pub const GROUND: i32 = -1;
/// Label of an unlabeled, invalid or suppressed pixel.
pub const UNLABELED: i32 = 0;

/// Per-pixel segment labels: `GROUND`, `UNLABELED` or a segment id ≥ 1.
pub type LabelImage = Image<i32>;

/// Per-pixel ground flags.
pub type GroundMask = Image<bool>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegParams {
    /// Minimum β angle between neighboring returns to join a segment.
    pub theta_seg: f64,
    /// Maximum inclination of a vertical pixel pair to count as ground.
    pub theta_ground: f64,
    pub min_segment_px: usize,
    pub min_segment_points: usize,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            theta_seg: 10f64.to_radians(),
            theta_ground: 10f64.to_radians(),
            min_segment_px: 12,
            min_segment_points: 12,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::FRAC_PI_2;
        if !(self.theta_seg > 0.0 && self.theta_seg < FRAC_PI_2) {
            return Err(Error::Config("seg.theta_seg must lie in (0, π/2)".into()));
        }
        if !(self.theta_ground >= 0.0 && self.theta_ground < FRAC_PI_2) {
            return Err(Error::Config("seg.theta_ground must lie in [0, π/2)".into()));
        }
        if self.min_segment_px == 0 || self.min_segment_points == 0 {
            return Err(Error::Config("seg minima must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dims<T, U>(a: &Image<T>, b: &Image<U>) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::dims(
            format!("{}x{}", a.height, a.width),
            format!("{}x{}", b.height, b.width),
        ));
    }
    Ok(())
}

/// Marks pixel pairs on downward beams whose connecting vector is flatter
/// than `theta_ground`.
pub fn remove_ground(img: &RangeImage, m: &SensorModel, p: &SegParams) -> Result<GroundMask> {
    if img.height != m.height || img.width != m.width {
        return Err(Error::dims(
            format!("{}x{}", m.height, m.width),
            format!("{}x{}", img.height, img.width),
        ));
    }
    let (h, w) = (img.height, img.width);
    let mut mask = Image::filled(h, w, false);
    let first_down = (0..h).find(|&u| m.row_elevation(u) < 0.0).unwrap_or(h);
    let dirs: Vec<_> = (0..h)
        .flat_map(|u| (0..w).map(move |v| (u, v)))
        .map(|(u, v)| m.ray_direction(u, v))
        .collect();
    for v in 0..w {
        for u in first_down..h.saturating_sub(1) {
            let (i, j) = (u * w + v, (u + 1) * w + v);
            let (r1, r2) = (img.data[i], img.data[j]);
            if r1 <= 0.0 || r2 <= 0.0 {
                continue;
            }
            let d = dirs[i] * r1 - dirs[j] * r2;
            let inclination = d.z.abs().atan2((d.x * d.x + d.y * d.y).sqrt());
            if inclination <= p.theta_ground {
                mask.data[i] = true;
                mask.data[j] = true;
            }
        }
    }
    Ok(mask)
}

/// Angle criterion between two neighboring returns `alpha` apart.
///
/// With `d1` the larger range, `β = atan2(d2·sin α, d1 − d2·cos α)` is the
/// angle at the farther point between its beam and the line to the nearer
/// point. Returns `β > theta_seg`.
pub fn neighbor_predicate(d1: f64, d2: f64, alpha: f64, p: &SegParams) -> bool {
    let (far, near) = if d1 >= d2 { (d1, d2) } else { (d2, d1) };
    let beta = (near * alpha.sin()).atan2(far - near * alpha.cos());
    beta > p.theta_seg
}

/// Breadth-first labeling of non-ground valid pixels.
///
/// Labels are assigned in row-major scan order starting at 1, with the left
/// and right image edges treated as adjacent. Components smaller than
/// `min_segment_px` are reset to 0 and the survivors renumbered densely in
/// order of first appearance.
pub fn segment(img: &RangeImage, ground: &GroundMask, m: &SensorModel, p: &SegParams) -> Result<LabelImage> {
    check_dims(img, ground)?;
    let (h, w) = (img.height, img.width);
    let (alpha_h, alpha_v) = (m.alpha_h(), m.alpha_v());
    let mut labels = Image::filled(h, w, UNLABELED);
    for i in 0..h * w {
        if ground.data[i] {
            labels.data[i] = GROUND;
        }
    }

    let mut sizes = vec![0usize]; // index 0 unused
    let mut queue = VecDeque::new();
    let mut next = 1i32;
    for start in 0..h * w {
        if labels.data[start] != UNLABELED || img.data[start] <= 0.0 {
            continue;
        }
        labels.data[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (u, v) = (i / w, i % w);
            let d = img.data[i];
            let left = u * w + (v + w - 1) % w;
            let right = u * w + (v + 1) % w;
            let mut neighbors = [(left, alpha_h), (right, alpha_h), (usize::MAX, 0.0), (usize::MAX, 0.0)];
            if u > 0 {
                neighbors[2] = (i - w, alpha_v);
            }
            if u + 1 < h {
                neighbors[3] = (i + w, alpha_v);
            }
            for (j, alpha) in neighbors {
                if j == usize::MAX || labels.data[j] != UNLABELED {
                    continue;
                }
                let dj = img.data[j];
                if dj <= 0.0 || !neighbor_predicate(d, dj, alpha, p) {
                    continue;
                }
                labels.data[j] = next;
                queue.push_back(j);
            }
        }
        sizes.push(size);
        next += 1;
    }

    let mut remap = vec![UNLABELED; sizes.len()];
    let mut dense = 0;
    for (label, &size) in sizes.iter().enumerate().skip(1) {
        if size >= p.min_segment_px {
            dense += 1;
            remap[label] = dense;
        }
    }
    for l in labels.data.iter_mut() {
        if *l > 0 {
            *l = remap[*l as usize];
        }
    }
    Ok(labels)
}

/// Number of segments (largest label) in a label image.
pub fn segment_count(labels: &LabelImage) -> usize {
    labels.data.iter().copied().max().unwrap_or(0).max(0) as usize
}

/// Dumps labels as a 16-bit PGM: ground 1, unlabeled 0, segments spread
/// over the upper gray range.
pub fn write_label_pgm(labels: &LabelImage, path: &Path) -> Result<()> {
    let samples = labels.data.iter().map(|&l| match l {
        GROUND => 1,
        UNLABELED => 0,
        l => 4096u16.wrapping_add((l as u16).wrapping_mul(7919)) | 0x1000,
    });
    write_pgm16(labels.height, labels.width, samples, path)
}
