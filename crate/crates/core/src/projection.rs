//! Range and residual images built through the cylindrical sensor model.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PixelCoord, Point3, SensorModel, StructuredCloud};

/// Dense row-major image sharing the cloud's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[u * self.width + v]
    }

    pub fn at(&self, px: PixelCoord) -> T {
        self.get(px.u, px.v)
    }

    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[u * self.width + v] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Per-pixel range in meters; 0 marks an invalid pixel.
pub type RangeImage = Image<f64>;

/// Per-pixel registration residual in meters; 0 marks an absent residual.
pub type ResidualImage = Image<f64>;

/// Pixel of a sensor-frame point (cylindrical projection).
///
/// Rows are counted down from the upper aperture angle. The column is the
/// azimuth `atan2(y, x)` minus the model's azimuth offset, wrapped into
/// `[0, width)`.
pub fn project_point(p: &Point3, m: &SensorModel) -> Result<PixelCoord> {
    let planar = (p.x * p.x + p.y * p.y).sqrt();
    if planar == 0.0 {
        return Err(Error::DegenerateInput("point on the sensor z axis"));
    }
    let elevation = (p.z / planar).atan();
    let row = (m.f_up - elevation) / m.alpha_v();
    let h = m.height as f64;
    if row < -0.5 || row > h + 0.5 || !row.is_finite() {
        return Err(Error::OutOfFieldOfView { elevation });
    }
    let u = (row.floor().max(0.0) as usize).min(m.height - 1);
    let azimuth = p.y.atan2(p.x) - m.azimuth_offset;
    let col = (azimuth / m.alpha_h()).floor() as i64;
    let v = col.rem_euclid(m.width as i64) as usize;
    Ok(PixelCoord { u, v })
}

/// Row-major index to pixel.
pub fn index_to_pixel(i: usize, height: usize, width: usize) -> Result<PixelCoord> {
    let len = height * width;
    if i >= len || width == 0 {
        return Err(Error::IndexOutOfBounds { index: i, len });
    }
    Ok(PixelCoord {
        u: i / width,
        v: i % width,
    })
}

fn check_structured(c: &StructuredCloud, m: &SensorModel) -> Result<()> {
    if c.height != m.height || c.width != m.width {
        return Err(Error::dims(
            format!("{}x{}", m.height, m.width),
            format!("{}x{}", c.height, c.width),
        ));
    }
    Ok(())
}

fn is_structured_for(c: &StructuredCloud, m: &SensorModel) -> bool {
    c.height > 1 || (c.height == m.height && c.width == m.width)
}

/// Range image of a sensor-frame cloud.
///
/// Structured clouds map index `i` straight to its pixel. Unstructured
/// (single-row) clouds go through [`project_point`] and the nearer range wins
/// on collisions. Ranges beyond `max_range` are treated as invalid.
pub fn build_range_image(c: &StructuredCloud, m: &SensorModel) -> Result<RangeImage> {
    let mut img = Image::filled(m.height, m.width, 0.0);
    if is_structured_for(c, m) {
        check_structured(c, m)?;
        for (i, p) in c.iter_valid() {
            let r = p.norm();
            if r > 0.0 && r <= m.max_range {
                img.data[i] = r;
            }
        }
    } else {
        for (_, p) in c.iter_valid() {
            let r = p.norm();
            if !(r > 0.0 && r <= m.max_range) {
                continue;
            }
            let Ok(px) = project_point(p, m) else {
                continue;
            };
            let cell = &mut img.data[px.index(m.width)];
            if *cell == 0.0 || r < *cell {
                *cell = r;
            }
        }
    }
    Ok(img)
}

/// Writes each registration point's residual at its projected pixel.
/// Collisions keep the larger residual; points outside the field of view are
/// skipped.
pub fn build_residual_image(points: &[Point3], residuals: &[f64], m: &SensorModel) -> Result<ResidualImage> {
    if points.len() != residuals.len() {
        return Err(Error::dims(format!("{} residuals", points.len()), residuals.len()));
    }
    let mut img = Image::filled(m.height, m.width, 0.0);
    for (p, &r) in points.iter().zip(residuals) {
        let Ok(px) = project_point(p, m) else {
            continue;
        };
        let cell = &mut img.data[px.index(m.width)];
        if r > *cell {
            *cell = r;
        }
    }
    Ok(img)
}

/// Residual image for a downsampled structured scan: each registration point
/// writes its residual to every structured pixel it represents.
pub fn build_residual_image_indexed(
    members: &[Vec<usize>],
    residuals: &[f64],
    height: usize,
    width: usize,
) -> Result<ResidualImage> {
    if members.len() != residuals.len() {
        return Err(Error::dims(format!("{} residuals", members.len()), residuals.len()));
    }
    let mut img = Image::filled(height, width, 0.0);
    let len = img.len();
    for (idx, &r) in members.iter().zip(residuals) {
        for &i in idx {
            if i >= len {
                return Err(Error::IndexOutOfBounds { index: i, len });
            }
            if r > img.data[i] {
                img.data[i] = r;
            }
        }
    }
    Ok(img)
}

/// Dumps a metric image as a 16-bit binary PGM, millimeter-quantized.
pub fn write_pgm_mm(img: &Image<f64>, path: &Path) -> Result<()> {
    let samples = img
        .data
        .iter()
        .map(|&x| (x * 1000.0).round().clamp(0.0, 65535.0) as u16);
    write_pgm16(img.height, img.width, samples, path)
}

pub(crate) fn write_pgm16(height: usize, width: usize, samples: impl Iterator<Item = u16>, path: &Path) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        buf.extend_from_slice(&s.to_be_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
