use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruthLabels, PointClass, SceneSpec, StaticPrimitive};
use crate::error::Result;
use crate::geometry::{Frame, Point3, StructuredCloud};
use crate::par;

const T_MIN: f64 = 1e-9;

/// Solid used for ray casting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Plane {
        z: f64,
    },
    OrientedBox {
        center: Vector3<f64>,
        yaw: f64,
        half: Vector3<f64>,
    },
    Cylinder {
        center: Vector2<f64>,
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Primitive {
    pub fn oriented_box(center: Vector3<f64>, yaw: f64, size: Vector3<f64>) -> Self {
        Primitive::OrientedBox {
            center,
            yaw,
            half: size / 2.0,
        }
    }

    pub fn cylinder(center: Vector2<f64>, radius: f64, z_min: f64, z_max: f64) -> Self {
        Primitive::Cylinder {
            center,
            radius,
            z_min,
            z_max,
        }
    }

    /// Distance along the unit ray `o + t·d` to the first surface hit.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Plane { z } => {
                if d.z.abs() < 1e-15 {
                    return None;
                }
                let t = (z - o.z) / d.z;
                (t > T_MIN).then_some(t)
            }
            Primitive::OrientedBox { center, yaw, half } => {
                let (s, c) = yaw.sin_cos();
                let rel = o - center;
                let lo = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
                let ld = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if ld[k].abs() < 1e-15 {
                        if lo[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[k] - lo[k]) / ld[k];
                    let b = (half[k] - lo[k]) / ld[k];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                (t_near <= t_far && t_near > T_MIN).then_some(t_near)
            }
            Primitive::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let mut best: Option<f64> = None;
                let mut take = |t: f64| {
                    if t > T_MIN && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let ox = o.x - center.x;
                let oy = o.y - center.y;
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = 2.0 * (ox * d.x + oy * d.y);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                            let z = o.z + t * d.z;
                            if z >= z_min && z <= z_max {
                                take(t);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for zc in [z_min, z_max] {
                        let t = (zc - o.z) / d.z;
                        let (x, y) = (ox + t * d.x, oy + t * d.y);
                        if x * x + y * y <= radius * radius {
                            take(t);
                        }
                    }
                }
                best
            }
        }
    }
}

impl From<StaticPrimitive> for Primitive {
    fn from(p: StaticPrimitive) -> Self {
        match p {
            StaticPrimitive::Box { center, yaw, size } => {
                Primitive::oriented_box(Vector3::from(center), yaw, Vector3::from(size))
            }
            StaticPrimitive::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => Primitive::cylinder(Vector2::from(center), radius, z_min, z_max),
        }
    }
}

/// Nearest hit of a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub class: PointClass,
    /// 1-based actor id, 0 for scene geometry.
    pub actor: u16,
}

struct SceneAt {
    solids: Vec<(Primitive, PointClass, u16)>,
}

impl SceneAt {
    fn new(spec: &SceneSpec, t: f64) -> Self {
        let ground = spec.ground_height.unwrap_or(0.0);
        let mut solids = Vec::new();
        if let Some(z) = spec.ground_height {
            solids.push((Primitive::Plane { z }, PointClass::Ground, 0));
        }
        solids.extend(
            spec.statics
                .iter()
                .map(|s| (Primitive::from(*s), PointClass::Static, 0)),
        );
        for (i, a) in spec.actors.iter().enumerate() {
            let id = (i + 1) as u16;
            solids.extend(
                a.primitives_at(t, ground)
                    .into_iter()
                    .map(|p| (p, PointClass::Dynamic, id)),
            );
        }
        Self { solids }
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (prim, class, actor) in &self.solids {
            if let Some(t) = prim.intersect(o, d) {
                if t <= max_range && best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        class: *class,
                        actor: *actor,
                    });
                }
            }
        }
        best
    }
}

fn row_seed(seed: u64, frame: usize, row: usize) -> u64 {
    // splitmix-style mixing so neighboring rows get unrelated streams
    let mut z = seed ^ ((frame as u64) << 20) ^ (row as u64);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ray casts frame `frame`: one ray through every pixel center, from the ego
/// pose. Returns the sensor-frame structured cloud and its labels.
pub fn render_frame(spec: &SceneSpec, frame: usize) -> Result<(StructuredCloud, GroundTruthLabels)> {
    let m = spec.sensor.model()?;
    let stamp = spec.stamp(frame);
    let pose = spec.ego_pose(frame);
    let scene = SceneAt::new(spec, stamp);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma is positive"));

    type Row = Vec<(Point3, bool, PointClass, u16)>;
    let rows: Vec<Row> = par::map_range(m.height, |u| {
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed(spec.seed, frame, u));
        (0..m.width)
            .map(|v| {
                let ds = m.ray_direction(u, v);
                let dw = pose.rotation * ds;
                let n = noise.map_or(0.0, |n| n.sample(&mut rng));
                match scene.cast(&pose.translation, &dw, m.max_range) {
                    Some(hit) => {
                        let r = (hit.t + n).max(T_MIN);
                        (ds * r, true, hit.class, hit.actor)
                    }
                    None => (Point3::zeros(), false, PointClass::Invalid, 0),
                }
            })
            .collect()
    });

    let n = m.height * m.width;
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut actor_ids = Vec::with_capacity(n);
    for (p, ok, c, a) in rows.into_iter().flatten() {
        points.push(p);
        valid.push(ok);
        classes.push(c);
        actor_ids.push(a);
    }
    let cloud = StructuredCloud::new(m.height, m.width, points, valid, Frame::Sensor, stamp)?;
    let labels = GroundTruthLabels {
        height: m.height,
        width: m.width,
        stamp,
        classes,
        actor_ids,
        pose,
    };
    Ok((cloud, labels))
}
