//! Deterministic synthetic LiDAR sequences with ground-truth poses and
//! per-point dynamic labels.
//!
//! A scene is a ground plane, static boxes and cylinders, and moving actors
//! following parametric trajectories. Every pixel ray of the sensor model is
//! cast analytically against the scene.

pub mod fixtures;
mod io;
mod raycast;

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, SensorModel};

pub use io::{
    read_cloud, read_labels, spec_hash, write_cloud, write_labels, write_sequence, Dataset, DatasetFrame, Manifest,
    CLOUD_MAGIC, FORMAT_VERSION,
};
pub use raycast::{render_frame, Hit, Primitive};

/// Per-point ground-truth class codes as stored in label files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PointClass {
    Invalid = 0,
    Ground = 1,
    Static = 2,
    Dynamic = 3,
}

impl PointClass {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Invalid),
            1 => Some(Self::Ground),
            2 => Some(Self::Static),
            3 => Some(Self::Dynamic),
            _ => None,
        }
    }
}

/// Labels of one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLabels {
    pub height: usize,
    pub width: usize,
    pub stamp: f64,
    pub classes: Vec<PointClass>,
    /// Actor id (1-based) per point, 0 where no actor was hit.
    pub actor_ids: Vec<u16>,
    /// Sensor pose in the world frame.
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub f_up_deg: f64,
    pub f_down_deg: f64,
    pub height: usize,
    pub width: usize,
    pub max_range: f64,
    #[serde(default)]
    pub azimuth_offset: f64,
}

impl SensorSpec {
    pub fn model(&self) -> Result<SensorModel> {
        let mut m = SensorModel::new(
            self.f_up_deg.to_radians(),
            self.f_down_deg.to_radians(),
            self.height,
            self.width,
            self.max_range,
        )?;
        m.azimuth_offset = self.azimuth_offset;
        m.validate()?;
        Ok(m)
    }

    pub fn from_model(m: &SensorModel) -> Self {
        Self {
            f_up_deg: m.f_up.to_degrees(),
            f_down_deg: m.f_down.to_degrees(),
            height: m.height,
            width: m.width,
            max_range: m.max_range,
            azimuth_offset: m.azimuth_offset,
        }
    }
}

/// Static scene element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticPrimitive {
    Box {
        center: [f64; 3],
        #[serde(default)]
        yaw: f64,
        size: [f64; 3],
    },
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

/// Planar path of an actor, parameterized by time since it started moving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Linear {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    Circular {
        center: [f64; 2],
        radius: f64,
        /// Signed speed along the circle, m/s (positive is counter-clockwise).
        speed: f64,
        /// Start angle, radians.
        #[serde(default)]
        phase: f64,
    },
    Waypoints {
        points: Vec<[f64; 2]>,
        speed: f64,
        #[serde(default)]
        looped: bool,
    },
}

impl Trajectory {
    /// Position and heading after `s ≥ 0` seconds of motion.
    pub fn at(&self, s: f64) -> (Vector2<f64>, f64) {
        match self {
            Trajectory::Linear { start, velocity } => {
                let v = Vector2::from(*velocity);
                let heading = if v.norm() > 0.0 { v.y.atan2(v.x) } else { 0.0 };
                (Vector2::from(*start) + v * s, heading)
            }
            Trajectory::Circular {
                center,
                radius,
                speed,
                phase,
            } => {
                let theta = phase + speed * s / radius;
                let p = Vector2::from(*center) + *radius * Vector2::new(theta.cos(), theta.sin());
                let heading = theta + speed.signum() * PI / 2.0;
                (p, heading)
            }
            Trajectory::Waypoints { points, speed, looped } => waypoint_at(points, *speed, *looped, s),
        }
    }

    pub fn speed(&self) -> f64 {
        match self {
            Trajectory::Linear { velocity, .. } => Vector2::from(*velocity).norm(),
            Trajectory::Circular { speed, .. } => speed.abs(),
            Trajectory::Waypoints { speed, .. } => *speed,
        }
    }
}

fn waypoint_at(points: &[[f64; 2]], speed: f64, looped: bool, s: f64) -> (Vector2<f64>, f64) {
    let pts: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::from(*p)).collect();
    match pts.len() {
        0 => return (Vector2::zeros(), 0.0),
        1 => return (pts[0], 0.0),
        _ => {}
    }
    let mut legs: Vec<(Vector2<f64>, Vector2<f64>)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    if looped {
        legs.push((pts[pts.len() - 1], pts[0]));
    }
    let total: f64 = legs.iter().map(|(a, b)| (b - a).norm()).sum();
    let mut dist = speed * s;
    if looped && total > 0.0 {
        dist = dist.rem_euclid(total);
    }
    let heading = |a: &Vector2<f64>, b: &Vector2<f64>| (b.y - a.y).atan2(b.x - a.x);
    for (a, b) in &legs {
        let len = (b - a).norm();
        if dist <= len && len > 0.0 {
            return (a + (b - a) * (dist / len), heading(a, b));
        }
        dist -= len;
    }
    let (a, b) = legs[legs.len() - 1];
    (b, heading(&a, &b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActorShape {
    Box {
        size: [f64; 3],
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// A body box plus a second box whose lateral offset oscillates
    /// sinusoidally, a crude non-rigid walker.
    Articulated {
        body: [f64; 3],
        limb: [f64; 3],
        /// Peak offset of the limb along the heading, meters.
        amplitude: f64,
        frequency_hz: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub shape: ActorShape,
    pub trajectory: Trajectory,
    /// Time at which the actor starts moving; it is parked at the
    /// trajectory start before that.
    #[serde(default)]
    pub start_time: f64,
}

impl Actor {
    /// Planar position and heading at scene time `t`.
    pub fn pose_at(&self, t: f64) -> (Vector2<f64>, f64) {
        self.trajectory.at((t - self.start_time).max(0.0))
    }

    pub fn is_moving_at(&self, t: f64) -> bool {
        t >= self.start_time && self.trajectory.speed() > 0.0
    }

    /// Solid primitives of the actor at time `t`, standing on `ground`.
    pub fn primitives_at(&self, t: f64, ground: f64) -> Vec<Primitive> {
        let (p, heading) = self.pose_at(t);
        match self.shape {
            ActorShape::Box { size } => vec![Primitive::oriented_box(
                Vector3::new(p.x, p.y, ground + size[2] / 2.0),
                heading,
                Vector3::from(size),
            )],
            ActorShape::Cylinder { radius, height } => {
                vec![Primitive::cylinder(p, radius, ground, ground + height)]
            }
            ActorShape::Articulated {
                body,
                limb,
                amplitude,
                frequency_hz,
            } => {
                let s = (t - self.start_time).max(0.0);
                let swing = amplitude * (2.0 * PI * frequency_hz * s).sin();
                let fwd = Vector2::new(heading.cos(), heading.sin());
                let side = Vector2::new(-fwd.y, fwd.x);
                let limb_xy = p + side * ((body[1] + limb[1]) / 2.0) + fwd * swing;
                vec![
                    Primitive::oriented_box(
                        Vector3::new(p.x, p.y, ground + body[2] / 2.0),
                        heading,
                        Vector3::from(body),
                    ),
                    Primitive::oriented_box(
                        Vector3::new(limb_xy.x, limb_xy.y, ground + limb[2] / 2.0),
                        heading,
                        Vector3::from(limb),
                    ),
                ]
            }
        }
    }
}

/// Trajectory of the sensor. Positions are of the sensor origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EgoTrajectory {
    Static {
        position: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    Linear {
        start: [f64; 3],
        velocity: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    /// Lemniscate `x = a·sin(ωt)`, `y = b·sin(2ωt)/2` with the sensor facing
    /// along its direction of travel.
    FigureEight {
        center: [f64; 3],
        a: f64,
        b: f64,
        period: f64,
    },
}

impl EgoTrajectory {
    pub fn pose_at(&self, t: f64) -> RigidTransform {
        match self {
            EgoTrajectory::Static { position, yaw } => RigidTransform::from_yaw(*yaw, Vector3::from(*position)),
            EgoTrajectory::Linear { start, velocity, yaw } => {
                RigidTransform::from_yaw(*yaw, Vector3::from(*start) + Vector3::from(*velocity) * t)
            }
            EgoTrajectory::FigureEight { center, a, b, period } => {
                let w = 2.0 * PI / period;
                let pos = Vector3::new(
                    center[0] + a * (w * t).sin(),
                    center[1] + b * (2.0 * w * t).sin() / 2.0,
                    center[2],
                );
                let vel = Vector2::new(a * w * (w * t).cos(), b * w * (2.0 * w * t).cos());
                RigidTransform::from_yaw(vel.y.atan2(vel.x), pos)
            }
        }
    }
}

/// Complete description of a synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// World z of the ground plane, or none for no ground.
    pub ground_height: Option<f64>,
    #[serde(default)]
    pub statics: Vec<StaticPrimitive>,
    #[serde(default)]
    pub actors: Vec<Actor>,
    pub ego: EgoTrajectory,
    pub sensor: SensorSpec,
    pub frames: usize,
    pub frame_dt: f64,
    /// Standard deviation of additive range noise, meters.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.sensor.model()?;
        if !(self.frame_dt > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "scene frame_dt must be positive and noise_sigma non-negative".into(),
            ));
        }
        if self
            .actors
            .iter()
            .any(|a| a.trajectory.speed() < 0.0 || !a.trajectory.speed().is_finite())
        {
            return Err(Error::Config("actor speeds must be finite and non-negative".into()));
        }
        if u16::try_from(self.actors.len()).is_err() {
            return Err(Error::Config("too many actors".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec is always serializable")
    }

    pub fn stamp(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_dt
    }

    pub fn ego_pose(&self, frame: usize) -> RigidTransform {
        self.ego.pose_at(self.stamp(frame))
    }

    /// First frame at which actor `index` (0-based) is moving.
    pub fn first_motion_frame(&self, index: usize) -> Option<usize> {
        let actor = self.actors.get(index)?;
        (0..self.frames).find(|&k| actor.is_moving_at(self.stamp(k)))
    }
}
