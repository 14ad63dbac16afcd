//! Flat `section.key=value` configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! tracker.theta_res=0.12
//! gicp.voxel_leaf=0.35
//! sensor.width=1024
//! ```
//!
//! Angles are given in degrees in the file (`*_deg` keys) and stored in
//! radians. Unknown keys are rejected.

use std::path::Path;

use crate::detection::DetectionParams;
use crate::error::{Error, Result};
use crate::geometry::SensorModel;
use crate::mapping::MappingParams;
use crate::registration::GicpParams;
use crate::segmentation::SegParams;
use crate::tracking::TrackerParams;

/// Optional per-field overrides of the dataset's sensor model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SensorOverride {
    pub f_up: Option<f64>,
    pub f_down: Option<f64>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub max_range: Option<f64>,
    pub azimuth_offset: Option<f64>,
}

impl SensorOverride {
    pub fn apply(&self, base: &SensorModel) -> Result<SensorModel> {
        let m = SensorModel {
            f_up: self.f_up.unwrap_or(base.f_up),
            f_down: self.f_down.unwrap_or(base.f_down),
            height: self.height.unwrap_or(base.height),
            width: self.width.unwrap_or(base.width),
            max_range: self.max_range.unwrap_or(base.max_range),
            azimuth_offset: self.azimuth_offset.unwrap_or(base.azimuth_offset),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PipelineConfig {
    pub sensor: SensorOverride,
    pub seg: SegParams,
    pub gicp: GicpParams,
    pub tracker: TrackerParams,
    pub mapping: MappingParams,
    pub detection: DetectionParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.seg.validate()?;
        self.gicp.validate()?;
        self.tracker.validate()?;
        self.mapping.validate()?;
        self.detection.validate()
    }

    pub fn range_limit(&self) -> f64 {
        self.detection.range_limit
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            c.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        let f = |v: &str| num::<f64>(key, v);
        let u = |v: &str| num::<usize>(key, v);
        let deg = |v: &str| f(v).map(f64::to_radians);
        let n = &mut self.tracker.noise;
        match key {
            "sensor.f_up_deg" => self.sensor.f_up = Some(deg(value)?),
            "sensor.f_down_deg" => self.sensor.f_down = Some(deg(value)?),
            "sensor.height" => self.sensor.height = Some(u(value)?),
            "sensor.width" => self.sensor.width = Some(u(value)?),
            "sensor.max_range" => self.sensor.max_range = Some(f(value)?),
            "sensor.azimuth_offset" => self.sensor.azimuth_offset = Some(f(value)?),

            "seg.theta_seg_deg" => self.seg.theta_seg = deg(value)?,
            "seg.theta_ground_deg" => self.seg.theta_ground = deg(value)?,
            "seg.min_segment_px" => self.seg.min_segment_px = u(value)?,
            "seg.min_segment_points" => self.seg.min_segment_points = u(value)?,

            "gicp.max_iterations" => self.gicp.max_iterations = u(value)?,
            "gicp.rotation_eps" => self.gicp.rotation_eps = f(value)?,
            "gicp.translation_eps" => self.gicp.translation_eps = f(value)?,
            "gicp.max_correspondence_dist" => self.gicp.max_correspondence_dist = f(value)?,
            "gicp.k_covariance" => self.gicp.k_covariance = u(value)?,
            "gicp.voxel_leaf" => self.gicp.voxel_leaf = f(value)?,

            "tracker.alpha" => self.tracker.alpha = f(value)?,
            "tracker.beta" => self.tracker.beta = f(value)?,
            "tracker.cost_gate" => self.tracker.cost_gate = f(value)?,
            "tracker.max_center_dist" => self.tracker.max_center_dist = f(value)?,
            "tracker.n_miss" => self.tracker.n_miss = num(key, value)?,
            "tracker.n_min" => self.tracker.n_min = num(key, value)?,
            "tracker.n_max" => self.tracker.n_max = num(key, value)?,
            "tracker.theta_res" => self.tracker.theta_res = f(value)?,
            "tracker.theta_disp" => self.tracker.theta_disp = f(value)?,
            "tracker.min_height_span" => self.tracker.min_height_span = f(value)?,
            "tracker.noise.accel" => n.accel = f(value)?,
            "tracker.noise.shape" => n.shape = f(value)?,
            "tracker.noise.meas_pos_std" => n.meas_pos_std = f(value)?,
            "tracker.noise.meas_yaw_std" => n.meas_yaw_std = f(value)?,
            "tracker.noise.meas_ext_std" => n.meas_ext_std = f(value)?,
            "tracker.noise.init_vel_std" => n.init_vel_std = f(value)?,

            "mapping.d_kf" => self.mapping.d_kf = f(value)?,
            "mapping.r_kf_deg" => self.mapping.r_kf = deg(value)?,
            "mapping.submap_k" => self.mapping.submap_k = u(value)?,
            "mapping.window" => self.mapping.window = f(value)?,
            "mapping.inflation" => self.mapping.inflation = f(value)?,
            "mapping.keyframe_leaf" => self.mapping.keyframe_leaf = f(value)?,
            "mapping.submap_leaf" => self.mapping.submap_leaf = f(value)?,

            "detection.min_points" => self.detection.min_points = u(value)?,
            "detection.max_footprint" => self.detection.max_footprint = f(value)?,
            "detection.max_height" => self.detection.max_height = f(value)?,
            "detection.range_limit" => self.detection.range_limit = f(value)?,
            "detection.residual_leaf" => self.detection.residual_leaf = f(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in file syntax.
    pub fn to_text(&self) -> String {
        let s = &self.sensor;
        let n = &self.tracker.noise;
        let mut lines = Vec::new();
        let mut opt = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                lines.push(format!("{k}={v}"));
            }
        };
        opt("sensor.f_up_deg", s.f_up.map(|x| x.to_degrees().to_string()));
        opt("sensor.f_down_deg", s.f_down.map(|x| x.to_degrees().to_string()));
        opt("sensor.height", s.height.map(|x| x.to_string()));
        opt("sensor.width", s.width.map(|x| x.to_string()));
        opt("sensor.max_range", s.max_range.map(|x| x.to_string()));
        opt("sensor.azimuth_offset", s.azimuth_offset.map(|x| x.to_string()));
        let rest = [
            ("seg.theta_seg_deg", self.seg.theta_seg.to_degrees().to_string()),
            ("seg.theta_ground_deg", self.seg.theta_ground.to_degrees().to_string()),
            ("seg.min_segment_px", self.seg.min_segment_px.to_string()),
            ("seg.min_segment_points", self.seg.min_segment_points.to_string()),
            ("gicp.max_iterations", self.gicp.max_iterations.to_string()),
            ("gicp.rotation_eps", self.gicp.rotation_eps.to_string()),
            ("gicp.translation_eps", self.gicp.translation_eps.to_string()),
            (
                "gicp.max_correspondence_dist",
                self.gicp.max_correspondence_dist.to_string(),
            ),
            ("gicp.k_covariance", self.gicp.k_covariance.to_string()),
            ("gicp.voxel_leaf", self.gicp.voxel_leaf.to_string()),
            ("tracker.alpha", self.tracker.alpha.to_string()),
            ("tracker.beta", self.tracker.beta.to_string()),
            ("tracker.cost_gate", self.tracker.cost_gate.to_string()),
            ("tracker.max_center_dist", self.tracker.max_center_dist.to_string()),
            ("tracker.n_miss", self.tracker.n_miss.to_string()),
            ("tracker.n_min", self.tracker.n_min.to_string()),
            ("tracker.n_max", self.tracker.n_max.to_string()),
            ("tracker.theta_res", self.tracker.theta_res.to_string()),
            ("tracker.theta_disp", self.tracker.theta_disp.to_string()),
            ("tracker.min_height_span", self.tracker.min_height_span.to_string()),
            ("tracker.noise.accel", n.accel.to_string()),
            ("tracker.noise.shape", n.shape.to_string()),
            ("tracker.noise.meas_pos_std", n.meas_pos_std.to_string()),
            ("tracker.noise.meas_yaw_std", n.meas_yaw_std.to_string()),
            ("tracker.noise.meas_ext_std", n.meas_ext_std.to_string()),
            ("tracker.noise.init_vel_std", n.init_vel_std.to_string()),
            ("mapping.d_kf", self.mapping.d_kf.to_string()),
            ("mapping.r_kf_deg", self.mapping.r_kf.to_degrees().to_string()),
            ("mapping.submap_k", self.mapping.submap_k.to_string()),
            ("mapping.window", self.mapping.window.to_string()),
            ("mapping.inflation", self.mapping.inflation.to_string()),
            ("mapping.keyframe_leaf", self.mapping.keyframe_leaf.to_string()),
            ("mapping.submap_leaf", self.mapping.submap_leaf.to_string()),
            ("detection.min_points", self.detection.min_points.to_string()),
            ("detection.max_footprint", self.detection.max_footprint.to_string()),
            ("detection.max_height", self.detection.max_height.to_string()),
            ("detection.range_limit", self.detection.range_limit.to_string()),
            ("detection.residual_leaf", self.detection.residual_leaf.to_string()),
        ];
        for (k, v) in rest {
            lines.push(format!("{k}={v}"));
        }
        lines.join("\n") + "\n"
    }
}
