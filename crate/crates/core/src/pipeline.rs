//! The per-scan loop: odometry, residual projection, segmentation,
//! tracking, dynamic point removal and map maintenance.

use std::sync::Arc;
use std::time::Instant;

use crate::config::PipelineConfig;
use crate::detection::{detect, extract_segments, Detection, Segment};
use crate::error::{Error, Result};
use crate::geometry::{Frame, RigidTransform, SensorModel, StructuredCloud};
use crate::mapping::{remove_dynamic_points, should_add_keyframe, BoxHistory, GlobalMap, KeyframeDb};
use crate::projection::{build_range_image, build_residual_image_indexed, RangeImage, ResidualImage};
use crate::registration::{
    point_residuals, register_scan, voxel_downsample, voxel_downsample_points, RegistrationCloud, ScanRegistration,
};
use crate::segmentation::{remove_ground, segment, segment_count, LabelImage};
use crate::tracking::{DynamicState, StateTransition, TrackedObject, Tracker};

/// Wall-clock cost of one scan, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameReport {
    pub frame: usize,
    pub stamp: f64,
    /// Downsampling, submap retrieval and both registration stages.
    pub odometry_ms: f64,
    /// Range and residual images.
    pub projection_ms: f64,
    /// Ground removal, segmentation and detection.
    pub segmentation_ms: f64,
    pub tracking_ms: f64,
    pub total_ms: f64,
    pub segments: usize,
    pub tracks: usize,
    pub dynamic_points: usize,
    pub keyframe_added: bool,
    /// Registration points over valid scan points.
    pub downsample_ratio: f64,
}

impl FrameReport {
    pub const CSV_HEADER: &'static str =
        "frame,stamp,odometry_ms,projection_ms,segmentation_ms,tracking_ms,total_ms,segments,tracks,dynamic_points,keyframe,downsample_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{},{},{:.4}",
            self.frame,
            self.stamp,
            self.odometry_ms,
            self.projection_ms,
            self.segmentation_ms,
            self.tracking_ms,
            self.total_ms,
            self.segments,
            self.tracks,
            self.dynamic_points,
            self.keyframe_added as u8,
            self.downsample_ratio
        )
    }

    /// Projection, segmentation and tracking together.
    pub fn detection_overhead_ms(&self) -> f64 {
        self.projection_ms + self.segmentation_ms + self.tracking_ms
    }
}

/// Everything produced for one scan.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub pose: RigidTransform,
    pub registration: ScanRegistration,
    pub range_image: RangeImage,
    pub residual_image: ResidualImage,
    pub labels: LabelImage,
    pub segments: Vec<Segment>,
    pub detections: Vec<Detection>,
    /// Track snapshot after this scan's update.
    pub tracks: Vec<TrackedObject>,
    pub transitions: Vec<StateTransition>,
    /// Per scan index: point belongs to a dynamic track this scan.
    pub dynamic_mask: Vec<bool>,
    pub report: FrameReport,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// State carried between scans.
pub struct Pipeline {
    cfg: PipelineConfig,
    sensor: SensorModel,
    frame: usize,
    pose: RigidTransform,
    delta: RigidTransform,
    prev_scan: Option<RegistrationCloud>,
    keyframes: KeyframeDb,
    tracker: Tracker,
    history: BoxHistory,
    map: GlobalMap,
    trajectory: Vec<(f64, RigidTransform)>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, sensor: SensorModel) -> Result<Self> {
        cfg.validate()?;
        sensor.validate()?;
        Ok(Self {
            tracker: Tracker::new(cfg.tracker),
            cfg,
            sensor,
            frame: 0,
            pose: RigidTransform::identity(),
            delta: RigidTransform::identity(),
            prev_scan: None,
            keyframes: KeyframeDb::new(),
            history: BoxHistory::new(),
            map: GlobalMap::spawn(),
            trajectory: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn keyframes(&self) -> &KeyframeDb {
        &self.keyframes
    }

    pub fn tracks(&self) -> &[TrackedObject] {
        self.tracker.tracks()
    }

    pub fn trajectory(&self) -> &[(f64, RigidTransform)] {
        &self.trajectory
    }

    pub fn history(&self) -> &BoxHistory {
        &self.history
    }

    /// Current global map, after all queued scrubs.
    pub fn map_snapshot(&self) -> Vec<crate::geometry::Point3> {
        self.map.snapshot()
    }

    /// Processes one sensor-frame scan.
    pub fn process_scan(&mut self, scan: &StructuredCloud) -> Result<FrameOutput> {
        if scan.frame != Frame::Sensor {
            return Err(Error::Config("scans must be given in the sensor frame".into()));
        }
        if scan.height != self.sensor.height || scan.width != self.sensor.width {
            return Err(Error::dims(
                format!("{}x{}", self.sensor.height, self.sensor.width),
                format!("{}x{}", scan.height, scan.width),
            ));
        }
        let t_total = Instant::now();
        let stamp = scan.stamp;
        let cfg = self.cfg;

        // odometry
        let t = Instant::now();
        let (current, members) = RegistrationCloud::from_scan(scan, &cfg.gicp)?;
        let submap = if self.prev_scan.is_some() {
            let guess = self.pose.compose(&self.delta);
            Some(
                self.keyframes
                    .submap(&guess, cfg.mapping.submap_k, cfg.mapping.submap_leaf, &cfg.gicp)?,
            )
        } else {
            None
        };
        let reg = register_scan(
            &current,
            self.prev_scan.as_ref(),
            submap.as_deref(),
            &self.pose,
            &self.delta,
            &cfg.gicp,
        )?;
        let pose = reg.pose.renormalized();
        let residuals = match (&reg.scan_to_map, submap.as_deref()) {
            (Some(r), _) if cfg.detection.residual_leaf == cfg.gicp.voxel_leaf => Some((members, r.residuals.clone())),
            (Some(_), Some(map)) => {
                let fine = voxel_downsample(scan, cfg.detection.residual_leaf);
                let r = point_residuals(&fine.points, map, &pose, cfg.gicp.max_correspondence_dist);
                Some((fine.members, r))
            }
            _ => None,
        };
        let odometry_ms = ms(t);
        let downsample_ratio = current.len() as f64 / scan.valid_count().max(1) as f64;
        let scan_world = pose.apply(scan).with_frame(Frame::World);

        // projection
        let t = Instant::now();
        let range_image = build_range_image(scan, &self.sensor)?;
        let residual_image = match &residuals {
            Some((members, r)) => build_residual_image_indexed(members, r, scan.height, scan.width)?,
            None => ResidualImage::filled(scan.height, scan.width, 0.0),
        };
        let projection_ms = ms(t);

        // segmentation and detection
        let t = Instant::now();
        let ground = remove_ground(&range_image, &self.sensor, &cfg.seg)?;
        let labels = segment(&range_image, &ground, &self.sensor, &cfg.seg)?;
        let segments = extract_segments(&labels, &scan_world)?;
        // the bootstrap scan has no map residuals to judge motion by
        let detections = if reg.scan_to_map.is_some() {
            detect(
                &segments,
                &scan_world,
                &residual_image,
                &pose.translation,
                &cfg.detection,
                stamp,
            )
        } else {
            Vec::new()
        };
        let segmentation_ms = ms(t);

        // tracking
        let t = Instant::now();
        let transitions = self.tracker.step(&detections, stamp);
        let tracking_ms = ms(t);

        // dynamic point removal and mapping
        let mut dynamic_mask = vec![false; scan.len()];
        let mut withheld = Vec::new();
        for tr in self.tracker.tracks() {
            if tr.state == DynamicState::Dynamic {
                for &i in &tr.point_indices {
                    dynamic_mask[i] = scan.valid[i];
                }
            }
            if tr.withheld_at(stamp) {
                withheld.extend_from_slice(&tr.point_indices);
            }
        }
        let keyframe_added = should_add_keyframe(&pose, self.keyframes.keyframes(), &cfg.mapping);
        if keyframe_added {
            let filtered = remove_dynamic_points(&scan_world, &withheld)?;
            let pts: Vec<_> = filtered.iter_valid().map(|(_, p)| *p).collect();
            let cloud = voxel_downsample_points(&pts, cfg.mapping.keyframe_leaf);
            let kf = self.keyframes.insert(pose, cloud, stamp);
            self.map.insert(Arc::clone(&kf.cloud));
        }
        self.history.record(self.tracker.tracks(), stamp, &cfg.mapping);
        for tr in &transitions {
            if tr.to == DynamicState::Dynamic {
                self.map.scrub(self.history.boxes_for(tr.id));
            }
        }

        self.delta = self.pose.inverse().compose(&pose);
        self.pose = pose;
        self.prev_scan = Some(current);
        self.trajectory.push((stamp, pose));

        let report = FrameReport {
            frame: self.frame,
            stamp,
            odometry_ms,
            projection_ms,
            segmentation_ms,
            tracking_ms,
            total_ms: ms(t_total),
            segments: segment_count(&labels),
            tracks: self.tracker.tracks().len(),
            dynamic_points: dynamic_mask.iter().filter(|&&d| d).count(),
            keyframe_added,
            downsample_ratio,
        };
        self.frame += 1;
        Ok(FrameOutput {
            pose,
            registration: reg,
            range_image,
            residual_image,
            labels,
            segments,
            detections,
            tracks: self.tracker.tracks().to_vec(),
            transitions,
            dynamic_mask,
            report,
        })
    }

    /// Waits for pending map work and returns the trajectory and final map.
    pub fn finish(self) -> (Vec<(f64, RigidTransform)>, Vec<crate::geometry::Point3>) {
        let map = self.map.finish();
        (self.trajectory, map)
    }
}
