use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::Vector3;

use super::hungarian;
use super::kalman::{measurement_of, BoxKalman, KalmanNoise};
use crate::bbox::{iou_3d, OrientedBox};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::wrap_half_pi;

/// Boxes kept per track for inspection.
const TRACK_BOX_HISTORY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DynamicState {
    Undefined,
    Static,
    Dynamic,
}

impl DynamicState {
    pub fn as_str(&self) -> &'static str {
        match self {
            DynamicState::Undefined => "undefined",
            DynamicState::Static => "static",
            DynamicState::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for DynamicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Weight of the box overlap term.
    pub alpha: f64,
    /// Weight of the point-count ratio term.
    pub beta: f64,
    pub cost_gate: f64,
    /// Horizontal distance between predicted and detected box centers
    /// beyond which a pair is never associated.
    pub max_center_dist: f64,
    /// Consecutive misses tolerated before removal.
    pub n_miss: u32,
    pub n_min: u32,
    pub n_max: u32,
    /// Residual slope: dynamic requires `r_avg ≥ theta_res · h_S`.
    pub theta_res: f64,
    /// Displacement from the first detected position required for dynamic.
    pub theta_disp: f64,
    /// Segments flatter than this never satisfy the residual condition.
    pub min_height_span: f64,
    pub noise: KalmanNoise,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            cost_gate: 0.95,
            max_center_dist: 1.5,
            n_miss: 5,
            n_min: 3,
            n_max: 20,
            theta_res: 0.12,
            theta_disp: 0.5,
            min_height_span: 0.05,
            noise: KalmanNoise::default(),
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        let n = &self.noise;
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0
            && self.cost_gate > 0.0
            && self.max_center_dist > 0.0
            && self.n_min >= 1
            && self.n_min <= self.n_max
            && self.theta_res > 0.0
            && self.theta_disp > 0.0
            && self.min_height_span >= 0.0
            && n.accel > 0.0
            && n.shape >= 0.0
            && n.meas_pos_std > 0.0
            && n.meas_yaw_std > 0.0
            && n.meas_ext_std > 0.0
            && n.init_vel_std > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid tracker parameters".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub id: u64,
    pub kf: BoxKalman,
    pub state: DynamicState,
    pub hits: u32,
    pub misses: u32,
    /// Filtered position at birth.
    pub origin: Vector3<f64>,
    pub birth_stamp: f64,
    pub last_avg_residual: f64,
    pub last_height_span: f64,
    pub point_count: usize,
    /// Scan indices of the matched detection; empty when unmatched this frame.
    pub point_indices: Vec<usize>,
    pub box_history: VecDeque<(f64, OrientedBox)>,
}

impl TrackedObject {
    fn birth(id: u64, d: &Detection, noise: &KalmanNoise) -> Self {
        let kf = BoxKalman::from_box(&d.bbox, noise);
        Self {
            id,
            origin: kf.position(),
            birth_stamp: d.stamp,
            kf,
            state: DynamicState::Undefined,
            hits: 1,
            misses: 0,
            last_avg_residual: d.avg_residual,
            last_height_span: d.height_span,
            point_count: d.point_count,
            point_indices: d.point_indices.clone(),
            box_history: VecDeque::from([(d.stamp, d.bbox)]),
        }
    }

    pub fn bbox(&self) -> OrientedBox {
        self.kf.bbox()
    }

    pub fn matched(&self) -> bool {
        self.misses == 0
    }

    /// Constant-velocity prediction.
    pub fn predict(&mut self, dt: f64, noise: &KalmanNoise) {
        if dt > 0.0 {
            self.kf.predict(dt, noise);
        }
    }

    /// Measurement update with an associated detection.
    ///
    /// Box axes are only defined up to a quarter turn for near-square
    /// footprints, so a measurement whose yaw differs by more than π/4 is
    /// rotated by π/2 (swapping length and width) before the update.
    pub fn update(&mut self, d: &Detection, noise: &KalmanNoise) {
        let mut z = measurement_of(&d.bbox);
        if wrap_half_pi(z[3] - self.kf.yaw()).abs() > FRAC_PI_2 / 2.0 {
            z[3] = wrap_half_pi(z[3] + FRAC_PI_2);
            z.swap_rows(4, 5);
        }
        self.kf.update(&z, noise);
        self.hits += 1;
        self.misses = 0;
        self.last_avg_residual = d.avg_residual;
        self.last_height_span = d.height_span;
        self.point_count = d.point_count;
        self.point_indices = d.point_indices.clone();
        if self.box_history.len() == TRACK_BOX_HISTORY {
            self.box_history.pop_front();
        }
        self.box_history.push_back((d.stamp, self.kf.bbox()));
    }

    /// Whether the track's points should stay out of the map at `stamp`:
    /// dynamic tracks always, undefined tracks once they were seen in an
    /// earlier scan.
    pub fn withheld_at(&self, stamp: f64) -> bool {
        match self.state {
            DynamicState::Dynamic => true,
            DynamicState::Undefined => self.birth_stamp < stamp,
            DynamicState::Static => false,
        }
    }

    pub fn displacement(&self) -> f64 {
        (self.kf.position() - self.origin).norm()
    }

    /// Applies the state machine once. Dynamic is absorbing.
    pub fn update_dynamic_state(&mut self, p: &TrackerParams) -> Option<StateTransition> {
        let from = self.state;
        if from == DynamicState::Dynamic {
            return None;
        }
        let residual_ok =
            self.last_height_span >= p.min_height_span && self.last_avg_residual >= p.theta_res * self.last_height_span;
        if self.hits >= p.n_min && residual_ok && self.displacement() >= p.theta_disp {
            self.state = DynamicState::Dynamic;
        } else if from == DynamicState::Undefined && self.hits >= p.n_max {
            self.state = DynamicState::Static;
        }
        (self.state != from).then_some(StateTransition {
            id: self.id,
            from,
            to: self.state,
        })
    }

    /// One CSV row of the track log.
    pub fn csv_row(&self, frame: usize, stamp: f64) -> String {
        let x = &self.kf.x;
        format!(
            "{frame},{stamp},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.id,
            self.state,
            x[0],
            x[1],
            x[2],
            x[3],
            x[4],
            x[5],
            x[6],
            x[7],
            x[8],
            x[9],
            self.hits,
            self.misses,
            self.last_avg_residual,
            self.last_height_span
        )
    }
}

pub const TRACK_CSV_HEADER: &str = "frame,stamp,id,state,x,y,z,yaw,l,w,h,vx,vy,vz,hits,misses,r_avg,h_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateTransition {
    pub id: u64,
    pub from: DynamicState,
    pub to: DynamicState,
}

/// Weighted box-overlap and point-count dissimilarity of a track and a
/// detection.
pub fn association_cost(t: &TrackedObject, d: &Detection, p: &TrackerParams) -> f64 {
    let iou = iou_3d(&t.bbox(), &d.bbox);
    let (a, b) = (t.point_count as f64, d.point_count as f64);
    let ratio = if a.max(b) > 0.0 { a.min(b) / a.max(b) } else { 1.0 };
    p.alpha * (1.0 - iou) + p.beta * (1.0 - ratio)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum-cost one-to-one assignment; assigned pairs costing more than
/// `gate` are split back into unmatched tracks and detections.
pub fn associate(cost: &[Vec<f64>], n_detections: usize, gate: f64) -> Association {
    let assignment = hungarian::solve(cost);
    let mut out = Association::default();
    let mut det_used = vec![false; n_detections];
    for (t, a) in assignment.into_iter().enumerate() {
        match a {
            Some(d) if cost[t][d] <= gate => {
                out.matches.push((t, d));
                det_used[d] = true;
            }
            _ => out.unmatched_tracks.push(t),
        }
    }
    out.unmatched_detections = (0..n_detections).filter(|&d| !det_used[d]).collect();
    out
}

/// Owner of all live tracks.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub params: TrackerParams,
    tracks: Vec<TrackedObject>,
    next_id: u64,
    last_stamp: Option<f64>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 1,
            last_stamp: None,
        }
    }

    pub fn tracks(&self) -> &[TrackedObject] {
        &self.tracks
    }

    /// Processes one frame of detections: predict, associate, update,
    /// births, miss bookkeeping and removal, then the state machine.
    /// Returns the state transitions that occurred.
    pub fn step(&mut self, detections: &[Detection], stamp: f64) -> Vec<StateTransition> {
        let dt = self.last_stamp.map_or(0.0, |s| stamp - s);
        self.last_stamp = Some(stamp);
        let p = self.params;
        for t in &mut self.tracks {
            t.predict(dt, &p.noise);
        }

        // pairs outside the distance gate get a cost the assignment avoids
        // and the cost gate rejects
        let far = p.cost_gate + 1.0 + self.tracks.len().max(detections.len()) as f64;
        let cost: Vec<Vec<f64>> = self
            .tracks
            .iter()
            .map(|t| {
                let center = t.kf.position();
                detections
                    .iter()
                    .map(|d| {
                        if (d.bbox.center.xy() - center.xy()).norm() > p.max_center_dist {
                            far
                        } else {
                            association_cost(t, d, &p)
                        }
                    })
                    .collect()
            })
            .collect();
        let assoc = associate(&cost, detections.len(), p.cost_gate);

        for &(ti, di) in &assoc.matches {
            self.tracks[ti].update(&detections[di], &p.noise);
        }

        let mut remove = vec![false; self.tracks.len()];
        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            if t.misses >= p.n_miss {
                remove[ti] = true;
            } else {
                t.misses += 1;
                t.point_indices.clear();
            }
        }
        let mut idx = 0;
        self.tracks.retain(|_| {
            idx += 1;
            !remove[idx - 1]
        });

        for &di in &assoc.unmatched_detections {
            self.tracks
                .push(TrackedObject::birth(self.next_id, &detections[di], &p.noise));
            self.next_id += 1;
        }

        self.tracks
            .iter_mut()
            .filter_map(|t| t.update_dynamic_state(&p))
            .collect()
    }
}
