//! Keyframe database, submaps, bounding-box history and the global map.
//!
//! The global map lives on a background thread. Insertions and scrubs are
//! queued on a channel and applied in submission order, so the per-scan
//! loop never waits on a scrub while the final map is still deterministic.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::bbox::OrientedBox;
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform, StructuredCloud};
use crate::par;
use crate::registration::{voxel, voxel_downsample_points, GicpParams, RegistrationCloud};
use crate::tracking::TrackedObject;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingParams {
    /// Translation to the nearest keyframe that triggers a new keyframe.
    pub d_kf: f64,
    /// Rotation (radians) to the nearest keyframe that triggers a new keyframe.
    pub r_kf: f64,
    /// Number of keyframes concatenated into a submap.
    pub submap_k: usize,
    /// Rolling window of the box history, seconds.
    pub window: f64,
    /// Margin added to every recorded box.
    pub inflation: f64,
    /// Voxel leaf for keyframe clouds.
    pub keyframe_leaf: f64,
    /// Voxel leaf of the concatenated submap.
    pub submap_leaf: f64,
}

impl Default for MappingParams {
    fn default() -> Self {
        Self {
            d_kf: 1.0,
            r_kf: 30f64.to_radians(),
            submap_k: 6,
            window: 20.0,
            inflation: 0.1,
            keyframe_leaf: 0.1,
            submap_leaf: 0.15,
        }
    }
}

impl MappingParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_kf > 0.0
            && self.r_kf > 0.0
            && self.submap_k >= 1
            && self.window > 0.0
            && self.inflation >= 0.0
            && self.keyframe_leaf > 0.0
            && self.submap_leaf > 0.0
        {
            Ok(())
        } else {
            Err(Error::Config("invalid mapping parameters".into()))
        }
    }
}

/// A pose-stamped, dynamic-free, downsampled world-frame cloud.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: usize,
    pub pose: RigidTransform,
    pub cloud: Arc<Vec<Point3>>,
    pub stamp: f64,
}

/// Marks the given scan indices invalid.
pub fn remove_dynamic_points(scan: &StructuredCloud, indices: &[usize]) -> Result<StructuredCloud> {
    let mut out = scan.clone();
    for &i in indices {
        if i >= out.len() {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: out.len(),
            });
        }
        out.valid[i] = false;
    }
    Ok(out)
}

/// True when `pose` is farther than the thresholds from the nearest keyframe
/// (by translation), or when there are no keyframes yet.
pub fn should_add_keyframe(pose: &RigidTransform, keyframes: &[Keyframe], p: &MappingParams) -> bool {
    let nearest = keyframes.iter().min_by(|a, b| {
        let da = (a.pose.translation - pose.translation).norm();
        let db = (b.pose.translation - pose.translation).norm();
        da.total_cmp(&db)
    });
    match nearest {
        None => true,
        Some(kf) => {
            let rel = kf.pose.inverse().compose(pose);
            rel.translation.norm() > p.d_kf || rel.rotation_angle() > p.r_kf
        }
    }
}

/// Ids of the `k` keyframes nearest to `pose`, ties broken by id.
pub fn nearest_keyframes(keyframes: &[Keyframe], pose: &RigidTransform, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = keyframes
        .iter()
        .map(|kf| ((kf.pose.translation - pose.translation).norm(), kf.id))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ids: Vec<usize> = order.into_iter().take(k).map(|(_, id)| id).collect();
    ids.sort_unstable();
    ids
}

/// Keyframe cloud downsampled with `leaf`, with covariances estimated
/// within the keyframe. `None` when it has too few points for the
/// neighborhood size.
fn local_cloud(kf: &Keyframe, leaf: f64, gicp: &GicpParams) -> Result<Option<RegistrationCloud>> {
    match RegistrationCloud::new(voxel_downsample_points(&kf.cloud, leaf), gicp.k_covariance) {
        Ok(c) => Ok(Some(c)),
        Err(Error::TooFewPoints { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Concatenates per-keyframe clouds keeping one point per `leaf` voxel, the
/// earliest part winning, and builds the search tree over the result.
fn merge_local(parts: &[&RegistrationCloud], leaf: f64, k_covariance: usize) -> Result<RegistrationCloud> {
    let inv = 1.0 / leaf;
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    let mut covariances = Vec::new();
    for part in parts {
        for (p, c) in part.points().iter().zip(&part.covariances) {
            if seen.insert(voxel::key(p, inv)) {
                points.push(*p);
                covariances.push(*c);
            }
        }
    }
    if points.len() < k_covariance + 1 {
        return Err(Error::TooFewPoints {
            needed: k_covariance + 1,
            got: points.len(),
        });
    }
    RegistrationCloud::from_parts(points, covariances)
}

/// Merges the `k` nearest keyframes into a registration target. Each
/// keyframe is downsampled with `leaf` and gets its own covariances;
/// overlapping voxels keep the point of the oldest keyframe.
pub fn build_submap(
    keyframes: &[Keyframe],
    pose: &RigidTransform,
    k: usize,
    leaf: f64,
    gicp: &GicpParams,
) -> Result<RegistrationCloud> {
    if keyframes.is_empty() {
        return Err(Error::NoKeyframes);
    }
    let locals = nearest_keyframes(keyframes, pose, k)
        .into_iter()
        .filter_map(|id| keyframes.iter().find(|kf| kf.id == id))
        .map(|kf| local_cloud(kf, leaf, gicp))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<&RegistrationCloud> = locals.iter().flatten().collect();
    merge_local(&parts, leaf, gicp.k_covariance)
}

type LocalCache = Option<(f64, usize, Option<Arc<RegistrationCloud>>)>;

/// Keyframe store. Per-keyframe registration clouds are computed once and
/// the merged submap is cached by the selected keyframe set.
#[derive(Debug, Default)]
pub struct KeyframeDb {
    keyframes: Vec<Keyframe>,
    local: Vec<LocalCache>,
    cached: Option<(Vec<usize>, Arc<RegistrationCloud>)>,
}

impl KeyframeDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    /// Appends a keyframe and returns it.
    pub fn insert(&mut self, pose: RigidTransform, cloud: Vec<Point3>, stamp: f64) -> &Keyframe {
        let id = self.keyframes.len();
        self.keyframes.push(Keyframe {
            id,
            pose,
            cloud: Arc::new(cloud),
            stamp,
        });
        self.local.push(None);
        &self.keyframes[id]
    }

    fn local(&mut self, id: usize, leaf: f64, gicp: &GicpParams) -> Result<Option<Arc<RegistrationCloud>>> {
        if let Some((l, k, c)) = &self.local[id] {
            if *l == leaf && *k == gicp.k_covariance {
                return Ok(c.clone());
            }
        }
        let c = local_cloud(&self.keyframes[id], leaf, gicp)?.map(Arc::new);
        self.local[id] = Some((leaf, gicp.k_covariance, c.clone()));
        Ok(c)
    }

    /// Submap around `pose`, rebuilt only when the nearest-keyframe set
    /// changes. Same contents as [`build_submap`].
    pub fn submap(
        &mut self,
        pose: &RigidTransform,
        k: usize,
        leaf: f64,
        gicp: &GicpParams,
    ) -> Result<Arc<RegistrationCloud>> {
        if self.keyframes.is_empty() {
            return Err(Error::NoKeyframes);
        }
        let ids = nearest_keyframes(&self.keyframes, pose, k);
        if let Some((cached_ids, cloud)) = &self.cached {
            if *cached_ids == ids {
                return Ok(Arc::clone(cloud));
            }
        }
        let locals = ids
            .iter()
            .map(|&id| self.local(id, leaf, gicp))
            .collect::<Result<Vec<_>>>()?;
        let parts: Vec<&RegistrationCloud> = locals.iter().flatten().map(|c| c.as_ref()).collect();
        let cloud = Arc::new(merge_local(&parts, leaf, gicp.k_covariance)?);
        self.cached = Some((ids, Arc::clone(&cloud)));
        Ok(cloud)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxHistoryEntry {
    pub track_id: u64,
    pub bbox: OrientedBox,
    pub stamp: f64,
}

/// Rolling window of inflated boxes of all live tracks.
#[derive(Debug, Clone, Default)]
pub struct BoxHistory {
    entries: VecDeque<BoxHistoryEntry>,
}

impl BoxHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BoxHistoryEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops entries older than `window` relative to `stamp`.
    pub fn age(&mut self, stamp: f64, window: f64) {
        self.entries.retain(|e| stamp - e.stamp <= window);
    }

    pub fn push(&mut self, track_id: u64, bbox: OrientedBox, stamp: f64) {
        self.entries.push_back(BoxHistoryEntry { track_id, bbox, stamp });
    }

    /// Appends the current box of every live track (inflated), then ages.
    pub fn record(&mut self, tracks: &[TrackedObject], stamp: f64, p: &MappingParams) {
        for t in tracks {
            self.push(t.id, t.bbox().inflated(p.inflation), stamp);
        }
        self.age(stamp, p.window);
    }

    pub fn boxes_for(&self, track_id: u64) -> Vec<OrientedBox> {
        self.entries
            .iter()
            .filter(|e| e.track_id == track_id)
            .map(|e| e.bbox)
            .collect()
    }
}

/// Removes every point inside any of `boxes`. Returns the number removed.
pub fn scrub_ghost_traces(points: &mut Vec<Point3>, boxes: &[OrientedBox]) -> usize {
    if boxes.is_empty() {
        return 0;
    }
    let keep = par::map(points, |p| !boxes.iter().any(|b| b.contains(p)));
    let before = points.len();
    let mut it = keep.iter();
    points.retain(|_| *it.next().unwrap_or(&true));
    before - points.len()
}

enum MapCommand {
    Insert(Arc<Vec<Point3>>),
    Scrub(Vec<OrientedBox>),
    Snapshot(Sender<Vec<Point3>>),
}

/// Handle to the background global map.
pub struct GlobalMap {
    tx: Option<Sender<MapCommand>>,
    worker: Option<JoinHandle<Vec<Point3>>>,
}

impl GlobalMap {
    pub fn spawn() -> Self {
        let (tx, rx) = mpsc::channel();
        let worker = std::thread::Builder::new()
            .name("global-map".into())
            .spawn(move || run_map(rx))
            .expect("failed to spawn global map thread");
        Self {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    fn send(&self, cmd: MapCommand) {
        if let Some(tx) = &self.tx {
            // the worker only exits once the sender is dropped
            let _ = tx.send(cmd);
        }
    }

    pub fn insert(&self, points: Arc<Vec<Point3>>) {
        self.send(MapCommand::Insert(points));
    }

    /// Queues removal of all map points inside `boxes`.
    pub fn scrub(&self, boxes: Vec<OrientedBox>) {
        if !boxes.is_empty() {
            self.send(MapCommand::Scrub(boxes));
        }
    }

    /// Map after every command queued so far has been applied.
    pub fn snapshot(&self) -> Vec<Point3> {
        let (tx, rx) = mpsc::channel();
        self.send(MapCommand::Snapshot(tx));
        rx.recv().unwrap_or_default()
    }

    /// Waits for all pending work and returns the final map.
    pub fn finish(mut self) -> Vec<Point3> {
        self.tx.take();
        self.worker
            .take()
            .map(|w| w.join().expect("global map thread panicked"))
            .unwrap_or_default()
    }
}

impl Drop for GlobalMap {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn run_map(rx: Receiver<MapCommand>) -> Vec<Point3> {
    let mut points = Vec::new();
    for cmd in rx {
        match cmd {
            MapCommand::Insert(p) => points.extend(p.iter().copied()),
            MapCommand::Scrub(boxes) => {
                let n = scrub_ghost_traces(&mut points, &boxes);
                log::debug!("scrubbed {n} ghost points");
            }
            MapCommand::Snapshot(reply) => {
                let _ = reply.send(points.clone());
            }
        }
    }
    points
}

/// Binary little-endian PLY with float32 vertices.
pub fn write_ply(points: &[Point3], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(header.as_bytes())?;
        for p in points {
            for c in [p.x, p.y, p.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Reads back a file written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<Point3>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::format(path, "missing PLY header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format(path, "non-UTF-8 header"))?;
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::format(path, "missing vertex count"))?;
    let body = &bytes[end..];
    if body.len() != count * 12 {
        return Err(Error::format(path, "vertex data length does not match header"));
    }
    Ok(body
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            Point3::new(f(0), f(1), f(2))
        })
        .collect())
}

/// One line per scan: `stamp tx ty tz qx qy qz qw`.
pub fn write_trajectory(poses: &[(f64, RigidTransform)], path: &Path) -> Result<()> {
    let mut s = String::new();
    for (stamp, pose) in poses {
        s.push_str(&trajectory_line(*stamp, pose));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn trajectory_line(stamp: f64, pose: &RigidTransform) -> String {
    let t = pose.translation;
    let q = pose.quaternion();
    format!(
        "{stamp:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

/// Parses a trajectory file written by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, RigidTransform)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("bad number in line `{line}`")))?;
            if v.len() != 8 {
                return Err(Error::format(path, format!("expected 8 fields in `{line}`")));
            }
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[7], v[4], v[5], v[6]));
            Ok((v[0], RigidTransform::from_quaternion(q, Point3::new(v[1], v[2], v[3]))))
        })
        .collect()
}
