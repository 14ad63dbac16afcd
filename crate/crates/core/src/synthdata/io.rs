//! Dataset layout and binary formats.
//!
//! ```text
//! <dir>/manifest.txt       key=value: sensor model, frame list, spec hash
//! <dir>/scene.toml         the generating scene description
//! <dir>/gt_trajectory.txt  `stamp tx ty tz qx qy qz qw` per frame
//! <dir>/clouds/NNNNNN.dloc
//! <dir>/labels/NNNNNN.dlbl
//! ```
//!
//! Both binary files start with the header `"DLOC" | version u32 | h u32 |
//! w u32 | stamp f64`, little-endian. Clouds continue with `h·w` records of
//! `f32 x, f32 y, f32 z, u8 valid`; labels with `h·w` class bytes followed by
//! `h·w` u16 actor ids.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{render_frame, GroundTruthLabels, PointClass, SceneSpec, SensorSpec};
use crate::error::{Error, Result};
use crate::geometry::{Frame, Point3, RigidTransform, SensorModel, StructuredCloud};
use crate::mapping::{read_trajectory, trajectory_line};

pub const CLOUD_MAGIC: &[u8; 4] = b"DLOC";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

fn header(h: usize, w: usize, stamp: f64) -> Vec<u8> {
    let mut b = Vec::with_capacity(HEADER_LEN);
    b.extend_from_slice(CLOUD_MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    b.extend_from_slice(&(h as u32).to_le_bytes());
    b.extend_from_slice(&(w as u32).to_le_bytes());
    b.extend_from_slice(&stamp.to_le_bytes());
    b
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(usize, usize, f64)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CLOUD_MAGIC {
        return Err(Error::format(path, "missing DLOC header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let stamp = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    Ok((u32_at(8) as usize, u32_at(12) as usize, stamp))
}

pub fn write_cloud(cloud: &StructuredCloud, path: &Path) -> Result<()> {
    let mut b = header(cloud.height, cloud.width, cloud.stamp);
    b.reserve(cloud.len() * 13);
    for (p, &ok) in cloud.points.iter().zip(&cloud.valid) {
        for c in [p.x, p.y, p.z] {
            b.extend_from_slice(&(c as f32).to_le_bytes());
        }
        b.push(ok as u8);
    }
    fs::write(path, b).map_err(|e| Error::io(path, e))
}

/// Reads a sensor-frame cloud.
pub fn read_cloud(path: &Path) -> Result<StructuredCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, stamp) = parse_header(&bytes, path)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != h * w * 13 {
        return Err(Error::format(path, "record count does not match header"));
    }
    let mut points = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for r in body.chunks_exact(13) {
        let f = |k: usize| f32::from_le_bytes(r[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        points.push(Point3::new(f(0), f(1), f(2)));
        valid.push(r[12] != 0);
    }
    StructuredCloud::new(h, w, points, valid, Frame::Sensor, stamp)
}

pub fn write_labels(labels: &GroundTruthLabels, path: &Path) -> Result<()> {
    let n = labels.height * labels.width;
    if labels.classes.len() != n || labels.actor_ids.len() != n {
        return Err(Error::dims(n, labels.classes.len().max(labels.actor_ids.len())));
    }
    let mut b = header(labels.height, labels.width, labels.stamp);
    b.extend(labels.classes.iter().map(|&c| c as u8));
    for id in &labels.actor_ids {
        b.extend_from_slice(&id.to_le_bytes());
    }
    fs::write(path, b).map_err(|e| Error::io(path, e))
}

/// Reads a label file. The file carries no pose; the returned pose is the
/// identity (see [`Dataset::labels`]).
pub fn read_labels(path: &Path) -> Result<GroundTruthLabels> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, stamp) = parse_header(&bytes, path)?;
    let n = h * w;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 3 {
        return Err(Error::format(path, "label count does not match header"));
    }
    let classes = body[..n]
        .iter()
        .map(|&c| PointClass::from_code(c).ok_or_else(|| Error::format(path, format!("bad class code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    let actor_ids = body[n..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(GroundTruthLabels {
        height: h,
        width: w,
        stamp,
        classes,
        actor_ids,
        pose: RigidTransform::identity(),
    })
}

/// Contents of `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub sensor: SensorSpec,
    pub frame_dt: f64,
    pub spec_sha256: String,
    /// `(stamp, cloud file, label file)` relative to the dataset directory.
    pub frames: Vec<(f64, String, Option<String>)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let s = &self.sensor;
        let mut t = String::new();
        let _ = writeln!(t, "format=dloc");
        let _ = writeln!(t, "version={FORMAT_VERSION}");
        let _ = writeln!(t, "sensor.f_up_deg={}", s.f_up_deg);
        let _ = writeln!(t, "sensor.f_down_deg={}", s.f_down_deg);
        let _ = writeln!(t, "sensor.height={}", s.height);
        let _ = writeln!(t, "sensor.width={}", s.width);
        let _ = writeln!(t, "sensor.max_range={}", s.max_range);
        let _ = writeln!(t, "sensor.azimuth_offset={}", s.azimuth_offset);
        let _ = writeln!(t, "frame_dt={}", self.frame_dt);
        let _ = writeln!(t, "spec_sha256={}", self.spec_sha256);
        let _ = writeln!(t, "frames={}", self.frames.len());
        for (stamp, cloud, labels) in &self.frames {
            let _ = writeln!(t, "frame={stamp} {cloud} {}", labels.as_deref().unwrap_or("-"));
        }
        t
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |what: &str| Error::format(path, what.to_string());
        let mut kv = std::collections::BTreeMap::new();
        let mut frames = Vec::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            if k == "frame" {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad("frame entries need `stamp cloud labels`"));
                }
                let stamp = parts[0].parse().map_err(|_| bad("bad frame stamp"))?;
                let labels = (parts[2] != "-").then(|| parts[2].to_string());
                frames.push((stamp, parts[1].to_string(), labels));
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::format(path, format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::format(path, format!("bad `{k}`"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::format(path, format!("bad `{k}`"))) };
        if int("version")? != FORMAT_VERSION as usize {
            return Err(bad("unsupported manifest version"));
        }
        if int("frames")? != frames.len() {
            return Err(bad("frame count does not match frame entries"));
        }
        Ok(Self {
            sensor: SensorSpec {
                f_up_deg: num("sensor.f_up_deg")?,
                f_down_deg: num("sensor.f_down_deg")?,
                height: int("sensor.height")?,
                width: int("sensor.width")?,
                max_range: num("sensor.max_range")?,
                azimuth_offset: num("sensor.azimuth_offset")?,
            },
            frame_dt: num("frame_dt")?,
            spec_sha256: get("spec_sha256")?.clone(),
            frames,
        })
    }
}

pub fn spec_hash(spec: &SceneSpec) -> String {
    hex::encode(Sha256::digest(spec.to_toml().as_bytes()))
}

/// Renders every frame of `spec` into `dir`.
pub fn write_sequence(spec: &SceneSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        sensor: spec.sensor,
        frame_dt: spec.frame_dt,
        spec_sha256: spec_hash(spec),
        frames: Vec::with_capacity(spec.frames),
    };
    if spec.frames > 0 {
        for sub in ["clouds", "labels"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("scene.toml");
        fs::write(&p, spec.to_toml()).map_err(|e| Error::io(&p, e))?;
        let mut traj = String::new();
        for k in 0..spec.frames {
            let (cloud, labels) = render_frame(spec, k)?;
            let cloud_name = format!("clouds/{k:06}.dloc");
            let label_name = format!("labels/{k:06}.dlbl");
            write_cloud(&cloud, &dir.join(&cloud_name))?;
            write_labels(&labels, &dir.join(&label_name))?;
            traj.push_str(&trajectory_line(cloud.stamp, &labels.pose));
            traj.push('\n');
            manifest.frames.push((cloud.stamp, cloud_name, Some(label_name)));
        }
        let p = dir.join("gt_trajectory.txt");
        fs::write(&p, traj).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("manifest.txt");
    fs::write(&p, manifest.to_text()).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

/// One entry of an opened dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub stamp: f64,
    pub cloud: PathBuf,
    pub labels: Option<PathBuf>,
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub frames: Vec<DatasetFrame>,
    /// Ground-truth sensor poses, when `gt_trajectory.txt` exists.
    pub gt_poses: Option<Vec<RigidTransform>>,
    /// The generating scene, when `scene.toml` exists.
    pub scene: Option<SceneSpec>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.txt");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest = Manifest::parse(&text, &mpath)?;
        manifest.sensor.model()?;
        let frames = manifest
            .frames
            .iter()
            .map(|(stamp, c, l)| DatasetFrame {
                stamp: *stamp,
                cloud: dir.join(c),
                labels: l.as_ref().map(|l| dir.join(l)),
            })
            .collect();
        let tpath = dir.join("gt_trajectory.txt");
        let gt_poses = if tpath.exists() {
            Some(read_trajectory(&tpath)?.into_iter().map(|(_, p)| p).collect())
        } else {
            None
        };
        let spath = dir.join("scene.toml");
        let scene = if spath.exists() {
            let t = fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
            Some(SceneSpec::from_toml(&t)?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            frames,
            gt_poses,
            scene,
        })
    }

    pub fn sensor(&self) -> SensorModel {
        self.manifest.sensor.model().expect("validated on open")
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.labels.is_some())
    }

    pub fn cloud(&self, i: usize) -> Result<StructuredCloud> {
        let f = self.frames.get(i).ok_or(Error::IndexOutOfBounds {
            index: i,
            len: self.frames.len(),
        })?;
        read_cloud(&f.cloud)
    }

    /// Labels of frame `i` with the ground-truth pose filled in when known.
    pub fn labels(&self, i: usize) -> Result<Option<GroundTruthLabels>> {
        let f = self.frames.get(i).ok_or(Error::IndexOutOfBounds {
            index: i,
            len: self.frames.len(),
        })?;
        let Some(path) = &f.labels else {
            return Ok(None);
        };
        let mut l = read_labels(path)?;
        if let Some(p) = self.gt_poses.as_ref().and_then(|g| g.get(i)) {
            l.pose = *p;
        }
        Ok(Some(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::fixtures;

    fn small_spec(frames: usize) -> SceneSpec {
        let mut s = fixtures::walker();
        s.frames = frames;
        s.sensor.height = 16;
        s.sensor.width = 64;
        s
    }

    #[test]
    fn zero_frames_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&small_spec(0), dir.path()).unwrap();
        let entries: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries, vec![std::ffi::OsString::from("manifest.txt")]);
        let ds = Dataset::open(dir.path()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_sequence(&small_spec(3), a.path()).unwrap();
        write_sequence(&small_spec(3), b.path()).unwrap();
        for rel in [
            "manifest.txt",
            "scene.toml",
            "gt_trajectory.txt",
            "clouds/000002.dloc",
            "labels/000001.dlbl",
        ] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    #[test]
    fn round_trip_cloud_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(2);
        write_sequence(&spec, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.scene.as_ref(), Some(&spec));
        let (cloud, labels) = render_frame(&spec, 1).unwrap();
        let back = ds.cloud(1).unwrap();
        assert_eq!(back.valid, cloud.valid);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a - b).norm() < 1e-5);
        }
        let l = ds.labels(1).unwrap().unwrap();
        assert_eq!(l.classes, labels.classes);
        assert_eq!(l.actor_ids, labels.actor_ids);
        assert!((l.pose.translation - labels.pose.translation).norm() < 1e-8);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dloc");
        fs::write(&p, b"NOPE").unwrap();
        assert!(matches!(read_cloud(&p), Err(Error::Format { .. })));
        assert!(matches!(read_cloud(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
