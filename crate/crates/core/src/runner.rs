//! Offline replay of a dataset directory through the pipeline.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Evaluator};
use crate::geometry::{Point3, RigidTransform, StructuredCloud};
use crate::mapping::{write_ply, write_trajectory};
use crate::pipeline::{FrameOutput, FrameReport, Pipeline};
use crate::synthdata::{read_labels, write_labels, Dataset, GroundTruthLabels, PointClass};
use crate::tracking::TRACK_CSV_HEADER;

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const MAP_FILE: &str = "global_map.ply";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const FRAMES_FILE: &str = "frames.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const MASK_DIR: &str = "masks";

pub fn mask_file_name(frame: usize) -> String {
    format!("{frame:06}.dlbl")
}

/// Encodes a predicted dynamic mask in the label file format: dynamic,
/// static or invalid per point.
pub fn mask_to_labels(mask: &[bool], cloud: &StructuredCloud) -> GroundTruthLabels {
    let classes = mask
        .iter()
        .zip(&cloud.valid)
        .map(|(&d, &v)| match (v, d) {
            (false, _) => PointClass::Invalid,
            (true, true) => PointClass::Dynamic,
            (true, false) => PointClass::Static,
        })
        .collect();
    GroundTruthLabels {
        height: cloud.height,
        width: cloud.width,
        stamp: cloud.stamp,
        classes,
        actor_ids: vec![0; cloud.len()],
        pose: RigidTransform::identity(),
    }
}

pub fn labels_to_mask(labels: &GroundTruthLabels) -> Vec<bool> {
    labels.classes.iter().map(|&c| c == PointClass::Dynamic).collect()
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<FrameReport>,
    pub eval: Option<EvalReport>,
    pub trajectory: Vec<(f64, RigidTransform)>,
    pub map: Vec<Point3>,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn mean_report(&self) -> FrameReport {
        let n = self.reports.len().max(1) as f64;
        let mut m = FrameReport::default();
        for r in &self.reports {
            m.odometry_ms += r.odometry_ms / n;
            m.projection_ms += r.projection_ms / n;
            m.segmentation_ms += r.segmentation_ms / n;
            m.tracking_ms += r.tracking_ms / n;
            m.total_ms += r.total_ms / n;
            m.downsample_ratio += r.downsample_ratio / n;
        }
        m
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn line(w: &mut BufWriter<File>, path: &Path, s: &str) -> Result<()> {
    writeln!(w, "{s}").map_err(|e| Error::io(path, e))
}

/// Streams every frame of `dataset` through a fresh pipeline and writes the
/// run outputs into `out`. Per-frame outputs are also passed to `observe`.
pub fn run_dataset_with(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    out: &Path,
    mut observe: impl FnMut(&StructuredCloud, &FrameOutput),
) -> Result<RunSummary> {
    cfg.validate()?;
    let sensor = cfg.sensor.apply(&dataset.sensor())?;
    let mut pipeline = Pipeline::new(*cfg, sensor)?;

    let mask_dir = out.join(MASK_DIR);
    fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    let tracks_path = out.join(TRACKS_FILE);
    let frames_path = out.join(FRAMES_FILE);
    let mut tracks_csv = create(&tracks_path)?;
    let mut frames_csv = create(&frames_path)?;
    line(&mut tracks_csv, &tracks_path, TRACK_CSV_HEADER)?;
    line(&mut frames_csv, &frames_path, FrameReport::CSV_HEADER)?;

    let first_motion: Vec<Option<usize>> = dataset
        .scene
        .as_ref()
        .map(|s| (0..s.actors.len()).map(|a| s.first_motion_frame(a)).collect())
        .unwrap_or_default();
    let mut evaluator = dataset
        .has_labels()
        .then(|| Evaluator::new(cfg.range_limit(), &first_motion));

    let mut reports = Vec::with_capacity(dataset.len());
    for k in 0..dataset.len() {
        let scan = dataset.cloud(k)?;
        let output = pipeline.process_scan(&scan)?;
        write_labels(
            &mask_to_labels(&output.dynamic_mask, &scan),
            &mask_dir.join(mask_file_name(k)),
        )?;
        for t in &output.tracks {
            line(&mut tracks_csv, &tracks_path, &t.csv_row(k, scan.stamp))?;
        }
        line(&mut frames_csv, &frames_path, &output.report.csv_row())?;
        if let Some(e) = evaluator.as_mut() {
            let truth = dataset.labels(k)?.expect("has_labels checked");
            e.add_frame(&output.dynamic_mask, &truth, &scan)?;
        }
        log::info!(
            "frame {k}: {} segments, {} tracks, {} dynamic points, {:.1} ms",
            output.report.segments,
            output.report.tracks,
            output.report.dynamic_points,
            output.report.total_ms
        );
        observe(&scan, &output);
        reports.push(output.report);
    }
    tracks_csv.flush().map_err(|e| Error::io(&tracks_path, e))?;
    frames_csv.flush().map_err(|e| Error::io(&frames_path, e))?;

    let (trajectory, map) = pipeline.finish();
    write_trajectory(&trajectory, &out.join(TRAJECTORY_FILE))?;
    write_ply(&map, &out.join(MAP_FILE))?;
    let eval = evaluator.map(Evaluator::finish);
    if let Some(e) = &eval {
        let p = out.join(EVAL_FILE);
        fs::write(&p, e.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(RunSummary {
        reports,
        eval,
        trajectory,
        map,
        out_dir: out.to_path_buf(),
    })
}

pub fn run_dataset(cfg: &PipelineConfig, dataset: &Dataset, out: &Path) -> Result<RunSummary> {
    run_dataset_with(cfg, dataset, out, |_, _| {})
}

/// Evaluates a directory of predicted masks against a labeled dataset.
pub fn evaluate_dirs(pred_dir: &Path, dataset: &Dataset, range_limit: f64) -> Result<EvalReport> {
    if !dataset.has_labels() {
        return Err(Error::Config(format!(
            "dataset {} has no labels",
            dataset.dir.display()
        )));
    }
    let mask_dir = if pred_dir.join(MASK_DIR).is_dir() {
        pred_dir.join(MASK_DIR)
    } else {
        pred_dir.to_path_buf()
    };
    let first_motion: Vec<Option<usize>> = dataset
        .scene
        .as_ref()
        .map(|s| (0..s.actors.len()).map(|a| s.first_motion_frame(a)).collect())
        .unwrap_or_default();
    let mut e = Evaluator::new(range_limit, &first_motion);
    for k in 0..dataset.len() {
        let pred = read_labels(&mask_dir.join(mask_file_name(k)))?;
        let truth = dataset.labels(k)?.expect("has_labels checked");
        e.add_frame(&labels_to_mask(&pred), &truth, &dataset.cloud(k)?)?;
    }
    Ok(e.finish())
}
