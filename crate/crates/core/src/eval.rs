//! Dynamic-point classification metrics and detection latency.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::StructuredCloud;
use crate::synthdata::{GroundTruthLabels, PointClass};

/// Fraction of an actor's in-range points that must be predicted dynamic
/// for the actor to count as flagged in a frame.
pub const FLAG_FRACTION: f64 = 0.5;
/// Actors with fewer in-range points in a frame are not judged there.
pub const MIN_ACTOR_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// `TP / (TP + FP + FN)`; 1 when there is nothing to find and nothing
    /// was predicted.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// `TP / (TP + FP)`, defined as 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// `TP / (TP + FN)`, defined as 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// Whether the frame contributes to per-frame averages.
    fn is_informative(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorLatency {
    pub actor: u16,
    pub first_motion: usize,
    /// First frame at or after `first_motion` in which the actor was flagged.
    pub flagged: Option<usize>,
}

impl ActorLatency {
    pub fn frames(&self) -> Option<usize> {
        self.flagged.map(|f| f - self.first_motion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_frame: Vec<Confusion>,
    /// Sums over all frames.
    pub pooled: Confusion,
    /// Averages over frames with any dynamic truth or prediction.
    pub mean_iou: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub latencies: Vec<ActorLatency>,
    /// Latency in frames → number of actors.
    pub latency_histogram: BTreeMap<usize, usize>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "scope,iou,precision,recall,tp,fp,fn";

    /// Headered CSV: one row per frame, then `pooled` and `mean`, then the
    /// latency table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let row = |scope: String, c: &Confusion| {
            format!(
                "{scope},{:.6},{:.6},{:.6},{},{},{}\n",
                c.iou(),
                c.precision(),
                c.recall(),
                c.tp,
                c.fp,
                c.fn_
            )
        };
        for (k, c) in self.per_frame.iter().enumerate() {
            s.push_str(&row(format!("frame{k}"), c));
        }
        s.push_str(&row("pooled".into(), &self.pooled));
        s.push_str(&format!(
            "mean,{:.6},{:.6},{:.6},,,\n",
            self.mean_iou, self.mean_precision, self.mean_recall
        ));
        s.push_str("\nactor,first_motion_frame,flagged_frame,latency_frames\n");
        for l in &self.latencies {
            let f = l.flagged.map_or(String::new(), |f| f.to_string());
            let d = l.frames().map_or(String::new(), |d| d.to_string());
            s.push_str(&format!("{},{},{f},{d}\n", l.actor, l.first_motion));
        }
        s
    }
}

/// Streaming evaluation, one frame at a time.
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    range_limit: f64,
    first_motion: Vec<Option<usize>>,
    per_frame: Vec<Confusion>,
    flagged: Vec<Option<usize>>,
}

impl Evaluator {
    /// `first_motion[a]` is the first moving frame of actor id `a + 1`;
    /// pass an empty slice to skip latency measurement.
    pub fn new(range_limit: f64, first_motion: &[Option<usize>]) -> Self {
        Self {
            range_limit,
            first_motion: first_motion.to_vec(),
            per_frame: Vec::new(),
            flagged: vec![None; first_motion.len()],
        }
    }

    /// Adds one frame. `cloud` is the sensor-frame scan the labels refer to.
    pub fn add_frame(&mut self, pred: &[bool], truth: &GroundTruthLabels, cloud: &StructuredCloud) -> Result<()> {
        let n = truth.classes.len();
        if pred.len() != n {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: n,
            });
        }
        if cloud.len() != n || truth.actor_ids.len() != n {
            return Err(Error::LengthMismatch {
                left: cloud.len(),
                right: n,
            });
        }
        let frame = self.per_frame.len();
        let mut c = Confusion::default();
        let mut actor_counts = vec![(0usize, 0usize); self.first_motion.len()];
        for i in 0..n {
            let class = truth.classes[i];
            if !matches!(class, PointClass::Static | PointClass::Dynamic) {
                continue;
            }
            if cloud.points[i].norm() > self.range_limit {
                continue;
            }
            let is_dyn = class == PointClass::Dynamic;
            match (pred[i], is_dyn) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
            let a = truth.actor_ids[i] as usize;
            if a >= 1 && a <= actor_counts.len() {
                actor_counts[a - 1].0 += 1;
                actor_counts[a - 1].1 += pred[i] as usize;
            }
        }
        for (a, (total, hit)) in actor_counts.into_iter().enumerate() {
            let Some(start) = self.first_motion[a] else {
                continue;
            };
            if self.flagged[a].is_none()
                && frame >= start
                && total >= MIN_ACTOR_POINTS
                && hit as f64 >= FLAG_FRACTION * total as f64
            {
                self.flagged[a] = Some(frame);
            }
        }
        self.per_frame.push(c);
        Ok(())
    }

    pub fn finish(self) -> EvalReport {
        let mut pooled = Confusion::default();
        for c in &self.per_frame {
            pooled.add(c);
        }
        let informative: Vec<&Confusion> = self.per_frame.iter().filter(|c| c.is_informative()).collect();
        let mean = |f: fn(&Confusion) -> f64| {
            if informative.is_empty() {
                1.0
            } else {
                informative.iter().map(|c| f(c)).sum::<f64>() / informative.len() as f64
            }
        };
        let latencies: Vec<ActorLatency> = self
            .first_motion
            .iter()
            .enumerate()
            .filter_map(|(a, fm)| {
                fm.map(|first_motion| ActorLatency {
                    actor: (a + 1) as u16,
                    first_motion,
                    flagged: self.flagged[a],
                })
            })
            .collect();
        let mut latency_histogram = BTreeMap::new();
        for l in &latencies {
            if let Some(d) = l.frames() {
                *latency_histogram.entry(d).or_insert(0) += 1;
            }
        }
        EvalReport {
            mean_iou: mean(Confusion::iou),
            mean_precision: mean(Confusion::precision),
            mean_recall: mean(Confusion::recall),
            per_frame: self.per_frame,
            pooled,
            latencies,
            latency_histogram,
        }
    }
}

/// Evaluates predicted dynamic masks against ground truth.
pub fn evaluate(
    pred: &[Vec<bool>],
    truth: &[GroundTruthLabels],
    clouds: &[StructuredCloud],
    range_limit: f64,
) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if clouds.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: clouds.len(),
            right: truth.len(),
        });
    }
    let mut e = Evaluator::new(range_limit, &[]);
    for ((p, t), c) in pred.iter().zip(truth).zip(clouds) {
        e.add_frame(p, t, c)?;
    }
    Ok(e.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Point3, RigidTransform};

    fn frame(classes: Vec<PointClass>, actors: Vec<u16>) -> (GroundTruthLabels, StructuredCloud) {
        let n = classes.len();
        let labels = GroundTruthLabels {
            height: 1,
            width: n,
            stamp: 0.0,
            classes,
            actor_ids: actors,
            pose: RigidTransform::identity(),
        };
        let pts = (0..n).map(|i| Point3::new(1.0 + i as f64, 0.0, 0.0)).collect();
        let cloud = StructuredCloud::new(1, n, pts, vec![true; n], Frame::Sensor, 0.0).unwrap();
        (labels, cloud)
    }

    use PointClass::*;

    #[test]
    fn perfect_prediction() {
        let (l, c) = frame(vec![Dynamic, Static, Dynamic, Ground], vec![1, 0, 1, 0]);
        let r = evaluate(&[vec![true, false, true, false]], &[l], &[c], 25.0).unwrap();
        assert_eq!(
            (r.pooled.iou(), r.pooled.precision(), r.pooled.recall()),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn empty_prediction() {
        let (l, c) = frame(vec![Dynamic, Static], vec![1, 0]);
        let r = evaluate(&[vec![false, false]], &[l], &[c], 25.0).unwrap();
        assert_eq!(r.pooled.recall(), 0.0);
        assert_eq!(r.pooled.precision(), 1.0);
        assert_eq!(r.pooled.iou(), 0.0);
    }

    #[test]
    fn half_the_dynamic_points() {
        let (l, c) = frame(vec![Dynamic, Dynamic, Dynamic, Dynamic, Static], vec![1, 1, 1, 1, 0]);
        let r = evaluate(&[vec![true, true, false, false, false]], &[l], &[c], 25.0).unwrap();
        assert_eq!(r.pooled.recall(), 0.5);
        assert_eq!(r.pooled.precision(), 1.0);
        assert_eq!(r.pooled.iou(), 0.5);
    }

    #[test]
    fn ground_invalid_and_far_points_are_ignored() {
        let (l, c) = frame(vec![Ground, Invalid, Dynamic, Static], vec![0, 0, 1, 0]);
        // the last two points sit at 3 m and 4 m
        let r = evaluate(&[vec![true, true, true, true]], &[l], &[c], 3.5).unwrap();
        assert_eq!(
            r.pooled,
            Confusion {
                tp: 1,
                fp: 0,
                fn_: 0,
                tn: 0
            }
        );
    }

    #[test]
    fn length_mismatch() {
        let (l, c) = frame(vec![Dynamic], vec![1]);
        assert!(matches!(
            evaluate(
                &[vec![true, false]],
                std::slice::from_ref(&l),
                std::slice::from_ref(&c),
                25.0
            ),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&[], &[l], &[c], 25.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn latency_counts_first_flagged_frame() {
        let mut e = Evaluator::new(100.0, &[Some(1)]);
        let classes = vec![Dynamic; 12];
        let actors = vec![1; 12];
        let (l, c) = frame(classes, actors);
        let all = vec![true; 12];
        let none = vec![false; 12];
        // flagged before motion starts does not count
        e.add_frame(&all, &l, &c).unwrap();
        e.add_frame(&none, &l, &c).unwrap();
        e.add_frame(&none, &l, &c).unwrap();
        e.add_frame(&all, &l, &c).unwrap();
        let r = e.finish();
        assert_eq!(r.latencies[0].flagged, Some(3));
        assert_eq!(r.latencies[0].frames(), Some(2));
        assert_eq!(r.latency_histogram.get(&2), Some(&1));
    }

    #[test]
    fn uninformative_frames_do_not_dilute_means() {
        let (l1, c1) = frame(vec![Static, Static], vec![0, 0]);
        let (l2, c2) = frame(vec![Dynamic, Static], vec![1, 0]);
        let r = evaluate(&[vec![false, false], vec![true, true]], &[l1, l2], &[c1, c2], 25.0).unwrap();
        assert_eq!(r.mean_precision, 0.5);
        assert_eq!(r.per_frame.len(), 2);
    }
}
