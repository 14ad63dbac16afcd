use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dynodom::geometry::{Point3, RigidTransform, StructuredCloud};
use dynodom::mapping::KeyframeDb;
use dynodom::registration::{gicp_align, register_scan, residuals, voxel_downsample, GicpParams, RegistrationCloud};
use dynodom::synthdata::{fixtures, render_frame, Actor, ActorShape, EgoTrajectory, PointClass, SceneSpec, Trajectory};
use dynodom::Pipeline;
use dynodom::PipelineConfig;

fn parked_box(x: f64, y: f64) -> Actor {
    Actor {
        shape: ActorShape::Box { size: [1.0, 1.0, 1.0] },
        trajectory: Trajectory::Linear {
            start: [x, y],
            velocity: [0.0, 0.0],
        },
        start_time: 0.0,
    }
}

fn courtyard_with(actors: Vec<Actor>) -> SceneSpec {
    SceneSpec {
        actors,
        ..fixtures::courtyard_noise_free()
    }
}

// Registration points labeled by the majority class of the pixels they average.
fn majority_dynamic(scan: &StructuredCloud, classes: &[PointClass], p: &GicpParams) -> (RegistrationCloud, Vec<bool>) {
    let (cloud, members) = RegistrationCloud::from_scan(scan, p).unwrap();
    let dynamic = members
        .iter()
        .map(|m| 2 * m.iter().filter(|&&i| classes[i] == PointClass::Dynamic).count() > m.len())
        .collect();
    (cloud, dynamic)
}

#[test]
fn displaced_box_has_larger_residuals_than_static_scene() {
    let p = GicpParams::default();
    let (target_scan, _) = render_frame(&courtyard_with(vec![parked_box(5.0, 2.0)]), 0).unwrap();
    let (source_scan, labels) = render_frame(&courtyard_with(vec![parked_box(6.0, 2.0)]), 0).unwrap();
    let (target, _) = RegistrationCloud::from_scan(&target_scan, &p).unwrap();
    let (source, is_box) = majority_dynamic(&source_scan, &labels.classes, &p);
    let r = gicp_align(&source, &target, &RigidTransform::identity(), &p).unwrap();

    let mean = |want: bool| {
        let v: Vec<f64> = r
            .residuals
            .iter()
            .zip(&is_box)
            .filter(|(_, &b)| b == want)
            .map(|(r, _)| *r)
            .collect();
        assert!(!v.is_empty());
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (box_mean, static_mean) = (mean(true), mean(false));
    assert!(
        box_mean > 3.0 * static_mean,
        "box {box_mean:.4} vs static {static_mean:.4}"
    );
}

#[test]
fn residuals_are_frame_equivariant() {
    let p = GicpParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (scan, _) = render_frame(&fixtures::courtyard_noise_free(), 0).unwrap();
    let (target, _) = RegistrationCloud::from_scan(&scan, &p).unwrap();
    let source_points: Vec<Point3> = target
        .points()
        .iter()
        .map(|q| q + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0))
        .collect();
    let source = RegistrationCloud::new(source_points.clone(), p.k_covariance).unwrap();
    let pose = RigidTransform::from_yaw(0.01, Vector3::new(0.05, -0.02, 0.0));
    let base = residuals(&source, &target, &pose, p.max_correspondence_dist);

    let g = RigidTransform::from_axis_angle(Vector3::new(0.1, -0.2, 0.7), Vector3::new(3.0, -1.0, 0.5));
    let moved = |pts: &[Point3]| pts.iter().map(|q| g.transform_point(q)).collect::<Vec<_>>();
    let source_g = RegistrationCloud::new(moved(&source_points), p.k_covariance).unwrap();
    let target_g = RegistrationCloud::new(moved(target.points()), p.k_covariance).unwrap();
    let pose_g = g.compose(&pose).compose(&g.inverse());
    let transformed = residuals(&source_g, &target_g, &pose_g, p.max_correspondence_dist);
    for (a, b) in base.iter().zip(&transformed) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn identical_consecutive_scans_give_no_motion() {
    let p = GicpParams::default();
    let (scan, _) = render_frame(&fixtures::static_scene(), 0).unwrap();
    let (cloud, _) = RegistrationCloud::from_scan(&scan, &p).unwrap();
    let mut db = KeyframeDb::new();
    db.insert(RigidTransform::identity(), cloud.points().to_vec(), 0.0);
    let submap = db.submap(&RigidTransform::identity(), 6, 0.15, &p).unwrap();
    let reg = register_scan(
        &cloud,
        Some(&cloud),
        Some(&submap),
        &RigidTransform::identity(),
        &RigidTransform::identity(),
        &p,
    )
    .unwrap();
    assert!(reg.delta.translation.norm() < 1e-3);
    assert!(reg.scan_to_map.is_some());
}

fn relative_ground_truth(spec: &SceneSpec, k: usize) -> RigidTransform {
    spec.ego_pose(0).inverse().compose(&spec.ego_pose(k))
}

/// Largest translation error against ground truth over a replay.
fn replay_error(spec: &SceneSpec) -> f64 {
    let cfg = PipelineConfig::default();
    let sensor = spec.sensor.model().unwrap();
    let mut pipeline = Pipeline::new(cfg, sensor).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..spec.frames {
        let (scan, _) = render_frame(spec, k).unwrap();
        let out = pipeline.process_scan(&scan).unwrap();
        let err = relative_ground_truth(spec, k).inverse().compose(&out.pose);
        worst = worst.max(err.translation.norm());
    }
    worst
}

#[test]
fn constant_velocity_drift_is_small() {
    let spec = SceneSpec {
        actors: vec![],
        ego: EgoTrajectory::Linear {
            start: [-4.0, -1.0, fixtures::SENSOR_HEIGHT],
            velocity: [1.0, 0.0, 0.0],
            yaw: 0.0,
        },
        frames: 50,
        noise_sigma: 0.01,
        seed: 9,
        ..fixtures::walker()
    };
    let drift = replay_error(&spec);
    let path = 0.1 * 49.0;
    assert!(drift < 0.02 * path, "drift {drift:.4} m over {path} m");
}

#[test]
fn large_moving_object_barely_affects_odometry() {
    let base = SceneSpec {
        actors: vec![],
        ego: EgoTrajectory::Linear {
            start: [-4.0, -1.0, fixtures::SENSOR_HEIGHT],
            velocity: [0.5, 0.0, 0.0],
            yaw: 0.0,
        },
        frames: 30,
        seed: 17,
        ..fixtures::walker()
    };
    // a long, tall vehicle passing close by
    let truck = Actor {
        shape: ActorShape::Box { size: [12.0, 3.0, 4.0] },
        trajectory: Trajectory::Linear {
            start: [-8.0, 3.5],
            velocity: [3.0, 0.0],
        },
        start_time: 0.0,
    };
    let busy = SceneSpec {
        actors: vec![truck],
        ..base.clone()
    };

    let (scan, labels) = render_frame(&busy, 10).unwrap();
    let dynamic = labels.classes.iter().filter(|&&c| c == PointClass::Dynamic).count();
    let share = dynamic as f64 / scan.valid_count() as f64;
    assert!(share > 0.25, "moving share {share:.2}");

    let static_err = replay_error(&base);
    let busy_err = replay_error(&busy);
    assert!(
        busy_err < 3.0 * static_err.max(1e-3),
        "with moving object {busy_err:.4} m, static only {static_err:.4} m"
    );
}

#[test]
fn leaf_tuned_for_five_percent() {
    let mut spec = fixtures::courtyard_noise_free();
    spec.sensor.height = 128;
    spec.sensor.width = 1024;
    let (scan, _) = render_frame(&spec, 0).unwrap();
    assert_eq!(scan.len(), 131072);
    let ratio = voxel_downsample(&scan, 0.6).len() as f64 / scan.valid_count() as f64;
    assert!((ratio - 0.05).abs() <= 0.02, "ratio {ratio:.4}");
}
