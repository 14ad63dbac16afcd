//! Standard scenes used by tests, benches and the `gen --fixture` command.

use super::{Actor, ActorShape, EgoTrajectory, SceneSpec, SensorSpec, StaticPrimitive, Trajectory};

/// Mounting height of the sensor above the ground.
pub const SENSOR_HEIGHT: f64 = 1.0;

/// OS-1 style 64-beam, ±22.5° sensor with 512 columns.
pub fn os1_64x512() -> SensorSpec {
    SensorSpec {
        f_up_deg: 22.5,
        f_down_deg: -22.5,
        height: 64,
        width: 512,
        max_range: 60.0,
        azimuth_offset: 0.0,
    }
}

/// A walled 40 m × 40 m courtyard with pillars, crates and a kiosk.
pub fn courtyard_statics() -> Vec<StaticPrimitive> {
    let wall = |cx: f64, cy: f64, sx: f64, sy: f64| StaticPrimitive::Box {
        center: [cx, cy, 2.0],
        yaw: 0.0,
        size: [sx, sy, 4.0],
    };
    let pillar = |x: f64, y: f64| StaticPrimitive::Cylinder {
        center: [x, y],
        radius: 0.3,
        z_min: 0.0,
        z_max: 2.5,
    };
    let crate_ = |x: f64, y: f64, yaw: f64| StaticPrimitive::Box {
        center: [x, y, 0.5],
        yaw,
        size: [1.0, 1.0, 1.0],
    };
    vec![
        wall(20.0, 0.0, 0.4, 40.4),
        wall(-20.0, 0.0, 0.4, 40.4),
        wall(0.0, 20.0, 40.4, 0.4),
        wall(0.0, -20.0, 40.4, 0.4),
        pillar(13.0, 13.0),
        pillar(-13.0, 13.0),
        pillar(13.0, -13.0),
        pillar(-13.0, -13.0),
        pillar(0.0, 15.0),
        pillar(15.5, 0.0),
        crate_(-15.0, 4.0, 0.3),
        crate_(-4.0, -15.0, 0.0),
        crate_(6.0, 15.5, 0.8),
        StaticPrimitive::Box {
            center: [-14.0, -8.0, 1.5],
            yaw: 0.4,
            size: [3.0, 2.0, 3.0],
        },
    ]
}

fn person() -> ActorShape {
    ActorShape::Box { size: [0.6, 0.5, 1.8] }
}

fn articulated_person() -> ActorShape {
    ActorShape::Articulated {
        body: [0.5, 0.4, 1.75],
        limb: [0.3, 0.2, 1.1],
        amplitude: 0.25,
        frequency_hz: 1.0,
    }
}

/// Two walkers at 1.2 m/s circling inside the courtyard (one rigid, one
/// articulated) while the sensor drives a figure-eight. 100 frames at 10 Hz
/// of a 64×512 sensor.
pub fn walker() -> SceneSpec {
    SceneSpec {
        ground_height: Some(0.0),
        statics: courtyard_statics(),
        actors: vec![
            Actor {
                shape: person(),
                trajectory: Trajectory::Circular {
                    center: [0.0, 0.0],
                    radius: 9.0,
                    speed: 1.2,
                    phase: 0.0,
                },
                start_time: 0.0,
            },
            Actor {
                shape: articulated_person(),
                trajectory: Trajectory::Circular {
                    center: [-1.0, 1.0],
                    radius: 6.5,
                    speed: -1.2,
                    phase: 2.5,
                },
                start_time: 0.0,
            },
        ],
        ego: EgoTrajectory::FigureEight {
            center: [0.0, 0.0, SENSOR_HEIGHT],
            a: 3.0,
            b: 2.0,
            period: 10.0,
        },
        sensor: os1_64x512(),
        frames: 100,
        frame_dt: 0.1,
        noise_sigma: 0.01,
        seed: 42,
    }
}

/// One walker at 1 m/s in the courtyard, sensor moving slowly.
pub fn single_walker() -> SceneSpec {
    SceneSpec {
        actors: vec![Actor {
            shape: person(),
            trajectory: Trajectory::Linear {
                start: [6.0, -5.0],
                velocity: [0.0, 1.0],
            },
            start_time: 0.0,
        }],
        ego: EgoTrajectory::Linear {
            start: [-2.0, 0.0, SENSOR_HEIGHT],
            velocity: [0.4, 0.1, 0.0],
            yaw: 0.2,
        },
        seed: 5,
        ..walker()
    }
}

/// A box actor parked for four seconds that then drives away while the
/// sensor passes by.
pub fn parked_then_moving() -> SceneSpec {
    SceneSpec {
        actors: vec![Actor {
            shape: ActorShape::Box { size: [1.8, 0.9, 1.4] },
            trajectory: Trajectory::Linear {
                start: [5.0, 4.0],
                velocity: [1.2, 0.0],
            },
            start_time: 4.0,
        }],
        ego: EgoTrajectory::Linear {
            start: [-3.0, 0.0, SENSOR_HEIGHT],
            velocity: [0.6, 0.0, 0.0],
            yaw: 0.0,
        },
        seed: 11,
        ..walker()
    }
}

/// The courtyard without actors, seen from a standing sensor.
pub fn static_scene() -> SceneSpec {
    SceneSpec {
        actors: vec![],
        ego: EgoTrajectory::Static {
            position: [1.0, -2.0, SENSOR_HEIGHT],
            yaw: 0.3,
        },
        frames: 20,
        seed: 3,
        ..walker()
    }
}

/// The noise-free courtyard, a single frame.
pub fn courtyard_noise_free() -> SceneSpec {
    SceneSpec {
        actors: vec![],
        ego: EgoTrajectory::Static {
            position: [0.5, 0.5, SENSOR_HEIGHT],
            yaw: 0.0,
        },
        frames: 1,
        noise_sigma: 0.0,
        ..walker()
    }
}

/// Fixture lookup by command-line name.
pub fn by_name(name: &str) -> Option<SceneSpec> {
    match name {
        "walker" => Some(walker()),
        "single-walker" => Some(single_walker()),
        "parked-then-moving" => Some(parked_then_moving()),
        "static" => Some(static_scene()),
        "courtyard" => Some(courtyard_noise_free()),
        _ => None,
    }
}

pub const NAMES: [&str; 5] = ["walker", "single-walker", "parked-then-moving", "static", "courtyard"];
