//! Multi-object tracking: Kalman filtered boxes, Hungarian association and
//! the undefined/static/dynamic state machine.

pub mod hungarian;
pub mod kalman;
mod tracker;

pub use kalman::{BoxKalman, KalmanNoise};
pub use tracker::{
    associate, association_cost, Association, DynamicState, StateTransition, TrackedObject, Tracker, TrackerParams,
    TRACK_CSV_HEADER,
};
