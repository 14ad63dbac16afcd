//! Constant-velocity Kalman filter over a 10-D box state.
//!
//! State layout: `[x, y, z, yaw, l, w, h, vx, vy, vz]`. The measurement is
//! the first seven entries (box center, yaw, extents).

use nalgebra::{SMatrix, SVector, Vector3};

use crate::bbox::OrientedBox;
use crate::geometry::wrap_half_pi;

pub const STATE_DIM: usize = 10;
pub const MEAS_DIM: usize = 7;

pub type State = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Measurement = SVector<f64, MEAS_DIM>;

/// Noise model of the box filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanNoise {
    /// White acceleration spectral density, (m/s²)²·s.
    pub accel: f64,
    /// Random-walk variance rate of yaw and extents, per second.
    pub shape: f64,
    pub meas_pos_std: f64,
    pub meas_yaw_std: f64,
    pub meas_ext_std: f64,
    pub init_vel_std: f64,
}

impl Default for KalmanNoise {
    fn default() -> Self {
        Self {
            accel: 4.0,
            shape: 0.05,
            meas_pos_std: 0.15,
            meas_yaw_std: 0.3,
            meas_ext_std: 0.2,
            init_vel_std: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxKalman {
    pub x: State,
    pub p: StateCov,
}

impl BoxKalman {
    pub fn from_box(b: &OrientedBox, noise: &KalmanNoise) -> Self {
        let mut x = State::zeros();
        x.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&measurement_of(b));
        let mut p = StateCov::zeros();
        for i in 0..3 {
            p[(i, i)] = noise.meas_pos_std.powi(2);
            p[(4 + i, 4 + i)] = noise.meas_ext_std.powi(2);
            p[(7 + i, 7 + i)] = noise.init_vel_std.powi(2);
        }
        p[(3, 3)] = noise.meas_yaw_std.powi(2);
        Self { x, p }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x[0], self.x[1], self.x[2])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.x[7], self.x[8], self.x[9])
    }

    pub fn yaw(&self) -> f64 {
        self.x[3]
    }

    pub fn extents(&self) -> Vector3<f64> {
        Vector3::new(self.x[4], self.x[5], self.x[6])
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(
            self.position(),
            self.yaw(),
            self.extents().map(|e| e.max(crate::bbox::MIN_EXTENT)),
        )
    }

    /// Constant-velocity prediction over `dt` seconds.
    pub fn predict(&mut self, dt: f64, noise: &KalmanNoise) {
        debug_assert!(dt > 0.0);
        let mut f = StateCov::identity();
        for i in 0..3 {
            f[(i, 7 + i)] = dt;
        }
        let mut q = StateCov::zeros();
        let qa = noise.accel;
        for i in 0..3 {
            q[(i, i)] = qa * dt.powi(3) / 3.0;
            q[(i, 7 + i)] = qa * dt.powi(2) / 2.0;
            q[(7 + i, i)] = qa * dt.powi(2) / 2.0;
            q[(7 + i, 7 + i)] = qa * dt;
        }
        for i in 3..7 {
            q[(i, i)] = noise.shape * dt;
        }
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        self.p = (self.p + self.p.transpose()) * 0.5;
    }

    /// Linear update with a box measurement. The yaw innovation is wrapped
    /// into (−π/2, π/2]. Uses the Joseph form to keep `p` symmetric PSD.
    pub fn update(&mut self, z: &Measurement, noise: &KalmanNoise) {
        let mut h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::zeros();
        for i in 0..MEAS_DIM {
            h[(i, i)] = 1.0;
        }
        let mut r = SMatrix::<f64, MEAS_DIM, MEAS_DIM>::zeros();
        for i in 0..3 {
            r[(i, i)] = noise.meas_pos_std.powi(2);
            r[(4 + i, 4 + i)] = noise.meas_ext_std.powi(2);
        }
        r[(3, 3)] = noise.meas_yaw_std.powi(2);

        let mut y = z - h * self.x;
        y[3] = wrap_half_pi(y[3]);
        let s = h * self.p * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return;
        };
        let k = self.p * h.transpose() * s_inv;
        self.x += k * y;
        self.x[3] = wrap_half_pi(self.x[3]);
        let i_kh = StateCov::identity() - k * h;
        self.p = i_kh * self.p * i_kh.transpose() + k * r * k.transpose();
        self.p = (self.p + self.p.transpose()) * 0.5;
    }
}

pub fn measurement_of(b: &OrientedBox) -> Measurement {
    Measurement::from_column_slice(&[
        b.center.x,
        b.center.y,
        b.center.z,
        b.yaw,
        b.extents.x,
        b.extents.y,
        b.extents.z,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn unit_box(x: f64) -> OrientedBox {
        OrientedBox::new(Vector3::new(x, 0.0, 0.0), 0.0, Vector3::repeat(1.0))
    }

    #[test]
    fn predict_moves_position() {
        let noise = KalmanNoise::default();
        let mut kf = BoxKalman::from_box(&unit_box(0.0), &noise);
        kf.x[7] = 1.0;
        kf.predict(0.1, &noise);
        assert!((kf.position() - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn predict_zero_velocity_grows_covariance() {
        let noise = KalmanNoise::default();
        let mut kf = BoxKalman::from_box(&unit_box(2.0), &noise);
        let (x0, tr0) = (kf.x, kf.p.trace());
        kf.predict(0.1, &noise);
        assert_eq!(kf.x, x0);
        assert!(kf.p.trace() > tr0);
    }

    #[test]
    fn split_predict_equals_single_in_mean() {
        let noise = KalmanNoise::default();
        let mut a = BoxKalman::from_box(&unit_box(1.0), &noise);
        a.x[7] = 0.7;
        a.x[8] = -1.3;
        let mut b = a.clone();
        a.predict(0.05, &noise);
        a.predict(0.05, &noise);
        b.predict(0.1, &noise);
        assert!((a.x - b.x).amax() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let noise = KalmanNoise::default();
        let mut kf = BoxKalman::from_box(&unit_box(1.0), &noise);
        kf.predict(0.1, &noise);
        let (x0, tr0) = (kf.x, kf.p.trace());
        let z = kf.x.fixed_rows::<MEAS_DIM>(0).into_owned();
        kf.update(&z, &noise);
        assert!((kf.x - x0).amax() < 1e-15);
        assert!(kf.p.trace() < tr0);
    }

    #[test]
    fn precise_measurement_dominates() {
        let noise = KalmanNoise {
            meas_pos_std: 1e-9,
            ..KalmanNoise::default()
        };
        let mut kf = BoxKalman::from_box(&unit_box(0.0), &KalmanNoise::default());
        kf.predict(0.1, &noise);
        kf.update(&measurement_of(&unit_box(0.8)), &noise);
        assert!((kf.position() - Vector3::new(0.8, 0.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn velocity_converges_for_ramp_measurements() {
        let noise = KalmanNoise::default();
        let (dt, step) = (0.1, 0.12);
        let mut kf = BoxKalman::from_box(&unit_box(0.0), &noise);
        for k in 1..=20 {
            kf.predict(dt, &noise);
            kf.update(&measurement_of(&unit_box(step * k as f64)), &noise);
        }
        let v = kf.velocity().x;
        assert!((v - step / dt).abs() < 0.1 * step / dt, "v = {v}");
    }

    #[test]
    fn yaw_innovation_is_wrapped() {
        let noise = KalmanNoise::default();
        let mut kf = BoxKalman::from_box(&OrientedBox::new(Vector3::zeros(), 1.5, Vector3::repeat(1.0)), &noise);
        let meas = OrientedBox::new(Vector3::zeros(), -1.5, Vector3::repeat(1.0));
        kf.update(&measurement_of(&meas), &noise);
        // the short way round crosses ±π/2, not through zero
        assert!(kf.yaw().abs() > 1.4, "yaw {}", kf.yaw());
    }

    #[test]
    fn covariance_stays_psd() {
        let noise = KalmanNoise::default();
        let mut kf = BoxKalman::from_box(&unit_box(0.0), &noise);
        for k in 0..200 {
            kf.predict(0.1, &noise);
            if k % 3 != 0 {
                kf.update(&measurement_of(&unit_box((k as f64 * 0.37).sin())), &noise);
            }
            let ev = SymmetricEigen::new(kf.p).eigenvalues;
            assert!(ev.min() >= -1e-9);
            assert!((kf.p - kf.p.transpose()).amax() == 0.0);
        }
    }
}
