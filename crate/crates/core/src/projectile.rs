//! Drag-free ballistic flight of the released payload.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub t_release: f64,
}

impl ReleaseState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self { position, velocity, t_release: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingPrediction {
    pub point: Vector3<f64>,
    pub fall_time: f64,
    /// Distance to the target in the target plane; zero unless a target is given.
    pub error: f64,
}

/// Time for a body at height `z_rel` above the plane, moving vertically at
/// `z_dot`, to reach the plane under gravity `g_mag`.
pub fn fall_time(z_rel: f64, z_dot: f64, g_mag: f64) -> Result<f64> {
    let disc = z_dot * z_dot + 2.0 * g_mag * z_rel;
    if !(disc >= 0.0) {
        return Err(Error::NoCrossing(disc));
    }
    let t = (z_dot + disc.sqrt()) / g_mag;
    if t < 0.0 {
        // Below the plane and still descending.
        return Err(Error::NoCrossing(disc));
    }
    Ok(t)
}

pub fn landing_point(release: &ReleaseState, target_plane_z: f64, g_mag: f64) -> Result<LandingPrediction> {
    let p = release.position;
    let v = release.velocity;
    let t = fall_time(p.z - target_plane_z, v.z, g_mag)?;
    Ok(LandingPrediction {
        point: Vector3::new(p.x + v.x * t, p.y + v.y * t, target_plane_z),
        fall_time: t,
        error: 0.0,
    })
}

/// Landing prediction with the in-plane distance to `target` filled in.
pub fn predict_against(release: &ReleaseState, target: &Vector3<f64>, g_mag: f64) -> Result<LandingPrediction> {
    let mut pred = landing_point(release, target.z, g_mag)?;
    pred.error = (pred.point - target).norm();
    Ok(pred)
}

pub fn landing_error(release: &ReleaseState, target: &Vector3<f64>, g_mag: f64) -> Result<f64> {
    predict_against(release, target, g_mag).map(|p| p.error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GRAVITY;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Independent oracle: RK4 on the drag-free ODE, crossing located by
    /// linear interpolation inside the last step.
    fn rk4_landing(p: Vector3<f64>, v: Vector3<f64>, plane: f64, dt: f64) -> Vector3<f64> {
        let acc = Vector3::new(0.0, 0.0, -GRAVITY);
        let (mut x, mut u) = (p, v);
        loop {
            let k1x = u;
            let k1v = acc;
            let k2x = u + k1v * (dt / 2.0);
            let k3x = u + acc * (dt / 2.0);
            let k4x = u + acc * dt;
            let nx = x + (k1x + 2.0 * k2x + 2.0 * k3x + k4x) * (dt / 6.0);
            let nu = u + acc * dt;
            if nx.z <= plane && nu.z < 0.0 {
                let s = (x.z - plane) / (x.z - nx.z);
                let mut hit = x + (nx - x) * s;
                hit.z = plane;
                return hit;
            }
            x = nx;
            u = nu;
        }
    }

    #[test]
    fn fall_time_examples() {
        assert_relative_eq!(fall_time(1.0, 0.0, GRAVITY).unwrap(), 0.451_523, epsilon = 1e-6);
        assert_eq!(fall_time(0.0, 0.0, GRAVITY).unwrap(), 0.0);
        assert_relative_eq!(fall_time(1.25, 1.0, GRAVITY).unwrap(), 0.616_94, epsilon = 1e-5);
        assert!(matches!(fall_time(-1.0, 0.5, GRAVITY), Err(Error::NoCrossing(_))));
        assert!(matches!(fall_time(-0.1, -3.0, GRAVITY), Err(Error::NoCrossing(_))));
    }

    #[test]
    fn landing_examples() {
        let target = Vector3::new(0.7, -0.3, 0.0);
        let drop = ReleaseState::new(Vector3::new(0.7, -0.3, 1.0), Vector3::zeros());
        let pred = predict_against(&drop, &target, GRAVITY).unwrap();
        assert_eq!(pred.point, target);
        assert_eq!(pred.error, 0.0);

        let throw = ReleaseState::new(Vector3::new(0.0, 0.0, 1.25), Vector3::new(2.0, 0.0, 0.0));
        let pred = landing_point(&throw, 0.0, GRAVITY).unwrap();
        assert_relative_eq!(pred.fall_time, (2.5 / GRAVITY).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(pred.fall_time, 0.504_79, epsilon = 1e-4);
        assert_relative_eq!(pred.point, Vector3::new(1.009_58, 0.0, 0.0), epsilon = 1e-4);
        let oracle = rk4_landing(throw.position, throw.velocity, 0.0, 1e-4);
        assert!((pred.point - oracle).norm() < 1e-6);

        let down = ReleaseState::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, -1.0));
        let pred = landing_point(&down, 0.0, GRAVITY).unwrap();
        assert_relative_eq!(pred.fall_time, (-1.0 + (1.0 + 2.0 * GRAVITY).sqrt()) / GRAVITY, epsilon = 1e-12);
        assert_relative_eq!(pred.fall_time, 0.360_95, epsilon = 1e-5);
        assert_eq!(pred.point, Vector3::zeros());
    }

    #[test]
    fn landing_error_examples() {
        let throw = ReleaseState::new(Vector3::new(0.0, 0.0, 1.25), Vector3::new(2.0, 0.0, 0.0));
        let e = landing_error(&throw, &Vector3::new(1.009_58, 0.0, 0.0), GRAVITY).unwrap();
        assert!(e < 1e-4);
        let still = ReleaseState::new(Vector3::new(0.0, 0.0, 1.25), Vector3::zeros());
        assert_relative_eq!(landing_error(&still, &Vector3::new(0.5, 0.0, 0.0), GRAVITY).unwrap(), 0.5);
    }

    #[test]
    fn closed_form_matches_rk4_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.2..3.0));
            let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let v = dir.normalize() * rng.gen_range(0.0..6.0);
            let pred = landing_point(&ReleaseState::new(p, v), 0.0, GRAVITY).unwrap();
            assert!((pred.point - rk4_landing(p, v, 0.0, 1e-4)).norm() < 1e-6);
        }
    }

    #[test]
    fn fall_time_is_monotone() {
        let mut prev = 0.0;
        for i in 0..50 {
            let t = fall_time(0.1 * i as f64, 0.5, GRAVITY).unwrap();
            assert!(t >= prev);
            prev = t;
        }
        let mut prev = 0.0;
        for i in 0..50 {
            let t = fall_time(1.0, -3.0 + 0.15 * i as f64, GRAVITY).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn error_is_translation_invariant() {
        let r = ReleaseState::new(Vector3::new(0.3, 0.2, 1.4), Vector3::new(1.5, -0.4, 0.8));
        let target = Vector3::new(1.1, 0.6, 0.0);
        let shift = Vector3::new(-3.2, 7.5, 0.0);
        let moved = ReleaseState::new(r.position + shift, r.velocity);
        let a = landing_error(&r, &target, GRAVITY).unwrap();
        let b = landing_error(&moved, &(target + shift), GRAVITY).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }
}
