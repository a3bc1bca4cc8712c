use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k! / (k - d)!`, the factor in front of `t^(k-d)` after differentiating `t^k` `d` times.
#[inline]
pub fn falling_factorial(k: usize, d: usize) -> f64 {
    if d > k {
        return 0.0;
    }
    ((k - d + 1)..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Piecewise-polynomial flat-output trajectory.
///
/// Piece `i` is `sum_k coeffs[i][k] * t^k` on local time `t in [0, durations[i]]`,
/// with `2 s` coefficients per piece (degree `2 s - 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTrajectory {
    pub s: usize,
    pub dim: usize,
    pub durations: Vec<f64>,
    pub pieces: Vec<Vec<[f64; 3]>>,
}

impl SplineTrajectory {
    pub fn new(s: usize, durations: Vec<f64>, pieces: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        if durations.is_empty() || durations.len() != pieces.len() {
            return Err(Error::InvalidInput("piece and duration counts differ".into()));
        }
        if durations.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidInput("piece durations must be positive".into()));
        }
        if pieces.iter().any(|c| c.len() != 2 * s) {
            return Err(Error::InvalidInput(format!("each piece needs {} coefficients", 2 * s)));
        }
        Ok(Self { s, dim: 3, durations, pieces })
    }

    /// A single rest piece at `point`.
    pub fn stationary(point: Vector3<f64>, duration: f64, s: usize) -> Result<Self> {
        let mut c = vec![[0.0; 3]; 2 * s];
        c[0] = point.into();
        Self::new(s, vec![duration], vec![c])
    }

    pub fn num_pieces(&self) -> usize {
        self.durations.len()
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    pub fn degree(&self) -> usize {
        2 * self.s - 1
    }

    /// Piece index and local time; junctions belong to the following piece.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let mut offset = 0.0;
        let last = self.durations.len() - 1;
        for (i, &d) in self.durations.iter().enumerate() {
            if i == last || t < offset + d {
                return (i, (t - offset).clamp(0.0, d));
            }
            offset += d;
        }
        unreachable!()
    }

    pub fn eval_piece(&self, piece: usize, t: f64, order: usize) -> Vector3<f64> {
        let c = &self.pieces[piece];
        let n = c.len();
        if order >= n {
            return Vector3::zeros();
        }
        let mut acc = Vector3::zeros();
        for k in (order..n).rev() {
            acc = acc * t + Vector3::from(c[k]) * falling_factorial(k, order);
        }
        acc
    }

    pub fn eval(&self, t: f64, order: usize) -> Result<Vector3<f64>> {
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(Error::OutOfRange { t, total });
        }
        let (i, tl) = self.locate(t);
        Ok(self.eval_piece(i, tl, order))
    }

    /// Evaluation clamped to `[0, T_total]`.
    pub fn eval_clamped(&self, t: f64, order: usize) -> Vector3<f64> {
        let t = t.clamp(0.0, self.total_duration());
        let (i, tl) = self.locate(t);
        self.eval_piece(i, tl, order)
    }

    /// Position and its first `n - 1` derivatives at `t` (clamped).
    pub fn derivatives<const N: usize>(&self, t: f64) -> [Vector3<f64>; N] {
        let t = t.clamp(0.0, self.total_duration());
        let (i, tl) = self.locate(t);
        std::array::from_fn(|d| self.eval_piece(i, tl, d))
    }
}

/// Interval of feasible release instants around the nominal release time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseWindow {
    pub t_r: f64,
    pub tau: f64,
}

impl ReleaseWindow {
    pub fn interval(&self) -> (f64, f64) {
        (self.t_r - self.tau, self.t_r + self.tau)
    }

    pub fn contains(&self, t: f64) -> bool {
        (t - self.t_r).abs() <= self.tau
    }

    /// Whether the window lies strictly inside `(0, total)`.
    pub fn is_interior(&self, total: f64) -> bool {
        let (a, b) = self.interval();
        a > 0.0 && b < total
    }
}

/// Trajectory exchange document: spline plus release window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    pub s: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub durations: Vec<f64>,
    pub pieces: Vec<Vec<[f64; 3]>>,
    pub t_r: f64,
    pub tau: f64,
}

impl TrajectoryDocument {
    pub fn new(traj: &SplineTrajectory, window: &ReleaseWindow) -> Self {
        Self {
            s: traj.s,
            dim: traj.dim,
            durations: traj.durations.clone(),
            pieces: traj.pieces.clone(),
            t_r: window.t_r,
            tau: window.tau,
        }
    }

    pub fn split(&self) -> Result<(SplineTrajectory, ReleaseWindow)> {
        let traj = SplineTrajectory::new(self.s, self.durations.clone(), self.pieces.clone())?;
        Ok((traj, ReleaseWindow { t_r: self.t_r, tau: self.tau }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("trajectory JSON: {e}")))
    }
}
