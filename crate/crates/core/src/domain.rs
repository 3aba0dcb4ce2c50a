//! The flat torus `[0, L)^d` with a cell grid of `n` cells per side.
//!
//! Translations of the torus play the role of the stationary flow; every
//! construction in this crate is required to commute with them.

use crate::error::{Error, Result};

/// Relative size (in units of the grid pitch) below which two locations are
/// considered the same point.
pub const MERGE_QUANTUM: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicDomain {
    dim: usize,
    side: f64,
    resolution: usize,
}

impl PeriodicDomain {
    pub fn new(dim: usize, side: f64, resolution: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDomain("dimension must be positive".into()));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidDomain(format!("side length {side} must be positive")));
        }
        if resolution == 0 {
            return Err(Error::InvalidDomain("resolution must be positive".into()));
        }
        Ok(Self { dim, side, resolution })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Grid pitch `L / n`.
    pub fn pitch(&self) -> f64 {
        self.side / self.resolution as f64
    }

    /// Volume `L^d` of the torus.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn num_cells(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    /// Largest possible periodic distance, `(L/2)·√d`.
    pub fn max_distance(&self) -> f64 {
        0.5 * self.side * (self.dim as f64).sqrt()
    }

    /// Reduces a coordinate into `[0, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let r = x.rem_euclid(self.side);
        // rem_euclid can round up to exactly L for tiny negative inputs
        if r >= self.side {
            0.0
        } else {
            r
        }
    }

    /// Reduces a coordinate difference into `[-L/2, L/2)`.
    pub fn wrap_delta(&self, d: f64) -> f64 {
        let half = 0.5 * self.side;
        let r = (d + half).rem_euclid(self.side) - half;
        if r >= half {
            r - self.side
        } else {
            r
        }
    }

    /// Shortest periodic displacement `y - x`.
    pub fn displacement(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter().zip(y).map(|(a, b)| self.wrap_delta(b - a)).collect()
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = self.wrap_delta(b - a);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Translates `x` by `v` modulo `L`.
    pub fn translate(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter().zip(v).map(|(a, b)| self.wrap(a + b)).collect()
    }

    /// Linear index of the grid cell containing `x` (first coordinate fastest).
    pub fn cell_index(&self, x: &[f64]) -> usize {
        let n = self.resolution;
        let mut idx = 0;
        for &c in x.iter().rev() {
            let i = ((self.wrap(c) / self.pitch()).floor() as usize).min(n - 1);
            idx = idx * n + i;
        }
        idx
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        let n = self.resolution;
        let mut rest = index;
        (0..self.dim)
            .map(|_| {
                let i = rest % n;
                rest /= n;
                (i as f64 + 0.5) * self.pitch()
            })
            .collect()
    }

    /// Whether `x` sits (up to the merge quantum) at a cell center.
    pub fn is_cell_center(&self, x: &[f64]) -> bool {
        let p = self.pitch();
        x.iter().all(|&c| {
            let t = c / p - 0.5;
            (t - t.round()).abs() <= MERGE_QUANTUM * 16.0
        })
    }

    fn quantum(&self) -> f64 {
        MERGE_QUANTUM * self.pitch()
    }

    fn quantum_period(&self) -> i64 {
        (self.side / self.quantum()).round() as i64
    }

    /// Integer location key; equal keys identify the same point.
    pub fn location_key(&self, x: &[f64]) -> Vec<i64> {
        let q = self.quantum();
        let period = self.quantum_period();
        x.iter().map(|&c| ((c / q).round() as i64).rem_euclid(period)).collect()
    }

    /// Integer key of a periodic displacement, canonical in `[-K/2, K/2)`.
    pub fn displacement_key(&self, v: &[f64]) -> Vec<i64> {
        let q = self.quantum();
        let period = self.quantum_period();
        let half = period / 2;
        v.iter()
            .map(|&c| {
                let k = ((c / q).round() as i64).rem_euclid(period);
                if k >= half {
                    k - period
                } else {
                    k
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(PeriodicDomain::new(0, 1.0, 4).is_err());
        assert!(PeriodicDomain::new(1, 0.0, 4).is_err());
        assert!(PeriodicDomain::new(1, f64::NAN, 4).is_err());
        assert!(PeriodicDomain::new(1, 1.0, 0).is_err());
    }

    #[test]
    fn periodic_distance_wraps() {
        let d = PeriodicDomain::new(1, 1.0, 4).unwrap();
        assert!((d.distance(&[0.1], &[0.9]) - 0.2).abs() < 1e-15);
        assert!((d.displacement(&[0.9], &[0.1])[0] - 0.2).abs() < 1e-15);
        assert!((d.displacement(&[0.1], &[0.9])[0] + 0.2).abs() < 1e-15);
        let d2 = PeriodicDomain::new(2, 2.0, 4).unwrap();
        assert!(d2.distance(&[0.0, 0.0], &[1.0, 1.0]) <= d2.max_distance() + 1e-15);
    }

    #[test]
    fn half_period_displacement_is_canonical() {
        let d = PeriodicDomain::new(1, 1.0, 2).unwrap();
        assert_eq!(d.wrap_delta(0.5), -0.5);
        assert_eq!(d.wrap_delta(-0.5), -0.5);
        assert_eq!(d.displacement_key(&[0.5]), d.displacement_key(&[-0.5]));
    }

    #[test]
    fn cell_round_trip() {
        let d = PeriodicDomain::new(2, 1.0, 8).unwrap();
        for i in 0..d.num_cells() {
            let c = d.cell_center(i);
            assert_eq!(d.cell_index(&c), i);
            assert!(d.is_cell_center(&c));
        }
        assert!(!d.is_cell_center(&[0.1, 0.0625]));
    }

    #[test]
    fn wrap_stays_in_range() {
        let d = PeriodicDomain::new(1, 1.0, 4).unwrap();
        assert_eq!(d.wrap(-1e-18), 0.0);
        assert_eq!(d.wrap(1.25), 0.25);
        assert_eq!(d.translate(&[0.75], &[0.5]), vec![0.25]);
    }
}
