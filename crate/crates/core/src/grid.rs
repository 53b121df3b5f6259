use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization `t_i = i * T / M` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps);
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Nearest grid index to `t`, ties resolved to the lower index, clamped to `[0, M]`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let x = t * self.steps as f64 / self.horizon;
        let i = (x - 0.5).ceil();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.steps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_spacing() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let pts = g.points();
        assert_eq!(pts[0], 0.0);
        assert_eq!(pts[3], 1.0);
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.dt(), 1.0 / 3.0);
    }

    #[test]
    fn snapping_ties_go_down() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(g.nearest_index(0.25), 2);
        assert_eq!(g.nearest_index(0.26), 3);
        assert_eq!(g.nearest_index(0.24), 2);
        assert_eq!(g.nearest_index(-1.0), 0);
        assert_eq!(g.nearest_index(7.0), 10);
        assert_eq!(g.nearest_index(0.5), 5);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }
}
