use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network geometry and progressive schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Subnetwork count at stage 0, which is also the stage-0 depth count.
    pub base_subnets: usize,
    /// Hidden width of each stage-0 subnetwork.
    pub base_width: usize,
    /// Number of sine layers per subnetwork.
    pub hidden_depth: usize,
    /// Layer index that re-injects the raw coordinates; 0 disables.
    pub skip_layer: usize,
    pub num_stages: usize,
    pub omega0: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            base_subnets: 16,
            base_width: 32,
            hidden_depth: 8,
            skip_layer: 4,
            num_stages: 5,
            omega0: 30.0,
        }
    }
}

impl StageConfig {
    pub fn tiny(base_subnets: usize, base_width: usize, hidden_depth: usize, num_stages: usize) -> Self {
        Self {
            base_subnets,
            base_width,
            hidden_depth,
            skip_layer: hidden_depth / 2,
            num_stages,
            omega0: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.base_subnets;
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("base_subnets must be a power of two, got {d}")));
        }
        if self.base_width == 0 || self.hidden_depth == 0 {
            return Err(Error::InvalidConfig("base_width and hidden_depth must be positive".into()));
        }
        let max_stages = d.trailing_zeros() as usize + 1;
        if self.num_stages == 0 || self.num_stages > max_stages {
            return Err(Error::InvalidConfig(format!(
                "num_stages must be in 1..={max_stages} for base_subnets {d}, got {}",
                self.num_stages
            )));
        }
        if self.skip_layer >= self.hidden_depth {
            return Err(Error::InvalidConfig(format!(
                "skip_layer {} must be below hidden_depth {}",
                self.skip_layer, self.hidden_depth
            )));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::InvalidConfig(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }

    pub fn subnets_at(&self, stage: usize) -> usize {
        self.base_subnets >> stage
    }

    pub fn width_at(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn depth_samples_at(&self, stage: usize) -> usize {
        self.base_subnets << stage
    }

    pub fn max_depth_samples(&self) -> usize {
        self.depth_samples_at(self.num_stages - 1)
    }

    pub fn skip_enabled(&self) -> bool {
        self.skip_layer > 0
    }
}

/// Evenly spaced sample depths `(i + 1/2) / n` between the near plane at 0
/// and the far plane at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthGrid {
    values: Vec<f64>,
}

impl DepthGrid {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        Self {
            values: (0..n).map(|i| i as f64 / nf + 1.0 / (2.0 * nf)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Spacing between neighbouring samples, also used for the last one.
    pub fn delta(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn refined(&self) -> Self {
        Self::new(2 * self.len())
    }

    /// Rebuilds a grid from stored values, which must match [`DepthGrid::new`].
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let grid = Self::new(values.len());
        if values.is_empty() || grid.values != values {
            return Err(Error::InvalidConfig("depth grid values are not the uniform midpoint grid".into()));
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_geometry() {
        let c = StageConfig::default();
        c.validate().unwrap();
        assert_eq!((c.subnets_at(0), c.width_at(0), c.depth_samples_at(0)), (16, 32, 16));
        assert_eq!((c.subnets_at(1), c.width_at(1), c.depth_samples_at(1)), (8, 64, 32));
        for k in 0..c.num_stages {
            assert_eq!(c.subnets_at(k) * c.width_at(k), 16 * 32);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = StageConfig::default();
        c.base_subnets = 12;
        assert!(c.validate().is_err());
        let mut c = StageConfig::default();
        c.num_stages = 6;
        assert!(c.validate().is_err());
        let mut c = StageConfig::default();
        c.skip_layer = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn depth_grid_values() {
        let g = DepthGrid::new(16);
        assert_eq!(g.values()[0], 1.0 / 32.0);
        let fine = g.refined();
        assert_eq!(fine.values()[0], 1.0 / 64.0);
        assert_eq!(fine.values()[1], 3.0 / 64.0);
        for i in 0..16 {
            let mid = 0.5 * (fine.values()[2 * i] + fine.values()[2 * i + 1]);
            assert!((mid - g.values()[i]).abs() < 1e-15);
        }
        for i in 0..16 {
            assert!((g.values()[i] + g.values()[15 - i] - 1.0).abs() < 1e-15);
        }
        assert!(g.values().windows(2).all(|w| w[0] < w[1]));
    }
}
