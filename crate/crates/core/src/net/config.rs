//! Network hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// Two stride-2 stages in the backbone fix the feature stride.
pub const STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Feature channels after the neck; flow features use `cf/2`.
    pub cf: usize,
    pub hf: usize,
    pub wf: usize,
    /// Detection queries from heatmap peaks.
    pub k_queries: usize,
    /// Sampling points per query in deformable attention.
    pub n_deform_points: usize,
    pub n_enhance_blocks: usize,
    pub n_cross_blocks: usize,
    pub n_prop_blocks: usize,
    /// When false, propagation anchors at the grid (vanilla deformable
    /// attention); flow is still estimated and supervised.
    pub flow_guided: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
    /// Feed-forward hidden width = `ffn_mult × channels`.
    pub ffn_mult: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            cf: 64,
            hf: 32,
            wf: 32,
            k_queries: 16,
            n_deform_points: 4,
            n_enhance_blocks: 2,
            n_cross_blocks: 2,
            n_prop_blocks: 2,
            flow_guided: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
            ffn_mult: 2,
        }
    }
}

impl NetConfig {
    /// Reduced config for gradient checks: 16×16 inputs, 4×4 grid.
    pub fn toy() -> Self {
        NetConfig {
            cf: 8,
            hf: 4,
            wf: 4,
            k_queries: 2,
            n_deform_points: 2,
            ..NetConfig::default()
        }
    }

    /// Mid-size config for desk-scale training runs: 64×64 inputs.
    pub fn compact() -> Self {
        NetConfig {
            cf: 32,
            hf: 16,
            wf: 16,
            k_queries: 8,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?; // hf/wf divisibility
        if self.cf < 4 || !self.cf.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "cf {} must be a positive multiple of 4",
                self.cf
            )));
        }
        if self.k_queries == 0 || self.k_queries > grid.cells() {
            return Err(Error::InvalidConfig(format!(
                "k_queries {} out of range for {} cells",
                self.k_queries,
                grid.cells()
            )));
        }
        if self.n_deform_points == 0 {
            return Err(Error::InvalidConfig("n_deform_points must be ≥ 1".into()));
        }
        if self.n_enhance_blocks == 0 || self.n_cross_blocks == 0 || self.n_prop_blocks == 0 {
            return Err(Error::InvalidConfig("block counts must be ≥ 1".into()));
        }
        if self.ffn_mult == 0 {
            return Err(Error::InvalidConfig("ffn_mult must be ≥ 1".into()));
        }
        if self.bn_eps <= 0.0 || self.ln_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig("bad normalization constants".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.hf, self.wf, STRIDE)
    }

    /// Window size of the enhancement blocks: half the grid per side.
    pub fn window(&self) -> (usize, usize) {
        (self.hf / 2, self.wf / 2)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.hf * STRIDE, self.wf * STRIDE)
    }

    pub fn cells(&self) -> usize {
        self.hf * self.wf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        NetConfig::default().validate().unwrap();
        NetConfig::toy().validate().unwrap();
        NetConfig::compact().validate().unwrap();
    }

    #[test]
    fn window_is_half_grid() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.window(), (16, 16));
        assert_eq!(cfg.image_size(), (128, 128));
    }

    #[test]
    fn rejects_odd_cf() {
        let cfg = NetConfig {
            cf: 6,
            ..NetConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = NetConfig::compact();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: NetConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }
}
