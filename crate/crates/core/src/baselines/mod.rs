//! Comparison estimators: neighbour mean, inverse-distance weighting and a
//! small convolutional regressor.

pub mod cnn;

pub use cnn::{cnn_train, CnnConfig, CnnModel, CnnOutcome};

use crate::datamodel::{mean_reference_profile, Sample, SoundSpeedProfile};
use crate::error::{Error, Result};
use crate::evaluation::Estimator;

/// Neighbour mean profile.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanEstimator;

pub fn mean_estimate(s: &Sample) -> Result<SoundSpeedProfile> {
    mean_reference_profile(&s.refs)
}

impl Estimator for MeanEstimator {
    fn name(&self) -> &str {
        "MEAN"
    }

    fn estimate(&self, s: &Sample) -> Result<SoundSpeedProfile> {
        mean_estimate(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdwConfig {
    pub p: f64,
    /// Distances below this (degrees) count as collocated.
    pub zero_dist_eps: f64,
}

impl Default for IdwConfig {
    fn default() -> Self {
        IdwConfig { p: 2.0, zero_dist_eps: 1e-9 }
    }
}

impl IdwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) || !(self.zero_dist_eps >= 0.0) {
            return Err(Error::Config(format!(
                "idw power must be positive and zero distance non-negative, got p={} eps={}",
                self.p, self.zero_dist_eps
            )));
        }
        Ok(())
    }
}

/// Normalized weights `D_n^-p`, or `None` when some reference is collocated
/// with the target (its index is returned instead).
pub fn idw_weights(s: &Sample, cfg: &IdwConfig) -> std::result::Result<Vec<f64>, usize> {
    let dist: Vec<f64> = s
        .refs
        .entries()
        .iter()
        .map(|r| r.coord.planar_distance(&s.target_coord))
        .collect();
    if let Some(k) = dist.iter().position(|d| *d < cfg.zero_dist_eps) {
        return Err(k);
    }
    let raw: Vec<f64> = dist.iter().map(|d| d.powf(-cfg.p)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| w / total).collect())
}

pub fn idw_estimate(s: &Sample, cfg: &IdwConfig) -> Result<SoundSpeedProfile> {
    let refs = s.refs.entries();
    match idw_weights(s, cfg) {
        Err(k) => Ok(refs[k].profile.clone()),
        Ok(w) => {
            // accumulate deviations from the first profile: the terms stay
            // small, so rounding is relative to the spread, not to ~1500 m/s
            let base = refs[0].profile.speeds();
            let mut dev = vec![0.0; base.len()];
            for (r, wn) in refs.iter().zip(&w).skip(1) {
                for ((o, v), b) in dev.iter_mut().zip(r.profile.speeds()).zip(base) {
                    *o += wn * (v - b);
                }
            }
            SoundSpeedProfile::new(base.iter().zip(dev).map(|(b, o)| b + o).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdwEstimator {
    pub cfg: IdwConfig,
}

impl Estimator for IdwEstimator {
    fn name(&self) -> &str {
        "IDW"
    }

    fn estimate(&self, s: &Sample) -> Result<SoundSpeedProfile> {
        idw_estimate(s, &self.cfg)
    }
}
