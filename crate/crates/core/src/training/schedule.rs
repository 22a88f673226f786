use crate::error::{Error, Result};

/// Linear warmup to `eta_max` followed by cosine annealing to `eta_min`,
/// indexed by (fractional) epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup: f64,
    pub total: f64,
}

impl LrSchedule {
    pub fn new(eta_max: f64, eta_min: f64, warmup: f64, total: f64) -> Result<Self> {
        if !(eta_max > 0.0 && eta_min > 0.0 && eta_min <= eta_max) {
            return Err(Error::Config(format!("learning rates must satisfy 0 < {eta_min} <= {eta_max}")));
        }
        if !(warmup >= 0.0 && warmup < total) {
            return Err(Error::Config(format!("warmup {warmup} must be below total {total} epochs")));
        }
        Ok(LrSchedule {
            eta_max,
            eta_min,
            warmup,
            total,
        })
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.total).contains(&t) {
            return Err(Error::Range(format!("epoch {t} outside [0, {}]", self.total)));
        }
        if self.warmup > 0.0 && t <= self.warmup {
            return Ok(self.eta_max * t / self.warmup);
        }
        let frac = (t - self.warmup) / (self.total - self.warmup);
        Ok(self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

pub fn lr_schedule(t: f64, s: &LrSchedule) -> Result<f64> {
    s.at(t)
}
