use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{GeoCoordinate, SoundSpeedProfile, YearMonth};
use crate::error::Result;

use super::grid::{GridCell, GridField};

/// Upper bound on |speed difference| between lattice neighbours in a
/// synthesized field, m/s.
pub const SPATIAL_ROUGHNESS_BOUND: f64 = 20.0;

/// Upper bound on the magnitude of the depth second difference, m/s.
pub const DEPTH_CURVATURE_BOUND: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_lon: usize,
    pub n_lat: usize,
    pub months: usize,
    pub depth_count: usize,
    pub origin: GeoCoordinate,
    pub start: YearMonth,
    pub cell_deg: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, n_lon: usize, n_lat: usize, months: usize, depth_count: usize) -> Self {
        SynthSpec {
            seed,
            n_lon,
            n_lat,
            months,
            depth_count,
            origin: GeoCoordinate { lon: 0.5, lat: -59.5 },
            start: YearMonth { year: 2022, month: 1 },
            cell_deg: 1.0,
        }
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    drift: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, min_len: f64, max_len: f64) -> Self {
        let len_x = rng.gen_range(min_len..max_len);
        let len_y = rng.gen_range(min_len..max_len);
        Wave {
            kx: 2.0 * PI / len_x,
            ky: 2.0 * PI / len_y,
            phase: rng.gen_range(0.0..2.0 * PI),
            drift: rng.gen_range(0.1..0.4),
        }
    }

    fn at(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.kx * x + self.phase + self.drift * t).sin() * (self.ky * y - 0.5 * self.phase).cos()
    }
}

/// Deterministic artificial SST and profile field.
///
/// Profiles are a smooth depth climatology plus a surface-trapped term that
/// follows the local SST (including a cell-level SST anomaly neighbours do
/// not share) and a deeper, slowly varying spatial pattern.
pub fn synthesize_field(spec: &SynthSpec) -> Result<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sst_wave = Wave::random(&mut rng, 9.0, 14.0);
    let deep_wave = Wave::random(&mut rng, 12.0, 20.0);
    let season_phase = rng.gen_range(0.0..2.0 * PI);
    let d = spec.depth_count.max(1);

    let months: Vec<YearMonth> = (0..spec.months)
        .map(|k| spec.start.plus_months(k as i64))
        .collect();
    let mut cells = Vec::with_capacity(spec.months * spec.n_lon * spec.n_lat);
    for (t, ym) in months.iter().enumerate() {
        let season = (2.0 * PI * (ym.month as f64 - 1.0) / 12.0 + season_phase).sin();
        for i in 0..spec.n_lon {
            for j in 0..spec.n_lat {
                let (x, y) = (i as f64, j as f64);
                let anomaly: f64 = rng.gen_range(-1.0..1.0);
                let sst = 11.0 + 1.8 * sst_wave.at(x, y, t as f64) + 0.15 * y + 1.2 * season + 0.6 * anomaly;
                let deep = deep_wave.at(x, y, t as f64);
                let speeds: Vec<f64> = (0..d)
                    .map(|k| {
                        let u = if d > 1 { k as f64 / (d - 1) as f64 } else { 0.0 };
                        let surface = (-u / 0.25).exp();
                        let climatology = 1482.0 - 9.0 * u + 22.0 * u * u;
                        let v = climatology
                            + 3.2 * (sst - 11.0) * surface
                            + 2.5 * deep * (1.0 - surface) * (0.3 + 0.7 * u);
                        v as f32 as f64
                    })
                    .collect();
                cells.push(Some(GridCell {
                    sst: sst as f32 as f64,
                    profile: SoundSpeedProfile::new(speeds)?,
                }));
            }
        }
    }
    GridField::from_cells(spec.origin, spec.cell_deg, spec.n_lon, spec.n_lat, months, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> GridField {
        synthesize_field(&SynthSpec::new(7, 12, 12, 12, 64)).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(field(), field());
        assert_ne!(field(), synthesize_field(&SynthSpec::new(8, 12, 12, 12, 64)).unwrap());
    }

    #[test]
    fn neighbours_within_roughness_bound() {
        let f = field();
        let mut worst: f64 = 0.0;
        for m in 0..f.months.len() {
            for i in 0..f.n_lon {
                for j in 0..f.n_lat {
                    let a = f.cell(m, i, j).unwrap();
                    for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                        if let Some(b) = f.cell(m, ni, nj) {
                            for (x, y) in a.profile.speeds().iter().zip(b.profile.speeds()) {
                                worst = worst.max((x - y).abs());
                            }
                        }
                    }
                }
            }
        }
        assert!(worst < SPATIAL_ROUGHNESS_BOUND, "worst neighbour difference {worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn smooth_in_depth_and_physical() {
        let f = field();
        for m in 0..f.months.len() {
            for i in 0..f.n_lon {
                for j in 0..f.n_lat {
                    let s = f.cell(m, i, j).unwrap().profile.speeds();
                    assert!(SoundSpeedProfile::new_physical(s.to_vec()).is_ok());
                    for w in s.windows(3) {
                        assert!((w[0] - 2.0 * w[1] + w[2]).abs() < DEPTH_CURVATURE_BOUND);
                    }
                }
            }
        }
    }

    #[test]
    fn surface_speed_tracks_sst() {
        let f = field();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in 0..f.months.len() {
            for i in 0..f.n_lon {
                for j in 0..f.n_lat {
                    let c = f.cell(m, i, j).unwrap();
                    xs.push(c.sst);
                    ys.push(c.profile.speeds()[0]);
                }
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r > 0.5, "correlation {r}");
    }
}
