use crate::datamodel::{mean_reference_profile, Sample, SoundSpeedProfile};
use crate::error::{Error, Result};

/// Standard deviations are floored here before dividing.
pub const STD_FLOOR: f64 = 1e-6;

/// Affine input scaling fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub speed_mean: Vec<f64>,
    pub speed_std: Vec<f64>,
    pub sst_mean: f64,
    pub sst_std: f64,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
}

/// Network-ready view of a [`Sample`].
#[derive(Debug, Clone)]
pub struct NormalizedSample {
    pub target_coord: [f64; 2],
    pub target_sst: f64,
    pub ref_coords: Vec<[f64; 2]>,
    pub ref_ssts: Vec<f64>,
    /// Row-major `[N, D]`.
    pub ref_profiles: Vec<f64>,
    /// Mean of the normalized reference profiles, `[D]`.
    pub ref_mean: Vec<f64>,
    pub target_profile: Option<Vec<f64>>,
    /// Mean of the physical reference profiles; the anchor of every prediction.
    pub physical_ref_mean: SoundSpeedProfile,
    pub n_refs: usize,
    pub depth_count: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn to_unit(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        2.0 * (v - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

fn from_unit(u: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        lo + (u + 1.0) * 0.5 * (hi - lo)
    } else {
        lo
    }
}

/// Fit per-depth speed statistics, SST statistics and the coordinate box on
/// the training samples (targets and their references).
pub fn normalize_stats(train: &[Sample]) -> Result<NormStats> {
    let Some(first) = train.first() else {
        return Err(Error::EmptyDataset("no training samples to fit normalization".into()));
    };
    let d = first.depth_count();
    let profiles: Vec<&SoundSpeedProfile> = train
        .iter()
        .flat_map(|s| {
            s.target_profile
                .iter()
                .chain(s.refs.entries().iter().map(|r| &r.profile))
        })
        .collect();
    if profiles.iter().any(|p| p.depth_count() != d) {
        return Err(Error::shape("training profiles disagree on depth count"));
    }
    let (speed_mean, speed_std) = (0..d)
        .map(|k| mean_std(profiles.iter().map(move |p| p.speeds()[k])))
        .unzip();
    let ssts = train
        .iter()
        .flat_map(|s| std::iter::once(s.target_sst).chain(s.refs.entries().iter().map(|r| r.sst)));
    let (sst_mean, sst_std) = mean_std(ssts);
    let coords = || {
        train
            .iter()
            .flat_map(|s| std::iter::once(s.target_coord).chain(s.refs.entries().iter().map(|r| r.coord)))
    };
    Ok(NormStats {
        speed_mean,
        speed_std,
        sst_mean,
        sst_std,
        lon_range: span(coords().map(|c| c.lon)),
        lat_range: span(coords().map(|c| c.lat)),
    })
}

impl NormStats {
    pub fn depth_count(&self) -> usize {
        self.speed_mean.len()
    }

    pub fn norm_speed(&self, k: usize, v: f64) -> f64 {
        (v - self.speed_mean[k]) / self.speed_std[k]
    }

    pub fn denorm_speed(&self, k: usize, v: f64) -> f64 {
        v * self.speed_std[k] + self.speed_mean[k]
    }

    /// Scale a normalized perturbation back to m/s (no mean shift).
    pub fn denorm_perturbation(&self, delta: &[f64]) -> Vec<f64> {
        delta.iter().zip(&self.speed_std).map(|(d, s)| d * s).collect()
    }

    pub fn norm_profile(&self, p: &[f64]) -> Vec<f64> {
        p.iter().enumerate().map(|(k, v)| self.norm_speed(k, *v)).collect()
    }

    pub fn denorm_profile(&self, p: &[f64]) -> Vec<f64> {
        p.iter().enumerate().map(|(k, v)| self.denorm_speed(k, *v)).collect()
    }

    pub fn norm_sst(&self, v: f64) -> f64 {
        (v - self.sst_mean) / self.sst_std
    }

    pub fn denorm_sst(&self, v: f64) -> f64 {
        v * self.sst_std + self.sst_mean
    }

    pub fn norm_coord(&self, lon: f64, lat: f64) -> [f64; 2] {
        [to_unit(lon, self.lon_range), to_unit(lat, self.lat_range)]
    }

    pub fn denorm_coord(&self, c: [f64; 2]) -> (f64, f64) {
        (from_unit(c[0], self.lon_range), from_unit(c[1], self.lat_range))
    }
}

pub fn apply_norm(s: &Sample, stats: &NormStats) -> Result<NormalizedSample> {
    let d = s.depth_count();
    if d != stats.depth_count() {
        return Err(Error::shape(format!(
            "sample depth count {d} != normalization depth count {}",
            stats.depth_count()
        )));
    }
    let n = s.refs.len();
    let mut ref_profiles = Vec::with_capacity(n * d);
    for r in s.refs.entries() {
        ref_profiles.extend(stats.norm_profile(r.profile.speeds()));
    }
    let mut ref_mean = vec![0.0; d];
    for row in ref_profiles.chunks(d) {
        for (m, v) in ref_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    ref_mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(NormalizedSample {
        target_coord: stats.norm_coord(s.target_coord.lon, s.target_coord.lat),
        target_sst: stats.norm_sst(s.target_sst),
        ref_coords: s
            .refs
            .entries()
            .iter()
            .map(|r| stats.norm_coord(r.coord.lon, r.coord.lat))
            .collect(),
        ref_ssts: s.refs.entries().iter().map(|r| stats.norm_sst(r.sst)).collect(),
        ref_profiles,
        ref_mean,
        target_profile: s.target_profile.as_ref().map(|p| stats.norm_profile(p.speeds())),
        physical_ref_mean: mean_reference_profile(&s.refs)?,
        n_refs: n,
        depth_count: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_samples, synthesize_field, MonthRange, SplitSpec, SynthSpec};
    use crate::datamodel::YearMonth;

    fn samples() -> Vec<Sample> {
        let f = synthesize_field(&SynthSpec::new(3, 8, 8, 4, 16)).unwrap();
        let ym = |k| YearMonth::new(2022, 1).unwrap().plus_months(k);
        build_samples(
            &f,
            &SplitSpec {
                train_months: MonthRange::new(ym(0), ym(2)).unwrap(),
                test_months: MonthRange::new(ym(3), ym(3)).unwrap(),
                train_stride_deg: 3.0,
                test_offset_deg: 1.0,
            },
        )
        .unwrap()
        .train
    }

    #[test]
    fn empty_train_rejected() {
        assert!(matches!(normalize_stats(&[]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn round_trip_within_tolerance() {
        let train = samples();
        let st = normalize_stats(&train).unwrap();
        for s in &train {
            let n = apply_norm(s, &st).unwrap();
            let back = st.denorm_profile(n.target_profile.as_ref().unwrap());
            for (a, b) in back.iter().zip(s.target_profile.as_ref().unwrap().speeds()) {
                assert!((a - b).abs() < 1e-5);
            }
            assert!((st.denorm_sst(n.target_sst) - s.target_sst).abs() < 1e-9);
            let (lon, lat) = st.denorm_coord(n.target_coord);
            assert!((lon - s.target_coord.lon).abs() < 1e-9);
            assert!((lat - s.target_coord.lat).abs() < 1e-9);
        }
    }

    #[test]
    fn coordinate_box_maps_to_unit_interval() {
        let train = samples();
        let st = normalize_stats(&train).unwrap();
        assert_eq!(st.norm_coord(st.lon_range.0, st.lat_range.0), [-1.0, -1.0]);
        assert_eq!(st.norm_coord(st.lon_range.1, st.lat_range.1), [1.0, 1.0]);
    }

    #[test]
    fn constant_depth_is_floored() {
        let mut train = samples();
        for s in &mut train {
            let mut v = s.target_profile.take().unwrap().into_speeds();
            v[0] = 1500.0;
            s.target_profile = Some(SoundSpeedProfile::new(v).unwrap());
            let entries: Vec<_> = s
                .refs
                .entries()
                .iter()
                .cloned()
                .map(|mut r| {
                    let mut v = r.profile.into_speeds();
                    v[0] = 1500.0;
                    r.profile = SoundSpeedProfile::new(v).unwrap();
                    r
                })
                .collect();
            s.refs = crate::datamodel::ReferenceSet::new(entries).unwrap();
        }
        let st = normalize_stats(&train).unwrap();
        assert_eq!(st.speed_std[0], STD_FLOOR);
        let n = apply_norm(&train[0], &st).unwrap();
        assert_eq!(n.target_profile.unwrap()[0], 0.0);
    }
}
