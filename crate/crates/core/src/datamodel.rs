//! Profiles, coordinates and windowed samples.

use std::fmt;

use crate::error::{Error, Result};

/// Number of neighbours in a 3x3 window.
pub const DEFAULT_NEIGHBOURS: usize = 8;

/// Physically plausible sound speed bounds in m/s, exclusive.
pub const MIN_VALID_SPEED: f64 = 1300.0;
pub const MAX_VALID_SPEED: f64 = 1700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCoordinate {
    /// Degrees east.
    pub lon: f64,
    /// Degrees north; negative is south.
    pub lat: f64,
}

impl GeoCoordinate {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..360.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Range(format!("coordinate ({lon}, {lat}) outside the globe")));
        }
        Ok(GeoCoordinate { lon, lat })
    }

    /// Planar distance in degrees.
    pub fn planar_distance(&self, other: &GeoCoordinate) -> f64 {
        let dx = self.lon - other.lon;
        let dy = self.lat - other.lat;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Range(format!("month {month} not in 1..=12")));
        }
        Ok(YearMonth { year, month })
    }

    /// Month offset from year zero; handy for ranges.
    pub fn ordinal(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        YearMonth {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn plus_months(&self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl std::str::FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Config(format!("bad year in {s:?}")))?;
        let month = m
            .parse()
            .map_err(|_| Error::Config(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Sound speeds on a uniform 1 m depth grid, starting at the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundSpeedProfile {
    speeds: Vec<f64>,
}

impl SoundSpeedProfile {
    pub const DEPTH_STEP: f64 = 1.0;

    pub fn new(speeds: Vec<f64>) -> Result<Self> {
        if speeds.is_empty() {
            return Err(Error::InvalidProfile("profile has no depth levels".into()));
        }
        if let Some(i) = speeds.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidProfile(format!("non-finite speed at level {i}")));
        }
        Ok(SoundSpeedProfile { speeds })
    }

    /// Like [`SoundSpeedProfile::new`] but also enforces the physical speed range.
    pub fn new_physical(speeds: Vec<f64>) -> Result<Self> {
        let p = Self::new(speeds)?;
        if let Some(i) = p
            .speeds
            .iter()
            .position(|&s| s <= MIN_VALID_SPEED || s >= MAX_VALID_SPEED)
        {
            return Err(Error::InvalidProfile(format!(
                "speed {} m/s at level {i} outside ({MIN_VALID_SPEED}, {MAX_VALID_SPEED})",
                p.speeds[i]
            )));
        }
        Ok(p)
    }

    pub fn depth_count(&self) -> usize {
        self.speeds.len()
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn into_speeds(self) -> Vec<f64> {
        self.speeds
    }

    pub fn depth_at(&self, level: usize) -> f64 {
        level as f64 * Self::DEPTH_STEP
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub coord: GeoCoordinate,
    pub sst: f64,
    pub profile: SoundSpeedProfile,
}

/// The neighbouring records around a target point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    entries: Vec<Reference>,
}

impl ReferenceSet {
    pub fn new(entries: Vec<Reference>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::shape("reference set is empty"));
        };
        let d = first.profile.depth_count();
        if let Some(bad) = entries.iter().find(|r| r.profile.depth_count() != d) {
            return Err(Error::shape(format!(
                "reference profiles disagree on depth count ({d} vs {})",
                bad.profile.depth_count()
            )));
        }
        Ok(ReferenceSet { entries })
    }

    pub fn entries(&self) -> &[Reference] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn depth_count(&self) -> usize {
        self.entries[0].profile.depth_count()
    }
}

/// One training or evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target_coord: GeoCoordinate,
    pub target_sst: f64,
    pub refs: ReferenceSet,
    pub target_profile: Option<SoundSpeedProfile>,
    pub epoch_tag: YearMonth,
}

impl Sample {
    pub fn new(
        target_coord: GeoCoordinate,
        target_sst: f64,
        refs: ReferenceSet,
        target_profile: Option<SoundSpeedProfile>,
        epoch_tag: YearMonth,
    ) -> Result<Self> {
        if let Some(p) = &target_profile {
            if p.depth_count() != refs.depth_count() {
                return Err(Error::shape(format!(
                    "target depth count {} != reference depth count {}",
                    p.depth_count(),
                    refs.depth_count()
                )));
            }
        }
        Ok(Sample {
            target_coord,
            target_sst,
            refs,
            target_profile,
            epoch_tag,
        })
    }

    pub fn depth_count(&self) -> usize {
        self.refs.depth_count()
    }

    pub fn truth(&self) -> Result<&SoundSpeedProfile> {
        self.target_profile
            .as_ref()
            .ok_or_else(|| Error::Contract("sample has no target profile".into()))
    }
}

/// Linearly interpolate scattered observations onto a uniform grid spanning
/// `[raw_depths[0], raw_depths[last]]`.
pub fn interpolate_profile(
    raw_depths: &[f64],
    raw_speeds: &[f64],
    step: f64,
) -> Result<SoundSpeedProfile> {
    if raw_depths.len() != raw_speeds.len() {
        return Err(Error::InvalidProfile(format!(
            "{} depths but {} speeds",
            raw_depths.len(),
            raw_speeds.len()
        )));
    }
    if raw_depths.len() < 2 {
        return Err(Error::InvalidProfile("need at least two levels".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidProfile(format!("bad grid step {step}")));
    }
    if raw_depths.iter().chain(raw_speeds).any(|v| !v.is_finite()) {
        return Err(Error::InvalidProfile("non-finite depth or speed".into()));
    }
    if raw_depths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidProfile("depths not strictly increasing".into()));
    }

    let top = raw_depths[0];
    let bottom = raw_depths[raw_depths.len() - 1];
    let n = ((bottom - top) / step + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let z = top + i as f64 * step;
        while seg + 2 < raw_depths.len() && z >= raw_depths[seg + 1] {
            seg += 1;
        }
        let (z0, z1) = (raw_depths[seg], raw_depths[seg + 1]);
        let (s0, s1) = (raw_speeds[seg], raw_speeds[seg + 1]);
        let v = if z == z0 {
            s0
        } else if z == z1 {
            s1
        } else {
            // multiply before dividing so affine data with dyadic slopes stays exact
            s0 + ((s1 - s0) * (z - z0)) / (z1 - z0)
        };
        out.push(v);
    }
    SoundSpeedProfile::new(out)
}

/// Elementwise mean of the reference profiles.
pub fn mean_reference_profile(refs: &ReferenceSet) -> Result<SoundSpeedProfile> {
    mean_of_profiles(refs.entries().iter().map(|r| &r.profile))
}

pub(crate) fn mean_of_profiles<'a>(
    profiles: impl Iterator<Item = &'a SoundSpeedProfile>,
) -> Result<SoundSpeedProfile> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for p in profiles {
        if n == 0 {
            acc = p.speeds().to_vec();
        } else {
            if p.depth_count() != acc.len() {
                return Err(Error::shape("profiles disagree on depth count"));
            }
            for (a, s) in acc.iter_mut().zip(p.speeds()) {
                *a += s;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::shape("no profiles to average"));
    }
    let inv = n as f64;
    SoundSpeedProfile::new(acc.into_iter().map(|a| a / inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refset(profiles: Vec<Vec<f64>>) -> ReferenceSet {
        ReferenceSet::new(
            profiles
                .into_iter()
                .enumerate()
                .map(|(i, s)| Reference {
                    coord: GeoCoordinate::new(i as f64, 0.0).unwrap(),
                    sst: 10.0,
                    profile: SoundSpeedProfile::new(s).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn interpolates_full_grid_length() {
        // 58 levels, irregular spacing, 0..=1976 m
        let mut depths: Vec<f64> = (0..57).map(|i| (i as f64 / 56.0).powi(2) * 1900.0).collect();
        depths.push(1976.0);
        depths.iter_mut().for_each(|d| *d = d.round());
        depths.dedup();
        assert!(depths.len() >= 50);
        let speeds: Vec<f64> = depths.iter().map(|d| 1500.0 + d * 0.01).collect();
        let p = interpolate_profile(&depths, &speeds, 1.0).unwrap();
        assert_eq!(p.depth_count(), 1977);
    }

    #[test]
    fn interpolation_small_cases() {
        let p = interpolate_profile(&[0.0, 2.0], &[1500.0, 1500.0], 1.0).unwrap();
        assert_eq!(p.speeds(), &[1500.0, 1500.0, 1500.0]);
        let p = interpolate_profile(&[0.0, 2.0], &[1500.0, 1502.0], 1.0).unwrap();
        assert_eq!(p.speeds()[1], 1501.0);
    }

    #[test]
    fn interpolation_rejects_bad_input() {
        assert!(matches!(
            interpolate_profile(&[0.0, 2.0, 1.0], &[1.0, 2.0, 3.0], 1.0),
            Err(Error::InvalidProfile(_))
        ));
        assert!(matches!(
            interpolate_profile(&[0.0, 2.0], &[1500.0, f64::NAN], 1.0),
            Err(Error::InvalidProfile(_))
        ));
        assert!(interpolate_profile(&[0.0], &[1500.0], 1.0).is_err());
        assert!(interpolate_profile(&[0.0, 1.0], &[1500.0], 1.0).is_err());
    }

    #[test]
    fn mean_profile_cases() {
        let p = vec![1500.0, 1490.0, 1510.5];
        let m = mean_reference_profile(&refset(vec![p.clone(); 8])).unwrap();
        assert_eq!(m.speeds(), &p[..]);
        let m = mean_reference_profile(&refset(vec![vec![1500.0], vec![1502.0]])).unwrap();
        assert_eq!(m.speeds(), &[1501.0]);
    }

    #[test]
    fn mismatched_depths_rejected() {
        let entries = vec![
            Reference {
                coord: GeoCoordinate::new(0.0, 0.0).unwrap(),
                sst: 1.0,
                profile: SoundSpeedProfile::new(vec![1500.0]).unwrap(),
            },
            Reference {
                coord: GeoCoordinate::new(1.0, 0.0).unwrap(),
                sst: 1.0,
                profile: SoundSpeedProfile::new(vec![1500.0, 1501.0]).unwrap(),
            },
        ];
        assert!(matches!(ReferenceSet::new(entries), Err(Error::Shape(_))));
    }

    #[test]
    fn coordinate_bounds() {
        assert!(GeoCoordinate::new(359.9, -90.0).is_ok());
        assert!(GeoCoordinate::new(360.0, 0.0).is_err());
        assert!(GeoCoordinate::new(0.0, 90.5).is_err());
    }

    #[test]
    fn physical_range_checked() {
        assert!(SoundSpeedProfile::new_physical(vec![1500.0]).is_ok());
        assert!(SoundSpeedProfile::new_physical(vec![1300.0]).is_err());
        assert!(SoundSpeedProfile::new(vec![]).is_err());
    }

    #[test]
    fn year_month_parse_roundtrip() {
        let ym: YearMonth = "2021-06".parse().unwrap();
        assert_eq!(ym, YearMonth::new(2021, 6).unwrap());
        assert_eq!(ym.to_string(), "2021-06");
        assert_eq!(ym.plus_months(7), YearMonth::new(2022, 1).unwrap());
        assert!("2021-13".parse::<YearMonth>().is_err());
    }

    proptest! {
        #[test]
        fn mean_matches_brute_force_and_permutation(
            seeds in proptest::collection::vec(proptest::collection::vec(1400.0f64..1600.0, 5), 8),
            rot in 0usize..8,
        ) {
            let m = mean_reference_profile(&refset(seeds.clone())).unwrap();
            for d in 0..5 {
                let mut s = 0.0;
                for p in &seeds { s += p[d]; }
                prop_assert!((m.speeds()[d] - s / 8.0).abs() <= 1e-12);
            }
            let mut rotated = seeds.clone();
            rotated.rotate_left(rot);
            let m2 = mean_reference_profile(&refset(rotated)).unwrap();
            for d in 0..5 {
                prop_assert!((m.speeds()[d] - m2.speeds()[d]).abs() <= 1e-12);
            }
        }

        #[test]
        fn interpolation_exact_on_affine(
            mut knots in proptest::collection::btree_set(0u32..400, 2..20),
            a in -64i32..64, b in -256i32..256,
        ) {
            let depths: Vec<f64> = std::mem::take(&mut knots).into_iter().map(f64::from).collect();
            let (a, b) = (1500.0 + a as f64 / 64.0, b as f64 / 64.0);
            let speeds: Vec<f64> = depths.iter().map(|z| a + b * z).collect();
            let p = interpolate_profile(&depths, &speeds, 1.0).unwrap();
            for (i, v) in p.speeds().iter().enumerate() {
                let z = depths[0] + i as f64;
                prop_assert_eq!(*v, a + b * z);
            }
        }
    }
}
