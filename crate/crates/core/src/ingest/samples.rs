use std::collections::HashSet;

use crate::datamodel::{Reference, ReferenceSet, Sample, YearMonth};
use crate::error::{Error, Result};

use super::grid::GridField;

/// Inclusive month range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonthRange {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthRange {
    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("month range {start}..{end} is reversed")));
        }
        Ok(MonthRange { start, end })
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        self.start <= ym && ym <= self.end
    }

    pub fn overlaps(&self, other: &MonthRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_months: MonthRange,
    pub test_months: MonthRange,
    pub train_stride_deg: f64,
    pub test_offset_deg: f64,
}

#[derive(Debug, Clone)]
pub struct SampleSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Neighbour offsets of a 3x3 window, latitude-major, centre excluded.
pub const WINDOW_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Build the sample centred at `(i, j)` in month `m`, if the full window is present.
pub fn window_sample(field: &GridField, m: usize, i: usize, j: usize) -> Option<Sample> {
    if i == 0 || j == 0 || i + 1 >= field.n_lon || j + 1 >= field.n_lat {
        return None;
    }
    let centre = field.cell(m, i, j)?;
    let mut refs = Vec::with_capacity(8);
    for (di, dj) in WINDOW_OFFSETS {
        let (ni, nj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
        let c = field.cell(m, ni, nj)?;
        refs.push(Reference {
            coord: field.coord(ni, nj),
            sst: c.sst,
            profile: c.profile.clone(),
        });
    }
    let refs = ReferenceSet::new(refs).ok()?;
    Sample::new(
        field.coord(i, j),
        centre.sst,
        refs,
        Some(centre.profile.clone()),
        field.months[m],
    )
    .ok()
}

fn lattice_cells(deg: f64, cell_deg: f64, what: &str) -> Result<usize> {
    let n = (deg / cell_deg).round();
    if !(n.is_finite() && n >= 0.0 && ((n * cell_deg) - deg).abs() < 1e-6) {
        return Err(Error::Config(format!(
            "{what} {deg} deg is not a multiple of the {cell_deg} deg cell"
        )));
    }
    Ok(n as usize)
}

/// Extract windowed train/test samples on complementary spatial lattices and
/// disjoint month ranges.
///
/// Train centres sit at lattice indices `1 + k*stride` in both axes, test
/// centres at `1 + offset + k*stride`.
pub fn build_samples(field: &GridField, split: &SplitSpec) -> Result<SampleSplit> {
    if split.train_months.overlaps(&split.test_months) {
        return Err(Error::Config("train and test month ranges overlap".into()));
    }
    let stride = lattice_cells(split.train_stride_deg, field.cell_deg, "train stride")?;
    let offset = lattice_cells(split.test_offset_deg, field.cell_deg, "test offset")?;
    if stride == 0 {
        return Err(Error::Config("train stride must be at least one cell".into()));
    }
    if offset % stride == 0 {
        return Err(Error::Config(format!(
            "test offset of {offset} cells coincides with the {stride}-cell training lattice"
        )));
    }

    let on_lattice = |i: usize, shift: usize| i > shift && (i - 1 - shift).is_multiple_of(stride);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut train_centres = HashSet::new();
    let mut test_centres = HashSet::new();
    for (m, ym) in field.months.iter().enumerate() {
        let (is_train, is_test) = (split.train_months.contains(*ym), split.test_months.contains(*ym));
        if !is_train && !is_test {
            continue;
        }
        for j in 1..field.n_lat.saturating_sub(1) {
            for i in 1..field.n_lon.saturating_sub(1) {
                if is_train && on_lattice(i, 0) && on_lattice(j, 0) {
                    if let Some(s) = window_sample(field, m, i, j) {
                        train_centres.insert((i, j));
                        train.push(s);
                    }
                } else if is_test && on_lattice(i, offset % stride) && on_lattice(j, offset % stride)
                {
                    if let Some(s) = window_sample(field, m, i, j) {
                        test_centres.insert((i, j));
                        test.push(s);
                    }
                }
            }
        }
    }
    if train_centres.intersection(&test_centres).next().is_some() {
        return Err(Error::Contract("train and test centres overlap".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySplit);
    }
    Ok(SampleSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::GeoCoordinate;
    use crate::ingest::grid::GridCell;
    use crate::datamodel::SoundSpeedProfile;

    fn field(n_lon: usize, n_lat: usize, months: usize, present: impl Fn(usize, usize) -> bool) -> GridField {
        let ms: Vec<YearMonth> = (0..months)
            .map(|k| YearMonth::new(2020, 1).unwrap().plus_months(k as i64))
            .collect();
        let mut cells = Vec::new();
        for _ in 0..months {
            for i in 0..n_lon {
                for j in 0..n_lat {
                    cells.push(present(i, j).then(|| GridCell {
                        sst: (i + j) as f64,
                        profile: SoundSpeedProfile::new(vec![1500.0 + i as f64, 1490.0 + j as f64]).unwrap(),
                    }));
                }
            }
        }
        GridField::from_cells(GeoCoordinate { lon: 0.5, lat: -59.5 }, 1.0, n_lon, n_lat, ms, cells).unwrap()
    }

    fn split(train: (i64, i64), test: (i64, i64)) -> SplitSpec {
        let b = YearMonth::new(2020, 1).unwrap();
        SplitSpec {
            train_months: MonthRange::new(b.plus_months(train.0), b.plus_months(train.1)).unwrap(),
            test_months: MonthRange::new(b.plus_months(test.0), b.plus_months(test.1)).unwrap(),
            train_stride_deg: 3.0,
            test_offset_deg: 1.0,
        }
    }

    #[test]
    fn isolated_cell_is_empty_split() {
        let f = field(5, 5, 2, |i, j| i == 2 && j == 2);
        assert!(matches!(build_samples(&f, &split((0, 0), (1, 1))), Err(Error::EmptySplit)));
    }

    #[test]
    fn windows_have_eight_same_month_neighbours() {
        let f = field(8, 8, 3, |_, _| true);
        let s = build_samples(&f, &split((0, 1), (2, 2))).unwrap();
        for smp in s.train.iter().chain(&s.test) {
            assert_eq!(smp.refs.len(), 8);
            for r in smp.refs.entries() {
                let d = r.coord.planar_distance(&smp.target_coord);
                assert!(d > 0.5 && d < 1.5);
            }
        }
        assert!(s.train.iter().all(|x| x.epoch_tag < YearMonth::new(2020, 3).unwrap()));
        assert!(s.test.iter().all(|x| x.epoch_tag == YearMonth::new(2020, 3).unwrap()));
    }

    #[test]
    fn missing_neighbour_masks_window() {
        let f = field(5, 5, 2, |i, j| !(i == 0 && j == 0));
        let s = window_sample(&f, 0, 1, 1);
        assert!(s.is_none());
        assert!(window_sample(&f, 0, 2, 2).is_some());
    }

    #[test]
    fn offset_on_stride_lattice_rejected() {
        let f = field(8, 8, 2, |_, _| true);
        let mut sp = split((0, 0), (1, 1));
        sp.test_offset_deg = 3.0;
        assert!(matches!(build_samples(&f, &sp), Err(Error::Config(_))));
        let sp = split((0, 1), (1, 1));
        assert!(matches!(build_samples(&f, &sp), Err(Error::Config(_))));
    }
}
