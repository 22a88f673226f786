use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::datamodel::{GeoCoordinate, SoundSpeedProfile, YearMonth};
use crate::error::{Error, Result};

/// First line of every grid file.
pub const GRID_VERSION_LINE: &str = "# sspfield-grid v1";

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub sst: f64,
    pub profile: SoundSpeedProfile,
}

/// Monthly gridded SST and profiles on a regular lon/lat lattice.
///
/// Cells are addressed by `(month index, lon index, lat index)`; a cell is
/// present only when both an SST value and a profile exist for it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub origin: GeoCoordinate,
    pub cell_deg: f64,
    pub n_lon: usize,
    pub n_lat: usize,
    pub months: Vec<YearMonth>,
    cells: Vec<Option<GridCell>>,
}

impl GridField {
    pub fn empty(origin: GeoCoordinate, cell_deg: f64, n_lon: usize, n_lat: usize) -> Self {
        GridField {
            origin,
            cell_deg,
            n_lon,
            n_lat,
            months: Vec::new(),
            cells: Vec::new(),
        }
    }

    /// Build from explicit cells laid out month-major, then lon, then lat.
    pub fn from_cells(
        origin: GeoCoordinate,
        cell_deg: f64,
        n_lon: usize,
        n_lat: usize,
        months: Vec<YearMonth>,
        cells: Vec<Option<GridCell>>,
    ) -> Result<Self> {
        if cells.len() != months.len() * n_lon * n_lat {
            return Err(Error::shape(format!(
                "{} cells for a {}x{}x{} grid",
                cells.len(),
                months.len(),
                n_lon,
                n_lat
            )));
        }
        let mut depth = None;
        for c in cells.iter().flatten() {
            let d = c.profile.depth_count();
            match depth {
                None => depth = Some(d),
                Some(d0) if d0 != d => {
                    return Err(Error::shape(format!("cells disagree on depth count ({d0} vs {d})")))
                }
                _ => {}
            }
        }
        Ok(GridField {
            origin,
            cell_deg,
            n_lon,
            n_lat,
            months,
            cells,
        })
    }

    fn index(&self, month: usize, i: usize, j: usize) -> usize {
        (month * self.n_lon + i) * self.n_lat + j
    }

    pub fn cell(&self, month: usize, i: usize, j: usize) -> Option<&GridCell> {
        if month >= self.months.len() || i >= self.n_lon || j >= self.n_lat {
            return None;
        }
        self.cells[self.index(month, i, j)].as_ref()
    }

    pub fn set_cell(&mut self, month: usize, i: usize, j: usize, cell: Option<GridCell>) {
        let k = self.index(month, i, j);
        self.cells[k] = cell;
    }

    pub fn coord(&self, i: usize, j: usize) -> GeoCoordinate {
        GeoCoordinate {
            lon: self.origin.lon + i as f64 * self.cell_deg,
            lat: self.origin.lat + j as f64 * self.cell_deg,
        }
    }

    pub fn present_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn depth_count(&self) -> Option<usize> {
        self.cells.iter().flatten().next().map(|c| c.profile.depth_count())
    }

    pub fn month_index(&self, ym: YearMonth) -> Option<usize> {
        self.months.iter().position(|m| *m == ym)
    }

    /// Locate the lattice indices of a coordinate, if it lies on the grid.
    pub fn locate(&self, coord: GeoCoordinate) -> Option<(usize, usize)> {
        let fi = (coord.lon - self.origin.lon) / self.cell_deg;
        let fj = (coord.lat - self.origin.lat) / self.cell_deg;
        let (ri, rj) = (fi.round(), fj.round());
        if (fi - ri).abs() > 1e-6 || (fj - rj).abs() > 1e-6 || ri < 0.0 || rj < 0.0 {
            return None;
        }
        let (i, j) = (ri as usize, rj as usize);
        (i < self.n_lon && j < self.n_lat).then_some((i, j))
    }
}

type CellKey = (u64, u64, YearMonth);

/// Values keyed by cell and month, with the line each came from.
struct Rows<T> {
    rows: HashMap<CellKey, (T, usize)>,
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad {what} {field:?}"),
    })
}

fn parse_key(path: &Path, line: usize, cols: &[&str]) -> Result<(GeoCoordinate, YearMonth)> {
    let perr = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let lon = parse_f64(path, line, cols[0], "longitude")?;
    let lat = parse_f64(path, line, cols[1], "latitude")?;
    let year: i32 = cols[2]
        .trim()
        .parse()
        .map_err(|_| perr(format!("bad year {:?}", cols[2])))?;
    let month: u32 = cols[3]
        .trim()
        .parse()
        .map_err(|_| perr(format!("bad month {:?}", cols[3])))?;
    let coord = GeoCoordinate::new(lon, lat).map_err(|e| perr(e.to_string()))?;
    let ym = YearMonth::new(year, month).map_err(|e| perr(e.to_string()))?;
    Ok((coord, ym))
}

/// Returns data lines (1-based line number, content) after validating the
/// version line and header. An empty file has no lines.
fn data_lines<'a>(
    path: &Path,
    text: &'a str,
    header_check: impl Fn(&[&str]) -> std::result::Result<(), String>,
) -> Result<Vec<(usize, &'a str)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let Some((_, first)) = lines.next() else {
        return Ok(Vec::new());
    };
    if first.trim() != GRID_VERSION_LINE {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected {GRID_VERSION_LINE:?}"),
        });
    }
    let Some((hline, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    header_check(&cols).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        line: hline,
        msg,
    })?;
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()).collect())
}

fn key_of(coord: GeoCoordinate, ym: YearMonth) -> CellKey {
    (coord.lon.to_bits(), coord.lat.to_bits(), ym)
}

fn read_ssp(path: &Path) -> Result<Rows<SoundSpeedProfile>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines = data_lines(path, &text, |cols| {
        let ok = cols.len() > 4
            && cols[..4] == ["lon_deg", "lat_deg", "year", "month"]
            && cols[4..]
                .iter()
                .enumerate()
                .all(|(k, c)| *c == format!("s{k}"));
        if ok {
            Ok(())
        } else {
            Err("expected header lon_deg,lat_deg,year,month,s0,...".into())
        }
    })?;
    let mut rows = HashMap::new();
    let mut depth: Option<usize> = None;
    for (line, l) in lines {
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() < 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "too few columns".into(),
            });
        }
        let (coord, ym) = parse_key(path, line, &cols)?;
        let d = cols.len() - 4;
        match depth {
            None => depth = Some(d),
            Some(d0) if d0 != d => {
                return Err(Error::shape(format!(
                    "{}:{line}: {d} depth levels, earlier rows have {d0}",
                    path.display()
                )))
            }
            _ => {}
        }
        let mut speeds = Vec::with_capacity(d);
        for c in &cols[4..] {
            // stored at 32-bit precision
            let v: f32 = c.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad speed {c:?}"),
            })?;
            speeds.push(v as f64);
        }
        let profile = SoundSpeedProfile::new_physical(speeds)
            .map_err(|e| Error::InvalidProfile(format!("{}:{line}: {e}", path.display())))?;
        if rows.insert(key_of(coord, ym), (profile, line)).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "duplicate cell/month".into(),
            });
        }
    }
    Ok(Rows { rows })
}

fn read_sst(path: &Path) -> Result<Rows<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines = data_lines(path, &text, |cols| {
        if cols == ["lon_deg", "lat_deg", "year", "month", "sst_c"] {
            Ok(())
        } else {
            Err("expected header lon_deg,lat_deg,year,month,sst_c".into())
        }
    })?;
    let mut rows = HashMap::new();
    for (line, l) in lines {
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 5 columns, got {}", cols.len()),
            });
        }
        let (coord, ym) = parse_key(path, line, &cols)?;
        let sst: f32 = cols[4].trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("bad sst {:?}", cols[4]),
        })?;
        if !sst.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "non-finite sst".into(),
            });
        }
        if rows.insert(key_of(coord, ym), (sst as f64, line)).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "duplicate cell/month".into(),
            });
        }
    }
    Ok(Rows { rows })
}

/// Lattice spacing assumed by [`load_grid`].
pub const DEFAULT_CELL_DEG: f64 = 1.0;

/// Load and align an SSP grid file with an SST grid file on the 1 degree lattice.
pub fn load_grid(ssp_path: &Path, sst_path: &Path) -> Result<GridField> {
    load_grid_with(ssp_path, sst_path, DEFAULT_CELL_DEG)
}

/// As [`load_grid`] with an explicit lattice spacing; every coordinate must
/// sit on it relative to the minimum lon/lat seen.
pub fn load_grid_with(ssp_path: &Path, sst_path: &Path, cell_deg: f64) -> Result<GridField> {
    if !(cell_deg > 0.0 && cell_deg.is_finite()) {
        return Err(Error::Config(format!("cell size {cell_deg} must be positive")));
    }
    let ssp = read_ssp(ssp_path)?;
    let sst = read_sst(sst_path)?;

    // the lattice spans every coordinate seen in either file; cells missing
    // from one of them stay masked
    let all_keys = || {
        let a = ssp.rows.iter().map(move |(k, (_, l))| (*k, ssp_path, *l));
        a.chain(sst.rows.iter().map(move |(k, (_, l))| (*k, sst_path, *l)))
    };
    let (Some(lon0), Some(lat0)) = (
        all_keys().map(|(k, ..)| f64::from_bits(k.0)).min_by(f64::total_cmp),
        all_keys().map(|(k, ..)| f64::from_bits(k.1)).min_by(f64::total_cmp),
    ) else {
        return Ok(GridField::empty(GeoCoordinate { lon: 0.0, lat: 0.0 }, cell_deg, 0, 0));
    };
    let origin = GeoCoordinate { lon: lon0, lat: lat0 };
    let step = |v: f64, o: f64| {
        let f = (v - o) / cell_deg;
        ((f - f.round()).abs() <= 1e-6).then(|| f.round() as usize)
    };
    let (mut n_lon, mut n_lat) = (0, 0);
    for ((lon, lat, _), path, line) in all_keys() {
        let (lon, lat) = (f64::from_bits(lon), f64::from_bits(lat));
        match (step(lon, origin.lon), step(lat, origin.lat)) {
            (Some(i), Some(j)) => {
                n_lon = n_lon.max(i + 1);
                n_lat = n_lat.max(j + 1);
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("({lon}, {lat}) is off the {cell_deg} degree lattice from ({}, {})", origin.lon, origin.lat),
                })
            }
        }
    }

    let both: Vec<(CellKey, f64, SoundSpeedProfile)> = ssp
        .rows
        .into_iter()
        .filter_map(|(k, (p, _))| sst.rows.get(&k).map(|&(t, _)| (k, t, p)))
        .collect();
    let months: Vec<YearMonth> = both
        .iter()
        .map(|(k, ..)| k.2)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if months.is_empty() {
        return Ok(GridField::empty(origin, cell_deg, n_lon, n_lat));
    }
    let mut cells = vec![None; months.len() * n_lon * n_lat];
    for ((lon, lat, ym), sst, profile) in both {
        let m = months.binary_search(&ym).expect("month collected above");
        let i = step(f64::from_bits(lon), origin.lon).expect("checked above");
        let j = step(f64::from_bits(lat), origin.lat).expect("checked above");
        cells[(m * n_lon + i) * n_lat + j] = Some(GridCell { sst, profile });
    }
    GridField::from_cells(origin, cell_deg, n_lon, n_lat, months, cells)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Write a field in the two-file CSV grid format. Values are written at
/// 32-bit precision.
pub fn save_grid(field: &GridField, ssp_path: &Path, sst_path: &Path) -> Result<()> {
    let d = field.depth_count().unwrap_or(0);
    let mut ssp = create(ssp_path)?;
    let mut sst = create(sst_path)?;
    let werr = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };
    (|| -> std::io::Result<()> {
        writeln!(ssp, "{GRID_VERSION_LINE}")?;
        write!(ssp, "lon_deg,lat_deg,year,month")?;
        for k in 0..d {
            write!(ssp, ",s{k}")?;
        }
        writeln!(ssp)?;
        writeln!(sst, "{GRID_VERSION_LINE}")?;
        writeln!(sst, "lon_deg,lat_deg,year,month,sst_c")?;
        Ok(())
    })()
    .map_err(werr(ssp_path))?;

    for (m, ym) in field.months.iter().enumerate() {
        for j in 0..field.n_lat {
            for i in 0..field.n_lon {
                let Some(cell) = field.cell(m, i, j) else {
                    continue;
                };
                let c = field.coord(i, j);
                (|| -> std::io::Result<()> {
                    write!(ssp, "{},{},{},{}", c.lon, c.lat, ym.year, ym.month)?;
                    for s in cell.profile.speeds() {
                        write!(ssp, ",{}", *s as f32)?;
                    }
                    writeln!(ssp)
                })()
                .map_err(werr(ssp_path))?;
                writeln!(
                    sst,
                    "{},{},{},{},{}",
                    c.lon, c.lat, ym.year, ym.month, cell.sst as f32
                )
                .map_err(werr(sst_path))?;
            }
        }
    }
    ssp.flush().map_err(werr(ssp_path))?;
    sst.flush().map_err(werr(sst_path))?;
    Ok(())
}
