//! Structured horizontal grid, region mask and the plain-text gridded table format.
//!
//! A gridded table is a schema line, a header line and `ny` rows of `nx`
//! whitespace-separated values, southernmost row first:
//!
//! ```text
//! # schema: hgtrack-grid/1
//! nx=3 ny=2 cell_size_km=50 origin_lat=30 origin_lon=110
//! P01 P01 P02
//! P01 OUTSIDE P02
//! ```
//!
//! Cell `(i, j)` has row-major index `j * nx + i`; `origin` is the south-west
//! corner of cell `(0, 0)`. Coordinates are mapped with a local
//! equirectangular projection anchored at the origin.

use crate::ids::ProvinceId;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use thiserror::Error;

/// Schema tag on the first line of every gridded table.
pub const GRID_SCHEMA: &str = "hgtrack-grid/1";
/// Mask token for cells outside every province.
pub const OUTSIDE: &str = "OUTSIDE";
/// Kilometres per degree of latitude on a 6371 km sphere.
pub const KM_PER_DEGREE: f64 = 6371.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct GridParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub nx: usize,
    pub ny: usize,
    pub cell_size_km: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl GridHeader {
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_km * 1000.0
    }
}

impl fmt::Display for GridHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "nx={} ny={} cell_size_km={} origin_lat={} origin_lon={}",
            self.nx, self.ny, self.cell_size_km, self.origin_lat, self.origin_lon
        )
    }
}

/// Grid geometry plus the province each cell belongs to (`None` = outside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub header: GridHeader,
    pub region_mask: Vec<Option<ProvinceId>>,
}

impl GridSpec {
    pub fn new(header: GridHeader, region_mask: Vec<Option<ProvinceId>>) -> Self {
        assert_eq!(header.cells(), region_mask.len(), "mask length must equal nx*ny");
        Self { header, region_mask }
    }

    /// A grid whose cells all belong to `province`.
    pub fn uniform(nx: usize, ny: usize, cell_size_km: f64, province: &str) -> Self {
        let header = GridHeader { nx, ny, cell_size_km, origin_lat: 30.0, origin_lon: 110.0 };
        Self::new(header, vec![Some(ProvinceId::from(province)); nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.header.nx
    }

    pub fn ny(&self) -> usize {
        self.header.ny
    }

    pub fn cells(&self) -> usize {
        self.header.cells()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.header.nx + i
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.header.nx, cell / self.header.nx)
    }

    fn lon_km_per_degree(&self) -> f64 {
        KM_PER_DEGREE * self.header.origin_lat.to_radians().cos()
    }

    /// Cell containing a point, or `None` when it falls outside the grid.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<usize> {
        let h = &self.header;
        let x = (lon - h.origin_lon) * self.lon_km_per_degree() / h.cell_size_km;
        let y = (lat - h.origin_lat) * KM_PER_DEGREE / h.cell_size_km;
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        (i < h.nx && j < h.ny).then(|| self.index(i, j))
    }

    /// Latitude/longitude of the cell's corners, counter-clockwise from south-west.
    pub fn cell_corners(&self, cell: usize) -> [(f64, f64); 4] {
        let (i, j) = self.coords(cell);
        let h = &self.header;
        let dlon = h.cell_size_km / self.lon_km_per_degree();
        let dlat = h.cell_size_km / KM_PER_DEGREE;
        let lon0 = h.origin_lon + i as f64 * dlon;
        let lat0 = h.origin_lat + j as f64 * dlat;
        [(lat0, lon0), (lat0, lon0 + dlon), (lat0 + dlat, lon0 + dlon), (lat0 + dlat, lon0)]
    }

    pub fn cell_centre(&self, cell: usize) -> (f64, f64) {
        let c = self.cell_corners(cell);
        ((c[0].0 + c[2].0) / 2.0, (c[0].1 + c[2].1) / 2.0)
    }

    /// Provinces present in the mask, sorted.
    pub fn provinces(&self) -> Vec<ProvinceId> {
        let mut v: Vec<ProvinceId> = self.region_mask.iter().flatten().cloned().collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Parses a gridded table into its header and `nx * ny` raw tokens.
pub fn parse_gridded(text: &str) -> Result<(GridHeader, Vec<String>), GridParseError> {
    let err = |line: usize, message: String| GridParseError { line, message };
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l.strip_prefix('#').map(str::trim) == Some(&format!("schema: {GRID_SCHEMA}")) => {}
        Some((n, l)) => return Err(err(n, format!("expected '# schema: {GRID_SCHEMA}', found '{l}'"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut lines = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| err(2, "missing grid header".into()))?;
    let header = parse_header(header).map_err(|m| err(hline, m))?;
    let mut values = Vec::with_capacity(header.cells());
    let mut rows = 0;
    for (n, line) in lines {
        let row: Vec<&str> = line.split_whitespace().collect();
        if row.len() != header.nx {
            return Err(err(n, format!("expected {} values, found {}", header.nx, row.len())));
        }
        values.extend(row.into_iter().map(str::to_owned));
        rows += 1;
        if rows > header.ny {
            return Err(err(n, format!("more than ny={} rows", header.ny)));
        }
    }
    if rows != header.ny {
        return Err(err(hline, format!("expected {} rows, found {rows}", header.ny)));
    }
    Ok((header, values))
}

fn parse_header(line: &str) -> Result<GridHeader, String> {
    let mut nx = None;
    let mut ny = None;
    let mut cell = None;
    let mut lat = None;
    let mut lon = None;
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("malformed header token '{tok}'"))?;
        match k {
            "nx" => nx = Some(v.parse::<usize>().map_err(|e| format!("nx: {e}"))?),
            "ny" => ny = Some(v.parse::<usize>().map_err(|e| format!("ny: {e}"))?),
            "cell_size_km" => cell = Some(parse_f64(v).map_err(|e| format!("cell_size_km: {e}"))?),
            "origin_lat" => lat = Some(parse_f64(v).map_err(|e| format!("origin_lat: {e}"))?),
            "origin_lon" => lon = Some(parse_f64(v).map_err(|e| format!("origin_lon: {e}"))?),
            _ => return Err(format!("unknown header key '{k}'")),
        }
    }
    let h = GridHeader {
        nx: nx.ok_or("header lacks nx")?,
        ny: ny.ok_or("header lacks ny")?,
        cell_size_km: cell.ok_or("header lacks cell_size_km")?,
        origin_lat: lat.ok_or("header lacks origin_lat")?,
        origin_lon: lon.ok_or("header lacks origin_lon")?,
    };
    if h.nx == 0 || h.ny == 0 {
        return Err("nx and ny must be >= 1".into());
    }
    if !(h.cell_size_km > 0.0) {
        return Err("cell_size_km must be > 0".into());
    }
    if !(-90.0..=90.0).contains(&h.origin_lat) || !(-180.0..=180.0).contains(&h.origin_lon) {
        return Err("origin out of range".into());
    }
    Ok(h)
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

/// Parses a numeric gridded table.
pub fn parse_numeric_grid(text: &str) -> Result<(GridHeader, Vec<f64>), GridParseError> {
    let (header, raw) = parse_gridded(text)?;
    let values = raw
        .iter()
        .enumerate()
        .map(|(k, s)| {
            parse_f64(s).map_err(|m| GridParseError {
                // schema + header + row index
                line: 3 + k / header.nx,
                message: format!("cell ({}, {}): {m}", k % header.nx, k / header.nx),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, values))
}

/// Parses a region mask table.
pub fn parse_mask(text: &str) -> Result<GridSpec, GridParseError> {
    let (header, raw) = parse_gridded(text)?;
    let mask = raw
        .into_iter()
        .map(|s| if s == OUTSIDE { None } else { Some(ProvinceId(s)) })
        .collect();
    Ok(GridSpec::new(header, mask))
}

pub fn write_gridded<T: fmt::Display>(header: &GridHeader, values: &[T]) -> String {
    assert_eq!(values.len(), header.cells());
    let mut out = format!("# schema: {GRID_SCHEMA}\n{header}\n");
    for row in values.chunks(header.nx) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_mask(grid: &GridSpec) -> String {
    let tokens: Vec<&str> = grid
        .region_mask
        .iter()
        .map(|r| r.as_ref().map_or(OUTSIDE, |p| p.as_str()))
        .collect();
    write_gridded(&grid.header, &tokens)
}
