//! Raw surfacing records, monthly trajectory binning and the coastline set.
//!
//! A float's monthly position is its *first* surfacing whose day-of-month
//! falls inside the configured window; months without such a surfacing are
//! gaps. Floats that never land in a window are dropped.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, SecondsFormat, TimeZone, Utc};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::geo::LonLat;

/// One transmitted surfacing location.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRecord {
    pub float_id: String,
    pub timestamp: DateTime<Utc>,
    pub position: LonLat,
}

/// A UTC calendar month.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::validation(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn succ(&self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Months elapsed from `self` to `other` (negative if `other` is earlier).
    pub fn months_until(&self, other: &YearMonth) -> i64 {
        (other.year as i64 - self.year as i64) * 12 + other.month as i64 - self.month as i64
    }

    pub fn of(ts: &DateTime<Utc>) -> Self {
        Self {
            year: ts.year(),
            month: ts.month(),
        }
    }

    /// Midnight UTC on the given day of this month.
    pub fn at_day(&self, day: u32) -> Option<DateTime<Utc>> {
        Utc.with_ymd_and_hms(self.year, self.month, day, 0, 0, 0)
            .single()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::validation(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::validation(format!("bad year in {s:?}")))?;
        let month = m
            .parse()
            .map_err(|_| Error::validation(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month)
    }
}

/// Inclusive day-of-month range in which a surfacing counts for its month.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DayWindow {
    pub first: u32,
    pub last: u32,
}

impl DayWindow {
    pub fn new(first: u32, last: u32) -> Result<Self> {
        if first < 1 || last > 31 || first > last {
            return Err(Error::validation(format!(
                "invalid day window [{first}, {last}]"
            )));
        }
        Ok(Self { first, last })
    }

    pub fn contains(&self, day: u32) -> bool {
        (self.first..=self.last).contains(&day)
    }
}

impl Default for DayWindow {
    fn default() -> Self {
        Self { first: 1, last: 12 }
    }
}

/// Monthly positions of `I` floats over `T` consecutive months.
///
/// Positions are stored row-major (`float * T + month`); `None` is a gap.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryArray {
    float_ids: Vec<String>,
    months: Vec<YearMonth>,
    positions: Vec<Option<LonLat>>,
}

impl TrajectoryArray {
    pub fn new(
        float_ids: Vec<String>,
        months: Vec<YearMonth>,
        positions: Vec<Option<LonLat>>,
    ) -> Result<Self> {
        let (n_floats, n_months) = (float_ids.len(), months.len());
        if positions.len() != n_floats * n_months {
            return Err(Error::validation(format!(
                "position table has {} entries, expected {}x{}",
                positions.len(),
                n_floats,
                n_months
            )));
        }
        if months.windows(2).any(|w| w[1] != w[0].succ()) {
            return Err(Error::validation("month labels are not consecutive"));
        }
        for (i, id) in float_ids.iter().enumerate() {
            let row = &positions[i * n_months..(i + 1) * n_months];
            if row.iter().all(Option::is_none) {
                return Err(Error::validation(format!("float {id} has no positions")));
            }
            if let Some(p) = row.iter().flatten().find(|p| !p.in_bounds()) {
                return Err(Error::validation(format!(
                    "float {id} has out-of-range position {p}"
                )));
            }
        }
        Ok(Self {
            float_ids,
            months,
            positions,
        })
    }

    pub fn n_floats(&self) -> usize {
        self.float_ids.len()
    }

    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    pub fn float_ids(&self) -> &[String] {
        &self.float_ids
    }

    pub fn months(&self) -> &[YearMonth] {
        &self.months
    }

    /// Position of float `i` in month `t` (both zero-based).
    pub fn position(&self, i: usize, t: usize) -> Option<LonLat> {
        self.positions[i * self.months.len() + t]
    }

    pub fn row(&self, i: usize) -> &[Option<LonLat>] {
        let n = self.months.len();
        &self.positions[i * n..(i + 1) * n]
    }

    /// Indices of floats with a position in month `t` (zero-based).
    pub fn reporting_set(&self, t: usize) -> Result<Vec<usize>> {
        if t >= self.n_months() {
            return Err(Error::validation(format!(
                "month index {} out of range 1..={}",
                t + 1,
                self.n_months()
            )));
        }
        Ok((0..self.n_floats())
            .filter(|&i| self.position(i, t).is_some())
            .collect())
    }

    pub fn present_count(&self) -> usize {
        self.positions.iter().filter(|p| p.is_some()).count()
    }

    /// Re-expresses the array as surfacing records, one per present entry,
    /// timestamped at midnight on the first day of `window`.
    pub fn to_records(&self, window: DayWindow) -> Vec<FloatRecord> {
        let mut out = Vec::with_capacity(self.present_count());
        for (i, id) in self.float_ids.iter().enumerate() {
            for (t, month) in self.months.iter().enumerate() {
                if let Some(p) = self.position(i, t) {
                    out.push(FloatRecord {
                        float_id: id.clone(),
                        timestamp: month.at_day(window.first).expect("valid window day"),
                        position: p,
                    });
                }
            }
        }
        out
    }

    /// Writes `float_id,month_index,lon,lat` rows (month index one-based,
    /// gaps omitted).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["float_id", "month_index", "lon", "lat"])?;
        for (i, id) in self.float_ids.iter().enumerate() {
            for t in 0..self.n_months() {
                if let Some(p) = self.position(i, t) {
                    wr.write_record([
                        id.clone(),
                        (t + 1).to_string(),
                        p.lon.to_string(),
                        p.lat.to_string(),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`TrajectoryArray::write_csv`]. Floats
    /// keep their order of first appearance.
    pub fn read_csv<R: Read>(r: R, start: YearMonth, n_months: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        expect_header(&mut rd, &["float_id", "month_index", "lon", "lat"])?;
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<Option<LonLat>>> = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let line = line_of(&rec);
            if rec.len() != 4 {
                return Err(Error::parse(line, "expected 4 fields"));
            }
            let t: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, "bad month_index"))?;
            if t == 0 || t > n_months {
                return Err(Error::parse(line, format!("month_index {t} out of range")));
            }
            let p = parse_position(&rec[2], &rec[3], line)?;
            let id = rec[0].trim().to_string();
            let slot = *index.entry(id.clone()).or_insert_with(|| {
                ids.push(id);
                rows.push(vec![None; n_months]);
                rows.len() - 1
            });
            rows[slot][t - 1] = Some(p);
        }
        let months = month_sequence(start, n_months);
        TrajectoryArray::new(ids, months, rows.into_iter().flatten().collect())
    }
}

pub fn month_sequence(start: YearMonth, n: usize) -> Vec<YearMonth> {
    std::iter::successors(Some(start), |m| Some(m.succ()))
        .take(n)
        .collect()
}

/// Output of [`bin_monthly`]: the trajectory array plus the number of floats
/// that had records but no position in any month's window.
#[derive(Clone, Debug)]
pub struct Binned {
    pub trajectories: TrajectoryArray,
    pub dropped_floats: usize,
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn expect_header<R: Read>(rd: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let header = rd.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got.is_empty() || (got.len() == 1 && got[0].is_empty()) {
        return Err(Error::parse(1, "empty file"));
    }
    if got != want {
        return Err(Error::parse(
            1,
            format!("expected header {}, got {}", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_position(lon: &str, lat: &str, line: usize) -> Result<LonLat> {
    let lon: f64 = lon
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, "bad longitude"))?;
    let lat: f64 = lat
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, "bad latitude"))?;
    if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(Error::parse(line, "latitude out of range"));
    }
    if !lon.is_finite() {
        return Err(Error::parse(line, "longitude not finite"));
    }
    Ok(LonLat::normalized(lon, lat).expect("checked bounds"))
}

/// Parses `float_id,timestamp,lon,lat` CSV. Timestamps must be RFC 3339
/// (an explicit offset is required).
pub fn parse_float_records<R: Read>(source: R) -> Result<Vec<FloatRecord>> {
    let mut rd = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(source);
    expect_header(&mut rd, &["float_id", "timestamp", "lon", "lat"])?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(Error::parse(line, format!("expected 4 fields, got {}", rec.len())));
        }
        let float_id = rec[0].trim();
        if float_id.is_empty() {
            return Err(Error::parse(line, "empty float_id"));
        }
        let timestamp = DateTime::parse_from_rfc3339(rec[1].trim())
            .map_err(|e| Error::parse(line, format!("bad timestamp: {e}")))?
            .with_timezone(&Utc);
        let position = parse_position(&rec[2], &rec[3], line)?;
        out.push(FloatRecord {
            float_id: float_id.to_string(),
            timestamp,
            position,
        });
    }
    if out.is_empty() {
        return Err(Error::parse(1, "empty file: no records"));
    }
    info!("parsed {} float records", out.len());
    Ok(out)
}

pub fn write_float_records<W: Write>(records: &[FloatRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["float_id", "timestamp", "lon", "lat"])?;
    for r in records {
        wr.write_record([
            r.float_id.clone(),
            r.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            r.position.lon.to_string(),
            r.position.lat.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Bins records into `n_months` monthly slots starting at `start`.
///
/// For each float and month the earliest record (ties broken by input
/// order) whose day-of-month lies in `window` becomes the position.
pub fn bin_monthly(
    records: &[FloatRecord],
    start: YearMonth,
    n_months: usize,
    window: DayWindow,
) -> Result<Binned> {
    if n_months < 2 {
        return Err(Error::validation("need at least 2 months"));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut ids: Vec<&str> = Vec::new();
    // (timestamp, position) of the best record so far for each (float, month)
    let mut best: Vec<Vec<Option<(DateTime<Utc>, LonLat)>>> = Vec::new();
    for r in records {
        let slot = *index.entry(r.float_id.as_str()).or_insert_with(|| {
            ids.push(r.float_id.as_str());
            best.push(vec![None; n_months]);
            ids.len() - 1
        });
        let offset = start.months_until(&YearMonth::of(&r.timestamp));
        if offset < 0 || offset >= n_months as i64 || !window.contains(r.timestamp.day()) {
            continue;
        }
        let cell = &mut best[slot][offset as usize];
        match cell {
            Some((ts, _)) if *ts <= r.timestamp => {}
            _ => *cell = Some((r.timestamp, r.position)),
        }
    }

    let mut float_ids = Vec::new();
    let mut positions = Vec::new();
    let mut dropped = 0;
    for (id, row) in ids.iter().zip(best) {
        if row.iter().all(Option::is_none) {
            dropped += 1;
            continue;
        }
        float_ids.push(id.to_string());
        positions.extend(row.into_iter().map(|c| c.map(|(_, p)| p)));
    }
    if float_ids.is_empty() {
        return Err(Error::validation("empty trajectory set"));
    }
    if dropped > 0 {
        warn!("dropped {dropped} floats with no position in any month window");
    }
    let trajectories = TrajectoryArray::new(float_ids, month_sequence(start, n_months), positions)?;
    Ok(Binned {
        trajectories,
        dropped_floats: dropped,
    })
}

/// Static boundary points carrying Dirichlet conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct CoastlineSet {
    points: Vec<LonLat>,
}

/// Points closer than this (in degrees, per coordinate) are duplicates.
pub const DUPLICATE_TOL_DEG: f64 = 1e-9;

impl CoastlineSet {
    pub fn new(points: Vec<LonLat>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.in_bounds()) {
            return Err(Error::validation(format!("coastline point {p} out of range")));
        }
        let points = dedup_points(points);
        if points.len() < 3 {
            return Err(Error::validation(format!(
                "coastline needs at least 3 distinct points, got {}",
                points.len()
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[LonLat] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lon", "lat"])?;
        for p in &self.points {
            wr.write_record([p.lon.to_string(), p.lat.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Keeps every `stride`-th point, starting with the first.
pub fn subsample<T: Clone>(points: &[T], stride: usize) -> Vec<T> {
    points.iter().step_by(stride.max(1)).cloned().collect()
}

/// Removes later copies of points that coincide (within
/// [`DUPLICATE_TOL_DEG`]) with an earlier one, preserving order.
pub fn dedup_points(points: Vec<LonLat>) -> Vec<LonLat> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].lon.total_cmp(&points[b].lon).then(a.cmp(&b)));
    let mut drop = vec![false; points.len()];
    for (k, &a) in order.iter().enumerate() {
        if drop[a] {
            continue;
        }
        for &b in &order[k + 1..] {
            if points[b].lon - points[a].lon > DUPLICATE_TOL_DEG {
                break;
            }
            if (points[b].lat - points[a].lat).abs() <= DUPLICATE_TOL_DEG {
                // keep the earliest in input order
                let (keep, gone) = if a < b { (a, b) } else { (b, a) };
                if !drop[keep] {
                    drop[gone] = true;
                }
            }
        }
    }
    points
        .into_iter()
        .zip(drop)
        .filter_map(|(p, d)| (!d).then_some(p))
        .collect()
}

/// Reads `lon,lat` CSV, keeps every `stride`-th point and removes duplicates.
pub fn load_coastline<R: Read>(source: R, stride: usize) -> Result<CoastlineSet> {
    if stride < 1 {
        return Err(Error::validation("coastline stride must be >= 1"));
    }
    let mut rd = csv::Reader::from_reader(source);
    expect_header(&mut rd, &["lon", "lat"])?;
    let mut raw = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(Error::parse(line, "expected 2 fields"));
        }
        raw.push(parse_position(&rec[0], &rec[1], line)?);
    }
    CoastlineSet::new(subsample(&raw, stride))
}
