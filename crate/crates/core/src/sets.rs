//! Coherent-set boundaries: rasterize a feature field, contour its
//! superlevel sets, measure evolved boundary length and area, and pick the
//! threshold minimizing the time-averaged length-to-area ratio.

use std::collections::BTreeMap;
use std::io::Write;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{scaled_segment_km, LonLat, KM_PER_DEGREE};
use crate::mesh::{HatBasisField, TriMesh};

/// Regular lon/lat grid: node `(i, j)` sits at
/// `origin + (i·spacing, j·spacing)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub origin: LonLat,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(origin: LonLat, spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::validation("grid spacing must be positive"));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::validation("grid must have at least one node"));
        }
        Ok(Self {
            origin,
            spacing,
            nx,
            ny,
        })
    }

    /// Smallest grid aligned to multiples of `spacing` that covers the box.
    pub fn covering(lo: LonLat, hi: LonLat, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::validation("grid spacing must be positive"));
        }
        let lon0 = (lo.lon / spacing).floor() * spacing;
        let lat0 = (lo.lat / spacing).floor() * spacing;
        let nx = ((hi.lon - lon0) / spacing + 1e-9).floor() as usize + 1;
        let ny = ((hi.lat - lat0) / spacing + 1e-9).floor() as usize + 1;
        Self::new(LonLat::new(lon0, lat0), spacing, nx, ny)
    }

    /// Grid covering every mesh in `meshes`.
    pub fn covering_meshes<'a>(meshes: impl IntoIterator<Item = &'a TriMesh>, spacing: f64) -> Result<Self> {
        let mut bounds: Option<(LonLat, LonLat)> = None;
        for (lo, hi) in meshes.into_iter().filter_map(TriMesh::bounds) {
            bounds = Some(match bounds {
                None => (lo, hi),
                Some((a, b)) => (
                    LonLat::new(a.lon.min(lo.lon), a.lat.min(lo.lat)),
                    LonLat::new(b.lon.max(hi.lon), b.lat.max(hi.lat)),
                ),
            });
        }
        let (lo, hi) = bounds.ok_or_else(|| Error::validation("no meshes to cover"))?;
        Self::covering(lo, hi, spacing)
    }

    pub fn node(&self, i: usize, j: usize) -> LonLat {
        LonLat::new(
            self.origin.lon + i as f64 * self.spacing,
            self.origin.lat + j as f64 * self.spacing,
        )
    }

    /// Area represented by one node at latitude `lat`.
    pub fn node_area_km2(&self, lat: f64) -> f64 {
        KM_PER_DEGREE * KM_PER_DEGREE * self.spacing * self.spacing * lat.to_radians().cos()
    }
}

/// Node values on a [`GridSpec`] for one month; `values[j * nx + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// One-based month index.
    pub month: usize,
}

impl GriddedField {
    pub fn from_fn(grid: GridSpec, month: usize, f: impl Fn(LonLat) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.nx * grid.ny);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.node(i, j)));
            }
        }
        Self {
            grid,
            values,
            month,
        }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    /// Value with the grid padded by zeros on every side.
    fn padded(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i >= self.grid.nx as isize || j >= self.grid.ny as isize {
            0.0
        } else {
            let v = self.value(i as usize, j as usize);
            if v.is_nan() {
                0.0
            } else {
                v
            }
        }
    }

    fn padded_point(&self, i: isize, j: isize) -> LonLat {
        LonLat::new(
            self.grid.origin.lon + i as f64 * self.grid.spacing,
            self.grid.origin.lat + j as f64 * self.grid.spacing,
        )
    }
}

/// Rasterizes `Σ c_g φ_g` on `mesh` onto `grid` by barycentric
/// interpolation. Nodes outside every triangle get 0; a node on a shared
/// edge takes its value from the first containing triangle.
pub fn grid_interpolate(coeffs: &[f64], mesh: &TriMesh, grid: &GridSpec, month: usize) -> GriddedField {
    const EPS: f64 = -1e-12;
    let field = HatBasisField::new(mesh, coeffs.to_vec());
    let mut values = vec![0.0; grid.nx * grid.ny];
    let mut set = vec![false; values.len()];
    let s = grid.spacing;
    for t in 0..mesh.n_triangles() {
        let c = mesh.corners(t);
        let (lo_lon, hi_lon) = (
            c.iter().map(|p| p.lon).fold(f64::INFINITY, f64::min),
            c.iter().map(|p| p.lon).fold(f64::NEG_INFINITY, f64::max),
        );
        let (lo_lat, hi_lat) = (
            c.iter().map(|p| p.lat).fold(f64::INFINITY, f64::min),
            c.iter().map(|p| p.lat).fold(f64::NEG_INFINITY, f64::max),
        );
        let i0 = ((lo_lon - grid.origin.lon) / s - 1e-9).ceil().max(0.0) as usize;
        let j0 = ((lo_lat - grid.origin.lat) / s - 1e-9).ceil().max(0.0) as usize;
        let i1 = ((hi_lon - grid.origin.lon) / s + 1e-9).floor();
        let j1 = ((hi_lat - grid.origin.lat) / s + 1e-9).floor();
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        let i1 = (i1 as usize).min(grid.nx - 1);
        let j1 = (j1 as usize).min(grid.ny - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let idx = j * grid.nx + i;
                if set[idx] {
                    continue;
                }
                let p = grid.node(i, j);
                let w = mesh.barycentric(t, p);
                if w.iter().all(|&x| x >= EPS) {
                    values[idx] = field.eval_in(t, p);
                    set[idx] = true;
                }
            }
        }
    }
    GriddedField {
        grid: *grid,
        values,
        month,
    }
}

/// Closed ring, first vertex repeated last.
pub type Polygon = Vec<LonLat>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EdgeKey {
    /// Between nodes (i, j) and (i+1, j).
    H(isize, isize),
    /// Between nodes (i, j) and (i, j+1).
    V(isize, isize),
}

/// Marching squares on the superlevel set `{value >= c}` with linear edge
/// interpolation. Nodes beyond the grid and missing values count as 0.
/// Rings keep the set on their left: outer rings run counter-clockwise,
/// holes clockwise.
pub fn extract_contours(field: &GriddedField, c: f64) -> Vec<Polygon> {
    let nx = field.grid.nx as isize;
    let ny = field.grid.ny as isize;
    let inside = |i: isize, j: isize| field.padded(i, j) >= c;

    let crossing = |key: EdgeKey| -> LonLat {
        let ((ia, ja), (ib, jb)) = match key {
            EdgeKey::H(i, j) => ((i, j), (i + 1, j)),
            EdgeKey::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (va, vb) = (field.padded(ia, ja), field.padded(ib, jb));
        let t = (c - va) / (vb - va);
        let (pa, pb) = (field.padded_point(ia, ja), field.padded_point(ib, jb));
        LonLat::new(pa.lon + t * (pb.lon - pa.lon), pa.lat + t * (pb.lat - pa.lat))
    };

    // directed segment map: from-edge -> to-edge
    let mut next: BTreeMap<EdgeKey, EdgeKey> = BTreeMap::new();
    for j in -1..ny {
        for i in -1..nx {
            // corners counter-clockwise from bottom-left
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let ins = corners.map(|(a, b)| inside(a, b));
            if ins.iter().all(|&x| x) || ins.iter().all(|&x| !x) {
                continue;
            }
            // edge e joins corner e to corner e+1
            let edges = [EdgeKey::H(i, j), EdgeKey::V(i + 1, j), EdgeKey::H(i, j + 1), EdgeKey::V(i, j)];
            let leaving: Vec<usize> = (0..4).filter(|&e| ins[e] && !ins[(e + 1) % 4]).collect();
            if leaving.len() == 1 {
                let from = leaving[0];
                let to = (0..4).find(|&e| !ins[e] && ins[(e + 1) % 4]).unwrap();
                next.insert(edges[from], edges[to]);
            } else {
                let centre: f64 = corners.iter().map(|&(a, b)| field.padded(a, b)).sum::<f64>() / 4.0;
                for &from in &leaving {
                    let to = if centre >= c { (from + 1) % 4 } else { (from + 3) % 4 };
                    next.insert(edges[from], edges[to]);
                }
            }
        }
    }

    let mut rings = Vec::new();
    while let Some((&start, _)) = next.iter().next() {
        let mut ring = vec![crossing(start)];
        let mut key = start;
        while let Some(to) = next.remove(&key) {
            ring.push(crossing(to));
            key = to;
            if key == start {
                break;
            }
        }
        if ring.len() >= 4 {
            rings.push(ring);
        }
    }
    rings
}

/// Total latitude-scaled length of the rings, in km.
pub fn boundary_length(polygons: &[Polygon]) -> f64 {
    polygons
        .iter()
        .flat_map(|p| p.windows(2))
        .map(|w| scaled_segment_km(w[0], w[1]))
        .sum()
}

/// Area of the nodes with value `>= c`, each weighted by its latitude.
pub fn superlevel_area(field: &GriddedField, c: f64) -> f64 {
    let g = &field.grid;
    let mut area = 0.0;
    for j in 0..g.ny {
        let w = g.node_area_km2(g.origin.lat + j as f64 * g.spacing);
        for i in 0..g.nx {
            if field.value(i, j) >= c {
                area += w;
            }
        }
    }
    area
}

/// Signed ring area in km² on a sinusoidal projection; positive for
/// counter-clockwise rings.
pub fn ring_area_km2(ring: &[LonLat]) -> f64 {
    let proj = |p: &LonLat| (p.lon * p.lat.to_radians().cos() * KM_PER_DEGREE, p.lat * KM_PER_DEGREE);
    0.5 * ring
        .windows(2)
        .map(|w| {
            let (a, b) = (proj(&w[0]), proj(&w[1]));
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
}

/// Vertex-mean centroid of a ring (closing vertex excluded).
pub fn ring_centroid(ring: &[LonLat]) -> LonLat {
    let n = (ring.len() - 1).max(1) as f64;
    let (x, y) = ring[..ring.len().saturating_sub(1).max(1)]
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p.lon, y + p.lat));
    LonLat::new(x / n, y / n)
}

fn point_in_ring(p: LonLat, ring: &[LonLat]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Boundary and area of a superlevel set in one month.
#[derive(Clone, Debug, PartialEq)]
pub struct MonthBoundary {
    pub month: usize,
    pub polygons: Vec<Polygon>,
    pub length_km: f64,
    pub area_km2: f64,
}

fn month_boundary(field: &GriddedField, c: f64) -> MonthBoundary {
    let polygons = extract_contours(field, c);
    MonthBoundary {
        month: field.month,
        length_km: boundary_length(&polygons),
        area_km2: superlevel_area(field, c),
        polygons,
    }
}

/// Length-to-area ratio averaged over months; `None` if the set is empty
/// in some month.
fn ratio_mean(boundaries: &[MonthBoundary]) -> Option<f64> {
    if boundaries.is_empty() || boundaries.iter().any(|b| !(b.area_km2 > 0.0)) {
        return None;
    }
    let sum: f64 = boundaries.iter().map(|b| b.length_km / b.area_km2).sum();
    Some(sum / boundaries.len() as f64)
}

/// Dynamic Cheeger value of the superlevel set at `c`, one field per month.
pub fn cheeger_value(fields: &[GriddedField], c: f64) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::validation("no monthly fields"));
    }
    let boundaries: Vec<MonthBoundary> = fields.iter().map(|f| month_boundary(f, c)).collect();
    if let Some(b) = boundaries.iter().find(|b| !(b.area_km2 > 0.0)) {
        return Err(Error::numerical(format!(
            "superlevel set at c = {c} is empty in month {}",
            b.month
        )));
    }
    Ok(ratio_mean(&boundaries).unwrap())
}

/// Threshold grid `{step, 2·step, …, 1 − step}`, computed as `i / N`.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::validation("threshold step must lie in (0, 0.5)"));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::validation("threshold step must divide 1"));
    }
    Ok((1..n).map(|i| i as f64 / n as f64).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheegerCurve {
    pub feature: usize,
    pub thresholds: Vec<f64>,
    /// `None` where the set is empty in some month.
    pub values: Vec<Option<f64>>,
    pub c_min: f64,
    pub local_minima: Vec<f64>,
}

impl CheegerCurve {
    pub fn h_min(&self) -> f64 {
        self.thresholds
            .iter()
            .zip(&self.values)
            .find(|(&c, _)| c == self.c_min)
            .and_then(|(_, h)| *h)
            .unwrap_or(f64::NAN)
    }
}

/// Tabulates the Cheeger value over the threshold grid and selects the
/// global minimizer, ties going to the smaller threshold.
pub fn optimize_threshold(feature: usize, fields: &[GriddedField], step: f64) -> Result<CheegerCurve> {
    if fields.is_empty() {
        return Err(Error::validation("no monthly fields"));
    }
    let thresholds = threshold_grid(step)?;
    let values: Vec<Option<f64>> = thresholds
        .iter()
        .map(|&c| {
            let b: Vec<MonthBoundary> = fields.iter().map(|f| month_boundary(f, c)).collect();
            ratio_mean(&b)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, h) in values.iter().enumerate() {
        if let Some(h) = *h {
            if best.map_or(true, |(_, b)| h < b) {
                best = Some((i, h));
            }
        }
    }
    let (best_i, _) = best.ok_or_else(|| {
        Error::numerical(format!("feature {feature} is empty in some month at every threshold"))
    })?;

    let local_minima = (0..values.len())
        .filter(|&i| {
            let Some(h) = values[i] else { return false };
            let left = i.checked_sub(1).and_then(|l| values[l]);
            let right = values.get(i + 1).copied().flatten();
            left.map_or(true, |l| h <= l) && right.map_or(true, |r| h <= r)
        })
        .map(|i| thresholds[i])
        .collect();

    Ok(CheegerCurve {
        feature,
        c_min: thresholds[best_i],
        thresholds,
        values,
        local_minima,
    })
}

/// Writes `k,c,h`; undefined values are left empty.
pub fn write_cheeger_curves<W: Write>(curves: &[CheegerCurve], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "c", "h"])?;
    for curve in curves {
        for (c, h) in curve.thresholds.iter().zip(&curve.values) {
            wr.write_record([
                curve.feature.to_string(),
                c.to_string(),
                h.map(|h| h.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Per-month boundaries of one feature's superlevel set at a fixed
/// threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetFamily {
    pub feature: usize,
    pub threshold: f64,
    pub months: Vec<MonthBoundary>,
}

impl LevelSetFamily {
    /// Mean length-to-area ratio, recomputed from the stored months.
    pub fn cheeger_value(&self) -> Option<f64> {
        ratio_mean(&self.months)
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .months
            .iter()
            .map(|m| {
                json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "MultiPolygon",
                        "coordinates": multipolygon_coordinates(&m.polygons),
                    },
                    "properties": {
                        "k": self.feature,
                        "t": m.month,
                        "c": self.threshold,
                        "boundary_km": m.length_km,
                        "area_km2": m.area_km2,
                    },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn write_geojson<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.to_geojson())?;
        writeln!(w)?;
        Ok(())
    }
}

/// Groups rings into `[[shell, hole, ...], ...]`; each hole goes to the
/// first shell containing it.
fn multipolygon_coordinates(rings: &[Polygon]) -> Value {
    let coords = |r: &Polygon| -> Value { r.iter().map(|p| json!([p.lon, p.lat])).collect() };
    let shells: Vec<&Polygon> = rings.iter().filter(|r| ring_area_km2(r) > 0.0).collect();
    let holes: Vec<&Polygon> = rings.iter().filter(|r| ring_area_km2(r) <= 0.0).collect();
    let mut groups: Vec<Vec<Value>> = shells.iter().map(|s| vec![coords(s)]).collect();
    for h in holes {
        if let Some(k) = shells.iter().position(|s| point_in_ring(h[0], s)) {
            groups[k].push(coords(h));
        }
    }
    Value::Array(groups.into_iter().map(Value::Array).collect())
}

/// Boundaries at threshold `c` in every month.
pub fn evolve_boundaries(feature: usize, c: f64, fields: &[GriddedField]) -> LevelSetFamily {
    LevelSetFamily {
        feature,
        threshold: c,
        months: fields.iter().map(|f| month_boundary(f, c)).collect(),
    }
}
