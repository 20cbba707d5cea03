//! Per-month triangulations of reporting floats plus coastline points.
//!
//! Triangulation happens in the flat lon/lat plane. Each mesh vertex carries
//! its global index: floats occupy `0..I`, coastline points `I..I+C`.

use std::collections::HashMap;
use std::io::{Read, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::geo::{great_circle_km, LonLat};
use crate::trajectory::{CoastlineSet, TrajectoryArray, DUPLICATE_TOL_DEG};

/// Triangles with twice-area below this (in squared degrees) are dropped.
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<LonLat>,
    global_index: Vec<usize>,
    triangles: Vec<[usize; 3]>,
}

/// Signed area of the triangle `a, b, c` (positive when counter-clockwise).
pub fn signed_area(a: LonLat, b: LonLat, c: LonLat) -> f64 {
    0.5 * ((b.lon - a.lon) * (c.lat - a.lat) - (c.lon - a.lon) * (b.lat - a.lat))
}

impl TriMesh {
    /// Validates indices and reorients every triangle counter-clockwise.
    pub fn new(
        vertices: Vec<LonLat>,
        global_index: Vec<usize>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self> {
        if vertices.len() != global_index.len() {
            return Err(Error::validation("vertex and global index counts differ"));
        }
        let mut seen = HashMap::with_capacity(global_index.len());
        for (v, &g) in global_index.iter().enumerate() {
            if seen.insert(g, v).is_some() {
                return Err(Error::validation(format!(
                    "global index {} used twice",
                    g + 1
                )));
            }
        }
        let mut tris = Vec::with_capacity(triangles.len());
        for mut t in triangles {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::validation("triangle references a missing vertex"));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::validation("triangle repeats a vertex"));
            }
            let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if area.abs() * 2.0 <= DEGENERATE_AREA {
                return Err(Error::validation(format!(
                    "degenerate triangle {:?}",
                    t.map(|v| global_index[v] + 1)
                )));
            }
            if area < 0.0 {
                t.swap(1, 2);
            }
            tris.push(t);
        }
        Ok(Self {
            vertices,
            global_index,
            triangles: tris,
        })
    }

    pub fn vertices(&self) -> &[LonLat] {
        &self.vertices
    }

    pub fn global_index(&self) -> &[usize] {
        &self.global_index
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, tri: usize) -> [LonLat; 3] {
        self.triangles[tri].map(|v| self.vertices[v])
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        signed_area(a, b, c)
    }

    /// Sum of triangle areas in squared degrees.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Longest great-circle edge of a triangle.
    pub fn max_edge_km(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        great_circle_km(a, b)
            .max(great_circle_km(b, c))
            .max(great_circle_km(c, a))
    }

    /// Bounding box `(min, max)` of the vertices.
    pub fn bounds(&self) -> Option<(LonLat, LonLat)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                LonLat::new(lo.lon.min(p.lon), lo.lat.min(p.lat)),
                LonLat::new(hi.lon.max(p.lon), hi.lat.max(p.lat)),
            )
        }))
    }

    /// Barycentric coordinates of `p` in triangle `tri`.
    pub fn barycentric(&self, tri: usize, p: LonLat) -> [f64; 3] {
        let [a, b, c] = self.corners(tri);
        let area = signed_area(a, b, c);
        [
            signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area,
        ]
    }

    /// Writes `global_index,lon,lat` (one-based indices).
    pub fn write_vertices_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["global_index", "lon", "lat"])?;
        for (p, g) in self.vertices.iter().zip(&self.global_index) {
            wr.write_record([(g + 1).to_string(), p.lon.to_string(), p.lat.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `v1,v2,v3` as one-based global indices.
    pub fn write_triangles_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["v1", "v2", "v3"])?;
        for t in &self.triangles {
            wr.write_record(t.map(|v| (self.global_index[v] + 1).to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a mesh back from its two dump files.
    pub fn read_csv<R1: Read, R2: Read>(vertices: R1, triangles: R2) -> Result<Self> {
        let mut verts = Vec::new();
        let mut globals = Vec::new();
        let mut local: HashMap<usize, usize> = HashMap::new();
        for rec in csv::Reader::from_reader(vertices).records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let g: usize = rec[0]
                .parse()
                .map_err(|_| Error::parse(line, "bad global_index"))?;
            let lon: f64 = rec[1].parse().map_err(|_| Error::parse(line, "bad lon"))?;
            let lat: f64 = rec[2].parse().map_err(|_| Error::parse(line, "bad lat"))?;
            if g == 0 {
                return Err(Error::parse(line, "global_index is one-based"));
            }
            local.insert(g - 1, verts.len());
            verts.push(LonLat::new(lon, lat));
            globals.push(g - 1);
        }
        let mut tris = Vec::new();
        for rec in csv::Reader::from_reader(triangles).records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let mut t = [0usize; 3];
            for (k, slot) in t.iter_mut().enumerate() {
                let g: usize = rec[k]
                    .parse()
                    .map_err(|_| Error::parse(line, "bad vertex index"))?;
                *slot = *g
                    .checked_sub(1)
                    .and_then(|g| local.get(&g))
                    .ok_or_else(|| Error::parse(line, format!("unknown vertex {g}")))?;
            }
            tris.push(t);
        }
        TriMesh::new(verts, globals, tris)
    }
}

/// Delaunay triangulation of arbitrary points tagged with global indices.
///
/// Points coinciding within [`DUPLICATE_TOL_DEG`] are merged, keeping the
/// first occurrence. Near-degenerate sliver triangles are discarded.
pub fn triangulate_points(points: &[LonLat], global: &[usize]) -> Result<TriMesh> {
    assert_eq!(points.len(), global.len());
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .lon
            .total_cmp(&points[b].lon)
            .then(points[a].lat.total_cmp(&points[b].lat))
            .then(a.cmp(&b))
    });
    let mut duplicate = vec![false; points.len()];
    for (k, &a) in order.iter().enumerate() {
        if duplicate[a] {
            continue;
        }
        for &b in &order[k + 1..] {
            if points[b].lon - points[a].lon > DUPLICATE_TOL_DEG {
                break;
            }
            if (points[b].lat - points[a].lat).abs() <= DUPLICATE_TOL_DEG {
                let gone = a.max(b);
                if !duplicate[a.min(b)] {
                    duplicate[gone] = true;
                }
            }
        }
    }
    let merged = duplicate.iter().filter(|&&d| d).count();
    if merged > 0 {
        warn!("merged {merged} coincident points before meshing");
    }
    let keep: Vec<usize> = (0..points.len()).filter(|&i| !duplicate[i]).collect();
    if keep.len() < 3 {
        return Err(Error::validation("fewer than 3 distinct points to mesh"));
    }
    let vertices: Vec<LonLat> = keep.iter().map(|&i| points[i]).collect();
    let global_index: Vec<usize> = keep.iter().map(|&i| global[i]).collect();
    let dpts: Vec<delaunator::Point> = vertices
        .iter()
        .map(|p| delaunator::Point { x: p.lon, y: p.lat })
        .collect();
    let tri = delaunator::triangulate(&dpts);
    if tri.triangles.is_empty() {
        return Err(Error::validation("all points are collinear"));
    }
    let triangles: Vec<[usize; 3]> = tri
        .triangles
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .filter(|t| {
            signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]).abs() * 2.0
                > DEGENERATE_AREA
        })
        .collect();
    if triangles.is_empty() {
        return Err(Error::validation("all points are collinear"));
    }
    TriMesh::new(vertices, global_index, triangles)
}

/// Meshes month `t` (zero-based): reporting floats first, then coastline.
pub fn triangulate_slice(
    traj: &TrajectoryArray,
    t: usize,
    coast: &CoastlineSet,
) -> Result<TriMesh> {
    let reporting = traj.reporting_set(t)?;
    let n_floats = traj.n_floats();
    let mut points = Vec::with_capacity(reporting.len() + coast.len());
    let mut global = Vec::with_capacity(points.capacity());
    for &i in &reporting {
        points.push(traj.position(i, t).expect("reporting float has a position"));
        global.push(i);
    }
    for (j, &p) in coast.points().iter().enumerate() {
        points.push(p);
        global.push(n_floats + j);
    }
    triangulate_points(&points, &global)
}

/// Removes triangles having any great-circle edge longer than `max_edge_km`.
/// Vertices are kept even if they become isolated.
pub fn filter_triangles(mesh: &TriMesh, max_edge_km: f64) -> Result<TriMesh> {
    if !(max_edge_km > 0.0) {
        return Err(Error::validation("max_edge_km must be positive"));
    }
    let triangles: Vec<[usize; 3]> = (0..mesh.n_triangles())
        .filter(|&t| mesh.max_edge_km(t) <= max_edge_km)
        .map(|t| mesh.triangles[t])
        .collect();
    if triangles.is_empty() {
        return Err(Error::validation("empty mesh after edge filtering"));
    }
    Ok(TriMesh {
        vertices: mesh.vertices.clone(),
        global_index: mesh.global_index.clone(),
        triangles,
    })
}

/// Piecewise-linear field on a mesh: `Σ c_g φ_g` with coefficients indexed
/// by global index.
#[derive(Clone, Debug)]
pub struct HatBasisField<'m> {
    mesh: &'m TriMesh,
    coefficients: Vec<f64>,
}

impl<'m> HatBasisField<'m> {
    pub fn new(mesh: &'m TriMesh, coefficients: Vec<f64>) -> Self {
        Self { mesh, coefficients }
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Value at mesh vertex `v`.
    pub fn vertex_value(&self, v: usize) -> f64 {
        self.coefficients[self.mesh.global_index[v]]
    }

    /// Linear interpolation inside triangle `tri`.
    pub fn eval_in(&self, tri: usize, p: LonLat) -> f64 {
        let w = self.mesh.barycentric(tri, p);
        let t = self.mesh.triangles[tri];
        (0..3).map(|k| w[k] * self.vertex_value(t[k])).sum()
    }

    /// Value at `p`, or `None` outside every triangle. Linear scan; intended
    /// for point queries, not for rasterization.
    pub fn eval(&self, p: LonLat) -> Option<f64> {
        const EPS: f64 = -1e-12;
        (0..self.mesh.n_triangles()).find_map(|t| {
            let w = self.mesh.barycentric(t, p);
            w.iter().all(|&x| x >= EPS).then(|| self.eval_in(t, p))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(xy: &[(f64, f64)]) -> Vec<LonLat> {
        xy.iter().map(|&(x, y)| LonLat::new(x, y)).collect()
    }

    #[test]
    fn three_points_one_triangle() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let m = triangulate_points(&p, &[0, 1, 2]).unwrap();
        assert_eq!(m.n_triangles(), 1);
        assert!(m.triangle_area(0) > 0.0);
    }

    #[test]
    fn unit_square_two_triangles() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let m = triangulate_points(&p, &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_abs_diff_eq!(m.area(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn collinear_rejected() {
        let p = pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(triangulate_points(&p, &[0, 1, 2]).is_err());
    }

    #[test]
    fn duplicates_merge_keeping_first() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]);
        let m = triangulate_points(&p, &[7, 8, 9, 42]).unwrap();
        assert_eq!(m.n_vertices(), 3);
        assert!(m.global_index().contains(&8));
        assert!(!m.global_index().contains(&42));
    }

    #[test]
    fn edge_filter() {
        // ~1.0° edges (≈111 km) everywhere
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let m = triangulate_points(&p, &[0, 1, 2, 3]).unwrap();
        assert_eq!(filter_triangles(&m, 1500.0).unwrap(), m);
        let err = filter_triangles(&m, 50.0).unwrap_err();
        assert!(err.to_string().contains("empty mesh"));

        // second triangle reaches 30° away (> 3000 km)
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (30.0, 0.5)]);
        let m = triangulate_points(&p, &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.n_triangles(), 2);
        let f = filter_triangles(&m, 1500.0).unwrap();
        assert_eq!(f.n_triangles(), 1);
        assert_eq!(f.n_vertices(), 4);
    }

    #[test]
    fn hat_field_interpolation() {
        let p = pts(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0)]);
        let m = triangulate_points(&p, &[0, 1, 2, 3]).unwrap();
        let f = HatBasisField::new(&m, vec![1.0, 2.0, 3.0, 4.0]);
        for (v, g) in m.global_index().iter().enumerate() {
            assert_eq!(f.eval(m.vertices()[v]).unwrap(), (g + 1) as f64);
        }
        for t in 0..m.n_triangles() {
            let c = m.corners(t);
            let centroid = LonLat::new(
                (c[0].lon + c[1].lon + c[2].lon) / 3.0,
                (c[0].lat + c[1].lat + c[2].lat) / 3.0,
            );
            let mean: f64 = m.triangles()[t]
                .iter()
                .map(|&v| f.vertex_value(v))
                .sum::<f64>()
                / 3.0;
            assert_abs_diff_eq!(f.eval_in(t, centroid), mean, epsilon = 1e-14);
        }
        assert!(f.eval(LonLat::new(5.0, 5.0)).is_none());
    }

    #[test]
    fn dump_round_trip() {
        let p = pts(&[(0.1, 0.2), (1.3, 0.0), (1.0, 1.7), (0.0, 1.0), (0.6, 0.55)]);
        let m = triangulate_points(&p, &[4, 0, 9, 2, 5]).unwrap();
        let (mut v, mut t) = (Vec::new(), Vec::new());
        m.write_vertices_csv(&mut v).unwrap();
        m.write_triangles_csv(&mut t).unwrap();
        assert_eq!(TriMesh::read_csv(&v[..], &t[..]).unwrap(), m);
    }
}
