#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use dynlap::fem::{assemble_slice, average_system, TimeAveragedSystem};
use dynlap::mesh::{filter_triangles, triangulate_slice, TriMesh};
use dynlap::trajectory::{month_sequence, CoastlineSet, TrajectoryArray, YearMonth};
use dynlap::{LonLat, RunConfig};

pub fn months(n: usize) -> Vec<YearMonth> {
    month_sequence(YearMonth::new(2011, 1).unwrap(), n)
}

pub fn trajectories(rows: Vec<Vec<Option<LonLat>>>) -> TrajectoryArray {
    let t = rows[0].len();
    let ids = (1..=rows.len()).map(|i| i.to_string()).collect();
    TrajectoryArray::new(ids, months(t), rows.into_iter().flatten().collect()).unwrap()
}

/// Meshes every month and averages the slice matrices, coastline last.
pub fn build_system(traj: &TrajectoryArray, coast: &CoastlineSet, max_edge_km: f64) -> (TimeAveragedSystem, Vec<TriMesh>) {
    let dim = traj.n_floats() + coast.len();
    let meshes: Vec<TriMesh> = (0..traj.n_months())
        .map(|t| filter_triangles(&triangulate_slice(traj, t, coast).unwrap(), max_edge_km).unwrap())
        .collect();
    let slices: Vec<_> = meshes.iter().map(|m| assemble_slice(m, dim).unwrap()).collect();
    let system = average_system(&slices, traj.n_months(), traj.n_floats()..dim, None).unwrap();
    (system, meshes)
}

/// Resolves a configuration text with extra overrides, ignoring the
/// process environment.
pub fn config(text: &str, overrides: &[(&str, String)]) -> RunConfig {
    let map: BTreeMap<String, String> = overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    RunConfig::resolve(Some(text), std::iter::empty(), &map).unwrap()
}

pub const VORTEX_CONF: &str = include_str!("../../../../configs/vortex.conf");
pub const IDENTITY_CONF: &str = include_str!("../../../../configs/identity.conf");

/// Every file under `dir` as (relative path, bytes), sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
