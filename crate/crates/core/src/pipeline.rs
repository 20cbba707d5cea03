//! Stage functions that read and write the on-disk artifacts, and the
//! end-to-end run. Every stage reads only the files of earlier stages, so
//! running the stages one by one gives the same artifacts as a full run.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::RunConfig;
use crate::diagnostics::{self, FleetStats};
use crate::eigen::{self, EigenOptions, EigenPair};
use crate::error::{Error, Result};
use crate::fem::{assemble_slice, average_system, TimeAveragedSystem};
use crate::mesh::{filter_triangles, triangulate_slice, TriMesh};
use crate::seba::{self, SebaBasis, SebaOptions};
use crate::sets::{self, GridSpec, GriddedField};
use crate::sparse::SparseSymmetric;
use crate::synth::{self, FlowKind, FlowSpec};
use crate::trajectory::{self, CoastlineSet, TrajectoryArray};

/// Artifact file names, relative to the output directory.
pub mod artifacts {
    pub const SYNTH_RECORDS: &str = "synth_records.csv";
    pub const SYNTH_COASTLINE: &str = "synth_coastline.csv";
    pub const SYNTH_MEMBERSHIP: &str = "synth_membership.csv";
    pub const TRAJECTORIES: &str = "trajectories.csv";
    pub const COASTLINE: &str = "coastline.csv";
    pub const MESH_INDEX: &str = "mesh/index.csv";
    pub const SYSTEM: &str = "system.json";
    pub const STIFFNESS: &str = "stiffness.coo";
    pub const MASS: &str = "mass.coo";
    pub const FREE: &str = "free_indices.csv";
    pub const EIGENVALUES: &str = "eigenvalues.csv";
    pub const EIGENVECTORS: &str = "eigenvectors.csv";
    pub const SEBA: &str = "seba.csv";
    pub const SEBA_MAX: &str = "seba_max.csv";
    pub const CHEEGER: &str = "cheeger.csv";
    pub const THRESHOLDS: &str = "thresholds.csv";
    pub const ACTIVE_COUNTS: &str = "active_counts.csv";
    pub const LIFETIMES: &str = "lifetime_histogram.csv";
    pub const RMS: &str = "rms_speed.csv";
    pub const RMS_FIELD: &str = "rms_field.csv";
    pub const MANIFEST: &str = "manifest.json";
    pub const FAILED: &str = "FAILED";

    pub fn mesh_vertices(t: usize) -> String {
        format!("mesh/vertices_t{t:03}.csv")
    }

    pub fn mesh_triangles(t: usize) -> String {
        format!("mesh/triangles_t{t:03}.csv")
    }

    pub fn level_sets(k: usize) -> String {
        format!("sets_k{k}.geojson")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Mesh,
    Assemble,
    Solve,
    Seba,
    Sets,
    Diag,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Ingest,
        Stage::Mesh,
        Stage::Assemble,
        Stage::Solve,
        Stage::Seba,
        Stage::Sets,
        Stage::Diag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Mesh => "mesh",
            Stage::Assemble => "assemble",
            Stage::Solve => "solve",
            Stage::Seba => "seba",
            Stage::Sets => "sets",
            Stage::Diag => "diag",
        }
    }
}

#[derive(Debug, Error)]
#[error("stage '{}' failed: {source}", stage.name())]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn open_artifact(cfg: &RunConfig, name: &str) -> Result<BufReader<File>> {
    let path = out(cfg, name);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
            _ => Error::Io(e),
        })
}

fn create_artifact(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>> {
    let path = out(cfg, name);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::validation(format!("input file {} does not exist", path.display())),
        _ => Error::Io(e),
    })
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

// ---------------------------------------------------------------- synth

fn flow_spec(cfg: &RunConfig) -> Result<FlowSpec> {
    let s = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::validation("synth_flow is 'none'; nothing to generate"))?;
    Ok(FlowSpec {
        kind: s.flow,
        domain_min: s.domain_min,
        domain_max: s.domain_max,
        vortices: s.vortices.clone(),
        seeding: s.seeding,
        seed: cfg.seed,
        n_months: cfg.months,
        start: cfg.start_month,
    })
}

/// Seed for dropout, derived from the run seed.
fn dropout_seed(cfg: &RunConfig) -> u64 {
    cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
}

pub fn stage_synth(cfg: &RunConfig) -> Result<Value> {
    let spec = flow_spec(cfg)?;
    let s = cfg.synth.as_ref().unwrap();
    let mut traj = synth::generate(&spec)?;
    let seeds = synth::seed_points(&spec);
    let membership = synth::initial_membership(&spec, &seeds);
    if let Some(d) = s.dropout {
        traj = synth::apply_dropout(&traj, d, dropout_seed(cfg))?;
    }
    let ring = synth::boundary_ring(s.domain_min, s.domain_max, s.ring_spacing)?;

    let records = traj.to_records(cfg.day_window);
    trajectory::write_float_records(&records, create_artifact(cfg, artifacts::SYNTH_RECORDS)?)?;
    ring.write_csv(create_artifact(cfg, artifacts::SYNTH_COASTLINE)?)?;

    let mut w = csv::Writer::from_writer(create_artifact(cfg, artifacts::SYNTH_MEMBERSHIP)?);
    w.write_record(["float_id", "vortex"])?;
    for (i, m) in membership.iter().enumerate() {
        w.write_record([(i + 1).to_string(), m.map_or(0, |k| k + 1).to_string()])?;
    }
    w.flush()?;

    let full = (0..traj.n_floats())
        .filter(|&i| traj.row(i).iter().all(Option::is_some))
        .count();
    Ok(json!({
        "floats": traj.n_floats(),
        "records": records.len(),
        "ring_points": ring.len(),
        "full_lifetime_fraction": full as f64 / traj.n_floats() as f64,
    }))
}

// --------------------------------------------------------------- ingest

fn input_paths(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let records = match (&cfg.records, &cfg.synth) {
        (Some(p), _) => p.clone(),
        (None, Some(_)) => out(cfg, artifacts::SYNTH_RECORDS),
        (None, None) => return Err(Error::validation("config key 'records' is required")),
    };
    let coast = match (&cfg.coastline, &cfg.synth) {
        (Some(p), _) => p.clone(),
        (None, Some(_)) => out(cfg, artifacts::SYNTH_COASTLINE),
        (None, None) => return Err(Error::validation("config key 'coastline' is required")),
    };
    Ok((records, coast))
}

pub fn stage_ingest(cfg: &RunConfig) -> Result<Value> {
    let (records_path, coast_path) = input_paths(cfg)?;
    let records = trajectory::parse_float_records(open_input(&records_path)?)?;
    let binned = trajectory::bin_monthly(&records, cfg.start_month, cfg.months, cfg.day_window)?;
    let coast = trajectory::load_coastline(open_input(&coast_path)?, cfg.coastline_stride)?;
    binned
        .trajectories
        .write_csv(create_artifact(cfg, artifacts::TRAJECTORIES)?)?;
    coast.write_csv(create_artifact(cfg, artifacts::COASTLINE)?)?;
    info!(
        "ingested {} records: {} floats ({} dropped), {} coastline points",
        records.len(),
        binned.trajectories.n_floats(),
        binned.dropped_floats,
        coast.len()
    );
    Ok(json!({
        "records": records.len(),
        "floats": binned.trajectories.n_floats(),
        "dropped_floats": binned.dropped_floats,
        "present_positions": binned.trajectories.present_count(),
        "coastline_points": coast.len(),
    }))
}

fn load_trajectories(cfg: &RunConfig) -> Result<TrajectoryArray> {
    TrajectoryArray::read_csv(open_artifact(cfg, artifacts::TRAJECTORIES)?, cfg.start_month, cfg.months)
}

fn load_coast(cfg: &RunConfig) -> Result<CoastlineSet> {
    trajectory::load_coastline(open_artifact(cfg, artifacts::COASTLINE)?, 1)
}

// ----------------------------------------------------------------- mesh

/// Mesh of month `t` (zero-based), or the reason there is none.
fn build_mesh(traj: &TrajectoryArray, t: usize, coast: &CoastlineSet, max_edge_km: f64) -> Result<TriMesh> {
    let mesh = triangulate_slice(traj, t, coast)?;
    filter_triangles(&mesh, max_edge_km)
}

pub fn stage_mesh(cfg: &RunConfig) -> Result<Value> {
    let traj = load_trajectories(cfg)?;
    let coast = load_coast(cfg)?;
    let months: Vec<usize> = (0..cfg.months).collect();
    let meshes = par_map(&months, |&t| build_mesh(&traj, t, &coast, cfg.max_edge_km));

    let mut index = csv::Writer::from_writer(create_artifact(cfg, artifacts::MESH_INDEX)?);
    index.write_record(["t", "vertices", "triangles"])?;
    let mut unmeshed = Vec::new();
    for (t, m) in meshes.into_iter().enumerate() {
        match m {
            Ok(mesh) => {
                mesh.write_vertices_csv(create_artifact(cfg, &artifacts::mesh_vertices(t + 1))?)?;
                mesh.write_triangles_csv(create_artifact(cfg, &artifacts::mesh_triangles(t + 1))?)?;
                index.write_record([
                    (t + 1).to_string(),
                    mesh.n_vertices().to_string(),
                    mesh.n_triangles().to_string(),
                ])?;
            }
            Err(e @ (Error::Validation(_) | Error::Numerical(_))) => {
                warn!("month {}: no mesh ({e})", t + 1);
                unmeshed.push(t + 1);
            }
            Err(e) => return Err(e),
        }
    }
    index.flush()?;
    if unmeshed.len() == cfg.months {
        return Err(Error::numerical("no month could be meshed"));
    }
    Ok(json!({ "unmeshed_months": unmeshed }))
}

/// Meshes by one-based month; `None` for months without a mesh.
fn load_meshes(cfg: &RunConfig) -> Result<Vec<Option<TriMesh>>> {
    let mut rd = csv::Reader::from_reader(open_artifact(cfg, artifacts::MESH_INDEX)?);
    let mut meshes: Vec<Option<TriMesh>> = vec![None; cfg.months];
    for rec in rd.records() {
        let rec = rec?;
        let t: usize = rec[0]
            .parse()
            .map_err(|_| Error::validation("mesh index: bad month"))?;
        if t == 0 || t > cfg.months {
            return Err(Error::validation(format!("mesh index lists month {t} beyond the run length")));
        }
        let mesh = TriMesh::read_csv(
            open_artifact(cfg, &artifacts::mesh_vertices(t))?,
            open_artifact(cfg, &artifacts::mesh_triangles(t))?,
        )?;
        meshes[t - 1] = Some(mesh);
    }
    Ok(meshes)
}

// ------------------------------------------------------------- assemble

#[derive(Clone, Copy, Debug, PartialEq)]
struct SystemInfo {
    dim: usize,
    n_floats: usize,
    n_coast: usize,
    n_slices: usize,
}

impl SystemInfo {
    fn to_json(self, n_free: usize) -> Value {
        json!({
            "dimension": self.dim,
            "floats": self.n_floats,
            "coastline_points": self.n_coast,
            "slices": self.n_slices,
            "free": n_free,
        })
    }

    fn load(cfg: &RunConfig) -> Result<Self> {
        let v: Value = serde_json::from_reader(open_artifact(cfg, artifacts::SYSTEM)?)?;
        let get = |k: &str| {
            v[k].as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::validation(format!("{}: missing '{k}'", artifacts::SYSTEM)))
        };
        Ok(Self {
            dim: get("dimension")?,
            n_floats: get("floats")?,
            n_coast: get("coastline_points")?,
            n_slices: get("slices")?,
        })
    }
}

pub fn stage_assemble(cfg: &RunConfig) -> Result<Value> {
    let traj = load_trajectories(cfg)?;
    let coast = load_coast(cfg)?;
    let meshes = load_meshes(cfg)?;
    let info = SystemInfo {
        dim: traj.n_floats() + coast.len(),
        n_floats: traj.n_floats(),
        n_coast: coast.len(),
        n_slices: cfg.months,
    };
    let present: Vec<&TriMesh> = meshes.iter().flatten().collect();
    let slices = par_map(&present, |m| assemble_slice(m, info.dim))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let system = average_system(&slices, cfg.months, info.n_floats..info.dim, None)?;

    system.stiffness.write_coo(create_artifact(cfg, artifacts::STIFFNESS)?)?;
    system.mass.write_coo(create_artifact(cfg, artifacts::MASS)?)?;
    let mut w = csv::Writer::from_writer(create_artifact(cfg, artifacts::FREE)?);
    w.write_record(["global_index"])?;
    for g in &system.free {
        w.write_record([(g + 1).to_string()])?;
    }
    w.flush()?;
    let summary = info.to_json(system.free.len());
    let mut f = create_artifact(cfg, artifacts::SYSTEM)?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    Ok(summary)
}

fn load_system(cfg: &RunConfig) -> Result<TimeAveragedSystem> {
    let info = SystemInfo::load(cfg)?;
    let stiffness = SparseSymmetric::read_coo(open_artifact(cfg, artifacts::STIFFNESS)?)?;
    let mass = SparseSymmetric::read_coo(open_artifact(cfg, artifacts::MASS)?)?;
    let mut free = Vec::new();
    for rec in csv::Reader::from_reader(open_artifact(cfg, artifacts::FREE)?).records() {
        let rec = rec?;
        let g: usize = rec[0]
            .parse()
            .map_err(|_| Error::validation("free index file: bad entry"))?;
        if g == 0 {
            return Err(Error::validation("free index file: indices are one-based"));
        }
        free.push(g - 1);
    }
    if stiffness.dim() != info.dim {
        return Err(Error::validation("matrix dimension disagrees with the system summary"));
    }
    TimeAveragedSystem::from_parts(stiffness, mass, free, info.n_slices)
}

// ---------------------------------------------------------------- solve

/// `−π²(1/Lx² + 1/Ly²)` for a rectangle with Dirichlet boundary.
pub fn rectangle_first_eigenvalue(width: f64, height: f64) -> f64 {
    let pi2 = std::f64::consts::PI.powi(2);
    -pi2 * (1.0 / (width * width) + 1.0 / (height * height))
}

pub fn stage_solve(cfg: &RunConfig) -> Result<Value> {
    let system = load_system(cfg)?;
    let opts = EigenOptions {
        k: cfg.k,
        tol: cfg.eigen_tol,
        seed: cfg.seed,
        ..EigenOptions::default()
    };
    let pairs = eigen::solve_leading_with(&system, &opts)?;
    eigen::write_eigenvalues(&pairs, create_artifact(cfg, artifacts::EIGENVALUES)?)?;
    eigen::write_eigenvectors(&pairs, &system.free, create_artifact(cfg, artifacts::EIGENVECTORS)?)?;

    let mut details = json!({
        "converged": true,
        "eigenvalues": pairs.iter().map(|p| p.eigenvalue).collect::<Vec<_>>(),
        "residuals": pairs.iter().map(|p| p.residual).collect::<Vec<_>>(),
    });
    if let Some(s) = cfg.synth.as_ref().filter(|s| s.flow == FlowKind::Identity) {
        let expected = rectangle_first_eigenvalue(
            s.domain_max.lon - s.domain_min.lon,
            s.domain_max.lat - s.domain_min.lat,
        );
        let rel = (pairs[0].eigenvalue - expected).abs() / expected.abs();
        details["identity_self_test"] = json!({
            "lambda_1": pairs[0].eigenvalue,
            "expected": expected,
            "relative_error": rel,
            "pass": rel <= 0.02,
        });
    }
    Ok(details)
}

fn load_eigenpairs(cfg: &RunConfig, dim: usize) -> Result<Vec<EigenPair>> {
    eigen::read_eigenpairs(
        open_artifact(cfg, artifacts::EIGENVALUES)?,
        open_artifact(cfg, artifacts::EIGENVECTORS)?,
        dim,
    )
}

// ----------------------------------------------------------------- seba

/// Seed for SEBA restarts, derived from the run seed.
fn seba_seed(cfg: &RunConfig) -> u64 {
    cfg.seed.wrapping_add(0x2545_f491_4f6c_dd1d)
}

pub fn stage_seba(cfg: &RunConfig) -> Result<Value> {
    let system = load_system(cfg)?;
    let pairs = load_eigenpairs(cfg, system.dim())?;
    let u: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| system.free.iter().map(|&g| p.coefficients[g]).collect())
        .collect();
    let opts = SebaOptions {
        mu: cfg.seba_mu,
        tol: cfg.seba_tol,
        max_iter: cfg.seba_max_iter,
        restarts: cfg.seba_restarts,
        seed: seba_seed(cfg),
    };
    let basis = seba::seba_rotate(&u, &opts)?;
    let span = seba::span_residual(&u, &basis)?;
    let coincident = basis.coincident_columns(0.99);
    if !coincident.is_empty() {
        warn!("SEBA features coincide: {coincident:?}; try more restarts or a smaller seba_mu");
    }
    let global = basis.embed(&system.free, system.dim());
    global.write_csv(create_artifact(cfg, artifacts::SEBA)?)?;

    let combined = seba::max_combine(&global);
    let mut w = csv::Writer::from_writer(create_artifact(cfg, artifacts::SEBA_MAX)?);
    w.write_record(["global_index", "value"])?;
    for (g, v) in combined.iter().enumerate() {
        if v.abs() > 1e-12 {
            w.write_record([(g + 1).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;

    Ok(json!({
        "converged": basis.converged,
        "iterations": basis.iterations,
        "final_change": basis.final_change,
        "mu": basis.mu,
        "span_residual": span,
        "coincident_features": coincident,
        "support_fraction": basis.support_fractions(),
        "entries_below_minus_0_2": basis.negative_counts(),
    }))
}

// ----------------------------------------------------------------- sets

/// Rasterizes one coefficient vector at every month; months without a
/// mesh give an all-zero field.
pub fn monthly_fields(coeffs: &[f64], meshes: &[Option<TriMesh>], grid: &GridSpec) -> Vec<GriddedField> {
    meshes
        .iter()
        .enumerate()
        .map(|(t, m)| match m {
            Some(mesh) => sets::grid_interpolate(coeffs, mesh, grid, t + 1),
            None => GriddedField {
                grid: *grid,
                values: vec![0.0; grid.nx * grid.ny],
                month: t + 1,
            },
        })
        .collect()
}

pub fn stage_sets(cfg: &RunConfig) -> Result<Value> {
    let info = SystemInfo::load(cfg)?;
    let basis = SebaBasis::read_csv(open_artifact(cfg, artifacts::SEBA)?, info.dim)?;
    let meshes = load_meshes(cfg)?;
    let grid = GridSpec::covering_meshes(meshes.iter().flatten(), cfg.grid_spacing)?;
    let features: Vec<usize> = (1..=basis.columns.len()).collect();

    let results = par_map(&features, |&k| {
        let fields = monthly_fields(&basis.columns[k - 1], &meshes, &grid);
        let curve = sets::optimize_threshold(k, &fields, cfg.c_step);
        let family = curve
            .as_ref()
            .ok()
            .map(|c| sets::evolve_boundaries(k, c.c_min, &fields));
        (curve, family)
    });

    let mut curves = Vec::new();
    let mut excluded = Vec::new();
    let mut thresholds = csv::Writer::from_writer(create_artifact(cfg, artifacts::THRESHOLDS)?);
    thresholds.write_record(["k", "c_min", "h_min", "local_minima"])?;
    for (k, (curve, family)) in features.iter().zip(results) {
        match (curve, family) {
            (Ok(curve), Some(family)) => {
                thresholds.write_record([
                    k.to_string(),
                    curve.c_min.to_string(),
                    curve.h_min().to_string(),
                    curve
                        .local_minima
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                ])?;
                family.write_geojson(create_artifact(cfg, &artifacts::level_sets(*k))?)?;
                curves.push(curve);
            }
            (Err(Error::Numerical(msg)), _) => {
                warn!("feature {k} excluded: {msg}");
                excluded.push(*k);
            }
            (Err(e), _) => return Err(e),
            (Ok(_), None) => unreachable!("family is built for every curve"),
        }
    }
    thresholds.flush()?;
    sets::write_cheeger_curves(&curves, create_artifact(cfg, artifacts::CHEEGER)?)?;
    if curves.is_empty() {
        return Err(Error::numerical("every feature is empty in some month at every threshold"));
    }
    Ok(json!({
        "grid": {
            "origin": [grid.origin.lon, grid.origin.lat],
            "spacing": grid.spacing,
            "nx": grid.nx,
            "ny": grid.ny,
        },
        "c_min": curves.iter().map(|c| json!({"k": c.feature, "c": c.c_min, "h": c.h_min()})).collect::<Vec<_>>(),
        "excluded_features": excluded,
    }))
}

// ----------------------------------------------------------------- diag

pub fn stage_diag(cfg: &RunConfig) -> Result<Value> {
    let traj = load_trajectories(cfg)?;
    let stats = FleetStats::compute(&traj);
    diagnostics::write_counts(&stats.active_counts, create_artifact(cfg, artifacts::ACTIVE_COUNTS)?)?;
    let hist = diagnostics::lifetime_histogram(&traj, cfg.histogram_bin)?;
    diagnostics::write_histogram(&hist, create_artifact(cfg, artifacts::LIFETIMES)?)?;
    diagnostics::write_rms(&traj, &stats.rms_speeds, create_artifact(cfg, artifacts::RMS)?)?;

    let t = cfg.display_month_clamped();
    let meshes = load_meshes(cfg)?;
    let mut field_written = false;
    if let Some(mesh) = &meshes[t - 1] {
        let coast = load_coast(cfg)?;
        let field = diagnostics::rms_speed_field(&traj, mesh, traj.n_floats() + coast.len());
        let mut w = csv::Writer::from_writer(create_artifact(cfg, artifacts::RMS_FIELD)?);
        w.write_record(["global_index", "lon", "lat", "rms_km_per_month"])?;
        for (v, p) in mesh.vertices().iter().enumerate() {
            let g = mesh.global_index()[v];
            if field.defined[g] {
                w.write_record([
                    (g + 1).to_string(),
                    p.lon.to_string(),
                    p.lat.to_string(),
                    field.field.vertex_value(v).to_string(),
                ])?;
            }
        }
        w.flush()?;
        field_written = true;
    } else {
        warn!("display month {t} has no mesh; RMS field skipped");
    }
    let speeds: Vec<f64> = stats.rms_speeds.iter().flatten().copied().collect();
    Ok(json!({
        "active_counts": stats.active_counts,
        "floats_with_speed": speeds.len(),
        "display_month": t,
        "rms_field_written": field_written,
    }))
}

// ------------------------------------------------------------- manifest

fn read_manifest(cfg: &RunConfig) -> Map<String, Value> {
    fs::read(out(cfg, artifacts::MANIFEST))
        .ok()
        .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
        .and_then(|v| v.as_object().cloned())
        .unwrap_or_default()
}

fn write_manifest(cfg: &RunConfig, m: &Map<String, Value>) -> Result<()> {
    let mut f = create_artifact(cfg, artifacts::MANIFEST)?;
    serde_json::to_writer_pretty(&mut f, m)?;
    writeln!(f)?;
    Ok(())
}

fn record_stage(cfg: &RunConfig, stage: Stage, seconds: f64, outcome: &Result<Value>) -> Result<()> {
    let mut m = read_manifest(cfg);
    m.insert("config".into(), json!(cfg.pairs()));
    m.insert(
        "versions".into(),
        json!({ "dynlap": env!("CARGO_PKG_VERSION"), "artifact_format": 1 }),
    );
    let stages = m
        .entry("stages")
        .or_insert_with(|| json!({}))
        .as_object_mut()
        .expect("stages is an object");
    let entry = match outcome {
        Ok(details) => json!({ "status": "ok", "seconds": seconds, "details": details }),
        Err(e) => json!({ "status": "failed", "seconds": seconds, "error": e.to_string() }),
    };
    stages.insert(stage.name().into(), entry);
    if let Ok(details) = outcome {
        if let Some(c) = details.get("converged") {
            let conv = m
                .entry("convergence")
                .or_insert_with(|| json!({}))
                .as_object_mut()
                .expect("convergence is an object");
            conv.insert(stage.name().into(), c.clone());
        }
    }
    m.insert(
        "status".into(),
        json!(if outcome.is_ok() { "ok" } else { "failed" }),
    );
    write_manifest(cfg, &m)
}

/// Runs one stage, recording its timing and outcome in the manifest. On
/// failure a `FAILED` marker names the stage; earlier outputs are kept.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> std::result::Result<Value, PipelineError> {
    let wrap = |source| PipelineError { stage, source };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| wrap(e.into()))?;
    let started = Instant::now();
    let outcome = with_threads(cfg, || match stage {
        Stage::Synth => stage_synth(cfg),
        Stage::Ingest => stage_ingest(cfg),
        Stage::Mesh => stage_mesh(cfg),
        Stage::Assemble => stage_assemble(cfg),
        Stage::Solve => stage_solve(cfg),
        Stage::Seba => stage_seba(cfg),
        Stage::Sets => stage_sets(cfg),
        Stage::Diag => stage_diag(cfg),
    });
    let seconds = started.elapsed().as_secs_f64();
    record_stage(cfg, stage, seconds, &outcome).map_err(wrap)?;
    match outcome {
        Ok(v) => {
            info!("stage {} done in {seconds:.2} s", stage.name());
            Ok(v)
        }
        Err(e) => {
            let _ = fs::write(out(cfg, artifacts::FAILED), format!("{}: {e}\n", stage.name()));
            Err(wrap(e))
        }
    }
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> R {
    if cfg.threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            warn!("could not build a {}-thread pool ({e}); using the global pool", cfg.threads);
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R: Send>(_cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Checks that referenced input files exist before any work starts.
fn check_inputs(cfg: &RunConfig) -> Result<()> {
    for (key, p) in [("records", &cfg.records), ("coastline", &cfg.coastline)] {
        match p {
            Some(p) if !p.is_file() => {
                return Err(Error::validation(format!("{key} file {} does not exist", p.display())));
            }
            None if cfg.synth.is_none() => {
                return Err(Error::validation(format!("config key '{key}' is required")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Synthesizes (if configured) and runs every stage in order.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<Map<String, Value>, PipelineError> {
    let first = if cfg.synth.is_some() { Stage::Synth } else { Stage::Ingest };
    cfg.validate()
        .and_then(|_| check_inputs(cfg))
        .map_err(|source| PipelineError { stage: first, source })?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| PipelineError {
        stage: first,
        source: e.into(),
    })?;
    let _ = fs::remove_file(out(cfg, artifacts::FAILED));
    let _ = fs::remove_file(out(cfg, artifacts::MANIFEST));
    if cfg.synth.is_some() {
        run_stage(cfg, Stage::Synth)?;
    }
    for stage in Stage::PIPELINE {
        run_stage(cfg, stage)?;
    }
    Ok(read_manifest(cfg))
}
