//! Browser demo: two drifting vortices seeded with floats, their coherent
//! features, and the threshold scan that turns a feature into a set.

use wasm_bindgen::prelude::*;

use dynlap::eigen::{solve_leading_with, EigenOptions};
use dynlap::fem::{assemble_slice, average_system};
use dynlap::mesh::{filter_triangles, triangulate_slice, TriMesh};
use dynlap::pipeline::monthly_fields;
use dynlap::seba::{seba_rotate, SebaBasis, SebaOptions};
use dynlap::sets::{extract_contours, optimize_threshold, GridSpec, GriddedField};
use dynlap::synth::{boundary_ring, generate, FlowKind, FlowSpec, Seeding, Vortex};
use dynlap::trajectory::{TrajectoryArray, YearMonth};
use dynlap::LonLat;

const DOMAIN_MIN: LonLat = LonLat { lon: -40.0, lat: -25.0 };
const DOMAIN_MAX: LonLat = LonLat { lon: 40.0, lat: 25.0 };
const GRID_SPACING: f64 = 1.0;
const C_STEP: f64 = 0.01;

#[wasm_bindgen]
pub struct Demo {
    traj: TrajectoryArray,
    meshes: Vec<Option<TriMesh>>,
    basis: SebaBasis,
    eigenvalues: Vec<f64>,
    grid: GridSpec,
}

impl Demo {
    /// Everything from flow generation to the sparse basis.
    pub fn build(floats: usize, months: usize, spin: f64, k: usize, seed: u64) -> dynlap::Result<Demo> {
        let spec = FlowSpec {
            kind: FlowKind::MovingVortices,
            domain_min: DOMAIN_MIN,
            domain_max: DOMAIN_MAX,
            vortices: vec![
                Vortex { center: LonLat::new(-22.0, 0.0), drift: (0.25, 0.1), radius: 8.0, omega: spin },
                Vortex { center: LonLat::new(10.0, -3.0), drift: (0.2, 0.12), radius: 7.0, omega: -0.8 * spin },
            ],
            seeding: Seeding::Random { count: floats },
            seed,
            n_months: months,
            start: YearMonth::new(2000, 1)?,
        };
        let traj = generate(&spec)?;
        let coast = boundary_ring(DOMAIN_MIN, DOMAIN_MAX, 2.0)?;
        let meshes: Vec<Option<TriMesh>> = (0..months)
            .map(|t| triangulate_slice(&traj, t, &coast).and_then(|m| filter_triangles(&m, 1500.0)).ok())
            .collect();
        let dim = traj.n_floats() + coast.len();
        let slices = meshes
            .iter()
            .flatten()
            .map(|m| assemble_slice(m, dim))
            .collect::<dynlap::Result<Vec<_>>>()?;
        let system = average_system(&slices, months, traj.n_floats()..dim, None)?;
        let pairs = solve_leading_with(&system, &EigenOptions { k, seed, ..EigenOptions::default() })?;
        let u: Vec<Vec<f64>> = pairs
            .iter()
            .map(|p| system.free.iter().map(|&g| p.coefficients[g]).collect())
            .collect();
        let basis = seba_rotate(&u, &SebaOptions { restarts: 4, seed, ..SebaOptions::default() })?
            .embed(&system.free, dim);
        let grid = GridSpec::covering(DOMAIN_MIN, DOMAIN_MAX, GRID_SPACING)?;
        Ok(Demo {
            traj,
            meshes,
            basis,
            eigenvalues: pairs.iter().map(|p| p.eigenvalue).collect(),
            grid,
        })
    }

    fn fields(&self, feature: usize) -> Vec<GriddedField> {
        match self.basis.columns.get(feature) {
            Some(col) => monthly_fields(col, &self.meshes, &self.grid),
            None => Vec::new(),
        }
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(floats: usize, months: usize, spin: f64, k: usize, seed: u32) -> Result<Demo, JsError> {
        Demo::build(floats, months, spin, k, seed as u64).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.clone()
    }

    pub fn n_features(&self) -> usize {
        self.basis.columns.len()
    }

    pub fn n_months(&self) -> usize {
        self.meshes.len()
    }

    pub fn grid_nx(&self) -> usize {
        self.grid.nx
    }

    pub fn grid_ny(&self) -> usize {
        self.grid.ny
    }

    /// `[lon0, lat0, spacing]` of the display grid.
    pub fn grid_frame(&self) -> Vec<f64> {
        vec![self.grid.origin.lon, self.grid.origin.lat, self.grid.spacing]
    }

    /// Flat `lon, lat` pairs of the floats reporting in `month` (zero-based).
    pub fn floats(&self, month: usize) -> Vec<f64> {
        if month >= self.traj.n_months() {
            return Vec::new();
        }
        (0..self.traj.n_floats())
            .filter_map(|i| self.traj.position(i, month))
            .flat_map(|p| [p.lon, p.lat])
            .collect()
    }

    /// Feature values on the display grid, row by row from the south.
    pub fn field(&self, feature: usize, month: usize) -> Vec<f64> {
        match (self.basis.columns.get(feature), self.meshes.get(month)) {
            (Some(col), Some(Some(mesh))) => dynlap::sets::grid_interpolate(col, mesh, &self.grid, month + 1).values,
            (Some(_), Some(None)) => vec![0.0; self.grid.nx * self.grid.ny],
            _ => Vec::new(),
        }
    }

    /// Boundary rings at level `c` as `lon, lat` pairs; rings are
    /// separated by a NaN pair.
    pub fn contours(&self, feature: usize, month: usize, c: f64) -> Vec<f64> {
        let field = self.field(feature, month);
        if field.is_empty() {
            return Vec::new();
        }
        let f = GriddedField { grid: self.grid, values: field, month: month + 1 };
        let mut out = Vec::new();
        for ring in extract_contours(&f, c) {
            out.extend(ring.iter().flat_map(|p| [p.lon, p.lat]));
            out.extend([f64::NAN, f64::NAN]);
        }
        out
    }

    /// Cheeger ratio at thresholds `0.01, 0.02, …, 0.99`, NaN where the
    /// set vanishes in some month. The last entry is the minimizing
    /// threshold, or NaN if there is none.
    pub fn cheeger_curve(&self, feature: usize) -> Vec<f64> {
        let fields = self.fields(feature);
        if fields.is_empty() {
            return Vec::new();
        }
        match optimize_threshold(feature + 1, &fields, C_STEP) {
            Ok(curve) => {
                let mut v: Vec<f64> = curve.values.iter().map(|h| h.unwrap_or(f64::NAN)).collect();
                v.push(curve.c_min);
                v
            }
            Err(_) => {
                let n = (1.0 / C_STEP).round() as usize - 1;
                vec![f64::NAN; n + 1]
            }
        }
    }
}
