//! Synthetic trajectory sets with known coherent structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::trajectory::{dedup_points, month_sequence, CoastlineSet, TrajectoryArray, YearMonth};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    Identity,
    MovingVortices,
}

/// A rotating disk whose centre drifts linearly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vortex {
    pub center: LonLat,
    /// Degrees per month, (lon, lat).
    pub drift: (f64, f64),
    /// Degrees.
    pub radius: f64,
    /// Radians per month, counter-clockwise positive.
    pub omega: f64,
}

impl Vortex {
    pub fn center_at(&self, step: usize) -> LonLat {
        self.center
            .translated(self.drift.0 * step as f64, self.drift.1 * step as f64)
    }

    /// Maps a point carried by this vortex from month `step` to `step + 1`
    /// (zero-based): rotate about the current centre, then drift.
    pub fn advance(&self, p: LonLat, step: usize) -> LonLat {
        let c = self.center_at(step);
        let (s, co) = self.omega.sin_cos();
        let (dx, dy) = (p.lon - c.lon, p.lat - c.lat);
        LonLat::new(
            c.lon + co * dx - s * dy + self.drift.0,
            c.lat + s * dx + co * dy + self.drift.1,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Seeding {
    /// Interior nodes of an `n_lon × n_lat` lattice spanning the domain;
    /// the lattice's edge nodes are left to the boundary ring.
    Grid { n_lon: usize, n_lat: usize },
    /// Uniform random points in the domain.
    Random { count: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub kind: FlowKind,
    pub domain_min: LonLat,
    pub domain_max: LonLat,
    pub vortices: Vec<Vortex>,
    pub seeding: Seeding,
    pub seed: u64,
    pub n_months: usize,
    pub start: YearMonth,
}

impl FlowSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.domain_min, self.domain_max);
        if !(lo.lon < hi.lon && lo.lat < hi.lat) || !lo.in_bounds() || !hi.in_bounds() {
            return Err(Error::validation("domain must be a nonempty lon/lat rectangle"));
        }
        if self.n_months < 2 {
            return Err(Error::validation("synthetic flows need at least 2 months"));
        }
        let n_seeds = match self.seeding {
            Seeding::Grid { n_lon, n_lat } => n_lon.saturating_sub(2) * n_lat.saturating_sub(2),
            Seeding::Random { count } => count,
        };
        if n_seeds < 3 {
            return Err(Error::validation("seed count must be at least 3"));
        }
        if self.kind == FlowKind::MovingVortices {
            for step in 0..self.n_months {
                for (a, v) in self.vortices.iter().enumerate() {
                    let c = v.center_at(step);
                    if c.lon - v.radius < lo.lon
                        || c.lon + v.radius > hi.lon
                        || c.lat - v.radius < lo.lat
                        || c.lat + v.radius > hi.lat
                    {
                        return Err(Error::validation(format!(
                            "vortex {} leaves the domain at month {}",
                            a + 1,
                            step + 1
                        )));
                    }
                    for (b, w) in self.vortices.iter().enumerate().skip(a + 1) {
                        let d = w.center_at(step);
                        let dist = (c.lon - d.lon).hypot(c.lat - d.lat);
                        if dist < v.radius + w.radius {
                            return Err(Error::validation(format!(
                                "vortices {} and {} overlap at month {}",
                                a + 1,
                                b + 1,
                                step + 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Initial float positions.
pub fn seed_points(spec: &FlowSpec) -> Vec<LonLat> {
    let (lo, hi) = (spec.domain_min, spec.domain_max);
    match spec.seeding {
        Seeding::Grid { n_lon, n_lat } => {
            let dx = (hi.lon - lo.lon) / (n_lon - 1) as f64;
            let dy = (hi.lat - lo.lat) / (n_lat - 1) as f64;
            let mut pts = Vec::new();
            for i in 1..n_lon - 1 {
                for j in 1..n_lat - 1 {
                    pts.push(LonLat::new(lo.lon + i as f64 * dx, lo.lat + j as f64 * dy));
                }
            }
            pts
        }
        Seeding::Random { count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..count)
                .map(|_| LonLat::new(rng.gen_range(lo.lon..hi.lon), rng.gen_range(lo.lat..hi.lat)))
                .collect()
        }
    }
}

/// Index of the vortex whose initial disk contains each seed point.
pub fn initial_membership(spec: &FlowSpec, seeds: &[LonLat]) -> Vec<Option<usize>> {
    seeds
        .iter()
        .map(|p| {
            spec.vortices
                .iter()
                .position(|v| (p.lon - v.center.lon).hypot(p.lat - v.center.lat) < v.radius)
        })
        .collect()
}

fn assemble(spec: &FlowSpec, rows: Vec<Vec<LonLat>>) -> Result<TrajectoryArray> {
    let ids = (1..=rows.len()).map(|i| i.to_string()).collect();
    let positions = rows.into_iter().flatten().map(Some).collect();
    TrajectoryArray::new(ids, month_sequence(spec.start, spec.n_months), positions)
}

/// Every float stays at its seed position.
pub fn gen_identity(spec: &FlowSpec) -> Result<TrajectoryArray> {
    spec.validate()?;
    let rows = seed_points(spec)
        .into_iter()
        .map(|p| vec![p; spec.n_months])
        .collect();
    assemble(spec, rows)
}

/// Floats seeded inside a vortex disk rotate about its centre and drift
/// with it; all other floats stay put.
pub fn gen_moving_vortices(spec: &FlowSpec) -> Result<TrajectoryArray> {
    spec.validate()?;
    if spec.vortices.len() != 2 {
        return Err(Error::validation("moving-vortex flow needs exactly two vortices"));
    }
    let seeds = seed_points(spec);
    let member = initial_membership(spec, &seeds);
    let rows = seeds
        .into_iter()
        .zip(member)
        .map(|(p, m)| {
            let mut row = Vec::with_capacity(spec.n_months);
            row.push(p);
            let mut cur = p;
            for step in 1..spec.n_months {
                if let Some(k) = m {
                    cur = spec.vortices[k].advance(cur, step - 1);
                }
                row.push(cur);
            }
            row
        })
        .collect();
    assemble(spec, rows)
}

pub fn generate(spec: &FlowSpec) -> Result<TrajectoryArray> {
    match spec.kind {
        FlowKind::Identity => gen_identity(spec),
        FlowKind::MovingVortices => gen_moving_vortices(spec),
    }
}

/// Distribution of per-float reporting lifetimes, in months.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LifetimeDistribution {
    Constant(usize),
    /// Uniform on `min..=max`.
    Uniform { min: usize, max: usize },
    /// Full record with probability `full_fraction`, else uniform on
    /// `1..=T-1`.
    MostlyShort { full_fraction: f64 },
}

/// Keeps one contiguous reporting window per float, with a sampled
/// lifetime and a uniformly random start. Floats left without reports are
/// removed.
pub fn apply_dropout(traj: &TrajectoryArray, dist: LifetimeDistribution, seed: u64) -> Result<TrajectoryArray> {
    let t = traj.n_months();
    match dist {
        LifetimeDistribution::Constant(l) if l == 0 || l > t => {
            return Err(Error::validation(format!("lifetime {l} outside 1..={t}")));
        }
        LifetimeDistribution::Uniform { min, max } if min == 0 || max > t || min > max => {
            return Err(Error::validation(format!("lifetime range {min}..={max} outside 1..={t}")));
        }
        LifetimeDistribution::MostlyShort { full_fraction } if !(0.0..=1.0).contains(&full_fraction) => {
            return Err(Error::validation("full_fraction must lie in [0, 1]"));
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    for i in 0..traj.n_floats() {
        let life = match dist {
            LifetimeDistribution::Constant(l) => l,
            LifetimeDistribution::Uniform { min, max } => rng.gen_range(min..=max),
            LifetimeDistribution::MostlyShort { full_fraction } => {
                if rng.gen::<f64>() < full_fraction {
                    t
                } else {
                    rng.gen_range(1..t)
                }
            }
        };
        let start = rng.gen_range(0..=t - life);
        let row: Vec<Option<LonLat>> = traj
            .row(i)
            .iter()
            .enumerate()
            .map(|(m, p)| if (start..start + life).contains(&m) { *p } else { None })
            .collect();
        if row.iter().any(Option::is_some) {
            ids.push(traj.float_ids()[i].clone());
            positions.extend(row);
        }
    }
    if ids.is_empty() {
        return Err(Error::validation("dropout removed every float"));
    }
    TrajectoryArray::new(ids, traj.months().to_vec(), positions)
}

/// Static points around the rectangle, `spacing` degrees apart along each
/// side (the side length is split evenly).
pub fn boundary_ring(lo: LonLat, hi: LonLat, spacing: f64) -> Result<CoastlineSet> {
    if !(spacing > 0.0) {
        return Err(Error::validation("ring spacing must be positive"));
    }
    let nx = ((hi.lon - lo.lon) / spacing).round().max(1.0) as usize;
    let ny = ((hi.lat - lo.lat) / spacing).round().max(1.0) as usize;
    let x = |i: usize| lo.lon + (hi.lon - lo.lon) * i as f64 / nx as f64;
    let y = |j: usize| lo.lat + (hi.lat - lo.lat) * j as f64 / ny as f64;
    let mut pts = Vec::with_capacity(2 * (nx + ny));
    for i in 0..=nx {
        pts.push(LonLat::new(x(i), lo.lat));
        pts.push(LonLat::new(x(i), hi.lat));
    }
    for j in 1..ny {
        pts.push(LonLat::new(lo.lon, y(j)));
        pts.push(LonLat::new(hi.lon, y(j)));
    }
    CoastlineSet::new(dedup_points(pts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vortex_spec() -> FlowSpec {
        FlowSpec {
            kind: FlowKind::MovingVortices,
            domain_min: LonLat::new(-40.0, -25.0),
            domain_max: LonLat::new(40.0, 25.0),
            vortices: vec![
                Vortex {
                    center: LonLat::new(-22.0, 0.0),
                    drift: (0.5, 0.2),
                    radius: 8.0,
                    omega: 0.3,
                },
                Vortex {
                    center: LonLat::new(12.0, -3.0),
                    drift: (0.4, 0.25),
                    radius: 7.0,
                    omega: -0.24,
                },
            ],
            seeding: Seeding::Random { count: 300 },
            seed: 7,
            n_months: 24,
            start: YearMonth::new(2000, 1).unwrap(),
        }
    }

    #[test]
    fn identity_grid_is_constant() {
        let spec = FlowSpec {
            kind: FlowKind::Identity,
            seeding: Seeding::Grid { n_lon: 41, n_lat: 41 },
            n_months: 3,
            domain_min: LonLat::new(0.0, 0.0),
            domain_max: LonLat::new(1.0, 1.0),
            ..vortex_spec()
        };
        let tr = gen_identity(&spec).unwrap();
        assert_eq!(tr.n_floats(), 39 * 39);
        for i in 0..tr.n_floats() {
            let row = tr.row(i);
            assert!(row.iter().all(|p| *p == row[0]));
        }
        assert_eq!(tr.reporting_set(0).unwrap(), tr.reporting_set(2).unwrap());
    }

    #[test]
    fn vortex_centre_and_radius() {
        let spec = vortex_spec();
        let v = spec.vortices[0];
        let seeds = [v.center, v.center.translated(4.0, 0.0), LonLat::new(0.0, 20.0)];
        assert_eq!(initial_membership(&spec, &seeds), vec![Some(0), Some(0), None]);
        let (mut centre, mut half) = (seeds[0], seeds[1]);
        for step in 0..23 {
            centre = v.advance(centre, step);
            half = v.advance(half, step);
            let c = v.center_at(step + 1);
            assert!((centre.lon - c.lon).abs() < 1e-12 && (centre.lat - c.lat).abs() < 1e-12);
            assert!(((half.lon - c.lon).hypot(half.lat - c.lat) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_vortices_keep_disk_points_on_their_radius() {
        let spec = vortex_spec();
        let seeds = seed_points(&spec);
        let member = initial_membership(&spec, &seeds);
        let tr = gen_moving_vortices(&spec).unwrap();
        for (i, m) in member.iter().enumerate() {
            let row = tr.row(i);
            match m {
                Some(k) => {
                    let v = &spec.vortices[*k];
                    let r0 = (seeds[i].lon - v.center.lon).hypot(seeds[i].lat - v.center.lat);
                    for (step, p) in row.iter().enumerate() {
                        let c = v.center_at(step);
                        let p = p.unwrap();
                        assert!(((p.lon - c.lon).hypot(p.lat - c.lat) - r0).abs() < 1e-9);
                    }
                }
                None => assert!(row.iter().all(|p| *p == row[0])),
            }
        }
    }

    #[test]
    fn overlap_and_escape_rejected() {
        let mut spec = vortex_spec();
        spec.vortices[1].center = LonLat::new(-12.0, 0.0);
        assert!(spec.validate().unwrap_err().to_string().contains("overlap"));
        let mut spec = vortex_spec();
        spec.vortices[0].drift = (0.0, 3.0);
        assert!(spec.validate().unwrap_err().to_string().contains("leaves"));
    }

    #[test]
    fn dropout_contracts() {
        let spec = vortex_spec();
        let tr = gen_moving_vortices(&spec).unwrap();
        let same = apply_dropout(&tr, LifetimeDistribution::Constant(24), 1).unwrap();
        assert_eq!(same, tr);
        let once = apply_dropout(&tr, LifetimeDistribution::Constant(1), 1).unwrap();
        for i in 0..once.n_floats() {
            assert_eq!(once.row(i).iter().filter(|p| p.is_some()).count(), 1);
        }
        let a = apply_dropout(&tr, LifetimeDistribution::MostlyShort { full_fraction: 0.1 }, 9).unwrap();
        let b = apply_dropout(&tr, LifetimeDistribution::MostlyShort { full_fraction: 0.1 }, 9).unwrap();
        assert_eq!(a, b);
        assert!(apply_dropout(&tr, LifetimeDistribution::Constant(0), 1).is_err());
    }

    #[test]
    fn ring_is_closed_rectangle() {
        let ring = boundary_ring(LonLat::new(0.0, 0.0), LonLat::new(1.0, 1.0), 0.025).unwrap();
        assert_eq!(ring.len(), 160);
    }
}
