//! Run configuration: flat `key = value` text, overridable from the
//! environment (`DYNLAP_<KEY>`) and then from explicit overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::synth::{FlowKind, LifetimeDistribution, Seeding, Vortex};
use crate::trajectory::{DayWindow, YearMonth};

pub const ENV_PREFIX: &str = "DYNLAP_";

/// Documented keys with their default values and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("records", "", "surfacing records CSV (float_id,timestamp,lon,lat)"),
    ("coastline", "", "boundary points CSV (lon,lat)"),
    ("output_dir", "out", "directory for all artifacts"),
    ("start_month", "2011-01", "first month, YYYY-MM"),
    ("months", "72", "number of monthly slices T"),
    ("day_first", "1", "first day of the surfacing window"),
    ("day_last", "12", "last day of the surfacing window"),
    ("coastline_stride", "5", "keep every n-th coastline point"),
    ("max_edge_km", "1500", "drop triangles with a longer great-circle edge"),
    ("k", "8", "number of eigenpairs"),
    ("eigen_tol", "1e-8", "relative residual tolerance of the eigensolver"),
    ("seba_mu", "auto", "SEBA soft threshold; auto = 0.99/sqrt(n)"),
    ("seba_tol", "1e-12", "SEBA rotation-change tolerance"),
    ("seba_max_iter", "5000", "SEBA iteration cap"),
    ("seba_restarts", "0", "extra seeded random SEBA starts"),
    ("grid_spacing", "1", "raster spacing in degrees"),
    ("c_step", "0.01", "threshold step of the Cheeger scan"),
    ("display_month", "36", "month whose mesh carries the RMS speed field"),
    ("histogram_bin", "6", "lifetime histogram bin width in months"),
    ("seed", "0", "seed for every random choice"),
    ("threads", "0", "worker threads, 0 = automatic"),
    ("synth_flow", "none", "none | identity | moving-vortices"),
    ("synth_domain", "-40,-25,40,25", "lon_min,lat_min,lon_max,lat_max"),
    ("synth_seeding", "random:2000", "random:N | grid:NLONxNLAT"),
    (
        "synth_vortices",
        "-22,0,0.25,0.1,8,0.3;10,-3,0.2,0.12,7,-0.24",
        "lon,lat,drift_lon,drift_lat,radius,omega per vortex, ';'-separated",
    ),
    ("synth_ring_spacing", "2", "spacing of the static boundary ring, degrees"),
    (
        "synth_dropout",
        "none",
        "none | constant:L | uniform:MIN-MAX | mostly-short:FRACTION",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub flow: FlowKind,
    pub domain_min: LonLat,
    pub domain_max: LonLat,
    pub seeding: Seeding,
    pub vortices: Vec<Vortex>,
    pub ring_spacing: f64,
    pub dropout: Option<LifetimeDistribution>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub records: Option<PathBuf>,
    pub coastline: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub start_month: YearMonth,
    pub months: usize,
    pub day_window: DayWindow,
    pub coastline_stride: usize,
    pub max_edge_km: f64,
    pub k: usize,
    pub eigen_tol: f64,
    pub seba_mu: Option<f64>,
    pub seba_tol: f64,
    pub seba_max_iter: usize,
    pub seba_restarts: usize,
    pub grid_spacing: f64,
    pub c_step: f64,
    pub display_month: usize,
    pub histogram_bin: usize,
    pub seed: u64,
    pub threads: usize,
    pub synth: Option<SynthConfig>,
    /// Raw resolved values, echoed into the manifest.
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new()).expect("defaults are valid")
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::validation(format!("config key '{key}': cannot parse '{v}'")))
}

fn floats(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let xs: Vec<f64> = v.split(',').map(|s| parse(key, s)).collect::<Result<_>>()?;
    if xs.len() != n {
        return Err(Error::validation(format!("config key '{key}' needs {n} comma-separated numbers")));
    }
    Ok(xs)
}

fn parse_seeding(v: &str) -> Result<Seeding> {
    let key = "synth_seeding";
    match v.trim().split_once(':') {
        Some(("random", n)) => Ok(Seeding::Random { count: parse(key, n)? }),
        Some(("grid", dims)) => {
            let (a, b) = dims
                .split_once('x')
                .ok_or_else(|| Error::validation("synth_seeding grid needs NLONxNLAT"))?;
            Ok(Seeding::Grid {
                n_lon: parse(key, a)?,
                n_lat: parse(key, b)?,
            })
        }
        _ => Err(Error::validation(format!("synth_seeding: unknown form '{v}'"))),
    }
}

fn parse_dropout(v: &str) -> Result<Option<LifetimeDistribution>> {
    let key = "synth_dropout";
    let v = v.trim();
    if v == "none" {
        return Ok(None);
    }
    let d = match v.split_once(':') {
        Some(("constant", l)) => LifetimeDistribution::Constant(parse(key, l)?),
        Some(("uniform", r)) => {
            let (a, b) = r
                .split_once('-')
                .ok_or_else(|| Error::validation("synth_dropout uniform needs MIN-MAX"))?;
            LifetimeDistribution::Uniform {
                min: parse(key, a)?,
                max: parse(key, b)?,
            }
        }
        Some(("mostly-short", f)) => LifetimeDistribution::MostlyShort {
            full_fraction: parse(key, f)?,
        },
        _ => return Err(Error::validation(format!("synth_dropout: unknown form '{v}'"))),
    };
    Ok(Some(d))
}

fn parse_vortices(v: &str) -> Result<Vec<Vortex>> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let x = floats("synth_vortices", s, 6)?;
            Ok(Vortex {
                center: LonLat::new(x[0], x[1]),
                drift: (x[2], x[3]),
                radius: x[4],
                omega: x[5],
            })
        })
        .collect()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(n + 1, "expected key = value"))?;
        let k = k.trim().to_string();
        if !KEYS.iter().any(|(name, _, _)| *name == k) {
            return Err(Error::parse(n + 1, format!("unknown config key '{k}'")));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// Builds from explicit values; missing keys take their defaults.
    pub fn from_map(given: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = given.keys().find(|k| !KEYS.iter().any(|(name, _, _)| name == k)) {
            return Err(Error::validation(format!("unknown config key '{k}'")));
        }
        let values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|(k, d, _)| (k.to_string(), given.get(*k).cloned().unwrap_or_else(|| d.to_string())))
            .collect();
        let get = |k: &str| values[k].as_str();
        let path = |k: &str| (!get(k).is_empty()).then(|| PathBuf::from(get(k)));

        let synth = match get("synth_flow") {
            "none" => None,
            flow => {
                let flow = match flow {
                    "identity" => FlowKind::Identity,
                    "moving-vortices" => FlowKind::MovingVortices,
                    other => return Err(Error::validation(format!("synth_flow: unknown flow '{other}'"))),
                };
                let d = floats("synth_domain", get("synth_domain"), 4)?;
                Some(SynthConfig {
                    flow,
                    domain_min: LonLat::new(d[0], d[1]),
                    domain_max: LonLat::new(d[2], d[3]),
                    seeding: parse_seeding(get("synth_seeding"))?,
                    vortices: parse_vortices(get("synth_vortices"))?,
                    ring_spacing: parse("synth_ring_spacing", get("synth_ring_spacing"))?,
                    dropout: parse_dropout(get("synth_dropout"))?,
                })
            }
        };

        let cfg = RunConfig {
            records: path("records"),
            coastline: path("coastline"),
            output_dir: PathBuf::from(get("output_dir")),
            start_month: get("start_month").parse()?,
            months: parse("months", get("months"))?,
            day_window: DayWindow::new(parse("day_first", get("day_first"))?, parse("day_last", get("day_last"))?)?,
            coastline_stride: parse("coastline_stride", get("coastline_stride"))?,
            max_edge_km: parse("max_edge_km", get("max_edge_km"))?,
            k: parse("k", get("k"))?,
            eigen_tol: parse("eigen_tol", get("eigen_tol"))?,
            seba_mu: match get("seba_mu") {
                "auto" => None,
                v => Some(parse("seba_mu", v)?),
            },
            seba_tol: parse("seba_tol", get("seba_tol"))?,
            seba_max_iter: parse("seba_max_iter", get("seba_max_iter"))?,
            seba_restarts: parse("seba_restarts", get("seba_restarts"))?,
            grid_spacing: parse("grid_spacing", get("grid_spacing"))?,
            c_step: parse("c_step", get("c_step"))?,
            display_month: parse("display_month", get("display_month"))?,
            histogram_bin: parse("histogram_bin", get("histogram_bin"))?,
            seed: parse("seed", get("seed"))?,
            threads: parse("threads", get("threads"))?,
            synth,
            values,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// File values, then `DYNLAP_<KEY>` environment variables, then
    /// `overrides`, each layer replacing the previous.
    pub fn resolve(
        file_text: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map = match file_text {
            Some(t) => parse_config_text(t)?,
            None => BTreeMap::new(),
        };
        for (name, value) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if KEYS.iter().any(|(k, _, _)| *k == key) {
                    map.insert(key, value);
                }
            }
        }
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(&map)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::validation(msg.to_string()));
        if self.months < 2 {
            return bad("months must be at least 2");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.coastline_stride == 0 {
            return bad("coastline_stride must be at least 1");
        }
        if !(self.max_edge_km > 0.0) {
            return bad("max_edge_km must be positive");
        }
        if !(self.eigen_tol > 0.0) || !(self.seba_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.seba_mu.is_some_and(|m| !(m >= 0.0)) {
            return bad("seba_mu must be nonnegative");
        }
        if self.seba_max_iter == 0 {
            return bad("seba_max_iter must be at least 1");
        }
        if !(self.grid_spacing > 0.0) {
            return bad("grid_spacing must be positive");
        }
        crate::sets::threshold_grid(self.c_step)?;
        if self.display_month == 0 {
            return bad("display_month must be at least 1");
        }
        if self.histogram_bin == 0 {
            return bad("histogram_bin must be at least 1");
        }
        if let Some(s) = &self.synth {
            if !(s.ring_spacing > 0.0) {
                return bad("synth_ring_spacing must be positive");
            }
        }
        Ok(())
    }

    /// Resolved `(key, value)` pairs, sorted by key. Feeding them back
    /// through [`RunConfig::from_map`] reproduces this configuration.
    pub fn pairs(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Display month clamped to the run length.
    pub fn display_month_clamped(&self) -> usize {
        self.display_month.min(self.months)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
