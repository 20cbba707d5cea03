//! Longitude/latitude positions and spherical distances.

use std::fmt;

/// Mean Earth radius used for every length and area conversion.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Length of one degree of arc on the equator (≈ 111.19 km).
pub const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// A position in degrees. Longitude is kept in `[-180, 180)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    /// Builds a position, wrapping the longitude into `[-180, 180)` and
    /// rejecting latitudes outside `[-90, 90]` or non-finite input.
    pub fn normalized(lon: f64, lat: f64) -> Option<Self> {
        if !lon.is_finite() || !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return None;
        }
        Some(Self {
            lon: normalize_lon(lon),
            lat,
        })
    }

    pub fn in_bounds(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }

    pub fn translated(&self, dlon: f64, dlat: f64) -> Self {
        Self::new(self.lon + dlon, self.lat + dlat)
    }
}

impl fmt::Display for LonLat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lon, self.lat)
    }
}

/// Wraps a longitude into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Haversine distance in km.
pub fn great_circle_km(p: LonLat, q: LonLat) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Planar length of a lon/lat segment with the zonal component scaled by
/// the cosine of the segment's mean latitude.
pub fn scaled_segment_km(p: LonLat, q: LonLat) -> f64 {
    let mean_lat = 0.5 * (p.lat + q.lat);
    let dx = (q.lon - p.lon) * mean_lat.to_radians().cos();
    let dy = q.lat - p.lat;
    dx.hypot(dy) * KM_PER_DEGREE
}
