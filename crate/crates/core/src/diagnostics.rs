//! Fleet statistics: active counts per month, lifetimes and RMS speeds.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geo::great_circle_km;
use crate::mesh::{HatBasisField, TriMesh};
use crate::trajectory::TrajectoryArray;

#[derive(Clone, Debug, PartialEq)]
pub struct FleetStats {
    pub active_counts: Vec<usize>,
    /// Months from first to last report, inclusive.
    pub lifetimes: Vec<usize>,
    /// km/month; `None` without two reports in consecutive months.
    pub rms_speeds: Vec<Option<f64>>,
}

impl FleetStats {
    pub fn compute(traj: &TrajectoryArray) -> Self {
        Self {
            active_counts: active_counts(traj),
            lifetimes: lifetimes(traj),
            rms_speeds: rms_speeds(traj),
        }
    }
}

pub fn active_counts(traj: &TrajectoryArray) -> Vec<usize> {
    (0..traj.n_months())
        .map(|t| (0..traj.n_floats()).filter(|&i| traj.position(i, t).is_some()).count())
        .collect()
}

pub fn lifetimes(traj: &TrajectoryArray) -> Vec<usize> {
    (0..traj.n_floats())
        .map(|i| {
            let row = traj.row(i);
            let first = row.iter().position(Option::is_some).unwrap_or(0);
            let last = row.iter().rposition(Option::is_some).unwrap_or(0);
            last - first + 1
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistogramBin {
    /// Inclusive lifetime range in months.
    pub start: usize,
    pub end: usize,
    pub count: usize,
}

/// Bins lifetimes into `[1, w], [w+1, 2w], …` up to the number of months.
pub fn lifetime_histogram(traj: &TrajectoryArray, bin_width: usize) -> Result<Vec<HistogramBin>> {
    if bin_width == 0 {
        return Err(Error::validation("histogram bin width must be at least 1"));
    }
    let t = traj.n_months();
    let n_bins = t.div_ceil(bin_width);
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            start: b * bin_width + 1,
            end: ((b + 1) * bin_width).min(t),
            count: 0,
        })
        .collect();
    for l in lifetimes(traj) {
        bins[(l - 1) / bin_width].count += 1;
    }
    Ok(bins)
}

/// RMS of great-circle displacements between reports in consecutive
/// months. Steps across a gap are skipped.
pub fn rms_speeds(traj: &TrajectoryArray) -> Vec<Option<f64>> {
    (0..traj.n_floats())
        .map(|i| {
            let steps: Vec<f64> = traj
                .row(i)
                .windows(2)
                .filter_map(|w| Some(great_circle_km(w[0]?, w[1]?)))
                .collect();
            if steps.is_empty() {
                None
            } else {
                Some((steps.iter().map(|d| d * d).sum::<f64>() / steps.len() as f64).sqrt())
            }
        })
        .collect()
}

/// RMS speeds as hat-basis coefficients on a display mesh. Global indices
/// without a speed (coastline, short-lived floats) get 0, and `defined`
/// marks which ones carry data.
pub struct SpeedField<'m> {
    pub field: HatBasisField<'m>,
    pub defined: Vec<bool>,
}

pub fn rms_speed_field<'m>(traj: &TrajectoryArray, mesh: &'m TriMesh, dim: usize) -> SpeedField<'m> {
    let speeds = rms_speeds(traj);
    let mut coeffs = vec![0.0; dim];
    let mut defined = vec![false; dim];
    for (i, s) in speeds.into_iter().enumerate() {
        if let Some(s) = s {
            coeffs[i] = s;
            defined[i] = true;
        }
    }
    SpeedField {
        field: HatBasisField::new(mesh, coeffs),
        defined,
    }
}

pub fn write_counts<W: Write>(counts: &[usize], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "count"])?;
    for (t, c) in counts.iter().enumerate() {
        wr.write_record([(t + 1).to_string(), c.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(bins: &[HistogramBin], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bin_start", "bin_end", "count"])?;
    for b in bins {
        wr.write_record([b.start.to_string(), b.end.to_string(), b.count.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `float_id,rms_km_per_month`, skipping floats without a speed.
pub fn write_rms<W: Write>(traj: &TrajectoryArray, speeds: &[Option<f64>], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["float_id", "rms_km_per_month"])?;
    for (id, s) in traj.float_ids().iter().zip(speeds) {
        if let Some(s) = s {
            wr.write_record([id.clone(), s.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{LonLat, KM_PER_DEGREE};
    use crate::trajectory::{month_sequence, YearMonth};
    use approx::assert_abs_diff_eq;

    fn traj(rows: Vec<Vec<Option<LonLat>>>) -> TrajectoryArray {
        let t = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("f{i}")).collect();
        TrajectoryArray::new(
            ids,
            month_sequence(YearMonth::new(2010, 1).unwrap(), t),
            rows.into_iter().flatten().collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_lifetimes_histogram() {
        let p = Some(LonLat::new(0.0, 0.0));
        let mut gappy = vec![None; 12];
        gappy[0] = p;
        gappy[9] = p;
        let mut once = vec![None; 12];
        once[4] = p;
        let tr = traj(vec![vec![p; 12], gappy, once]);
        let c = active_counts(&tr);
        assert_eq!(c[0], 2);
        assert_eq!(c[4], 2);
        assert_eq!(c.iter().sum::<usize>(), tr.present_count());
        assert_eq!(lifetimes(&tr), vec![12, 10, 1]);
        let h = lifetime_histogram(&tr, 5).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h[2], HistogramBin { start: 11, end: 12, count: 1 });
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 3);
        assert!(lifetime_histogram(&tr, 0).is_err());
    }

    #[test]
    fn rms_cases() {
        let still = vec![Some(LonLat::new(3.0, 3.0)); 4];
        let moving: Vec<_> = (0..4).map(|t| Some(LonLat::new(t as f64, 0.0))).collect();
        let once = vec![Some(LonLat::new(0.0, 0.0)), None, None, None];
        // steps only across a gap
        let gap = vec![Some(LonLat::new(0.0, 0.0)), None, Some(LonLat::new(5.0, 0.0)), None];
        let s = rms_speeds(&traj(vec![still, moving, once, gap]));
        assert_eq!(s[0], Some(0.0));
        assert_abs_diff_eq!(s[1].unwrap(), KM_PER_DEGREE, epsilon = 1e-9);
        assert_eq!(s[2], None);
        assert_eq!(s[3], None);
    }
}
