//! Sparse eigenbasis approximation: rotate a set of eigenvectors into a
//! sparse, mostly nonnegative basis with one coherent feature per column.

use std::io::{Read, Write};

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SebaOptions {
    /// Soft-threshold level; `None` means `0.99 / sqrt(n)`.
    pub mu: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Extra seeded random starts besides the identity start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SebaOptions {
    fn default() -> Self {
        Self {
            mu: None,
            tol: 1e-12,
            max_iter: 5000,
            restarts: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SebaBasis {
    /// One column per feature, each scaled so its maximum is 1, ordered by
    /// decreasing L1 norm.
    pub columns: Vec<Vec<f64>>,
    pub mu: f64,
    pub iterations: usize,
    /// `‖R_new − R‖_F` at the last iteration.
    pub final_change: f64,
    pub converged: bool,
}

impl SebaBasis {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Fraction of entries above 0.01, per column.
    pub fn support_fractions(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|&&v| v > 0.01).count() as f64 / c.len().max(1) as f64)
            .collect()
    }

    /// Number of entries below −0.2, per column.
    pub fn negative_counts(&self) -> Vec<usize> {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|&&v| v < -0.2).count())
            .collect()
    }

    /// One-based pairs of columns whose cosine similarity reaches
    /// `min_cosine`; two features settling on the same set is a known
    /// SEBA failure.
    pub fn coincident_columns(&self, min_cosine: f64) -> Vec<(usize, usize)> {
        let norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut pairs = Vec::new();
        for a in 0..self.columns.len() {
            for b in a + 1..self.columns.len() {
                let (ca, cb) = (&self.columns[a], &self.columns[b]);
                let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                if dot >= min_cosine * norm(ca) * norm(cb) {
                    pairs.push((a + 1, b + 1));
                }
            }
        }
        pairs
    }

    /// Spreads rows onto a `dim`-long global vector; `rows[i]` is the
    /// global index of row `i`. Other entries are zero.
    pub fn embed(&self, rows: &[usize], dim: usize) -> SebaBasis {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let mut g = vec![0.0; dim];
                for (&r, &v) in rows.iter().zip(c) {
                    g[r] = v;
                }
                g
            })
            .collect();
        SebaBasis {
            columns,
            ..self.clone()
        }
    }

    /// Writes `k,global_index,value` for entries with `|value| > 1e-12`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "global_index", "value"])?;
        for (k, col) in self.columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if v.abs() > 1e-12 {
                    wr.write_record([(k + 1).to_string(), (i + 1).to_string(), v.to_string()])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads columns of length `dim`. Run metadata is not stored in the
    /// table and comes back as NaN / zero.
    pub fn read_csv<R: Read>(r: R, dim: usize) -> Result<SebaBasis> {
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for rec in csv::Reader::from_reader(r).records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let k: usize = rec[0].parse().map_err(|_| Error::parse(line, "bad k"))?;
            let g: usize = rec[1].parse().map_err(|_| Error::parse(line, "bad global_index"))?;
            let v: f64 = rec[2].parse().map_err(|_| Error::parse(line, "bad value"))?;
            if k == 0 || g == 0 || g > dim {
                return Err(Error::parse(line, "index out of range"));
            }
            while columns.len() < k {
                columns.push(vec![0.0; dim]);
            }
            columns[k - 1][g - 1] = v;
        }
        if columns.is_empty() {
            return Err(Error::validation("SEBA table has no entries"));
        }
        Ok(SebaBasis {
            columns,
            mu: f64::NAN,
            iterations: 0,
            final_change: f64::NAN,
            converged: true,
        })
    }
}

fn soft_threshold(z: f64, mu: f64) -> f64 {
    z.signum() * (z.abs() - mu).max(0.0)
}

/// Orthonormal basis of the column span, via thin QR.
pub fn orthonormalize(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = u.ncols();
    let qr = u.clone().qr();
    let rr = qr.r();
    let scale = rr.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if (0..r).any(|i| !(rr[(i, i)].abs() > 1e-12 * scale)) {
        return Err(Error::validation("input vectors are linearly dependent"));
    }
    Ok(qr.q())
}

fn columns_to_matrix(cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = cols.len();
    let n = cols.first().map_or(0, Vec::len);
    if r == 0 {
        return Err(Error::validation("SEBA needs at least one input vector"));
    }
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::validation("input vectors differ in length"));
    }
    if n < r {
        return Err(Error::validation(format!("need n >= r, got n = {n}, r = {r}")));
    }
    Ok(DMatrix::from_fn(n, r, |i, j| cols[j][i]))
}

struct Run {
    s: DMatrix<f64>,
    iterations: usize,
    change: f64,
    converged: bool,
}

fn iterate(v: &DMatrix<f64>, mut rot: DMatrix<f64>, mu: f64, tol: f64, max_iter: usize) -> Result<Run> {
    let (n, r) = v.shape();
    let mut s = DMatrix::zeros(n, r);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        s = v * rot.transpose();
        s.apply(|z| *z = soft_threshold(*z, mu));
        for (j, mut col) in s.column_iter_mut().enumerate() {
            let nrm = col.norm();
            if nrm == 0.0 {
                return Err(Error::numerical(format!(
                    "SEBA column {} annihilated by thresholding (mu = {mu:e}); use a smaller mu",
                    j + 1
                )));
            }
            col /= nrm;
        }
        let svd = (s.transpose() * v).svd(true, true);
        let next = svd.u.unwrap() * svd.v_t.unwrap();
        change = (&next - &rot).norm();
        rot = next;
        if change <= tol {
            return Ok(Run {
                s,
                iterations,
                change,
                converged: true,
            });
        }
    }
    Ok(Run {
        s,
        iterations,
        change,
        converged: false,
    })
}

fn random_rotation(r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
    a.qr().q()
}

/// Rotates the columns of `u` (one vector per column, same length `n`)
/// into a sparse basis.
pub fn seba_rotate(u: &[Vec<f64>], opts: &SebaOptions) -> Result<SebaBasis> {
    let raw = columns_to_matrix(u)?;
    let (n, r) = raw.shape();
    let mu = opts.mu.unwrap_or(0.99 / (n as f64).sqrt());
    if !(mu >= 0.0) {
        return Err(Error::validation("SEBA mu must be nonnegative"));
    }
    let v = orthonormalize(&raw)?;

    let mut best = iterate(&v, DMatrix::identity(r, r), mu, opts.tol, opts.max_iter)?;
    let mut best_l1 = best.s.iter().map(|x| x.abs()).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for attempt in 0..opts.restarts {
        let start = random_rotation(r, &mut rng);
        let run = match iterate(&v, start, mu, opts.tol, opts.max_iter) {
            Ok(run) => run,
            Err(e) => {
                debug!("SEBA restart {attempt} discarded: {e}");
                continue;
            }
        };
        let l1 = run.s.iter().map(|x| x.abs()).sum::<f64>();
        if l1 < best_l1 {
            best_l1 = l1;
            best = run;
        }
    }
    if !best.converged {
        warn!(
            "SEBA stopped after {} iterations with rotation change {:.3e}",
            best.iterations, best.change
        );
    }

    let mut columns: Vec<Vec<f64>> = best
        .s
        .column_iter()
        .map(|c| {
            let mut col: Vec<f64> = c.iter().copied().collect();
            let peak = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            col.iter_mut().for_each(|x| *x /= peak);
            col
        })
        .collect();
    let l1: Vec<f64> = columns.iter().map(|c| c.iter().map(|x| x.abs()).sum()).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| l1[b].total_cmp(&l1[a]));
    columns = order.into_iter().map(|j| std::mem::take(&mut columns[j])).collect();

    Ok(SebaBasis {
        columns,
        mu,
        iterations: best.iterations,
        final_change: best.change,
        converged: best.converged,
    })
}

/// `‖V Vᵀ S − S‖_F / ‖S‖_F` with `V` the orthonormalized input and `S` the
/// basis columns normalized to unit length.
pub fn span_residual(u: &[Vec<f64>], basis: &SebaBasis) -> Result<f64> {
    let v = orthonormalize(&columns_to_matrix(u)?)?;
    let mut s = columns_to_matrix(&basis.columns)?;
    if s.nrows() != v.nrows() {
        return Err(Error::validation("basis and input differ in length"));
    }
    for mut col in s.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }
    let proj = &v * (v.transpose() * &s);
    Ok((proj - &s).norm() / s.norm())
}

/// Entry-wise maximum over the basis columns.
pub fn max_combine(basis: &SebaBasis) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; basis.n_rows()];
    for col in &basis.columns {
        for (o, &v) in out.iter_mut().zip(col) {
            *o = o.max(v);
        }
    }
    out
}
