//! Leading eigenpairs of `−D̄ u = λ M̄ u` on the free indices.
//!
//! Shift-invert at zero turns the eigenvalues closest to zero into the
//! dominant eigenvalues of `A = D̄⁻¹ M̄`, which is self-adjoint in the
//! `M̄` inner product. A restarted block Krylov method with
//! Rayleigh–Ritz extraction then resolves them, including exactly repeated
//! eigenvalues up to the block size.

use std::io::{Read, Write};

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::TimeAveragedSystem;
use crate::linalg::{reverse_cuthill_mckee, EnvelopeCholesky};
use crate::mesh::{HatBasisField, TriMesh};
use crate::sparse::SparseSymmetric;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    /// One-based position in spectral order.
    pub k: usize,
    /// Nonpositive eigenvalue, closest to zero first.
    pub eigenvalue: f64,
    /// Coefficients over all global indices; zero at constrained indices.
    pub coefficients: Vec<f64>,
    /// Relative residual achieved on the free indices.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub k: usize,
    /// Bound on `‖D̄u + λM̄u‖ / (‖D̄‖_∞ ‖u‖)`.
    pub tol: f64,
    pub max_restarts: usize,
    /// Extra block columns beyond `k`; also the largest multiplicity that
    /// is resolved reliably.
    pub block_extra: usize,
    pub krylov_depth: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            k: 8,
            tol: 1e-8,
            max_restarts: 300,
            block_extra: 6,
            krylov_depth: 6,
            seed: 0x5eed,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Computes the `k` eigenpairs closest to zero.
pub fn solve_leading(system: &TimeAveragedSystem, k: usize, tol: f64) -> Result<Vec<EigenPair>> {
    solve_leading_with(
        system,
        &EigenOptions {
            k,
            tol,
            ..EigenOptions::default()
        },
    )
}

struct ShiftInvert {
    chol: EnvelopeCholesky,
    shift: f64,
}

impl ShiftInvert {
    fn new(d: &SparseSymmetric, m: &SparseSymmetric, free: &[usize]) -> Result<Self> {
        let perm = reverse_cuthill_mckee(d);
        if let Err(bad) = EnvelopeCholesky::factor(m, None, perm.clone()) {
            return Err(Error::IndefiniteMass {
                index: free[bad.0] + 1,
            });
        }
        match EnvelopeCholesky::factor(d, None, perm.clone()) {
            Ok(chol) => Ok(Self { chol, shift: 0.0 }),
            Err(_) => {
                // a free component without Dirichlet contact makes D̄ singular
                let tr_d: f64 = d.diagonal().iter().sum();
                let tr_m: f64 = m.diagonal().iter().sum();
                let shift = 1e-6 * tr_d / tr_m;
                warn!("stiffness singular on the free set; factoring with shift {shift:e}");
                let chol = EnvelopeCholesky::factor(d, Some((shift, m)), perm).map_err(|_| {
                    Error::numerical("shifted stiffness matrix is not positive definite")
                })?;
                Ok(Self { chol, shift })
            }
        }
    }

    fn apply(&self, m: &SparseSymmetric, x: &[f64]) -> Vec<f64> {
        self.chol.solve(&m.mul(x))
    }
}

pub fn solve_leading_with(system: &TimeAveragedSystem, opts: &EigenOptions) -> Result<Vec<EigenPair>> {
    let free = &system.free;
    let n = free.len();
    let k = opts.k;
    if k == 0 || k >= n {
        return Err(Error::validation(format!(
            "eigenpair count {k} must satisfy 1 <= k < {n} (free indices)"
        )));
    }
    let d = system.stiffness.restrict(free);
    let m = system.mass.restrict(free);
    let op = ShiftInvert::new(&d, &m, free)?;
    let scale = d.norm_inf().max(f64::MIN_POSITIVE);

    let block = (k + opts.block_extra).min(n);
    let depth = opts.krylov_depth.max(1).min((n / block).max(1));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut worst = f64::INFINITY;
    for restart in 0..opts.max_restarts.max(1) {
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut mq: Vec<Vec<f64>> = Vec::new();
        let mut aq: Vec<Vec<f64>> = Vec::new();
        let mut current = std::mem::take(&mut start);
        for _ in 0..depth {
            let first_new = q.len();
            for mut v in current {
                let orig = m.quad_form(&v).max(0.0).sqrt();
                for _ in 0..2 {
                    for (qj, mqj) in q.iter().zip(&mq) {
                        let c = dot(mqj, &v);
                        v.iter_mut().zip(qj).for_each(|(vi, qi)| *vi -= c * qi);
                    }
                }
                let mv = m.mul(&v);
                let nv = dot(&v, &mv).max(0.0).sqrt();
                if !(nv > 1e-10 * orig) || q.len() >= n {
                    continue;
                }
                v.iter_mut().for_each(|x| *x /= nv);
                let mv: Vec<f64> = mv.into_iter().map(|x| x / nv).collect();
                aq.push(op.apply(&m, &v));
                q.push(v);
                mq.push(mv);
            }
            if q.len() == first_new {
                break;
            }
            current = aq[first_new..].to_vec();
        }

        let dim = q.len();
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = 0.5 * (dot(&mq[i], &aq[j]) + dot(&mq[j], &aq[i]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let take = block.min(dim);
        let ritz: Vec<Vec<f64>> = order[..take]
            .iter()
            .map(|&c| {
                let mut y = vec![0.0; n];
                for (j, qj) in q.iter().enumerate() {
                    let w = eig.eigenvectors[(j, c)];
                    y.iter_mut().zip(qj).for_each(|(yi, qi)| *yi += w * qi);
                }
                y
            })
            .collect();

        if ritz.len() < k {
            return Err(Error::numerical(format!(
                "Krylov space collapsed to dimension {}",
                ritz.len()
            )));
        }

        let mut results = Vec::with_capacity(k);
        worst = 0.0;
        for y in &ritz[..k] {
            let dy = d.mul(y);
            let my = m.mul(y);
            let mu = dot(y, &dy) / dot(y, &my);
            let r: Vec<f64> = dy.iter().zip(&my).map(|(a, b)| a - mu * b).collect();
            let rel = norm(&r) / (scale * norm(y));
            worst = worst.max(rel);
            results.push((mu, rel));
        }
        debug!("restart {restart}: basis {dim}, worst residual {worst:.3e}");
        if worst <= opts.tol {
            return Ok(finish(system, &m, ritz, results, k, op.shift));
        }
        start = ritz;
    }
    Err(Error::NotConverged {
        iterations: opts.max_restarts,
        residual: worst,
    })
}

fn finish(
    system: &TimeAveragedSystem,
    m: &SparseSymmetric,
    ritz: Vec<Vec<f64>>,
    stats: Vec<(f64, f64)>,
    k: usize,
    shift: f64,
) -> Vec<EigenPair> {
    if shift != 0.0 {
        debug!("solved with stiffness shift {shift:e}");
    }
    let mut pairs: Vec<EigenPair> = ritz
        .into_iter()
        .take(k)
        .zip(stats)
        .map(|(mut y, (mu, residual))| {
            let mnorm = m.quad_form(&y).sqrt();
            y.iter_mut().for_each(|v| *v /= mnorm);
            let pivot = y
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if v.abs() > y[best].abs() { i } else { best });
            if y[pivot] < 0.0 {
                y.iter_mut().for_each(|v| *v = -*v);
            }
            let mut coefficients = vec![0.0; system.dim()];
            for (&g, v) in system.free.iter().zip(y) {
                coefficients[g] = v;
            }
            EigenPair {
                k: 0,
                eigenvalue: -mu,
                coefficients,
                residual,
            }
        })
        .collect();
    pairs.sort_by(|a, b| b.eigenvalue.total_cmp(&a.eigenvalue));
    for (i, p) in pairs.iter_mut().enumerate() {
        p.k = i + 1;
    }
    pairs
}

/// Attaches an eigenvector's coefficients to a month's mesh: at month 1 this
/// is the eigenfunction itself, later months give its forward evolution.
pub fn reconstruct_field<'m>(pair: &EigenPair, mesh: &'m TriMesh) -> HatBasisField<'m> {
    HatBasisField::new(mesh, pair.coefficients.clone())
}

/// Writes `k,eigenvalue`.
pub fn write_eigenvalues<W: Write>(pairs: &[EigenPair], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "eigenvalue"])?;
    for p in pairs {
        wr.write_record([p.k.to_string(), p.eigenvalue.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `k,global_index,coefficient` for the free indices.
pub fn write_eigenvectors<W: Write>(pairs: &[EigenPair], free: &[usize], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "global_index", "coefficient"])?;
    for p in pairs {
        for &g in free {
            wr.write_record([
                p.k.to_string(),
                (g + 1).to_string(),
                p.coefficients[g].to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads both eigen tables back into pairs of global dimension `dim`.
/// Residuals are not stored and come back as NaN.
pub fn read_eigenpairs<R1: Read, R2: Read>(values: R1, vectors: R2, dim: usize) -> Result<Vec<EigenPair>> {
    let mut pairs = Vec::new();
    for rec in csv::Reader::from_reader(values).records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let k: usize = rec[0].parse().map_err(|_| Error::parse(line, "bad k"))?;
        let eigenvalue: f64 = rec[1].parse().map_err(|_| Error::parse(line, "bad eigenvalue"))?;
        if k != pairs.len() + 1 {
            return Err(Error::parse(line, "eigenvalues must be listed k = 1, 2, ..."));
        }
        pairs.push(EigenPair {
            k,
            eigenvalue,
            coefficients: vec![0.0; dim],
            residual: f64::NAN,
        });
    }
    for rec in csv::Reader::from_reader(vectors).records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let k: usize = rec[0].parse().map_err(|_| Error::parse(line, "bad k"))?;
        let g: usize = rec[1].parse().map_err(|_| Error::parse(line, "bad global_index"))?;
        let v: f64 = rec[2].parse().map_err(|_| Error::parse(line, "bad coefficient"))?;
        if k == 0 || k > pairs.len() || g == 0 || g > dim {
            return Err(Error::parse(line, "index out of range"));
        }
        pairs[k - 1].coefficients[g - 1] = v;
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_slice, average_system};
    use crate::geo::LonLat;
    use crate::mesh::triangulate_points;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    /// Unit-square grid; boundary nodes are listed last (Dirichlet).
    fn grid_system(n: usize, offset: (f64, f64)) -> TimeAveragedSystem {
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let p = LonLat::new(
                    offset.0 + i as f64 / n as f64,
                    offset.1 + j as f64 / n as f64,
                );
                if i == 0 || j == 0 || i == n || j == n {
                    boundary.push(p);
                } else {
                    interior.push(p);
                }
            }
        }
        let ni = interior.len();
        let pts: Vec<LonLat> = interior.into_iter().chain(boundary).collect();
        let g: Vec<usize> = (0..pts.len()).collect();
        let mesh = triangulate_points(&pts, &g).unwrap();
        let s = assemble_slice(&mesh, pts.len()).unwrap();
        average_system(&[s], 1, ni..pts.len(), None).unwrap()
    }

    #[test]
    fn unit_square_spectrum() {
        let sys = grid_system(20, (0.0, 0.0));
        let pairs = solve_leading(&sys, 3, 1e-8).unwrap();
        assert_relative_eq!(pairs[0].eigenvalue, -2.0 * PI * PI, max_relative = 0.02);
        assert_relative_eq!(pairs[1].eigenvalue, -5.0 * PI * PI, max_relative = 0.05);
        assert_relative_eq!(pairs[2].eigenvalue, -5.0 * PI * PI, max_relative = 0.05);
        for p in &pairs {
            assert!(p.eigenvalue <= 1e-8);
            assert!(p.residual <= 1e-8);
            // zero on the boundary
            for g in sys.dim() - 80..sys.dim() {
                assert_eq!(p.coefficients[g], 0.0);
            }
            let dq = sys.stiffness.quad_form(&p.coefficients);
            let mq = sys.mass.quad_form(&p.coefficients);
            assert_relative_eq!(p.eigenvalue, -dq / mq, max_relative = 1e-8);
        }
        // M-orthonormality
        for a in &pairs {
            for b in &pairs {
                let mb = sys.mass.mul(&b.coefficients);
                let ip: f64 = a.coefficients.iter().zip(&mb).map(|(x, y)| x * y).sum();
                let want = if a.k == b.k { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8, "<u{},u{}> = {ip}", a.k, b.k);
            }
        }
    }

    #[test]
    fn mirrored_components_give_double_eigenvalue() {
        // two identical structured squares, disjoint: block-diagonal system
        let n = 10;
        let mut pts = Vec::new();
        let mut tris = Vec::new();
        for dx in [0.0, 2.0] {
            let base = pts.len();
            for i in 0..=n {
                for j in 0..=n {
                    pts.push(LonLat::new(dx + i as f64 / n as f64, j as f64 / n as f64));
                }
            }
            let id = |i: usize, j: usize| base + i * (n + 1) + j;
            for i in 0..n {
                for j in 0..n {
                    tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
        let on_edge = |p: &LonLat| {
            let x = p.lon - p.lon.floor();
            p.lat == 0.0 || p.lat == 1.0 || x == 0.0 || p.lon == 1.0 || p.lon == 3.0
        };
        // interior first, boundary last
        let mut order: Vec<usize> = (0..pts.len()).filter(|&v| !on_edge(&pts[v])).collect();
        let ni = order.len();
        order.extend((0..pts.len()).filter(|&v| on_edge(&pts[v])));
        let mut global = vec![0; pts.len()];
        for (g, &v) in order.iter().enumerate() {
            global[v] = g;
        }
        let mesh = TriMesh::new(pts.clone(), global, tris).unwrap();
        let s = assemble_slice(&mesh, pts.len()).unwrap();
        let sys = average_system(&[s], 1, ni..pts.len(), None).unwrap();
        let pairs = solve_leading(&sys, 4, 1e-8).unwrap();
        assert_relative_eq!(pairs[0].eigenvalue, pairs[1].eigenvalue, max_relative = 1e-8);
        assert_relative_eq!(pairs[2].eigenvalue, pairs[3].eigenvalue, max_relative = 1e-8);
        assert!(pairs[2].eigenvalue < pairs[1].eigenvalue * 1.5);
    }

    #[test]
    fn invalid_k() {
        let sys = grid_system(4, (0.0, 0.0));
        assert!(solve_leading(&sys, 0, 1e-8).is_err());
        assert!(solve_leading(&sys, sys.free.len(), 1e-8).is_err());
    }

    #[test]
    fn eigen_tables_round_trip() {
        let sys = grid_system(6, (0.0, 0.0));
        let pairs = solve_leading(&sys, 2, 1e-8).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_eigenvalues(&pairs, &mut a).unwrap();
        write_eigenvectors(&pairs, &sys.free, &mut b).unwrap();
        let back = read_eigenpairs(&a[..], &b[..], sys.dim()).unwrap();
        for (x, y) in back.iter().zip(&pairs) {
            assert_eq!(x.eigenvalue, y.eigenvalue);
            assert_eq!(x.coefficients, y.coefficients);
        }
    }
}
