//! P1 finite-element stiffness and mass matrices, their time average and the
//! Dirichlet-constrained system.

use std::ops::Range;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::linalg::{reverse_cuthill_mckee, EnvelopeCholesky};
use crate::mesh::{signed_area, TriMesh};
use crate::sparse::SparseSymmetric;

pub type ElementMatrix = [[f64; 3]; 3];

const MIN_ELEMENT_AREA: f64 = 1e-12;

fn checked_area(tri: &[LonLat; 3]) -> Result<f64> {
    let area = signed_area(tri[0], tri[1], tri[2]).abs();
    if !(area > MIN_ELEMENT_AREA) {
        return Err(Error::numerical(format!(
            "degenerate triangle {} {} {} (area {area:e})",
            tri[0], tri[1], tri[2]
        )));
    }
    Ok(area)
}

/// `K_ab = area · ∇φ_a · ∇φ_b` for the linear shape functions of `tri`.
pub fn local_stiffness(tri: &[LonLat; 3]) -> Result<ElementMatrix> {
    let area = checked_area(tri)?;
    // edge vectors opposite each vertex; ∇φ_a = rot90(e_a) / (2·area)
    let edge = |a: usize| {
        let (p, q) = (tri[(a + 1) % 3], tri[(a + 2) % 3]);
        (q.lon - p.lon, q.lat - p.lat)
    };
    let e = [edge(0), edge(1), edge(2)];
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let v = (e[a].0 * e[b].0 + e[a].1 * e[b].1) / (4.0 * area);
            k[a][b] = v;
            k[b][a] = v;
        }
    }
    Ok(k)
}

/// Consistent mass matrix `M_ab = area/12 · (1 + δ_ab)`.
pub fn local_mass(tri: &[LonLat; 3]) -> Result<ElementMatrix> {
    let area = checked_area(tri)?;
    let off = area / 12.0;
    let diag = 2.0 * off;
    Ok([[diag, off, off], [off, diag, off], [off, off, diag]])
}

/// Stiffness and mass of one time slice, inflated to the full `I + C`
/// global dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceMatrices {
    pub stiffness: SparseSymmetric,
    pub mass: SparseSymmetric,
}

/// Assembles a slice in triangle order. Rows and columns of global indices
/// that do not appear in `mesh` are identically zero.
pub fn assemble_slice(mesh: &TriMesh, dim: usize) -> Result<SliceMatrices> {
    if let Some(&g) = mesh.global_index().iter().find(|&&g| g >= dim) {
        return Err(Error::validation(format!(
            "mesh global index {} exceeds dimension {dim}",
            g + 1
        )));
    }
    let mut k_trip = Vec::with_capacity(6 * mesh.n_triangles());
    let mut m_trip = Vec::with_capacity(6 * mesh.n_triangles());
    for (t, verts) in mesh.triangles().iter().enumerate() {
        let corners = mesh.corners(t);
        let k = local_stiffness(&corners)?;
        let m = local_mass(&corners)?;
        let g = verts.map(|v| mesh.global_index()[v]);
        for a in 0..3 {
            for b in a..3 {
                k_trip.push((g[a], g[b], k[a][b]));
                m_trip.push((g[a], g[b], m[a][b]));
            }
        }
    }
    Ok(SliceMatrices {
        stiffness: SparseSymmetric::from_triplets(dim, k_trip),
        mass: SparseSymmetric::from_triplets(dim, m_trip),
    })
}

/// Time-averaged stiffness and mass with the Dirichlet/free index split.
#[derive(Clone, Debug)]
pub struct TimeAveragedSystem {
    pub stiffness: SparseSymmetric,
    pub mass: SparseSymmetric,
    /// Sorted global indices that remain unknowns.
    pub free: Vec<usize>,
    pub n_slices: usize,
}

impl TimeAveragedSystem {
    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    /// Validates an externally loaded system (e.g. from matrix dumps).
    pub fn from_parts(
        stiffness: SparseSymmetric,
        mass: SparseSymmetric,
        free: Vec<usize>,
        n_slices: usize,
    ) -> Result<Self> {
        if stiffness.dim() != mass.dim() {
            return Err(Error::validation("stiffness and mass dimensions differ"));
        }
        if free.is_empty() {
            return Err(Error::validation("free index set is empty"));
        }
        if free.windows(2).any(|w| w[0] >= w[1]) || *free.last().unwrap() >= stiffness.dim() {
            return Err(Error::validation("free indices must be sorted and in range"));
        }
        Ok(Self {
            stiffness,
            mass,
            free,
            n_slices,
        })
    }
}

/// Relative threshold on the averaged mass diagonal below which a float is
/// treated as never meshed.
pub const DEFAULT_DROP_TOL_REL: f64 = 1e-14;

/// Averages slice matrices over `n_slices` months and fixes the constrained
/// set: all indices in `coast` plus any index whose averaged mass diagonal
/// is below `drop_tol` (default `1e-14 × mean diagonal`).
///
/// `n_slices` may exceed `slices.len()`: months without a mesh contribute
/// zero matrices but still count in the average.
pub fn average_system(
    slices: &[SliceMatrices],
    n_slices: usize,
    coast: Range<usize>,
    drop_tol: Option<f64>,
) -> Result<TimeAveragedSystem> {
    if slices.is_empty() {
        return Err(Error::validation("no slices to average"));
    }
    if n_slices < slices.len() {
        return Err(Error::validation("slice count below number of slices given"));
    }
    let ks: Vec<&SparseSymmetric> = slices.iter().map(|s| &s.stiffness).collect();
    let ms: Vec<&SparseSymmetric> = slices.iter().map(|s| &s.mass).collect();
    let stiffness = SparseSymmetric::average(&ks, n_slices)?;
    let mass = SparseSymmetric::average(&ms, n_slices)?;
    let dim = stiffness.dim();
    if coast.end > dim {
        return Err(Error::validation("coastline range exceeds system dimension"));
    }

    let diag = mass.diagonal();
    let mean_diag = diag.iter().sum::<f64>() / dim as f64;
    let tol = drop_tol.unwrap_or(DEFAULT_DROP_TOL_REL * mean_diag);
    let mut isolated = 0;
    let free: Vec<usize> = (0..dim)
        .filter(|i| !coast.contains(i))
        .filter(|&i| {
            let keep = diag[i] >= tol && diag[i] > 0.0;
            if !keep {
                isolated += 1;
            }
            keep
        })
        .collect();
    if isolated > 0 {
        info!("{isolated} unmeshed indices constrained to zero");
    }
    if free.is_empty() {
        return Err(Error::validation("free index set is empty"));
    }

    let m_free = mass.restrict(&free);
    let perm = reverse_cuthill_mckee(&m_free);
    if let Err(bad) = EnvelopeCholesky::factor(&m_free, None, perm) {
        return Err(Error::IndefiniteMass {
            index: free[bad.0] + 1,
        });
    }
    debug!(
        "averaged system: dim {dim}, free {}, nnz(D) {}",
        free.len(),
        stiffness.nnz()
    );
    Ok(TimeAveragedSystem {
        stiffness,
        mass,
        free,
        n_slices,
    })
}
