//! Compressed sparse row storage for symmetric matrices.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A symmetric `n × n` matrix stored in full CSR form (both triangles) with
/// sorted column indices.
///
/// Built only from upper-triangle contributions, which are mirrored, so
/// `entry(i, j) == entry(j, i)` holds bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetric {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds from `(i, j, v)` triplets; entries with `i > j` are swapped
    /// into the upper triangle. Duplicates are summed in input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        for t in triplets.iter_mut() {
            if t.0 > t.1 {
                std::mem::swap(&mut t.0, &mut t.1);
            }
        }
        // stable: duplicates are summed in contribution order
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut upper: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            assert!(j < n, "index {j} out of range for dimension {n}");
            match upper.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => upper.push((i, j, v)),
            }
        }
        Self::from_upper_sorted(n, &upper)
    }

    fn from_upper_sorted(n: usize, upper: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n];
        for &(i, j, _) in upper {
            counts[i] += 1;
            if i != j {
                counts[j] += 1;
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut cols = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill = row_ptr[..n].to_vec();
        // lower-triangle entries of row j come from upper entries (i, j)
        // with i < j, which arrive in increasing i, so rows stay sorted if
        // we emit column-wise: first the mirrored lower part, then upper.
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in upper {
            if i != j {
                by_col[j].push((i, v));
            }
        }
        let mut cursor = 0;
        for r in 0..n {
            for &(i, v) in &by_col[r] {
                cols[fill[r]] = i;
                vals[fill[r]] = v;
                fill[r] += 1;
            }
            while cursor < upper.len() && upper[cursor].0 == r {
                let (_, j, v) = upper[cursor];
                cols[fill[r]] = j;
                vals[fill[r]] = v;
                fill[r] += 1;
                cursor += 1;
            }
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Upper-triangle entries `(i, j, v)` with `i <= j`, row-major.
    pub fn upper_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).filter(move |&(j, _)| j >= i).map(move |(j, v)| (i, j, v)))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    pub fn sum_entries(&self) -> f64 {
        self.vals.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Principal submatrix on `keep` (sorted global indices), renumbered
    /// `0..keep.len()`.
    pub fn restrict(&self, keep: &[usize]) -> SparseSymmetric {
        let mut local = vec![usize::MAX; self.n];
        for (k, &g) in keep.iter().enumerate() {
            local[g] = k;
        }
        let upper: Vec<(usize, usize, f64)> = keep
            .iter()
            .enumerate()
            .flat_map(|(k, &g)| {
                let local = &local;
                self.row(g).filter_map(move |(j, v)| {
                    let lj = local[j];
                    (lj != usize::MAX && lj >= k).then_some((k, lj, v))
                })
            })
            .collect();
        let mut upper = upper;
        upper.sort_by_key(|&(i, j, _)| (i, j));
        Self::from_upper_sorted(keep.len(), &upper)
    }

    /// `Σ_t A_t / count` over matrices of equal dimension, summing each entry
    /// in slice order.
    pub fn average(mats: &[&SparseSymmetric], count: usize) -> Result<SparseSymmetric> {
        let n = mats
            .first()
            .map(|m| m.n)
            .ok_or_else(|| Error::validation("nothing to average"))?;
        if mats.iter().any(|m| m.n != n) {
            return Err(Error::validation("dimension mismatch while averaging"));
        }
        let triplets: Vec<_> = mats.iter().flat_map(|m| m.upper_triplets()).collect();
        let mut out = SparseSymmetric::from_triplets(n, triplets);
        let denom = count as f64;
        out.vals.iter_mut().for_each(|v| *v /= denom);
        Ok(out)
    }

    /// Coordinate dump: `row col value` per line, one-based, upper triangle.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "% dimension {}", self.n)?;
        for (i, j, v) in self.upper_triplets() {
            writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    pub fn read_coo<R: Read>(mut r: R) -> Result<SparseSymmetric> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut n = None;
        let mut triplets = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("% dimension") {
                n = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| Error::parse(lineno + 1, "bad dimension"))?,
                );
                continue;
            }
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = || it.next().ok_or_else(|| Error::parse(lineno + 1, "short line"));
            let i: usize = next()?.parse().map_err(|_| Error::parse(lineno + 1, "bad row"))?;
            let j: usize = next()?.parse().map_err(|_| Error::parse(lineno + 1, "bad col"))?;
            let v: f64 = next()?.parse().map_err(|_| Error::parse(lineno + 1, "bad value"))?;
            if i == 0 || j == 0 || i > j {
                return Err(Error::parse(lineno + 1, "expected one-based upper-triangle entry"));
            }
            triplets.push((i - 1, j - 1, v));
        }
        let n = n.ok_or_else(|| Error::parse(1, "missing '% dimension' header"))?;
        if triplets.iter().any(|&(_, j, _)| j >= n) {
            return Err(Error::validation("matrix entry beyond declared dimension"));
        }
        Ok(Self::from_upper_sorted(n, &triplets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builds_symmetric_and_sums_duplicates() {
        let m = SparseSymmetric::from_triplets(
            3,
            vec![(0, 1, 1.0), (1, 0, 2.0), (2, 2, 5.0), (0, 0, 1.0), (0, 0, 0.5)],
        );
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert_eq!(m.get(0, 0), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.mul(&[1.0, 1.0, 1.0]), vec![4.5, 3.0, 5.0]);
        assert_eq!(m.quad_form(&[1.0, 1.0, 1.0]), 12.5);
    }

    #[test]
    fn restrict_renumbers() {
        let m = SparseSymmetric::from_triplets(
            4,
            vec![(0, 0, 1.0), (0, 3, 2.0), (1, 1, 3.0), (3, 3, 4.0), (1, 3, 7.0)],
        );
        let r = m.restrict(&[0, 3]);
        assert_eq!(r.dim(), 2);
        assert_eq!(r.get(0, 1), 2.0);
        assert_eq!(r.get(1, 1), 4.0);
        assert_eq!(r.nnz(), 4);
    }

    proptest! {
        #[test]
        fn coo_round_trip(entries in prop::collection::vec((0usize..12, 0usize..12, -1e3f64..1e3), 0..60)) {
            let m = SparseSymmetric::from_triplets(12, entries);
            let mut buf = Vec::new();
            m.write_coo(&mut buf).unwrap();
            let back = SparseSymmetric::read_coo(&buf[..]).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn storage_is_exactly_symmetric(entries in prop::collection::vec((0usize..9, 0usize..9, -10.0f64..10.0), 1..40)) {
            let m = SparseSymmetric::from_triplets(9, entries);
            for i in 0..9 {
                for j in 0..9 {
                    prop_assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
                }
            }
        }
    }
}
