use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;

/// Compressed sparse row matrix with sorted column indices in each row.
///
/// Both triangles are stored so that products are a single pass; the
/// factorization backend receives only the upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given sorted, deduplicated row patterns.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { n, ncols: n, row_ptr, col_idx, vals: vec![0.0; nnz] }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed in input order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (j, v) in r {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, ncols: n, row_ptr, col_idx, vals }
    }

    /// Row count (the dimension, for square matrices).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.vals[r])
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Position of entry (i, j) in the value array.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]].iter().position(|&c| c == j).map(|p| start + p)
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let p = self.position(i, j).expect("entry outside sparsity pattern");
        self.vals[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.vals[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.n);
        y.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            for (k, yi) in chunk.iter_mut().enumerate() {
                let i = c * 4096 + k;
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[p] * x[self.col_idx[p]];
                }
                *yi = s;
            }
        });
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// x^T A y.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.vals.iter_mut().for_each(|v| *v *= c);
    }

    /// max |A - A^T|.
    pub fn asymmetry(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dev = dev.max((v - self.get(j, i)).abs());
            }
        }
        dev
    }

    /// Submatrix A[rows, cols] where `row_map`/`col_map` send a global index to
    /// its position in the block (or `usize::MAX` if excluded).
    pub fn extract(&self, row_map: &[usize], n_rows: usize, col_map: &[usize]) -> CsrMatrix {
        let mut rows: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::with_capacity(n_rows);
        for i in 0..self.n {
            if row_map[i] == usize::MAX {
                continue;
            }
            let (cols, vals) = self.row(i);
            let mut entries: Vec<(usize, f64)> = cols
                .iter()
                .zip(vals)
                .filter(|(&j, _)| col_map[j] != usize::MAX)
                .map(|(&j, &v)| (col_map[j], v))
                .collect();
            entries.sort_by_key(|e| e.0);
            rows.push((row_map[i], entries.iter().map(|e| e.0).collect(), entries.iter().map(|e| e.1).collect()));
        }
        rows.sort_by_key(|r| r.0);
        assert_eq!(rows.len(), n_rows);
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let n_cols = col_map.iter().filter(|&&c| c != usize::MAX).count();
        for (_, c, v) in rows {
            col_idx.extend(c);
            vals.extend(v);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n: n_rows, ncols: n_cols, row_ptr, col_idx, vals }
    }

    /// self + c * other for two matrices of equal shape.
    pub fn add_scaled(&self, c: f64, other: &CsrMatrix) -> CsrMatrix {
        assert!(self.n == other.n && self.ncols == other.ncols);
        if self.row_ptr == other.row_ptr && self.col_idx == other.col_idx {
            let mut out = self.clone();
            for (v, o) in out.vals.iter_mut().zip(&other.vals) {
                *v += c * o;
            }
            return out;
        }
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            t.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
            let (cols, vals) = other.row(i);
            t.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, c * v)));
        }
        let mut out = CsrMatrix::from_triplets(self.n, &t);
        out.ncols = self.ncols;
        out
    }

    /// Upper triangle as a faer column matrix, for factorization.
    pub fn to_faer_upper(&self) -> SparseColMat<usize, f64> {
        let mut t = Vec::with_capacity(self.nnz() / 2 + self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j >= i {
                    t.push(Triplet::new(i, j, v));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).expect("valid triplets")
    }

    /// Dense copy (tests and small problems only).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (0, 2, 2.0), (0, 0, 3.0), (2, 1, -1.0), (1, 1, 5.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 2), 2.0);
        assert_eq!(a.get(2, 1), -1.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.nnz(), 4);
        assert_eq!(a.mul(&[1.0, 1.0, 1.0]), vec![6.0, 5.0, -1.0]);
    }

    #[test]
    fn extract_block() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 3.0), (2, 2, 4.0), (1, 2, 7.0)]);
        let keep = [usize::MAX, 0, 1];
        let b = a.extract(&keep, 2, &keep);
        assert_eq!(b.to_dense(), vec![vec![3.0, 7.0], vec![0.0, 4.0]]);
        assert!(a.asymmetry() == 7.0);
    }
}
