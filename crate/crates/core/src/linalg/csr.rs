/// Compressed sparse row matrix with `f64` entries.
///
/// Rows keep their column indices sorted; duplicate triplets are summed at
/// construction, so assembly code can push stencil contributions freely.
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    rowptr: Vec<usize>,
    colidx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut triplets = triplets.to_vec();
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut rowptr = vec![0usize; nrows + 1];
        let mut colidx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets.iter() {
            debug_assert!(r < nrows && c < ncols);
            // sorted input, so a duplicate (r, c) is always the entry just pushed
            if rowptr[r + 1] != 0 && *colidx.last().unwrap() == c {
                *vals.last_mut().unwrap() += v;
            } else {
                colidx.push(c);
                vals.push(v);
                rowptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            rowptr[r + 1] += rowptr[r];
        }
        Csr { nrows, ncols, rowptr, colidx, vals }
    }

    /// A + shift·I as a new matrix.
    pub fn plus_diagonal(&self, shift: f64) -> Csr {
        let mut t: Vec<(usize, usize, f64)> = self.entries().collect();
        for i in 0..self.nrows.min(self.ncols) {
            t.push((i, i, shift));
        }
        Csr::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.rowptr[i];
        let hi = self.rowptr[i + 1];
        (&self.colidx[lo..hi], &self.vals[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[i] = acc;
        }
        y
    }

    /// (shift * I + A) x, square matrices only.
    pub fn matvec_shifted(&self, shift: f64, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.nrows, self.ncols);
        let mut y = self.matvec(x);
        for i in 0..self.nrows {
            y[i] += shift * x[i];
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((c, i, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Restriction to `keep` rows and columns (indices into the original
    /// ordering, strictly increasing).
    pub fn submatrix(&self, keep: &[usize]) -> Csr {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut new_of_old = vec![usize::MAX; self.ncols];
        for (new, &old) in keep.iter().enumerate() {
            new_of_old[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_r);
            for (&c, &v) in cols.iter().zip(vals) {
                let new_c = new_of_old[c];
                if new_c != usize::MAX {
                    triplets.push((new_r, new_c, v));
                }
            }
        }
        Csr::from_triplets(keep.len(), keep.len(), &triplets)
    }

    /// (kl, ku): widest sub- and super-diagonal offsets present.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for i in 0..self.nrows {
            let (cols, _) = self.row(i);
            for &c in cols {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }

    /// Scaled symmetric and skew parts of a square matrix:
    /// S = A + A^T, K = A - A^T.
    pub fn sym_skew(&self) -> (Csr, Csr) {
        debug_assert_eq!(self.nrows, self.ncols);
        let t = self.transpose();
        let mut sym = Vec::with_capacity(2 * self.nnz());
        let mut skew = Vec::with_capacity(2 * self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                sym.push((i, c, v));
                skew.push((i, c, v));
            }
            let (tc, tv) = t.row(i);
            for (&c, &v) in tc.iter().zip(tv) {
                sym.push((i, c, v));
                skew.push((i, c, -v));
            }
        }
        (
            Csr::from_triplets(self.nrows, self.ncols, &sym),
            Csr::from_triplets(self.nrows, self.ncols, &skew),
        )
    }

    /// Largest |A_ij - A_ji| over the sparsity pattern.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - t.get(i, c)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] = v;
            }
        }
        m
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }
}
