//! Band storage and factorizations.
//!
//! `BandMatrix` uses LAPACK `dgbtrf`-style storage: a matrix with `kl`
//! subdiagonals and `ku` superdiagonals is held column by column in a
//! `(2*kl + ku + 1) x n` panel, entry `(i, j)` at row offset `kl + ku + i - j`.
//! The extra `kl` rows at the top absorb the fill-in that partial pivoting
//! pushes into `U`, whose bandwidth grows to at most `kl + ku`.

use crate::error::{Error, Result};

use super::csr::Csr;

/// Dense band panel with room for LU fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    /// Copy a square sparse matrix into band storage, sizing the band from
    /// the occupied diagonals.
    pub fn from_csr(a: &Csr) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "band storage wants a square matrix");
        let (kl, ku) = a.bandwidths();
        let mut m = BandMatrix::zeros(a.nrows(), kl, ku);
        for (i, j, v) in a.entries() {
            m.set(i, j, v);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            i + self.ku + self.kl >= j && j + self.kl >= i,
            "entry ({i}, {j}) outside the kl={}, ku={} panel",
            self.kl,
            self.ku
        );
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }
}

/// LU factorization with partial pivoting of a band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    ipiv: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BandLu {
    /// Factor in place. Fails with `Error::Singular` on an exactly zero pivot.
    pub fn factor(mut m: BandMatrix) -> Result<Self> {
        let n = m.n;
        let kl = m.kl;
        let kuw = m.kl + m.ku; // working upper bandwidth, including fill-in
        let mut ipiv = vec![0usize; n];
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot: f64 = 0.0;

        for j in 0..n {
            let ilast = (j + kl).min(n - 1);
            let mut jp = j;
            let mut best = m.get(j, j).abs();
            for i in j + 1..=ilast {
                let a = m.get(i, j).abs();
                if a > best {
                    best = a;
                    jp = i;
                }
            }
            ipiv[j] = jp;
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular {
                    min_pivot: best,
                    max_pivot,
                });
            }
            let clast = (j + kuw).min(n - 1);
            if jp != j {
                for c in j..=clast {
                    let a = m.get(j, c);
                    let b = m.get(jp, c);
                    m.set(j, c, b);
                    m.set(jp, c, a);
                }
            }
            let piv = m.get(j, j);
            for i in j + 1..=ilast {
                let l = m.get(i, j) / piv;
                m.set(i, j, l);
            }
            for c in j + 1..=clast {
                let ujc = m.get(j, c);
                if ujc == 0.0 {
                    continue;
                }
                for i in j + 1..=ilast {
                    let upd = m.get(i, j) * ujc;
                    m.add(i, c, -upd);
                }
            }
        }

        Ok(BandLu {
            m,
            ipiv,
            min_pivot,
            max_pivot,
        })
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn max_pivot(&self) -> f64 {
        self.max_pivot
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        assert_eq!(b.len(), n);
        let kl = self.m.kl;
        let kuw = self.m.kl + self.m.ku;
        // forward: P and unit-lower L
        for j in 0..n {
            let jp = self.ipiv[j];
            if jp != j {
                b.swap(j, jp);
            }
            let bj = b[j];
            if bj != 0.0 {
                let ilast = (j + kl).min(n - 1);
                for i in j + 1..=ilast {
                    b[i] -= self.m.get(i, j) * bj;
                }
            }
        }
        // backward: U with fill-in bandwidth
        for j in (0..n).rev() {
            b[j] /= self.m.get(j, j);
            let bj = b[j];
            if bj != 0.0 {
                let ifirst = j.saturating_sub(kuw);
                for i in ifirst..j {
                    b[i] -= self.m.get(i, j) * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Cholesky factorization of a symmetric band matrix, used both as a solver
/// and as a positive-definiteness detector.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    kd: usize,
    /// Lower factor, `L[i, j]` at `data[j * (kd + 1) + (i - j)]`.
    data: Vec<f64>,
}

impl BandCholesky {
    /// Attempt to factor the lower triangle of a symmetric sparse matrix.
    /// Returns `None` when a pivot is nonpositive or nonfinite, i.e. the
    /// matrix is not positive definite.
    pub fn try_from_csr(a: &Csr) -> Option<Self> {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let (kl, ku) = a.bandwidths();
        let kd = kl.max(ku);
        let mut l = vec![0.0f64; (kd + 1) * n];
        let at = |l: &[f64], i: usize, j: usize| l[j * (kd + 1) + (i - j)];

        for j in 0..n {
            let mut d = a.get(j, j);
            for k in j.saturating_sub(kd)..j {
                let ljk = at(&l, j, k);
                d -= ljk * ljk;
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[j * (kd + 1)] = ljj;
            for i in j + 1..=(j + kd).min(n - 1) {
                let mut s = a.get(i, j);
                for k in i.saturating_sub(kd)..j {
                    s -= at(&l, i, k) * at(&l, j, k);
                }
                l[j * (kd + 1) + (i - j)] = s / ljj;
            }
        }

        Some(BandCholesky { n, kd, data: l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let kd = self.kd;
        assert_eq!(b.len(), n);
        let at = |i: usize, j: usize| self.data[j * (kd + 1) + (i - j)];
        for j in 0..n {
            b[j] /= at(j, j);
            let bj = b[j];
            for i in j + 1..=(j + kd).min(n - 1) {
                b[i] -= at(i, j) * bj;
            }
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for i in j + 1..=(j + kd).min(n - 1) {
                s -= at(i, j) * b[i];
            }
            b[j] = s / at(j, j);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn band_csr(n: usize, kl: usize, ku: usize, mut f: impl FnMut(usize, usize) -> f64) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = f(i, j);
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Csr::from_triplets(n, n, &t)
    }

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let n = 40;
        let a = band_csr(n, 1, 1, |i, j| {
            if i == j {
                2.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let lu = BandLu::factor(BandMatrix::from_csr(&a)).unwrap();
        let x = lu.solve(&b);
        let dense = a.to_dense();
        let xd = dense
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-10 * xd.abs().max());
        }
        assert!(lu.min_pivot() > 0.0);
        assert!(lu.max_pivot() >= lu.min_pivot());
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [0 1; 1 0] has a zero leading diagonal entry and needs a row swap
        let a = Csr::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        let lu = BandLu::factor(BandMatrix::from_csr(&a)).unwrap();
        let x = lu.solve(&[3.0, 5.0]);
        assert_eq!(x, vec![5.0, 3.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]);
        let err = BandLu::factor(BandMatrix::from_csr(&a)).unwrap_err();
        assert!(matches!(err, crate::error::Error::Singular { .. }));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(BandCholesky::try_from_csr(&a).is_none());
        let spd = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]);
        assert!(BandCholesky::try_from_csr(&spd).is_some());
    }

    proptest! {
        #[test]
        fn band_lu_agrees_with_dense_lu(
            n in 2usize..18,
            kl in 0usize..4,
            ku in 0usize..4,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let kl = kl.min(n - 1);
            let ku = ku.min(n - 1);
            let a = band_csr(n, kl, ku, |i, j| {
                let v: f64 = rng.gen_range(-1.0..1.0);
                if i == j { v + 4.0 } else { v }
            });
            let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
            let b: Vec<f64> = (0..n).map(|_| rng2.gen_range(-1.0..1.0)).collect();
            let lu = BandLu::factor(BandMatrix::from_csr(&a)).unwrap();
            let x = lu.solve(&b);
            let xd = a.to_dense().lu().solve(&DVector::from_column_slice(&b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - xd[i]).abs() <= 1e-9 * (1.0 + xd.abs().max()));
            }
        }

        #[test]
        fn band_cholesky_agrees_with_dense(
            n in 2usize..16,
            kd in 0usize..4,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let kd = kd.min(n - 1);
            // symmetric, strictly diagonally dominant band matrix
            let mut t = Vec::new();
            let mut disturb = vec![0.0f64; n];
            for i in 0..n {
                for j in i.saturating_sub(kd)..i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                    disturb[i] += v.abs();
                    disturb[j] += v.abs();
                }
            }
            for i in 0..n {
                t.push((i, i, disturb[i] + 1.0));
            }
            let a = Csr::from_triplets(n, n, &t);
            let b: Vec<f64> = (0..n).map(|i| ((i * i) as f64).cos()).collect();
            let ch = BandCholesky::try_from_csr(&a).expect("dominant matrix is spd");
            let x = ch.solve(&b);
            let xd = a.to_dense().lu().solve(&DVector::from_column_slice(&b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - xd[i]).abs() <= 1e-9 * (1.0 + xd.abs().max()));
            }
        }
    }

    #[test]
    fn from_csr_roundtrips_entries() {
        let a = band_csr(7, 2, 1, |i, j| (i * 10 + j) as f64 + 1.0);
        let m = BandMatrix::from_csr(&a);
        let d: DMatrix<f64> = a.to_dense();
        for i in 0usize..7 {
            for j in i.saturating_sub(2)..=(i + 1).min(6) {
                assert_eq!(m.get(i, j), d[(i, j)]);
            }
        }
    }
}
