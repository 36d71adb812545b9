//! Compressed sparse row matrices and a banded LU factorization for the
//! implicit half of the time stepper.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_triplets(n, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec(x, &mut out);
        out
    }

    /// `out = A^T x`
    pub fn mul_vec_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate().take(self.n) {
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
    }

    /// `(lower, upper)` half bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                if c < r {
                    lo = lo.max(r - c);
                } else {
                    hi = hi.max(c - r);
                }
            }
        }
        (lo, hi)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// LU factors of `I - scale * A` in band storage, without pivoting. The
/// matrices factored here are diagonally dominant for the operators used in
/// this crate; a vanishing pivot is reported as an error.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    // Row i holds columns i-kl ..= i+ku.
    band: Vec<f64>,
}

impl BandedLu {
    pub fn shifted_identity(a: &SparseMatrix, scale: f64) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidth();
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for r in 0..n {
            band[r * width + kl] = 1.0;
            for (c, v) in a.row(r) {
                band[r * width + kl + c - r] -= scale * v;
            }
        }
        let mut lu = Self { n, kl, ku, band };
        lu.factor()?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.band[r * (self.kl + self.ku + 1) + self.kl + c - r]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let w = self.kl + self.ku + 1;
        &mut self.band[r * w + self.kl + c - r]
    }

    fn factor(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.at(k, k);
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::SingularPivot(k));
            }
            let rmax = (k + self.kl).min(n - 1);
            let cmax = (k + self.ku).min(n - 1);
            for r in k + 1..=rmax {
                let l = self.at(r, k) / pivot;
                *self.at_mut(r, k) = l;
                if l != 0.0 {
                    for c in k + 1..=cmax {
                        let u = self.at(k, c);
                        *self.at_mut(r, c) -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `(I - scale A) x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let n = self.n;
        for r in 0..n {
            let lo = r.saturating_sub(self.kl);
            let mut s = x[r];
            for c in lo..r {
                s -= self.at(r, c) * x[c];
            }
            x[r] = s;
        }
        for r in (0..n).rev() {
            let hi = (r + self.ku).min(n - 1);
            let mut s = x[r];
            for c in r + 1..=hi {
                s -= self.at(r, c) * x[c];
            }
            x[r] = s / self.at(r, r);
        }
    }

    /// Solves `(I - scale A)^T x = b` in place.
    pub fn solve_transpose(&self, x: &mut [f64]) {
        let n = self.n;
        // U^T y = b
        for r in 0..n {
            let lo = r.saturating_sub(self.ku);
            let mut s = x[r];
            for k in lo..r {
                s -= self.at(k, r) * x[k];
            }
            x[r] = s / self.at(r, r);
        }
        // L^T x = y
        for r in (0..n).rev() {
            let hi = (r + self.kl).min(n - 1);
            let mut s = x[r];
            for k in r + 1..=hi {
                s -= self.at(k, r) * x[k];
            }
            x[r] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_shifted(a: &SparseMatrix, scale: f64) -> Vec<Vec<f64>> {
        let n = a.dim();
        let mut m = vec![vec![0.0; n]; n];
        for (r, row) in m.iter_mut().enumerate() {
            row[r] = 1.0;
            for (c, v) in a.row(r) {
                row[c] -= scale * v;
            }
        }
        m
    }

    fn nonsymmetric() -> SparseMatrix {
        SparseMatrix::from_triplets(
            5,
            vec![
                (0, 0, -2.0),
                (0, 1, 0.5),
                (1, 0, 1.5),
                (1, 1, -3.0),
                (1, 3, 0.7),
                (2, 2, -1.0),
                (2, 0, 0.2),
                (3, 1, 0.4),
                (3, 3, -2.5),
                (4, 2, 0.9),
                (4, 4, -1.0),
                (4, 4, -0.5),
            ],
        )
    }

    #[test]
    fn csr_products() {
        let a = nonsymmetric();
        assert_eq!(a.nnz(), 11);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ax = a.apply(&x);
        assert_eq!(ax[4], 0.9 * 3.0 - 1.5 * 5.0);
        let mut atx = vec![0.0; 5];
        a.mul_vec_transpose(&x, &mut atx);
        let y = [0.3, -1.0, 2.0, 0.5, 1.0];
        let lhs: f64 = a.apply(&y).iter().zip(&x).map(|(p, q)| p * q).sum();
        let rhs: f64 = atx.iter().zip(&y).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(a.bandwidth(), (2, 2));
    }

    #[test]
    fn banded_solves_match_dense_residual() {
        let a = nonsymmetric();
        let scale = 0.37;
        let lu = BandedLu::shifted_identity(&a, scale).unwrap();
        let m = dense_shifted(&a, scale);
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.25];

        let mut x = b.clone();
        lu.solve(&mut x);
        for r in 0..5 {
            let res: f64 = (0..5).map(|c| m[r][c] * x[c]).sum::<f64>() - b[r];
            assert!(res.abs() < 1e-13);
        }

        let mut y = b.clone();
        lu.solve_transpose(&mut y);
        for c in 0..5 {
            let res: f64 = (0..5).map(|r| m[r][c] * y[r]).sum::<f64>() - b[c];
            assert!(res.abs() < 1e-13);
        }
    }

    #[test]
    fn singular_pivot_is_reported() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(
            BandedLu::shifted_identity(&a, 1.0),
            Err(Error::SingularPivot(0))
        ));
    }
}
