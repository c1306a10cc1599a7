use crate::sparse::Csr;
use crate::{Error, Field, Result};

/// Banded LU factorization with partial pivoting of a real sparse matrix.
///
/// The factors are real; right-hand sides may be real or complex.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// Row `k` of U, columns `k ..= k + kl + ku`.
    upper: Vec<f64>,
    /// Multipliers of elimination step `k`, rows `k+1 ..= k+kl`.
    lower: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factors `a` after the symmetric permutation `perm` (`perm[new] = old`).
    /// `None` keeps the natural ordering.
    pub fn factor(a: &Csr, perm: Option<&[usize]>) -> Result<Self> {
        let n = a.n_rows();
        assert_eq!(n, a.n_cols(), "banded LU needs a square matrix");
        let perm: Vec<usize> = perm.map(|p| p.to_vec()).unwrap_or_else(|| (0..n).collect());
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let (mut kl, mut ku) = (0usize, 0usize);
        for (r, c, _) in a.triplets() {
            let (rn, cn) = (inv[r], inv[c]);
            if rn > cn {
                kl = kl.max(rn - cn);
            } else {
                ku = ku.max(cn - rn);
            }
        }

        let width = 2 * kl + ku + 1;
        let mut ab = vec![0.0f64; n * width];
        for (r, c, v) in a.triplets() {
            let (rn, cn) = (inv[r], inv[c]);
            ab[rn * width + cn + kl - rn] += v;
        }
        let at = |r: usize, c: usize| r * width + c + kl - r;

        let scale = ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let uw = kl + ku + 1;
        let mut upper = vec![0.0; n * uw];
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0usize; n];

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = ab[at(k, k)].abs();
            for r in k + 1..=last_row {
                let v = ab[at(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= scale * 1e-14 {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    ab.swap(at(k, c), at(p, c));
                }
            }
            let pivot = ab[at(k, k)];
            for r in k + 1..=last_row {
                let m = ab[at(r, k)] / pivot;
                lower[k * kl + (r - k - 1)] = m;
                if m != 0.0 {
                    for c in k + 1..=last_col {
                        ab[at(r, c)] -= m * ab[at(k, c)];
                    }
                }
            }
            for c in k..=last_col {
                upper[k * uw + c - k] = ab[at(k, c)];
            }
        }

        Ok(BandedLu { n, kl, ku, perm, upper, lower, piv })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn solve_in_place<T: Field>(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            let last_row = (k + self.kl).min(n - 1);
            for r in k + 1..=last_row {
                let m = self.lower[k * self.kl + (r - k - 1)];
                if m != 0.0 {
                    x[r] -= xk * T::from_real(m);
                }
            }
        }
        let uw = self.kl + self.ku + 1;
        for k in (0..n).rev() {
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut acc = x[k];
            for c in k + 1..=last_col {
                acc -= x[c] * T::from_real(self.upper[k * uw + c - k]);
            }
            x[k] = acc / T::from_real(self.upper[k * uw]);
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }

    pub fn solve<T: Field>(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
