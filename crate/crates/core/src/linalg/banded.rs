//! Banded Hermitian `L D L*` factorization without pivoting.
//!
//! Used for all strip-scale direct solves. Because `D` is real, the number of
//! negative pivots is the Sylvester inertia of the factored matrix, which the
//! supercell oracle turns into exact eigenvalue counts.

use faer::{Mat, MatRef};

use super::csr::Csr;
use crate::error::{Error, Result};
use crate::C64;

/// Relative pivot threshold below which a factorization is rejected.
pub const PIVOT_TOL: f64 = 1e-12;

/// Symmetric permutation applied before banded factorization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandOrdering {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `iperm[old] = new`
    iperm: Vec<usize>,
}

impl BandOrdering {
    pub fn identity(n: usize) -> Self {
        let perm: Vec<usize> = (0..n).collect();
        Self {
            iperm: perm.clone(),
            perm,
        }
    }

    /// `perm[new] = old`. Panics if `perm` is not a permutation.
    pub fn from_perm(perm: Vec<usize>) -> Self {
        let mut iperm = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            assert!(iperm[old] == usize::MAX, "index {old} repeated in ordering");
            iperm[old] = new;
        }
        Self { perm, iperm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Half-bandwidth of `a` after permutation.
    pub fn bandwidth(&self, a: &Csr) -> usize {
        (0..a.dim())
            .flat_map(|i| a.row(i).map(move |(j, _)| (i, j)))
            .map(|(i, j)| self.iperm[i].abs_diff(self.iperm[j]))
            .max()
            .unwrap_or(0)
    }
}

/// `P A P^T = L D L*` with unit lower-triangular banded `L` and real `D`.
#[derive(Debug, Clone)]
pub struct BandedLdl {
    n: usize,
    bw: usize,
    ord: BandOrdering,
    /// Row `i` holds `L[i, i-bw .. i]` at `l[i*bw ..(i+1)*bw]` (left-padded for the first rows).
    l: Vec<C64>,
    d: Vec<f64>,
    negatives: usize,
    min_pivot_ratio: f64,
}

impl BandedLdl {
    /// Factor the Hermitian matrix `a`. `shift` only labels errors.
    pub fn factor(a: &Csr, ord: &BandOrdering, shift: f64) -> Result<Self> {
        let n = a.dim();
        if ord.len() != n {
            return Err(Error::InvalidInput(format!(
                "ordering of length {} for a {n}x{n} matrix",
                ord.len()
            )));
        }
        let bw = ord.bandwidth(a);
        let mut l = vec![C64::new(0.0, 0.0); n * bw];
        let mut diag = vec![0.0f64; n];
        for old in 0..n {
            let i = ord.iperm[old];
            for (oldj, v) in a.row(old) {
                let j = ord.iperm[oldj];
                if j < i {
                    l[i * bw + (j + bw - i)] = v;
                } else if j == i {
                    diag[i] = v.re;
                }
            }
        }
        let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let threshold = PIVOT_TOL * scale;

        let mut d = vec![0.0f64; n];
        let mut negatives = 0;
        let mut min_ratio = f64::INFINITY;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let (done, rest) = l.split_at_mut(i * bw);
            let row = &mut rest[..bw];
            // Entries of row i are stored at offset k + bw - i.
            for j in lo..i {
                let oj = j + bw - i;
                let mut s = row[oj];
                if j > lo {
                    let rj = &done[j * bw..(j + 1) * bw];
                    // sum_{k=lo}^{j-1} w_k conj(l_jk); w_k is row[k + bw - i]
                    let wi = &row[(lo + bw - i)..oj];
                    let lj = &rj[(lo + bw - j)..bw];
                    s -= dot_conj(wi, lj);
                }
                // Store w_j = l_ij d_j until the row is complete.
                row[oj] = s;
            }
            let mut di = diag[i];
            for j in lo..i {
                let oj = j + bw - i;
                let w = row[oj];
                let lij = w / d[j];
                di -= (w * lij.conj()).re;
                row[oj] = lij;
            }
            if di.abs() <= threshold {
                return Err(Error::NearSingular {
                    shift,
                    pivot: di,
                    row: i,
                    threshold: PIVOT_TOL,
                });
            }
            min_ratio = min_ratio.min(di.abs() / scale);
            if di < 0.0 {
                negatives += 1;
            }
            d[i] = di;
        }
        Ok(Self {
            n,
            bw,
            ord: ord.clone(),
            l,
            d,
            negatives,
            min_pivot_ratio: min_ratio,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Number of negative eigenvalues of the factored matrix (Sylvester).
    pub fn negative_pivots(&self) -> usize {
        self.negatives
    }

    /// Smallest `|d_i|` relative to the largest diagonal entry of the input.
    pub fn min_pivot_ratio(&self) -> f64 {
        self.min_pivot_ratio
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<C64> = self.ord.perm.iter().map(|&old| b[old]).collect();
        self.solve_permuted_in_place(&mut y);
        let mut x = vec![C64::new(0.0, 0.0); self.n];
        for (new, &old) in self.ord.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Solve for every column of `b`.
    pub fn solve_many(&self, b: MatRef<'_, C64>) -> Mat<C64> {
        assert_eq!(b.nrows(), self.n);
        let mut out = Mat::<C64>::zeros(self.n, b.ncols());
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        for c in 0..b.ncols() {
            for (new, &old) in self.ord.perm.iter().enumerate() {
                y[new] = b[(old, c)];
            }
            self.solve_permuted_in_place(&mut y);
            for (new, &old) in self.ord.perm.iter().enumerate() {
                out[(old, c)] = y[new];
            }
        }
        out
    }

    fn solve_permuted_in_place(&self, y: &mut [C64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * bw + (lo + bw - i)..(i + 1) * bw];
            let s: C64 = row.iter().zip(&y[lo..i]).map(|(a, b)| a * b).sum();
            y[i] -= s;
        }
        for (yi, di) in y.iter_mut().zip(&self.d) {
            *yi /= *di;
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(bw);
            let yi = y[i];
            let row = &self.l[i * bw + (lo + bw - i)..(i + 1) * bw];
            for (yk, lik) in y[lo..i].iter_mut().zip(row) {
                *yk -= lik.conj() * yi;
            }
        }
    }
}

#[inline]
fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        // x * conj(y)
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    C64::new(re, im)
}
