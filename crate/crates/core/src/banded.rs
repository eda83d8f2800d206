//! Banded LU factorisation with partial pivoting, used for Newton steps on
//! the radial grids and for inverse iteration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("band matrix is singular at column {0}")]
pub struct SingularMatrix(pub usize);

/// Square matrix with `kl` sub- and `ku` super-diagonals.
///
/// Row `i` keeps columns `i - kl ..= i + ku + kl`; the extra `kl` columns
/// hold fill-in produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandLu, SingularMatrix> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ext = ku + kl;
        let mut piv = vec![0usize; n];
        let mut mult = vec![0.0; n * kl.max(1)];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in (k + 1)..=last {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(SingularMatrix(k));
            }
            piv[k] = p;
            let cmax = (k + ext).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    let a = self.slot(k, c);
                    let b = self.slot(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for r in (k + 1)..=last {
                let s = self.slot(r, k);
                let m = self.data[s] / pivot;
                self.data[s] = 0.0;
                mult[k * kl + (r - k - 1)] = m;
                if m != 0.0 {
                    for c in (k + 1)..=cmax {
                        let u = self.data[self.slot(k, c)];
                        let t = self.slot(r, c);
                        self.data[t] -= m * u;
                    }
                }
            }
        }
        Ok(BandLu { a: self, piv, mult })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
    mult: Vec<f64>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.a;
        let (n, kl, ext) = (a.n, a.kl, a.ku + a.kl);
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            let bk = b[k];
            for r in (k + 1)..=last {
                b[r] -= self.mult[k * kl + (r - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let cmax = (k + ext).min(n - 1);
            let mut s = b[k];
            for c in (k + 1)..=cmax {
                s -= a.data[a.slot(k, c)] * b[c];
            }
            b[k] = s / a.data[a.slot(k, k)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
