//! Complex banded matrices and their LU factorisation with partial pivoting.

use num_complex::Complex64;

type C = Complex64;

/// Square banded matrix stored by rows. Each row keeps `2 kl + ku + 1`
/// slots starting at column `row - kl`; the extra `kl` upper diagonals hold
/// fill-in from row exchanges.
#[derive(Debug, Clone)]
pub struct Band {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<C>,
}

impl Band {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Band { n, kl, ku, width, data: vec![C::new(0.0, 0.0); n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> C {
        if j + self.kl < i || j > i + self.ku {
            return C::new(0.0, 0.0);
        }
        self.data[self.slot(i, j)]
    }

    /// Add `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: C) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn add_diagonal(&mut self, v: C) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += v;
        }
    }

    pub fn mul_vec(&self, x: &[C]) -> Vec<C> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)].norm()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// In-place factorisation. `None` when a pivot column is exactly zero.
    pub fn lu(mut self) -> Option<BandLu> {
        let (n, kl) = (self.n, self.kl);
        let reach = self.ku + kl;
        let mut pivots = Vec::with_capacity(n);
        let mut lower = vec![C::new(0.0, 0.0); n * kl.max(1)];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].norm();
            for r in k + 1..=last_row {
                let v = self.data[self.slot(r, k)].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return None;
            }
            pivots.push(p);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            let inv = pivot.inv();
            let row_k = self.slot(k, k);
            for r in k + 1..=last_row {
                let srk = self.slot(r, k);
                let l = self.data[srk] * inv;
                self.data[srk] = C::new(0.0, 0.0);
                lower[k * kl + (r - k - 1)] = l;
                if l == C::new(0.0, 0.0) {
                    continue;
                }
                let row_r = self.slot(r, k);
                for off in 1..=last_col - k {
                    let u = self.data[row_k + off];
                    self.data[row_r + off] -= l * u;
                }
            }
        }
        Some(BandLu { band: self, lower, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    band: Band,
    lower: Vec<C>,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[C]) -> Vec<C> {
        let a = &self.band;
        let (n, kl) = (a.n, a.kl);
        let reach = a.ku + kl;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                x[r] -= self.lower[k * kl + (r - k - 1)] * xk;
            }
        }
        for i in (0..n).rev() {
            let row = a.slot(i, i);
            let mut s = x[i];
            for off in 1..=((i + reach).min(n - 1) - i) {
                s -= a.data[row + off] * x[i + off];
            }
            x[i] = s / a.data[row];
        }
        x
    }
}
