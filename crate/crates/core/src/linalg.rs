//! Banded matrices and LU factorization with partial pivoting.

use nalgebra::DMatrix;

use crate::error::{HjbError, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage keeps
/// `kl` extra super-diagonals for fill-in from row exchanges.
#[derive(Clone, Debug, PartialEq)]
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
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.kl + self.ku || i >= self.n || j >= self.n {
            None
        } else {
            Some(i * self.width + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j).expect("index in range");
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.add(i, j, v - cur);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// In-place LU with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(HjbError::Singular { row: k, pivot: best });
            }
            piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j).unwrap();
                    let b = self.slot(p, j).unwrap();
                    self.data.swap(a, b);
                }
            }
            let d = self.get(k, k);
            for i in k + 1..=last {
                let si = self.slot(i, k).unwrap();
                let m = self.data[si] / d;
                if m == 0.0 {
                    continue;
                }
                self.data[si] = m;
                for j in k + 1..=jmax {
                    let u = self.data[self.slot(k, j).unwrap()];
                    if u != 0.0 {
                        let s = self.slot(i, j).unwrap();
                        self.data[s] -= m * u;
                    }
                }
            }
        }
        Ok(BandLu { lu: self, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.clone().factor()?.solve(b)
    }
}

/// Factors produced by [`BandMatrix::factor`].
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let a = &self.lu;
        let n = a.n;
        if b.len() != n {
            return Err(HjbError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let last = (k + a.kl).min(n.saturating_sub(1));
            for i in k + 1..=last {
                x[i] -= a.get(i, k) * x[k];
            }
        }
        let reach = a.kl + a.ku;
        for k in (0..n).rev() {
            let jmax = (k + reach).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=jmax {
                s -= a.get(k, j) * x[j];
            }
            x[k] = s / a.get(k, k);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_band(n: usize, kl: usize, ku: usize, vals: &[f64]) -> BandMatrix {
        let mut m = BandMatrix::zeros(n, kl, ku);
        let mut it = vals.iter().cycle();
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                m.add(i, j, *it.next().unwrap());
            }
        }
        m
    }

    #[test]
    fn tridiagonal_laplacian() {
        let n = 50;
        let mut m = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.add(i, i, -2.0);
            if i > 0 {
                m.add(i, i - 1, 1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, 1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = m.mul_vec(&x);
        let y = m.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_detected() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.add(0, 0, 1.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(2, 2, 1.0);
        assert!(matches!(m.solve(&[1.0, 1.0, 1.0]), Err(HjbError::Singular { .. })));
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        let x = m.solve(&[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
    }

    proptest! {
        #[test]
        fn agrees_with_dense_lu(
            n in 3usize..30,
            kl in 0usize..4,
            ku in 0usize..4,
            vals in prop::collection::vec(-1.0f64..1.0, 64),
            rhs in prop::collection::vec(-1.0f64..1.0, 30),
        ) {
            let mut m = random_band(n, kl, ku, &vals);
            for i in 0..n {
                m.add(i, i, 4.0 * (kl + ku + 1) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 });
            }
            let b = &rhs[..n];
            let x = m.solve(b).unwrap();
            let dense = m.to_dense().lu().solve(&nalgebra::DVector::from_column_slice(b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - dense[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn pivoted_random_systems_have_small_residual(
            n in 3usize..25,
            vals in prop::collection::vec(-1.0f64..1.0, 97),
        ) {
            let m = random_band(n, 2, 3, &vals);
            let dense = m.to_dense();
            prop_assume!(dense.clone().lu().determinant().abs() > 1e-6);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
            if let Ok(x) = m.solve(&b) {
                let r = m.mul_vec(&x);
                let scale = x.iter().fold(1.0f64, |s, v| s.max(v.abs()));
                for i in 0..n {
                    prop_assert!((r[i] - b[i]).abs() < 1e-9 * scale);
                }
            }
        }
    }
}
