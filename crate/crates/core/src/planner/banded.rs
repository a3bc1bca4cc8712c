use crate::error::{Error, Result};

/// Square banded matrix with an in-place LU factorization (no pivoting).
///
/// Entry `(i, j)` is stored only for `i - lower <= j <= i + upper`.
#[derive(Debug, Clone)]
pub(crate) struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
    factorized: bool,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
            factorized: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper, "({i},{j}) outside band");
        i * (self.lower + self.upper + 1) + (j + self.lower - i)
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

    /// Doolittle LU in place. Fails when a pivot is negligible relative to its row.
    pub fn factorize(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let row_scale = (k.saturating_sub(self.lower)..(k + self.upper + 1).min(n))
                .map(|j| self.get(k, j).abs())
                .fold(0.0, f64::max);
            let pivot = self.get(k, k);
            if !pivot.is_finite() || pivot.abs() <= 1e-14 * row_scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Conditioning(format!("negligible pivot {pivot:.3e} at row {k}")));
            }
            let i_end = (k + self.lower + 1).min(n);
            let j_end = (k + self.upper + 1).min(n);
            for i in k + 1..i_end {
                let l = self.get(i, k) / pivot;
                self.set(i, k, l);
                if l != 0.0 {
                    for j in k + 1..j_end {
                        let v = self.get(i, j) - l * self.get(k, j);
                        self.set(i, j, v);
                    }
                }
            }
        }
        self.factorized = true;
        Ok(())
    }

    /// Solve `A x = b` for `D` right-hand-side columns stored row-major in `b`.
    pub fn solve<const D: usize>(&self, b: &mut [[f64; D]]) {
        assert!(self.factorized && b.len() == self.n);
        let n = self.n;
        for i in 0..n {
            let j0 = i.saturating_sub(self.lower);
            let mut acc = b[i];
            for j in j0..i {
                let l = self.get(i, j);
                for d in 0..D {
                    acc[d] -= l * b[j][d];
                }
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let j_end = (i + self.upper + 1).min(n);
            let mut acc = b[i];
            for j in i + 1..j_end {
                let u = self.get(i, j);
                for d in 0..D {
                    acc[d] -= u * b[j][d];
                }
            }
            let p = self.get(i, i);
            for v in acc.iter_mut() {
                *v /= p;
            }
            b[i] = acc;
        }
    }

    /// Solve `Aᵀ x = b`.
    pub fn solve_transposed<const D: usize>(&self, b: &mut [[f64; D]]) {
        assert!(self.factorized && b.len() == self.n);
        let n = self.n;
        // Uᵀ y = b
        for i in 0..n {
            let j0 = i.saturating_sub(self.upper);
            let mut acc = b[i];
            for j in j0..i {
                let u = self.get(j, i);
                for d in 0..D {
                    acc[d] -= u * b[j][d];
                }
            }
            let p = self.get(i, i);
            for v in acc.iter_mut() {
                *v /= p;
            }
            b[i] = acc;
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let j_end = (i + self.lower + 1).min(n);
            let mut acc = b[i];
            for j in i + 1..j_end {
                let l = self.get(j, i);
                for d in 0..D {
                    acc[d] -= l * b[j][d];
                }
            }
            b[i] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn sample(n: usize, lo: usize, up: usize) -> (BandedMatrix, DMatrix<f64>) {
        let mut b = BandedMatrix::zeros(n, lo, up);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(lo)..(i + up + 1).min(n) {
                let v = if i == j { 10.0 + i as f64 } else { ((i * 7 + j * 3) % 5) as f64 - 2.0 };
                b.set(i, j, v);
                d[(i, j)] = v;
            }
        }
        (b, d)
    }

    #[test]
    fn solves_match_dense() {
        let (mut b, d) = sample(12, 3, 2);
        b.factorize().unwrap();
        let rhs: Vec<[f64; 2]> = (0..12).map(|i| [i as f64 - 3.0, (i * i) as f64 * 0.1]).collect();
        for transposed in [false, true] {
            let mut x = rhs.clone();
            let m = if transposed { d.transpose() } else { d.clone() };
            if transposed {
                b.solve_transposed(&mut x);
            } else {
                b.solve(&mut x);
            }
            for c in 0..2 {
                let xv = DVector::from_iterator(12, x.iter().map(|r| r[c]));
                let bv = DVector::from_iterator(12, rhs.iter().map(|r| r[c]));
                assert!((&m * xv - bv).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let mut b = BandedMatrix::zeros(3, 1, 1);
        b.set(0, 0, 1.0);
        b.set(0, 1, 2.0);
        b.set(1, 0, 2.0);
        b.set(1, 1, 4.0);
        b.set(2, 2, 1.0);
        assert!(matches!(b.factorize(), Err(Error::Conditioning(_))));
    }
}
