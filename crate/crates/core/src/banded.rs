//! Gaussian elimination with partial pivoting for banded systems.

/// Square matrix with `lower` subdiagonals and `upper` superdiagonals, stored
/// as one window of columns per row.
pub(crate) struct BandMatrix {
    lower: usize,
    starts: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl BandMatrix {
    pub(crate) fn new(n: usize, lower: usize, upper: usize) -> Self {
        let starts: Vec<usize> = (0..n).map(|i| i.saturating_sub(lower)).collect();
        let rows = (0..n).map(|i| vec![0.0; (i + upper + 1).min(n) - starts[i]]).collect();
        Self { lower, starts, rows }
    }

    pub(crate) fn size(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.starts[i];
        assert!(j >= s && j - s < self.rows[i].len(), "entry ({i}, {j}) outside the band");
        self.rows[i][j - s] += v;
    }

    /// Solve `A x = b`, consuming the matrix. `None` if a pivot vanishes.
    pub(crate) fn solve(mut self, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = self.size();
        for k in 0..n {
            let last = (k + self.lower + 1).min(n);
            let mut p = k;
            let mut best = 0.0f64;
            for r in k..last {
                if self.starts[r] <= k {
                    let v = self.rows[r][k - self.starts[r]].abs();
                    if v > best {
                        best = v;
                        p = r;
                    }
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if p != k {
                self.rows.swap(k, p);
                self.starts.swap(k, p);
                b.swap(k, p);
            }
            let (head, tail) = self.rows.split_at_mut(k + 1);
            let pivot_row = &head[k];
            let ps = self.starts[k];
            let pivot = pivot_row[k - ps];
            let end = ps + pivot_row.len();
            for (off, row) in tail.iter_mut().enumerate().take(last - k - 1) {
                let r = k + 1 + off;
                let rs = self.starts[r];
                if rs > k {
                    continue;
                }
                let m = row[k - rs] / pivot;
                if m == 0.0 {
                    continue;
                }
                if rs + row.len() < end {
                    row.resize(end - rs, 0.0);
                }
                for j in k..end {
                    row[j - rs] -= m * pivot_row[j - ps];
                }
                b[r] -= m * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s = self.starts[k];
            let row = &self.rows[k];
            let mut acc = b[k];
            for j in k + 1..s + row.len() {
                acc -= row[j - s] * x[j];
            }
            x[k] = acc / row[k - s];
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve() {
        let n = 40;
        let (lo, up) = (3, 2);
        let mut dense = DMatrix::zeros(n, n);
        let mut band = BandMatrix::new(n, lo, up);
        for i in 0..n {
            for j in i.saturating_sub(lo)..(i + up + 1).min(n) {
                // Small diagonal forces pivoting.
                let v = if i == j { 1e-3 } else { ((i * 7 + j * 3) % 11) as f64 - 5.0 };
                dense[(i, j)] = v;
                band.add(i, j, v);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = band.solve(b.clone()).unwrap();
        let y = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-8 * (1.0 + y[i].abs()), "{i}: {} vs {}", x[i], y[i]);
        }
    }

    #[test]
    fn singular_is_detected() {
        let band = BandMatrix::new(3, 1, 1);
        assert!(band.solve(vec![1.0, 2.0, 3.0]).is_none());
    }
}
